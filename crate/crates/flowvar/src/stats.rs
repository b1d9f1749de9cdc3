//! Exact cross-replication accumulators.
//!
//! Replication outputs are integer counts. Accumulating them as integers
//! (shifted near their expected value so fourth powers stay small) makes
//! every aggregate independent of summation order, which is what lets
//! parallel runs reproduce sequential ones bit for bit. Floating point
//! only enters when an accumulator is finalized.

/// Mean, variance and their standard errors for one accumulated series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueStats {
    pub n: u64,
    pub mean: f64,
    pub mean_se: f64,
    /// Unbiased sample variance across replications.
    pub var: f64,
    /// Standard error of `var`, from the fourth central moment.
    pub var_se: f64,
}

/// Power sums of one integer-valued series, shifted by a fixed offset.
#[derive(Debug, Clone, Copy, Default)]
pub struct MomentAccumulator {
    shift: i64,
    n: u64,
    s1: i128,
    s2: i128,
    s3: i128,
    s4: i128,
}

impl MomentAccumulator {
    /// `shift` should sit near the expected value of the series so the
    /// accumulated powers stay small; any fixed value is correct.
    pub fn new(shift: i64) -> Self {
        Self {
            shift,
            ..Self::default()
        }
    }

    pub fn add(&mut self, x: u64) {
        let d = x as i64 as i128 - self.shift as i128;
        self.n += 1;
        self.s1 += d;
        let d2 = d * d;
        self.s2 += d2;
        self.s3 += d2 * d;
        self.s4 += d2 * d2;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.shift, other.shift);
        self.n += other.n;
        self.s1 += other.s1;
        self.s2 += other.s2;
        self.s3 += other.s3;
        self.s4 += other.s4;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn stats(&self) -> ValueStats {
        let n = self.n as f64;
        let (m1, m2, m3, m4) = (
            self.s1 as f64 / n,
            self.s2 as f64 / n,
            self.s3 as f64 / n,
            self.s4 as f64 / n,
        );
        // Central moments about the sample mean.
        let c2 = m2 - m1 * m1;
        let _c3 = m3 - 3.0 * m1 * m2 + 2.0 * m1.powi(3);
        let c4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
        let mean = self.shift as f64 + m1;
        if self.n < 2 {
            return ValueStats {
                n: self.n,
                mean,
                mean_se: f64::NAN,
                var: f64::NAN,
                var_se: f64::NAN,
            };
        }
        let var = c2 * n / (n - 1.0);
        let var_var = (c4 - c2 * c2 * (n - 3.0) / (n - 1.0)) / n;
        ValueStats {
            n: self.n,
            mean,
            mean_se: (var / n).sqrt(),
            var,
            var_se: var_var.max(0.0).sqrt(),
        }
    }
}

/// Covariance estimate for one accumulated pair of series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovStats {
    pub n: u64,
    pub mean_x: f64,
    pub mean_y: f64,
    /// Unbiased sample covariance across replications.
    pub cov: f64,
    /// Asymptotic standard error of `cov`.
    pub cov_se: f64,
}

/// Mixed power sums of an integer-valued pair, each shifted by a fixed
/// offset.
#[derive(Debug, Clone, Copy, Default)]
pub struct PairAccumulator {
    shift_x: i64,
    shift_y: i64,
    n: u64,
    sx: i128,
    sy: i128,
    sxx: i128,
    syy: i128,
    sxy: i128,
    sxxy: i128,
    sxyy: i128,
    sxxyy: i128,
}

impl PairAccumulator {
    pub fn new(shift_x: i64, shift_y: i64) -> Self {
        Self {
            shift_x,
            shift_y,
            ..Self::default()
        }
    }

    pub fn add(&mut self, x: u64, y: u64) {
        let dx = x as i64 as i128 - self.shift_x as i128;
        let dy = y as i64 as i128 - self.shift_y as i128;
        self.n += 1;
        self.sx += dx;
        self.sy += dy;
        self.sxx += dx * dx;
        self.syy += dy * dy;
        self.sxy += dx * dy;
        self.sxxy += dx * dx * dy;
        self.sxyy += dx * dy * dy;
        self.sxxyy += dx * dx * dy * dy;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!((self.shift_x, self.shift_y), (other.shift_x, other.shift_y));
        self.n += other.n;
        self.sx += other.sx;
        self.sy += other.sy;
        self.sxx += other.sxx;
        self.syy += other.syy;
        self.sxy += other.sxy;
        self.sxxy += other.sxxy;
        self.sxyy += other.sxyy;
        self.sxxyy += other.sxxyy;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn stats(&self) -> CovStats {
        let n = self.n as f64;
        let ax = self.sx as f64 / n;
        let ay = self.sy as f64 / n;
        let mxx = self.sxx as f64 / n;
        let myy = self.syy as f64 / n;
        let mxy = self.sxy as f64 / n;
        let mxxy = self.sxxy as f64 / n;
        let mxyy = self.sxyy as f64 / n;
        let mxxyy = self.sxxyy as f64 / n;
        if self.n < 2 {
            return CovStats {
                n: self.n,
                mean_x: self.shift_x as f64 + ax,
                mean_y: self.shift_y as f64 + ay,
                cov: f64::NAN,
                cov_se: f64::NAN,
            };
        }
        let c11 = mxy - ax * ay;
        // Central mixed moment E[(x - ax)^2 (y - ay)^2].
        let c22 = mxxyy - 2.0 * ay * mxxy - 2.0 * ax * mxyy
            + ay * ay * mxx
            + ax * ax * myy
            + 4.0 * ax * ay * mxy
            - 3.0 * ax * ax * ay * ay;
        let cov = c11 * n / (n - 1.0);
        let var_cov = (c22 - c11 * c11) / n;
        CovStats {
            n: self.n,
            mean_x: self.shift_x as f64 + ax,
            mean_y: self.shift_y as f64 + ay,
            cov,
            cov_se: var_cov.max(0.0).sqrt(),
        }
    }
}

/// Plain sums for nonnegative series where only the mean and the raw
/// second moment matter (queue lengths and their squares).
#[derive(Debug, Clone, Copy, Default)]
pub struct SumAccumulator {
    n: u64,
    s1: u128,
    s2: u128,
}

impl SumAccumulator {
    pub fn add(&mut self, x: u64) {
        self.n += 1;
        self.s1 += u128::from(x);
        self.s2 += u128::from(x) * u128::from(x);
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.s1 += other.s1;
        self.s2 += other.s2;
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.s1 as f64 / self.n as f64
    }

    /// Raw second moment `E[x^2]`.
    pub fn mean_square(&self) -> f64 {
        self.s2 as f64 / self.n as f64
    }
}
