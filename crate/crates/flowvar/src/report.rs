//! Plot-ready CSV emission.
//!
//! CSV numbers carry 10 significant digits (they feed tests and plots);
//! human-facing tables use 6. All tables here are produced from module
//! operations only, so anything the CLI prints can be reproduced from the
//! library.

use std::io::{self, Write};

use crate::diffusion::CovarianceTables;
use crate::moments::VisitMoments;
use crate::network::{FlowId, ValidatedNetwork};
use crate::stats::ValueStats;

/// Digits used in CSV output.
pub const CSV_DIGITS: usize = 10;
/// Digits used in human-facing tables.
pub const TABLE_DIGITS: usize = 6;

/// Format with a fixed number of significant digits, plain decimal
/// within a sane magnitude window and scientific outside it.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs();
    if (1e-4..1e15).contains(&mag) {
        let dec = (digits as i32 - 1 - mag.log10().floor() as i32).max(0) as usize;
        format!("{x:.dec$}")
    } else {
        format!("{x:.*e}", digits - 1)
    }
}

fn flow_label(f: FlowId) -> String {
    format!("D{}->{}", f.i, f.j)
}

/// Flow covariance matrix with `Di->j` row/column labels.
pub fn write_flow_table_csv(w: &mut impl Write, tables: &CovarianceTables) -> io::Result<()> {
    let k = tables.k();
    write!(w, "flow")?;
    for idx in 0..k * k {
        write!(w, ",{}", flow_label(FlowId::from_index(idx, k)))?;
    }
    writeln!(w)?;
    for r in 0..k * k {
        write!(w, "{}", flow_label(FlowId::from_index(r, k)))?;
        for c in 0..k * k {
            write!(w, ",{}", fmt_sig(tables.flows[(r, c)], CSV_DIGITS))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Arrival covariance matrix with `E1..EK` labels.
pub fn write_arrival_table_csv(w: &mut impl Write, tables: &CovarianceTables) -> io::Result<()> {
    let k = tables.k();
    write!(w, "queue")?;
    for q in 1..=k {
        write!(w, ",E{q}")?;
    }
    writeln!(w)?;
    for r in 0..k {
        write!(w, "E{}", r + 1)?;
        for c in 0..k {
            write!(w, ",{}", fmt_sig(tables.arrivals[(r, c)], CSV_DIGITS))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Per-flow summary: rate, asymptotic variance and their ratio, one row
/// per flow with positive routing probability.
pub fn write_flows_summary_csv(
    w: &mut impl Write,
    net: &ValidatedNetwork,
    tables: &CovarianceTables,
) -> io::Result<()> {
    writeln!(w, "i,j,nu_ij,sigma2,sigma2_over_nu")?;
    let nu_flow = net.nu_flow();
    for i in 1..=net.k() {
        for j in 1..=net.k() {
            if net.routing()[(i - 1, j - 1)] == 0.0 {
                continue;
            }
            let rate = nu_flow[(i - 1, j - 1)];
            let var = tables.flow_var(FlowId::new(i, j)).expect("in range");
            let ratio = if rate > 0.0 {
                fmt_sig(var / rate, CSV_DIGITS)
            } else {
                String::new()
            };
            writeln!(
                w,
                "{i},{j},{},{},{ratio}",
                fmt_sig(rate, CSV_DIGITS),
                fmt_sig(var, CSV_DIGITS),
            )?;
        }
    }
    Ok(())
}

/// Expected per-tour transition counts: rows `(start, i, j, mean)` for
/// every flow with positive routing probability.
pub fn write_moments_csv(w: &mut impl Write, net: &ValidatedNetwork) -> io::Result<()> {
    let vm = VisitMoments::new(net);
    writeln!(w, "k,i,j,m")?;
    for i in 1..=net.k() {
        for j in 1..=net.k() {
            if net.routing()[(i - 1, j - 1)] == 0.0 {
                continue;
            }
            let m = vm.transition_mean(FlowId::new(i, j));
            for start in 1..=net.k() {
                writeln!(w, "{start},{i},{j},{}", fmt_sig(m[start - 1], CSV_DIGITS))?;
            }
        }
    }
    Ok(())
}

/// Cross moments and covariances of per-tour transition counts for named
/// flow pairs.
pub fn write_cross_moments_csv(
    w: &mut impl Write,
    net: &ValidatedNetwork,
    pairs: &[(FlowId, FlowId)],
) -> io::Result<()> {
    let vm = VisitMoments::new(net);
    writeln!(w, "k,i1,j1,i2,j2,m2,c")?;
    for &(f1, f2) in pairs {
        let m2 = vm.cross_moment(f1, f2);
        let c = vm.covariance(f1, f2);
        for start in 1..=net.k() {
            writeln!(
                w,
                "{start},{},{},{},{},{},{}",
                f1.i,
                f1.j,
                f2.i,
                f2.j,
                fmt_sig(m2[start - 1], CSV_DIGITS),
                fmt_sig(c[start - 1], CSV_DIGITS),
            )?;
        }
    }
    Ok(())
}

/// Variance-curve CSV shared by the simulator and the zero-service
/// oracle: `(t, flow, var_estimate, var_se, analytic_slope_times_t,
/// bias)` plus a trailing `mode` column when requested.
pub fn write_curves_csv(
    w: &mut impl Write,
    grid: &[f64],
    flows: &[FlowId],
    stat: impl Fn(usize, usize) -> ValueStats,
    analytic_slope: impl Fn(FlowId) -> Option<f64>,
    mode: Option<&str>,
) -> io::Result<()> {
    write!(w, "t,flow,var_estimate,var_se,analytic_slope_times_t,bias")?;
    if mode.is_some() {
        write!(w, ",mode")?;
    }
    writeln!(w)?;
    for (pos, &flow) in flows.iter().enumerate() {
        for (gp, &t) in grid.iter().enumerate() {
            let s = stat(pos, gp);
            let (slope_t, bias) = match analytic_slope(flow) {
                Some(sigma2) => {
                    let st = sigma2 * t;
                    (fmt_sig(st, CSV_DIGITS), fmt_sig(st - s.var, CSV_DIGITS))
                }
                None => (String::new(), String::new()),
            };
            write!(
                w,
                "{},{}->{},{},{},{slope_t},{bias}",
                fmt_sig(t, CSV_DIGITS),
                flow.i,
                flow.j,
                fmt_sig(s.var, CSV_DIGITS),
                fmt_sig(s.var_se, CSV_DIGITS),
            )?;
            if let Some(m) = mode {
                write!(w, ",{m}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Per-queue diagnostics on the grid: mean queue length, mean arrivals
/// and the `E[Q^2]/t` tail diagnostic.
pub fn write_queues_csv(
    w: &mut impl Write,
    grid: &[f64],
    k: usize,
    queue_mean: &[f64],
    queue_mean_square: &[f64],
    arrival_mean: &[f64],
) -> io::Result<()> {
    writeln!(w, "t,queue,mean_q,mean_e,q2_over_t")?;
    let g = grid.len();
    for q in 0..k {
        for (gp, &t) in grid.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_sig(t, CSV_DIGITS),
                q + 1,
                fmt_sig(queue_mean[q * g + gp], CSV_DIGITS),
                fmt_sig(arrival_mean[q * g + gp], CSV_DIGITS),
                fmt_sig(queue_mean_square[q * g + gp] / t, CSV_DIGITS),
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::covariance_tables;
    use crate::testnet;

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(0.0, 10), "0");
        assert_eq!(fmt_sig(4.0, 10), "4.000000000");
        assert_eq!(fmt_sig(199.0 / 18.0, 10), "11.05555556");
        assert_eq!(fmt_sig(-0.5, 10), "-0.5000000000");
        assert_eq!(fmt_sig(2.0, 6), "2.00000");
        assert_eq!(fmt_sig(1.5e-7, 10), "1.500000000e-7");
    }

    #[test]
    fn flow_summary_lists_positive_probability_flows() {
        let net = testnet::six_node().validate().unwrap();
        let tables = covariance_tables(&net);
        let mut buf = Vec::new();
        write_flows_summary_csv(&mut buf, &net, &tables).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,nu_ij,sigma2,sigma2_over_nu");
        // Eight flows have positive probability in this network.
        assert_eq!(lines.len(), 9);
        assert!(lines.iter().any(|l| l.starts_with("5,4,4.000000000,11.05555556")));
    }

    #[test]
    fn curve_csv_schema() {
        let grid = [10.0, 20.0];
        let flows = [FlowId::new(1, 2)];
        let stat = |_pos: usize, gp: usize| ValueStats {
            n: 4,
            mean: 1.0,
            mean_se: 0.1,
            var: 2.0 * grid[gp],
            var_se: 0.5,
        };
        let mut buf = Vec::new();
        write_curves_csv(&mut buf, &grid, &flows, stat, |_| Some(2.0), Some("zero-service"))
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,flow,var_estimate,var_se,analytic_slope_times_t,bias,mode"
        );
        assert_eq!(
            lines.next().unwrap(),
            "10.00000000,1->2,20.00000000,0.5000000000,20.00000000,0,zero-service"
        );
    }
}
