//! Command-line front end: validate specs, run the analytic routes, run
//! the Monte-Carlo oracle and the simulator, and compare the results.
//!
//! Exit codes are stable: 0 success, 1 invalid input, 2 internal
//! consistency failure, 3 comparison failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flowvar::diffusion::{covariance_tables, CovarianceTables};
use flowvar::moments::VisitMoments;
use flowvar::network::{FlowId, NetworkSpec, ValidatedNetwork};
use flowvar::oracle::run_zero_service;
use flowvar::report::{self, fmt_sig, CSV_DIGITS, TABLE_DIGITS};
use flowvar::rng::threads_from_env;
use flowvar::sim::{run_experiment, Experiment, ExperimentFile, SimOptions};
use flowvar::stats::ValueStats;

/// Maximum relative disagreement tolerated between the two analytic
/// routes before `analyze` reports an internal inconsistency.
const ROUTE_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(
    name = "flowvar",
    about = "Asymptotic variances and covariances of flows in stable open queueing networks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SpecArg {
    /// Network spec JSON file.
    #[arg(long)]
    spec: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment JSON file (arrivals, services, policy, horizon, grid,
    /// replications, seed).
    #[arg(long)]
    experiment: PathBuf,
    /// Output directory for CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Replication count override.
    #[arg(long)]
    replications: Option<u64>,
    /// Flows to track, comma separated (`5->4,2->1`); default: every flow
    /// with positive routing probability.
    #[arg(long, value_delimiter = ',')]
    flows: Vec<FlowId>,
    /// Run even when a server load is at or above one.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a network spec and print throughput and stability.
    Validate {
        #[command(flatten)]
        spec: SpecArg,
    },
    /// Evaluate both analytic covariance routes and emit the tables.
    Analyze {
        #[command(flatten)]
        spec: SpecArg,
        /// Output directory for sigma_d.csv, sigma_e.csv, flows.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict the printed flow summary to these flows.
        #[arg(long, value_delimiter = ',')]
        flows: Vec<FlowId>,
        /// Flow pairs for correlation coefficients, `;`-separated pairs
        /// of `,`-separated flows (e.g. `1:3,2:4;4:5,5:4`).
        #[arg(long)]
        rho: Option<String>,
    },
    /// Export expected per-tour transition counts (and cross moments for
    /// chosen pairs).
    Moments {
        #[command(flatten)]
        spec: SpecArg,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Flow pairs for cross-moment export, same syntax as --rho.
        #[arg(long)]
        pairs: Option<String>,
        /// Export cross moments for all pairs of positive-probability
        /// flows (refused above K = 8 without --force).
        #[arg(long)]
        all_pairs: bool,
        #[arg(long)]
        force: bool,
    },
    /// Run the zero-service Monte-Carlo oracle.
    Oracle {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        run: RunArgs,
        /// Flow pairs whose covariance is estimated at the last grid
        /// point, same syntax as --rho.
        #[arg(long)]
        rho: Option<String>,
    },
    /// Run the discrete-event simulation experiment.
    Simulate {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare an empirical variance curve against the analytic slopes.
    Compare {
        #[command(flatten)]
        spec: SpecArg,
        #[command(flatten)]
        run: RunArgs,
        /// Curve source: `des` (default) or `zero-service`.
        #[arg(long, default_value = "des")]
        mode: String,
        /// Reuse a previously written curve CSV instead of running.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Relative tolerance on `var/t` at the last grid point.
        #[arg(long, default_value_t = 0.05)]
        tolerance: f64,
    },
}

enum Failure {
    /// Exit 1: bad input (file, spec, experiment, flags).
    Input(String),
    /// Exit 2: internal consistency failure.
    Internal(String),
    /// Exit 3: comparison failure.
    Comparison(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 1,
            Self::Internal(_) => 2,
            Self::Comparison(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Input(m) | Self::Internal(m) | Self::Comparison(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> Failure {
    Failure::Input(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Validate { spec } => cmd_validate(&spec.spec),
        Command::Analyze { spec, out, flows, rho } => cmd_analyze(&spec.spec, out, &flows, rho),
        Command::Moments { spec, out, pairs, all_pairs, force } => {
            cmd_moments(&spec.spec, out, pairs, all_pairs, force)
        }
        Command::Oracle { spec, run, rho } => cmd_oracle(&spec.spec, run, rho),
        Command::Simulate { spec, run } => cmd_simulate(&spec.spec, run),
        Command::Compare { spec, run, mode, from, tolerance } => {
            cmd_compare(&spec.spec, run, &mode, from, tolerance)
        }
    }
}

fn load_network(path: &Path) -> Result<ValidatedNetwork, Failure> {
    let spec = NetworkSpec::from_json_file(path).map_err(input_err)?;
    spec.validate()
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn parse_pairs(text: &str) -> Result<Vec<(FlowId, FlowId)>, Failure> {
    let mut out = Vec::new();
    for chunk in text.split(';').filter(|s| !s.trim().is_empty()) {
        let flows: Vec<&str> = chunk.split(',').collect();
        if flows.len() != 2 {
            return Err(Failure::Input(format!(
                "expected a flow pair like \"1:3,2:4\", got {chunk:?}"
            )));
        }
        let f1 = flows[0].trim().parse::<FlowId>().map_err(input_err)?;
        let f2 = flows[1].trim().parse::<FlowId>().map_err(input_err)?;
        out.push((f1, f2));
    }
    Ok(out)
}

/// All flows with positive routing probability, in flow order.
fn positive_flows(net: &ValidatedNetwork) -> Vec<FlowId> {
    let k = net.k();
    let mut flows = Vec::new();
    for i in 1..=k {
        for j in 1..=k {
            if net.routing()[(i - 1, j - 1)] > 0.0 {
                flows.push(FlowId::new(i, j));
            }
        }
    }
    flows
}

fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| Failure::Input(format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), Failure> {
    fs::write(path, body)
        .map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(spec_path: &Path) -> Result<(), Failure> {
    let net = load_network(spec_path)?;
    println!("valid network with K = {} queues", net.k());
    println!("queue  nu");
    for q in 0..net.k() {
        println!("{:>5}  {}", q + 1, fmt_sig(net.nu()[q], TABLE_DIGITS));
    }
    println!("server  queues        load     stable");
    for s in net.stability_report() {
        let queues = s
            .queues
            .iter()
            .map(|q| q.to_string())
            .collect::<Vec<_>>()
            .join(",");
        println!(
            "{:>6}  {:<12}  {:<7}  {}",
            s.server,
            queues,
            fmt_sig(s.load, TABLE_DIGITS),
            if s.stable { "yes" } else { "NO" }
        );
    }
    Ok(())
}

/// Both analytic routes plus their maximum relative disagreement.
fn analyze_tables(net: &ValidatedNetwork) -> (CovarianceTables, f64) {
    let matrix_route = covariance_tables(net);
    let moment_route = VisitMoments::new(net).tables();
    let mut max_disc = 0.0f64;
    for (a, b) in matrix_route
        .flows
        .iter()
        .zip(moment_route.flows.iter())
        .chain(matrix_route.arrivals.iter().zip(moment_route.arrivals.iter()))
    {
        max_disc = max_disc.max((a - b).abs() / a.abs().max(1.0));
    }
    (matrix_route, max_disc)
}

fn cmd_analyze(
    spec_path: &Path,
    out: Option<PathBuf>,
    flows: &[FlowId],
    rho: Option<String>,
) -> Result<(), Failure> {
    let net = load_network(spec_path)?;
    let (tables, max_disc) = analyze_tables(&net);

    let nu_flow = net.nu_flow();
    let selected = if flows.is_empty() {
        positive_flows(&net)
    } else {
        flows.to_vec()
    };
    println!("flow    nu_ij     sigma2    sigma2/nu");
    for f in &selected {
        if !f.in_range(net.k()) {
            return Err(Failure::Input(format!("flow {f} out of range for K = {}", net.k())));
        }
        let rate = nu_flow[(f.i - 1, f.j - 1)];
        let var = tables.flow_var(*f).map_err(input_err)?;
        let ratio = if rate > 0.0 {
            fmt_sig(var / rate, TABLE_DIGITS)
        } else {
            "-".into()
        };
        println!(
            "{:<6}  {:<8}  {:<8}  {}",
            f.to_string(),
            fmt_sig(rate, TABLE_DIGITS),
            fmt_sig(var, TABLE_DIGITS),
            ratio
        );
    }
    println!("queue scv:");
    for (q, scv) in tables.scv(net.nu()).iter().enumerate() {
        let text = match scv {
            Some(v) => fmt_sig(*v, TABLE_DIGITS),
            None => "undefined (zero rate)".into(),
        };
        println!("{:>5}  {text}", q + 1);
    }
    if let Some(rho) = rho {
        println!("correlations:");
        for (f1, f2) in parse_pairs(&rho)? {
            let r = tables.correlation(f1, f2).map_err(input_err)?;
            println!("rho({f1}, {f2}) = {}", fmt_sig(r, TABLE_DIGITS));
        }
    }
    println!("max relative route discrepancy: {}", fmt_sig(max_disc, 3));

    if let Some(out) = out {
        ensure_out_dir(&out)?;
        let mut buf = Vec::new();
        report::write_flow_table_csv(&mut buf, &tables).map_err(input_err)?;
        write_file(&out.join("sigma_d.csv"), &buf)?;
        buf.clear();
        report::write_arrival_table_csv(&mut buf, &tables).map_err(input_err)?;
        write_file(&out.join("sigma_e.csv"), &buf)?;
        buf.clear();
        report::write_flows_summary_csv(&mut buf, &net, &tables).map_err(input_err)?;
        write_file(&out.join("flows.csv"), &buf)?;
    }

    if max_disc >= ROUTE_TOL {
        return Err(Failure::Internal(format!(
            "analytic routes disagree: max relative discrepancy {max_disc:e}"
        )));
    }
    Ok(())
}

fn cmd_moments(
    spec_path: &Path,
    out: Option<PathBuf>,
    pairs: Option<String>,
    all_pairs: bool,
    force: bool,
) -> Result<(), Failure> {
    let net = load_network(spec_path)?;
    let mut pair_list = match pairs {
        Some(text) => parse_pairs(&text)?,
        None => Vec::new(),
    };
    if all_pairs {
        if net.k() > 8 && !force {
            return Err(Failure::Input(format!(
                "refusing the full cross-moment export for K = {} (> 8); pass --force to override",
                net.k()
            )));
        }
        let flows = positive_flows(&net);
        for (a, &f1) in flows.iter().enumerate() {
            for &f2 in &flows[a..] {
                pair_list.push((f1, f2));
            }
        }
    }

    let mut buf = Vec::new();
    report::write_moments_csv(&mut buf, &net).map_err(input_err)?;
    match &out {
        Some(dir) => {
            ensure_out_dir(dir)?;
            write_file(&dir.join("moments.csv"), &buf)?;
        }
        None => print!("{}", String::from_utf8_lossy(&buf)),
    }
    if !pair_list.is_empty() {
        buf.clear();
        report::write_cross_moments_csv(&mut buf, &net, &pair_list).map_err(input_err)?;
        match &out {
            Some(dir) => write_file(&dir.join("cross_moments.csv"), &buf)?,
            None => print!("{}", String::from_utf8_lossy(&buf)),
        }
    }
    Ok(())
}

fn load_experiment(spec_path: &Path, run: &RunArgs) -> Result<Experiment, Failure> {
    let file = ExperimentFile::load(&run.experiment).map_err(input_err)?;
    // The --spec flag wins over the path named in the experiment file.
    let mut net = load_network(spec_path)?;
    if let Some(policy) = &file.policy {
        net = net
            .with_servers(policy)
            .map_err(|e| Failure::Input(format!("{}: {e}", run.experiment.display())))?;
    }
    let mut exp = Experiment::new(
        net,
        file.arrivals,
        file.services,
        file.horizon,
        file.grid.expand(),
        file.replications,
        file.seed,
    )
    .map_err(|e| Failure::Input(format!("{}: {e}", run.experiment.display())))?;
    if let Some(seed) = run.seed {
        exp.seed = seed;
    }
    if let Some(reps) = run.replications {
        exp.replications = reps;
    }
    for note in exp.arrival_model_mismatches() {
        eprintln!("note: {note}");
    }
    Ok(exp)
}

fn tracked_flows(net: &ValidatedNetwork, run: &RunArgs) -> Result<Vec<FlowId>, Failure> {
    if run.flows.is_empty() {
        return Ok(positive_flows(net));
    }
    for f in &run.flows {
        if !f.in_range(net.k()) {
            return Err(Failure::Input(format!("flow {f} out of range for K = {}", net.k())));
        }
    }
    Ok(run.flows.clone())
}

fn print_curve_summary(
    grid: &[f64],
    flows: &[FlowId],
    stat: impl Fn(usize, usize) -> ValueStats,
    slope: impl Fn(FlowId) -> f64,
) {
    let last = grid.len() - 1;
    let t = grid[last];
    println!("flow    var/t     se/t      analytic  bias");
    for (pos, &f) in flows.iter().enumerate() {
        let s = stat(pos, last);
        let sigma2 = slope(f);
        println!(
            "{:<6}  {:<8}  {:<8}  {:<8}  {}",
            f.to_string(),
            fmt_sig(s.var / t, TABLE_DIGITS),
            fmt_sig(s.var_se / t, TABLE_DIGITS),
            fmt_sig(sigma2, TABLE_DIGITS),
            fmt_sig(sigma2 * t - s.var, TABLE_DIGITS)
        );
    }
}

fn cmd_oracle(spec_path: &Path, run: RunArgs, rho: Option<String>) -> Result<(), Failure> {
    let exp = load_experiment(spec_path, &run)?;
    let net = exp.net.clone();
    let flows = tracked_flows(&net, &run)?;
    let pairs = match rho {
        Some(text) => parse_pairs(&text)?,
        None => Vec::new(),
    };
    let tables = covariance_tables(&net);
    let oracle = run_zero_service(
        &net,
        &exp.arrivals,
        exp.horizon,
        &exp.grid,
        exp.replications,
        exp.seed,
        &flows,
        &pairs,
        threads_from_env(),
    )
    .map_err(input_err)?;

    print_curve_summary(
        &oracle.grid,
        &oracle.flows,
        |pos, gp| *oracle.flow_stat(pos, gp),
        |f| tables.flow_var(f).unwrap_or(f64::NAN),
    );
    for (f1, f2, cov) in &oracle.pair_stats {
        println!(
            "cov({f1}, {f2})/t at t={}: {} (se {})",
            fmt_sig(oracle.grid[oracle.grid.len() - 1], TABLE_DIGITS),
            fmt_sig(cov.cov / oracle.grid[oracle.grid.len() - 1], TABLE_DIGITS),
            fmt_sig(cov.cov_se / oracle.grid[oracle.grid.len() - 1], TABLE_DIGITS),
        );
    }

    if let Some(out) = &run.out {
        ensure_out_dir(out)?;
        let mut buf = Vec::new();
        report::write_curves_csv(
            &mut buf,
            &oracle.grid,
            &oracle.flows,
            |pos, gp| *oracle.flow_stat(pos, gp),
            |f| tables.flow_var(f).ok(),
            Some("zero-service"),
        )
        .map_err(input_err)?;
        write_file(&out.join("oracle.csv"), &buf)?;
    }
    Ok(())
}

fn cmd_simulate(spec_path: &Path, run: RunArgs) -> Result<(), Failure> {
    let exp = load_experiment(spec_path, &run)?;
    let flows = tracked_flows(&exp.net, &run)?;
    let tables = covariance_tables(&exp.net);
    let opts = SimOptions {
        force: run.force,
        threads: threads_from_env(),
        event_cap: None,
    };
    let out = run_experiment(&exp, &flows, &opts).map_err(input_err)?;

    print_curve_summary(
        &out.grid,
        &out.flows,
        |pos, gp| *out.flow_stat(pos, gp),
        |f| tables.flow_var(f).unwrap_or(f64::NAN),
    );

    if let Some(dir) = &run.out {
        ensure_out_dir(dir)?;
        let mut buf = Vec::new();
        report::write_curves_csv(
            &mut buf,
            &out.grid,
            &out.flows,
            |pos, gp| *out.flow_stat(pos, gp),
            |f| tables.flow_var(f).ok(),
            None,
        )
        .map_err(input_err)?;
        write_file(&dir.join("sim.csv"), &buf)?;
        buf.clear();
        report::write_queues_csv(
            &mut buf,
            &out.grid,
            exp.net.k(),
            &out.queue_mean,
            &out.queue_mean_square,
            &out.arrival_mean,
        )
        .map_err(input_err)?;
        write_file(&dir.join("queues.csv"), &buf)?;
    }
    Ok(())
}

/// An empirical variance curve, either computed or reloaded from CSV.
struct Curve {
    grid: Vec<f64>,
    flows: Vec<FlowId>,
    /// Flow-major by grid point: `(var, var_se)`.
    cells: Vec<(f64, f64)>,
}

fn load_curve_csv(path: &Path) -> Result<Curve, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::Input(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize, Failure> {
        cols.iter()
            .position(|&c| c == name)
            .ok_or_else(|| Failure::Input(format!("{}: missing column {name}", path.display())))
    };
    let (ct, cf, cv, cs) = (col("t")?, col("flow")?, col("var_estimate")?, col("var_se")?);
    let mut rows: Vec<(FlowId, f64, f64, f64)> = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |idx: usize| -> Result<f64, Failure> {
            fields
                .get(idx)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Failure::Input(format!("{}:{}: bad number", path.display(), n + 2)))
        };
        let flow: FlowId = fields
            .get(cf)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Failure::Input(format!("{}:{}: bad flow", path.display(), n + 2)))?;
        rows.push((flow, parse(ct)?, parse(cv)?, parse(cs)?));
    }
    let mut flows: Vec<FlowId> = Vec::new();
    let mut grid: Vec<f64> = Vec::new();
    for (flow, t, _, _) in &rows {
        if !flows.contains(flow) {
            flows.push(*flow);
        }
        if flows.len() == 1 {
            grid.push(*t);
        }
    }
    let g = grid.len();
    if rows.len() != flows.len() * g {
        return Err(Failure::Input(format!(
            "{}: ragged curve table ({} rows, {} flows, {} grid points)",
            path.display(),
            rows.len(),
            flows.len(),
            g
        )));
    }
    let mut cells = vec![(f64::NAN, f64::NAN); rows.len()];
    for (i, (flow, t, var, se)) in rows.iter().enumerate() {
        let pos = flows.iter().position(|f| f == flow).unwrap();
        let gp = i % g;
        if (grid[gp] - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(Failure::Input(format!(
                "{}: inconsistent grid for flow {flow}",
                path.display()
            )));
        }
        cells[pos * g + gp] = (*var, *se);
    }
    Ok(Curve { grid, flows, cells })
}

fn cmd_compare(
    spec_path: &Path,
    run: RunArgs,
    mode: &str,
    from: Option<PathBuf>,
    tolerance: f64,
) -> Result<(), Failure> {
    let exp = load_experiment(spec_path, &run)?;
    let flows = tracked_flows(&exp.net, &run)?;
    let tables = covariance_tables(&exp.net);

    let curve = match &from {
        Some(path) => {
            let curve = load_curve_csv(path)?;
            // No partial output on grid or flow mismatches.
            if curve.grid.len() != exp.grid.len()
                || curve
                    .grid
                    .iter()
                    .zip(&exp.grid)
                    .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
            {
                return Err(Failure::Input(format!(
                    "{}: grid does not match the experiment grid",
                    path.display()
                )));
            }
            for f in &flows {
                if !curve.flows.contains(f) {
                    return Err(Failure::Input(format!(
                        "{}: flow {f} missing from the curve file",
                        path.display()
                    )));
                }
            }
            curve
        }
        None => match mode {
            "des" => {
                let opts = SimOptions {
                    force: run.force,
                    threads: threads_from_env(),
                    event_cap: None,
                };
                let out = run_experiment(&exp, &flows, &opts).map_err(input_err)?;
                Curve {
                    grid: out.grid.clone(),
                    flows: out.flows.clone(),
                    cells: (0..out.flows.len())
                        .flat_map(|pos| {
                            let out = &out;
                            (0..out.grid.len()).map(move |gp| {
                                let s = out.flow_stat(pos, gp);
                                (s.var, s.var_se)
                            })
                        })
                        .collect(),
                }
            }
            "zero-service" => {
                let oracle = run_zero_service(
                    &exp.net,
                    &exp.arrivals,
                    exp.horizon,
                    &exp.grid,
                    exp.replications,
                    exp.seed,
                    &flows,
                    &[],
                    threads_from_env(),
                )
                .map_err(input_err)?;
                Curve {
                    grid: oracle.grid.clone(),
                    flows: oracle.flows.clone(),
                    cells: (0..oracle.flows.len())
                        .flat_map(|pos| {
                            let oracle = &oracle;
                            (0..oracle.grid.len()).map(move |gp| {
                                let s = oracle.flow_stat(pos, gp);
                                (s.var, s.var_se)
                            })
                        })
                        .collect(),
                }
            }
            other => {
                return Err(Failure::Input(format!(
                    "unknown mode {other:?}; expected \"des\" or \"zero-service\""
                )))
            }
        },
    };

    let g = curve.grid.len();
    let last_t = curve.grid[g - 1];
    let mut failures = Vec::new();
    let mut merged = String::new();
    writeln!(merged, "t,flow,var_estimate,var_se,analytic_slope_times_t,bias").unwrap();
    println!("flow    var/t     analytic  rel_err   verdict");
    for f in &flows {
        let pos = curve.flows.iter().position(|x| x == f).unwrap();
        let sigma2 = tables.flow_var(*f).map_err(input_err)?;
        for gp in 0..g {
            let (var, se) = curve.cells[pos * g + gp];
            let t = curve.grid[gp];
            writeln!(
                merged,
                "{},{f},{},{},{},{}",
                fmt_sig(t, CSV_DIGITS),
                fmt_sig(var, CSV_DIGITS),
                fmt_sig(se, CSV_DIGITS),
                fmt_sig(sigma2 * t, CSV_DIGITS),
                fmt_sig(sigma2 * t - var, CSV_DIGITS)
            )
            .unwrap();
        }
        let (var, _) = curve.cells[pos * g + g - 1];
        let got = var / last_t;
        let rel = if sigma2 > 0.0 {
            (got - sigma2).abs() / sigma2
        } else {
            got.abs()
        };
        let pass = rel <= tolerance;
        println!(
            "{:<6}  {:<8}  {:<8}  {:<8}  {}",
            f.to_string(),
            fmt_sig(got, TABLE_DIGITS),
            fmt_sig(sigma2, TABLE_DIGITS),
            fmt_sig(rel, 3),
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failures.push(format!(
                "flow {f}: var/t = {got:.6} vs analytic {sigma2:.6} (relative error {rel:.4}, tolerance {tolerance})"
            ));
        }
    }

    if let Some(dir) = &run.out {
        ensure_out_dir(dir)?;
        write_file(&dir.join("compare.csv"), merged.as_bytes())?;
    }

    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Comparison(failures.join("; ")))
    }
}
