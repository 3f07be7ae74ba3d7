//! Command-line front end: evolve states through the diffusion channel,
//! tabulate mean-photon curves, and run the verification suites.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid input,
//! 3 output I/O failure.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fockdiff::diffusion::{
    apply_channel_kraus, default_ode_step, evolve_ode, evolved_mean_photon, evolved_nbs_diagonal,
    evolved_nbs_required_levels, ChannelConfig, Method, EDGE_MARGIN,
};
use fockdiff::fock::{DensityMatrix, FockSpace};
use fockdiff::output::{
    write_evolve_csv, write_json, write_mean_curve_csv, CurveOutput, CurveRowOut, EvolveOutput,
    RunConfigEcho, TimePointResult,
};
use fockdiff::states::{
    chaotic_state_with_budget, lwcs_state_with_budget, nbs_state_with_budget, number_state,
    ChaoticParams, LwcsParams, NbsParams, NormallyOrderedDiagonal,
};
use fockdiff::verify;

#[derive(Parser)]
#[command(
    name = "fockdiff",
    version,
    about = "Truncated Fock-space simulation of the photon diffusion channel"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve a state and write photon-number distributions per time point
    Evolve(EvolveArgs),
    /// Tabulate mean photon number over a time grid (requires >= 2 points)
    MeanCurve(MeanCurveArgs),
    /// Run the verification suites and report residuals
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum StateKind {
    Number,
    Chaotic,
    Nbs,
    Lwcs,
}

impl StateKind {
    fn label(&self) -> &'static str {
        match self {
            StateKind::Number => "number",
            StateKind::Chaotic => "chaotic",
            StateKind::Nbs => "nbs",
            StateKind::Lwcs => "lwcs",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Kraus,
    Ode,
    Analytic,
    All,
}

impl MethodArg {
    fn label(&self) -> &'static str {
        match self {
            MethodArg::Kraus => "kraus",
            MethodArg::Ode => "ode",
            MethodArg::Analytic => "analytic",
            MethodArg::All => "all",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Identities,
    States,
    Channel,
    All,
}

#[derive(Args)]
struct StateOpts {
    /// Initial state family
    #[arg(long, value_enum)]
    state: StateKind,
    /// Subtracted-photon count for nbs (default 0)
    #[arg(long)]
    s: Option<usize>,
    /// Field parameter in (0,1) for nbs/chaotic
    #[arg(long)]
    gamma: Option<f64>,
    /// Fock level for number, weight index for lwcs
    #[arg(long)]
    l: Option<usize>,
    /// Weight parameter in (0,1] for lwcs
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    state: StateOpts,
    /// Diffusion rate (1/time)
    #[arg(long)]
    kappa: f64,
    /// Comma list "0,0.5,2" or range "start:stop:step"
    #[arg(long)]
    times: String,
    /// Fock dimension, or "auto"
    #[arg(long, default_value = "auto")]
    dim: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Kraus)]
    method: MethodArg,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Fock levels reported per time point
    #[arg(long, default_value_t = 16)]
    n_report: usize,
    /// Trace-deficit budget for truncations
    #[arg(long, default_value_t = 1e-10)]
    deficit_target: f64,
}

#[derive(Args)]
struct MeanCurveArgs {
    #[command(flatten)]
    state: StateOpts,
    #[arg(long)]
    kappa: f64,
    #[arg(long)]
    times: String,
    #[arg(long, default_value = "auto")]
    dim: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Analytic)]
    method: MethodArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[arg(long, default_value_t = 1e-10)]
    deficit_target: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(value_enum, default_value_t = SuiteArg::All)]
    suite: SuiteArg,
}

enum CliError {
    Invalid(String),
    Io(io::Error),
}

impl From<fockdiff::Error> for CliError {
    fn from(err: fockdiff::Error) -> Self {
        CliError::Invalid(err.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(err: io::Error) -> Self {
        CliError::Io(err)
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Evolve(args) => cmd_evolve(args),
        Command::MeanCurve(args) => cmd_mean_curve(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Io(err)) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}

/// FOCKDIFF_THREADS caps internal parallelism; results are bit-identical at
/// any thread count, so the cap only trades speed.
fn init_thread_pool() {
    if let Ok(raw) = std::env::var("FOCKDIFF_THREADS") {
        match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => eprintln!("warning: ignoring invalid FOCKDIFF_THREADS={raw:?}"),
        }
    }
}

enum StateSpec {
    Number { l: usize },
    Chaotic { params: ChaoticParams },
    Nbs { params: NbsParams },
    Lwcs { params: LwcsParams },
}

impl StateSpec {
    fn label(&self) -> &'static str {
        match self {
            StateSpec::Number { .. } => "number",
            StateSpec::Chaotic { .. } => "chaotic",
            StateSpec::Nbs { .. } => "nbs",
            StateSpec::Lwcs { .. } => "lwcs",
        }
    }

    fn analytic_available(&self) -> bool {
        !matches!(self, StateSpec::Lwcs { .. })
    }

    /// As negative-binomial parameters, for the states whose evolution has a
    /// closed form through that family.
    fn as_nbs(&self) -> Option<NbsParams> {
        match self {
            StateSpec::Nbs { params } => Some(*params),
            StateSpec::Chaotic { params } => NbsParams::new(0, params.gamma()).ok(),
            _ => None,
        }
    }

    fn min_dim(&self) -> usize {
        match self {
            StateSpec::Number { l } => l + 1,
            StateSpec::Lwcs { params } => params.l() + 1,
            _ => 2,
        }
    }

    fn build(&self, space: FockSpace, budget: f64) -> fockdiff::Result<DensityMatrix> {
        match self {
            StateSpec::Number { l } => number_state(space, *l),
            StateSpec::Chaotic { params } => chaotic_state_with_budget(space, params, budget),
            StateSpec::Nbs { params } => nbs_state_with_budget(space, params, budget),
            StateSpec::Lwcs { params } => lwcs_state_with_budget(space, params, budget),
        }
    }

    /// Auto-sized Fock dimension: generous linear rule, escalated where the
    /// closed-form tail of the final state needs more headroom.
    fn auto_dim(&self, kt_max: f64, target: f64) -> usize {
        let dim = match self {
            StateSpec::Nbs { params } => fockdiff::diffusion::auto_dim(params, kt_max, target),
            StateSpec::Chaotic { params } => {
                let p = NbsParams::new(0, params.gamma()).expect("validated");
                fockdiff::diffusion::auto_dim(&p, kt_max, target)
            }
            StateSpec::Number { l } => number_family_dim(*l, kt_max, target),
            StateSpec::Lwcs { params } => {
                number_family_dim(params.l(), params.kt() + kt_max, target)
            }
        };
        dim.max(self.min_dim() + EDGE_MARGIN)
    }
}

/// Dimension rule for the number-state family, whose channel output is the
/// Laguerre-weighted state at total diffusion time kt.
fn number_family_dim(l: usize, kt_total: f64, target: f64) -> usize {
    let linear = (4.0 * (l as f64 + kt_total) + 40.0).ceil() as usize;
    if kt_total == 0.0 {
        return linear;
    }
    let params = LwcsParams::from_diffusion_time(l, kt_total).expect("kt >= 0");
    let needed = NormallyOrderedDiagonal::lwcs(&params).required_levels(target / 4.0) + EDGE_MARGIN;
    linear.max(needed)
}

fn resolve_state(o: &StateOpts) -> Result<StateSpec, CliError> {
    let reject_unused = |used: &[&str]| -> Result<(), CliError> {
        let provided = [
            ("--s", o.s.is_some()),
            ("--gamma", o.gamma.is_some()),
            ("--l", o.l.is_some()),
            ("--lambda", o.lambda.is_some()),
        ];
        for (name, is_set) in provided {
            if is_set && !used.contains(&name) {
                return Err(CliError::Invalid(format!(
                    "parameter {name} is not used by state {}",
                    o.state.label()
                )));
            }
        }
        Ok(())
    };

    match o.state {
        StateKind::Number => {
            reject_unused(&["--l"])?;
            let l = o
                .l
                .ok_or_else(|| CliError::Invalid("state number requires --l".into()))?;
            Ok(StateSpec::Number { l })
        }
        StateKind::Chaotic => {
            reject_unused(&["--gamma"])?;
            let gamma = o
                .gamma
                .ok_or_else(|| CliError::Invalid("state chaotic requires --gamma".into()))?;
            Ok(StateSpec::Chaotic {
                params: ChaoticParams::new(gamma)?,
            })
        }
        StateKind::Nbs => {
            reject_unused(&["--s", "--gamma"])?;
            let gamma = o
                .gamma
                .ok_or_else(|| CliError::Invalid("state nbs requires --gamma".into()))?;
            Ok(StateSpec::Nbs {
                params: NbsParams::new(o.s.unwrap_or(0), gamma)?,
            })
        }
        StateKind::Lwcs => {
            reject_unused(&["--l", "--lambda"])?;
            let l = o
                .l
                .ok_or_else(|| CliError::Invalid("state lwcs requires --l".into()))?;
            let lambda = o
                .lambda
                .ok_or_else(|| CliError::Invalid("state lwcs requires --lambda".into()))?;
            Ok(StateSpec::Lwcs {
                params: LwcsParams::new(l, lambda)?,
            })
        }
    }
}

fn parse_times(spec: &str) -> Result<Vec<f64>, CliError> {
    let invalid = |msg: &str| CliError::Invalid(format!("invalid --times {spec:?}: {msg}"));
    let times: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid("range form is start:stop:step"));
        }
        let start: f64 = parts[0].parse().map_err(|_| invalid("unparseable start"))?;
        let stop: f64 = parts[1].parse().map_err(|_| invalid("unparseable stop"))?;
        let step: f64 = parts[2].parse().map_err(|_| invalid("unparseable step"))?;
        if step <= 0.0 || !step.is_finite() {
            return Err(invalid("step must be positive"));
        }
        if stop < start {
            return Err(invalid("stop must be >= start"));
        }
        let count = ((stop - start) / step + 1.0 + 1e-9).floor() as usize;
        (0..count).map(|i| start + i as f64 * step).collect()
    } else {
        spec.split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| invalid("unparseable entry"))?
    };
    if times.is_empty() {
        return Err(invalid("no time points"));
    }
    for (i, &t) in times.iter().enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(invalid("times must be finite and nonnegative"));
        }
        if i > 0 && t < times[i - 1] {
            return Err(invalid("times must be ascending"));
        }
    }
    Ok(times)
}

fn resolve_methods(arg: MethodArg, state: &StateSpec) -> Result<Vec<Method>, CliError> {
    let methods = match arg {
        MethodArg::Kraus => vec![Method::Kraus],
        MethodArg::Ode => vec![Method::Ode],
        MethodArg::Analytic => vec![Method::Analytic],
        MethodArg::All => vec![Method::Kraus, Method::Ode, Method::Analytic],
    };
    if methods.contains(&Method::Analytic) && !state.analytic_available() {
        return Err(CliError::Invalid(
            "analytic method is not available for state lwcs; use kraus or ode".into(),
        ));
    }
    Ok(methods)
}

fn resolve_dim(arg: &str, state: &StateSpec, kt_max: f64, target: f64) -> Result<usize, CliError> {
    if arg == "auto" {
        return Ok(state.auto_dim(kt_max, target));
    }
    let dim: usize = arg
        .parse()
        .map_err(|_| CliError::Invalid(format!("invalid --dim {arg:?}: integer or \"auto\"")))?;
    if dim < state.min_dim().max(2) {
        return Err(CliError::Invalid(format!(
            "--dim {dim} too small for this state; need at least {}",
            state.min_dim().max(2)
        )));
    }
    Ok(dim)
}

struct PointSummary {
    mean: f64,
    trace: f64,
    deficit: f64,
    distribution: Vec<f64>,
}

fn truncate_pad(probs: &[f64], n_report: usize) -> Vec<f64> {
    (0..n_report)
        .map(|k| probs.get(k).copied().unwrap_or(0.0))
        .collect()
}

fn analytic_point(
    state: &StateSpec,
    kappa: f64,
    t: f64,
    n_report: usize,
) -> Result<PointSummary, CliError> {
    if let Some(p) = state.as_nbs() {
        let cfg = ChannelConfig::new(kappa, t)?;
        let n_max = evolved_nbs_required_levels(&p, &cfg, 1e-12);
        let probs = evolved_nbs_diagonal(&p, &cfg, n_max);
        let trace: f64 = probs.iter().sum();
        return Ok(PointSummary {
            mean: evolved_mean_photon(&p, &cfg),
            trace,
            deficit: 1.0 - trace,
            distribution: truncate_pad(&probs, n_report),
        });
    }
    match state {
        StateSpec::Number { l } => {
            let kt = kappa * t;
            if kt == 0.0 {
                let mut dist = vec![0.0; n_report];
                if *l < n_report {
                    dist[*l] = 1.0;
                }
                return Ok(PointSummary {
                    mean: *l as f64,
                    trace: 1.0,
                    deficit: 0.0,
                    distribution: dist,
                });
            }
            let params = LwcsParams::from_diffusion_time(*l, kt)?;
            let rule = NormallyOrderedDiagonal::lwcs(&params);
            let n_max = rule.required_levels(1e-12);
            let probs = rule.probs(n_max + 1);
            let trace: f64 = probs.iter().sum();
            Ok(PointSummary {
                mean: *l as f64 + kt,
                trace,
                deficit: 1.0 - trace,
                distribution: truncate_pad(&probs, n_report),
            })
        }
        _ => Err(CliError::Invalid(
            "analytic method is not available for this state".into(),
        )),
    }
}

fn compute_point(
    state: &StateSpec,
    rho0: &DensityMatrix,
    kappa: f64,
    t: f64,
    method: Method,
    n_report: usize,
    target: f64,
) -> Result<PointSummary, CliError> {
    match method {
        Method::Analytic => analytic_point(state, kappa, t, n_report),
        Method::Kraus | Method::Ode => {
            let cfg = ChannelConfig::new(kappa, t)?.with_deficit_target(target);
            let rho = match method {
                Method::Kraus => apply_channel_kraus(rho0, &cfg)?,
                Method::Ode => {
                    let step = default_ode_step(kappa, rho0.space().dim());
                    evolve_ode(rho0, &cfg, step)?
                }
                Method::Analytic => unreachable!(),
            };
            Ok(PointSummary {
                mean: rho.mean_photon(),
                trace: rho.trace(),
                deficit: rho.trace_deficit(),
                distribution: truncate_pad(&rho.diagonal(), n_report),
            })
        }
    }
}

fn config_echo(
    o: &StateOpts,
    state: &StateSpec,
    kappa: f64,
    times: &[f64],
    dim: usize,
    method: MethodArg,
    n_report: usize,
    deficit_target: f64,
) -> RunConfigEcho {
    let (s, gamma, l, lambda) = match state {
        StateSpec::Number { l } => (None, None, Some(*l), None),
        StateSpec::Chaotic { params } => (None, Some(params.gamma()), None, None),
        StateSpec::Nbs { params } => (Some(params.s()), Some(params.gamma()), None, None),
        StateSpec::Lwcs { params } => (None, None, Some(params.l()), Some(params.lambda())),
    };
    RunConfigEcho {
        state: o.state.label().to_string(),
        s,
        gamma,
        l,
        lambda,
        kappa,
        times: times.to_vec(),
        dim,
        method: method.label().to_string(),
        n_report,
        deficit_target,
    }
}

fn write_output<F>(out: &Option<PathBuf>, write_fn: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    match out {
        Some(path) => {
            let mut file = File::create(path)?;
            write_fn(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_fn(&mut lock)?;
            lock.flush()?;
        }
    }
    Ok(())
}

fn cmd_evolve(args: EvolveArgs) -> Result<u8, CliError> {
    let state = resolve_state(&args.state)?;
    let times = parse_times(&args.times)?;
    let methods = resolve_methods(args.method, &state)?;
    if !(args.kappa >= 0.0 && args.kappa.is_finite()) {
        return Err(CliError::Invalid(format!(
            "invalid parameter kappa = {}: requires kappa >= 0",
            args.kappa
        )));
    }
    let kt_max = args.kappa * times.last().unwrap();
    let dim = resolve_dim(&args.dim, &state, kt_max, args.deficit_target)?;

    let needs_numeric = methods.iter().any(|m| *m != Method::Analytic);
    let space = FockSpace::new(dim)?;
    let rho0 = if needs_numeric {
        Some(state.build(space, args.deficit_target)?)
    } else {
        None
    };

    let mut results = Vec::with_capacity(times.len() * methods.len());
    for &t in &times {
        for &method in &methods {
            let point = match method {
                Method::Analytic => analytic_point(&state, args.kappa, t, args.n_report)?,
                _ => compute_point(
                    &state,
                    rho0.as_ref().expect("built for numeric methods"),
                    args.kappa,
                    t,
                    method,
                    args.n_report,
                    args.deficit_target,
                )?,
            };
            results.push(TimePointResult {
                t,
                method: method.label().to_string(),
                mean: point.mean,
                trace: point.trace,
                trace_deficit: point.deficit,
                distribution: point.distribution,
            });
        }
    }

    let config = config_echo(
        &args.state,
        &state,
        args.kappa,
        &times,
        dim,
        args.method,
        args.n_report,
        args.deficit_target,
    );
    match args.format {
        FormatArg::Json => {
            let payload = EvolveOutput { config, results };
            write_output(&args.out, |w| {
                write_json(&mut *w, &payload)?;
                writeln!(w)
            })?;
        }
        FormatArg::Csv => {
            write_output(&args.out, |w| write_evolve_csv(w, &results, args.n_report))?;
        }
    }
    Ok(0)
}

fn cmd_mean_curve(args: MeanCurveArgs) -> Result<u8, CliError> {
    let state = resolve_state(&args.state)?;
    let times = parse_times(&args.times)?;
    if times.len() < 2 {
        return Err(CliError::Invalid(
            "mean-curve requires at least 2 time points".into(),
        ));
    }
    let methods = resolve_methods(args.method, &state)?;
    if !(args.kappa >= 0.0 && args.kappa.is_finite()) {
        return Err(CliError::Invalid(format!(
            "invalid parameter kappa = {}: requires kappa >= 0",
            args.kappa
        )));
    }
    let kt_max = args.kappa * times.last().unwrap();
    let dim = resolve_dim(&args.dim, &state, kt_max, args.deficit_target)?;
    let space = FockSpace::new(dim)?;
    let needs_numeric = methods.iter().any(|m| *m != Method::Analytic);
    let rho0 = if needs_numeric {
        Some(state.build(space, args.deficit_target)?)
    } else {
        None
    };

    // rows grouped per time so the cross-method spread is computable
    let with_spread = matches!(args.method, MethodArg::All);
    let mut rows = Vec::with_capacity(times.len() * methods.len());
    for &t in &times {
        let mut means = Vec::with_capacity(methods.len());
        let mut per_method = Vec::with_capacity(methods.len());
        for &method in &methods {
            let point = match method {
                Method::Analytic => analytic_point(&state, args.kappa, t, 0)?,
                _ => compute_point(
                    &state,
                    rho0.as_ref().expect("built for numeric methods"),
                    args.kappa,
                    t,
                    method,
                    0,
                    args.deficit_target,
                )?,
            };
            means.push(point.mean);
            per_method.push((method, point));
        }
        let spread = if with_spread {
            let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = means.iter().copied().fold(f64::INFINITY, f64::min);
            Some(max - min)
        } else {
            None
        };
        for (method, point) in per_method {
            rows.push(CurveRowOut {
                t,
                mean: point.mean,
                trace: point.trace,
                trace_deficit: point.deficit,
                method: method.label().to_string(),
                spread,
            });
        }
    }

    match args.format {
        FormatArg::Csv => {
            write_output(&args.out, |w| write_mean_curve_csv(w, &rows, with_spread))?;
        }
        FormatArg::Json => {
            let config = config_echo(
                &args.state,
                &state,
                args.kappa,
                &times,
                dim,
                args.method,
                0,
                args.deficit_target,
            );
            let payload = CurveOutput {
                config,
                results: rows,
            };
            write_output(&args.out, |w| {
                write_json(&mut *w, &payload)?;
                writeln!(w)
            })?;
        }
    }
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, CliError> {
    let checks = match args.suite {
        SuiteArg::Identities => verify::identities_suite()?,
        SuiteArg::States => verify::states_suite()?,
        SuiteArg::Channel => verify::channel_suite()?,
        SuiteArg::All => verify::all_suites()?,
    };
    let mut passed = 0;
    for check in &checks {
        let status = if check.pass() { "PASS" } else { "FAIL" };
        if check.pass() {
            passed += 1;
        }
        println!(
            "{status} {:<34} residual {:>12.4e}  tol {:>8.1e}  worst: {}",
            check.name, check.residual, check.tolerance, check.worst_case
        );
    }
    println!("{passed}/{} checks passed", checks.len());
    Ok(if passed == checks.len() { 0 } else { 1 })
}
