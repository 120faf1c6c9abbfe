use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use u1qa::check::{default_suite, oracle_check, TOLERANCE};
use u1qa::observables::TimeSeries;
use u1qa::runner::{plan, run, Observable, VERSION, RunManifest};
use u1qa::scaling::{collapse_fit, compare_forms, fit_form, fit_power_law, psapprox, CollapseForm, Curve, Form, Grid, Window};
use u1qa::{Error, Result};

#[derive(Parser)]
#[command(name = "u1qa", version = VERSION, about = "Bit-string Monte Carlo for U(1) hybrid automaton circuits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Second Rényi entropy of the half cut.
    Entropy(RunArgs),
    /// Fraction of pairs whose species have not met.
    Pfrac(RunArgs),
    /// Mean displacement of the rightmost X particle.
    Displacement(RunArgs),
    /// Particle density of the difference field.
    Density(RunArgs),
    /// Connected spin correlation from a single string.
    Correlation(RunArgs),
    /// Decay of the B-restricted phase fidelity.
    Qdecay(RunArgs),
    /// Compare exhaustive phase sums with exact purities at small L.
    OracleCheck(OracleArgs),
    /// Fit scaling forms to CSV series.
    Fit(FitArgs),
    /// Exact and approximate ln-binomial difference.
    Psapprox {
        #[arg(long)]
        l: u64,
        #[arg(long)]
        dl: u64,
        #[arg(long)]
        nu: f64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    /// Replaces the master seed of the manifest.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value_t = 5)]
    realizations: usize,
    #[arg(long, default_value_t = 30)]
    t_max: usize,
    /// Largest L for the mixed ensemble.
    #[arg(long, default_value_t = 10)]
    mixed_l: usize,
    /// L for the half-filled sector.
    #[arg(long, default_value_t = 12)]
    fixed_l: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    SqrtTlnt,
    SqrtT,
    Linear,
    LnT,
    Compare,
    PowerLaw,
    Collapse,
}

#[derive(Clone, Copy, ValueEnum)]
enum CollapseArg {
    Density,
    Spatial,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    form: FitKind,
    #[arg(long)]
    t_min: Option<f64>,
    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    through_origin: bool,
    #[arg(long, value_enum, default_value = "density")]
    collapse: CollapseArg,
    /// `min:max:step` grid for the collapse exponent α.
    #[arg(long, default_value = "0.1:0.5:0.01")]
    alpha: String,
    /// `min:max:step` grid for the dynamic exponent z.
    #[arg(long, default_value = "1.4:3.0:0.05")]
    z: String,
    /// Curve labels for the collapse; default is each file's L.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<f64>,
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

fn parse_grid(s: &str, field: &str) -> Result<Grid> {
    let v: Vec<f64> = s
        .split(':')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::config(field, format!("{s:?}: {e}")))?;
    match v[..] {
        [min, max, step] if step > 0.0 && max >= min => Ok(Grid::new(min, max, step)),
        _ => Err(Error::config(field, format!("expected min:max:step, got {s:?}"))),
    }
}

fn window_for(series: &TimeSeries, args: &FitArgs) -> Window {
    let d = Window::default_for(series);
    Window::new(args.t_min.unwrap_or(d.t_min), args.t_max.unwrap_or(d.t_max))
}

fn system_size(series: &TimeSeries) -> Option<f64> {
    series.meta.config.as_ref()?.pointer("/spec/part/l")?.as_f64()
}

fn cmd_fit(args: &FitArgs) -> Result<serde_json::Value> {
    let series: Vec<(String, TimeSeries)> = args
        .files
        .iter()
        .map(|p| Ok((p.display().to_string(), TimeSeries::read_csv(p)?)))
        .collect::<Result<_>>()?;
    if let FitKind::Collapse = args.form {
        if !args.labels.is_empty() && args.labels.len() != series.len() {
            return Err(Error::config("labels", "need one label per file"));
        }
        let curves = series
            .iter()
            .enumerate()
            .map(|(i, (name, s))| {
                let label = match args.labels.get(i) {
                    Some(&x) => x,
                    None => system_size(s).ok_or_else(|| Error::config("labels", format!("{name} records no L")))?,
                };
                let w = Window::new(args.t_min.unwrap_or(1.0), args.t_max.unwrap_or(f64::INFINITY));
                Ok(Curve::from_series(label, s, w))
            })
            .collect::<Result<Vec<_>>>()?;
        let form = match args.collapse {
            CollapseArg::Density => CollapseForm::Density,
            CollapseArg::Spatial => CollapseForm::Spatial,
        };
        let mut r = collapse_fit(&curves, form, parse_grid(&args.alpha, "alpha")?, parse_grid(&args.z, "z")?)?;
        r.landscape.clear();
        return Ok(serde_json::to_value(r).expect("collapse result serializes"));
    }
    let mut out = serde_json::Map::new();
    for (name, s) in &series {
        let w = window_for(s, args);
        let v = match args.form {
            FitKind::SqrtTlnt => json!(fit_form(s, w, Form::SqrtTLnT, args.through_origin)?),
            FitKind::SqrtT => json!(fit_form(s, w, Form::SqrtT, args.through_origin)?),
            FitKind::Linear => json!(fit_form(s, w, Form::Linear, args.through_origin)?),
            FitKind::LnT => json!(fit_form(s, w, Form::LnT, args.through_origin)?),
            FitKind::Compare => json!(compare_forms(s, w)?),
            FitKind::PowerLaw => json!(fit_power_law(s, w)?),
            FitKind::Collapse => unreachable!(),
        };
        out.insert(name.clone(), v);
    }
    Ok(serde_json::Value::Object(out))
}

fn cmd_run(observable: Observable, args: &RunArgs) -> Result<i32> {
    let mut manifest = RunManifest::load(&args.manifest)?;
    if let Some(seed) = args.seed {
        manifest.experiment.seed = seed;
    }
    let points = plan(&manifest, observable)?;
    let workers = args
        .workers
        .or(manifest.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out = args
        .out
        .clone()
        .or_else(|| manifest.out.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    eprintln!("{}: {} sweep point(s), {} worker(s)", manifest.name, points.len(), workers);
    let report = run(&manifest, observable, &out, workers)?;
    for p in &report.points {
        match &p.error {
            None => eprintln!("  {} ok ({:.2} s)", p.label, p.seconds),
            Some(e) => eprintln!("  {} FAILED: {e}", p.label),
        }
        for w in &p.warnings {
            eprintln!("  {} warning: {w}", p.label);
        }
    }
    eprintln!("wrote {} ({:.2} s)", out.display(), report.seconds);
    Ok(report.exit_code())
}

fn cmd_oracle(args: &OracleArgs) -> Result<i32> {
    let cases = default_suite(args.mixed_l, args.fixed_l);
    let report = match args.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::config("workers", e.to_string()))?
            .install(|| oracle_check(&cases, args.realizations, args.t_max, args.seed))?,
        None => oracle_check(&cases, args.realizations, args.t_max, args.seed)?,
    };
    for c in &report.cases {
        println!(
            "{:<13} L={:<3} {:<10} p_u={} p={:<4} max deviation {:.3e}",
            c.case.model, c.case.l, c.case.sector, c.case.p_u, c.case.p, c.max_deviation
        );
    }
    println!("max deviation: {:.3e}", report.max_deviation);
    Ok(if report.passed(TOLERANCE) { 0 } else { 1 })
}

fn dispatch(cli: Cli) -> Result<i32> {
    let observable = |c: &Command| match c {
        Command::Entropy(_) => Some(Observable::Entropy),
        Command::Pfrac(_) => Some(Observable::Pfrac),
        Command::Displacement(_) => Some(Observable::Displacement),
        Command::Density(_) => Some(Observable::Density),
        Command::Correlation(_) => Some(Observable::Correlation),
        Command::Qdecay(_) => Some(Observable::Qdecay),
        _ => None,
    };
    let obs = observable(&cli.command);
    match cli.command {
        Command::Entropy(a)
        | Command::Pfrac(a)
        | Command::Displacement(a)
        | Command::Density(a)
        | Command::Correlation(a)
        | Command::Qdecay(a) => cmd_run(obs.expect("run subcommand"), &a),
        Command::OracleCheck(a) => cmd_oracle(&a),
        Command::Fit(a) => {
            println!("{}", serde_json::to_string_pretty(&cmd_fit(&a)?).expect("json"));
            Ok(0)
        }
        Command::Psapprox { l, dl, nu } => {
            let (exact, approx) = psapprox(l, dl, nu)?;
            println!("{}", json!({ "l": l, "dl": dl, "nu": nu, "exact": exact, "approx": approx }));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
