#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod dataset;
mod pipeline;

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nvspin::clock::{self, ClockConfig};
use nvspin::identity::{cohort_report, CenterRecord, CohortConfig, PullMode};
use nvspin::inversion::{estimate, MeasuredSet, ParamEstimate, ParamModel};
use nvspin::perturbation::{validation_sweep, SweepGrid, DEVIATION_TOL_HZ};
use nvspin::ramsey::{self, RamseyConfig, RamseyTrace};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dataset::DatasetFile;

/// Error carrying the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments (exit 1).
    Usage(String),
    /// Invalid input data or a failed validation (exit 2).
    Validation(String),
    /// A fit or inversion that did not succeed (exit 3).
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<nvspin::Error> for Failure {
    fn from(e: nvspin::Error) -> Self {
        use nvspin::Error as E;
        match e {
            E::InvalidInput(_) | E::InvalidParams(_) | E::DimensionMismatch { .. } => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "nvspin",
    version,
    about = "NV centre / 14N spectroscopy modelling and parameter estimation",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare closed-form nuclear frequencies with exact diagonalisation over a grid.
    Validate(ValidateArgs),
    /// Simulate a shot-noise Ramsey trace.
    Simulate(SimulateArgs),
    /// Fit a Ramsey trace.
    Fit(FitArgs),
    /// Recover Hamiltonian parameters from measured frequency sets.
    Invert(InvertArgs),
    /// Cross-centre identity statistics.
    Identity(IdentityArgs),
    /// Clock instability and ensemble sizing.
    Clock(ClockArgs),
    /// Run traces through fits, inversion and the identity report.
    Pipeline(PipelineArgs),
    /// Write the synthetic seven-centre dataset.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct ValidateArgs {
    /// Field range in gauss as START:STOP:STEP.
    #[arg(long, default_value = "400:600:25")]
    fields: String,
    /// Misalignment angles in degrees.
    #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1")]
    angles: Vec<f64>,
    /// Transverse strain values in Hz, applied to all four couplings.
    #[arg(long, value_delimiter = ',', default_value = "0,500000,1000000")]
    strains: Vec<f64>,
    /// Use only the electron gap in the denominators.
    #[arg(long)]
    drop_small_denominators: bool,
    #[arg(long, default_value_t = DEVIATION_TOL_HZ)]
    tolerance: f64,
    #[arg(long, default_value = "validation.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON Ramsey configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    detuning: Option<f64>,
    #[arg(long = "t2-star")]
    t2_star: Option<f64>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Drive frequency magnitude in Hz; prints the absolute line frequency.
    #[arg(long)]
    rf_drive: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    #[value(name = "4")]
    Four,
    #[value(name = "5")]
    Five,
}

impl From<ModelArg> for ParamModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Four => ParamModel::FourParam,
            ModelArg::Five => ParamModel::FiveParam,
        }
    }
}

#[derive(Args)]
struct InvertArgs {
    /// A measured set or an array of them (JSON).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "4")]
    model: ModelArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PullArg {
    Loo,
    Inclusive,
}

#[derive(Args)]
struct IdentityArgs {
    /// JSON array of tagged estimates.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "loo")]
    pulls: PullArg,
    #[arg(long, default_value = nvspin::identity::REFERENCE_COHORT)]
    reference_cohort: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ClockArgs {
    /// JSON clock configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N", default_value_t = 1.0)]
    n: f64,
    /// Averaging time in seconds.
    #[arg(long = "T", default_value_t = 1.0)]
    t: f64,
    #[arg(long)]
    fidelity: Option<f64>,
    /// Print the ensemble size reaching this instability.
    #[arg(long)]
    target: Option<f64>,
    /// Print the ensemble size at this density (ppb) in the configured volume.
    #[arg(long)]
    ppb: Option<f64>,
    /// Write the instability curve to this CSV.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    n_min: f64,
    #[arg(long, default_value_t = 1e16)]
    n_max: f64,
    #[arg(long, default_value_t = 33)]
    points: usize,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "4")]
    model: ModelArg,
    /// Seeds traces the dataset asks to simulate.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add shot noise to the traces and microwave lines.
    #[arg(long)]
    noisy: bool,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Failure::Validation(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Validation(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn parse_range(s: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::Usage(format!("malformed range '{s}', expected START:STOP:STEP"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=count).map(|k| start + step * k as f64).collect())
}

fn cmd_validate(a: ValidateArgs) -> Outcome {
    let fields = parse_range(&a.fields)?;
    if a.angles.is_empty() || a.strains.is_empty() || !(a.tolerance > 0.0) {
        return Err(Failure::Usage(
            "angles, strains and a positive tolerance are required".into(),
        ));
    }
    let grid = SweepGrid {
        fields_gauss: fields,
        misalignments_deg: a.angles,
        strains_hz: a.strains,
        keep_small_denominators: !a.drop_small_denominators,
        tolerance_hz: a.tolerance,
    };
    let report = validation_sweep(&grid);
    write_text(&a.out, &report.to_csv())?;
    let violations = report.in_domain_violations();
    println!(
        "max in-domain deviation: {:.6} Hz ({} of {} rows above {} Hz)",
        report.max_in_domain_deviation(),
        violations,
        report.rows.len(),
        a.tolerance
    );
    println!("report: {}", a.out.display());
    if violations > 0 {
        return Err(Failure::Validation(format!(
            "{violations} in-domain rows exceed the tolerance"
        )));
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => read_json::<RamseyConfig>(p)?,
        None => RamseyConfig::paper_scale(a.seed),
    };
    cfg.rng_seed = a.seed;
    if let Some(d) = a.detuning {
        cfg.true_detuning = d;
    }
    if let Some(t) = a.t2_star {
        cfg.t2_star = t;
    }
    if let Some(s) = a.shots {
        cfg.shots_per_point = s;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let trace = ramsey::simulate(&cfg)?;
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    write_text(&a.out, &String::from_utf8_lossy(&buf))?;
    println!("trace: {} ({} points)", a.out.display(), trace.len());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> Outcome {
    let file = File::open(&a.trace)
        .map_err(|e| Failure::Validation(format!("{}: {e}", a.trace.display())))?;
    let trace = RamseyTrace::read_csv(file)?;
    let fit = ramsey::fit(&trace, None)?;
    println!(
        "detuning: {:.4} +/- {:.4} Hz",
        fit.detuning, fit.detuning_sigma
    );
    println!(
        "T2*: {:.6} s, reduced chi2: {:.3}",
        fit.t2_star.value, fit.chi2_reduced
    );
    if let Some(rf) = a.rf_drive {
        let (f, s) = ramsey::absolute_frequency(rf.abs(), &fit)?;
        println!("line: {f:.4} +/- {s:.4} Hz");
    }
    if let Some(out) = &a.out {
        write_json(out, &fit)?;
    }
    Ok(())
}

fn cmd_invert(a: InvertArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| Failure::Validation(format!("{}: {e}", a.input.display())))?;
    let sets: Vec<MeasuredSet> = serde_json::from_str::<Vec<MeasuredSet>>(&text)
        .or_else(|_| serde_json::from_str::<MeasuredSet>(&text).map(|s| vec![s]))
        .map_err(|e| Failure::Validation(format!("{}: {e}", a.input.display())))?;
    for s in &sets {
        s.validate()?;
    }
    let model = ParamModel::from(a.model);
    let estimates = sets
        .iter()
        .map(|s| estimate(s, model).map_err(Failure::from))
        .collect::<Result<Vec<ParamEstimate>, _>>()?;
    for e in &estimates {
        let sd = |n: &str| e.sigma(n).unwrap_or(f64::NAN);
        println!(
            "{}: P = {:.2}({:.2}) A_par = {:.2}({:.2}) A_perp = {:.0}({:.0}) Hz, residual {:.3} Hz",
            e.center_id,
            e.p,
            sd("P"),
            e.a_par,
            sd("a_par"),
            e.a_perp,
            sd("a_perp"),
            e.weighted_residual
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &estimates)?;
    }
    Ok(())
}

fn cmd_identity(a: IdentityArgs) -> Outcome {
    let records: Vec<CenterRecord> = read_json(&a.input)?;
    if !(a.threshold > 0.0) {
        return Err(Failure::Usage("threshold must be positive".into()));
    }
    let mut cfg = CohortConfig {
        reference_cohort: a.reference_cohort,
        ..CohortConfig::default()
    };
    cfg.consistency.threshold_sigmas = a.threshold;
    cfg.consistency.mode = match a.pulls {
        PullArg::Loo => PullMode::LeaveOneOut,
        PullArg::Inclusive => PullMode::Inclusive,
    };
    let report = cohort_report(&records, &cfg)?;
    for p in &report.parameters {
        let outliers: Vec<&str> = p
            .pulls
            .iter()
            .filter(|c| !c.consistent)
            .map(|c| c.center_id.as_str())
            .collect();
        println!(
            "{}: {:.4} +/- {:.4}, chi2 {:.2}/{}, outside {}σ: [{}]",
            p.parameter,
            p.mean,
            p.sigma,
            p.chi2,
            p.dof,
            p.threshold_sigmas,
            outliers.join(", ")
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    Ok(())
}

fn cmd_clock(a: ClockArgs) -> Outcome {
    let mut cfg = match &a.config {
        Some(p) => read_json::<ClockConfig>(p)?,
        None => ClockConfig::default(),
    };
    if let Some(f) = a.fidelity {
        cfg.fidelity = f;
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let v = clock::instability(&cfg, a.n, a.t).map_err(|e| Failure::Usage(e.to_string()))?;
    println!("instability: {v:.4e} (N = {:e}, T = {} s)", a.n, a.t);
    if let Some(target) = a.target {
        let n = clock::required_n(&cfg, target, a.t).map_err(|e| Failure::Usage(e.to_string()))?;
        println!("required N for {target:e}: {n}");
    }
    if let Some(ppb) = a.ppb {
        if !(ppb >= 0.0) {
            return Err(Failure::Usage("ppb must be non-negative".into()));
        }
        println!(
            "centres at {ppb} ppb in {} mm^3: {:.4e}",
            cfg.volume_mm3,
            cfg.count_at_density(ppb)
        );
    }
    if let Some(path) = &a.curve {
        let rows = clock::emit_curve(&cfg, a.n_min, a.n_max, a.points)
            .map_err(|e| Failure::Usage(e.to_string()))?;
        write_text(path, &clock::default_curve_csv(&rows))?;
        println!("curve: {}", path.display());
    }
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs) -> Outcome {
    let ds = DatasetFile::load(&a.dataset)?;
    let base = a.dataset.parent().unwrap_or(Path::new("."));
    let bundle = pipeline::run(&ds, base, a.model.into(), a.seed, a.jobs)?;
    write_json(&a.out_dir.join("results.json"), &bundle)?;
    write_text(&a.out_dir.join("cohort.csv"), &bundle.cohort.to_csv())?;
    write_text(
        &a.out_dir.join("frequencies.csv"),
        &pipeline::frequencies_csv(&bundle),
    )?;
    for p in &bundle.cohort.parameters {
        let outliers: Vec<&str> = p
            .pulls
            .iter()
            .filter(|c| !c.consistent)
            .map(|c| c.center_id.as_str())
            .collect();
        println!(
            "{}: {:.4} +/- {:.4} over {} centres, outside {}σ: [{}]",
            p.parameter,
            p.mean,
            p.sigma,
            p.dof + 1,
            p.threshold_sigmas,
            outliers.join(", ")
        );
    }
    println!("results: {}", a.out_dir.join("results.json").display());
    Ok(())
}

fn cmd_fixture(a: FixtureArgs) -> Outcome {
    let path = pipeline::write_fixture(&a.out_dir, a.seed, a.noisy)?;
    println!("dataset: {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Invert(a) => cmd_invert(a),
        Command::Identity(a) => cmd_identity(a),
        Command::Clock(a) => cmd_clock(a),
        Command::Pipeline(a) => cmd_pipeline(a),
        Command::Fixture(a) => cmd_fixture(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
