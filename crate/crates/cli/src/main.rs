use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use fobs_core::cstr;
use fobs_core::io::{
    write_trajectory_csv, CsvOffsets, DesignReport, LoadedSystem, SampleInfo, SystemSpecFile,
};
use fobs_core::linear_design::{design, DesignOptions, DesignOutcome, LinearTransformation};
use fobs_core::model::observability_index;
use fobs_core::nonlinear_design::{
    build_t_nonlinear, check_condition, fit_beta, verify_design_conditions, DEFAULT_SAMPLE_COUNT,
};
use fobs_core::runtime::{error_analysis, simulate};
use fobs_core::spectrum::{parse_eigenvalues, poly_from_eigenvalues};
use fobs_core::{BetaCoefficients, CharPoly, SampleSet, SystemModel, Transformation};
use nalgebra::DVector;

const DEFAULT_SEED: u64 = 0;

#[derive(Parser)]
#[command(
    name = "fobs",
    version,
    about = "Functional observers for discrete-time systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design a linear functional observer for a prescribed spectrum.
    DesignLinear {
        #[arg(long)]
        system: PathBuf,
        /// Comma-separated, e.g. "0.5,0.2+0.3i,0.2-0.3i".
        #[arg(long, allow_hyphen_values = true)]
        eigenvalues: String,
        #[arg(long)]
        order: usize,
        /// Use only the output rows H F^i with i < v.
        #[arg(long)]
        strict_span: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the existence condition for a nonlinear plant on sampled states.
    #[command(group(ArgGroup::new("source").required(true).args(["beta", "fit"])))]
    VerifyNonlinear {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        eigenvalues: String,
        #[arg(long)]
        order: usize,
        /// JSON file with a "beta" array of rows.
        #[arg(long)]
        beta: Option<PathBuf>,
        /// Fit β by least squares instead.
        #[arg(long)]
        fit: bool,
        #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
        samples: usize,
        /// Defaults to FOBS_SEED, then 0.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run plant and observer together and write the trajectory as CSV.
    #[command(group(ArgGroup::new("start").required(true).args(["xi0", "consistent", "init_error"])))]
    Simulate {
        #[arg(long)]
        system: PathBuf,
        /// Design report holding A, B, C, D.
        #[arg(long)]
        observer: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, allow_hyphen_values = true)]
        xi0: Option<String>,
        /// Start on the invariant manifold, ξ(0) = T(x(0)).
        #[arg(long)]
        consistent: bool,
        /// ξ(0) = T(x(0)) + e in every component.
        #[arg(long, allow_hyphen_values = true)]
        init_error: Option<f64>,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reactor case study in absolute units.
    Cstr {
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        init_error: f64,
        #[arg(long, default_value_t = cstr::DEFAULT_HORIZON)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the observability index of a linear system.
    ObsIndex {
        #[arg(long)]
        system: PathBuf,
    },
}

enum Outcome {
    Success,
    Infeasible,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::DesignLinear {
            system,
            eigenvalues,
            order,
            strict_span,
            out,
        } => design_linear(&system, &eigenvalues, order, strict_span, &out),
        Command::VerifyNonlinear {
            system,
            eigenvalues,
            order,
            beta,
            fit,
            samples,
            seed,
            out,
        } => {
            let seed = match seed {
                Some(s) => s,
                None => env_seed()?,
            };
            verify_nonlinear(
                &system,
                &eigenvalues,
                order,
                beta.as_deref(),
                fit,
                samples,
                seed,
                &out,
            )
        }
        Command::Simulate {
            system,
            observer,
            x0,
            xi0,
            consistent: _,
            init_error,
            steps,
            out,
        } => run_simulation(
            &system,
            &observer,
            &x0,
            xi0.as_deref(),
            init_error,
            steps,
            &out,
        ),
        Command::Cstr {
            init_error,
            steps,
            out,
        } => run_cstr(init_error, steps, &out),
        Command::ObsIndex { system } => {
            let sys = load_linear(&system)?;
            match observability_index(&sys) {
                Some(v) => println!("{v}"),
                None => println!("unobservable"),
            }
            Ok(Outcome::Success)
        }
    }
}

fn env_seed() -> Result<u64> {
    match std::env::var("FOBS_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .with_context(|| format!("FOBS_SEED must be an unsigned integer, got {s:?}")),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn read_spec(path: &Path) -> Result<SystemSpecFile> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    SystemSpecFile::from_json(&text).with_context(|| format!("in {}", path.display()))
}

fn load(path: &Path) -> Result<(SystemSpecFile, LoadedSystem)> {
    let spec = read_spec(path)?;
    let loaded = spec
        .load()
        .with_context(|| format!("in {}", path.display()))?;
    Ok((spec, loaded))
}

fn load_linear(path: &Path) -> Result<fobs_core::LinearSystem> {
    match load(path)?.1 {
        LoadedSystem::Linear(sys) => Ok(sys),
        LoadedSystem::Nonlinear(_) => bail!(
            "{} describes a nonlinear system; expected kind \"linear\"",
            path.display()
        ),
    }
}

fn poly_for(eigenvalues: &str, order: usize) -> Result<CharPoly> {
    let roots = parse_eigenvalues(eigenvalues).context("--eigenvalues")?;
    if roots.len() != order {
        bail!(
            "--order is {order} but {} eigenvalues were given",
            roots.len()
        );
    }
    Ok(poly_from_eigenvalues(&roots)?)
}

fn write_report(path: &Path, report: &DesignReport) -> Result<()> {
    fs::write(path, report.to_json() + "\n").with_context(|| format!("writing {}", path.display()))
}

fn design_linear(
    system: &Path,
    eigenvalues: &str,
    order: usize,
    strict_span: bool,
    out: &Path,
) -> Result<Outcome> {
    let spec = read_spec(system)?;
    let sys = load_linear(system)?;
    let cp = poly_for(eigenvalues, order)?;
    let opts = DesignOptions {
        strict_span,
        ..DesignOptions::default()
    };
    let name = spec.name().map(String::from);
    let report = match design(&sys, &cp, &opts)? {
        DesignOutcome::Feasible(d) => DesignReport::linear_feasible(&sys, &d, strict_span, name),
        DesignOutcome::Infeasible { residual } => {
            DesignReport::linear_infeasible(&sys, &cp, residual, strict_span, name)
        }
    };
    write_report(out, &report)?;
    for d in &report.diagnostics {
        eprintln!("note: {d}");
    }
    Ok(if report.feasible {
        Outcome::Success
    } else {
        Outcome::Infeasible
    })
}

fn read_beta(path: &Path) -> Result<BetaCoefficients> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("in {}", path.display()))?;
    let rows: Vec<Vec<f64>> = serde_json::from_value(
        value
            .get("beta")
            .cloned()
            .ok_or_else(|| anyhow!("{} has no \"beta\" field", path.display()))?,
    )
    .with_context(|| format!("\"beta\" in {}", path.display()))?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(BetaCoefficients::from_rows(&refs)?)
}

#[allow(clippy::too_many_arguments)]
fn verify_nonlinear(
    system: &Path,
    eigenvalues: &str,
    order: usize,
    beta: Option<&Path>,
    fit: bool,
    samples: usize,
    seed: u64,
    out: &Path,
) -> Result<Outcome> {
    let (spec, loaded) = load(system)?;
    let es = match loaded {
        LoadedSystem::Nonlinear(es) => es,
        LoadedSystem::Linear(_) => bail!(
            "{} describes a linear system; use design-linear",
            system.display()
        ),
    };
    let cp = poly_for(eigenvalues, order)?;
    let sys = &es.system;
    let set = SampleSet::uniform(sys.domain(), samples, seed)?;
    let (beta, fit_report) = if fit {
        let train = SampleSet::uniform(sys.domain(), samples, seed.wrapping_add(1))?;
        let report = fit_beta(sys, &cp, &train, &set)?;
        (report.beta.clone(), Some(report))
    } else {
        let beta = read_beta(beta.expect("clap enforces --beta or --fit"))?;
        if beta.order() != order || beta.width() != sys.output_dim() {
            bail!(
                "beta has {} rows of width {}; expected {} rows of width {}",
                beta.order() + 1,
                beta.width(),
                order + 1,
                sys.output_dim()
            );
        }
        (beta, None)
    };
    let condition = check_condition(sys, &cp, &beta, &set)?;
    let observer = fobs_core::linear_design::realize_observer(&cp, &beta)?;
    let t = build_t_nonlinear(sys, &cp, &beta)?;
    let dc = verify_design_conditions(sys, &observer, &t, &set)?;
    let report = DesignReport::nonlinear(
        &spec,
        &es,
        &cp,
        &beta,
        &condition,
        Some((&observer, &dc)),
        fit_report.as_ref(),
        SampleInfo {
            count: samples,
            seed,
        },
    );
    write_report(out, &report)?;
    for d in &report.diagnostics {
        eprintln!("note: {d}");
    }
    Ok(if report.feasible {
        Outcome::Success
    } else {
        Outcome::Infeasible
    })
}

fn parse_vector(text: &str, what: &str) -> Result<DVector<f64>> {
    let values = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .with_context(|| format!("{what}: cannot parse {s:?}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

fn run_simulation(
    system: &Path,
    observer: &Path,
    x0: &str,
    xi0: Option<&str>,
    init_error: Option<f64>,
    steps: usize,
    out: &Path,
) -> Result<Outcome> {
    let (_, loaded) = load(system)?;
    let text =
        fs::read_to_string(observer).with_context(|| format!("reading {}", observer.display()))?;
    let report =
        DesignReport::from_json(&text).with_context(|| format!("in {}", observer.display()))?;
    let obs = report
        .observer()
        .with_context(|| format!("in {}", observer.display()))?;
    let x0 = parse_vector(x0, "--x0")?;

    let linear_t;
    let nonlinear_t;
    let (sys, t): (&dyn SystemModel, &dyn Transformation) = match &loaded {
        LoadedSystem::Linear(sys) => {
            let cp = report.poly()?;
            let beta = report.beta_coefficients()?;
            linear_t = fobs_core::linear_design::build_t(sys, &cp, &beta)?;
            (sys, &linear_t as &LinearTransformation)
        }
        LoadedSystem::Nonlinear(es) => {
            nonlinear_t =
                build_t_nonlinear(&es.system, &report.poly()?, &report.beta_coefficients()?)?;
            (&es.system, &nonlinear_t)
        }
    };
    if x0.len() != sys.state_dim() {
        bail!(
            "--x0 has {} entries but the system has n = {}",
            x0.len(),
            sys.state_dim()
        );
    }
    let xi0 = match (xi0, init_error) {
        (Some(text), _) => parse_vector(text, "--xi0")?,
        (None, Some(e)) => t.eval(&x0)?.add_scalar(e),
        (None, None) => t.eval(&x0)?,
    };
    let traj = simulate(sys, &obs, &x0, &xi0, steps)?;
    let analysis = error_analysis(&traj, t, &obs)?;
    write_csv(out, &traj, &analysis, &CsvOffsets::default())?;
    if let Some(k) = traj.failed_at {
        eprintln!("note: simulation stopped at step {k}: non-finite value");
    }
    Ok(Outcome::Success)
}

fn write_csv(
    out: &Path,
    traj: &fobs_core::runtime::Trajectory,
    analysis: &fobs_core::runtime::ErrorAnalysis,
    offsets: &CsvOffsets,
) -> Result<()> {
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_trajectory_csv(std::io::BufWriter::new(file), traj, analysis, offsets)
        .with_context(|| format!("writing {}", out.display()))
}

fn run_cstr(init_error: f64, steps: usize, out: &Path) -> Result<Outcome> {
    let case = cstr::run_case_study(init_error, steps)?;
    let r = case.reference.to_vector();
    let offsets = CsvOffsets {
        output: Some(DVector::from_vec(vec![r[2], r[3]])),
        state: Some(r),
        z: case.z_offset,
    };
    write_csv(out, &case.trajectory, &case.analysis, &offsets)?;
    for d in &case.diagnostics {
        eprintln!("note: {d}");
    }
    Ok(Outcome::Success)
}
