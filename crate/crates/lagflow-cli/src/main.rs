//! Command-line harness: runs the benchmark experiments, ad-hoc solves,
//! stability analyses and derivative validation, writing JSON summaries and
//! optional CSV trajectories.
//!
//! Exit codes: 0 on success, 1 when an experiment misses its expected
//! outcome or a validation fails, 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use lagflow::bench::{self, quadratic::SweepConfig, ExperimentName, Trajectory};
use lagflow::problem::{JointState, QuadraticProblem};
use lagflow::{
    integrate, lti_closed_loop, validate_problem, zero_dynamics_check, Controller, GainConfig,
    IntegratorConfig, Method, SolveReport,
};

#[derive(Parser)]
#[command(name = "lagflow", version, about = "Constrained optimization by feedback control of Lagrange multipliers")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run one of the built-in experiments.
    Run(RunArgs),
    /// Solve an ad-hoc or preset quadratic program with a chosen controller.
    Solve(SolveArgs),
    /// Closed-loop eigenvalues and zero-dynamics reports on preset problems.
    Analyze(AnalyzeArgs),
    /// Finite-difference derivative checks on the built-in problems.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// quadratic-sweep | shidoku | sysid | chemical
    experiment: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of runs (defaults to the experiment's standard count).
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory (default ./out/<experiment>-<seed>/).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-run trajectory CSV files.
    #[arg(long)]
    csv: bool,
    /// Print the JSON summary to stdout as well.
    #[arg(long)]
    json: bool,
    /// Measurement noise level for the sysid experiment.
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerArg {
    Pdgd,
    Pi,
    Fl,
}

impl From<ControllerArg> for Controller {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Pdgd => Controller::Pdgd,
            ControllerArg::Pi => Controller::Pi,
            ControllerArg::Fl => Controller::Fl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// min (w/2) x^2 s.t. x = 0
    Scalar,
    /// min (1/2) x^T diag(1,-1) x s.t. 2 x2 = 0
    Indefinite,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    controller: ControllerArg,
    #[arg(long, default_value_t = 1.0)]
    kp: f64,
    #[arg(long, default_value_t = 1.0)]
    ki: f64,
    /// Uniform outer-loop gain for the FL controller.
    #[arg(long, default_value_t = 1.0)]
    fl_gain: f64,
    /// Gram regularization for the FL controller.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    /// Scalar-preset curvature.
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Euler)]
    method: MethodArg,
    /// Step size; defaults to the stability-based suggestion when available.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    tmax: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the trajectory (with full state columns) as CSV.
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 1.0)]
    w: f64,
    #[arg(long, default_value_t = 2.0)]
    kp: f64,
    #[arg(long, default_value_t = 1.0)]
    ki: f64,
    /// Also report the zero-dynamics check at the preset's stationary point.
    #[arg(long)]
    zero_dynamics: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ValidateArgs {
    /// quadratic | shidoku | sysid | chemical
    #[arg(long)]
    problem: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("LAGFLOW_THREADS") {
        if let Ok(k) = threads.trim().parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
        } else {
            eprintln!("LAGFLOW_THREADS must be a positive integer, got {threads:?}");
            return ExitCode::from(2);
        }
    }

    let cli = Cli::parse();
    let outcome = match cli.command {
        Commands::Run(a) => cmd_run(a),
        Commands::Solve(a) => cmd_solve(a),
        Commands::Analyze(a) => cmd_analyze(a),
        Commands::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(requested: &Option<PathBuf>, experiment: &str, seed: u64) -> PathBuf {
    requested
        .clone()
        .unwrap_or_else(|| PathBuf::from("out").join(format!("{experiment}-{seed}")))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, echo: bool) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    fs::write(&path, &text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    if echo {
        println!("{text}");
    } else {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<(), String> {
    let mut f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut s = String::from("t,f,hinf,xdotinf\n");
    for k in 0..traj.t.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            traj.t[k], traj.f[k], traj.hinf[k], traj.xdot_inf[k]
        ));
    }
    f.write_all(s.as_bytes()).map_err(|e| e.to_string())
}

fn write_full_csv(path: &Path, rep: &SolveReport) -> Result<(), String> {
    let mut f = fs::File::create(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let (n, m) = match rep.state_history.first() {
        Some(s) => (s.x.len(), s.lambda.len()),
        None => (0, 0),
    };
    let mut header = String::from("t,f,hinf,xdotinf");
    for i in 0..n {
        header.push_str(&format!(",x{i}"));
    }
    for i in 0..m {
        header.push_str(&format!(",l{i}"));
    }
    header.push('\n');
    let mut s = header;
    for k in 0..rep.t_history.len() {
        s.push_str(&format!(
            "{},{},{},{}",
            rep.t_history[k], rep.f_history[k], rep.hinf_history[k], rep.xdot_inf_history[k]
        ));
        if let Some(z) = rep.state_history.get(k) {
            for v in z.x.iter() {
                s.push_str(&format!(",{v}"));
            }
            for v in z.lambda.iter() {
                s.push_str(&format!(",{v}"));
            }
        }
        s.push('\n');
    }
    f.write_all(s.as_bytes()).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RunSummary<R: Serialize> {
    experiment: String,
    seed: u64,
    runs: usize,
    gains: Option<GainConfig>,
    integrator: Option<IntegratorConfig>,
    passed: bool,
    report: R,
}

fn cmd_run(a: RunArgs) -> Result<ExitCode, String> {
    let name = ExperimentName::parse(&a.experiment)
        .ok_or_else(|| format!("unknown experiment {:?} (expected quadratic-sweep | shidoku | sysid | chemical)", a.experiment))?;
    let dir = out_dir(&a.out, name.as_str(), a.seed);

    let passed = match name {
        ExperimentName::QuadraticSweep => {
            let cfg = SweepConfig {
                seed: a.seed,
                runs: a.runs.unwrap_or(400),
                ..Default::default()
            };
            let report = bench::quadratic_sweep(&cfg);
            let passed = report.passed();
            let summary = RunSummary {
                experiment: a.experiment.clone(),
                seed: a.seed,
                runs: cfg.runs,
                gains: None,
                integrator: None,
                passed,
                report,
            };
            write_json(&dir, "summary.json", &summary, a.json)?;
            passed
        }
        ExperimentName::Shidoku => {
            let runs = a.runs.unwrap_or(20);
            let report = bench::run_shidoku(runs, a.seed, None, None, a.csv);
            let passed = report.passed();
            if a.csv {
                fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                for (i, run) in report.per_run.iter().enumerate() {
                    if let Some(t) = &run.trajectory {
                        write_trajectory_csv(&dir.join(format!("run-{i:03}.csv")), t)?;
                    }
                }
            }
            let summary = RunSummary {
                experiment: a.experiment.clone(),
                seed: a.seed,
                runs,
                gains: Some(bench::shidoku::default_shidoku_gains()),
                integrator: Some(bench::shidoku::default_shidoku_integrator()),
                passed,
                report,
            };
            write_json(&dir, "summary.json", &summary, a.json)?;
            passed
        }
        ExperimentName::GrayBoxSysId => {
            let runs = a.runs.unwrap_or(1);
            let reports: Vec<_> = (0..runs)
                .map(|r| bench::run_sysid(a.seed.wrapping_add(r as u64), a.noise_std, a.csv))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let passed = reports.iter().all(|r| r.passed());
            if a.csv {
                fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                for (i, rep) in reports.iter().enumerate() {
                    if let Some(t) = &rep.trajectory {
                        write_trajectory_csv(&dir.join(format!("run-{i:03}.csv")), t)?;
                    }
                }
            }
            let summary = RunSummary {
                experiment: a.experiment.clone(),
                seed: a.seed,
                runs,
                gains: None,
                integrator: Some(bench::sysid::default_sysid_integrator()),
                passed,
                report: reports,
            };
            write_json(&dir, "summary.json", &summary, a.json)?;
            passed
        }
        ExperimentName::ChemicalSeparation => {
            let runs = a.runs.unwrap_or(50);
            let report = bench::run_chemical(runs, a.seed, None, None, a.csv);
            let passed = report.passed();
            if a.csv {
                fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
                for (i, run) in report.per_run.iter().enumerate() {
                    if let Some(t) = &run.trajectory {
                        write_trajectory_csv(&dir.join(format!("run-{i:03}.csv")), t)?;
                    }
                }
            }
            let summary = RunSummary {
                experiment: a.experiment.clone(),
                seed: a.seed,
                runs,
                gains: Some(bench::chemical::default_chemical_gains(132)),
                integrator: Some(bench::chemical::default_chemical_integrator()),
                passed,
                report,
            };
            write_json(&dir, "summary.json", &summary, a.json)?;
            passed
        }
    };

    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn preset_problem(preset: Preset, w: f64) -> QuadraticProblem {
    match preset {
        Preset::Scalar => QuadraticProblem::new(
            DMatrix::from_element(1, 1, w),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
        )
        .expect("valid preset"),
        Preset::Indefinite => QuadraticProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 2.0]),
            DVector::zeros(1),
        )
        .expect("valid preset"),
    }
}

#[derive(Serialize)]
struct SolveSummary {
    controller: String,
    n: usize,
    m: usize,
    seed: u64,
    dt: f64,
    t_max: f64,
    status: lagflow::SolveStatus,
    iterations: usize,
    final_hinf: f64,
    final_x: Vec<f64>,
    final_lambda: Vec<f64>,
    wall_time: f64,
}

fn cmd_solve(a: SolveArgs) -> Result<ExitCode, String> {
    let q = match a.preset {
        Some(p) => preset_problem(p, a.w),
        None => {
            if a.m == 0 || a.m > a.n {
                return Err(format!("need 1 <= m <= n, got n = {}, m = {}", a.n, a.m));
            }
            bench::make_quadratic(a.n, a.m, a.seed)
        }
    };
    let controller: Controller = a.controller.into();
    if controller == Controller::Fl && q.m() > q.n() {
        return Err("feedback linearization requires m <= n".into());
    }

    let gains = match controller {
        Controller::Pdgd => GainConfig::pdgd(a.ki),
        Controller::Pi => GainConfig::pi(a.kp, a.ki),
        Controller::Fl => GainConfig::fl_uniform(a.fl_gain, q.m()).with_regularization(a.eps),
    };

    let dt = a.dt.or_else(|| {
        if controller == Controller::Fl {
            None
        } else {
            lti_closed_loop(&q, &gains).suggested_dt
        }
    });
    let dt = dt.unwrap_or(1e-3);

    let cfg = IntegratorConfig {
        method: match a.method {
            MethodArg::Euler => Method::Euler,
            MethodArg::Rk4 => Method::Rk4,
        },
        dt,
        t_max: a.tmax,
        record_stride: 10,
        record_states: a.csv,
        ..Default::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;

    let p = q.to_problem();
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let x0 = DVector::from_fn(p.n(), |_, _| StandardNormal.sample(&mut rng));
    let l0 = DVector::from_fn(p.m(), |_, _| StandardNormal.sample(&mut rng));
    let report = integrate(&p, controller, &gains, &JointState::new(x0, l0), &cfg);

    let summary = SolveSummary {
        controller: format!("{:?}", controller).to_lowercase(),
        n: p.n(),
        m: p.m(),
        seed: a.seed,
        dt,
        t_max: a.tmax,
        status: report.status,
        iterations: report.iterations,
        final_hinf: report.final_hinf(),
        final_x: report.final_state.x.iter().copied().collect(),
        final_lambda: report.final_state.lambda.iter().copied().collect(),
        wall_time: report.wall_time,
    };
    let dir = out_dir(&a.out, "solve", a.seed);
    write_json(&dir, "solve.json", &summary, a.json)?;
    if a.csv {
        write_full_csv(&dir.join("trajectory.csv"), &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EigenReport {
    preset: String,
    kp: f64,
    ki: f64,
    w: f64,
    eigenvalues: Vec<(f64, f64)>,
    hurwitz: bool,
    spectral_abscissa: f64,
    suggested_dt: Option<f64>,
}

#[derive(Serialize)]
struct AnalyzeSummary {
    lti: EigenReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    zero_dynamics: Option<lagflow::ZeroDynamicsReport>,
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<ExitCode, String> {
    let q = preset_problem(a.preset, a.w);
    let gains = if a.kp == 0.0 { GainConfig::pdgd(a.ki) } else { GainConfig::pi(a.kp, a.ki) };
    let lti = lti_closed_loop(&q, &gains);

    let zero_dynamics = if a.zero_dynamics {
        // Both presets have d = 0, so the stationary point is the origin.
        let p = q.to_problem();
        Some(
            zero_dynamics_check(&p, &DVector::zeros(p.n()), &DVector::zeros(p.m()))
                .map_err(|e| e.to_string())?,
        )
    } else {
        None
    };

    let summary = AnalyzeSummary {
        lti: EigenReport {
            preset: format!("{:?}", a.preset).to_lowercase(),
            kp: a.kp,
            ki: a.ki,
            w: a.w,
            eigenvalues: lti.eigenvalues.iter().map(|c| (c.re, c.im)).collect(),
            hurwitz: lti.hurwitz,
            spectral_abscissa: lti.spectral_abscissa,
            suggested_dt: lti.suggested_dt,
        },
        zero_dynamics,
    };
    let dir = out_dir(&a.out, "analyze", 0);
    write_json(&dir, "analyze.json", &summary, a.json)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_validate(a: ValidateArgs) -> Result<ExitCode, String> {
    let p = match a.problem.as_str() {
        "quadratic" => {
            if a.m == 0 || a.m > a.n {
                return Err(format!("need 1 <= m <= n, got n = {}, m = {}", a.n, a.m));
            }
            bench::make_quadratic(a.n, a.m, a.seed).to_problem()
        }
        "shidoku" => bench::make_shidoku(),
        "sysid" => bench::make_sysid(400, a.seed, 0.01).map_err(|e| e.to_string())?.0,
        "chemical" => bench::make_chemical(),
        other => return Err(format!("unknown problem {other:?}")),
    };
    let report = validate_problem(&p, a.samples, a.seed);
    let text = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    if a.json {
        println!("{text}");
    } else {
        println!(
            "{}: grad_ok={} (max err {:.3e})  jac_ok={} (max err {:.3e})  min_gram_eig={:.3e}",
            a.problem,
            report.grad_ok,
            report.max_grad_rel_err,
            report.jac_ok,
            report.max_jac_rel_err,
            report.min_gram_eigenvalue
        );
    }
    Ok(if report.derivatives_ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
