//! Batch front end. Exit codes: 0 success, 2 non-convergence, 1 error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{apriori_check, harnack_check, modulus_check, observed_order, HarnackReport, ModulusOptions, ModulusReport};
use crate::config::{BallSpec, RunConfig, SweepKind};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{mesh_domain, DomainKind, Mesh};
use crate::par::{self, Exec};
use crate::solver::{fmt_f64, solve_level, solve_measure_on, SolutionField};
use crate::trace::{radius_sweep, trace_limit};
use crate::weakform::{dirichlet_residual, test_bank, Density};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ddiv", version, about = "Dirichlet problems for double divergence form equations with measure data")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Serial assembly and solve for byte-identical outputs.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Seed for sampled checks in `study`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Tolerance of the command: schedule, residual or trace stagnation.
    #[arg(long, global = true, value_name = "X")]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the level schedule; writes solution.csv and report.json.
    Solve,
    /// Weak-form residual of a solution; writes residual.json, residual.csv, apriori.json.
    Verify {
        /// Solution CSV; defaults to solution.csv in the output directory.
        #[arg(long, value_name = "PATH")]
        solution: Option<PathBuf>,
    },
    /// Boundary trace of a density on Ω; writes trace.json, trace.csv and sweep.json.
    Trace,
    /// Mesh or level sweep; writes study.csv and study.json.
    Study,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let c = &cli.common;
    let path = c.config.as_deref().ok_or_else(|| Error::Config { field: "--config".into(), message: "a config file is required".into() })?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    } else {
        cfg.output_dir = cfg.resolve(&cfg.output_dir.clone());
    }
    cfg.deterministic |= c.deterministic;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(t) = c.tol {
        if !(t > 0.0) {
            return Err(Error::Config { field: "--tol".into(), message: "tolerance must be positive".into() });
        }
        match cli.command {
            Command::Solve | Command::Study => cfg.solver.tol = t,
            Command::Verify { .. } => cfg.verify.tol = t,
            Command::Trace => cfg.trace.tol = Some(t),
        }
    }
    cfg.validate()?;
    if let Some(j) = c.jobs {
        par::set_jobs(j);
    }
    if cfg.deterministic {
        faer::set_global_parallelism(faer::Par::Seq);
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    match &cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Verify { solution } => {
            let p = solution.clone().unwrap_or_else(|| cfg.output_dir.join("solution.csv"));
            cmd_verify(&cfg, &p)
        }
        Command::Trace => cmd_trace(&cfg),
        Command::Study => cmd_study(&cfg),
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<std::fs::File>) -> Result<()>,
{
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let result = (|| {
        let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        Ok(())
    })();
    match result {
        Ok(()) => Ok(std::fs::rename(&tmp, path)?),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn exec_for(cfg: &RunConfig) -> Exec {
    if cfg.deterministic {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

fn mesh_for(cfg: &RunConfig, h: f64) -> Result<Arc<Mesh>> {
    Ok(Arc::new(mesh_domain(&cfg.domain.kind(), h)?))
}

pub fn cmd_solve(cfg: &RunConfig) -> Result<i32> {
    let problem = cfg.problem()?;
    let opts = cfg.solve_options(&problem.coeffs, exec_for(cfg));
    let mesh = mesh_for(cfg, cfg.solver.h)?;
    let (sol, report) = solve_measure_on(&problem, &mesh, &cfg.schedule(), &opts)?;
    write_atomic(&cfg.output_dir.join("solution.csv"), |w| sol.write_csv(w))?;
    write_json(&cfg.output_dir.join("report.json"), &report)?;
    let last = report.levels.last().expect("at least one level");
    println!(
        "solve: {} levels, n = {}, increment {}, ‖ϱ‖ = {:.6e}",
        report.levels.len(),
        last.n,
        report.last_increment().map_or("-".into(), |d| format!("{d:.3e}")),
        last.norm_lp_prime
    );
    if report.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: {}", report.warning.as_deref().unwrap_or("not converged"));
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cmd_verify(cfg: &RunConfig, solution: &Path) -> Result<i32> {
    let problem = cfg.problem()?;
    let mesh = mesh_for(cfg, cfg.solver.h)?;
    let sol = SolutionField::read_csv(mesh, solution)?;
    let exec = exec_for(cfg);
    let bank = test_bank(&problem.domain.kind, cfg.verify.bank_degree)?;
    let quad = cfg.quad();
    let res = dirichlet_residual(&sol, &problem.coeffs, &problem.eta, &bank, &quad, exec)?;
    let apriori = apriori_check(&[("solution".to_string(), problem, sol)], cfg.solver.tol, &quad)?;
    write_json(&cfg.output_dir.join("residual.json"), &res)?;
    write_atomic(&cfg.output_dir.join("residual.csv"), |w| res.write_csv(w))?;
    write_json(&cfg.output_dir.join("apriori.json"), &apriori)?;
    println!("verify: {} test functions, max relative residual {:.3e}", res.entries.len(), res.max_relative);
    if res.max_relative <= cfg.verify.tol {
        Ok(EXIT_OK)
    } else {
        let w = res.worst().expect("nonempty bank");
        eprintln!(
            "error: residual above tolerance {:e}: test function {} has residual {:.6e} (relative {:.3e})",
            cfg.verify.tol, w.id, w.residual, w.relative
        );
        Ok(EXIT_ERROR)
    }
}

enum TraceDensity {
    Expr(Expr),
    Mesh(SolutionField),
}

impl TraceDensity {
    fn as_density(&self) -> &dyn Density {
        match self {
            TraceDensity::Expr(e) => e,
            TraceDensity::Mesh(s) => s,
        }
    }
}

fn trace_density(cfg: &RunConfig) -> Result<TraceDensity> {
    let t = &cfg.trace;
    match (&t.density, &t.solution) {
        (Some(src), None) => Ok(TraceDensity::Expr(Expr::parse(src).map_err(|e| Error::Config { field: "trace.density".into(), message: e.to_string() })?)),
        (None, Some(path)) => {
            let h = t.mesh_h.expect("validated");
            let mesh = Arc::new(mesh_domain(&cfg.container.kind(), h)?);
            Ok(TraceDensity::Mesh(SolutionField::read_csv(mesh, &cfg.resolve(path))?))
        }
        _ => Err(Error::Config { field: "trace".into(), message: "give exactly one of density or solution".into() }),
    }
}

pub fn cmd_trace(cfg: &RunConfig) -> Result<i32> {
    let domain = cfg.domain()?;
    let coeffs = cfg.coefficients()?;
    let rho = trace_density(cfg)?;
    let opts = cfg.trace_options(exec_for(cfg));
    let diag = trace_limit(rho.as_density(), &coeffs, &domain, &opts)?;
    write_json(&cfg.output_dir.join("trace.json"), &diag)?;
    write_atomic(&cfg.output_dir.join("trace.csv"), |w| diag.write_csv(w))?;
    if !cfg.trace.radii.is_empty() {
        let center = cfg.trace.center.unwrap_or(match domain.kind {
            DomainKind::Disk { center, .. } => center,
            DomainKind::Interval { a, b } => [0.5 * (a + b), 0.0],
        });
        let sweep = radius_sweep(rho.as_density(), &domain.omega(), center, &cfg.trace.radii, &opts)?;
        println!("trace: radius sweep median discrepancy {:.3e}", sweep.median_discrepancy);
        write_json(&cfg.output_dir.join("sweep.json"), &sweep)?;
    }
    println!(
        "trace: {} levels, total mass {:.6e}, mass-bound violations {}",
        diag.levels.len(),
        diag.eta_tilde.total_mass(),
        diag.mass_bound_violations
    );
    if diag.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: {}", diag.warning.as_deref().unwrap_or("trace did not stagnate"));
        Ok(EXIT_NOT_CONVERGED)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyRow {
    pub value: f64,
    pub n: usize,
    pub eps: f64,
    pub vertices: usize,
    pub converged: bool,
    pub norm_lp_prime: f64,
    pub increment: Option<f64>,
    pub error_l2: Option<f64>,
    pub error_lp_prime: Option<f64>,
    pub harnack_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub sweep: SweepKind,
    pub rows: Vec<StudyRow>,
    /// Least-squares slope of `log error` (or `log increment`) against `log h` (or `log ε`).
    pub order: Option<f64>,
    pub harnack: Option<HarnackReport>,
    pub modulus: Option<ModulusReport>,
}

fn ball_kind(dim: usize, b: &BallSpec) -> DomainKind {
    if dim == 1 {
        DomainKind::Interval { a: b.center[0] - b.radius, b: b.center[0] + b.radius }
    } else {
        DomainKind::Disk { center: b.center, radius: b.radius }
    }
}

fn ball_ratio(sol: &SolutionField, b: &BallSpec) -> Option<f64> {
    let inside = sol.mesh.vertices.iter().zip(&sol.values).filter(|(x, _)| crate::linalg::dist(**x, b.center) <= b.radius);
    let (lo, hi) = inside.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, v)| (lo.min(*v), hi.max(*v)));
    (lo > 0.0 && hi.is_finite()).then(|| hi / lo)
}

fn fit(xs: &[f64], ys: &[Option<f64>]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = xs.iter().zip(ys).filter_map(|(x, y)| y.filter(|v| *v > 0.0).map(|v| (*x, v))).unzip();
    (x.len() >= 2).then(|| observed_order(&x, &y).ok()).flatten()
}

pub fn cmd_study(cfg: &RunConfig) -> Result<i32> {
    let st = cfg.study.as_ref().ok_or_else(|| Error::Config { field: "study".into(), message: "the study command needs a [study] section".into() })?;
    if st.values.len() < 3 {
        return Err(Error::Config { field: "study.values".into(), message: format!("{} sweep points: at least 3 are needed to fit an order", st.values.len()) });
    }
    let problem = cfg.problem()?;
    let pp = problem.p_prime();
    let exec = exec_for(cfg);
    let opts = cfg.solve_options(&problem.coeffs, exec);
    let reference = match (&st.reference, &cfg.coefficients.manufactured) {
        (Some(s), _) | (None, Some(s)) => Some(Expr::parse(s).map_err(|e| Error::Config { field: "study.reference".into(), message: e.to_string() })?),
        _ => None,
    };
    let errors = |sol: &SolutionField| match &reference {
        Some(r) => (Some(sol.lq_error(|x| r.eval(x), 2.0)), Some(sol.lq_error(|x| r.eval(x), pp))),
        None => (None, None),
    };
    let mut rows = Vec::new();
    let mut sols: Vec<(usize, SolutionField)> = Vec::new();
    let mut all_converged = true;
    match st.sweep {
        SweepKind::H => {
            for &h in &st.values {
                let mesh = mesh_for(cfg, h)?;
                let (sol, rep) = solve_measure_on(&problem, &mesh, &cfg.schedule(), &opts)?;
                let last = rep.levels.last().expect("at least one level");
                let (e2, ep) = errors(&sol);
                all_converged &= rep.converged;
                rows.push(StudyRow {
                    value: h,
                    n: last.n,
                    eps: last.eps,
                    vertices: rep.vertices,
                    converged: rep.converged,
                    norm_lp_prime: last.norm_lp_prime,
                    increment: last.increment,
                    error_l2: e2,
                    error_lp_prime: ep,
                    harnack_ratio: st.harnack.as_ref().and_then(|b| ball_ratio(&sol, b)),
                });
                sols.push((rows.len(), sol));
            }
        }
        SweepKind::N => {
            let mesh = mesh_for(cfg, cfg.solver.h)?;
            let mut prev: Option<SolutionField> = None;
            for &v in &st.values {
                let n = v.round() as usize;
                let (sol, _) = solve_level(&problem, &mesh, n, &opts)?;
                let increment = prev.as_ref().map(|p| sol.lq_distance(p, pp)).transpose()?;
                let (e2, ep) = errors(&sol);
                rows.push(StudyRow {
                    value: n as f64,
                    n,
                    eps: 1.0 / n as f64,
                    vertices: mesh.vertices.len(),
                    converged: true,
                    norm_lp_prime: sol.lq_norm(pp),
                    increment,
                    error_l2: e2,
                    error_lp_prime: ep,
                    harnack_ratio: st.harnack.as_ref().and_then(|b| ball_ratio(&sol, b)),
                });
                prev = Some(sol.clone());
                sols.push((n, sol));
            }
        }
    }
    let scale: Vec<f64> = rows.iter().map(|r| if st.sweep == SweepKind::H { r.value } else { r.eps }).collect();
    let order = if reference.is_some() {
        fit(&scale, &rows.iter().map(|r| r.error_l2).collect::<Vec<_>>())
    } else {
        fit(&scale, &rows.iter().map(|r| r.increment).collect::<Vec<_>>())
    };
    let dim = problem.domain.dim();
    let harnack = match &st.harnack {
        Some(b) => {
            let n_hi = cfg.solver.n_max;
            let n_lo = (n_hi / 2).max(cfg.solver.n_start);
            Some(harnack_check(&problem, b.center, b.radius, cfg.solver.h, [n_lo, n_hi], &opts)?)
        }
        None => None,
    };
    let modulus = match &st.modulus {
        Some(b) => {
            let mopts = ModulusOptions { seed: cfg.seed, r_max: b.radius, ..Default::default() };
            Some(modulus_check(Some(&problem.coeffs), &sols, &ball_kind(dim, b), &mopts)?)
        }
        None => None,
    };
    write_atomic(&cfg.output_dir.join("study.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        let sweep = if st.sweep == SweepKind::H { "h" } else { "n" };
        csv.write_record(["sweep", "value", "n", "eps", "vertices", "converged", "norm_lp_prime", "increment", "error_l2", "error_lp_prime", "order", "harnack_ratio"])?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &rows {
            csv.write_record([
                sweep.to_string(),
                fmt_f64(r.value),
                r.n.to_string(),
                fmt_f64(r.eps),
                r.vertices.to_string(),
                r.converged.to_string(),
                fmt_f64(r.norm_lp_prime),
                opt(r.increment),
                opt(r.error_l2),
                opt(r.error_lp_prime),
                opt(order),
                opt(r.harnack_ratio),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    let report = StudyReport { sweep: st.sweep, rows, order, harnack, modulus };
    write_json(&cfg.output_dir.join("study.json"), &report)?;
    println!("study: {} points, observed order {}", report.rows.len(), order.map_or("-".into(), |o| format!("{o:.3}")));
    Ok(if all_converged { EXIT_OK } else { EXIT_NOT_CONVERGED })
}
