use std::path::{Path, PathBuf};
use std::process::Command;

use ddiv::config::RunConfig;
use ddiv::geometry::DomainKind;
use ddiv::oracle1d::exact_solve_1d;

fn repo_configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Runs the binary with `--out` pointing at a fresh directory.
fn ddiv(args: &[&str], out: &Path) -> (i32, String, String) {
    let o = Command::new(env!("CARGO_BIN_EXE_ddiv")).args(args).arg("--out").arg(out).output().expect("binary runs");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

fn config(name: &str) -> String {
    repo_configs().join(name).to_string_lossy().into_owned()
}

/// Copies a repo config into `dir`, applying textual substitutions.
fn variant(name: &str, dir: &Path, edits: &[(&str, &str)]) -> String {
    let mut text = std::fs::read_to_string(repo_configs().join(name)).unwrap();
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in {name}");
        text = text.replace(from, to);
    }
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn config_grammar_is_frozen() {
    let text = std::fs::read_to_string(golden("full_config.toml")).unwrap();
    let cfg = RunConfig::parse(&text).unwrap();
    let json = serde_json::to_string_pretty(&cfg).unwrap() + "\n";
    let expected_path = golden("full_config.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&expected_path, &json).unwrap();
    }
    assert_eq!(json, std::fs::read_to_string(&expected_path).unwrap());
    for entry in std::fs::read_dir(repo_configs()).unwrap() {
        let p = entry.unwrap().path();
        let c = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        c.problem().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn syntax_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("constant_disk.toml", dir.path(), &[("h = 0.1", "h = 0.1\nn_levels = 3")]);
    let (code, _, err) = ddiv(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("line 17") && err.contains("n_levels"), "{err}");
    let missing = variant("constant_disk.toml", dir.path(), &[("[boundary]", "[coefficients]\ngrid = \"nowhere.csv\"\n\n[boundary]")]);
    let (code, _, err) = ddiv(&["solve", "--config", &missing], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("coefficients.grid") && err.contains("does not exist"), "{err}");
}

#[test]
fn constant_data_gives_constant_solution() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = ddiv(&["solve", "--config", &config("constant_disk.toml")], dir.path());
    assert_eq!(code, 0, "{out}");
    let rows = read_csv(&dir.path().join("solution.csv"));
    assert!(rows.iter().all(|r| (r[3].parse::<f64>().unwrap() - 2.0).abs() < 1e-9));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
    // no temporaries are left behind
    assert!(std::fs::read_dir(dir.path()).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".tmp")));
}

#[test]
fn interval_atoms_match_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = ddiv(&["solve", "--config", &config("interval_atoms.toml")], dir.path());
    assert_eq!(code, 0, "{err}");
    let cfg = RunConfig::load(&repo_configs().join("interval_atoms.toml")).unwrap();
    let p = cfg.problem().unwrap();
    let exact = exact_solve_1d(&p.coeffs, &DomainKind::Interval { a: 0.0, b: 1.0 }, &p.eta, 20_000).unwrap();
    let rows = read_csv(&dir.path().join("solution.csv"));
    let mut xs: Vec<(f64, f64)> = rows.iter().map(|r| (r[1].parse().unwrap(), r[3].parse().unwrap())).collect();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // trapezoidal L^{p'} distance on the vertex grid
    let pp = p.p_prime();
    let mut acc = 0.0;
    for w in xs.windows(2) {
        let e0 = (w[0].1 - exact.eval(w[0].0)).abs().powf(pp);
        let e1 = (w[1].1 - exact.eval(w[1].0)).abs().powf(pp);
        acc += 0.5 * (w[1].0 - w[0].0) * (e0 + e1);
    }
    assert!(acc.powf(1.0 / pp) < 1e-3, "{}", acc.powf(1.0 / pp));
}

#[test]
fn gap_precondition_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("constant_disk.toml", dir.path(), &[("n_start = 4", "n_start = 1")]);
    let (code, _, err) = ddiv(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("gap"), "{err}");
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("atom_disk.toml", dir.path(), &[("n_max = 128", "n_max = 8")]);
    let (code, _, err) = ddiv(&["solve", "--config", &cfg], dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("warning"));
    assert!(dir.path().join("solution.csv").exists());
}

#[test]
fn verify_accepts_solutions_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("manufactured_disk.toml");
    assert_eq!(ddiv(&["solve", "--config", &cfg], dir.path()).0, 0);
    let (code, out, err) = ddiv(&["verify", "--config", &cfg], dir.path());
    assert_eq!(code, 0, "{out}{err}");
    for f in ["residual.json", "residual.csv", "apriori.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    // perturb the vertex nearest (0.3, 0.2) by 10
    let path = dir.path().join("solution.csv");
    let mut rows = read_csv(&path);
    let k = (0..rows.len())
        .min_by(|&a, &b| {
            let d = |r: &Vec<String>| (r[1].parse::<f64>().unwrap() - 0.3).powi(2) + (r[2].parse::<f64>().unwrap() - 0.2).powi(2);
            d(&rows[a]).total_cmp(&d(&rows[b]))
        })
        .unwrap();
    rows[k][3] = format!("{:?}", rows[k][3].parse::<f64>().unwrap() + 10.0);
    let bad = dir.path().join("corrupt.csv");
    let mut w = csv::Writer::from_path(&bad).unwrap();
    w.write_record(["vertex", "x1", "x2", "rho"]).unwrap();
    for r in &rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
    let (code, _, err) = ddiv(&["verify", "--config", &cfg, "--solution", bad.to_str().unwrap()], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("residual"), "{err}");
    // a solution from another mesh is rejected
    let other = tempfile::tempdir().unwrap();
    assert_eq!(ddiv(&["solve", "--config", &config("constant_disk.toml")], other.path()).0, 0);
    let foreign = other.path().join("solution.csv");
    assert_eq!(ddiv(&["verify", "--config", &cfg, "--solution", foreign.to_str().unwrap()], dir.path()).0, 1);
}

#[test]
fn verify_zero_problem_with_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("constant_disk.toml", dir.path(), &[("uniform = 2.0", "uniform = 0.0")]);
    assert_eq!(ddiv(&["solve", "--config", &cfg], dir.path()).0, 0);
    let rows = read_csv(&dir.path().join("solution.csv"));
    assert!(rows.iter().all(|r| r[3].parse::<f64>().unwrap() == 0.0));
    assert_eq!(ddiv(&["verify", "--config", &cfg], dir.path()).0, 0);
}

#[test]
fn trace_of_unit_density_is_surface_measure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant(
        "manufactured_disk.toml",
        dir.path(),
        &[("density = \"exp(-(x1^2 + x2^2))\"", "density = \"1\""), ("manufactured = \"exp(-(x1^2 + x2^2))\"\n", "")],
    );
    let (code, _, err) = ddiv(&["trace", "--config", &cfg], dir.path());
    assert_eq!(code, 0, "{err}");
    for r in read_csv(&dir.path().join("trace.csv")) {
        assert!((r[6].parse::<f64>().unwrap() - 1.0).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn trace_of_manufactured_solution() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = ddiv(&["trace", "--config", &config("manufactured_disk.toml")], dir.path());
    assert_eq!(code, 0, "{err}");
    // G = ϱA, so κ = ϱ and η = 0
    for r in read_csv(&dir.path().join("trace.csv")) {
        assert!(r[6].parse::<f64>().unwrap().abs() < 1e-3, "{r:?}");
    }
}

#[test]
fn signed_unbounded_density_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("manufactured_disk.toml", dir.path(), &[("density = \"exp(-(x1^2 + x2^2))\"", "density = \"x1/x2^2\"")]);
    let (code, _, err) = ddiv(&["trace", "--config", &cfg], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("signed unbounded trace unsupported"), "{err}");
    assert!(!dir.path().join("trace.json").exists());
}

#[test]
fn study_h_sweep_has_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = ddiv(&["study", "--config", &config("manufactured_disk.toml")], dir.path());
    assert_eq!(code, 0, "{err}");
    let rows = read_csv(&dir.path().join("study.csv"));
    assert_eq!(rows.len(), 3);
    let order: f64 = rows[0][10].parse().unwrap();
    assert!(order >= 1.5, "{order}");
}

#[test]
fn study_n_sweep_on_constant_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("constant_disk.toml", dir.path(), &[("n_max = 16", "n_max = 16\n\n[study]\nsweep = \"n\"\nvalues = [4, 8, 16]")]);
    let (code, _, err) = ddiv(&["study", "--config", &cfg], dir.path());
    assert_eq!(code, 0, "{err}");
    let rows = read_csv(&dir.path().join("study.csv"));
    for r in &rows[1..] {
        assert!(r[7].parse::<f64>().unwrap() < 1e-12, "{r:?}");
    }
}

#[test]
fn study_needs_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = variant("manufactured_disk.toml", dir.path(), &[("values = [0.1, 0.05, 0.025]", "values = [0.1, 0.05]")]);
    let (code, _, err) = ddiv(&["study", "--config", &cfg], dir.path());
    assert_eq!(code, 1);
    assert!(err.contains("at least 3"), "{err}");
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let cfg = config("atom_disk.toml");
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &runs {
        let (code, _, err) = ddiv(&["solve", "--config", &cfg, "--deterministic"], d.path());
        assert_eq!(code, 0, "{err}");
        assert_eq!(ddiv(&["verify", "--config", &cfg, "--deterministic", "--tol", "1"], d.path()).0, 0);
    }
    for f in ["solution.csv", "report.json", "residual.json", "residual.csv", "apriori.json"] {
        let a = std::fs::read(runs[0].path().join(f)).unwrap();
        let b = std::fs::read(runs[1].path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ddiv(&["solve"], dir.path()).0, 1);
    assert_eq!(ddiv(&["frobnicate"], dir.path()).0, 1);
    assert_eq!(ddiv(&["solve", "--config", &config("constant_disk.toml"), "--tol", "-1"], dir.path()).0, 1);
}
