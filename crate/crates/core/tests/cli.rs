use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ksflow::diagnostics::DiagnosticsRow;
use ksflow::harness::{RunConfig, EXIT_FAIL, EXIT_OK, EXIT_USAGE};

fn ksflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ksflow")).args(args).output().expect("spawn ksflow")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn simulate_into(dir: &Path) -> Output {
    let cfg = config("reference.toml");
    ksflow(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
}

#[test]
fn shipped_reference_config_matches_the_builtin() {
    let file = RunConfig::load(&config("reference.toml")).unwrap();
    let builtin = RunConfig::reference();
    assert_eq!(file.solver, builtin.solver);
    assert_eq!(file.initial, builtin.initial);
    assert_eq!(file.monitors, builtin.monitors);
    for name in ["heat.toml", "blowup.toml", "lifted.toml"] {
        RunConfig::load(&config(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn simulate_writes_deterministic_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = simulate_into(&a);
    assert_eq!(first.status.code(), Some(EXIT_OK), "{}", text(&first));
    assert!(text(&first).contains("passed = true"));
    assert_eq!(simulate_into(&b).status.code(), Some(EXIT_OK));

    for file in ["diagnostics.csv", "report.txt"] {
        let x = std::fs::read(a.join(file)).unwrap();
        assert_eq!(x, std::fs::read(b.join(file)).unwrap(), "{file} differs between runs");
    }
    let csv = std::fs::read_to_string(a.join("diagnostics.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    assert_eq!(header, DiagnosticsRow::COLUMNS);
    assert_eq!(csv.lines().count(), 1 + 5000 / 50 + 1);

    let report = std::fs::read_to_string(a.join("report.txt")).unwrap();
    for section in ["## config", "## verdicts", "## files", "## summary"] {
        assert!(report.contains(section), "missing {section}");
    }
    assert!(report.contains("gamma = -3.0"), "config is echoed verbatim");
    assert!(report.contains("diagnostics.csv"));
}

#[test]
fn plots_of_a_run_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(simulate_into(tmp.path()).status.code(), Some(EXIT_OK));
    let csv = tmp.path().join("diagnostics.csv");
    let svg = |name: &str, cols: &[&str]| {
        let out = tmp.path().join(name);
        let mut args = vec!["plot", csv.to_str().unwrap(), "--out", out.to_str().unwrap()];
        for c in cols {
            args.extend(["--column", c]);
        }
        let run = ksflow(&args);
        assert_eq!(run.status.code(), Some(EXIT_OK), "{}", text(&run));
        std::fs::read_to_string(out).unwrap()
    };
    let fisher = svg("fisher.svg", &["fisher"]);
    assert_eq!(fisher, svg("fisher2.svg", &["fisher"]));
    assert_eq!(fisher.matches("<polyline").count(), 1);
    let overlay = svg("overlay.svg", &["entropy", "fisher"]);
    assert_eq!(overlay.matches("<polyline").count(), 2);

    // Fisher decays, so the trace only moves down the page (larger SVG y).
    let line = fisher.lines().find(|l| l.starts_with("<polyline")).unwrap();
    let pts = line.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
    let ys: Vec<f64> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(ys.windows(2).all(|w| w[1] >= w[0]));

    let missing = ksflow(&["plot", csv.to_str().unwrap(), "--column", "nope"]);
    assert_eq!(missing.status.code(), Some(EXIT_USAGE));
    assert!(text(&missing).contains("'nope'"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(ksflow(&["frobnicate"]).status.code(), Some(EXIT_USAGE));
    assert_eq!(ksflow(&[]).status.code(), Some(EXIT_USAGE));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "scenario = \"x\"\n[solver]\ngamma = -3.0\nn_cells = 64\nr_max = 8.0\ndt = 1e-3\nt_end = 0.01\nstep = 2\n").unwrap();
    let out = ksflow(&["simulate", "--config", bad.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE), "{}", text(&out));
    assert!(text(&out).contains("step"));
}

#[test]
fn failing_assertion_exits_with_one() {
    // Discretization error alone puts the energy residual far above 1e-12.
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("strict.toml");
    std::fs::write(
        &cfg,
        "scenario = \"strict\"\n[solver]\ngamma = -3.0\nn_cells = 64\nr_max = 8.0\ndt = 1e-3\nt_end = 0.05\noutput_stride = 5\n\
         [diagnostics]\nmonitors = [\"mass\", \"energy_identity\"]\nenergy_tol = 1e-12\n",
    )
    .unwrap();
    let out = ksflow(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap(), "--quiet"]);
    assert_eq!(out.status.code(), Some(EXIT_FAIL), "{}", text(&out));
    assert!(text(&out).contains("energy_identity"), "quiet still prints a failing table");
    let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("passed = false"));
}

#[test]
fn lifted_frames_suite_from_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ksflow(&["verify-lifted", "--suite", "frames", "--seed", "7", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", text(&out));
    let csv = std::fs::read_to_string(tmp.path().join("lifted.csv")).unwrap();
    assert!(csv.starts_with("suite,identity,lhs,rhs,stderr,verdict\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",pass")));
    let report = std::fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(report.contains("seed = 7"));
}

#[test]
fn small_blowup_comparison_from_a_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.toml");
    std::fs::write(&cfg, "scenario = \"small\"\n[blowup]\namplitude = 1.0\nhorizon = 0.01\ndt_list = [1e-3]\nks_dt = 1e-4\nn_cells = 64\n")
        .unwrap();
    let out = ksflow(&["compare-blowup", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_OK), "{}", text(&out));
    assert!(text(&out).contains("neither-blows-up"));
    let csv = std::fs::read_to_string(tmp.path().join("blowup.csv")).unwrap();
    assert!(csv.starts_with("model,dt,t,max,mass\n"));
}
