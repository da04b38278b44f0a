//! Command-line front end.
//!
//! Exit status: 0 when every enabled assertion passes, 1 when one fails or a
//! run errors, 2 for usage and configuration errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use super::blowup::compare_blowup;
use super::config::RunConfig;
use super::plot::{plot, PlotStyle};
use super::report::{RunReport, VerdictRow};
use super::simulate::simulate_all;
use crate::error::{Error, Result};
use crate::kernels::{probe_inequality, Lemma, ProbeParams};
use crate::lifted::{self, sub_seed, LiftedOptions, Suite, Verdict};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const DEFAULT_OUT: &str = "ksflow-out";

#[derive(Debug, Parser)]
#[command(name = "ksflow", version, about = "Simulate and verify the isotropic Landau (Krieger-Strain) flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (TOML). `simulate` accepts several and runs them concurrently.
    #[arg(long, value_name = "PATH")]
    config: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed for every randomized check.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Print the verdict table only when something fails.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the solver with diagnostics and monitors.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Check the lifted-operator identities on R^6.
    VerifyLifted {
        #[command(flatten)]
        common: Common,
        /// frames, commutators, flows, maxwell, derivatives, dissipation or marginal (repeatable; default all).
        #[arg(long, value_name = "NAME")]
        suite: Vec<String>,
        /// Interaction exponent (repeatable; default per suite).
        #[arg(long, value_name = "X", allow_negative_numbers = true)]
        gamma: Vec<f64>,
        /// Monte Carlo samples per estimate.
        #[arg(long, value_name = "N")]
        samples: Option<u64>,
    },
    /// Probe the weighted convolution and interpolation inequalities.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Lemma: A1, A3, A4, A5 or A7 (repeatable; default all).
        #[arg(long, value_name = "NAME")]
        suite: Vec<String>,
        /// Random family size.
        #[arg(long, value_name = "N")]
        samples: Option<usize>,
    },
    /// Semilinear heat versus Coulomb Krieger-Strain from the same data.
    CompareBlowup {
        #[command(flatten)]
        common: Common,
    },
    /// Render CSV columns as an SVG line chart.
    Plot {
        /// Input CSV.
        csv: PathBuf,
        /// Column to draw (repeatable).
        #[arg(long, value_name = "NAME", required = true)]
        column: Vec<String>,
        /// Abscissa column (default `t`, else the first column).
        #[arg(long, value_name = "NAME")]
        x: Option<String>,
        #[arg(long)]
        log_y: bool,
        #[arg(long)]
        title: Option<String>,
        /// Output SVG file (default: the CSV path with an `.svg` extension).
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

/// Runs the CLI on `args` (including the program name) with the process streams.
pub fn cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    run_cli(args, &mut out, &mut err)
}

/// As [`cli`], writing to the given streams.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(parsed.command, out) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAIL
        }
    }
}

enum Failure {
    Usage(Error),
    Run(Error),
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

fn runtime(e: Error) -> Failure {
    match e {
        Error::InvalidInput(_) | Error::Hypothesis(_) => Failure::Usage(e),
        other => Failure::Run(other),
    }
}

fn load_configs(common: &Common) -> std::result::Result<Vec<RunConfig>, Failure> {
    let mut cfgs = common.config.iter().map(|p| RunConfig::load(p)).collect::<Result<Vec<_>>>().map_err(usage)?;
    if let Some(seed) = common.seed {
        cfgs = cfgs.into_iter().map(|c| c.with_seed(seed)).collect();
    }
    Ok(cfgs)
}

fn one_config(common: &Common) -> std::result::Result<Option<RunConfig>, Failure> {
    let mut cfgs = load_configs(common)?;
    if cfgs.len() > 1 {
        return Err(usage(Error::invalid("this subcommand takes at most one --config")));
    }
    Ok(cfgs.pop())
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>, name: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.out.clone()))
        .unwrap_or_else(|| Path::new(DEFAULT_OUT).join(name))
}

fn finish(report: &RunReport, quiet: bool, out: &mut dyn Write) -> i32 {
    let ok = report.passed();
    if !quiet || !ok {
        let _ = writeln!(out, "== {}", report.title);
        let _ = write!(out, "{}", report.verdict_table());
        let _ = writeln!(out, "passed = {ok}");
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_FAIL
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    match cmd {
        Command::Simulate { common } => cmd_simulate(&common, out),
        Command::VerifyLifted { common, suite, gamma, samples } => cmd_lifted(&common, &suite, &gamma, samples, out),
        Command::Probe { common, suite, samples } => cmd_probe(&common, &suite, samples, out),
        Command::CompareBlowup { common } => cmd_blowup(&common, out),
        Command::Plot { csv, column, x, log_y, title, out: target } => {
            let style = PlotStyle { log_y, x_column: x, title, ..Default::default() };
            let target = target.unwrap_or_else(|| csv.with_extension("svg"));
            plot(&csv, &column, &style, &target).map_err(|e| match e {
                Error::Io(_) => Failure::Run(e),
                other => Failure::Usage(other),
            })?;
            let _ = writeln!(out, "wrote {}", target.display());
            Ok(EXIT_OK)
        }
    }
}

fn cmd_simulate(common: &Common, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let mut cfgs = load_configs(common)?;
    if cfgs.is_empty() {
        let c = RunConfig::reference();
        cfgs.push(match common.seed {
            Some(s) => c.with_seed(s),
            None => c,
        });
    }
    for c in &cfgs {
        c.solver().map_err(usage)?;
    }
    let dirs: Vec<PathBuf> = if cfgs.len() == 1 {
        vec![out_dir(common, Some(&cfgs[0]), &cfgs[0].scenario)]
    } else {
        let mut names: Vec<&str> = cfgs.iter().map(|c| c.scenario.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(usage(Error::invalid("scenario names must be unique when running several configs")));
        }
        let root = common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        cfgs.iter().map(|c| c.out.clone().unwrap_or_else(|| root.join(&c.scenario))).collect()
    };
    let runs: Vec<(&RunConfig, Option<&Path>)> = cfgs.iter().zip(&dirs).map(|(c, d)| (c, Some(d.as_path()))).collect();
    let results = simulate_all(&runs);
    let mut code = EXIT_OK;
    for (res, dir) in results.into_iter().zip(&dirs) {
        let sim = res.map_err(runtime)?;
        code = code.max(finish(&sim.report, common.quiet, out));
        if !common.quiet {
            let _ = writeln!(out, "wrote {}", dir.display());
        }
    }
    Ok(code)
}

fn cmd_lifted(
    common: &Common,
    suites: &[String],
    gammas: &[f64],
    samples: Option<u64>,
    out: &mut dyn Write,
) -> std::result::Result<i32, Failure> {
    let cfg = one_config(common)?;
    let section = cfg.as_ref().map(|c| c.lifted.clone()).unwrap_or_default();
    let names = if suites.is_empty() { section.suites.clone() } else { suites.to_vec() };
    let selected: Vec<Suite> = if names.is_empty() {
        Suite::ALL.to_vec()
    } else {
        names.iter().map(|n| Suite::parse(n)).collect::<Result<_>>().map_err(usage)?
    };
    let defaults = LiftedOptions::default();
    let opts = LiftedOptions {
        gammas: if gammas.is_empty() { section.gammas.clone() } else { gammas.to_vec() },
        samples: samples.or(section.samples).unwrap_or(defaults.samples),
        points: section.points.unwrap_or(defaults.points),
        seed: common.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(defaults.seed),
    };
    if opts.samples < 2 || opts.points == 0 {
        return Err(usage(Error::invalid("samples must be at least 2 and points at least 1")));
    }
    let mut report = RunReport::new("verify-lifted", cfg.as_ref().map_or(String::new(), |c| c.source().to_string()));
    let names: Vec<&str> = selected.iter().map(|s| s.name()).collect();
    report.overrides = vec![
        ("suites".into(), names.join(",")),
        ("gammas".into(), opts.gammas.iter().map(|g| g.to_string()).collect::<Vec<_>>().join(",")),
        ("samples".into(), opts.samples.to_string()),
        ("points".into(), opts.points.to_string()),
        ("seed".into(), opts.seed.to_string()),
    ];
    let mut suite_reports = Vec::new();
    for s in selected {
        match lifted::verify(s, &opts) {
            Ok(rep) => {
                for r in &rep.rows {
                    report.verdicts.push(VerdictRow::new(
                        format!("{}: {}", r.suite, r.identity),
                        r.verdict,
                        r.lhs - r.rhs,
                        format!("lhs {:e}, rhs {:e}, stderr {:e}", r.lhs, r.rhs, r.stderr),
                    ));
                }
                suite_reports.push(rep);
            }
            Err(e) => report.verdicts.push(VerdictRow::new(s.name(), Verdict::Fail, f64::NAN, e.to_string())),
        }
    }
    let dir = out_dir(common, cfg.as_ref(), "verify-lifted");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Run(e.into()))?;
    let file = std::fs::File::create(dir.join("lifted.csv")).map_err(|e| Failure::Run(e.into()))?;
    lifted::write_csv(&suite_reports, std::io::BufWriter::new(file)).map_err(Failure::Run)?;
    report.manifest.push("lifted.csv".into());
    report.write(&dir).map_err(Failure::Run)?;
    Ok(finish(&report, common.quiet, out))
}

fn cmd_probe(common: &Common, lemmas: &[String], families: Option<usize>, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let cfg = one_config(common)?;
    let section = cfg.as_ref().map(|c| c.probe.clone()).unwrap_or_default();
    let names = if lemmas.is_empty() { section.lemmas.clone() } else { lemmas.to_vec() };
    let selected: Vec<Lemma> = if names.is_empty() {
        Lemma::all().to_vec()
    } else {
        names.iter().map(|n| Lemma::parse(n)).collect::<Result<_>>().map_err(usage)?
    };
    let families = families.or(section.families);
    if families == Some(0) {
        return Err(usage(Error::invalid("family size must be at least 1")));
    }
    let seed = common.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let mut report = RunReport::new("probe", cfg.as_ref().map_or(String::new(), |c| c.source().to_string()));
    report.overrides.push(("seed".into(), seed.to_string()));
    if let Some(n) = families {
        report.overrides.push(("families".into(), n.to_string()));
    }
    let mut csv = format!("{}\n", crate::kernels::ProbeReport::csv_header());
    for (k, lemma) in selected.into_iter().enumerate() {
        let mut params = ProbeParams::defaults(lemma);
        if let Some(n) = families {
            params.families = n;
        }
        match probe_inequality(lemma, &params, sub_seed(seed, k as u64)) {
            Ok(rep) => {
                for line in rep.csv_rows() {
                    csv.push_str(&line);
                    csv.push('\n');
                }
                let name = lemma.name();
                report.verdicts.push(VerdictRow::check(
                    format!("{name} max_ratio"),
                    rep.max_ratio.is_finite() && rep.max_ratio > 0.0,
                    rep.max_ratio,
                    rep.hypotheses.clone(),
                ));
                let mut detail = format!("rescaled by lambda^{}", rep.skeleton_exponent);
                for n in &rep.notes {
                    detail.push_str("; ");
                    detail.push_str(n);
                }
                report.verdicts.push(VerdictRow::check(
                    format!("{name} dilation_variation"),
                    rep.skeleton_variation <= 0.05,
                    rep.skeleton_variation,
                    detail,
                ));
            }
            Err(e) => report.verdicts.push(VerdictRow::new(lemma.name(), Verdict::Fail, f64::NAN, e.to_string())),
        }
    }
    let dir = out_dir(common, cfg.as_ref(), "probe");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Run(e.into()))?;
    std::fs::write(dir.join("probe.csv"), csv).map_err(|e| Failure::Run(e.into()))?;
    report.manifest.push("probe.csv".into());
    report.write(&dir).map_err(Failure::Run)?;
    Ok(finish(&report, common.quiet, out))
}

fn cmd_blowup(common: &Common, out: &mut dyn Write) -> std::result::Result<i32, Failure> {
    let cfg = one_config(common)?;
    let params = cfg.as_ref().map(|c| c.blowup.clone()).unwrap_or_default();
    let rep = compare_blowup(&params).map_err(runtime)?;
    let mut report = RunReport::new("compare-blowup", cfg.as_ref().map_or(String::new(), |c| c.source().to_string()));
    report.overrides = vec![
        ("amplitude".into(), params.amplitude.to_string()),
        ("sigma".into(), params.sigma.to_string()),
        ("horizon".into(), params.horizon.to_string()),
        ("dt_list".into(), params.dt_list.iter().map(|d| format!("{d:e}")).collect::<Vec<_>>().join(",")),
        ("ks_dt".into(), format!("{:e}", params.ks_dt)),
    ];
    report.verdicts = rep.verdicts();
    let dir = out_dir(common, cfg.as_ref(), "compare-blowup");
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Run(e.into()))?;
    let file = std::fs::File::create(dir.join("blowup.csv")).map_err(|e| Failure::Run(e.into()))?;
    rep.write_csv(std::io::BufWriter::new(file)).map_err(Failure::Run)?;
    report.manifest.push("blowup.csv".into());
    report.write(&dir).map_err(Failure::Run)?;
    Ok(finish(&report, common.quiet, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let mut argv = vec!["ksflow"];
        argv.extend_from_slice(args);
        let code = run_cli(argv, &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn unknown_subcommand_and_flag_are_usage_errors() {
        assert_eq!(run(&["bogus"]).0, EXIT_USAGE);
        assert_eq!(run(&["simulate", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run(&[]).0, EXIT_USAGE);
        assert_eq!(run(&["--help"]).0, EXIT_OK);
    }

    #[test]
    fn bad_suite_name_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, _, err) = run(&["verify-lifted", "--suite", "nope", "--out", d]);
        assert_eq!(code, EXIT_USAGE, "{err}");
    }

    #[test]
    fn frames_suite_passes() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, out, err) = run(&["verify-lifted", "--suite", "frames", "--out", d, "--quiet"]);
        assert_eq!(code, EXIT_OK, "{out}{err}");
        assert!(out.is_empty());
        let csv = std::fs::read_to_string(dir.path().join("lifted.csv")).unwrap();
        assert!(csv.starts_with("suite,identity,lhs,rhs,stderr,verdict\nframes,"));
    }

    #[test]
    fn negative_gammas_parse() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, out, err) =
            run(&["verify-lifted", "--suite", "commutators", "--gamma", "-2.5", "--gamma", "-1", "--out", d]);
        assert_eq!(code, EXIT_OK, "{out}{err}");
        assert!(out.contains("gamma=-2.5") && !out.contains("gamma=0"), "{out}");
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "scenario = \"x\"\nbogus = 1\n").unwrap();
        let (code, _, err) = run(&["simulate", "--config", p.to_str().unwrap()]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn plot_missing_column_names_it() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("d.csv");
        std::fs::write(&csv, "t,fisher\n0,1\n").unwrap();
        let (code, _, err) = run(&["plot", csv.to_str().unwrap(), "--column", "energy"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("energy"));
        let (code, _, _) = run(&["plot", csv.to_str().unwrap(), "--column", "fisher"]);
        assert_eq!(code, EXIT_OK);
        assert!(dir.path().join("d.svg").exists());
    }
}
