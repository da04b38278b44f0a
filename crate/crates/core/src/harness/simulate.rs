//! The `simulate` scenario: one solver run plus its monitors.

use std::path::Path;

use rayon::prelude::*;

use super::config::RunConfig;
use super::report::{Monitor, RunReport, VerdictRow};
use crate::diagnostics::{
    self, cartesian_entropy, cartesian_fisher, entropy_monotonicity_check, fisher_monotonicity_check,
    j2_sign_sampling, linf_envelope, maxpoint_growth_check, moment_growth_check, sobolev_constant_squared,
    DiagnosticsRow,
};
use crate::error::{Error, Result};
use crate::fields::{CartesianGrid3, Trajectory};
use crate::kernels::{gamma_ratio, Potential, RatioWindow};
use crate::lifted::Verdict;
use crate::solver::{run_cartesian, run_detailed, PositivityPolicy, RunOutput, Scheme, SolverConfig};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

/// A finished `simulate` run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub report: RunReport,
    pub rows: Vec<DiagnosticsRow>,
}

/// Runs the scenario, evaluates every enabled monitor and, with `out`, writes
/// the diagnostics CSV and the report there.
pub fn simulate(cfg: &RunConfig, out: Option<&Path>) -> Result<Simulation> {
    let solver = cfg.solver()?;
    let mut report = RunReport::new(cfg.scenario.clone(), cfg.source());
    report.overrides = cfg.overrides.clone();
    let rows = match solver.scheme {
        Scheme::ExplicitCartesian => cartesian(cfg, solver, &mut report)?,
        Scheme::SemiImplicitFv | Scheme::ExplicitFv => radial(cfg, solver, &mut report)?,
    };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let file = std::fs::File::create(dir.join(DIAGNOSTICS_FILE))?;
        diagnostics::write_csv(&rows, std::io::BufWriter::new(file))?;
        report.manifest.push(DIAGNOSTICS_FILE.into());
        report.write(dir)?;
    }
    Ok(Simulation { report, rows })
}

/// Independent scenarios in parallel; each run owns its output directory.
pub fn simulate_all(runs: &[(&RunConfig, Option<&Path>)]) -> Vec<Result<Simulation>> {
    runs.par_iter().map(|(c, dir)| simulate(c, *dir)).collect()
}

fn run_row(failure: Option<&Error>) -> VerdictRow {
    match failure {
        None => VerdictRow::check("run", true, 0.0, "completed"),
        Some(e) => VerdictRow::check("run", false, f64::NAN, e.to_string()),
    }
}

/// Whether Fisher and entropy decay are claimed: `rα′/α` inside the window on the grid.
fn in_window(pot: &Potential, solver: &SolverConfig) -> Result<bool> {
    let w = RatioWindow::fisher();
    if let Some(g) = pot.gamma() {
        return Ok(w.contains(g));
    }
    let grid = solver.grid()?;
    for r in grid.centers() {
        if !w.contains(gamma_ratio(pot, r)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn radial(cfg: &RunConfig, solver: &SolverConfig, report: &mut RunReport) -> Result<Vec<DiagnosticsRow>> {
    let f0 = cfg.initial.radial(solver.grid()?)?;
    let out = run_detailed(solver, &f0)?;
    report.verdicts.push(run_row(out.failure.as_ref()));
    let window = in_window(&solver.potential, solver)?;
    for m in &cfg.monitors {
        report.verdicts.push(radial_monitor(*m, cfg, solver, &out, window)?);
    }
    Ok(out.trajectory.rows)
}

fn skipped(m: Monitor, why: &str) -> VerdictRow {
    VerdictRow::new(m.name(), Verdict::Skipped, 0.0, why)
}

fn radial_monitor(m: Monitor, cfg: &RunConfig, solver: &SolverConfig, out: &RunOutput, window: bool) -> Result<VerdictRow> {
    let traj: &Trajectory = &out.trajectory;
    let rows = &traj.rows;
    let tol = &cfg.tolerances;
    let gamma = solver.potential.gamma();
    let empty = rows.first().map_or(true, |r| r.mass <= 0.0);
    let max_of = |f: &dyn Fn(&DiagnosticsRow) -> f64| rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    Ok(match m {
        Monitor::Mass => {
            let drift = out.max_mass_drift();
            let budget = match rows.first() {
                Some(r0) if r0.mass > 0.0 => rows.last().map_or(0.0, |r| r.leaked) / r0.mass,
                _ => 0.0,
            };
            VerdictRow::check(
                m.name(),
                drift <= tol.mass + budget,
                drift,
                format!("|M(t)-M(0)|/M(0) <= {:e} + leaked budget {budget:e}", tol.mass),
            )
        }
        Monitor::Positivity => {
            let clips = out.total_clips();
            VerdictRow::check(m.name(), clips == 0, clips as f64, format!("clips under {} policy", solver.positivity.name()))
        }
        Monitor::EnergyIdentity => {
            if gamma.is_none() || empty || rows.len() < 3 {
                skipped(m, "needs a power law, nonzero data and three output times")
            } else {
                let worst = rows[1..rows.len() - 1].iter().map(|r| r.energy_residual).fold(0.0, f64::max);
                VerdictRow::check(m.name(), worst <= tol.energy, worst, format!("centered dE2/dt vs 2(5+gamma) int a f, tol {:e}", tol.energy))
            }
        }
        Monitor::EnergyGrowth => {
            if gamma.is_none() || empty {
                skipped(m, "needs a power law and nonzero data")
            } else {
                let worst = rows.windows(2).map(|w| (w[0].energy - w[1].energy) / w[0].energy).fold(0.0, f64::max);
                VerdictRow::check(m.name(), worst <= tol.monotonicity, worst, "largest relative energy decrease")
            }
        }
        Monitor::FisherMonotonicity | Monitor::EntropyMonotonicity => {
            if !window {
                skipped(m, "r alpha'/alpha leaves [2-3 sqrt 3, -2+2 sqrt 2]")
            } else {
                let rep = if m == Monitor::FisherMonotonicity {
                    fisher_monotonicity_check(traj, tol.monotonicity)
                } else {
                    entropy_monotonicity_check(traj, tol.monotonicity)
                };
                VerdictRow::check(
                    m.name(),
                    rep.passed,
                    rep.worst_relative,
                    format!("{} increments above {:e} relative", rep.violations, rep.tol),
                )
            }
        }
        Monitor::Ellipticity => {
            if gamma.is_none() || empty {
                skipped(m, "needs a power law and nonzero data")
            } else {
                let lo = rows.iter().map(|r| r.ellipticity_min).fold(f64::INFINITY, f64::min);
                let hi = max_of(&|r| r.ellipticity_max);
                VerdictRow::check(m.name(), lo > 0.0 && hi.is_finite(), lo, format!("min a/<r>^(2+gamma); max {hi:e}"))
            }
        }
        Monitor::HBound => {
            if gamma.is_none() || empty {
                skipped(m, "needs a power law and nonzero data")
            } else {
                let worst = max_of(&|r| r.h_bound_ratio);
                VerdictRow::check(m.name(), worst.is_finite() && worst > 0.0, worst, "sup h / (M^(1+gamma/3) |f|_inf^(-gamma/3))")
            }
        }
        Monitor::MaxpointGrowth => {
            let grid = solver.grid()?;
            let rep = maxpoint_growth_check(traj, grid.n_cells(), grid.dr(), 0.0);
            VerdictRow::check(
                m.name(),
                rep.passed,
                rep.worst_excess,
                format!("{} times checked, {} on the boundary; worst laplacian {:e}", rep.checked, rep.skipped_boundary, rep.worst_laplacian),
            )
        }
        Monitor::MomentE4 | Monitor::MomentE6 => {
            let k = if m == Monitor::MomentE4 { 4 } else { 6 };
            let rep = moment_growth_check(traj, k, 0.0)?;
            VerdictRow::check(
                m.name(),
                rep.passed,
                rep.worst_excess,
                format!("dE{k}/dt - k(k+1) sup a E{}; fitted C {:e}, literal C {:e}", k - 2, rep.fitted_constant, rep.literal_constant),
            )
        }
        Monitor::LinfEnvelope => {
            let rep = linf_envelope(traj);
            VerdictRow::check(m.name(), rep.passed, rep.tail_slope, format!("tail log-log slope; max |f|_inf min(t,1)^(3/4) = {:e}", rep.observed_k))
        }
        Monitor::L3Sobolev => match rows.first() {
            Some(r0) if r0.fisher > 0.0 => {
                let bound = sobolev_constant_squared() * r0.fisher / 4.0;
                let worst = max_of(&|r| r.l3) / bound;
                VerdictRow::check(m.name(), worst <= 1.0, worst, "max |f|_L3 / (K^2 i(f_in)/4)")
            }
            _ => skipped(m, "zero Fisher information"),
        },
        Monitor::J2Sign => {
            let rep = j2_sign_sampling(cfg.j2_samples, 4, cfg.seed, 1e-12);
            VerdictRow::check(m.name(), rep.passed, rep.min_value, format!("{} samples, {} below -1e-12", rep.samples, rep.negatives_below_tol))
        }
    })
}

fn cartesian(cfg: &RunConfig, solver: &SolverConfig, report: &mut RunReport) -> Result<Vec<DiagnosticsRow>> {
    let grid = CartesianGrid3::new(solver.n_cells, solver.r_max)?;
    let f0 = cfg.initial.cartesian(grid)?;
    let (snaps, failure) = match run_cartesian(solver, &f0) {
        Ok(s) => (s, None),
        Err(e) => (vec![(0.0, f0)], Some(e)),
    };
    report.verdicts.push(run_row(failure.as_ref()));
    let rows: Vec<DiagnosticsRow> = snaps
        .iter()
        .map(|(t, f)| DiagnosticsRow {
            t: *t,
            mass: f.mass(),
            entropy: cartesian_entropy(f),
            fisher: cartesian_fisher(f),
            linf: f.max(),
            ..Default::default()
        })
        .collect();
    let mut traj = Trajectory::default();
    for r in &rows {
        traj.push(r.t, None, r.clone())?;
    }
    diagnostics::finalize_rows(&mut traj.rows);
    let window = in_window(&solver.potential, solver)?;
    let tol = &cfg.tolerances;
    for &m in &cfg.monitors {
        let row = match m {
            Monitor::Mass => {
                let m0 = rows[0].mass;
                let drift = rows.iter().map(|r| if m0 > 0.0 { ((r.mass - m0) / m0).abs() } else { 0.0 }).fold(0.0, f64::max);
                // Explicit Cartesian steps lose mass through the box faces.
                VerdictRow::new(m.name(), Verdict::Info, drift, "mass drift on the open box")
            }
            Monitor::Positivity => VerdictRow::check(
                m.name(),
                failure.is_none() || solver.positivity != PositivityPolicy::Assert,
                0.0,
                format!("{} policy", solver.positivity.name()),
            ),
            Monitor::FisherMonotonicity | Monitor::EntropyMonotonicity if window => {
                let rep = if m == Monitor::FisherMonotonicity {
                    fisher_monotonicity_check(&traj, tol.monotonicity)
                } else {
                    entropy_monotonicity_check(&traj, tol.monotonicity)
                };
                VerdictRow::check(m.name(), rep.passed, rep.worst_relative, format!("{} increments above {:e}", rep.violations, rep.tol))
            }
            _ => skipped(m, "not available for the Cartesian scheme"),
        };
        report.verdicts.push(row);
    }
    Ok(traj.rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::REFERENCE_CONFIG;

    fn short(extra: &str) -> RunConfig {
        let text = REFERENCE_CONFIG
            .replace("n_cells = 512", "n_cells = 128")
            .replace("t_end = 0.5", "t_end = 0.02")
            .replace("output_stride = 50", "output_stride = 10")
            .replace("monotonicity_tol = 1e-8", &format!("monotonicity_tol = 1e-8\nj2_samples = 10000\n{extra}"));
        RunConfig::parse(&text, None).unwrap()
    }

    #[test]
    fn every_enabled_monitor_appears_once() {
        let cfg = short("");
        let sim = simulate(&cfg, None).unwrap();
        assert_eq!(sim.report.verdicts[0].monitor, "run");
        let names: Vec<_> = sim.report.verdicts[1..].iter().map(|v| v.monitor.as_str()).collect();
        let expected: Vec<_> = Monitor::ALL.iter().map(|m| m.name()).collect();
        assert_eq!(names, expected);
        assert!(sim.report.passed(), "{}", sim.report.verdict_table());
    }

    #[test]
    fn monitor_selection_is_respected() {
        let cfg = short("monitors = [\"mass\", \"fisher_monotonicity\"]");
        let sim = simulate(&cfg, None).unwrap();
        assert_eq!(sim.report.verdicts.len(), 3);
    }

    #[test]
    fn zero_data_skips_the_relative_monitors() {
        let text = short("").source().replace("mass = 1.0", "mass = 0.0");
        let sim = simulate(&RunConfig::parse(&text, None).unwrap(), None).unwrap();
        assert!(sim.report.passed(), "{}", sim.report.verdict_table());
        assert!(sim.rows.iter().all(|r| r.mass == 0.0 && r.linf == 0.0));
        let energy = sim.report.verdicts.iter().find(|v| v.monitor == "energy_identity").unwrap();
        assert_eq!(energy.verdict, Verdict::Skipped);
    }

    #[test]
    fn outputs_are_written_and_deterministic() {
        let cfg = short("");
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        simulate(&cfg, Some(a.path())).unwrap();
        simulate(&cfg, Some(b.path())).unwrap();
        for f in [DIAGNOSTICS_FILE, "report.txt"] {
            let x = std::fs::read(a.path().join(f)).unwrap();
            assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn cartesian_scenario_runs() {
        let text = short("").source().replace("semi-implicit-fv", "explicit-cartesian").replace("n_cells = 128", "n_cells = 16").replace(
            "r_max = 12.0",
            "r_max = 5.0",
        );
        let text = text.replace("dt = 1e-4", "dt = 1e-3").replace("t_end = 0.02", "t_end = 0.01");
        let sim = simulate(&RunConfig::parse(&text, None).unwrap(), None).unwrap();
        assert_eq!(sim.report.verdicts[0].verdict, Verdict::Pass);
        assert_eq!(sim.rows.len(), 2);
    }
}
