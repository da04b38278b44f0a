//! Run configuration files.
//!
//! A config is flat TOML: top-level keys plus `[solver]`, `[initial]`,
//! `[diagnostics]`, `[blowup]`, `[probe]` and `[lifted]` sections. Unknown keys
//! are errors. The text is kept verbatim so reports can echo it.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::blowup::BlowupParams;
use super::report::Monitor;
use crate::error::{Error, Result};
use crate::fields::{gaussian_field, CartesianField3, CartesianGrid3, RadialField, RadialGrid};
use crate::kernels::Potential;
use crate::solver::{PositivityPolicy, Scheme, SolverConfig};

/// The reference scenario: γ = −3, unit Gaussian, `n = 512`, `r_max = 12`, `dt = 10⁻⁴`, `t_end = 0.5`.
pub const REFERENCE_CONFIG: &str = r#"scenario = "reference"
seed = 0

[solver]
gamma = -3.0
n_cells = 512
r_max = 12.0
dt = 1e-4
t_end = 0.5
scheme = "semi-implicit-fv"
output_stride = 50
positivity = "assert"

[initial]
sigma = 1.0
mass = 1.0

[diagnostics]
monotonicity_tol = 1e-8
"#;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: String,
    #[serde(default)]
    seed: u64,
    out: Option<PathBuf>,
    solver: Option<RawSolver>,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    diagnostics: RawDiagnostics,
    blowup: Option<RawBlowup>,
    probe: Option<RawProbe>,
    lifted: Option<RawLifted>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    gamma: Option<f64>,
    /// CSV with columns `r,alpha,dalpha`, relative to the config file.
    alpha_table: Option<PathBuf>,
    n_cells: usize,
    r_max: f64,
    dt: f64,
    t_end: f64,
    scheme: Option<String>,
    output_stride: Option<u64>,
    positivity: Option<String>,
    checkpoint_stride: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    sigma: Option<f64>,
    mass: Option<f64>,
    peak: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiagnostics {
    monitors: Option<Vec<String>>,
    monotonicity_tol: Option<f64>,
    energy_tol: Option<f64>,
    mass_tol: Option<f64>,
    j2_samples: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBlowup {
    amplitude: Option<f64>,
    sigma: Option<f64>,
    horizon: Option<f64>,
    dt_list: Option<Vec<f64>>,
    ks_dt: Option<f64>,
    n_cells: Option<usize>,
    r_max: Option<f64>,
    threshold: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProbe {
    lemmas: Option<Vec<String>>,
    families: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLifted {
    suites: Option<Vec<String>>,
    gammas: Option<Vec<f64>>,
    samples: Option<u64>,
    points: Option<usize>,
}

/// Initial radial profile, a centred Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialData {
    /// Total mass given.
    Gaussian { sigma: f64, mass: f64 },
    /// Peak value given, `peak·exp(−r²/2σ²)`.
    Peaked { sigma: f64, peak: f64 },
}

impl InitialData {
    fn profile(&self) -> (f64, f64) {
        match *self {
            InitialData::Gaussian { sigma, mass } => {
                (sigma, mass * (2.0 * std::f64::consts::PI * sigma * sigma).powf(-1.5))
            }
            InitialData::Peaked { sigma, peak } => (sigma, peak),
        }
    }

    pub fn radial(&self, grid: RadialGrid) -> Result<RadialField> {
        match *self {
            InitialData::Gaussian { sigma, mass } => gaussian_field(grid, sigma, mass),
            InitialData::Peaked { .. } => {
                let (s, p) = self.profile();
                RadialField::from_fn(grid, |r| p * (-r * r / (2.0 * s * s)).exp())
            }
        }
    }

    pub fn cartesian(&self, grid: CartesianGrid3) -> Result<CartesianField3> {
        let (s, p) = self.profile();
        CartesianField3::from_fn(grid, |x| p * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * s * s)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative per-step increase allowed for Fisher information and entropy.
    pub monotonicity: f64,
    /// Relative energy-identity residual.
    pub energy: f64,
    /// Relative mass drift, on top of the leaked-flux budget.
    pub mass: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { monotonicity: 1e-8, energy: 1e-2, mass: 1e-10 }
    }
}

/// Options for the `verify-lifted` subcommand read from a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LiftedSection {
    pub suites: Vec<String>,
    pub gammas: Vec<f64>,
    pub samples: Option<u64>,
    pub points: Option<usize>,
}

/// Options for the `probe` subcommand read from a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeSection {
    pub lemmas: Vec<String>,
    pub families: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    /// Output directory from the file; the command line may override it.
    pub out: Option<PathBuf>,
    pub solver: Option<SolverConfig>,
    pub initial: InitialData,
    pub monitors: Vec<Monitor>,
    pub tolerances: Tolerances,
    pub j2_samples: u64,
    pub blowup: BlowupParams,
    pub probe: ProbeSection,
    pub lifted: LiftedSection,
    /// Command-line values that replaced entries of the file.
    pub overrides: Vec<(String, String)>,
    source: String,
}

impl RunConfig {
    /// Parses and validates config text. `base` resolves relative table paths.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {}", e.message())))?;
        if raw.scenario.trim().is_empty() {
            return Err(Error::invalid("config: scenario must not be empty"));
        }
        let solver = raw.solver.map(|s| solver_config(s, raw.seed, base)).transpose()?;
        let sigma = raw.initial.sigma.unwrap_or(1.0);
        let initial = match (raw.initial.mass, raw.initial.peak) {
            (Some(_), Some(_)) => return Err(Error::invalid("config: give either initial.mass or initial.peak")),
            (_, Some(peak)) => InitialData::Peaked { sigma, peak },
            (mass, None) => InitialData::Gaussian { sigma, mass: mass.unwrap_or(1.0) },
        };
        let (sig, amp) = match initial {
            InitialData::Gaussian { sigma, mass } => (sigma, mass),
            InitialData::Peaked { sigma, peak } => (sigma, peak),
        };
        if !(sig > 0.0 && sig.is_finite() && amp >= 0.0 && amp.is_finite()) {
            return Err(Error::invalid("config: initial data needs sigma > 0 and a nonnegative amplitude"));
        }
        let d = raw.diagnostics;
        let monitors = match d.monitors {
            None => Monitor::ALL.to_vec(),
            Some(names) => {
                let mut out = Vec::new();
                for n in names {
                    let m = Monitor::parse(&n)?;
                    if !out.contains(&m) {
                        out.push(m);
                    }
                }
                out
            }
        };
        let def = Tolerances::default();
        let tolerances = Tolerances {
            monotonicity: d.monotonicity_tol.unwrap_or(def.monotonicity),
            energy: d.energy_tol.unwrap_or(def.energy),
            mass: d.mass_tol.unwrap_or(def.mass),
        };
        if [tolerances.monotonicity, tolerances.energy, tolerances.mass].iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::invalid("config: tolerances must be finite and nonnegative"));
        }
        let mut blowup = BlowupParams::default();
        if let Some(b) = raw.blowup {
            blowup = BlowupParams {
                amplitude: b.amplitude.unwrap_or(blowup.amplitude),
                sigma: b.sigma.unwrap_or(blowup.sigma),
                horizon: b.horizon.unwrap_or(blowup.horizon),
                dt_list: b.dt_list.unwrap_or(blowup.dt_list),
                ks_dt: b.ks_dt.unwrap_or(blowup.ks_dt),
                n_cells: b.n_cells.unwrap_or(blowup.n_cells),
                r_max: b.r_max.unwrap_or(blowup.r_max),
                threshold: b.threshold.unwrap_or(blowup.threshold),
            };
        }
        blowup.validate()?;
        let probe = raw
            .probe
            .map(|p| ProbeSection { lemmas: p.lemmas.unwrap_or_default(), families: p.families })
            .unwrap_or_default();
        let lifted = raw
            .lifted
            .map(|l| LiftedSection {
                suites: l.suites.unwrap_or_default(),
                gammas: l.gammas.unwrap_or_default(),
                samples: l.samples,
                points: l.points,
            })
            .unwrap_or_default();
        Ok(Self {
            scenario: raw.scenario,
            seed: raw.seed,
            out: raw.out,
            solver,
            initial,
            monitors,
            tolerances,
            j2_samples: d.j2_samples.unwrap_or(1_000_000),
            blowup,
            probe,
            lifted,
            overrides: Vec::new(),
            source: text.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent())
    }

    pub fn reference() -> Self {
        Self::parse(REFERENCE_CONFIG, None).expect("reference config is valid")
    }

    /// The config text exactly as read.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.overrides.push(("seed".into(), seed.to_string()));
        if let Some(s) = self.solver.as_mut() {
            s.seed = seed;
        }
        self
    }

    pub fn solver(&self) -> Result<&SolverConfig> {
        self.solver.as_ref().ok_or_else(|| Error::invalid(format!("config '{}' has no [solver] section", self.scenario)))
    }
}

fn solver_config(s: RawSolver, seed: u64, base: Option<&Path>) -> Result<SolverConfig> {
    let potential = match (s.gamma, s.alpha_table) {
        (Some(g), None) => Potential::power_law(g)?,
        (None, Some(path)) => {
            let full = match base {
                Some(b) if path.is_relative() => b.join(&path),
                _ => path,
            };
            read_alpha_table(&full)?
        }
        _ => return Err(Error::invalid("config: [solver] needs exactly one of gamma or alpha_table")),
    };
    let cfg = SolverConfig {
        potential,
        n_cells: s.n_cells,
        r_max: s.r_max,
        dt: s.dt,
        t_end: s.t_end,
        scheme: Scheme::parse(s.scheme.as_deref().unwrap_or("semi-implicit-fv"))?,
        output_stride: s.output_stride.unwrap_or(1),
        positivity: PositivityPolicy::parse(s.positivity.as_deref().unwrap_or("assert"))?,
        seed,
        keep_snapshots: false,
        checkpoint_stride: s.checkpoint_stride,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn read_alpha_table(path: &Path) -> Result<Potential> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column '{name}'", path.display())))
    };
    let (ir, ia, id) = (col("r")?, col("alpha")?, col("dalpha")?);
    let (mut r, mut a, mut d) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("{}: bad number in row {:?}", path.display(), rec)))
        };
        r.push(num(ir)?);
        a.push(num(ia)?);
        d.push(num(id)?);
    }
    Potential::tabulated(r, a, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_matches_solver_reference() {
        let c = RunConfig::reference();
        assert_eq!(c.solver().unwrap(), &SolverConfig::reference(-3.0).unwrap());
        assert_eq!(c.monitors, Monitor::ALL.to_vec());
        assert_eq!(c.source(), REFERENCE_CONFIG);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = REFERENCE_CONFIG.replace("dt = 1e-4", "dt = 1e-4\ncfl = 0.3");
        let err = RunConfig::parse(&bad, None).unwrap_err();
        assert!(err.to_string().contains("cfl"), "{err}");
        let bad = format!("{REFERENCE_CONFIG}\n[extras]\nx = 1\n");
        assert!(RunConfig::parse(&bad, None).is_err());
    }

    #[test]
    fn invalid_values_fail_before_compute() {
        let bad = REFERENCE_CONFIG.replace("gamma = -3.0", "gamma = -1.0");
        assert!(RunConfig::parse(&bad, None).is_err());
        let bad = REFERENCE_CONFIG.replace("dt = 1e-4", "dt = -1e-4");
        assert!(RunConfig::parse(&bad, None).is_err());
        let bad = REFERENCE_CONFIG.replace("mass = 1.0", "mass = 1.0\npeak = 2.0");
        assert!(RunConfig::parse(&bad, None).is_err());
        let bad = REFERENCE_CONFIG.replace("monotonicity_tol = 1e-8", "monitors = [\"fisher\"]");
        assert!(RunConfig::parse(&bad, None).is_err());
    }

    #[test]
    fn alpha_table_is_read_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let mut table = String::from("r,alpha,dalpha\n");
        for k in 0..=40 {
            let r = 0.05 + 0.5 * k as f64;
            table.push_str(&format!("{r},{},{}\n", 1.0 / r, -1.0 / (r * r)));
        }
        std::fs::write(dir.path().join("alpha.csv"), table).unwrap();
        let text = REFERENCE_CONFIG.replace("gamma = -3.0", "alpha_table = \"alpha.csv\"");
        let path = dir.path().join("run.toml");
        std::fs::write(&path, &text).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert!(matches!(c.solver().unwrap().potential, Potential::Tabulated { .. }));
    }

    #[test]
    fn seed_override_reaches_the_solver() {
        let c = RunConfig::reference().with_seed(99);
        assert_eq!(c.seed, 99);
        assert_eq!(c.solver().unwrap().seed, 99);
        assert_eq!(c.overrides, vec![("seed".to_string(), "99".to_string())]);
    }

    #[test]
    fn peaked_initial_data() {
        let text = REFERENCE_CONFIG.replace("mass = 1.0", "peak = 50.0");
        let c = RunConfig::parse(&text, None).unwrap();
        let f = c.initial.radial(RadialGrid::new(64, 8.0).unwrap()).unwrap();
        let r0 = f.grid().center(0);
        assert!((f.values()[0] - 50.0 * (-r0 * r0 / 2.0).exp()).abs() < 1e-12);
    }
}
