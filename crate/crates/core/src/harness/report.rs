//! Verdict tables and run reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::lifted::Verdict;

/// Monitors a `simulate` run can enable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Monitor {
    Mass,
    Positivity,
    EnergyIdentity,
    EnergyGrowth,
    FisherMonotonicity,
    EntropyMonotonicity,
    Ellipticity,
    HBound,
    MaxpointGrowth,
    MomentE4,
    MomentE6,
    LinfEnvelope,
    L3Sobolev,
    J2Sign,
}

impl Monitor {
    pub const ALL: [Monitor; 14] = [
        Monitor::Mass,
        Monitor::Positivity,
        Monitor::EnergyIdentity,
        Monitor::EnergyGrowth,
        Monitor::FisherMonotonicity,
        Monitor::EntropyMonotonicity,
        Monitor::Ellipticity,
        Monitor::HBound,
        Monitor::MaxpointGrowth,
        Monitor::MomentE4,
        Monitor::MomentE6,
        Monitor::LinfEnvelope,
        Monitor::L3Sobolev,
        Monitor::J2Sign,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Monitor::Mass => "mass",
            Monitor::Positivity => "positivity",
            Monitor::EnergyIdentity => "energy_identity",
            Monitor::EnergyGrowth => "energy_growth",
            Monitor::FisherMonotonicity => "fisher_monotonicity",
            Monitor::EntropyMonotonicity => "entropy_monotonicity",
            Monitor::Ellipticity => "ellipticity",
            Monitor::HBound => "h_bound",
            Monitor::MaxpointGrowth => "maxpoint_growth",
            Monitor::MomentE4 => "moment_e4",
            Monitor::MomentE6 => "moment_e6",
            Monitor::LinfEnvelope => "linf_envelope",
            Monitor::L3Sobolev => "l3_sobolev",
            Monitor::J2Sign => "j2_sign",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown monitor '{s}' (known: {})", names.join(", ")))
            })
    }
}

/// One line of a verdict table.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub monitor: String,
    pub verdict: Verdict,
    /// The quantity the verdict was decided on, at its worst over the run.
    pub worst: f64,
    pub detail: String,
}

impl VerdictRow {
    pub fn new(monitor: impl Into<String>, verdict: Verdict, worst: f64, detail: impl Into<String>) -> Self {
        Self { monitor: monitor.into(), verdict, worst, detail: detail.into() }
    }

    pub fn check(monitor: impl Into<String>, ok: bool, worst: f64, detail: impl Into<String>) -> Self {
        Self::new(monitor, if ok { Verdict::Pass } else { Verdict::Fail }, worst, detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Name of the subcommand or scenario.
    pub title: String,
    /// Configuration text exactly as read, or the effective options.
    pub config_echo: String,
    /// Command-line values that replaced config entries.
    pub overrides: Vec<(String, String)>,
    pub verdicts: Vec<VerdictRow>,
    /// Files written, relative to the output directory.
    pub manifest: Vec<String>,
}

pub const REPORT_FILE: &str = "report.txt";

impl RunReport {
    pub fn new(title: impl Into<String>, config_echo: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            config_echo: config_echo.into(),
            overrides: Vec::new(),
            verdicts: Vec::new(),
            manifest: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.verdict != Verdict::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerdictRow> {
        self.verdicts.iter().filter(|v| v.verdict == Verdict::Fail)
    }

    /// Aligned plain-text table.
    pub fn verdict_table(&self) -> String {
        let w = self.verdicts.iter().map(|v| v.monitor.len()).max().unwrap_or(7).max(7);
        let mut s = format!("{:<w$}  {:<7}  {:>13}  detail\n", "monitor", "verdict", "worst");
        for v in &self.verdicts {
            let _ = writeln!(s, "{:<w$}  {:<7}  {:>13.6e}  {}", v.monitor, v.verdict.name(), v.worst, v.detail);
        }
        s
    }

    /// Full report text. Deterministic: no clocks, no host details.
    pub fn render(&self) -> String {
        let mut s = format!("# ksflow report: {}\n\n## config\n", self.title);
        s.push_str(&self.config_echo);
        if !self.config_echo.ends_with('\n') {
            s.push('\n');
        }
        if !self.overrides.is_empty() {
            s.push_str("\n## overrides\n");
            for (k, v) in &self.overrides {
                let _ = writeln!(s, "{k} = {v}");
            }
        }
        s.push_str("\n## verdicts\n");
        s.push_str(&self.verdict_table());
        s.push_str("\n## files\n");
        for f in &self.manifest {
            let _ = writeln!(s, "{f}");
        }
        s.push_str("\n## summary\n");
        for v in &self.verdicts {
            let _ = writeln!(s, "{} = {}", v.monitor, v.verdict.name());
        }
        let _ = writeln!(s, "passed = {}", self.passed());
        s
    }

    /// Writes `report.txt` into `dir`, listing itself in the manifest.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        if !self.manifest.iter().any(|f| f == REPORT_FILE) {
            self.manifest.push(REPORT_FILE.to_string());
        }
        let path = dir.join(REPORT_FILE);
        std::fs::write(&path, self.render())?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_names_round_trip() {
        for m in Monitor::ALL {
            assert_eq!(Monitor::parse(m.name()).unwrap(), m);
        }
        let err = Monitor::parse("fisher").unwrap_err().to_string();
        assert!(err.contains("fisher_monotonicity"), "{err}");
    }

    #[test]
    fn report_layout_and_verdict() {
        let mut r = RunReport::new("demo", "scenario = \"demo\"");
        r.overrides.push(("seed".into(), "3".into()));
        r.verdicts.push(VerdictRow::check("mass", true, 1e-15, "drift"));
        r.verdicts.push(VerdictRow::new("h_bound", Verdict::Skipped, 0.0, "no power law"));
        assert!(r.passed());
        let text = r.render();
        assert!(text.contains("## overrides\nseed = 3\n"));
        assert!(text.ends_with("mass = pass\nh_bound = skipped\npassed = true\n"), "{text}");
        r.verdicts.push(VerdictRow::check("energy_identity", false, 0.2, ""));
        assert!(!r.passed());
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn written_report_lists_itself() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunReport::new("demo", "x = 1\n");
        r.manifest.push("diagnostics.csv".into());
        let p = r.write(dir.path()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert!(text.contains("## files\ndiagnostics.csv\nreport.txt\n"));
    }
}
