//! Semilinear heat versus the Coulomb Krieger-Strain flow from the same data.

use std::io::Write;

use super::report::VerdictRow;
use crate::error::{Error, Result};
use crate::fields::{RadialField, RadialGrid};
use crate::kernels::Potential;
use crate::lifted::Verdict;
use crate::solver::{ks_max_trace, semilinear_run, MaxTrace, PositivityPolicy, Scheme, SolverConfig};

/// Twin-run parameters. Data are `amplitude·exp(−r²/2σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupParams {
    pub amplitude: f64,
    pub sigma: f64,
    pub horizon: f64,
    /// Step sizes for the semilinear run; detector times are compared across them.
    pub dt_list: Vec<f64>,
    /// Step size for the Krieger-Strain twin.
    pub ks_dt: f64,
    pub n_cells: usize,
    pub r_max: f64,
    pub threshold: f64,
}

impl Default for BlowupParams {
    fn default() -> Self {
        Self {
            amplitude: 50.0,
            sigma: 1.0,
            horizon: 0.1,
            dt_list: vec![1e-4, 1e-5],
            ks_dt: 1e-5,
            n_cells: 512,
            r_max: 12.0,
            threshold: 1e6,
        }
    }
}

impl BlowupParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::invalid(format!("amplitude must be nonnegative, got {}", self.amplitude)));
        }
        let positive = [self.sigma, self.horizon, self.ks_dt, self.r_max, self.threshold];
        if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::invalid("sigma, horizon, ks_dt, r_max and threshold must be positive"));
        }
        if self.dt_list.is_empty() || self.dt_list.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("dt_list needs at least one positive step"));
        }
        RadialGrid::new(self.n_cells, self.r_max).map(|_| ())
    }

    fn data(&self) -> Result<RadialField> {
        let (a, s) = (self.amplitude, self.sigma);
        RadialField::from_fn(RadialGrid::new(self.n_cells, self.r_max)?, |r| a * (-r * r / (2.0 * s * s)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// Semilinear twin blows up, Krieger-Strain twin stays bounded.
    Contrast,
    BothBlowUp,
    NeitherBlowsUp,
    /// Only the Krieger-Strain twin crossed the threshold.
    KriegerStrainOnly,
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Contrast => "contrast",
            Outcome::BothBlowUp => "both-blow-up",
            Outcome::NeitherBlowsUp => "neither-blows-up",
            Outcome::KriegerStrainOnly => "krieger-strain-only",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlowupReport {
    pub params: BlowupParams,
    /// One semilinear trace per entry of `dt_list`.
    pub semilinear: Vec<MaxTrace>,
    pub ks: MaxTrace,
    /// `(max − min)/min` of the detector times, when every run fired.
    pub detector_spread: Option<f64>,
    /// `max_t ‖f(t)‖_∞ / ‖f(0)‖_∞`, 0 for zero data.
    pub ks_max_ratio: f64,
    pub ks_mass_drift: f64,
    pub outcome: Outcome,
}

/// Runs both twins from identical data.
pub fn compare_blowup(params: &BlowupParams) -> Result<BlowupReport> {
    params.validate()?;
    let u0 = params.data()?;
    let semilinear = params
        .dt_list
        .iter()
        .map(|&dt| semilinear_run(&u0, dt, params.horizon, params.threshold))
        .collect::<Result<Vec<_>>>()?;
    let cfg = SolverConfig {
        potential: Potential::power_law(-3.0)?,
        n_cells: params.n_cells,
        r_max: params.r_max,
        dt: params.ks_dt,
        t_end: params.horizon,
        scheme: Scheme::SemiImplicitFv,
        output_stride: 1,
        positivity: PositivityPolicy::Assert,
        seed: 0,
        keep_snapshots: false,
        checkpoint_stride: None,
    };
    let ks = ks_max_trace(&cfg, &u0, params.threshold)?;
    let times: Vec<f64> = semilinear.iter().filter_map(|t| t.detector_time).collect();
    let detector_spread = (times.len() == semilinear.len()).then(|| {
        let lo = times.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = times.iter().copied().fold(0.0, f64::max);
        (hi - lo) / lo
    });
    let peak0 = ks.max_values[0];
    let ks_max_ratio = if peak0 > 0.0 { ks.max_values.iter().copied().fold(0.0, f64::max) / peak0 } else { 0.0 };
    let m0 = ks.mass[0];
    let ks_mass_drift = if m0 > 0.0 { ks.mass.iter().map(|m| ((m - m0) / m0).abs()).fold(0.0, f64::max) } else { 0.0 };
    let semi_fired = !times.is_empty();
    let outcome = match (semi_fired, ks.detector_time.is_some()) {
        (true, false) => Outcome::Contrast,
        (true, true) => Outcome::BothBlowUp,
        (false, false) => Outcome::NeitherBlowsUp,
        (false, true) => Outcome::KriegerStrainOnly,
    };
    Ok(BlowupReport { params: params.clone(), semilinear, ks, detector_spread, ks_max_ratio, ks_mass_drift, outcome })
}

impl BlowupReport {
    /// Detector rows are skipped when the semilinear twin never fires; the
    /// outcome itself is recorded, not asserted.
    pub fn verdicts(&self) -> Vec<VerdictRow> {
        let p = &self.params;
        let mut rows = vec![VerdictRow::new("outcome", Verdict::Info, 0.0, self.outcome.name())];
        for (dt, tr) in p.dt_list.iter().zip(&self.semilinear) {
            let name = format!("semilinear_detector(dt={dt:e})");
            rows.push(match tr.detector_time {
                Some(t) => VerdictRow::check(name, t < p.horizon, t, format!("max > {:e} before t = {}", p.threshold, p.horizon)),
                None => VerdictRow::new(name, Verdict::Skipped, f64::NAN, "detector did not fire"),
            });
        }
        rows.push(match self.detector_spread {
            Some(s) => VerdictRow::check("detector_convergence", s <= 0.1, s, "(max-min)/min of detector times <= 0.1"),
            None => VerdictRow::new("detector_convergence", Verdict::Skipped, f64::NAN, "not every run fired"),
        });
        rows.push(VerdictRow::check(
            "ks_max_bound",
            self.ks_max_ratio <= 2.0,
            self.ks_max_ratio,
            format!("max |f|_inf / |f(0)|_inf over t <= {}", p.horizon),
        ));
        rows.push(VerdictRow::check("ks_mass", self.ks_mass_drift <= 1e-10, self.ks_mass_drift, "|M(t)-M(0)|/M(0)"));
        rows
    }

    /// Max-value traces, columns `model,dt,t,max,mass`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fmt = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["model", "dt", "t", "max", "mass"]).map_err(fmt)?;
        let traces = self
            .params
            .dt_list
            .iter()
            .zip(&self.semilinear)
            .map(|(dt, tr)| ("semilinear", *dt, tr))
            .chain(std::iter::once(("krieger-strain", self.params.ks_dt, &self.ks)));
        for (model, dt, tr) in traces {
            for k in 0..tr.times.len() {
                w.write_record([
                    model.to_string(),
                    format!("{dt:e}"),
                    format!("{:e}", tr.times[k]),
                    format!("{:e}", tr.max_values[k]),
                    format!("{:e}", tr.mass[k]),
                ])
                .map_err(fmt)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(amplitude: f64) -> BlowupParams {
        BlowupParams { amplitude, horizon: 0.01, dt_list: vec![1e-3], ks_dt: 1e-4, n_cells: 64, ..Default::default() }
    }

    #[test]
    fn zero_amplitude_gives_zero_traces() {
        let rep = compare_blowup(&small(0.0)).unwrap();
        assert!(rep.semilinear[0].max_values.iter().all(|v| *v == 0.0));
        assert!(rep.ks.max_values.iter().all(|v| *v == 0.0));
        assert_eq!(rep.outcome, Outcome::NeitherBlowsUp);
        assert!(rep.verdicts().iter().all(|v| v.verdict != Verdict::Fail));
    }

    #[test]
    fn small_data_neither_blows_up() {
        let rep = compare_blowup(&small(1.0)).unwrap();
        assert_eq!(rep.outcome, Outcome::NeitherBlowsUp);
        assert!(rep.ks_mass_drift < 1e-12);
        let skipped = rep.verdicts().iter().filter(|v| v.verdict == Verdict::Skipped).count();
        assert_eq!(skipped, 2);
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(compare_blowup(&BlowupParams { amplitude: -1.0, ..small(1.0) }).is_err());
        assert!(compare_blowup(&BlowupParams { dt_list: vec![], ..small(1.0) }).is_err());
    }

    #[test]
    fn csv_has_one_block_per_trace() {
        let rep = compare_blowup(&small(1.0)).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines = text.lines().count();
        assert_eq!(lines, 1 + rep.semilinear[0].times.len() + rep.ks.times.len());
        assert!(text.starts_with("model,dt,t,max,mass\nsemilinear,"));
    }
}
