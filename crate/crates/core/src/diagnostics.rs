//! Functionals of a solution and monitors along a trajectory.
//!
//! Monitors only report; they never stop a run. Every check returns a small
//! report struct whose `passed` field is the verdict.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{integrate_radial, radial_laplacian, CartesianField3, RadialField, Trajectory};
use crate::kernels::{coeff_a, coeff_h, Potential};

const FOUR_PI: f64 = 4.0 * PI;
/// Cells below this value count as vacuum for entropy and Fisher information.
pub const VACUUM: f64 = 1e-30;

/// One row per output time. Column order is [`DiagnosticsRow::COLUMNS`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub entropy: f64,
    pub fisher: f64,
    pub l3: f64,
    pub linf: f64,
    pub e4: f64,
    pub e6: f64,
    /// `min_r a[f](r)/⟨r⟩^{2+γ}`; NaN without a power law.
    pub ellipticity_min: f64,
    pub ellipticity_max: f64,
    /// `sup h / (M^{1+γ/3}‖f‖_∞^{−γ/3})`; 0 when skipped.
    pub h_bound_ratio: f64,
    /// `2(5+γ)∫a[f]f`, the instantaneous energy growth rate.
    pub energy_rate: f64,
    /// Relative gap between the centered `dE₂/dt` and `energy_rate`; 0 at the ends.
    pub energy_residual: f64,
    pub fisher_increment: f64,
    pub entropy_increment: f64,
    /// `‖f‖_∞ · min(t,1)^{3/4}`.
    pub linf_envelope: f64,
    pub sup_a: f64,
    pub argmax: usize,
    /// Discrete Laplacian of `f` at its argmax.
    pub laplacian_at_max: f64,
    /// `−(2+γ)h[f]f` at the argmax.
    pub reaction_at_max: f64,
    pub leaked: f64,
}

impl DiagnosticsRow {
    pub const COLUMNS: [&'static str; 23] = [
        "t",
        "mass",
        "energy",
        "entropy",
        "fisher",
        "l3",
        "linf",
        "e4",
        "e6",
        "ellipticity_min",
        "ellipticity_max",
        "h_bound_ratio",
        "energy_rate",
        "energy_residual",
        "fisher_increment",
        "entropy_increment",
        "linf_envelope",
        "sup_a",
        "argmax",
        "laplacian_at_max",
        "reaction_at_max",
        "leaked",
        "l3_fisher_ratio",
    ];

    /// `‖f‖_{L³}·4/i`, or 0 for a vanishing Fisher information.
    pub fn l3_fisher_ratio(&self) -> f64 {
        if self.fisher > 0.0 {
            4.0 * self.l3 / self.fisher
        } else {
            0.0
        }
    }

    pub fn record(&self) -> Vec<String> {
        let v = [
            self.t,
            self.mass,
            self.energy,
            self.entropy,
            self.fisher,
            self.l3,
            self.linf,
            self.e4,
            self.e6,
            self.ellipticity_min,
            self.ellipticity_max,
            self.h_bound_ratio,
            self.energy_rate,
            self.energy_residual,
            self.fisher_increment,
            self.entropy_increment,
            self.linf_envelope,
            self.sup_a,
        ];
        let mut out: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
        out.push(self.argmax.to_string());
        for x in [self.laplacian_at_max, self.reaction_at_max, self.leaked, self.l3_fisher_ratio()] {
            out.push(format!("{x:e}"));
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<f64> {
        let idx = Self::COLUMNS.iter().position(|c| *c == name)?;
        self.record()[idx].parse().ok()
    }
}

/// Writes the header and one line per row.
pub fn write_csv(rows: &[DiagnosticsRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let fail = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(DiagnosticsRow::COLUMNS).map_err(fail)?;
    for r in rows {
        w.write_record(r.record()).map_err(fail)?;
    }
    w.flush()?;
    Ok(())
}

/// `∫ f log f`, with vacuum cells contributing nothing.
pub fn entropy(f: &RadialField) -> Result<f64> {
    f.check_finite()?;
    let g = f.grid();
    let s: f64 = f
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > VACUUM)
        .map(|(i, &v)| v * v.ln() * g.cell_volume(i))
        .sum();
    Ok(FOUR_PI * s)
}

/// `4∫|∇√f|²` from differences of `√f` across cell faces.
pub fn fisher_information(f: &RadialField) -> Result<f64> {
    f.check_finite()?;
    let g = f.grid();
    let dr = g.dr();
    let root: Vec<f64> = f.values().iter().map(|&v| if v > VACUUM { v.sqrt() } else { 0.0 }).collect();
    let s: f64 = root
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let d = (w[1] - w[0]) / dr;
            g.face(i + 1).powi(2) * dr * d * d
        })
        .sum();
    Ok(4.0 * FOUR_PI * s)
}

pub fn l3_norm(f: &RadialField) -> Result<f64> {
    let g = f.grid();
    let s: f64 = f.values().iter().enumerate().map(|(i, v)| v.abs().powi(3) * g.cell_volume(i)).sum();
    Ok((FOUR_PI * s).cbrt())
}

/// Square of the sharp constant in `‖u‖_{L⁶(R³)} ≤ S‖∇u‖_{L²(R³)}`.
pub fn sobolev_constant_squared() -> f64 {
    let s = (4.0 / PI.sqrt()).cbrt() / (3.0 * PI).sqrt();
    s * s
}

/// `‖f‖_{L³}·4/i(f)`; `None` for a vanishing field.
pub fn l3_fisher_ratio(f: &RadialField) -> Result<Option<f64>> {
    let i = fisher_information(f)?;
    if f.is_zero() || i <= 0.0 {
        return Ok(None);
    }
    Ok(Some(4.0 * l3_norm(f)? / i))
}

fn bracket_power(r: f64, s: f64) -> f64 {
    (1.0 + r * r).powf(0.5 * s)
}

fn ellipticity_from(f: &RadialField, a: &[f64], gamma: f64) -> (f64, f64) {
    let g = f.grid();
    a.iter().enumerate().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (i, &v)| {
        let q = v / bracket_power(g.center(i), 2.0 + gamma);
        (lo.min(q), hi.max(q))
    })
}

/// `(min, max)` over the grid of `a[f](r)/⟨r⟩^{2+γ}`.
pub fn ellipticity_check(f: &RadialField, gamma: f64) -> Result<(f64, f64)> {
    let a = coeff_a(f, &Potential::power_law(gamma)?)?;
    Ok(ellipticity_from(f, a.values(), gamma))
}

fn h_ratio_from(mass: f64, linf: f64, h: &[f64], gamma: f64) -> Option<f64> {
    if !(mass > 0.0 && linf > 0.0) {
        return None;
    }
    let sup = h.iter().copied().fold(0.0, f64::max);
    Some(sup / (mass.powf(1.0 + gamma / 3.0) * linf.powf(-gamma / 3.0)))
}

/// `sup h[f] / (M^{1+γ/3}‖f‖_∞^{−γ/3})`; `None` for a vanishing field.
pub fn h_bound_check(f: &RadialField, gamma: f64) -> Result<Option<f64>> {
    let h = coeff_h(f, &Potential::power_law(gamma)?)?;
    Ok(h_ratio_from(integrate_radial(f, 0.0)?, f.max(), h.values(), gamma))
}

/// Builds a row from a state and coefficients the solver already computed.
pub fn row_from_state(
    t: f64,
    f: &RadialField,
    a: &[f64],
    h: Option<&[f64]>,
    gamma: Option<f64>,
    leaked: f64,
) -> Result<DiagnosticsRow> {
    let g = f.grid();
    let vals = f.values();
    let mass = integrate_radial(f, 0.0)?;
    let linf = f.max().max(0.0);
    let argmax = f.argmax();
    let lap = radial_laplacian(f)?;
    let af: f64 = FOUR_PI * (0..vals.len()).map(|i| a[i] * vals[i] * g.cell_volume(i)).sum::<f64>();
    let (ell_min, ell_max) = match gamma {
        Some(gm) => ellipticity_from(f, a, gm),
        None => (f64::NAN, f64::NAN),
    };
    let (h_ratio, reaction) = match (gamma, h) {
        (Some(gm), Some(h)) => {
            (h_ratio_from(mass, linf, h, gm).unwrap_or(0.0), -(2.0 + gm) * h[argmax] * vals[argmax])
        }
        _ => (0.0, 0.0),
    };
    let rate_factor = gamma.map(|gm| 2.0 * (5.0 + gm)).unwrap_or(f64::NAN);
    Ok(DiagnosticsRow {
        t,
        mass,
        energy: integrate_radial(f, 2.0)?,
        entropy: entropy(f)?,
        fisher: fisher_information(f)?,
        l3: l3_norm(f)?,
        linf,
        e4: integrate_radial(f, 4.0)?,
        e6: integrate_radial(f, 6.0)?,
        ellipticity_min: ell_min,
        ellipticity_max: ell_max,
        h_bound_ratio: h_ratio,
        energy_rate: rate_factor * af,
        energy_residual: 0.0,
        fisher_increment: 0.0,
        entropy_increment: 0.0,
        linf_envelope: linf * t.min(1.0).max(0.0).powf(0.75),
        sup_a: a.iter().copied().fold(0.0, f64::max),
        argmax,
        laplacian_at_max: lap.values()[argmax],
        reaction_at_max: reaction,
        leaked,
    })
}

/// Full row for a standalone field.
pub fn row_for_field(t: f64, f: &RadialField, pot: &Potential) -> Result<DiagnosticsRow> {
    let a = coeff_a(f, pot)?;
    let gamma = pot.gamma();
    let h = match gamma {
        Some(g) if (-3.0..=-2.0).contains(&g) => Some(coeff_h(f, pot)?.into_values()),
        _ => None,
    };
    row_from_state(t, f, a.values(), h.as_deref(), gamma, 0.0)
}

/// Fills the columns that need neighbouring rows.
pub fn finalize_rows(rows: &mut [DiagnosticsRow]) {
    for k in 1..rows.len() {
        rows[k].fisher_increment = rows[k].fisher - rows[k - 1].fisher;
        rows[k].entropy_increment = rows[k].entropy - rows[k - 1].entropy;
    }
    for k in 1..rows.len().saturating_sub(1) {
        let window = [rows[k - 1].clone(), rows[k].clone(), rows[k + 1].clone()];
        rows[k].energy_residual = energy_identity_residual(&window).unwrap_or(0.0);
    }
}

/// Signed `(centered dE₂/dt − 2(5+γ)∫a f) / 2(5+γ)∫a f` at the middle row.
pub fn energy_identity_signed(window: &[DiagnosticsRow; 3]) -> Option<f64> {
    let rate = window[1].energy_rate;
    if !(rate.abs() > 1e-300) || !rate.is_finite() {
        return None;
    }
    let de = (window[2].energy - window[0].energy) / (window[2].t - window[0].t);
    Some((de - rate) / rate)
}

pub fn energy_identity_residual(window: &[DiagnosticsRow; 3]) -> Option<f64> {
    energy_identity_signed(window).map(f64::abs)
}

/// Centered `dE₂/dt` divided by `(5+γ)∫a f`, the growth factor without the 2.
pub fn energy_literal_ratio(window: &[DiagnosticsRow; 3]) -> Option<f64> {
    energy_identity_signed(window).map(|s| 2.0 * (1.0 + s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub increments: Vec<f64>,
    /// `max(0, max_k increment_k / |value_k|)`.
    pub worst_relative: f64,
    pub violations: usize,
    pub tol: f64,
    pub passed: bool,
}

fn monotonicity(values: &[f64], tol: f64) -> MonotonicityReport {
    let increments: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let mut worst = 0.0f64;
    let mut violations = 0;
    for (k, d) in increments.iter().enumerate() {
        let scale = values[k].abs();
        let rel = if scale > 0.0 { d / scale } else if *d > 0.0 { f64::INFINITY } else { 0.0 };
        worst = worst.max(rel);
        if rel > tol {
            violations += 1;
        }
    }
    MonotonicityReport { increments, worst_relative: worst, violations, tol, passed: violations == 0 }
}

/// Flags Fisher increments above `tol · i(t_k)`.
pub fn fisher_monotonicity_check(traj: &Trajectory, tol: f64) -> MonotonicityReport {
    let v: Vec<f64> = traj.rows.iter().map(|r| r.fisher).collect();
    monotonicity(&v, tol)
}

/// Flags entropy increments above `tol · |H(t_k)|`.
pub fn entropy_monotonicity_check(traj: &Trajectory, tol: f64) -> MonotonicityReport {
    let v: Vec<f64> = traj.rows.iter().map(|r| r.entropy).collect();
    monotonicity(&v, tol)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxpointReport {
    pub checked: usize,
    pub skipped_boundary: usize,
    /// Largest Laplacian at the argmax, relative to `‖f‖_∞/Δr²`.
    pub worst_laplacian: f64,
    /// Largest `(d/dt max f − reaction bound)` over consecutive rows.
    pub worst_excess: f64,
    pub passed: bool,
}

/// At interior maxima `Δf ≤ 0`, so the peak grows no faster than the reaction term.
pub fn maxpoint_growth_check(traj: &Trajectory, n_cells: usize, dr: f64, tol: f64) -> MaxpointReport {
    let rows = &traj.rows;
    let mut checked = 0;
    let mut skipped = 0;
    let mut worst_lap = f64::NEG_INFINITY;
    let mut worst_excess = f64::NEG_INFINITY;
    for k in 0..rows.len() {
        let r = &rows[k];
        if r.argmax + 1 >= n_cells {
            skipped += 1;
            continue;
        }
        checked += 1;
        let scale = (r.linf / (dr * dr)).max(1e-300);
        worst_lap = worst_lap.max(r.laplacian_at_max / scale);
        if k + 1 < rows.len() {
            let next = &rows[k + 1];
            let growth = (next.linf - r.linf) / (next.t - r.t);
            let bound = r.reaction_at_max.max(next.reaction_at_max);
            worst_excess = worst_excess.max(growth - bound);
        }
    }
    let lap_ok = checked == 0 || worst_lap <= tol;
    let growth_ok = worst_excess <= tol || worst_excess == f64::NEG_INFINITY;
    MaxpointReport {
        checked,
        skipped_boundary: skipped,
        worst_laplacian: worst_lap,
        worst_excess,
        passed: lap_ok && growth_ok,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub k: u32,
    /// Largest `dE_k/dt − k(k+1) sup a E_{k−2}` over consecutive rows.
    pub worst_excess: f64,
    /// Fitted `C` in `E_k(t) ≤ E_k(0) + C t (E_{max(k−2,2)}(0) t^{(k−4)₊/2} + t^{(k−2)/2})`.
    pub fitted_constant: f64,
    /// Fitted `C` for `E_k(t) ≤ C (E_k(0) t^{(k−2)/2} + t^{k/2})`, which grows without
    /// bound as the first output time approaches 0.
    pub literal_constant: f64,
    pub passed: bool,
}

fn moment_column(r: &DiagnosticsRow, s: u32) -> Option<f64> {
    match s {
        0 => Some(r.mass),
        2 => Some(r.energy),
        4 => Some(r.e4),
        6 => Some(r.e6),
        _ => None,
    }
}

/// `dE_k/dt ≤ k(k+1)·sup a[f]·E_{k−2} + tol` along the run, plus envelope fits.
pub fn moment_growth_check(traj: &Trajectory, k: u32, tol: f64) -> Result<MomentReport> {
    if k < 4 || k % 2 == 1 || k > 6 {
        return Err(Error::invalid(format!("moment check supports k = 4 or 6, got {k}")));
    }
    let rows = &traj.rows;
    let ek = |r: &DiagnosticsRow| moment_column(r, k).unwrap();
    let elow = |r: &DiagnosticsRow| moment_column(r, k - 2).unwrap();
    let kk = (k * (k + 1)) as f64;
    let mut worst = f64::NEG_INFINITY;
    for w in rows.windows(2) {
        let rate = (ek(&w[1]) - ek(&w[0])) / (w[1].t - w[0].t);
        let bound = kk * (w[0].sup_a * elow(&w[0])).max(w[1].sup_a * elow(&w[1]));
        worst = worst.max(rate - bound);
    }
    let (mut fitted, mut literal) = (0.0f64, 0.0f64);
    if let Some(first) = rows.first() {
        let base = moment_column(first, (k - 2).max(2)).unwrap();
        let kf = k as f64;
        for r in rows.iter().skip(1) {
            let t = r.t - first.t;
            if t <= 0.0 {
                continue;
            }
            let shape = t * (base * t.powf(((kf - 4.0).max(0.0)) / 2.0) + t.powf((kf - 2.0) / 2.0));
            fitted = fitted.max((ek(r) - ek(first)) / shape);
            literal = literal.max(ek(r) / (ek(first) * t.powf((kf - 2.0) / 2.0) + t.powf(kf / 2.0)));
        }
    }
    let passed = (worst <= tol || rows.len() < 2) && fitted.is_finite();
    Ok(MomentReport { k, worst_excess: worst, fitted_constant: fitted, literal_constant: literal, passed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct J2Report {
    pub samples: u64,
    pub min_value: f64,
    pub negatives_below_tol: u64,
    pub passed: bool,
}

/// Samples `(|v|^{k−2}v − |w|^{k−2}w)·(v−w)` at random `v, w ∈ R³`.
pub fn j2_sign_sampling(samples: u64, k: u32, seed: u64, tol: f64) -> J2Report {
    const CHUNK: u64 = 1 << 14;
    let n_chunks = samples.div_ceil(CHUNK);
    let kf = k as f64;
    let per_chunk: Vec<(f64, u64)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let count = CHUNK.min(samples - c * CHUNK);
            let (mut lo, mut bad) = (f64::INFINITY, 0u64);
            for _ in 0..count {
                let scale: f64 = 10f64.powf(rng.random_range(-1.0..0.7));
                let v: [f64; 3] = std::array::from_fn(|_| scale * rng.sample::<f64, _>(StandardNormal));
                let w: [f64; 3] = std::array::from_fn(|_| scale * rng.sample::<f64, _>(StandardNormal));
                let nv = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().powf(kf - 2.0);
                let nw = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt().powf(kf - 2.0);
                let x: f64 = (0..3).map(|i| (nv * v[i] - nw * w[i]) * (v[i] - w[i])).sum();
                lo = lo.min(x);
                if x < -tol {
                    bad += 1;
                }
            }
            (lo, bad)
        })
        .collect();
    let min_value = per_chunk.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let negatives: u64 = per_chunk.iter().map(|p| p.1).sum();
    J2Report { samples, min_value, negatives_below_tol: negatives, passed: negatives == 0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub values: Vec<f64>,
    /// Largest observed `‖f‖_∞ min(t,1)^{3/4}`.
    pub observed_k: f64,
    /// Log-log slope of the envelope over the second half of the run.
    pub tail_slope: f64,
    pub passed: bool,
}

/// Envelope `‖f(t)‖_∞·min(t,1)^{3/4}`. It is bounded when finite and rising no
/// faster than `t^{3/4}` over the second half of the run (the peak itself not growing).
pub fn linf_envelope(traj: &Trajectory) -> EnvelopeReport {
    let values: Vec<f64> = traj.rows.iter().map(|r| r.linf_envelope).collect();
    let observed_k = values.iter().copied().fold(0.0, f64::max);
    let t_end = traj.times.last().copied().unwrap_or(0.0);
    let tail: Vec<(f64, f64)> = traj
        .rows
        .iter()
        .filter(|r| r.t >= 0.5 * t_end && r.t > 0.0 && r.linf_envelope > 0.0)
        .map(|r| (r.t.ln(), r.linf_envelope.ln()))
        .collect();
    let tail_slope = if tail.len() >= 2 { slope(&tail) } else { 0.0 };
    let finite = values.iter().all(|v| v.is_finite());
    EnvelopeReport { values, observed_k, tail_slope, passed: finite && tail_slope <= 0.75 + 0.05 }
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// `4∫|∇√f|²` on a Cartesian box, by face differences.
pub fn cartesian_fisher(f: &CartesianField3) -> f64 {
    let g = f.grid();
    let n = g.n();
    let h = g.spacing();
    let root = |i: usize, j: usize, k: usize| {
        let v = f.at(i, j, k);
        if v > VACUUM {
            v.sqrt()
        } else {
            0.0
        }
    };
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let c = root(i, j, k);
                if i + 1 < n {
                    s += (root(i + 1, j, k) - c).powi(2);
                }
                if j + 1 < n {
                    s += (root(i, j + 1, k) - c).powi(2);
                }
                if k + 1 < n {
                    s += (root(i, j, k + 1) - c).powi(2);
                }
            }
        }
    }
    4.0 * s * h
}

pub fn cartesian_entropy(f: &CartesianField3) -> f64 {
    let dv = f.grid().cell_volume();
    f.values().iter().filter(|&&v| v > VACUUM).map(|&v| v * v.ln() * dv).sum()
}
