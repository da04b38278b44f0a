//! Interaction potentials, nonlocal coefficients and convolutions.
//!
//! For radial `f` the 3D convolution with `|·|^μ` reduces to
//! `(2π / (r(μ+2))) ∫ s f(s) [(r+s)^{μ+2} − |r−s|^{μ+2}] ds`.
//! The bracket is integrated in closed form over each source cell, so the
//! integrable singularity at `s = r` never meets a quadrature node.

mod cartesian;
pub mod probe;

pub use cartesian::{cartesian_convolve, cube_kernel_average};
pub use probe::{probe_inequality, Lemma, ProbeParams, ProbeReport, ProbeRow};

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{integrate_radial, RadialField, RadialGrid};

/// Interaction potential `α(r)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential {
    /// `α(r) = r^γ`.
    PowerLaw { gamma: f64 },
    /// Samples of `α` and `α′` on increasing radii, linearly interpolated.
    Tabulated { radii: Vec<f64>, alpha: Vec<f64>, dalpha: Vec<f64> },
    /// `α(r) = (r² + ε²)^{γ/2}`, a smoothed power law used near `γ = −3`.
    Softened { gamma: f64, eps: f64 },
}

impl Potential {
    pub fn power_law(gamma: f64) -> Result<Self> {
        if !(-3.0..=1.0).contains(&gamma) {
            return Err(Error::invalid(format!("power-law exponent must lie in [-3, 1], got {gamma}")));
        }
        Ok(Potential::PowerLaw { gamma })
    }

    pub fn tabulated(radii: Vec<f64>, alpha: Vec<f64>, dalpha: Vec<f64>) -> Result<Self> {
        if radii.len() < 2 || radii.len() != alpha.len() || radii.len() != dalpha.len() {
            return Err(Error::invalid("tabulated potential needs matching samples (at least two)"));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] < 0.0 {
            return Err(Error::invalid("tabulated radii must be nonnegative and strictly increasing"));
        }
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("tabulated alpha must be strictly positive"));
        }
        if dalpha.iter().any(|d| !d.is_finite()) {
            return Err(Error::invalid("tabulated alpha' must be finite"));
        }
        Ok(Potential::Tabulated { radii, alpha, dalpha })
    }

    pub fn softened(gamma: f64, eps: f64) -> Result<Self> {
        if !(-3.0..=1.0).contains(&gamma) || !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("softened potential needs gamma in [-3, 1] and eps > 0"));
        }
        Ok(Potential::Softened { gamma, eps })
    }

    /// Power-law exponent, if the potential is an exact power law.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            Potential::PowerLaw { gamma } => Some(*gamma),
            _ => None,
        }
    }

    pub fn alpha(&self, r: f64) -> f64 {
        match self {
            Potential::PowerLaw { gamma } => r.powf(*gamma),
            Potential::Softened { gamma, eps } => (r * r + eps * eps).powf(0.5 * gamma),
            Potential::Tabulated { radii, alpha, .. } => interp(radii, alpha, r),
        }
    }

    pub fn dalpha(&self, r: f64) -> f64 {
        match self {
            Potential::PowerLaw { gamma } => gamma * r.powf(gamma - 1.0),
            Potential::Softened { gamma, eps } => gamma * r * (r * r + eps * eps).powf(0.5 * gamma - 1.0),
            Potential::Tabulated { radii, dalpha, .. } => interp(radii, dalpha, r),
        }
    }

    pub fn d2alpha(&self, r: f64) -> f64 {
        match self {
            Potential::PowerLaw { gamma } => gamma * (gamma - 1.0) * r.powf(gamma - 2.0),
            Potential::Softened { gamma, eps } => {
                let s = r * r + eps * eps;
                gamma * s.powf(0.5 * gamma - 1.0) + gamma * (gamma - 2.0) * r * r * s.powf(0.5 * gamma - 2.0)
            }
            Potential::Tabulated { radii, dalpha, .. } => {
                let k = segment(radii, r);
                (dalpha[k + 1] - dalpha[k]) / (radii[k + 1] - radii[k])
            }
        }
    }
}

fn segment(x: &[f64], r: f64) -> usize {
    match x.partition_point(|&v| v <= r) {
        0 => 0,
        k if k >= x.len() => x.len() - 2,
        k => k - 1,
    }
}

fn interp(x: &[f64], y: &[f64], r: f64) -> f64 {
    let k = segment(x, r);
    let t = (r - x[k]) / (x[k + 1] - x[k]);
    y[k] + t * (y[k + 1] - y[k])
}

/// Logarithmic derivative `Γ(r) = r α′(r) / α(r)`.
pub fn gamma_ratio(pot: &Potential, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::invalid(format!("gamma_ratio needs r > 0, got {r}")));
    }
    if let Potential::PowerLaw { gamma } = pot {
        return Ok(*gamma);
    }
    let a = pot.alpha(r);
    if !(a > 0.0) {
        return Err(Error::invalid(format!("potential is not positive at r = {r}")));
    }
    Ok(r * pot.dalpha(r) / a)
}

/// Admissible range of `Γ` for Fisher-information decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioWindow {
    pub lo: f64,
    pub hi: f64,
}

impl RatioWindow {
    pub fn fisher() -> Self {
        let s3 = 3f64.sqrt();
        let s2 = 2f64.sqrt();
        Self { lo: 2.0 - 3.0 * s3, hi: -2.0 + 2.0 * s2 }
    }

    pub fn contains(&self, gamma: f64) -> bool {
        gamma >= self.lo && gamma <= self.hi
    }
}

/// Precomputed radial convolution with `|·|^μ` on a fixed grid.
///
/// Building costs `O(n²)` power evaluations; each application is one dense
/// matrix-vector product, so callers that convolve every time step keep the
/// operator around.
#[derive(Debug, Clone)]
pub struct RadialConvolution {
    grid: RadialGrid,
    mu: f64,
    matrix: Option<Vec<f64>>,
}

const LIMIT_STEP: f64 = 0.02;

impl RadialConvolution {
    pub fn new(grid: RadialGrid, mu: f64) -> Result<Self> {
        if !(mu > -3.0 && mu <= 2.0) {
            return Err(Error::invalid(format!("convolution exponent must lie in (-3, 2], got {mu}")));
        }
        if mu == 0.0 {
            return Ok(Self { grid, mu, matrix: None });
        }
        let matrix = if (mu + 2.0).abs() < 1e-9 {
            // Symmetric averages around μ = −2 are even in the offset, so one
            // Richardson step removes the leading h² error.
            let h = LIMIT_STEP;
            let sym = |d: f64| {
                let a = closed_form_matrix(&grid, -2.0 + d);
                let b = closed_form_matrix(&grid, -2.0 - d);
                a.into_iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect::<Vec<_>>()
            };
            let coarse = sym(h);
            let fine = sym(0.5 * h);
            fine.into_iter().zip(coarse).map(|(f, c)| (4.0 * f - c) / 3.0).collect()
        } else {
            closed_form_matrix(&grid, mu)
        };
        Ok(Self { grid, mu, matrix: Some(matrix) })
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn exponent(&self) -> f64 {
        self.mu
    }

    /// Raw values of `f ∗ |·|^μ` at the cell centers.
    pub fn apply_values(&self, f: &[f64]) -> Vec<f64> {
        let n = self.grid.n_cells();
        match &self.matrix {
            None => {
                let mass: f64 = 4.0 * PI * f.iter().enumerate().map(|(j, v)| v * self.grid.cell_volume(j)).sum::<f64>();
                vec![mass; n]
            }
            Some(m) => m.par_chunks(n).map(|row| row.iter().zip(f).map(|(w, v)| w * v).sum()).collect(),
        }
    }

    pub fn apply(&self, f: &RadialField) -> Result<RadialField> {
        if f.grid() != &self.grid {
            return Err(Error::invalid("field grid does not match the convolution grid"));
        }
        let out = self.apply_values(f.values());
        RadialField::signed(self.grid, out)
    }
}

/// Row-major weights `K_ij` with `(f∗|·|^μ)(r_i) ≈ Σ_j K_ij f_j`.
fn closed_form_matrix(grid: &RadialGrid, mu: f64) -> Vec<f64> {
    let n = grid.n_cells();
    let p = mu + 2.0;
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let r = grid.center(i);
        let pre = 2.0 * PI / (r * p);
        for (j, w) in row.iter_mut().enumerate() {
            *w = pre * cell_bracket(r, grid.face(j), grid.face(j + 1), p);
        }
    });
    out
}

/// `∫_a^b s [(r+s)^p − |r−s|^p] ds` in closed form, `p > −1`.
fn cell_bracket(r: f64, a: f64, b: f64, p: f64) -> f64 {
    let (p1, p2) = (p + 1.0, p + 2.0);
    let pw = |u: f64, e: f64| if u == 0.0 { 0.0 } else { u.powf(e) };
    let plus = |u: f64| pw(u, p2) / p2 - r * pw(u, p1) / p1;
    let above = |u: f64| pw(u, p2) / p2 + r * pw(u, p1) / p1;
    let below = |u: f64| r * pw(u, p1) / p1 - pw(u, p2) / p2;
    let sum_part = plus(r + b) - plus(r + a);
    let diff_part = if a >= r {
        above(b - r) - above(a - r)
    } else if b <= r {
        below(r - a) - below(r - b)
    } else {
        below(r - a) + above(b - r)
    };
    sum_part - diff_part
}

/// Pointwise `f ∗ |·|^μ` for radial `f`.
pub fn radial_convolve(f: &RadialField, mu: f64) -> Result<RadialField> {
    if mu == 0.0 {
        let m = integrate_radial(f, 0.0)?;
        return RadialField::signed(*f.grid(), vec![m; f.len()]);
    }
    RadialConvolution::new(*f.grid(), mu)?.apply(f)
}

/// `a[f] = f ∗ α(|·|)|·|²`; the power law gives `f ∗ |·|^{2+γ}`.
pub fn coeff_a(f: &RadialField, pot: &Potential) -> Result<RadialField> {
    CoefficientOperator::new(*f.grid(), pot)?.a(f)
}

/// `h[f] = (3+γ) f ∗ |·|^γ`, or `4πf` in the Coulomb case.
pub fn coeff_h(f: &RadialField, pot: &Potential) -> Result<RadialField> {
    CoefficientOperator::new(*f.grid(), pot)?.h(f)
}

/// Cached operators producing `a[f]` and `h[f]` on one grid.
#[derive(Debug, Clone)]
pub struct CoefficientOperator {
    grid: RadialGrid,
    gamma: Option<f64>,
    a_op: AOperator,
    h_op: Option<RadialConvolution>,
}

#[derive(Debug, Clone)]
enum AOperator {
    Power(RadialConvolution),
    General(Vec<f64>),
}

impl CoefficientOperator {
    pub fn new(grid: RadialGrid, pot: &Potential) -> Result<Self> {
        match pot {
            Potential::PowerLaw { gamma } => {
                let g = *gamma;
                let a_op = AOperator::Power(RadialConvolution::new(grid, 2.0 + g)?);
                let h_op = if g > -3.0 && g <= -2.0 { Some(RadialConvolution::new(grid, g)?) } else { None };
                Ok(Self { grid, gamma: Some(g), a_op, h_op })
            }
            other => Ok(Self { grid, gamma: None, a_op: AOperator::General(general_kernel_matrix(&grid, other)), h_op: None }),
        }
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn a_values(&self, f: &[f64]) -> Vec<f64> {
        match &self.a_op {
            AOperator::Power(c) => c.apply_values(f),
            AOperator::General(m) => {
                let n = self.grid.n_cells();
                m.par_chunks(n).map(|row| row.iter().zip(f).map(|(w, v)| w * v).sum()).collect()
            }
        }
    }

    pub fn h_values(&self, f: &[f64]) -> Result<Vec<f64>> {
        match self.gamma {
            Some(g) if g == -3.0 => Ok(f.iter().map(|v| 4.0 * PI * v).collect()),
            Some(g) if g > -3.0 && g <= -2.0 => {
                let c = self.h_op.as_ref().expect("h operator exists in this range");
                Ok(c.apply_values(f).into_iter().map(|v| (3.0 + g) * v).collect())
            }
            Some(g) => Err(Error::invalid(format!("h[f] is defined for gamma in [-3, -2], got {g}"))),
            None => Err(Error::invalid("h[f] needs a power-law potential")),
        }
    }

    pub fn a(&self, f: &RadialField) -> Result<RadialField> {
        self.check(f)?;
        RadialField::signed(self.grid, self.a_values(f.values()))
    }

    pub fn h(&self, f: &RadialField) -> Result<RadialField> {
        self.check(f)?;
        RadialField::signed(self.grid, self.h_values(f.values())?)
    }

    fn check(&self, f: &RadialField) -> Result<()> {
        if f.grid() != &self.grid {
            return Err(Error::invalid("field grid does not match the operator grid"));
        }
        Ok(())
    }
}

/// Weights for `f ∗ K` with `K(ρ) = α(ρ)ρ²` for a general potential:
/// `(2π/r) ∫ s f(s) [G(r+s) − G(|r−s|)] ds` with `G(ρ) = ∫₀^ρ t K(t) dt`
/// tabulated on a fine mesh and the cell integral done by Simpson's rule.
fn general_kernel_matrix(grid: &RadialGrid, pot: &Potential) -> Vec<f64> {
    let n = grid.n_cells();
    let h = grid.dr() / 8.0;
    let m = 16 * n + 2;
    let integrand = |t: f64| if t == 0.0 { 0.0 } else { pot.alpha(t) * t * t * t };
    let mut table = vec![0.0; m + 1];
    for k in 1..=m {
        let (t0, t1) = ((k - 1) as f64 * h, k as f64 * h);
        let mid = 0.5 * (t0 + t1);
        table[k] = table[k - 1] + h * (integrand(t0) + 4.0 * integrand(mid) + integrand(t1)) / 6.0;
    }
    let big_g = |rho: f64| {
        let x = rho / h;
        let k = (x.floor() as usize).min(m - 1);
        let t = x - k as f64;
        table[k] * (1.0 - t) + table[k + 1] * t
    };
    let mut out = vec![0.0; n * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let r = grid.center(i);
        let g = |s: f64| s * (big_g(r + s) - big_g((r - s).abs()));
        let simpson = |a: f64, b: f64| {
            let k = 4;
            let step = (b - a) / k as f64;
            (0..k)
                .map(|q| {
                    let (x0, x1) = (a + q as f64 * step, a + (q + 1) as f64 * step);
                    step * (g(x0) + 4.0 * g(0.5 * (x0 + x1)) + g(x1)) / 6.0
                })
                .sum::<f64>()
        };
        for (j, w) in row.iter_mut().enumerate() {
            let (a, b) = (grid.face(j), grid.face(j + 1));
            let integral = if a < r && r < b { simpson(a, r) + simpson(r, b) } else { simpson(a, b) };
            *w = 2.0 * PI / r * integral;
        }
    });
    out
}
