//! Empirical probes of the weighted convolution and interpolation
//! inequalities used by the regularity theory.
//!
//! Each probe evaluates both sides of one inequality on a seeded family of
//! radial shell mixtures and on dilations `f_λ(v) = f(λv)`. The weighted
//! sides are not dilation-homogeneous because `⟨v⟩` is not, so the sweep is
//! also run on a homogeneous skeleton: `⟨v⟩` replaced by `|v|` and sums of
//! terms with different scaling replaced by their scale-balanced product.
//! Each skeleton side then scales as an exact power of `λ`, derived below,
//! and the rescaled family maximum must not move across the sweep.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RadialConvolution;
use crate::error::{Error, Result};
use crate::fields::RadialGrid;

const D: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lemma {
    /// `‖f∗|·|^μ‖_∞ ≤ C‖f‖_{L^p_m}`.
    A1,
    /// `‖g∗|·|^μ‖_{L²} ≤ C‖g‖_{L²_θ}`.
    A3,
    /// `‖f∗|·|^μ‖_{L^∞_w} ≤ C‖f‖_{L^p_m}` with decay weight `w`.
    A4,
    /// `‖∇f‖_{L²_q} ≤ C(δ⁻¹‖f‖_{L²_{2q+θ}} + δ‖D²f‖_{L²_{−θ}})`.
    A7,
    /// `‖f‖_{L^∞_m} ≤ C(‖f‖_{L²_m} + ‖D²f‖_{L²_m})`.
    A5,
}

impl Lemma {
    pub fn name(&self) -> &'static str {
        match self {
            Lemma::A1 => "A1",
            Lemma::A3 => "A3",
            Lemma::A4 => "A4",
            Lemma::A7 => "A7",
            Lemma::A5 => "A5",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A1" => Ok(Lemma::A1),
            "A3" => Ok(Lemma::A3),
            "A4" => Ok(Lemma::A4),
            "A7" => Ok(Lemma::A7),
            "A5" => Ok(Lemma::A5),
            other => Err(Error::invalid(format!("unknown lemma '{other}'"))),
        }
    }

    pub fn all() -> [Lemma; 5] {
        [Lemma::A1, Lemma::A3, Lemma::A4, Lemma::A7, Lemma::A5]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub mu: f64,
    pub p: f64,
    pub m: f64,
    pub theta: f64,
    pub q: f64,
    pub delta: f64,
    pub families: usize,
    pub n_cells: usize,
    pub r_max: f64,
    pub lambdas: Vec<f64>,
}

impl ProbeParams {
    /// Defaults that satisfy each lemma's hypotheses.
    pub fn defaults(lemma: Lemma) -> Self {
        let base = Self {
            mu: -1.0,
            p: 2.0,
            m: 2.0,
            theta: 1.0,
            q: 1.0,
            delta: 1.0,
            families: 64,
            n_cells: 2048,
            r_max: 32.0,
            lambdas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
        };
        match lemma {
            Lemma::A3 => Self { mu: -2.5, ..base },
            Lemma::A5 => Self { m: 1.0, ..base },
            _ => base,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub lemma: Lemma,
    pub seed: u64,
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub lemma: Lemma,
    pub params: ProbeParams,
    /// Hypotheses as checked, for echoing into reports.
    pub hypotheses: String,
    pub rows: Vec<ProbeRow>,
    /// Largest weighted ratio over the family and the sweep.
    pub max_ratio: f64,
    /// Dilation exponent of the skeleton ratio.
    pub skeleton_exponent: f64,
    /// `(λ, max over family of skeleton ratio · λ^{−exponent})`.
    pub skeleton_by_lambda: Vec<(f64, f64)>,
    /// `(max − min) / min` of the rescaled skeleton maxima.
    pub skeleton_variation: f64,
    pub notes: Vec<String>,
}

impl ProbeReport {
    pub fn csv_header() -> &'static str {
        "lemma,seed,lambda,lhs,rhs,ratio"
    }

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| format!("{},{},{},{:e},{:e},{:e}", r.lemma.name(), r.seed, r.lambda, r.lhs, r.rhs, r.ratio))
            .collect()
    }
}

/// Even radial mixture of Gaussian shells with analytic derivatives.
#[derive(Debug, Clone)]
struct Shells {
    terms: Vec<(f64, f64, f64)>,
}

impl Shells {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let k = rng.random_range(1..=3);
        let terms = (0..k)
            .map(|_| (rng.random_range(0.2..2.0), rng.random_range(0.0..2.0), rng.random_range(0.4..1.2)))
            .collect();
        Self { terms }
    }

    /// `(f, f′, f″)` at radius `r`.
    fn eval(&self, r: f64) -> (f64, f64, f64) {
        let mut out = (0.0, 0.0, 0.0);
        for &(a, c, s) in &self.terms {
            for centre in [c, -c] {
                let d = r - centre;
                let g = a * (-d * d / (2.0 * s * s)).exp();
                out.0 += g;
                out.1 += -d / (s * s) * g;
                out.2 += (d * d / (s * s * s * s) - 1.0 / (s * s)) * g;
            }
        }
        out
    }
}

struct Sampled {
    f: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

fn sample(shells: &Shells, grid: &RadialGrid, lambda: f64) -> Sampled {
    let n = grid.n_cells();
    let (mut f, mut grad, mut hess) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let r = grid.center(i);
        let (v, d1, d2) = shells.eval(lambda * r);
        let (d1, d2) = (lambda * d1, lambda * lambda * d2);
        f.push(v);
        grad.push(d1.abs());
        // Hessian of a radial function: eigenvalues f″ once and f′/r twice.
        hess.push((d2 * d2 + 2.0 * (d1 / r).powi(2)).sqrt());
    }
    Sampled { f, grad, hess }
}

fn lp(grid: &RadialGrid, values: &[f64], p: f64, weight: impl Fn(f64) -> f64) -> f64 {
    if p.is_infinite() {
        return values.iter().enumerate().map(|(i, v)| weight(grid.center(i)) * v.abs()).fold(0.0, f64::max);
    }
    let s: f64 = values
        .iter()
        .enumerate()
        .map(|(i, v)| (weight(grid.center(i)) * v.abs()).powf(p) * grid.cell_volume(i))
        .sum();
    (4.0 * PI * s).powf(1.0 / p)
}

fn bracket(r: f64, m: f64) -> f64 {
    (1.0 + r * r).powf(0.5 * m)
}

fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

fn validate(lemma: Lemma, pr: &ProbeParams) -> Result<String> {
    let fail = |msg: String| Err(Error::Hypothesis(format!("{}: {msg}", lemma.name())));
    if pr.families == 0 || pr.lambdas.is_empty() || pr.lambdas.iter().any(|&l| !(l > 0.0)) {
        return fail("needs at least one family member and positive dilations".into());
    }
    match lemma {
        Lemma::A1 | Lemma::A4 => {
            if !(pr.p >= 1.0) {
                return fail(format!("p = {} must be at least 1", pr.p));
            }
            let d_over_pp = D / conjugate(pr.p);
            if !(-d_over_pp < pr.mu && pr.mu < 0.0) {
                return fail(format!("requires -d/p' < mu < 0, got mu = {} with d/p' = {d_over_pp}", pr.mu));
            }
            let need = if lemma == Lemma::A1 { d_over_pp + pr.mu } else { d_over_pp };
            if !(pr.m > need) {
                let which = if lemma == Lemma::A1 { "d/p' + mu" } else { "d/p'" };
                return fail(format!("requires m > {which} = {need}, got m = {}", pr.m));
            }
            Ok(format!("-d/p' = {} < mu = {} < 0; m = {} > {need}", -d_over_pp, pr.mu, pr.m))
        }
        Lemma::A3 => {
            if !(-D < pr.mu && pr.mu <= -D / 2.0) {
                return fail(format!("requires -d < mu <= -d/2, got mu = {}", pr.mu));
            }
            if !(pr.theta > pr.mu + D) {
                return fail(format!("requires theta > mu + d = {}, got theta = {}", pr.mu + D, pr.theta));
            }
            Ok(format!("-d < mu = {} <= -d/2; theta = {} > mu + d", pr.mu, pr.theta))
        }
        Lemma::A7 => {
            if !(pr.q >= 0.0 && pr.theta >= 0.0 && pr.delta > 0.0) {
                return fail(format!("requires q, theta >= 0 and delta > 0, got q = {}, theta = {}, delta = {}", pr.q, pr.theta, pr.delta));
            }
            if pr.theta >= 1.5 {
                // the homogeneous skeleton weight |v|^{-θ} must stay square integrable against D²f
                return fail(format!("probe needs theta < 3/2 for the homogeneous skeleton, got {}", pr.theta));
            }
            Ok(format!("q = {} >= 0, theta = {} >= 0, delta = {} > 0", pr.q, pr.theta, pr.delta))
        }
        Lemma::A5 => Ok(format!("m = {} (any real)", pr.m)),
    }
}

struct Sides {
    lhs: f64,
    rhs: f64,
    skel_lhs: f64,
    skel_rhs: f64,
}

pub fn probe_inequality(lemma: Lemma, params: &ProbeParams, family_seed: u64) -> Result<ProbeReport> {
    let hypotheses = validate(lemma, params)?;
    let grid = RadialGrid::new(params.n_cells, params.r_max)?;
    let pr = params.clone();
    let conv = match lemma {
        Lemma::A1 | Lemma::A3 | Lemma::A4 => Some(RadialConvolution::new(grid, pr.mu)?),
        _ => None,
    };
    let mut notes = Vec::new();

    // Dilation exponents of the skeleton sides, from ‖|v|^w D^j f_λ‖_p = λ^{j−w−d/p}‖|v|^w D^j f‖_p
    // and (f_λ∗|·|^μ)(v) = λ^{−d−μ}(f∗|·|^μ)(λv).
    let norm_exp = |j: f64, w: f64, p: f64| j - w - if p.is_infinite() { 0.0 } else { D / p };
    let exponent = match lemma {
        Lemma::A1 => (-D - pr.mu) - norm_exp(0.0, pr.m, pr.p),
        Lemma::A3 => (-D - pr.mu - D / 2.0) - norm_exp(0.0, pr.theta, 2.0),
        Lemma::A4 => (-D - pr.mu + pr.mu) - norm_exp(0.0, pr.m, pr.p),
        // balanced sums scale like the left side
        Lemma::A7 | Lemma::A5 => 0.0,
    };
    let decay = -pr.mu;
    if lemma == Lemma::A4 {
        let pp = conjugate(pr.p);
        if pp > 1.0 {
            notes.push(format!(
                "decay weight <v>^{decay} (= <v>^(-mu)) is used; the stated weight <v>^(-p'mu) = <v>^{} outgrows the \
                 |v|^mu far field of f*|.|^mu whenever p' > 1",
                if pp.is_infinite() { f64::INFINITY } else { -pp * pr.mu }
            ));
        }
    }

    let evaluate = |s: &Sampled| -> Sides {
        match lemma {
            Lemma::A1 => {
                let c = conv.as_ref().unwrap().apply_values(&s.f);
                let lhs = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                Sides {
                    lhs,
                    rhs: lp(&grid, &s.f, pr.p, |r| bracket(r, pr.m)),
                    skel_lhs: lhs,
                    skel_rhs: lp(&grid, &s.f, pr.p, |r| r.powf(pr.m)),
                }
            }
            Lemma::A3 => {
                let c = conv.as_ref().unwrap().apply_values(&s.f);
                // monopole tail of the convolution beyond r_max
                let mass = lp(&grid, &s.f, 1.0, |_| 1.0);
                let tail = 4.0 * PI * mass * mass * pr.r_max.powf(2.0 * pr.mu + D) / (-2.0 * pr.mu - D);
                let inner = lp(&grid, &c, 2.0, |_| 1.0);
                let lhs = (inner * inner + tail).sqrt();
                Sides {
                    lhs,
                    rhs: lp(&grid, &s.f, 2.0, |r| bracket(r, pr.theta)),
                    skel_lhs: lhs,
                    skel_rhs: lp(&grid, &s.f, 2.0, |r| r.powf(pr.theta)),
                }
            }
            Lemma::A4 => {
                let c = conv.as_ref().unwrap().apply_values(&s.f);
                Sides {
                    lhs: lp(&grid, &c, f64::INFINITY, |r| bracket(r, decay)),
                    rhs: lp(&grid, &s.f, pr.p, |r| bracket(r, pr.m)),
                    skel_lhs: lp(&grid, &c, f64::INFINITY, |r| r.powf(decay)),
                    skel_rhs: lp(&grid, &s.f, pr.p, |r| r.powf(pr.m)),
                }
            }
            Lemma::A7 => {
                let lhs = lp(&grid, &s.grad, 2.0, |r| bracket(r, pr.q));
                let low = lp(&grid, &s.f, 2.0, |r| bracket(r, 2.0 * pr.q + pr.theta));
                let high = lp(&grid, &s.hess, 2.0, |r| bracket(r, -pr.theta));
                let skel_low = lp(&grid, &s.f, 2.0, |r| r.powf(2.0 * pr.q + pr.theta));
                let skel_high = lp(&grid, &s.hess, 2.0, |r| r.powf(-pr.theta));
                Sides {
                    lhs,
                    rhs: low / pr.delta + pr.delta * high,
                    skel_lhs: lp(&grid, &s.grad, 2.0, |r| r.powf(pr.q)),
                    // minimum over δ of δ⁻¹A + δB
                    skel_rhs: 2.0 * (skel_low * skel_high).sqrt(),
                }
            }
            Lemma::A5 => {
                let low = lp(&grid, &s.f, 2.0, |r| bracket(r, pr.m));
                let high = lp(&grid, &s.hess, 2.0, |r| bracket(r, pr.m));
                // A ~ λ^{−m−3/2}, B ~ λ^{1/2−m}: A^{1/4}B^{3/4} ~ λ^{−m}, the scaling of the sup.
                let skel_low = lp(&grid, &s.f, 2.0, |r| r.powf(pr.m));
                let skel_high = lp(&grid, &s.hess, 2.0, |r| r.powf(pr.m));
                Sides {
                    lhs: lp(&grid, &s.f, f64::INFINITY, |r| bracket(r, pr.m)),
                    rhs: low + high,
                    skel_lhs: lp(&grid, &s.f, f64::INFINITY, |r| r.powf(pr.m)),
                    skel_rhs: skel_low.powf(0.25) * skel_high.powf(0.75),
                }
            }
        }
    };

    let mut rows = Vec::new();
    let mut skeleton_by_lambda: Vec<(f64, f64)> = pr.lambdas.iter().map(|&l| (l, 0.0)).collect();
    for member in 0..pr.families {
        let seed = family_seed.wrapping_add(member as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(family_seed);
        rng.set_stream(member as u64);
        let shells = Shells::random(&mut rng);
        for (k, &lambda) in pr.lambdas.iter().enumerate() {
            let s = sample(&shells, &grid, lambda);
            let sides = evaluate(&s);
            if sides.rhs == 0.0 && sides.lhs == 0.0 {
                continue;
            }
            rows.push(ProbeRow { lemma, seed, lambda, lhs: sides.lhs, rhs: sides.rhs, ratio: sides.lhs / sides.rhs });
            let rescaled = sides.skel_lhs / sides.skel_rhs * lambda.powf(-exponent);
            skeleton_by_lambda[k].1 = skeleton_by_lambda[k].1.max(rescaled);
        }
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let lo = skeleton_by_lambda.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let hi = skeleton_by_lambda.iter().map(|x| x.1).fold(0.0, f64::max);
    let skeleton_variation = if lo > 0.0 { (hi - lo) / lo } else { f64::NAN };
    Ok(ProbeReport {
        lemma,
        params: pr,
        hypotheses,
        rows,
        max_ratio,
        skeleton_exponent: exponent,
        skeleton_by_lambda,
        skeleton_variation,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(lemma: Lemma) -> ProbeParams {
        ProbeParams { families: 8, n_cells: 1024, ..ProbeParams::defaults(lemma) }
    }

    #[test]
    fn hypotheses_are_enforced() {
        let bad_m = ProbeParams { m: 0.4, ..ProbeParams::defaults(Lemma::A1) };
        let err = probe_inequality(Lemma::A1, &bad_m, 1).unwrap_err();
        assert!(err.to_string().contains("m > d/p' + mu"), "{err}");
        let bad_mu = ProbeParams { mu: -1.0, ..ProbeParams::defaults(Lemma::A3) };
        assert!(probe_inequality(Lemma::A3, &bad_mu, 1).is_err());
        let coulomb_l1 = ProbeParams { p: 1.0, ..ProbeParams::defaults(Lemma::A4) };
        assert!(probe_inequality(Lemma::A4, &coulomb_l1, 1).is_err());
        assert!(probe_inequality(Lemma::A7, &ProbeParams { delta: 0.0, ..ProbeParams::defaults(Lemma::A7) }, 1).is_err());
    }

    #[test]
    fn shells_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = Shells::random(&mut rng);
        for r in [0.1, 0.9, 2.3] {
            let h = 1e-5;
            let (_, d1, d2) = s.eval(r);
            let fd1 = (s.eval(r + h).0 - s.eval(r - h).0) / (2.0 * h);
            let fd2 = (s.eval(r + h).1 - s.eval(r - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-6 && (d2 - fd2).abs() < 1e-6);
        }
        // even in r, so smooth at the origin
        assert!(s.eval(0.0).1.abs() < 1e-12);
    }

    #[test]
    fn skeleton_sweeps_are_flat() {
        for lemma in Lemma::all() {
            let rep = probe_inequality(lemma, &quick(lemma), 11).unwrap();
            assert!(rep.max_ratio.is_finite() && rep.max_ratio > 0.0);
            assert!(rep.skeleton_variation < 0.05, "{}: {:?}", lemma.name(), rep.skeleton_by_lambda);
        }
    }

    #[test]
    fn probes_are_seed_deterministic() {
        let a = probe_inequality(Lemma::A5, &quick(Lemma::A5), 5).unwrap();
        let b = probe_inequality(Lemma::A5, &quick(Lemma::A5), 5).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.csv_rows().len(), 8 * 5);
    }
}
