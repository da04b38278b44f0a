//! Monte-Carlo estimation of weighted Fisher functionals and their first
//! variations.
//!
//! Samples are drawn in fixed chunks of [`CHUNK`] points. Chunk `c` of an
//! estimate with seed `s` uses `ChaCha8Rng::seed_from_u64(s)` on stream `c`,
//! and chunk statistics are merged in chunk order, so the result does not
//! depend on the thread schedule.

use std::f64::consts::PI;

use nalgebra::{Cholesky, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::Potential;
use crate::lifted::frames::{relative, FrameField, VectorField, WeightField};
use crate::lifted::mixture::{Jet, Mixture6};

pub const CHUNK: u64 = 4096;

/// Derives an independent seed from a master seed and a tag (splitmix64).
pub fn sub_seed(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl McEstimate {
    /// Sum of independent estimates.
    pub fn sum(parts: &[(f64, McEstimate)]) -> McEstimate {
        let value = parts.iter().map(|(c, e)| c * e.value).sum();
        let var: f64 = parts.iter().map(|(c, e)| (c * e.stderr).powi(2)).sum();
        let first = parts.first().map(|p| p.1);
        McEstimate {
            value,
            stderr: var.sqrt(),
            n_samples: first.map_or(0, |e| e.n_samples),
            seed: first.map_or(0, |e| e.seed),
        }
    }

    /// Two independent estimates agree within `k` combined standard errors.
    pub fn agrees_with(&self, other: &McEstimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.stderr.hypot(other.stderr)
    }
}

/// How sample points are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// `x ~ F / ‖F‖₁`.
    Exact,
    /// Product proposal in `y = (v+w)/2`, `z = v − w` whose radial density
    /// in `|z|` behaves like `r^s` at the diagonal. Used when the integrand
    /// is singular there.
    NearDiagonal { s: f64 },
}

impl Sampling {
    /// Exact sampling for bounded integrands; otherwise a proposal matching
    /// an integrand that behaves like `|v − w|^κ` near the diagonal.
    pub fn for_exponent(kappa: f64) -> Self {
        if kappa >= 0.0 {
            Sampling::Exact
        } else {
            Sampling::NearDiagonal { s: (2.0 + kappa).clamp(-0.95, 2.0) }
        }
    }
}

struct YComponent {
    weight: f64,
    mean: Vector3<f64>,
    factor: Matrix3<f64>,
    precision: Matrix3<f64>,
    log_norm: f64,
}

struct Proposal {
    ys: Vec<YComponent>,
    total: f64,
    s: f64,
    tau2: f64,
    radial: Gamma<f64>,
    log_radial_norm: f64,
}

impl Proposal {
    fn new(f: &Mixture6, s: f64) -> Result<Self> {
        let mut ys = Vec::new();
        let mut tau2: f64 = 0.0;
        for c in f.components() {
            let cov = c.covariance();
            let m = c.mean();
            let mut sy = Matrix3::zeros();
            let mut sz = Matrix3::zeros();
            for i in 0..3 {
                for j in 0..3 {
                    let (vv, vw, wv, ww) = (cov[(i, j)], cov[(i, j + 3)], cov[(i + 3, j)], cov[(i + 3, j + 3)]);
                    sy[(i, j)] = 0.25 * (vv + vw + wv + ww);
                    sz[(i, j)] = vv - vw - wv + ww;
                }
            }
            let my = Vector3::new(m[0] + m[3], m[1] + m[4], m[2] + m[5]) * 0.5;
            let mz = Vector3::new(m[0] - m[3], m[1] - m[4], m[2] - m[5]);
            let lam = sz.symmetric_eigenvalues().max();
            tau2 = tau2.max(2.0 * lam + mz.norm_squared());
            let cov_y = sy * 2.0;
            let chol = Cholesky::new(cov_y).ok_or_else(|| Error::invalid("degenerate mixture component"))?;
            let l = chol.l();
            let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let precision = chol.inverse();
            ys.push(YComponent {
                weight: c.weight(),
                mean: my,
                factor: l,
                precision,
                log_norm: -0.5 * log_det - 1.5 * (2.0 * PI).ln(),
            });
        }
        let shape = 0.5 * (s + 1.0);
        let radial = Gamma::new(shape, 2.0 * tau2).map_err(|e| Error::invalid(format!("radial proposal: {e}")))?;
        // ∫₀^∞ r^s e^{−r²/2τ²} dr = ½ (2τ²)^{(s+1)/2} Γ((s+1)/2)
        let log_radial_norm = (0.5f64).ln() + shape * (2.0 * tau2).ln() + libm::lgamma(shape);
        Ok(Self { total: ys.iter().map(|y| y.weight).sum(), ys, s, tau2, radial, log_radial_norm })
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> (Vector6<f64>, f64) {
        let mut t = rng.random::<f64>() * self.total;
        let mut k = self.ys.len() - 1;
        for (i, y) in self.ys.iter().enumerate() {
            t -= y.weight;
            if t < 0.0 {
                k = i;
                break;
            }
        }
        let yc = &self.ys[k];
        let xi = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let y = yc.mean + yc.factor * xi;
        let dir = loop {
            let d = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let n = d.norm();
            if n > 0.0 {
                break d / n;
            }
        };
        let r = self.radial.sample(rng).sqrt().max(f64::MIN_POSITIVE);
        let z = dir * r;
        let x = Vector6::new(y[0] + 0.5 * z[0], y[1] + 0.5 * z[1], y[2] + 0.5 * z[2], y[0] - 0.5 * z[0], y[1] - 0.5 * z[1], y[2] - 0.5 * z[2]);
        (x, self.log_density(&y, r))
    }

    fn log_density(&self, y: &Vector3<f64>, r: f64) -> f64 {
        let logs: Vec<f64> = self
            .ys
            .iter()
            .map(|c| {
                let d = y - c.mean;
                (c.weight / self.total).ln() + c.log_norm - 0.5 * d.dot(&(c.precision * d))
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_y = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        let log_r = self.s * r.ln() - r * r / (2.0 * self.tau2) - self.log_radial_norm;
        log_y + log_r - (4.0 * PI).ln() - 2.0 * r.ln()
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }
}

/// Estimates `∫ F(x) φ_k(x) dx` for `m` integrands at once on shared
/// samples. `integrand` receives the point and the jet (normalized
/// derivatives) and writes `φ_k`.
pub fn estimate_many<I>(
    f: &Mixture6,
    sampling: Sampling,
    n_samples: u64,
    seed: u64,
    m: usize,
    third: bool,
    integrand: I,
) -> Result<Vec<McEstimate>>
where
    I: Fn(&Vector6<f64>, &Jet, &mut [f64]) -> Result<()> + Sync,
{
    if n_samples < 2 {
        return Err(Error::invalid("Monte-Carlo estimates need at least two samples"));
    }
    let proposal = match sampling {
        Sampling::Exact => None,
        Sampling::NearDiagonal { s } => Some(Proposal::new(f, s)?),
    };
    let mass = f.mass();
    let n_chunks = n_samples.div_ceil(CHUNK);
    let chunks: Vec<Result<Vec<Moments>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c);
            let len = CHUNK.min(n_samples - c * CHUNK);
            let mut acc = vec![Moments::default(); m];
            let mut vals = vec![0.0; m];
            for _ in 0..len {
                let (x, log_q) = match &proposal {
                    None => (f.sample(&mut rng), None),
                    Some(p) => {
                        let (x, log_q) = p.sample(&mut rng);
                        (x, Some(log_q))
                    }
                };
                if relative(&x).norm() == 0.0 {
                    // measure-zero diagonal
                    for a in acc.iter_mut() {
                        a.push(0.0);
                    }
                    continue;
                }
                let jet = f.jet(&x, third);
                let weight = log_q.map_or(mass, |lq| (jet.log_f - lq).exp());
                integrand(&x, &jet, &mut vals)?;
                for (a, v) in acc.iter_mut().zip(&vals) {
                    a.push(weight * v);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![Moments::default(); m];
    for chunk in chunks {
        for (t, c) in total.iter_mut().zip(chunk?) {
            t.merge(&c);
        }
    }
    Ok(total
        .into_iter()
        .map(|t| McEstimate {
            value: t.mean,
            stderr: (t.m2 / (t.n - 1.0) / t.n).sqrt(),
            n_samples,
            seed,
        })
        .collect())
}

/// Direction of a weighted Fisher functional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    Along(FrameField),
    Full,
}

impl Direction {
    pub fn name(&self) -> String {
        match self {
            Direction::Along(f) => f.name(),
            Direction::Full => "FULL".into(),
        }
    }

    fn order(&self) -> i32 {
        match self {
            Direction::Along(f) => f.diagonal_order(),
            Direction::Full => 0,
        }
    }
}

/// Rejects integrands behaving like `|v − w|^κ` with `κ ≤ −3`.
pub fn check_integrable(kappa: f64, what: &str) -> Result<()> {
    if kappa > -3.0 {
        Ok(())
    } else {
        Err(Error::Hypothesis(format!(
            "{what}: integrand behaves like |v-w|^{kappa} at the diagonal; integrability needs exponent > -3"
        )))
    }
}

/// `I_e^β(F) = ∬ β |e·∇log F|² F`, or `∬ β |∇log F|² F` for [`Direction::Full`].
pub fn fisher_functional(
    f: &Mixture6,
    pot: &Potential,
    weight: WeightField,
    direction: Direction,
    n_samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    let kappa = weight.diagonal_exponent(pot) + 2.0 * direction.order() as f64;
    check_integrable(kappa, &format!("I_{}^{}", direction.name(), weight.name()))?;
    let sampling = Sampling::for_exponent(kappa);
    let est = estimate_many(f, sampling, n_samples, seed, 1, false, |x, jet, out| {
        out[0] = weighted_square(pot, weight, direction, x, jet)?;
        Ok(())
    })?;
    Ok(est[0])
}

/// `β |e·ĝ|²` (or `β |ĝ|²`) at one point.
fn weighted_square(
    pot: &Potential,
    weight: WeightField,
    direction: Direction,
    x: &Vector6<f64>,
    jet: &Jet,
) -> Result<f64> {
    let beta = weight.eval(pot, relative(x).norm()).0;
    Ok(beta
        * match direction {
            Direction::Along(e) => e.value(x)?.dot(&jet.grad).powi(2),
            Direction::Full => jet.grad.norm_squared(),
        })
}

/// Integrand used for a first-variation pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingForm {
    /// `2β(e·∇F)(e·∇(b·∇F))/F − β(e·∇F)²(b·∇F)/F²`.
    Direct,
    /// `2β(e·∇log F)([e,b]·∇log F)F − div(βb)(e·∇log F)²F`.
    Bracket,
}

/// Exponent of the pairing integrand at the diagonal.
pub(crate) fn pairing_exponent(pot: &Potential, b: &VectorField, weight: WeightField, direction: Direction) -> f64 {
    let kb = b.scale.as_ref().map_or(0.0, |(w, p)| w.diagonal_exponent(p)) + b.frame.diagonal_order() as f64 - 1.0;
    weight.diagonal_exponent(pot) + 2.0 * direction.order() as f64 + kb.min(0.0)
}

/// `⟨(I_e^β)′(F), L_b(F)⟩`.
#[allow(clippy::too_many_arguments)]
pub fn pair_first_variation(
    f: &Mixture6,
    pot: &Potential,
    b: &VectorField,
    weight: WeightField,
    direction: Direction,
    form: PairingForm,
    n_samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    let kappa = pairing_exponent(pot, b, weight, direction);
    check_integrable(kappa, &format!("pairing of I_{}^{} with L_{}", direction.name(), weight.name(), b.name()))?;
    let est = estimate_many(f, Sampling::for_exponent(kappa), n_samples, seed, 1, false, |x, jet, out| {
        out[0] = pairing_integrand(pot, b, weight, direction, form, x, jet)?;
        Ok(())
    })?;
    Ok(est[0])
}

pub(crate) fn pairing_integrand(
    pot: &Potential,
    b: &VectorField,
    weight: WeightField,
    direction: Direction,
    form: PairingForm,
    x: &Vector6<f64>,
    jet: &Jet,
) -> Result<f64> {
    let z = relative(x);
    let r = z.norm();
    let (beta, dbeta) = weight.eval(pot, r);
    let g = &jet.grad;
    let c = b.value(x)?;
    let dc = b.jacobian(x)?;
    Ok(match form {
        PairingForm::Direct => {
            // ∇(c·∇F)/F = Dcᵀ ĝ + Ĥ c
            let grad_cg = dc.transpose() * g + jet.hess * c;
            let cg = c.dot(g);
            match direction {
                Direction::Along(e) => {
                    let ev = e.value(x)?;
                    let eg = ev.dot(g);
                    beta * (2.0 * eg * ev.dot(&grad_cg) - eg * eg * cg)
                }
                Direction::Full => beta * (2.0 * g.dot(&grad_cg) - g.norm_squared() * cg),
            }
        }
        PairingForm::Bracket => {
            // div(βc) = β div c + c·∇β, ∇β = β′ b̃₀ / r
            let grad_beta = crate::lifted::frames::lift(&z) * (dbeta / r);
            let div = beta * dc.trace() + c.dot(&grad_beta);
            match direction {
                Direction::Along(e) => {
                    let ev = e.value(x)?;
                    let bracket = dc * ev - e.jacobian(x)? * c;
                    let eg = ev.dot(g);
                    2.0 * beta * eg * bracket.dot(g) - div * eg * eg
                }
                Direction::Full => 2.0 * beta * g.dot(&(dc * g)) - div * g.norm_squared(),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifted::mixture::Gaussian6;
    use nalgebra::Matrix6;

    fn maxwell() -> Potential {
        Potential::power_law(0.0).unwrap()
    }

    #[test]
    fn unit_gaussian_fisher_is_six() {
        let f = Mixture6::standard();
        let est = fisher_functional(&f, &maxwell(), WeightField::One, Direction::Full, 200_000, 1).unwrap();
        assert!((est.value - 6.0).abs() <= 3.0 * est.stderr, "{est:?}");
        // |u|² ~ χ²₆ has variance 12
        assert!((est.stderr / (12.0f64 / 200_000.0).sqrt() - 1.0).abs() < 0.05);
        let e = Vector6::new(0.6, 0.0, 0.8, 0.0, 0.0, 0.0);
        let est = fisher_functional(&f, &maxwell(), WeightField::One, Direction::Along(FrameField::Const(e)), 100_000, 2).unwrap();
        assert!((est.value - 1.0).abs() <= 3.0 * est.stderr);
    }

    #[test]
    fn anisotropic_precision_and_mass() {
        let a = Matrix6::from_diagonal(&Vector6::new(1.0, 2.0, 3.0, 0.5, 1.5, 4.0));
        let f = Mixture6::new(vec![Gaussian6::new(2.5, Vector6::zeros(), a).unwrap()]).unwrap();
        let est = fisher_functional(&f, &maxwell(), WeightField::One, Direction::Full, 200_000, 3).unwrap();
        // I = tr(A) ‖F‖₁
        assert!((est.value - 12.0 * 2.5).abs() <= 3.0 * est.stderr);
    }

    #[test]
    fn seeds_are_reproducible() {
        let f = Mixture6::standard();
        let pot = Potential::power_law(-2.5).unwrap();
        let a = fisher_functional(&f, &pot, WeightField::Beta1, Direction::Full, 10_000, 9).unwrap();
        let b = fisher_functional(&f, &pot, WeightField::Beta1, Direction::Full, 10_000, 9).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        let c = fisher_functional(&f, &pot, WeightField::Beta1, Direction::Full, 10_000, 10).unwrap();
        assert_ne!(a.value, c.value);
    }

    #[test]
    fn importance_sampler_is_unbiased() {
        let f = Mixture6::standard();
        let exact = fisher_functional(&f, &maxwell(), WeightField::One, Direction::Full, 100_000, 4).unwrap();
        let est = estimate_many(&f, Sampling::NearDiagonal { s: -0.5 }, 200_000, 5, 2, false, |_, jet, out| {
            out[0] = 1.0;
            out[1] = jet.grad.norm_squared();
            Ok(())
        })
        .unwrap();
        assert!((est[0].value - 1.0).abs() <= 3.0 * est[0].stderr, "{:?}", est[0]);
        assert!(est[1].agrees_with(&exact, 3.0));
        // under N(0, I₆), |v−w|² ~ 2χ²₃, so E r^{-5/2} = 2^{-5/2} Γ(1/4)/Γ(3/2)
        let want = 2f64.powf(-2.5) * libm::tgamma(0.25) / libm::tgamma(1.5);
        let est = estimate_many(&f, Sampling::for_exponent(-2.5), 200_000, 6, 1, false, |x, _, out| {
            out[0] = relative(x).norm().powf(-2.5);
            Ok(())
        })
        .unwrap();
        assert!((est[0].value - want).abs() <= 3.0 * est[0].stderr, "{:?} vs {want}", est[0]);
        assert!(est[0].stderr < 0.01 * want);
    }

    #[test]
    fn integrability_is_enforced() {
        let f = Mixture6::standard();
        let coulomb = Potential::power_law(-3.0).unwrap();
        let err = fisher_functional(&f, &coulomb, WeightField::Alpha, Direction::Full, 100, 1).unwrap_err();
        assert!(matches!(err, Error::Hypothesis(ref m) if m.contains("exponent > -3")));
        // compensated by the direction vanishing on the diagonal
        assert!(fisher_functional(&f, &coulomb, WeightField::Alpha, Direction::Along(FrameField::B1), 1000, 1).is_ok());
    }

    #[test]
    fn bracket_and_direct_pairings_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = Mixture6::random_symmetric(&mut rng, 1).unwrap();
        let pot = maxwell();
        let n = 400_000;
        for (b, e) in [
            (FrameField::B0, Direction::Along(FrameField::B2)),
            (FrameField::B1, Direction::Along(FrameField::Nu1)),
            (FrameField::B0, Direction::Full),
        ] {
            let b = VectorField::from(b);
            let d = pair_first_variation(&f, &pot, &b, WeightField::One, e, PairingForm::Direct, n, 100).unwrap();
            let k = pair_first_variation(&f, &pot, &b, WeightField::One, e, PairingForm::Bracket, n, 200).unwrap();
            assert!(d.agrees_with(&k, 3.0), "{} {}: {d:?} {k:?}", b.name(), e.name());
        }
        // translation along its own direction pairs to zero for F even about its mean
        let g = Mixture6::standard();
        let e = FrameField::Const(Vector6::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0));
        let d = pair_first_variation(&g, &pot, &e.into(), WeightField::One, Direction::Along(e), PairingForm::Direct, n, 7).unwrap();
        assert!(d.value.abs() <= 3.0 * d.stderr);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_ne!(sub_seed(1, 0), sub_seed(2, 0));
        assert_eq!(sub_seed(5, 3), sub_seed(5, 3));
    }
}
