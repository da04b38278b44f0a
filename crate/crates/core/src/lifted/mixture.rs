//! Gaussian mixtures on R⁶ with closed-form derivatives up to third order.

use nalgebra::{Cholesky, Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// The (v, w) swap as a matrix.
pub(crate) fn swap_matrix() -> Matrix6<f64> {
    let mut p = Matrix6::zeros();
    for i in 0..3 {
        p[(i, i + 3)] = 1.0;
        p[(i + 3, i)] = 1.0;
    }
    p
}

pub(crate) fn swap(x: &Vector6<f64>) -> Vector6<f64> {
    Vector6::new(x[3], x[4], x[5], x[0], x[1], x[2])
}

/// One weighted Gaussian `w · N(m, A⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian6 {
    weight: f64,
    mean: Vector6<f64>,
    precision: Matrix6<f64>,
    // upper factor S with S Sᵀ = A⁻¹, for sampling
    sample_factor: Matrix6<f64>,
    log_norm: f64,
    // no v-w coupling: the quadratic form splits into two blocks
    block_diagonal: bool,
}

impl Gaussian6 {
    pub fn new(weight: f64, mean: Vector6<f64>, precision: Matrix6<f64>) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::invalid(format!("component weight must be positive, got {weight}")));
        }
        if mean.iter().any(|v| !v.is_finite()) || precision.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("component mean and precision must be finite"));
        }
        let asym = (precision - precision.transpose()).amax();
        if asym > 1e-12 * precision.amax() {
            return Err(Error::invalid("precision matrix must be symmetric"));
        }
        let chol = Cholesky::new(precision).ok_or_else(|| Error::invalid("precision matrix must be positive definite"))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let l_inv = l.try_inverse().ok_or_else(|| Error::invalid("precision matrix is singular"))?;
        Ok(Self {
            weight,
            mean,
            precision,
            sample_factor: l_inv.transpose(),
            log_norm: weight.ln() + 0.5 * log_det - 3.0 * LOG_2PI,
            block_diagonal: precision.fixed_view::<3, 3>(0, 3).iter().all(|&v| v == 0.0),
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &Vector6<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &Matrix6<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> Matrix6<f64> {
        self.sample_factor * self.sample_factor.transpose()
    }

    fn swapped(&self) -> Self {
        let p = swap_matrix();
        Self::new(self.weight, swap(&self.mean), p * self.precision * p).expect("swap preserves validity")
    }

    fn is_swap_invariant(&self) -> bool {
        let p = swap_matrix();
        let scale = self.precision.amax().max(self.mean.amax()).max(1.0);
        (swap(&self.mean) - self.mean).amax() <= 1e-14 * scale
            && (p * self.precision * p - self.precision).amax() <= 1e-14 * scale
    }
}

/// Value and normalized derivatives of a mixture at one point.
///
/// `grad`, `hess` and `third` are divided by `F`, which keeps them finite
/// far in the tails where `F` itself underflows.
#[derive(Debug, Clone)]
pub struct Jet {
    pub log_f: f64,
    pub f: f64,
    pub grad: Vector6<f64>,
    pub hess: Matrix6<f64>,
    /// `third[l][(i, j)] = ∂_i∂_j∂_l F / F`.
    pub third: Option<[Matrix6<f64>; 6]>,
}

impl Jet {
    pub fn gradient(&self) -> Vector6<f64> {
        self.grad * self.f
    }

    pub fn hessian(&self) -> Matrix6<f64> {
        self.hess * self.f
    }

    /// `Σ_ij T_ijl a_i b_j` for each `l`, normalized by `F`.
    pub fn third_contract(&self, a: &Vector6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
        let t = self.third.as_ref().expect("jet evaluated without third derivatives");
        Vector6::from_fn(|l, _| a.dot(&(t[l] * b)))
    }
}

/// Finite positive combination of Gaussians on R⁶.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture6 {
    components: Vec<Gaussian6>,
    symmetric: bool,
}

impl Mixture6 {
    pub fn new(components: Vec<Gaussian6>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        Ok(Self { components, symmetric: false })
    }

    /// Closes the component list under the (v, w) swap, so `F(v,w) = F(w,v)`.
    /// Components already invariant under the swap are kept once.
    pub fn symmetric(components: Vec<Gaussian6>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        let mut all = Vec::with_capacity(2 * components.len());
        for c in components {
            if c.is_swap_invariant() {
                all.push(c);
            } else {
                all.push(c.swapped());
                all.push(c);
            }
        }
        Ok(Self { components: all, symmetric: true })
    }

    pub fn single(mean: Vector6<f64>, precision: Matrix6<f64>) -> Result<Self> {
        Self::new(vec![Gaussian6::new(1.0, mean, precision)?])
    }

    /// Standard normal on R⁶; symmetric.
    pub fn standard() -> Self {
        Self::symmetric(vec![Gaussian6::new(1.0, Vector6::zeros(), Matrix6::identity()).expect("valid")]).expect("valid")
    }

    /// `f ⊗ f` for `f = mass · N(m, B⁻¹)` on R³.
    pub fn tensor(mean: Vector3<f64>, precision: Matrix3<f64>, mass: f64) -> Result<Self> {
        let mut a = Matrix6::zeros();
        a.fixed_view_mut::<3, 3>(0, 0).copy_from(&precision);
        a.fixed_view_mut::<3, 3>(3, 3).copy_from(&precision);
        let m = Vector6::new(mean[0], mean[1], mean[2], mean[0], mean[1], mean[2]);
        Self::symmetric(vec![Gaussian6::new(mass * mass, m, a)?])
    }

    /// Random swap-closed mixture built from `pairs` seed components.
    pub fn random_symmetric<R: Rng + ?Sized>(rng: &mut R, pairs: usize) -> Result<Self> {
        let mut comps = Vec::with_capacity(pairs);
        for _ in 0..pairs {
            let l = Matrix6::from_fn(|_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
            let a = l * l.transpose() + Matrix6::identity() * 0.6;
            let a = 0.5 * (a + a.transpose());
            let m = Vector6::from_fn(|_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            let w = 0.5 + rng.random::<f64>();
            comps.push(Gaussian6::new(w, m, a)?);
        }
        Self::symmetric(comps)
    }

    pub fn components(&self) -> &[Gaussian6] {
        &self.components
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `‖F‖₁`.
    pub fn mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn density(&self, x: &Vector6<f64>) -> f64 {
        self.jet(x, false).f
    }

    /// `(F, ∇F, Hess F)` at `x`.
    pub fn eval(&self, x: &Vector6<f64>) -> (f64, Vector6<f64>, Matrix6<f64>) {
        let j = self.jet(x, false);
        (j.f, j.gradient(), j.hessian())
    }

    pub fn jet(&self, x: &Vector6<f64>, with_third: bool) -> Jet {
        let mut logs = Vec::with_capacity(self.components.len());
        let mut us = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let d = x - c.mean;
            let u = c.precision * d;
            let q = if c.block_diagonal {
                // q_v + q_w commutes exactly, so tensors are swap-symmetric bit for bit
                let (dv, dw) = (d.fixed_rows::<3>(0), d.fixed_rows::<3>(3));
                dv.dot(&(c.precision.fixed_view::<3, 3>(0, 0) * dv)) + dw.dot(&(c.precision.fixed_view::<3, 3>(3, 3) * dw))
            } else {
                d.dot(&u)
            };
            logs.push(c.log_norm - 0.5 * q);
            us.push(u);
        }
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = ws.iter().sum();
        let log_f = top + total.ln();
        let mut grad = Vector6::zeros();
        let mut hess = Matrix6::zeros();
        let mut third = if with_third { Some([Matrix6::zeros(); 6]) } else { None };
        for ((c, u), w) in self.components.iter().zip(&us).zip(&ws) {
            let p = w / total;
            grad -= u * p;
            let uu = u * u.transpose();
            hess += (uu - c.precision) * p;
            if let Some(t) = third.as_mut() {
                for (l, tl) in t.iter_mut().enumerate() {
                    let a_l = c.precision.column(l);
                    *tl += (c.precision * u[l] - uu * u[l] + a_l * u.transpose() + u * a_l.transpose()) * p;
                }
            }
        }
        Jet { log_f, f: log_f.exp(), grad, hess, third }
    }

    /// Draws one point from `F / ‖F‖₁`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector6<f64> {
        let c = &self.components[self.pick(rng)];
        let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        c.mean + c.sample_factor * z
    }

    pub(crate) fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut t = rng.random::<f64>() * self.mass();
        for (i, c) in self.components.iter().enumerate() {
            t -= c.weight;
            if t < 0.0 {
                return i;
            }
        }
        self.components.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn stationary_point_of_isotropic_gaussian() {
        let a = Matrix6::identity() * 2.0;
        let m = Vector6::new(0.1, 0.2, 0.3, -0.1, 0.0, 0.4);
        let f = Mixture6::single(m, a).unwrap();
        let (v, g, h) = f.eval(&m);
        assert!(g.amax() < 1e-15);
        assert!((h + a * v).amax() < 1e-14 * v);
        // normalization: peak of N(m, I/2) is (2/(2π))³
        assert!((v - (1.0 / std::f64::consts::PI).powi(3)).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        let h = 1e-4;
        for _ in 0..100 {
            let x = random_point(&mut rng);
            let j = f.jet(&x, true);
            let (g, hs) = (j.gradient(), j.hessian());
            let scale = j.f * (1.0 + j.grad.amax() + j.hess.amax());
            for i in 0..6 {
                let e = Vector6::ith(i, h);
                let (fp, gp, hp) = f.eval(&(x + e));
                let (fm, gm, hm) = f.eval(&(x - e));
                assert!(((fp - fm) / (2.0 * h) - g[i]).abs() <= 1e-6 * scale);
                assert!((((gp - gm) / (2.0 * h)) - hs.column(i)).amax() <= 1e-6 * scale);
                let t_hat = j.third.as_ref().unwrap()[i];
                let t = t_hat * j.f;
                let tscale = scale + j.f * t_hat.amax();
                assert!(((hp - hm) / (2.0 * h) - t).amax() <= 1e-6 * tscale);
            }
        }
    }

    #[test]
    fn mixture_is_sum_of_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Mixture6::random_symmetric(&mut rng, 1).unwrap();
        let x = random_point(&mut rng);
        let total: f64 = f.components().iter().map(|c| Mixture6::new(vec![c.clone()]).unwrap().density(&x)).sum();
        assert!((f.density(&x) / total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn symmetric_closure_and_tensor() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        assert_eq!(f.components().len(), 4);
        let b = Matrix3::new(1.5, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 0.8);
        let t = Mixture6::tensor(Vector3::new(0.3, -0.2, 0.1), b, 1.0).unwrap();
        assert_eq!(t.components().len(), 1);
        for _ in 0..50 {
            let x = random_point(&mut rng);
            let (a, s) = (f.density(&x), f.density(&swap(&x)));
            assert!((a - s).abs() <= 1e-13 * a);
            assert_eq!(t.density(&x).to_bits(), t.density(&swap(&x)).to_bits());
        }
    }

    #[test]
    fn sampling_matches_mean_and_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Vector6::new(1.0, 0.0, -1.0, 0.5, 0.5, 0.0);
        let f = Mixture6::single(m, Matrix6::identity() * 4.0).unwrap();
        let n = 20_000;
        let mean = (0..n).map(|_| f.sample(&mut rng)).fold(Vector6::zeros(), |a, x| a + x) / n as f64;
        // standard error per coordinate is 0.5/√n
        assert!((mean - m).amax() < 5.0 * 0.5 / (n as f64).sqrt());
        assert!(Gaussian6::new(1.0, m, -Matrix6::identity()).is_err());
        assert!(Gaussian6::new(0.0, m, Matrix6::identity()).is_err());
    }
}
