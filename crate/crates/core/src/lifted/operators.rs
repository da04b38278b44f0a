//! The lifted collision operators on R⁶ and their gradients.
//!
//! With `d_i = e_i − e_{i+3}`, `tr_δ H = Σ d_iᵀ H d_i` and `s = b̃₀·∇F`:
//!
//! * `Q_KS F = α r² tr_δ H + 2(rα′ + 2α) s`
//! * `Q_L F  = α (r² tr_δ H − b̃₀ᵀ H b̃₀ − 4 s)`
//!
//! Both are linear in `(∇F, Hess F)`, so the same code evaluates `QF` and
//! `QF / F` from normalized jets.

use nalgebra::{Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::kernels::Potential;
use crate::lifted::frames::{lift, lift_matrix, relative, FrameField, VectorField};
use crate::lifted::mixture::{Jet, Mixture6};

/// Evaluation route for `Q_KS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QksForm {
    /// Expanded divergence form `∂_δ·(α r² ∂_δ F)`.
    Direct,
    /// `Q_L + L₀∘L₀ + β₁ L₀` through the frame fields.
    Decomposed,
}

/// Which operator a pairing or bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    Landau,
    KriegerStrain,
    /// `Q_KS − Q_L`.
    Difference,
}

fn radius(x: &Vector6<f64>) -> Result<f64> {
    let r = relative(x).norm();
    if r == 0.0 {
        return Err(Error::invalid("the lifted operators are evaluated off the diagonal v = w"));
    }
    Ok(r)
}

fn trace_delta(h: &Matrix6<f64>) -> f64 {
    (0..3).map(|i| h[(i, i)] + h[(i + 3, i + 3)] - h[(i, i + 3)] - h[(i + 3, i)]).sum()
}

/// `Q_L F` from `∇F` and `Hess F`.
pub fn landau_from_derivatives(pot: &Potential, x: &Vector6<f64>, g: &Vector6<f64>, h: &Matrix6<f64>) -> Result<f64> {
    let r = radius(x)?;
    let b0 = lift(&relative(x));
    Ok(pot.alpha(r) * (r * r * trace_delta(h) - b0.dot(&(h * b0)) - 4.0 * b0.dot(g)))
}

/// `Q_KS F` (direct form) from `∇F` and `Hess F`.
pub fn krieger_strain_from_derivatives(pot: &Potential, x: &Vector6<f64>, g: &Vector6<f64>, h: &Matrix6<f64>) -> Result<f64> {
    let r = radius(x)?;
    let b0 = lift(&relative(x));
    let (a, da) = (pot.alpha(r), pot.dalpha(r));
    Ok(a * r * r * trace_delta(h) + 2.0 * (r * da + 2.0 * a) * b0.dot(g))
}

/// `c·∇(c·∇F) = (Dc c)·∇F + cᵀ Hess F c`.
fn second_along(c: &VectorField, x: &Vector6<f64>, g: &Vector6<f64>, h: &Matrix6<f64>) -> Result<f64> {
    let v = c.value(x)?;
    Ok((c.jacobian(x)? * v).dot(g) + v.dot(&(h * v)))
}

/// `Q_L F = Σ_k √α b̃_k·∇(√α b̃_k·∇F)`.
pub fn apply_ql(f: &Mixture6, pot: &Potential, x: &Vector6<f64>) -> Result<f64> {
    let (_, g, h) = f.eval(x);
    landau_frame_form(pot, x, &g, &h)
}

fn landau_frame_form(pot: &Potential, x: &Vector6<f64>, g: &Vector6<f64>, h: &Matrix6<f64>) -> Result<f64> {
    let mut q = 0.0;
    for k in FrameField::LANDAU {
        let c = VectorField::scaled(crate::lifted::WeightField::Gen { p: 0.5, q: 0.0 }, k, pot);
        q += second_along(&c, x, g, h)?;
    }
    Ok(q)
}

pub fn apply_qks(f: &Mixture6, pot: &Potential, x: &Vector6<f64>, form: QksForm) -> Result<f64> {
    let (_, g, h) = f.eval(x);
    match form {
        QksForm::Direct => krieger_strain_from_derivatives(pot, x, &g, &h),
        QksForm::Decomposed => krieger_strain_decomposed(pot, x, &g, &h),
    }
}

/// Sum of absolute values of the terms of the decomposed form; the natural
/// scale for comparing the two routes.
pub fn qks_scale(f: &Mixture6, pot: &Potential, x: &Vector6<f64>) -> Result<f64> {
    let (_, g, h) = f.eval(x);
    let l0 = VectorField::sqrt_alpha_b0(pot);
    let v = l0.value(x)?;
    let r = radius(x)?;
    let b1 = crate::lifted::WeightField::Beta1.eval(pot, r).0;
    let mut s = (l0.jacobian(x)? * v).dot(&g).abs() + v.dot(&(h * v)).abs() + (b1 * v.dot(&g)).abs();
    for k in FrameField::LANDAU {
        let c = VectorField::scaled(crate::lifted::WeightField::Gen { p: 0.5, q: 0.0 }, k, pot);
        let cv = c.value(x)?;
        s += (c.jacobian(x)? * cv).dot(&g).abs() + cv.dot(&(h * cv)).abs();
    }
    Ok(s)
}

fn krieger_strain_decomposed(pot: &Potential, x: &Vector6<f64>, g: &Vector6<f64>, h: &Matrix6<f64>) -> Result<f64> {
    let l0 = VectorField::sqrt_alpha_b0(pot);
    let r = radius(x)?;
    let beta1 = crate::lifted::WeightField::Beta1.eval(pot, r).0;
    Ok(landau_frame_form(pot, x, g, h)? + second_along(&l0, x, g, h)? + beta1 * l0.value(x)?.dot(g))
}

/// `(QF/F, ∇(QF)/F)` from a jet carrying third derivatives.
pub fn operator_with_gradient(op: Operator, pot: &Potential, x: &Vector6<f64>, jet: &Jet) -> Result<(f64, Vector6<f64>)> {
    match op {
        Operator::Landau => landau_with_gradient(pot, x, jet),
        Operator::KriegerStrain => krieger_strain_with_gradient(pot, x, jet),
        Operator::Difference => {
            let (a, ga) = krieger_strain_with_gradient(pot, x, jet)?;
            let (b, gb) = landau_with_gradient(pot, x, jet)?;
            Ok((a - b, ga - gb))
        }
    }
}

struct Pieces {
    r: f64,
    grad_r: Vector6<f64>,
    b0: Vector6<f64>,
    tr: f64,
    grad_tr: Vector6<f64>,
    s: f64,
    grad_s: Vector6<f64>,
}

fn pieces(x: &Vector6<f64>, jet: &Jet) -> Result<Pieces> {
    let r = radius(x)?;
    let b0 = lift(&relative(x));
    let p0 = lift_matrix(&nalgebra::Matrix3::identity());
    let (g, h) = (&jet.grad, &jet.hess);
    let mut grad_tr = Vector6::zeros();
    for i in 0..3 {
        let d = Vector6::ith(i, 1.0) - Vector6::ith(i + 3, 1.0);
        grad_tr += jet.third_contract(&d, &d);
    }
    Ok(Pieces {
        r,
        grad_r: b0 / r,
        b0,
        tr: trace_delta(h),
        grad_tr,
        s: b0.dot(g),
        grad_s: p0 * g + h * b0,
    })
}

fn krieger_strain_with_gradient(pot: &Potential, x: &Vector6<f64>, jet: &Jet) -> Result<(f64, Vector6<f64>)> {
    let p = pieces(x, jet)?;
    let r = p.r;
    let (a, da, d2a) = (pot.alpha(r), pot.dalpha(r), pot.d2alpha(r));
    let phi = a * r * r;
    let dphi = da * r * r + 2.0 * a * r;
    let psi = 2.0 * (r * da + 2.0 * a);
    let dpsi = 2.0 * (r * d2a + 3.0 * da);
    let q = phi * p.tr + psi * p.s;
    let grad = p.grad_r * (dphi * p.tr + dpsi * p.s) + p.grad_tr * phi + p.grad_s * psi;
    Ok((q, grad))
}

fn landau_with_gradient(pot: &Potential, x: &Vector6<f64>, jet: &Jet) -> Result<(f64, Vector6<f64>)> {
    let p = pieces(x, jet)?;
    let r = p.r;
    let (a, da) = (pot.alpha(r), pot.dalpha(r));
    let p0 = lift_matrix(&nalgebra::Matrix3::identity());
    let hb = jet.hess * p.b0;
    let bq = p.b0.dot(&hb);
    let grad_bq = jet.third_contract(&p.b0, &p.b0) + p0 * hb * 2.0;
    let inner = r * r * p.tr - bq - 4.0 * p.s;
    let grad_inner = p.grad_r * (2.0 * r * p.tr) + p.grad_tr * (r * r) - grad_bq - p.grad_s * 4.0;
    Ok((a * inner, p.grad_r * (da * inner) + grad_inner * a))
}

/// Normalized integrand of `⟨I′(F), G⟩`: `2 ĝ·∇Ĝ − |ĝ|² Ĝ`, where hats
/// denote division by `F`. Multiply by `F` for the density.
pub fn fisher_variation_integrand(jet: &Jet, q: f64, grad_q: &Vector6<f64>) -> f64 {
    2.0 * jet.grad.dot(grad_q) - jet.grad.norm_squared() * q
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn point(rng: &mut ChaCha8Rng) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// `(∂_v − ∂_w)_i [α a_ij (∂_v − ∂_w)_j F]` expanded by hand:
    /// `Σ_i ∂_δi a_ij = −4 z_j` and `a z = 0`.
    fn landau_aij(pot: &Potential, x: &Vector6<f64>, g: &Vector6<f64>, h: &Matrix6<f64>) -> f64 {
        let z = relative(x);
        let r2 = z.norm_squared();
        let a = Matrix3::identity() * r2 - z * z.transpose();
        let mut hd = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                hd[(i, j)] = h[(i, j)] - h[(i, j + 3)] - h[(i + 3, j)] + h[(i + 3, j + 3)];
            }
        }
        let gd = Vector3::new(g[0] - g[3], g[1] - g[4], g[2] - g[5]);
        pot.alpha(r2.sqrt()) * ((a.component_mul(&hd)).sum() - 4.0 * z.dot(&gd))
    }

    #[test]
    fn landau_matches_aij_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        for gamma in [-3.0, -2.5, -1.0, 0.0] {
            let pot = Potential::power_law(gamma).unwrap();
            for _ in 0..100 {
                let x = point(&mut rng);
                let (_, g, h) = f.eval(&x);
                let want = landau_aij(&pot, &x, &g, &h);
                let got = apply_ql(&f, &pot, &x).unwrap();
                let closed = landau_from_derivatives(&pot, &x, &g, &h).unwrap();
                let scale = qks_scale(&f, &pot, &x).unwrap();
                assert!((got - want).abs() <= 1e-9 * scale);
                assert!((closed - want).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn qks_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        for gamma in [-3.0, -2.5, -1.0, 0.0] {
            let pot = Potential::power_law(gamma).unwrap();
            for _ in 0..100 {
                let x = point(&mut rng);
                let d = apply_qks(&f, &pot, &x, QksForm::Direct).unwrap();
                let c = apply_qks(&f, &pot, &x, QksForm::Decomposed).unwrap();
                assert!((d - c).abs() <= 1e-8 * qks_scale(&f, &pot, &x).unwrap());
            }
        }
    }

    #[test]
    fn maxwell_specialization_and_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = Mixture6::random_symmetric(&mut rng, 1).unwrap();
        let pot = Potential::power_law(0.0).unwrap();
        let b0 = VectorField::from(FrameField::B0);
        for _ in 0..20 {
            let x = point(&mut rng);
            let (_, g, h) = f.eval(&x);
            let want = apply_ql(&f, &pot, &x).unwrap()
                + second_along(&b0, &x, &g, &h).unwrap()
                + 6.0 * FrameField::B0.value(&x).unwrap().dot(&g);
            let got = apply_qks(&f, &pot, &x, QksForm::Direct).unwrap();
            assert!((got - want).abs() <= 1e-10 * qks_scale(&f, &pot, &x).unwrap());
            let zero = (Vector6::zeros(), Matrix6::zeros());
            assert_eq!(krieger_strain_from_derivatives(&pot, &x, &zero.0, &zero.1).unwrap(), 0.0);
            // F = exp(−|v − w|²/2): g = −b̃₀F, H = (b̃₀b̃₀ᵀ − P₀)F
            let b = FrameField::B0.value(&x).unwrap();
            let fz = (-0.5 * relative(&x).norm_squared()).exp();
            let g = -b * fz;
            let h = (b * b.transpose() - lift_matrix(&Matrix3::identity())) * fz;
            let q = landau_frame_form(&pot, &x, &g, &h).unwrap();
            assert!(q.abs() <= 1e-12 * (1.0 + b.norm_squared()).powi(2) * fz);
        }
    }

    #[test]
    fn linear_in_f() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        let pot = Potential::power_law(-2.5).unwrap();
        let x = point(&mut rng);
        let total = apply_qks(&f, &pot, &x, QksForm::Direct).unwrap();
        let parts: f64 = f
            .components()
            .iter()
            .map(|c| apply_qks(&Mixture6::new(vec![c.clone()]).unwrap(), &pot, &x, QksForm::Direct).unwrap())
            .sum();
        assert!((total - parts).abs() <= 1e-12 * qks_scale(&f, &pot, &x).unwrap());
    }

    #[test]
    fn gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        let step = 1e-5;
        for gamma in [-2.5, 0.5] {
            let pot = Potential::power_law(gamma).unwrap();
            for _ in 0..20 {
                let x = point(&mut rng);
                let jet = f.jet(&x, true);
                for op in [Operator::KriegerStrain, Operator::Landau] {
                    let value = |y: &Vector6<f64>| {
                        let (_, g, h) = f.eval(y);
                        match op {
                            Operator::KriegerStrain => krieger_strain_from_derivatives(&pot, y, &g, &h).unwrap(),
                            _ => landau_from_derivatives(&pot, y, &g, &h).unwrap(),
                        }
                    };
                    let (q, gq) = operator_with_gradient(op, &pot, &x, &jet).unwrap();
                    assert!((q * jet.f - value(&x)).abs() <= 1e-12 * (1.0 + q.abs()) * jet.f);
                    let gq = gq * jet.f;
                    for i in 0..6 {
                        let e = Vector6::ith(i, step);
                        let fd = (value(&(x + e)) - value(&(x - e))) / (2.0 * step);
                        assert!((fd - gq[i]).abs() <= 1e-5 * (gq.amax() + jet.f), "{op:?} {i}: {fd} vs {}", gq[i]);
                    }
                }
            }
        }
    }
}
