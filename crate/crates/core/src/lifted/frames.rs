//! Vector fields on R⁶ = {(v, w)}, radial weights in `r = |v − w|`, brackets
//! and flows.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::kernels::Potential;
use crate::lifted::mixture::Mixture6;

pub(crate) fn split(x: &Vector6<f64>) -> (Vector3<f64>, Vector3<f64>) {
    (Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]))
}

pub(crate) fn lift(b: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(b[0], b[1], b[2], -b[0], -b[1], -b[2])
}

/// `z = v − w`.
pub(crate) fn relative(x: &Vector6<f64>) -> Vector3<f64> {
    let (v, w) = split(x);
    v - w
}

/// `[[M, −M], [−M, M]]`.
pub(crate) fn lift_matrix(m: &Matrix3<f64>) -> Matrix6<f64> {
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(m);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(m);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-m));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-m));
    out
}

/// Cross-product matrix of `e_k`, so `e_k × z = E_k z`.
fn cross_matrix(k: usize) -> Matrix3<f64> {
    let e = Vector3::ith(k, 1.0);
    e.cross_matrix()
}

/// Named vector fields of the lifted calculus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameField {
    /// `b̃₀ = (v − w, w − v)`.
    B0,
    /// `b̃_k = (b_k, −b_k)` with `b_k = e_k × (v − w)`.
    B1,
    B2,
    B3,
    /// `b̃₀ / (√2 |v − w|)`.
    N,
    /// `ν_i = e_i + e_{i+3}`.
    Nu1,
    Nu2,
    Nu3,
    Const(Vector6<f64>),
}

impl FrameField {
    pub const LANDAU: [FrameField; 3] = [FrameField::B1, FrameField::B2, FrameField::B3];
    pub const NU: [FrameField; 3] = [FrameField::Nu1, FrameField::Nu2, FrameField::Nu3];

    pub fn name(&self) -> String {
        match self {
            FrameField::B0 => "B0".into(),
            FrameField::B1 => "B1".into(),
            FrameField::B2 => "B2".into(),
            FrameField::B3 => "B3".into(),
            FrameField::N => "N".into(),
            FrameField::Nu1 => "NU1".into(),
            FrameField::Nu2 => "NU2".into(),
            FrameField::Nu3 => "NU3".into(),
            FrameField::Const(e) => format!("CONST({:?})", e.as_slice()),
        }
    }

    fn rotation_index(&self) -> Option<usize> {
        match self {
            FrameField::B1 => Some(0),
            FrameField::B2 => Some(1),
            FrameField::B3 => Some(2),
            _ => None,
        }
    }

    /// Order of vanishing on the diagonal `v = w`.
    pub fn diagonal_order(&self) -> i32 {
        match self {
            FrameField::B0 | FrameField::B1 | FrameField::B2 | FrameField::B3 => 1,
            _ => 0,
        }
    }

    pub fn value(&self, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        let z = relative(x);
        Ok(match self {
            FrameField::B0 => lift(&z),
            FrameField::N => {
                let r = z.norm();
                if r == 0.0 {
                    return Err(Error::invalid("N is undefined on the diagonal v = w"));
                }
                lift(&z) / (std::f64::consts::SQRT_2 * r)
            }
            FrameField::Nu1 | FrameField::Nu2 | FrameField::Nu3 => {
                let i = FrameField::NU.iter().position(|f| f == self).expect("nu field");
                Vector6::ith(i, 1.0) + Vector6::ith(i + 3, 1.0)
            }
            FrameField::Const(e) => *e,
            b => {
                let k = b.rotation_index().expect("rotation field");
                lift(&Vector3::ith(k, 1.0).cross(&z))
            }
        })
    }

    /// `(Db)_{ij} = ∂_j b_i`.
    pub fn jacobian(&self, x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        Ok(match self {
            FrameField::B0 => lift_matrix(&Matrix3::identity()),
            FrameField::N => {
                let z = relative(x);
                let r = z.norm();
                if r == 0.0 {
                    return Err(Error::invalid("N is undefined on the diagonal v = w"));
                }
                let b = lift(&z);
                let s = std::f64::consts::SQRT_2;
                lift_matrix(&Matrix3::identity()) / (s * r) - b * b.transpose() / (s * r.powi(3))
            }
            FrameField::Nu1 | FrameField::Nu2 | FrameField::Nu3 | FrameField::Const(_) => Matrix6::zeros(),
            b => lift_matrix(&cross_matrix(b.rotation_index().expect("rotation field"))),
        })
    }

    pub fn divergence(&self, x: &Vector6<f64>) -> Result<f64> {
        Ok(self.jacobian(x)?.trace())
    }
}

/// Radial weights `β(|v − w|)` built from a potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightField {
    One,
    Alpha,
    /// `√α / r²`.
    SqrtAlphaOverR2,
    /// `β₁ = 6√α + rα′/√α`.
    Beta1,
    /// `β₂ = β₁ − 4√α`.
    Beta2,
    /// `α^p r^q`.
    Gen { p: f64, q: f64 },
}

impl WeightField {
    pub fn name(&self) -> String {
        match self {
            WeightField::One => "ONE".into(),
            WeightField::Alpha => "ALPHA".into(),
            WeightField::SqrtAlphaOverR2 => "SQRT_ALPHA_OVER_R2".into(),
            WeightField::Beta1 => "BETA1".into(),
            WeightField::Beta2 => "BETA2".into(),
            WeightField::Gen { p, q } => format!("GEN({p},{q})"),
        }
    }

    /// `(β(r), β′(r))`.
    pub fn eval(&self, pot: &Potential, r: f64) -> (f64, f64) {
        let (a, da) = (pot.alpha(r), pot.dalpha(r));
        let sa = a.sqrt();
        match self {
            WeightField::One => (1.0, 0.0),
            WeightField::Alpha => (a, da),
            WeightField::SqrtAlphaOverR2 => (sa / (r * r), da / (2.0 * sa * r * r) - 2.0 * sa / r.powi(3)),
            WeightField::Beta1 | WeightField::Beta2 => {
                let d2a = pot.d2alpha(r);
                let b1 = 6.0 * sa + r * da / sa;
                let db1 = 4.0 * da / sa + r * d2a / sa - r * da * da / (2.0 * a * sa);
                if *self == WeightField::Beta1 {
                    (b1, db1)
                } else {
                    (b1 - 4.0 * sa, db1 - 2.0 * da / sa)
                }
            }
            WeightField::Gen { p, q } => {
                let v = a.powf(*p) * r.powf(*q);
                (v, p * a.powf(p - 1.0) * da * r.powf(*q) + q * a.powf(*p) * r.powf(q - 1.0))
            }
        }
    }

    /// Exponent `κ` with `β ~ r^κ` as `r → 0`.
    pub fn diagonal_exponent(&self, pot: &Potential) -> f64 {
        let g = pot.gamma().unwrap_or(0.0);
        match self {
            WeightField::One => 0.0,
            WeightField::Alpha => g,
            WeightField::SqrtAlphaOverR2 => 0.5 * g - 2.0,
            WeightField::Beta1 | WeightField::Beta2 => 0.5 * g,
            WeightField::Gen { p, q } => p * g + q,
        }
    }
}

/// A frame field, optionally multiplied by a radial weight.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub frame: FrameField,
    pub scale: Option<(WeightField, Potential)>,
}

impl From<FrameField> for VectorField {
    fn from(frame: FrameField) -> Self {
        Self { frame, scale: None }
    }
}

impl VectorField {
    pub fn scaled(weight: WeightField, frame: FrameField, pot: &Potential) -> Self {
        Self { frame, scale: Some((weight, pot.clone())) }
    }

    /// `L₀` direction `√α b̃₀`.
    pub fn sqrt_alpha_b0(pot: &Potential) -> Self {
        Self::scaled(WeightField::Gen { p: 0.5, q: 0.0 }, FrameField::B0, pot)
    }

    pub fn name(&self) -> String {
        match &self.scale {
            None => self.frame.name(),
            Some((w, _)) => format!("{}*{}", w.name(), self.frame.name()),
        }
    }

    fn weight_at(&self, x: &Vector6<f64>) -> Result<Option<(f64, Vector6<f64>)>> {
        let Some((w, pot)) = &self.scale else { return Ok(None) };
        let z = relative(x);
        let r = z.norm();
        if r == 0.0 {
            return Err(Error::invalid("radial weights are evaluated off the diagonal only"));
        }
        let (b, db) = w.eval(pot, r);
        Ok(Some((b, lift(&z) * (db / r))))
    }

    pub fn value(&self, x: &Vector6<f64>) -> Result<Vector6<f64>> {
        let b = self.frame.value(x)?;
        Ok(match self.weight_at(x)? {
            None => b,
            Some((phi, _)) => b * phi,
        })
    }

    pub fn jacobian(&self, x: &Vector6<f64>) -> Result<Matrix6<f64>> {
        let db = self.frame.jacobian(x)?;
        Ok(match self.weight_at(x)? {
            None => db,
            Some((phi, grad)) => db * phi + self.frame.value(x)? * grad.transpose(),
        })
    }

    pub fn divergence(&self, x: &Vector6<f64>) -> Result<f64> {
        Ok(self.jacobian(x)?.trace())
    }
}

pub fn vf_eval(id: FrameField, x: &Vector6<f64>) -> Result<Vector6<f64>> {
    id.value(x)
}

/// Residuals of the pointwise frame identities at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameIdentityReport {
    /// `Σ b_k ⊗ b_k` against `a(z) = r²Id − z ⊗ z`.
    pub projection: f64,
    /// `r²Id` against `Σ b_k ⊗ b_k + b₀ ⊗ b₀`.
    pub orthogonal_split: f64,
    /// `div b̃₀ − 6` from the analytic Jacobian trace.
    pub divergence: f64,
    /// `Db̃₀` against the block form and against `Σ_{k=0}^3 b̃_k ⊗ b̃_k / r²`.
    pub block_form: f64,
    pub frame_sum: f64,
}

impl FrameIdentityReport {
    pub fn max_residual(&self) -> f64 {
        [self.projection, self.orthogonal_split, self.divergence, self.block_form, self.frame_sum]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Relative residuals, scaled by `r²` where the identity is quadratic in `z`.
pub fn frame_identities(x: &Vector6<f64>) -> Result<FrameIdentityReport> {
    let z = relative(x);
    let r2 = z.norm_squared();
    if r2 == 0.0 {
        return Err(Error::invalid("frame identities are stated off the diagonal v = w"));
    }
    let mut bb = Matrix3::zeros();
    let mut bt = Matrix6::zeros();
    for f in FrameField::LANDAU {
        let b6 = f.value(x)?;
        let b = Vector3::new(b6[0], b6[1], b6[2]);
        bb += b * b.transpose();
        bt += b6 * b6.transpose();
    }
    let b0 = FrameField::B0.value(x)?;
    bt += b0 * b0.transpose();
    let a = Matrix3::identity() * r2 - z * z.transpose();
    let db0 = FrameField::B0.jacobian(x)?;
    let mut block = Matrix6::identity();
    for i in 0..3 {
        block[(i, i + 3)] = -1.0;
        block[(i + 3, i)] = -1.0;
    }
    Ok(FrameIdentityReport {
        projection: (bb - a).amax() / r2,
        orthogonal_split: (Matrix3::identity() * r2 - (bb + z * z.transpose())).amax() / r2,
        divergence: (db0.trace() - 6.0).abs(),
        block_form: (db0 - block).amax(),
        frame_sum: (db0 - bt / r2).amax(),
    })
}

/// `[a, b]·∇F = ∇F·(Db a − Da b)` at `x`, with a scale for relative checks.
pub fn commutator(a: &VectorField, b: &VectorField, f: &Mixture6, x: &Vector6<f64>) -> Result<(f64, f64)> {
    let g = f.jet(x, false).gradient();
    let (va, vb) = (a.value(x)?, b.value(x)?);
    let (da, db) = (a.jacobian(x)?, b.jacobian(x)?);
    let (p, q) = (db * va, da * vb);
    let scale = g.abs().dot(&(p.abs() + q.abs()));
    Ok((g.dot(&(p - q)), scale))
}

/// `D(√α b̃₀)` against `Σ(√α/r²) b̃_k ⊗ b̃_k + β₂ n ⊗ n`, relative to the larger side.
pub fn sqrt_alpha_b0_decomposition(pot: &Potential, x: &Vector6<f64>) -> Result<f64> {
    let r = relative(x).norm();
    let lhs = VectorField::sqrt_alpha_b0(pot).jacobian(x)?;
    let w = WeightField::SqrtAlphaOverR2.eval(pot, r).0;
    let mut rhs = Matrix6::zeros();
    for f in FrameField::LANDAU {
        let b = f.value(x)?;
        rhs += b * b.transpose() * w;
    }
    let n = FrameField::N.value(x)?;
    rhs += n * n.transpose() * WeightField::Beta2.eval(pot, r).0;
    let scale = lhs.amax().max(rhs.amax());
    Ok((lhs - rhs).amax() / scale)
}

/// Endpoint of the flow and the drift of its conserved quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub x: Vector6<f64>,
    pub steps: usize,
    /// Largest drift of `v + w`, `|v|² + |w|²` and `|v − w|` (rotation fields).
    pub midpoint_drift: Option<f64>,
    pub norm_drift: Option<f64>,
    pub distance_drift: Option<f64>,
    /// `|v − w|²` against `|v₀ − w₀|² e^{4t}`, relative (B0 only).
    pub separation_error: Option<f64>,
}

/// Integrates `ẋ = b(x)` with classical RK4.
pub fn flow(id: FrameField, x0: &Vector6<f64>, t: f64, dt: f64) -> Result<FlowOutcome> {
    if !(t >= 0.0 && t.is_finite() && dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid("flow needs t >= 0 and dt > 0"));
    }
    let steps = (t / dt).ceil() as usize;
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let (v0, w0) = split(x0);
    let mid0 = v0 + w0;
    let norm0 = v0.norm_squared() + w0.norm_squared();
    let dist0 = (v0 - w0).norm();
    let rotation = id.rotation_index().is_some();
    let (mut dm, mut dn, mut dd) = (0.0f64, 0.0f64, 0.0f64);
    let mut x = *x0;
    for _ in 0..steps {
        let k1 = id.value(&x)?;
        let k2 = id.value(&(x + k1 * (0.5 * h)))?;
        let k3 = id.value(&(x + k2 * (0.5 * h)))?;
        let k4 = id.value(&(x + k3 * h))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if rotation {
            let (v, w) = split(&x);
            dm = dm.max((v + w - mid0).amax());
            dn = dn.max((v.norm_squared() + w.norm_squared() - norm0).abs());
            dd = dd.max(((v - w).norm() - dist0).abs());
        }
    }
    let separation_error = (id == FrameField::B0 && dist0 > 0.0).then(|| {
        let want = dist0 * dist0 * (4.0 * t).exp();
        (relative(&x).norm_squared() - want).abs() / want
    });
    Ok(FlowOutcome {
        x,
        steps,
        midpoint_drift: rotation.then_some(dm),
        norm_drift: rotation.then_some(dn),
        distance_drift: rotation.then_some(dd),
        separation_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn point(rng: &mut ChaCha8Rng) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn b0_example_and_tangency() {
        let x = Vector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(FrameField::B0.value(&x).unwrap(), Vector6::new(1.0, 0.0, 0.0, -1.0, 0.0, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = point(&mut rng);
            let b0 = FrameField::B0.value(&x).unwrap();
            // ∇|v − w|² = 2 b̃₀
            for f in FrameField::LANDAU {
                let b = f.value(&x).unwrap();
                assert!(b.dot(&b0).abs() < 1e-13 * b0.norm_squared());
            }
            assert!((FrameField::N.value(&x).unwrap().norm() - 1.0).abs() < 1e-15);
        }
        let diag = Vector6::new(1.0, 2.0, 3.0, 1.0, 2.0, 3.0);
        assert!(FrameField::N.value(&diag).is_err());
    }

    #[test]
    fn b1_matches_component_formula() {
        let x = Vector6::new(0.3, -1.2, 2.0, 0.5, 0.7, -0.4);
        let b = FrameField::B1.value(&x).unwrap();
        // (0, w3 − v3, v2 − w2) and its negative
        let want = Vector6::new(0.0, -0.4 - 2.0, -1.2 - 0.7, 0.0, 2.0 + 0.4, 0.7 + 1.2);
        assert!((b - want).amax() < 1e-15);
    }

    #[test]
    fn frame_identities_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let rep = frame_identities(&point(&mut rng)).unwrap();
            assert!(rep.max_residual() <= 1e-12, "{rep:?}");
            assert_eq!(rep.divergence, 0.0);
        }
        // axis-aligned: a(z) = diag(0, r², r²)
        let r = 1.7;
        let x = Vector6::new(r, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut bb = Matrix3::zeros();
        for f in FrameField::LANDAU {
            let b = f.value(&x).unwrap();
            let b = Vector3::new(b[0], b[1], b[2]);
            bb += b * b.transpose();
        }
        assert!((bb - Matrix3::from_diagonal(&Vector3::new(0.0, r * r, r * r))).amax() < 1e-14);
    }

    #[test]
    fn jacobians_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pot = Potential::power_law(-2.5).unwrap();
        let fields: Vec<VectorField> = vec![
            FrameField::B0.into(),
            FrameField::B2.into(),
            FrameField::N.into(),
            VectorField::sqrt_alpha_b0(&pot),
            VectorField::scaled(WeightField::Beta1, FrameField::B0, &pot),
            VectorField::scaled(WeightField::SqrtAlphaOverR2, FrameField::B3, &pot),
        ];
        let h = 1e-6;
        for _ in 0..20 {
            let x = point(&mut rng);
            for f in &fields {
                let j = f.jacobian(&x).unwrap();
                for c in 0..6 {
                    let e = Vector6::ith(c, h);
                    let fd = (f.value(&(x + e)).unwrap() - f.value(&(x - e)).unwrap()) / (2.0 * h);
                    assert!((fd - j.column(c)).amax() < 1e-6 * (1.0 + j.amax()), "{}", f.name());
                }
            }
        }
    }

    #[test]
    fn weights_and_derivatives() {
        let pot = Potential::power_law(-1.0).unwrap();
        let r: f64 = 0.8;
        let sa = r.powf(-0.5);
        let (b1, _) = WeightField::Beta1.eval(&pot, r);
        assert!((b1 - (6.0 * sa + r * (-1.0 / (r * r)) / sa)).abs() < 1e-14);
        let (b2, _) = WeightField::Beta2.eval(&pot, r);
        assert!((b2 - (2.0 * sa + r * (-1.0 / (r * r)) / sa)).abs() < 1e-14);
        let maxwell = Potential::power_law(0.0).unwrap();
        assert_eq!(WeightField::Beta1.eval(&maxwell, r).0, 6.0);
        assert_eq!(WeightField::Beta2.eval(&maxwell, r).0, 2.0);
        for w in [
            WeightField::Alpha,
            WeightField::SqrtAlphaOverR2,
            WeightField::Beta1,
            WeightField::Beta2,
            WeightField::Gen { p: 0.5, q: 1.0 },
        ] {
            for pot in [Potential::power_law(-2.5).unwrap(), Potential::softened(-3.0, 0.3).unwrap()] {
                let h = 1e-6;
                let fd = (w.eval(&pot, r + h).0 - w.eval(&pot, r - h).0) / (2.0 * h);
                let d = w.eval(&pot, r).1;
                assert!((fd - d).abs() < 1e-6 * (1.0 + d.abs()), "{}", w.name());
            }
        }
    }

    #[test]
    fn bracket_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = Mixture6::random_symmetric(&mut rng, 2).unwrap();
        let pot = Potential::power_law(-2.5).unwrap();
        let l0 = VectorField::sqrt_alpha_b0(&pot);
        for _ in 0..100 {
            let x = point(&mut rng);
            for k in FrameField::LANDAU {
                let (c, s) = commutator(&k.into(), &FrameField::B0.into(), &f, &x).unwrap();
                assert!(c.abs() <= 1e-10 * s);
                let (c, s) = commutator(&k.into(), &l0, &f, &x).unwrap();
                assert!(c.abs() <= 1e-10 * s);
            }
            let g = f.jet(&x, false).gradient();
            let n = FrameField::N.value(&x).unwrap();
            let (c, s) = commutator(&FrameField::N.into(), &FrameField::B0.into(), &f, &x).unwrap();
            assert!((c - 2.0 * n.dot(&g)).abs() <= 1e-10 * s);
            let (c, s) = commutator(&FrameField::N.into(), &l0, &f, &x).unwrap();
            let b2 = WeightField::Beta2.eval(&pot, relative(&x).norm()).0;
            assert!((c - b2 * n.dot(&g)).abs() <= 1e-10 * s);
            for nu in FrameField::NU {
                let (c, s) = commutator(&nu.into(), &FrameField::B0.into(), &f, &x).unwrap();
                assert!(c.abs() <= 1e-10 * s.max(f64::MIN_POSITIVE));
            }
            let e1 = FrameField::Const(point(&mut rng));
            let e2 = FrameField::Const(point(&mut rng));
            assert_eq!(commutator(&e1.into(), &e2.into(), &f, &x).unwrap().0, 0.0);
            assert!(sqrt_alpha_b0_decomposition(&pot, &x).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn flows() {
        let x0 = Vector6::new(0.2, 0.1, -0.3, 0.2, 0.1, 0.7);
        let out = flow(FrameField::B0, &x0, 0.5, 1e-3).unwrap();
        assert!(out.separation_error.unwrap() < 1e-10);
        let coarse = flow(FrameField::B0, &x0, 0.5, 2e-2).unwrap().separation_error.unwrap();
        let fine = flow(FrameField::B0, &x0, 0.5, 1e-2).unwrap().separation_error.unwrap();
        // fourth order
        assert!(coarse / fine > 12.0 && coarse / fine < 20.0, "{}", coarse / fine);
        let x = Vector6::new(0.4, -1.0, 0.3, 1.1, 0.2, -0.5);
        let out = flow(FrameField::B2, &x, 1.0, 1e-3).unwrap();
        assert!(out.midpoint_drift.unwrap() <= 1e-10);
        assert!(out.norm_drift.unwrap() <= 1e-10);
        assert!(out.distance_drift.unwrap() <= 1e-10);
        assert_eq!(flow(FrameField::B1, &x, 0.0, 1e-3).unwrap().x, x);
    }
}
