//! FFT convolution with `|·|^μ` on a Cartesian box.
//!
//! The box is zero-padded to twice its width so the circular product equals
//! the linear convolution at every box point. The kernel is truncated at the
//! padded extent; the self-cell uses the exact cell average of `|z|^μ`.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fields::CartesianField3;

/// Minimum share of the mass that must sit inside the inner 90% of the box.
const INTERIOR_MASS_FRACTION: f64 = 0.99;

/// Average of `|z|^μ` over the cube of side `h` centered at the origin.
pub fn cube_kernel_average(mu: f64, h: f64) -> f64 {
    // Split the unit cube into six pyramids with apex at the origin:
    // ∫|z|^μ dz = 3/(μ+3) ∫_{[−½,½]²} (¼ + y² + z²)^{μ/2} dy dz.
    let quad = GaussLegendre::new(NonZeroUsize::new(24).expect("nonzero"));
    let face = quad.integrate(-0.5, 0.5, |y| quad.integrate(-0.5, 0.5, |z| (0.25 + y * y + z * z).powf(0.5 * mu)));
    3.0 / (mu + 3.0) * face * h.powf(mu)
}

pub fn cartesian_convolve(f: &CartesianField3, mu: f64) -> Result<CartesianField3> {
    if !(mu > -3.0 && mu <= 0.0) {
        return Err(Error::invalid(format!("Cartesian convolution needs mu in (-3, 0], got {mu}")));
    }
    let grid = *f.grid();
    let n = grid.n();
    let h = grid.spacing();
    check_padding(f)?;
    if mu == 0.0 {
        let m = f.mass();
        return CartesianField3::new(grid, vec![m; grid.len()]);
    }
    let m = 2 * n;
    let idx = |i: usize, j: usize, k: usize| (i * m + j) * m + k;
    let offset = |q: usize| if q < n { q as f64 } else { q as f64 - m as f64 };

    let mut kernel = vec![Complex::new(0.0, 0.0); m * m * m];
    let centre = cube_kernel_average(mu, h);
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let (x, y, z) = (offset(i) * h, offset(j) * h, offset(k) * h);
                let r = (x * x + y * y + z * z).sqrt();
                let v = if r == 0.0 { centre } else { r.powf(mu) };
                kernel[idx(i, j, k)] = Complex::new(v, 0.0);
            }
        }
    }
    let mut data = vec![Complex::new(0.0, 0.0); m * m * m];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                data[idx(i, j, k)] = Complex::new(f.at(i, j, k), 0.0);
            }
        }
    }
    let mut planner = FftPlanner::new();
    fft3(&mut planner, &mut kernel, m, false);
    fft3(&mut planner, &mut data, m, false);
    for (d, k) in data.iter_mut().zip(&kernel) {
        *d *= *k;
    }
    fft3(&mut planner, &mut data, m, true);
    let scale = h * h * h / (m * m * m) as f64;
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(data[idx(i, j, k)].re * scale);
            }
        }
    }
    CartesianField3::new(grid, out)
}

fn check_padding(f: &CartesianField3) -> Result<()> {
    let g = f.grid();
    let n = g.n();
    let limit = 0.9 * g.half_width();
    let (mut inner, mut total) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let v = f.at(i, j, k).abs();
                total += v;
                if g.coord(i).abs() <= limit && g.coord(j).abs() <= limit && g.coord(k).abs() <= limit {
                    inner += v;
                }
            }
        }
    }
    if total > 0.0 && inner < INTERIOR_MASS_FRACTION * total {
        return Err(Error::Hypothesis(format!(
            "insufficient box padding: only {:.4} of the mass lies in the inner 90% of the box",
            inner / total
        )));
    }
    Ok(())
}

/// In-place 3D transform of an `m³` array stored row-major.
fn fft3(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], m: usize, inverse: bool) {
    let plan = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    // last axis is contiguous
    plan.process(data);
    let mut line = vec![Complex::new(0.0, 0.0); m];
    for i in 0..m {
        for k in 0..m {
            for j in 0..m {
                line[j] = data[(i * m + j) * m + k];
            }
            plan.process(&mut line);
            for j in 0..m {
                data[(i * m + j) * m + k] = line[j];
            }
        }
    }
    for j in 0..m {
        for k in 0..m {
            for i in 0..m {
                line[i] = data[(i * m + j) * m + k];
            }
            plan.process(&mut line);
            for i in 0..m {
                data[(i * m + j) * m + k] = line[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{gaussian_field, CartesianGrid3, RadialGrid};
    use crate::kernels::radial_convolve;
    use std::f64::consts::PI;

    fn gaussian3(grid: CartesianGrid3, centre: [f64; 3]) -> CartesianField3 {
        CartesianField3::from_fn(grid, |x| {
            let d2: f64 = (0..3).map(|a| (x[a] - centre[a]).powi(2)).sum();
            (2.0 * PI).powf(-1.5) * (-0.5 * d2).exp()
        })
        .unwrap()
    }

    #[test]
    fn cube_average_limits() {
        assert!((cube_kernel_average(0.0, 0.3) - 1.0).abs() < 1e-12);
        // brute-force midpoint sum on a lattice whose nodes avoid the origin
        let n = 120;
        let step = 1.0 / n as f64;
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = |q: usize| -0.5 + (q as f64 + 0.5) * step;
                    sum += (c(i).powi(2) + c(j).powi(2) + c(k).powi(2)).powf(-0.5);
                }
            }
        }
        let brute = sum * step.powi(3);
        assert!((cube_kernel_average(-1.0, 1.0) / brute - 1.0).abs() < 2e-3);
        // homogeneity in the cell size
        assert!((cube_kernel_average(-1.5, 0.5) / cube_kernel_average(-1.5, 1.0) - 0.5f64.powf(-1.5)).abs() < 1e-12);
    }

    #[test]
    fn matches_radial_convolution() {
        let grid = CartesianGrid3::new(64, 8.0).unwrap();
        let f = gaussian3(grid, [0.0; 3]);
        let c = cartesian_convolve(&f, -1.0).unwrap();
        let radial = radial_convolve(&gaussian_field(RadialGrid::new(2048, 12.0).unwrap(), 1.0, 1.0).unwrap(), -1.0).unwrap();
        for &(i, j, k) in &[(32, 32, 32), (40, 32, 30), (20, 44, 36), (50, 50, 50)] {
            let r = (grid.coord(i).powi(2) + grid.coord(j).powi(2) + grid.coord(k).powi(2)).sqrt();
            let want = radial.interpolate(r);
            let got = c.at(i, j, k);
            assert!((got / want - 1.0).abs() < 0.01, "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn mass_kernel_and_translation() {
        let grid = CartesianGrid3::new(32, 8.0).unwrap();
        let f = gaussian3(grid, [0.0; 3]);
        let c0 = cartesian_convolve(&f, 0.0).unwrap();
        assert!(c0.values().iter().all(|&v| (v - f.mass()).abs() < 1e-12));
        // shift by exactly two cells along x
        let h = grid.spacing();
        let shifted = gaussian3(grid, [2.0 * h, 0.0, 0.0]);
        let a = cartesian_convolve(&f, -1.0).unwrap();
        let b = cartesian_convolve(&shifted, -1.0).unwrap();
        for &(i, j, k) in &[(14, 16, 16), (16, 10, 20), (12, 12, 12)] {
            assert!((a.at(i, j, k) - b.at(i + 2, j, k)).abs() < 1e-4 * a.at(i, j, k));
        }
    }

    #[test]
    fn rejects_unpadded_data_and_bad_exponent() {
        let grid = CartesianGrid3::new(16, 3.0).unwrap();
        let f = gaussian3(grid, [0.0; 3]);
        assert!(matches!(cartesian_convolve(&f, -1.0), Err(Error::Hypothesis(_))));
        let ok = gaussian3(CartesianGrid3::new(16, 8.0).unwrap(), [0.0; 3]);
        assert!(cartesian_convolve(&ok, -3.0).is_err());
    }
}
