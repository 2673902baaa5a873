//! Drift potentials `Phi`.

use std::fmt;
use std::sync::Arc;

use crate::error::{PmedError, Result};

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// A `C^2` potential with value, gradient and Laplacian.
#[derive(Clone)]
pub struct Potential {
    dim: usize,
    eval: ScalarFn,
    grad: VectorFn,
    laplacian: ScalarFn,
    hessian_bound: f64,
    strictly_convex: bool,
    min_point: Option<Vec<f64>>,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("dim", &self.dim)
            .field("hessian_bound", &self.hessian_bound)
            .field("strictly_convex", &self.strictly_convex)
            .field("min_point", &self.min_point)
            .finish_non_exhaustive()
    }
}

impl Potential {
    /// Closure-backed potential. The Laplacian is taken by centred differences
    /// of `grad`; use [`Potential::with_laplacian`] when a closed form exists.
    pub fn new<E, G>(
        dim: usize,
        eval: E,
        grad: G,
        hessian_bound: f64,
        strictly_convex: bool,
        min_point: Option<Vec<f64>>,
    ) -> Result<Self>
    where
        E: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if dim != 1 && dim != 2 {
            return Err(PmedError::InvalidParameter {
                name: "dim",
                value: dim as f64,
                reason: "must be 1 or 2",
            });
        }
        if !(hessian_bound >= 0.0) {
            return Err(PmedError::InvalidParameter {
                name: "hessian_bound",
                value: hessian_bound,
                reason: "must be >= 0",
            });
        }
        if strictly_convex && min_point.as_ref().map(|p| p.len()) != Some(dim) {
            return Err(PmedError::InvalidInput(
                "a strictly convex potential needs a min_point of matching dimension".into(),
            ));
        }
        let grad: VectorFn = Arc::new(grad);
        let g = grad.clone();
        let laplacian: ScalarFn = Arc::new(move |x: &[f64]| {
            let step = 1e-4;
            let mut p = [0.0; 2];
            let mut gp = [0.0; 2];
            let mut gm = [0.0; 2];
            let mut sum = 0.0;
            for k in 0..x.len() {
                p[..x.len()].copy_from_slice(x);
                p[k] += step;
                g(&p[..x.len()], &mut gp[..x.len()]);
                p[k] -= 2.0 * step;
                g(&p[..x.len()], &mut gm[..x.len()]);
                sum += (gp[k] - gm[k]) / (2.0 * step);
            }
            sum
        });
        Ok(Self {
            dim,
            eval: Arc::new(eval),
            grad,
            laplacian,
            hessian_bound,
            strictly_convex,
            min_point,
        })
    }

    pub fn with_laplacian<L>(mut self, laplacian: L) -> Self
    where
        L: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.laplacian = Arc::new(laplacian);
        self
    }

    /// `Phi(x) = a |x|^2`.
    pub fn quadratic(a: f64, dim: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(PmedError::InvalidParameter {
                name: "a",
                value: a,
                reason: "must be > 0",
            });
        }
        let p = Self::new(
            dim,
            move |x| a * x.iter().map(|v| v * v).sum::<f64>(),
            move |x, g| {
                for (gk, xk) in g.iter_mut().zip(x) {
                    *gk = 2.0 * a * xk;
                }
            },
            2.0 * a * dim as f64,
            true,
            Some(vec![0.0; dim]),
        )?;
        Ok(p.with_laplacian(move |_| 2.0 * a * dim as f64))
    }

    /// `Phi = 0`.
    pub fn zero(dim: usize) -> Result<Self> {
        let p = Self::new(dim, |_| 0.0, |_, g| g.fill(0.0), 0.0, false, None)?;
        Ok(p.with_laplacian(|_| 0.0))
    }

    /// Radial polynomial `Phi(x) = sum_k c_k |x|^(2k)`.
    ///
    /// The Hessian bound is taken over the box `[-half_width, half_width]^dim`.
    /// The potential is flagged strictly convex when `c_1 > 0` and every
    /// higher coefficient is nonnegative.
    pub fn radial_polynomial(coefficients: &[f64], dim: usize, half_width: f64) -> Result<Self> {
        if let Some(c) = coefficients.iter().find(|c| !c.is_finite()) {
            return Err(PmedError::InvalidParameter {
                name: "coefficients",
                value: *c,
                reason: "must be finite",
            });
        }
        let coeffs: Vec<f64> = coefficients.to_vec();
        let r_max = half_width * (dim as f64).sqrt();
        let hessian_bound = dim as f64
            * coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| {
                    let k = k as f64;
                    c.abs() * 2.0 * k * (2.0 * k - 1.0) * r_max.powf(2.0 * k - 2.0)
                })
                .sum::<f64>();
        let strictly_convex =
            coeffs.get(1).is_some_and(|&c| c > 0.0) && coeffs.iter().skip(2).all(|&c| c >= 0.0);

        // d/dr^2 of the polynomial in s = |x|^2
        let ce = coeffs.clone();
        let eval = move |x: &[f64]| {
            let s: f64 = x.iter().map(|v| v * v).sum();
            ce.iter().rev().fold(0.0, |acc, c| acc * s + c)
        };
        let cg = coeffs.clone();
        let ds = move |s: f64| -> f64 {
            cg.iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c * k as f64 * s.powi(k as i32 - 1))
                .sum()
        };
        let ds_g = ds.clone();
        let grad = move |x: &[f64], g: &mut [f64]| {
            let s: f64 = x.iter().map(|v| v * v).sum();
            let f = 2.0 * ds_g(s);
            for (gk, xk) in g.iter_mut().zip(x) {
                *gk = f * xk;
            }
        };
        let cl = coeffs.clone();
        let lap = move |x: &[f64]| {
            // Laplacian of F(s), s = |x|^2: 2 d F'(s) + 4 s F''(s)
            let s: f64 = x.iter().map(|v| v * v).sum();
            let d2: f64 = cl
                .iter()
                .enumerate()
                .skip(2)
                .map(|(k, c)| c * (k * (k - 1)) as f64 * s.powi(k as i32 - 2))
                .sum();
            2.0 * dim as f64 * ds(s) + 4.0 * s * d2
        };
        let min_point = strictly_convex.then(|| vec![0.0; dim]);
        Ok(Self::new(dim, eval, grad, hessian_bound, strictly_convex, min_point)?.with_laplacian(lap))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Writes `grad Phi(x)` into `out` (length `dim`).
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        (self.grad)(x, out)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        (self.grad)(x, &mut g);
        g
    }

    pub fn laplacian(&self, x: &[f64]) -> f64 {
        (self.laplacian)(x)
    }

    pub fn hessian_bound(&self) -> f64 {
        self.hessian_bound
    }

    pub fn strictly_convex(&self) -> bool {
        self.strictly_convex
    }

    pub fn min_point(&self) -> Option<&[f64]> {
        self.min_point.as_deref()
    }

    /// Minimum value, when the minimiser is known.
    pub fn min_value(&self) -> Option<f64> {
        self.min_point.as_deref().map(|p| self.eval(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_values() {
        let p = Potential::quadratic(1.0, 2).unwrap();
        assert_eq!(p.eval(&[1.0, 0.0]), 1.0);
        assert_eq!(p.grad(&[1.0, 0.0]), vec![2.0, 0.0]);
        assert_eq!(p.eval(&[0.0, 0.0]), 0.0);
        assert_eq!(p.grad(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(p.hessian_bound(), 4.0);
        assert!(p.strictly_convex());
        assert_eq!(p.min_point(), Some(&[0.0, 0.0][..]));
        assert_eq!(p.laplacian(&[0.3, -0.2]), 4.0);
    }

    #[test]
    fn quadratic_rejects_nonpositive() {
        assert!(matches!(
            Potential::quadratic(0.0, 1),
            Err(PmedError::InvalidParameter { name: "a", .. })
        ));
        assert!(Potential::quadratic(-2.0, 2).is_err());
    }

    #[test]
    fn gradient_matches_centred_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-3;
        for a in [0.5, 1.0, 3.0] {
            let p = Potential::quadratic(a, 2).unwrap();
            for _ in 0..100 {
                let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
                let g = p.grad(&x);
                for k in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    let fd = (p.eval(&xp) - p.eval(&xm)) / (2.0 * h);
                    assert!((fd - g[k]).abs() <= 10.0 * h * h * a, "{fd} vs {}", g[k]);
                }
            }
        }
    }

    #[test]
    fn radial_polynomial_agrees_with_quadratic() {
        let p = Potential::radial_polynomial(&[0.5, 2.0], 2, 3.0).unwrap();
        let q = Potential::quadratic(2.0, 2).unwrap();
        let x = [0.7, -1.1];
        assert!((p.eval(&x) - q.eval(&x) - 0.5).abs() < 1e-14);
        assert_eq!(p.grad(&x), q.grad(&x));
        assert!((p.laplacian(&x) - 8.0).abs() < 1e-12);
        assert_eq!(p.hessian_bound(), 8.0);
        assert!(p.strictly_convex());
    }

    #[test]
    fn quartic_laplacian_and_gradient() {
        // Phi = |x|^4 in 2D: grad = 4|x|^2 x, Laplacian = 16 |x|^2.
        let p = Potential::radial_polynomial(&[0.0, 0.0, 1.0], 2, 2.0).unwrap();
        assert!(!p.strictly_convex());
        let x = [0.5, 1.0];
        let s = 1.25;
        let g = p.grad(&x);
        assert!((g[0] - 4.0 * s * 0.5).abs() < 1e-14);
        assert!((p.laplacian(&x) - 16.0 * s).abs() < 1e-12);
        let fd = Potential::new(2, |x| (x[0] * x[0] + x[1] * x[1]).powi(2), move |x, g| {
            let s = x[0] * x[0] + x[1] * x[1];
            g[0] = 4.0 * s * x[0];
            g[1] = 4.0 * s * x[1];
        }, 0.0, false, None)
        .unwrap();
        assert!((fd.laplacian(&x) - 16.0 * s).abs() < 1e-6);
    }

    #[test]
    fn zero_potential() {
        let p = Potential::zero(1).unwrap();
        assert_eq!(p.eval(&[3.0]), 0.0);
        assert_eq!(p.grad(&[3.0]), vec![0.0]);
        assert!(!p.strictly_convex());
        assert_eq!(p.min_value(), None);
    }
}
