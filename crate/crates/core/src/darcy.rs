//! Darcy-flow data: thresholded Gaussian random field coefficients and a
//! finite-difference solve of `-div(a grad u) = f` on the unit square with
//! `u = 0` on the boundary.
//!
//! Grids hold `n x n` nodes including the boundary, at spacing `1/(n-1)`.
//! Only the `(n-2)^2` interior nodes are unknowns, so the boundary values
//! are exactly zero.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid, ScalarGrid};
use crate::spectral::{fft2, ifft2, signed_frequency};

/// Diffusivity where the random field is negative.
pub const A_LOW: f64 = 3.0;
/// Diffusivity where the random field is non-negative.
pub const A_HIGH: f64 = 12.0;
/// Default random-field length-scale parameter.
pub const GRF_TAU: f64 = 3.0;
/// Default random-field smoothness exponent.
pub const GRF_ALPHA: f64 = 2.0;
/// Default relative residual target for the linear solve.
pub const SOLVER_TOL: f64 = 1e-8;

/// One input/output pair: coefficient `a` and solution `u` on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DarcySample {
    pub a: ScalarGrid,
    pub u: ScalarGrid,
}

impl DarcySample {
    pub fn resolution(&self) -> usize {
        self.a.height()
    }
}

/// Spectral density of the coefficient field at integer frequency `(kx, ky)`.
pub fn grf_density(kx: i64, ky: i64, tau: f64, alpha: f64) -> f64 {
    let k2 = (kx * kx + ky * ky) as f64;
    (4.0 * std::f64::consts::PI.powi(2) * k2 + tau * tau).powf(-alpha)
}

/// Periodic Gaussian random field on an `n x n` grid with spectral density
/// `(4 pi^2 |k|^2 + tau^2)^(-alpha)` and the mean mode removed.
///
/// Seeded white noise is transformed, scaled by the square root of the
/// density and transformed back. Because the noise is real its spectrum is
/// already Hermitian, so the result is real up to rounding.
pub fn sample_grf(seed: u64, n: usize, tau: f64, alpha: f64) -> Result<ScalarGrid> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::UnsupportedSize(format!(
            "random field size {n} is not a power of two"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut spec = fft2(&ComplexGrid::new(n, n, noise)?);
    for r in 0..n {
        let kx = signed_frequency(r, n);
        for c in 0..n {
            let ky = signed_frequency(c, n);
            let scale = if kx == 0 && ky == 0 {
                0.0
            } else {
                grf_density(kx, ky, tau, alpha).sqrt()
            };
            let v = spec.get(r, c) * scale;
            spec.set(r, c, v);
        }
    }
    Ok(ifft2(&spec).real())
}

/// Two-valued coefficient: [`A_HIGH`] where `w >= 0`, [`A_LOW`] elsewhere.
pub fn threshold_coefficient(w: &ScalarGrid) -> ScalarGrid {
    w.map(|v| if v >= 0.0 { A_HIGH } else { A_LOW })
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Face diffusivities of the node grid: `east[i][j]` joins `(i,j)` and
/// `(i,j+1)`, `south[i][j]` joins `(i,j)` and `(i+1,j)`.
struct Faces {
    n: usize,
    east: Vec<f64>,
    south: Vec<f64>,
}

impl Faces {
    fn new(a: &ScalarGrid) -> Self {
        let n = a.height();
        let mut east = vec![0.0; n * n];
        let mut south = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if j + 1 < n {
                    east[i * n + j] = harmonic(a.get(i, j), a.get(i, j + 1));
                }
                if i + 1 < n {
                    south[i * n + j] = harmonic(a.get(i, j), a.get(i + 1, j));
                }
            }
        }
        Faces { n, east, south }
    }

    /// `h^2` times the discrete operator applied to a node field that is
    /// zero on the boundary. Boundary entries of `out` are set to zero.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let p = i * n + j;
                let (e, w) = (self.east[p], self.east[p - 1]);
                let (s, nn) = (self.south[p], self.south[p - n]);
                out[p] = (e + w + s + nn) * u[p]
                    - e * u[p + 1]
                    - w * u[p - 1]
                    - s * u[p + n]
                    - nn * u[p - n];
            }
        }
    }
}

fn interior_dot(n: usize, x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            acc += x[i * n + j] * y[i * n + j];
        }
    }
    acc
}

/// Solves `-div(a grad u) = f` with `u = 0` on the boundary by conjugate
/// gradients, stopping once the relative residual drops below `tol`.
///
/// Face diffusivities are harmonic means of the adjacent node values. The
/// iteration cap is `10 n^2`.
pub fn solve_darcy(a: &ScalarGrid, f: &ScalarGrid, tol: f64) -> Result<ScalarGrid> {
    solve_capped(a, f, tol, 10 * a.height() * a.height())
}

fn solve_capped(a: &ScalarGrid, f: &ScalarGrid, tol: f64, cap: usize) -> Result<ScalarGrid> {
    let n = a.height();
    if a.width() != n || f.shape() != a.shape() {
        return Err(Error::shape(format!(
            "coefficient {:?} and forcing {:?} must be the same square grid",
            a.shape(),
            f.shape()
        )));
    }
    if n < 3 {
        return Err(Error::UnsupportedSize(format!(
            "grid of {n} nodes has no interior"
        )));
    }
    if a.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain(
            "diffusivity must be strictly positive".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let faces = Faces::new(a);
    let h2 = (1.0 / (n - 1) as f64).powi(2);

    let mut b = vec![0.0; n * n];
    for i in 1..n - 1 {
        for j in 1..n - 1 {
            b[i * n + j] = h2 * f.get(i, j);
        }
    }
    let b_norm = interior_dot(n, &b, &b).sqrt();
    let mut u = vec![0.0; n * n];
    if b_norm == 0.0 {
        return ScalarGrid::new(n, n, u);
    }

    let mut r = b;
    let mut p = r.clone();
    let mut ap = vec![0.0; n * n];
    let mut rr = interior_dot(n, &r, &r);
    for _ in 0..cap {
        if rr.sqrt() < tol * b_norm {
            return ScalarGrid::new(n, n, u);
        }
        faces.apply(&p, &mut ap);
        let step = rr / interior_dot(n, &p, &ap);
        for k in 0..n * n {
            u[k] += step * p[k];
            r[k] -= step * ap[k];
        }
        let rr_next = interior_dot(n, &r, &r);
        let beta = rr_next / rr;
        for k in 0..n * n {
            p[k] = r[k] + beta * p[k];
        }
        rr = rr_next;
    }
    if rr.sqrt() < tol * b_norm {
        return ScalarGrid::new(n, n, u);
    }
    Err(Error::Solver {
        iterations: cap,
        residual: rr.sqrt() / b_norm,
    })
}

/// Sample with the given seed: coefficient from [`sample_grf`] and
/// [`threshold_coefficient`], solution for unit forcing.
pub fn generate_sample(seed: u64, n: usize) -> Result<DarcySample> {
    let a = threshold_coefficient(&sample_grf(seed, n, GRF_TAU, GRF_ALPHA)?);
    let f = ScalarGrid::from_fn(n, n, |_, _| 1.0);
    let u = solve_darcy(&a, &f, SOLVER_TOL)?;
    Ok(DarcySample { a, u })
}

/// `count` samples where sample `i` uses seed `seed0 + i`.
pub fn generate_dataset(count: usize, seed0: u64, n: usize) -> Result<Vec<DarcySample>> {
    if count == 0 {
        return Err(Error::config("dataset needs at least one sample"));
    }
    (0..count as u64)
        .map(|i| generate_sample(seed0.wrapping_add(i), n))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{apply_group, GroupElement};
    use std::f64::consts::PI;

    fn ones(n: usize) -> ScalarGrid {
        ScalarGrid::from_fn(n, n, |_, _| 1.0)
    }

    fn manufactured_error(n: usize) -> f64 {
        let h = 1.0 / (n - 1) as f64;
        let exact = |i: usize, j: usize| (PI * i as f64 * h).sin() * (PI * j as f64 * h).sin();
        let f = ScalarGrid::from_fn(n, n, |i, j| 2.0 * PI * PI * exact(i, j));
        let u = solve_darcy(&ones(n), &f, 1e-12).unwrap();
        let mut err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                err = err.max((u.get(i, j) - exact(i, j)).abs());
            }
        }
        err
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let ns = [32usize, 64, 128];
        let errs: Vec<f64> = ns.iter().map(|&n| manufactured_error(n)).collect();
        for k in 0..2 {
            let ratio_h = (ns[k + 1] - 1) as f64 / (ns[k] - 1) as f64;
            let order = (errs[k] / errs[k + 1]).ln() / ratio_h.ln();
            assert!(order >= 1.9, "order {order} from errors {errs:?}");
        }
        assert!(errs[2] < 1e-4);
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let a = threshold_coefficient(&sample_grf(1, 16, GRF_TAU, GRF_ALPHA).unwrap());
        let u = solve_darcy(&a, &ScalarGrid::zeros(16, 16), SOLVER_TOL).unwrap();
        assert!(u.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_coefficient_single_interior_node() {
        // 3x3 nodes: one unknown, 4 a u / h^2 = f with h = 1/2.
        let a = ScalarGrid::from_fn(3, 3, |_, _| 2.0);
        let f = ScalarGrid::from_fn(3, 3, |_, _| 1.0);
        let u = solve_darcy(&a, &f, 1e-12).unwrap();
        assert!((u.get(1, 1) - 0.25 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn harmonic_face_between_contrasting_nodes() {
        assert_eq!(harmonic(3.0, 12.0), 4.8);
        assert_eq!(harmonic(3.0, 3.0), 3.0);
    }

    #[test]
    fn solver_commutes_with_the_square_group() {
        let s = generate_sample(7, 32).unwrap();
        let f = ones(32);
        for g in GroupElement::ALL {
            let ga = apply_group(g, &s.a).unwrap();
            let u_g = solve_darcy(&ga, &f, SOLVER_TOL).unwrap();
            let g_u = apply_group(g, &s.u).unwrap();
            assert!(u_g.max_abs_diff(&g_u) < 10.0 * SOLVER_TOL, "{g}");
        }
    }

    #[test]
    fn boundary_is_exactly_zero_and_interior_positive() {
        let s = generate_sample(3, 32).unwrap();
        let n = 32;
        for k in 0..n {
            for (i, j) in [(0, k), (n - 1, k), (k, 0), (k, n - 1)] {
                assert_eq!(s.u.get(i, j), 0.0);
            }
        }
        assert!(s.u.data().iter().all(|&v| v >= -10.0 * SOLVER_TOL));
        let max = s.u.data().iter().cloned().fold(f64::MIN, f64::max);
        // Bounded by the constant-coefficient solutions for a = 12 and a = 3.
        assert!(max > 0.07 / A_HIGH && max < 0.08 / A_LOW, "{max}");
    }

    #[test]
    fn flux_through_boundary_balances_source() {
        let n = 32;
        let s = generate_sample(11, n).unwrap();
        let faces = Faces::new(&s.a);
        let h2 = (1.0 / (n - 1) as f64).powi(2);
        let source: f64 = (n - 2) as f64 * (n - 2) as f64 * h2;
        let mut flux = 0.0;
        for k in 1..n - 1 {
            flux += faces.east[k * n] * s.u.get(k, 1);
            flux += faces.east[k * n + n - 2] * s.u.get(k, n - 2);
            flux += faces.south[k] * s.u.get(1, k);
            flux += faces.south[(n - 2) * n + k] * s.u.get(n - 2, k);
        }
        assert!(
            (flux - source).abs() < 10.0 * SOLVER_TOL * source,
            "{flux} vs {source}"
        );
    }

    #[test]
    fn solver_reports_non_convergence() {
        let a = threshold_coefficient(&sample_grf(2, 16, GRF_TAU, GRF_ALPHA).unwrap());
        let err = solve_capped(&a, &ones(16), SOLVER_TOL, 5).unwrap_err();
        match err {
            Error::Solver {
                iterations,
                residual,
            } => {
                assert_eq!(iterations, 5);
                assert!(residual > SOLVER_TOL);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn solver_rejects_bad_input() {
        let mut a = ones(8);
        a.set(2, 2, 0.0);
        assert!(matches!(
            solve_darcy(&a, &ones(8), 1e-8),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_darcy(&ones(8), &ones(4), 1e-8),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn grf_is_deterministic_and_rejects_odd_sizes() {
        assert_eq!(
            sample_grf(5, 32, 3.0, 2.0).unwrap(),
            sample_grf(5, 32, 3.0, 2.0).unwrap()
        );
        assert_ne!(
            sample_grf(5, 32, 3.0, 2.0).unwrap(),
            sample_grf(6, 32, 3.0, 2.0).unwrap()
        );
        assert!(sample_grf(0, 24, 3.0, 2.0).is_err());
    }

    #[test]
    fn grf_mean_is_zero() {
        for seed in 0..100 {
            let w = sample_grf(seed, 64, GRF_TAU, GRF_ALPHA).unwrap();
            let mean = w.data().iter().sum::<f64>() / w.data().len() as f64;
            let sd = (w.data().iter().map(|v| v * v).sum::<f64>() / w.data().len() as f64).sqrt();
            assert!(mean.abs() < 3.0 * sd / 64.0, "seed {seed}: {mean} vs {sd}");
        }
    }

    #[test]
    fn grf_band_energy_follows_density() {
        let n = 64;
        let in_band = |kx: i64, ky: i64, lo: f64, hi: f64| {
            let k = ((kx * kx + ky * ky) as f64).sqrt();
            k >= lo && k <= hi
        };
        let mut expected = [0.0; 2];
        for r in 0..n {
            for c in 0..n {
                let (kx, ky) = (signed_frequency(r, n), signed_frequency(c, n));
                for (b, (lo, hi)) in [(1.0, 2.0), (8.0, 16.0)].into_iter().enumerate() {
                    if in_band(kx, ky, lo, hi) {
                        expected[b] += grf_density(kx, ky, GRF_TAU, GRF_ALPHA);
                    }
                }
            }
        }
        let mut measured = [0.0; 2];
        for seed in 0..100 {
            let spec = fft2(
                &sample_grf(seed, n, GRF_TAU, GRF_ALPHA)
                    .unwrap()
                    .to_complex(),
            );
            for r in 0..n {
                for c in 0..n {
                    let (kx, ky) = (signed_frequency(r, n), signed_frequency(c, n));
                    for (b, (lo, hi)) in [(1.0, 2.0), (8.0, 16.0)].into_iter().enumerate() {
                        if in_band(kx, ky, lo, hi) {
                            measured[b] += spec.get(r, c).norm_sqr();
                        }
                    }
                }
            }
        }
        let ratio = (measured[0] / measured[1]) / (expected[0] / expected[1]);
        assert!((ratio - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn threshold_values_and_balance() {
        let w = ScalarGrid::from_fn(4, 4, |i, j| i as f64 - j as f64);
        let a = threshold_coefficient(&w);
        let neg = threshold_coefficient(&w.map(|v| -v));
        assert_eq!(a.get(0, 0), A_HIGH);
        assert_eq!(a.get(0, 1), A_LOW);
        assert_eq!(neg.get(0, 1), A_HIGH);
        assert!(threshold_coefficient(&w.map(|v| v.abs() + 1.0))
            .data()
            .iter()
            .all(|&v| v == A_HIGH));

        let mut high = 0usize;
        for seed in 0..100 {
            let a = threshold_coefficient(&sample_grf(seed, 64, GRF_TAU, GRF_ALPHA).unwrap());
            high += a.data().iter().filter(|&&v| v == A_HIGH).count();
        }
        let frac = high as f64 / (100.0 * 64.0 * 64.0);
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn dataset_follows_seed_schedule() {
        let d = generate_dataset(2, 40, 16).unwrap();
        assert_eq!(d[0], generate_sample(40, 16).unwrap());
        assert_eq!(d[1], generate_sample(41, 16).unwrap());
        assert_eq!(d, generate_dataset(2, 40, 16).unwrap());
        assert!(generate_dataset(0, 0, 16).is_err());
        assert_eq!(d[0].resolution(), 16);
    }
}
