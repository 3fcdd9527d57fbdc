//! Discrete fractional calculus on a uniform grid: the L1 Caputo derivative,
//! the Riemann-Liouville integral by piecewise-linear product integration,
//! and the constant-data Gronwall envelope.

use crate::error::{Error, Result};
use crate::grid::CoefficientPath;
use crate::mlf::{self, MlParams};

/// L1 approximation of the Caputo derivative D_t^α at every node.
///
/// Node 0 is set to 0 (the continuous operator vanishes there for
/// differentiable paths). Exact up to roundoff for paths affine in t.
pub fn caputo_l1(path: &CoefficientPath, alpha: f64) -> Result<CoefficientPath> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "Caputo order must lie in (0, 1), got {alpha}"
        )));
    }
    let grid = path.grid();
    let n = grid.steps();
    let h = grid.spacing();
    let scale = h.powf(-alpha) / mlf::gamma(2.0 - alpha);
    // b_m = (m+1)^{1-α} - m^{1-α}
    let b: Vec<f64> = (0..n)
        .map(|m| ((m + 1) as f64).powf(1.0 - alpha) - (m as f64).powf(1.0 - alpha))
        .collect();
    let v = path.values();
    let dv: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let mut out = vec![0.0; n + 1];
    for i in 1..=n {
        let mut acc = 0.0;
        for (j, d) in dv.iter().enumerate().take(i) {
            acc += b[i - 1 - j] * d;
        }
        out[i] = scale * acc;
    }
    CoefficientPath::new(grid, out)
}

/// Riemann-Liouville integral I_t^α by product integration: the path is
/// reconstructed piecewise-linearly and integrated exactly against the
/// kernel (t-τ)^{α-1}/Γ(α). Node 0 is 0.
pub fn rl_integral(path: &CoefficientPath, alpha: f64) -> Result<CoefficientPath> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "integration order must be positive, got {alpha}"
        )));
    }
    let grid = path.grid();
    let n = grid.steps();
    let h = grid.spacing();
    let inv_gamma = 1.0 / mlf::gamma(alpha);
    // Per-lag panel moments over u in [(l-1)h, lh]:
    //   A_l = ∫ u^{α-1} du,  B_l = ∫ (lh - u) u^{α-1} du
    let mut pow = vec![0.0; n + 1];
    for (l, p) in pow.iter_mut().enumerate() {
        *p = (l as f64 * h).powf(alpha);
    }
    let mut pow1 = vec![0.0; n + 1];
    for (l, p) in pow1.iter_mut().enumerate() {
        *p = (l as f64 * h).powf(alpha + 1.0);
    }
    let mut w_left = vec![0.0; n]; // weight of the panel's left node value
    let mut w_right = vec![0.0; n];
    for l in 1..=n {
        let a = (pow[l] - pow[l - 1]) / alpha;
        let b = (l as f64) * h * a - (pow1[l] - pow1[l - 1]) / (alpha + 1.0);
        w_right[l - 1] = b / h;
        w_left[l - 1] = a - b / h;
    }
    let v = path.values();
    let mut out = vec![0.0; n + 1];
    for i in 1..=n {
        let mut acc = 0.0;
        for j in 0..i {
            let l = i - j;
            acc += v[j] * w_left[l - 1] + v[j + 1] * w_right[l - 1];
        }
        out[i] = acc * inv_gamma;
    }
    CoefficientPath::new(grid, out)
}

/// Max-norm of I_t^α(D_t^α path) - (path - path(0)): a self-consistency
/// diagnostic for the discrete pair, expected O(h^{min(1, 2-α)}).
pub fn composition_check(path: &CoefficientPath, alpha: f64) -> Result<f64> {
    let d = caputo_l1(path, alpha)?;
    let i = rl_integral(&d, alpha)?;
    let v0 = path.values()[0];
    let residual = path
        .values()
        .iter()
        .zip(i.values())
        .fold(0.0_f64, |m, (v, iv)| m.max((iv - (v - v0)).abs()));
    Ok(residual)
}

/// Constant-data Gronwall envelope z·E_{α,1}(c·Γ(α)·t^α).
pub fn gronwall_bound(z: f64, c: f64, alpha: f64, t: f64) -> Result<f64> {
    if z < 0.0 || c < 0.0 || t < 0.0 {
        return Err(Error::Domain(
            "Gronwall bound needs nonnegative arguments".to_string(),
        ));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let arg = c * mlf::gamma(alpha) * t.powf(alpha);
    let params = MlParams::new(alpha, 1.0)?;
    match mlf::ml_eval(params, arg) {
        Ok(e) => Ok(z * e),
        Err(Error::Domain(_)) => Err(Error::Overflow(format!(
            "Gronwall argument {arg} exceeds the series-stability threshold"
        ))),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::mlf::gamma;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn caputo_of_constant_is_zero() {
        let p = CoefficientPath::constant(grid(64), 3.7).unwrap();
        let d = caputo_l1(&p, 0.5).unwrap();
        assert!(d.sup_norm() < 1e-12);
    }

    #[test]
    fn caputo_of_linear_path_matches_closed_form() {
        // D^α t = t^{1-α}/Γ(2-α); for α = 1/2 that is t^{1/2}/Γ(3/2)
        let g = grid(128);
        let p = CoefficientPath::from_fn(g, |t| t).unwrap();
        let d = caputo_l1(&p, 0.5).unwrap();
        for (i, t) in g.nodes().iter().enumerate().skip(1) {
            let exact = t.sqrt() / gamma(1.5);
            assert_relative_eq!(d.values()[i], exact, max_relative = 1e-10);
        }
    }

    /// Adaptive-free quadrature oracle for D^α t^2 = (1/Γ(1-α))∫ (t-τ)^{-α}·2τ dτ,
    /// via the closed monomial rule as an independent cross-check of the grid scheme.
    #[test]
    fn caputo_of_quadratic_converges_at_scheme_order() {
        // exact: D^{1/2} t^2 = Γ(3)/Γ(2.5)·t^{1.5}
        let exact_coeff = gamma(3.0) / gamma(2.5);
        let mut errs = Vec::new();
        for &n in &[128usize, 256, 512] {
            let g = grid(n);
            let p = CoefficientPath::from_fn(g, |t| t * t).unwrap();
            let d = caputo_l1(&p, 0.5).unwrap();
            let err = g
                .nodes()
                .iter()
                .enumerate()
                .skip(1)
                .fold(0.0_f64, |m, (i, t)| {
                    m.max((d.values()[i] - exact_coeff * t.powf(1.5)).abs())
                });
            errs.push(err);
        }
        // O(h^{2-α}) = O(h^{1.5}): doubling the grid should shrink error ~2.8x
        assert!(errs[0] / errs[1] > 2.0, "errors: {errs:?}");
        assert!(errs[1] / errs[2] > 2.0, "errors: {errs:?}");
        assert!(errs[2] < 5e-5);
    }

    #[test]
    fn rl_integral_of_one_is_power_over_gamma() {
        let g = grid(64);
        let p = CoefficientPath::constant(g, 1.0).unwrap();
        let i = rl_integral(&p, 0.5).unwrap();
        for (k, t) in g.nodes().iter().enumerate() {
            let exact = t.powf(0.5) / gamma(1.5);
            assert_relative_eq!(i.values()[k], exact, epsilon = 1e-12, max_relative = 1e-10);
        }
    }

    #[test]
    fn rl_integral_of_zero_is_zero() {
        let p = CoefficientPath::zero(grid(32));
        let i = rl_integral(&p, 0.7).unwrap();
        assert_eq!(i.sup_norm(), 0.0);
    }

    #[test]
    fn rl_integral_of_linear_matches_monomial_rule() {
        // I^α t = Γ(2)/Γ(2+α)·t^{1+α}; piecewise-linear reconstruction is exact here
        let g = grid(64);
        let p = CoefficientPath::from_fn(g, |t| t).unwrap();
        let i = rl_integral(&p, 0.5).unwrap();
        let coeff = gamma(2.0) / gamma(2.5);
        for (k, t) in g.nodes().iter().enumerate() {
            assert_relative_eq!(
                i.values()[k],
                coeff * t.powf(1.5),
                epsilon = 1e-13,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn composition_identity_on_quadratic() {
        // regression bounds frozen from a refinement study of this case
        let p256 = CoefficientPath::from_fn(grid(256), |t| t * t).unwrap();
        let r256 = composition_check(&p256, 0.5).unwrap();
        assert!(r256 < 5e-3, "residual {r256}");
        let p512 = CoefficientPath::from_fn(grid(512), |t| t * t).unwrap();
        let r512 = composition_check(&p512, 0.5).unwrap();
        assert!(r256 / r512 >= 1.4, "halving-grid ratio {}", r256 / r512);
    }

    #[test]
    fn composition_identity_on_constant_and_affine() {
        let c = CoefficientPath::constant(grid(64), 2.0).unwrap();
        assert!(composition_check(&c, 0.5).unwrap() < 1e-12);
        // frozen from the same refinement study
        let a = CoefficientPath::from_fn(grid(256), |t| 1.0 + t).unwrap();
        assert!(composition_check(&a, 0.3).unwrap() < 2e-3);
    }

    #[test]
    fn gronwall_examples() {
        assert_eq!(gronwall_bound(0.0, 5.0, 0.5, 1.0).unwrap(), 0.0);
        assert_relative_eq!(gronwall_bound(1.0, 0.0, 0.5, 1.0).unwrap(), 1.0);
        // z=2, c=1, α=1/2, t=1: 2·E_{1/2,1}(Γ(1/2)) by direct series
        let expect = {
            let mut s = 0.0;
            let arg = gamma(0.5);
            for k in 0..200 {
                s += arg.powi(k) / gamma(0.5 * k as f64 + 1.0);
            }
            2.0 * s
        };
        assert_relative_eq!(
            gronwall_bound(2.0, 1.0, 0.5, 1.0).unwrap(),
            expect,
            max_relative = 1e-10
        );
        assert!(matches!(
            gronwall_bound(1.0, 1e12, 0.5, 1.0),
            Err(Error::Overflow(_))
        ));
    }

    proptest! {
        #[test]
        fn linearity_of_both_operators(
            seed in 0u64..1000,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid(24);
            let u = CoefficientPath::new(g, (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let w = CoefficientPath::new(g, (0..25).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let combo = u.scaled(a).add_scaled(&w, b).unwrap();
            for op in [caputo_l1, rl_integral] {
                let lhs = op(&combo, 0.5).unwrap();
                let rhs = op(&u, 0.5).unwrap().scaled(a).add_scaled(&op(&w, 0.5).unwrap(), b).unwrap();
                prop_assert!(lhs.sup_distance(&rhs).unwrap() < 1e-10);
            }
        }

        #[test]
        fn rl_integral_preserves_nonnegativity(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid(24);
            let p = CoefficientPath::new(g, (0..25).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
            let i = rl_integral(&p, 0.4).unwrap();
            prop_assert!(i.min() >= 0.0);
        }

        #[test]
        fn caputo_of_nondecreasing_is_nonnegative(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = grid(24);
            let mut acc = 0.0;
            let mut vals = vec![0.0f64; 25];
            for v in vals.iter_mut() {
                *v = acc;
                acc += rng.gen_range(0.0..0.5);
            }
            let p = CoefficientPath::new(g, vals).unwrap();
            let d = caputo_l1(&p, 0.6).unwrap();
            prop_assert!(d.min() >= -1e-12);
        }
    }
}
