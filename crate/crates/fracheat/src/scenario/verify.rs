//! The `verify` pipeline: runs the module invariant suites against a
//! scenario's configuration and reports one pass/fail line per check.

use super::Resolved;
use crate::error::Result;
use crate::forward::{self, PicardControls};
use crate::fraccalc;
use crate::grid::CoefficientPath;
use crate::inverse;
use crate::mlf::{self, MlParams};
use crate::spectra;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

/// Run every applicable invariant suite on the scenario's configuration.
pub fn run_suite(resolved: &Resolved) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let alpha = resolved.alpha;
    let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);

    checks.push(ml_bounds_check(alpha)?);
    checks.push(ml_derivative_check(alpha)?);
    checks.push(ml_integral_identity_check(alpha)?);
    checks.push(composition_check_on_grid(resolved)?);
    checks.push(weights_positivity_check(resolved));
    if resolved.modes.len() >= 8 {
        checks.push(gamma_check(resolved)?);
    }
    checks.push(forward_positivity_check(resolved, &mut rng)?);
    checks.push(method_agreement_check(resolved, &mut rng)?);
    if resolved.mode.is_inverse_like() {
        checks.push(inverse_bracket_check(resolved)?);
    }
    Ok(VerifyReport {
        seed: resolved.seed,
        checks,
    })
}

fn ml_bounds_check(alpha: f64) -> Result<Check> {
    let p = MlParams::new(alpha, 1.0)?;
    let mut prev = 1.0;
    let mut worst: f64 = 0.0;
    let mut z = 1e-3;
    let mut ok = true;
    while z <= 1e3 {
        let v = mlf::ml_eval(p, -z)?;
        if !(v > 0.0 && v < 1.0) || v > prev + 1e-12 {
            ok = false;
        }
        worst = worst.max(v - prev);
        prev = v;
        z *= 1.07;
    }
    Ok(check(
        "mittag-leffler bounds/monotonicity",
        ok,
        format!("0 < E_a1(-z) < 1 nonincreasing on z in [1e-3, 1e3] at alpha = {alpha}"),
    ))
}

fn ml_derivative_check(alpha: f64) -> Result<Check> {
    let p = MlParams::new(alpha, 1.0)?;
    let mut worst: f64 = 0.0;
    for &mu in &[0.5, 1.0, 3.0] {
        for &t in &[0.25, 0.7, 1.3] {
            let exact = mlf::ml_time_derivative(alpha, mu, t)?;
            let g = |tt: f64| mlf::ml_eval(p, -mu * tt.powf(alpha)).unwrap();
            let d = |h: f64| (g(t + h) - g(t - h)) / (2.0 * h);
            let h = 1e-5 * t;
            let fd = (4.0 * d(h / 2.0) - d(h)) / 3.0;
            worst = worst.max(((exact - fd) / fd.abs().max(1e-30)).abs());
        }
    }
    Ok(check(
        "derivative identity vs finite differences",
        worst <= 1e-6,
        format!("max relative deviation {worst:.3e} (tolerance 1e-6)"),
    ))
}

fn ml_integral_identity_check(alpha: f64) -> Result<Check> {
    // mu * int_0^t s^{a-1} E_aa(-mu m s^a) ds = (1 - E_a1(-mu m t^a))/m,
    // left side via Simpson in w = s^a (removes the singularity)
    let pa = MlParams::new(alpha, alpha)?;
    let p1 = MlParams::new(alpha, 1.0)?;
    let mut worst: f64 = 0.0;
    for &(mu, m, t) in &[(1.0_f64, 1.0_f64, 1.0_f64), (9.8696, 0.5, 0.8), (3.0, 2.0, 1.5)] {
        let w_max = t.powf(alpha);
        let n = 1024;
        let h = w_max / n as f64;
        let f = |w: f64| mlf::ml_eval(pa, -mu * m * w).unwrap();
        let mut s = f(0.0) + f(w_max);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        let lhs = mu * s * h / 3.0 / alpha;
        let rhs = (1.0 - mlf::ml_eval(p1, -mu * m * w_max)?) / m;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(check(
        "kernel integral identity",
        worst <= 1e-8,
        format!("max absolute deviation {worst:.3e} (tolerance 1e-8, N = 1024)"),
    ))
}

fn composition_check_on_grid(resolved: &Resolved) -> Result<Check> {
    let smooth = CoefficientPath::from_fn(resolved.grid, |t| 1.0 + t * t)?;
    let coarse = fraccalc::composition_check(&smooth, resolved.alpha)?;
    let refined_path = CoefficientPath::from_fn(resolved.grid.refined(), |t| 1.0 + t * t)?;
    let refined = fraccalc::composition_check(&refined_path, resolved.alpha)?;
    let ok = coarse < 0.05 && (coarse < 1e-10 || refined < coarse);
    Ok(check(
        "fractional composition identity",
        ok,
        format!("residual {coarse:.3e}, refined {refined:.3e}"),
    ))
}

fn weights_positivity_check(resolved: &Resolved) -> Check {
    let w = resolved.modes.weights();
    let ok = w.iter().all(|&x| x >= 0.0) && w.iter().any(|&x| x > 0.0);
    check(
        "observation weights sign-normalized",
        ok,
        format!("{} nonzero of {}", w.iter().filter(|x| **x > 0.0).count(), w.len()),
    )
}

fn gamma_check(resolved: &Resolved) -> Result<Check> {
    let rep = spectra::gamma_admissibility(
        resolved.modes.weights(),
        resolved.modes.eigenvalues(),
        resolved.modes.gamma(),
    )?;
    Ok(check(
        "gamma admissibility of the functional",
        rep.admissible,
        format!(
            "tail exponent {:.3} at gamma = {}",
            rep.tail_exponent,
            resolved.modes.gamma()
        ),
    ))
}

fn forward_positivity_check(resolved: &Resolved, rng: &mut ChaCha8Rng) -> Result<Check> {
    let grid = crate::grid::TimeGrid::new(resolved.grid.horizon(), resolved.grid.steps().min(96))?;
    let mut worst_min = 0.0_f64;
    let mut worst_box = f64::NEG_INFINITY;
    let trials = 40;
    for _ in 0..trials {
        let mu = 10.0_f64.powf(rng.gen_range(-1.0..3.0));
        let h0 = if rng.gen_bool(0.85) { rng.gen_range(0.0..2.0) } else { 0.0 };
        let a0: f64 = if rng.gen_bool(0.8) { rng.gen_range(0.0..1.5) } else { 0.0 };
        let a1 = if a0 > 0.0 { rng.gen_range(-a0..a0) } else { 0.0 };
        let wf = rng.gen_range(1.0..4.0);
        let ph = rng.gen_range(0.0..std::f64::consts::TAU);
        let f = CoefficientPath::from_fn(grid, |t| (a0 + a1 * (wf * t + ph).sin()).max(0.0))?;
        let s0 = rng.gen_range(0.3..3.0);
        let s1 = rng.gen_range(0.0..(s0 - 0.3_f64).min(3.0 - s0).max(1e-9));
        let ph2 = rng.gen_range(0.0..std::f64::consts::TAU);
        let sigma = CoefficientPath::from_fn(grid, |t| s0 + s1 * (2.0 * t + ph2).sin())?;
        let (v, _) =
            forward::solve_mode_picard(mu, &sigma, &f, h0, resolved.alpha, &PicardControls::default())?;
        let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
        worst_min = worst_min.min(mn);
        let envelope = fraccalc::rl_integral(&f, resolved.alpha)?;
        for (vi, ei) in v.iter().zip(envelope.values()) {
            worst_box = worst_box.max(vi - (h0 + ei) - 1e-6);
        }
    }
    Ok(check(
        "forward positivity and a-priori box",
        worst_min >= -1e-10 && worst_box <= 0.0,
        format!("{trials} random admissible instances; min value {worst_min:.3e}, box excess {worst_box:.3e}"),
    ))
}

fn method_agreement_check(resolved: &Resolved, rng: &mut ChaCha8Rng) -> Result<Check> {
    let grid = crate::grid::TimeGrid::new(resolved.grid.horizon(), resolved.grid.steps().min(128))?;
    let mu = resolved.modes.eigenvalues()[0].min(50.0);
    let s0 = rng.gen_range(0.8..1.2);
    let sigma = CoefficientPath::from_fn(grid, |t| s0 + 0.3 * (2.0 * std::f64::consts::PI * t).sin())?;
    let f = CoefficientPath::from_fn(grid, |t| 1.0 + t)?;
    let (vp, _) = forward::solve_mode_picard(mu, &sigma, &f, 1.0, resolved.alpha, &PicardControls::default())?;
    let vl = forward::solve_mode_l1(mu, &sigma, &f, 1.0, resolved.alpha)?;
    // the uniform-mesh L1 scheme is first order near the t^α startup, so
    // compare away from the first few nodes and keep a crude global cap
    let skip = 8.min(vp.len() / 4);
    let d_tail = vp
        .iter()
        .zip(&vl)
        .skip(skip)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let d_full = vp
        .iter()
        .zip(&vl)
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = vp.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-12);
    Ok(check(
        "picard vs l1 method agreement",
        d_tail / scale < 0.05 && d_full / scale < 0.3,
        format!("sup deviation {d_tail:.3e} beyond the startup ({d_full:.3e} overall) on scale {scale:.3e}"),
    ))
}

fn inverse_bracket_check(resolved: &Resolved) -> Result<Check> {
    let problem = resolved.inverse_problem()?;
    let adm = inverse::admissibility_check(&problem)?;
    if !adm.passed() {
        return Ok(check(
            "inverse admissibility and bracket",
            false,
            format!("admissibility fails: {}", adm.first_failure().unwrap().name),
        ));
    }
    let bracket = inverse::domain_bounds(&problem)?;
    let sigma = CoefficientPath::constant(resolved.grid, bracket.midpoint())?;
    let (p, stats) = inverse::apply_p(&problem, &sigma)?;
    let inside = p
        .values()
        .iter()
        .all(|&x| bracket.contains(x, 1e-6 * (1.0 + bracket.upper())));
    Ok(check(
        "inverse admissibility and bracket",
        inside && stats.min_denominator > 0.0,
        format!(
            "P maps the midpoint into [{:.4}, {:.4}], min denominator {:.3e}",
            bracket.lower(),
            bracket.upper(),
            stats.min_denominator
        ),
    ))
}
