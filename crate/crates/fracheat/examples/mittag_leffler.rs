//! Evaluate the Mittag-Leffler function across its branches and check the
//! derivative identity d/dt E_{α,1}(-μt^α) = -μ t^{α-1} E_{α,α}(-μt^α)
//! against finite differences.

use fracheat::mlf::{eval_traced, gamma, ml_eval, ml_kernel, ml_time_derivative, MlParams};

fn main() -> fracheat::Result<()> {
    println!("E_(alpha,1)(-z) across the evaluation branches (alpha = 0.6):");
    let p = MlParams::new(0.6, 1.0)?;
    let mut z = 1e-3;
    while z <= 1e3 {
        let (v, branch) = eval_traced(p, -z)?;
        println!("  z = {z:9.3e}   E = {v:.12e}   [{branch:?}]");
        z *= 10.0;
    }

    println!("\nspecial values:");
    println!("  E_(1,1)(1)      = {:.12} (e = {:.12})", ml_eval(MlParams::new(1.0, 1.0)?, 1.0)?, std::f64::consts::E);
    println!("  E_(0.5,0.5)(0)  = {:.12} (1/Gamma(1/2) = {:.12})", ml_eval(MlParams::new(0.5, 0.5)?, 0.0)?, 1.0 / gamma(0.5));

    println!("\nkernel t^(a-1) E_(a,a)(-mu m t^a) at a = 0.5, mu = 2, m = 3:");
    for t in [0.05, 0.25, 1.0] {
        println!("  t = {t:5.2}   K = {:.10e}", ml_kernel(0.5, 2.0, 3.0, t)?);
    }

    println!("\nderivative identity vs central differences (a = 0.5, mu = 3):");
    let g = |t: f64| ml_eval(MlParams::new(0.5, 1.0).unwrap(), -3.0 * t.sqrt()).unwrap();
    for t in [0.25_f64, 0.7, 1.3] {
        let exact = ml_time_derivative(0.5, 3.0, t)?;
        let h = 1e-6 * t;
        let fd = (g(t + h) - g(t - h)) / (2.0 * h);
        println!(
            "  t = {t:5.2}   identity = {exact:+.10e}   finite diff = {fd:+.10e}   rel = {:.2e}",
            ((exact - fd) / fd).abs()
        );
    }
    Ok(())
}
