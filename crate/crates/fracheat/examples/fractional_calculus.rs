//! Discrete fractional calculus: the L1 Caputo derivative and the
//! Riemann-Liouville integral on monomials, plus the composition identity
//! I^α(D^α v) = v - v(0) under grid refinement.

use fracheat::fraccalc::{caputo_l1, composition_check, gronwall_bound, rl_integral};
use fracheat::grid::{CoefficientPath, TimeGrid};
use fracheat::mlf::gamma;

fn main() -> fracheat::Result<()> {
    let alpha = 0.5;
    let grid = TimeGrid::new(1.0, 256)?;

    println!("D^0.5 and I^0.5 of monomials at t = 1 (exact values in parens):");
    for (name, path, d_exact, i_exact) in [
        ("1", CoefficientPath::constant(grid, 1.0)?, 0.0, 1.0 / gamma(1.5)),
        (
            "t",
            CoefficientPath::from_fn(grid, |t| t)?,
            1.0 / gamma(1.5),
            1.0 / gamma(2.5),
        ),
        (
            "t^2",
            CoefficientPath::from_fn(grid, |t| t * t)?,
            gamma(3.0) / gamma(2.5),
            gamma(3.0) / gamma(3.5),
        ),
    ] {
        let d = caputo_l1(&path, alpha)?;
        let i = rl_integral(&path, alpha)?;
        println!(
            "  v = {name:3}  D^a v(1) = {:+.8} ({d_exact:+.8})   I^a v(1) = {:+.8} ({i_exact:+.8})",
            d.values().last().unwrap(),
            i.values().last().unwrap(),
        );
    }

    println!("\ncomposition residual max |I^a D^a v - (v - v(0))| for v = t^2:");
    for n in [64usize, 128, 256, 512] {
        let g = TimeGrid::new(1.0, n)?;
        let path = CoefficientPath::from_fn(g, |t| t * t)?;
        println!("  N = {n:4}   residual = {:.4e}", composition_check(&path, alpha)?);
    }

    println!("\nGronwall envelope z*E_(a,1)(c Gamma(a) t^a):");
    for (z, c) in [(1.0, 0.0), (2.0, 1.0)] {
        println!(
            "  z = {z}, c = {c}: bound at t = 1 is {:.8}",
            gronwall_bound(z, c, alpha, 1.0)?
        );
    }
    Ok(())
}
