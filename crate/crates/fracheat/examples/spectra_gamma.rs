//! The admissibility exponent γ for the built-in observation functionals
//! over the Dirichlet spectrum: mean value needs γ = 0, the midpoint
//! measurement γ = 1/2, the boundary flux γ = 1 (and fails at γ = 0).

use fracheat::spectra::{dirichlet_laplacian_modes, functional_weights, gamma_admissibility, FunctionalKind};

fn main() -> fracheat::Result<()> {
    let n = 256;
    let mus = dirichlet_laplacian_modes(n)?;
    let cases = [
        ("mean value", FunctionalKind::MeanValue, vec![0.0]),
        ("point x* = 1/2", FunctionalKind::Point(0.5), vec![0.5]),
        ("boundary flux", FunctionalKind::BoundaryFlux, vec![1.0, 0.0]),
    ];
    println!("{n}-mode admissibility check {{phi_k / mu_k^gamma}} in l2:");
    for (name, kind, gammas) in cases {
        let weights = functional_weights(kind, n)?;
        for gamma in gammas {
            let report = gamma_admissibility(&weights, &mus, gamma)?;
            let (m, s) = *report.partial_sums.last().unwrap();
            println!(
                "  {name:15} gamma = {gamma:3}: {}  (tail exponent {:+.2}, S_{m} = {s:.6e})",
                if report.admissible { "admissible    " } else { "NOT admissible" },
                report.tail_exponent,
            );
        }
    }
    Ok(())
}
