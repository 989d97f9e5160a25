//! Cluster density ratios of SOSREP and KDE on the two-block kernel.

use sosrep::solver::SolverOptions;
use sosrep::two_block::{verify_against_solver, BlockSpec};

fn main() -> sosrep::Result<()> {
    let opts = SolverOptions {
        n_iters: 20_000,
        grad_tol: 1e-12,
        ..Default::default()
    };
    for beta in [0.0, 0.5, 0.9] {
        let spec = BlockSpec::new(100, 100, 0.8, 0.2, beta)?;
        let r = verify_against_solver(&spec, &opts)?;
        println!(
            "beta {beta:.1}: gamma^2/gamma'^2 {:.3}, exact finite-N {:.3}, solver {:.3}, KDE {:.3}",
            r.asymptotic_ratio, r.exact_ratio, r.solver_ratio, r.kde_ratio_exact
        );
    }
    Ok(())
}
