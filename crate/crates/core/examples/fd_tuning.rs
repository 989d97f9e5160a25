//! Selects the SOSREP smoothness by the finite-difference score-matching
//! statistic on held-out data.

use sosrep::harness::synthetic::standard_normal_1d;
use sosrep::model::KernelSpec;
use sosrep::score::{log_grid_descending, tune_sosrep, FdOptions};
use sosrep::sdo::{FrequencySpec, SdoParams};
use sosrep::solver::SolverOptions;

fn main() -> sosrep::Result<()> {
    let x = standard_normal_1d(500, 1);
    let y = standard_normal_1d(500, 2);
    let grid = log_grid_descending(1e-6, 1e2, 25)?;
    let kernel = KernelSpec::Sdo(FrequencySpec::new(SdoParams::new(grid[0], 1, 1)?, 1024, 3));
    let out = tune_sosrep(x.view(), y.view(), &kernel, &grid, &SolverOptions::default(), &FdOptions::default())?;
    println!("selected a = {:.3e} (stable {}, {} evaluations)", out.selected, out.stable, out.evaluations);
    print!("{}", out.profile.to_csv()?);
    Ok(())
}
