//! Fits SOSREP to a 1-D standard-normal sample and prints the density on a grid.

use ndarray::{Array1, Axis};
use sosrep::harness::synthetic::standard_normal_1d;
use sosrep::model::{fit_model, KernelSpec};
use sosrep::sdo::{FrequencySpec, SdoParams};
use sosrep::solver::SolverOptions;

fn main() -> sosrep::Result<()> {
    let x = standard_normal_1d(400, 0);
    let kernel = KernelSpec::Sdo(FrequencySpec::new(SdoParams::new(0.01, 1, 1)?, 2048, 0));
    let model = fit_model(x.view(), &kernel, &SolverOptions::default())?;
    let out = model.outcome();
    println!("iterations {} converged {} grad norm {:.2e}", out.iterations, out.converged, out.grad_norm);
    let grid = Array1::linspace(-3.0, 3.0, 13).insert_axis(Axis(1));
    let p = model.evaluate_density(grid.view())?;
    let z = {
        let fine = Array1::linspace(-8.0, 8.0, 4001).insert_axis(Axis(1));
        model.evaluate_density(fine.view())?.sum() * 16.0 / 4000.0
    };
    for (y, v) in grid.column(0).iter().zip(&p) {
        let gauss = (-0.5 * y * y).exp() / (2.0 * std::f64::consts::PI).sqrt();
        println!("{y:>5.1}  normalized {:.4}  N(0,1) {gauss:.4}", v / z);
    }
    Ok(())
}
