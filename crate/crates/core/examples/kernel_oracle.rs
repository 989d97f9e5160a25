//! Sampled one-dimensional SDO kernel against its closed form and quadrature.

use ndarray::Array2;
use sosrep::sdo::{kernel_matrix, laplace_kernel_1d, numeric_kernel_1d, FrequencySpec, Normalization, SamplingScheme, SdoParams};

fn main() -> sosrep::Result<()> {
    let a = 0.04;
    let params = SdoParams::new(a, 1, 1)?;
    let fs = FrequencySpec {
        scheme: SamplingScheme::Stratified,
        normalization: Normalization::Exact,
        ..FrequencySpec::new(params, 100_000, 1)
    }
    .generate()?;
    let origin = Array2::zeros((1, 1));
    let ys = Array2::from_shape_fn((7, 1), |(i, _)| 0.1 * i as f64);
    let sampled = kernel_matrix(origin.view(), ys.view(), &fs)?;
    println!("{:>6} {:>12} {:>12} {:>12}", "y", "sampled", "closed", "quadrature");
    for (i, &y) in ys.column(0).iter().enumerate() {
        println!(
            "{y:>6.2} {:>12.6} {:>12.6} {:>12.6}",
            sampled[[0, i]],
            laplace_kernel_1d(0.0, y, a),
            numeric_kernel_1d(0.0, y, &params)?
        );
    }
    Ok(())
}
