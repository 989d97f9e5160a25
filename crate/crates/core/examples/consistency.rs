//! L2 error of SOSREP with `a = 1/N` on a smooth bump density as `N` grows.

use sosrep::harness::{consistency_experiment, ConsistencyConfig};

fn main() -> sosrep::Result<()> {
    let report = consistency_experiment(&ConsistencyConfig::default())?;
    for row in &report.rows {
        println!("N = {:>4}  a = {:.2e}  median L2 error {:.4}", row.n, row.a, row.median_error);
    }
    Ok(())
}
