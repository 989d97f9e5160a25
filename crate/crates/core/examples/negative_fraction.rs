//! Fraction of training points with negative pre-density after natural versus
//! standard gradient descent.

use sosrep::harness::synthetic::two_clusters;
use sosrep::harness::{negative_fraction_experiment, NegFracConfig};
use sosrep::model::KernelSpec;
use sosrep::sdo::{FrequencySpec, SdoParams};

fn main() -> sosrep::Result<()> {
    let ds = two_clusters(150, 150, 0)?;
    let kernel = KernelSpec::Sdo(FrequencySpec::new(SdoParams::with_default_order(0.1, 2)?, 512, 0));
    let r = negative_fraction_experiment(&ds.name, ds.x.view(), &kernel, &NegFracConfig::default())?;
    println!("worst-5 mean negative fraction");
    println!("  initial  {:.3}", r.initial_worst_mean);
    println!("  natural  {:.3} ({} divergences)", r.natural.worst_mean, r.natural.divergences);
    println!("  standard {:.3} ({} divergences)", r.standard.worst_mean, r.standard.divergences);
    Ok(())
}
