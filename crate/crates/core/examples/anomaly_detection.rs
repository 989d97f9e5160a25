//! SOSREP and KDE anomaly detection on a synthetic mixture with outliers,
//! with and without duplicated anomalies.

use sosrep::harness::synthetic::gaussian_mixture_with_outliers;
use sosrep::harness::{duplicates_experiment, AdConfig, AdMethod};

fn main() -> sosrep::Result<()> {
    let ds = gaussian_mixture_with_outliers(1000, 0.05, 0)?;
    let cfg = AdConfig {
        n_features: 1024,
        ..Default::default()
    };
    for method in [AdMethod::SosrepSdo, AdMethod::KdeGaussian] {
        for report in duplicates_experiment(&ds, method, &[1, 6], &[0, 1], &cfg)? {
            println!(
                "{:<14} k={} mean AUC {:.4} per seed {:?}",
                method.name(),
                report.duplication,
                report.mean_auc,
                report.per_seed_auc
            );
        }
    }
    Ok(())
}
