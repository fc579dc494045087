//! FAR/FRR sweep and EER for two overlapping score distributions.

use pulsegate::verify::{far_frr_eer, SWEEP_RESOLUTION};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

fn main() -> pulsegate::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let genuine: Vec<f64> = Beta::new(6.0, 2.0)
        .unwrap()
        .sample_iter(&mut rng)
        .take(500)
        .collect();
    let imposter: Vec<f64> = Beta::new(2.0, 5.0)
        .unwrap()
        .sample_iter(&mut rng)
        .take(2000)
        .collect();
    let curve = far_frr_eer(&genuine, &imposter, SWEEP_RESOLUTION)?;
    for i in (0..curve.thresholds.len()).step_by(100) {
        println!(
            "threshold {:.2}: FAR {:.4} FRR {:.4}",
            curve.thresholds[i], curve.far[i], curve.frr[i]
        );
    }
    println!(
        "EER {:.4} at {:.3}, AUC {:.4}",
        curve.eer, curve.eer_threshold, curve.auc
    );
    Ok(())
}
