//! Trains the R-peak detector briefly and scores it on unseen subjects.

use pulsegate::rpeak::{
    detect_rpeaks, evaluate_peaks, train_detector, DetectorTrainConfig, PeakMatchReport,
    DEFAULT_MIN_DISTANCE, DEFAULT_THRESHOLD, DEFAULT_TOLERANCE,
};
use pulsegate::signal::{synth_corpus, SynthConfig};
use pulsegate::train::TrainConfig;

fn main() -> pulsegate::Result<()> {
    let train = synth_corpus(&SynthConfig {
        subjects: 3,
        beats: 60,
        seed: 1,
        ..SynthConfig::default()
    })?;
    let config = DetectorTrainConfig {
        train: TrainConfig::new(4, 1),
        ..DetectorTrainConfig::default()
    };
    let trained = train_detector(&train, &config)?;
    for e in &trained.history {
        println!(
            "epoch {} train {:.4} val {:.4}",
            e.epoch, e.train_loss, e.val_loss
        );
    }

    let test = synth_corpus(&SynthConfig {
        subjects: 2,
        beats: 40,
        seed: 99,
        ..SynthConfig::default()
    })?;
    let mut reports = Vec::new();
    for r in &test {
        let peaks = detect_rpeaks(
            &trained.detector,
            r,
            DEFAULT_THRESHOLD,
            DEFAULT_MIN_DISTANCE,
        )?;
        reports.push(evaluate_peaks(
            &peaks,
            r.rpeaks.as_deref().unwrap(),
            DEFAULT_TOLERANCE,
        ));
    }
    let total = PeakMatchReport::merge(&reports);
    println!(
        "sensitivity {:.3}, {} false positives, temporal error {:.2} samples",
        total.sensitivity(),
        total.false_positives,
        total.temporal_error_mean
    );
    Ok(())
}
