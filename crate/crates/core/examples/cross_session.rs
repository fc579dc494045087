//! Trains on one session and tests on the other, in both directions.

use pulsegate::beats::segment_annotated;
use pulsegate::identify::{cross_session_evaluate, IdentifyArch};
use pulsegate::signal::{synth_corpus, SynthConfig};
use pulsegate::train::TrainConfig;

fn main() -> pulsegate::Result<()> {
    let records = synth_corpus(&SynthConfig {
        subjects: 3,
        beats: 40,
        sessions: 2,
        session_drift: 0.1,
        ..SynthConfig::default()
    })?;
    let beats = segment_annotated(&records)?.beats;
    let r = cross_session_evaluate(
        &beats,
        (1, 2),
        &IdentifyArch::default(),
        &TrainConfig::new(12, 3),
    )?;
    println!("session 1 -> 2: {:.3}", r.forward_accuracy);
    println!("session 2 -> 1: {:.3}", r.backward_accuracy);
    Ok(())
}
