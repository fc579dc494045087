//! Input-gradient saliency of a trained model over one beat.

use pulsegate::beats::{segment_annotated, subjects, Heartbeat, BEAT_LEN};
use pulsegate::identify::{saliency, train_identify, IdentifyArch, IdentifyModel};
use pulsegate::signal::{synth_corpus, SynthConfig};
use pulsegate::train::TrainConfig;

fn main() -> pulsegate::Result<()> {
    let records = synth_corpus(&SynthConfig {
        subjects: 3,
        beats: 40,
        ..SynthConfig::default()
    })?;
    let beats = segment_annotated(&records)?.beats;
    let mut model = IdentifyModel::new(subjects(&beats), IdentifyArch::default(), 2)?;
    let train: Vec<&Heartbeat> = beats.iter().collect();
    train_identify(&mut model, &train, &[], &TrainConfig::new(8, 2))?;

    let beat = &beats[0];
    let label = model.class_index(&beat.subject_id).unwrap();
    let s = saliency(&model, &beat.samples, label)?;
    let max = s.iter().cloned().fold(0.0, f64::max);
    // coarse text rendering, 32 bins
    for (i, chunk) in s.chunks(BEAT_LEN / 32).enumerate() {
        let v = chunk.iter().cloned().fold(0.0, f64::max) / max;
        let offset = i as isize * (BEAT_LEN / 32) as isize - (BEAT_LEN / 4) as isize;
        println!("{offset:>5} {}", "#".repeat((v * 40.0).round() as usize));
    }
    Ok(())
}
