//! Cuts annotated records into normalized 256-sample beats.

use pulsegate::beats::{beat_window, save_beats, segment, BEAT_LEN};
use pulsegate::signal::{synth_corpus, SynthConfig};

fn main() -> pulsegate::Result<()> {
    let record = synth_corpus(&SynthConfig {
        subjects: 2,
        beats: 12,
        ..SynthConfig::default()
    })?
    .remove(0);
    let peaks = record.rpeaks.clone().unwrap();
    for &p in peaks.iter().take(3) {
        println!(
            "peak {p}: window {:?}",
            beat_window(p, record.len(), BEAT_LEN)
        );
    }
    let seg = segment(&record, &peaks, BEAT_LEN)?;
    println!(
        "{} beats, {} peaks skipped at the edges",
        seg.beats.len(),
        seg.skipped
    );
    let r_offset = BEAT_LEN / 4;
    println!(
        "z-scored R amplitude of the first beat: {:.2}",
        seg.beats[0].samples[r_offset]
    );
    let path = std::env::temp_dir().join("pulsegate-beats.f32");
    save_beats(&seg.beats, &path, None)?;
    println!("saved to {}", path.display());
    Ok(())
}
