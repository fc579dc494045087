//! Writes a 250 Hz int16 recording, loads it back and resamples it to the
//! pipeline rate.

use pulsegate::signal::{
    load_raw, resample, synth_corpus, zscore, SampleFormat, SynthConfig, PIPELINE_FS,
};

fn main() -> pulsegate::Result<()> {
    let source = synth_corpus(&SynthConfig {
        subjects: 2,
        beats: 10,
        fs: 250.0,
        ..SynthConfig::default()
    })?
    .remove(0);
    let gain = 1000.0;
    let bytes: Vec<u8> = source
        .samples
        .iter()
        .flat_map(|v| ((v * gain).round() as i16).to_le_bytes())
        .collect();
    let path = std::env::temp_dir().join("pulsegate-ingest.bin");
    std::fs::write(&path, bytes).expect("write raw recording");

    let raw = load_raw(&path, 250.0, SampleFormat::Int16Le, gain, "S01", 1)?;
    let at_pipeline = resample(&raw, PIPELINE_FS)?;
    let (z, _) = zscore(&at_pipeline.samples)?;
    let peak = z.iter().cloned().fold(f64::MIN, f64::max);
    println!(
        "{} samples at {} Hz -> {} samples at {} Hz, max z-score {peak:.2}",
        raw.len(),
        raw.fs,
        at_pipeline.len(),
        at_pipeline.fs
    );
    Ok(())
}
