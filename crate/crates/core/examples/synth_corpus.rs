//! Generates a small two-session corpus and writes it as CSV records.

use pulsegate::signal::{synth_corpus, write_corpus, SynthConfig};

fn main() -> pulsegate::Result<()> {
    let config = SynthConfig {
        subjects: 4,
        beats: 30,
        sessions: 2,
        session_drift: 0.05,
        seed: 1,
        ..SynthConfig::default()
    };
    let records = synth_corpus(&config)?;
    for r in &records {
        println!(
            "{} session {}: {:.1} s, {} annotated peaks",
            r.subject_id,
            r.session_id,
            r.duration_s(),
            r.rpeaks.as_ref().map_or(0, Vec::len)
        );
    }
    let dir = std::env::temp_dir().join("pulsegate-synth");
    let manifest = write_corpus(&records, &dir, None)?;
    println!("{} records in {}", manifest.records.len(), dir.display());
    Ok(())
}
