//! Disjoint-subject verification: embedder on half the subjects, Siamese
//! head and templates on the rest, compared against cosine scoring.

use pulsegate::beats::segment_annotated;
use pulsegate::identify::IdentifyArch;
use pulsegate::signal::{synth_corpus, SynthConfig};
use pulsegate::train::TrainConfig;
use pulsegate::verify::{disjoint_protocol, Backend, ProtocolConfig};

fn main() -> pulsegate::Result<()> {
    let records = synth_corpus(&SynthConfig {
        subjects: 8,
        beats: 60,
        seed: 1,
        noise_sigma_mv: Some(0.1),
        ..SynthConfig::default()
    })?;
    let beats = segment_annotated(&records)?.beats;
    let mut config = ProtocolConfig::default();
    config.embedder = TrainConfig::new(1, 1);
    config.head.train = TrainConfig::new(15, 1);
    config.matched_per_subject = 20;
    let out = disjoint_protocol(&beats, &IdentifyArch::default(), &config)?;
    println!(
        "embedder subjects {:?}, verification subjects {:?}",
        out.embedder_subjects, out.verification_subjects
    );
    for backend in [Backend::Siamese, Backend::Cosine, Backend::Euclidean] {
        for k in [1, 3] {
            let r = out.evaluate(backend, k)?;
            println!(
                "{:>9} k={k}: EER {:.4} AUC {:.4}",
                backend.to_string(),
                r.curve.eer,
                r.curve.auc
            );
        }
    }
    Ok(())
}
