use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pulsegate::beats::{segment_annotated, subjects, Heartbeat, BEAT_LEN};
use pulsegate::identify::{
    saliency, saliency_graph, saliency_loss, train_identify, IdentifyArch, IdentifyModel, EMBED_DIM,
};
use pulsegate::rpeak::{train_detector, DetectorTrainConfig};
use pulsegate::signal::{synth_corpus, SynthConfig};
use pulsegate::train::TrainConfig;
use pulsegate::verify::{sample_pairs, train_siamese, SiameseTrainConfig};

fn small_beats(seed: u64) -> Vec<Heartbeat> {
    let records = synth_corpus(&SynthConfig {
        subjects: 3,
        beats: 24,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    segment_annotated(&records).unwrap().beats
}

fn random_beat(rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..BEAT_LEN).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn params(model: &IdentifyModel) -> Vec<f32> {
    model
        .graph
        .params()
        .iter()
        .flat_map(|t| t.data().to_vec())
        .collect()
}

#[test]
fn saliency_matches_central_differences() {
    let model = IdentifyModel::new(
        vec!["a".into(), "b".into(), "c".into()],
        IdentifyArch::default(),
        3,
    )
    .unwrap();
    let graph = model.graph.cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    for label in 0..3 {
        let beat = random_beat(&mut rng);
        let s = saliency(&model, &beat, label).unwrap();
        assert_eq!(s.len(), BEAT_LEN);
        let x: Vec<f64> = beat.iter().map(|&v| v as f64).collect();
        for _ in 0..24 {
            let i = rng.random_range(0..BEAT_LEN);
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus[i] += h;
            minus[i] -= h;
            let fd = (saliency_loss(&graph, &plus, label).unwrap()
                - saliency_loss(&graph, &minus, label).unwrap())
                / (2.0 * h);
            let err = (fd.abs() - s[i]).abs() / fd.abs().max(s[i]).max(1e-6);
            assert!(err <= 1e-3, "label {label} sample {i}: fd {fd} vs {}", s[i]);
        }
    }
}

#[test]
fn zero_loss_weight_gives_zero_saliency() {
    let model =
        IdentifyModel::new(vec!["a".into(), "b".into()], IdentifyArch::default(), 8).unwrap();
    let beat = random_beat(&mut ChaCha8Rng::seed_from_u64(1));
    let s = saliency_graph(&model.graph.cast::<f64>(), &beat, 1, 0.0).unwrap();
    assert!(s.iter().all(|&g| g == 0.0));
}

#[test]
fn embeddings_ignore_batch_composition() {
    let model =
        IdentifyModel::new(vec!["a".into(), "b".into()], IdentifyArch::default(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let beats: Vec<Vec<f32>> = (0..5).map(|_| random_beat(&mut rng)).collect();
    let rows: Vec<&[f32]> = beats.iter().map(Vec::as_slice).collect();
    let batch = model.embed(&rows).unwrap();
    assert_eq!(batch.len(), 5);
    for (row, e) in rows.iter().zip(&batch) {
        assert_eq!(e.len(), EMBED_DIM);
        assert!(e.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let alone = model.embed(&[row]).unwrap();
        for (a, b) in alone[0].iter().zip(e) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
    assert_eq!(batch, model.embed(&rows).unwrap());
}

#[test]
fn identification_training_is_reproducible() {
    let beats = small_beats(5);
    let refs: Vec<&Heartbeat> = beats.iter().collect();
    let run = || {
        let mut m = IdentifyModel::new(subjects(&beats), IdentifyArch::default(), 5).unwrap();
        let history = train_identify(&mut m, &refs, &[], &TrainConfig::new(1, 5)).unwrap();
        (params(&m), history)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let before = params(&IdentifyModel::new(subjects(&beats), IdentifyArch::default(), 5).unwrap());
    assert_ne!(a, before);
}

#[test]
fn detector_training_is_reproducible() {
    let records = synth_corpus(&SynthConfig {
        subjects: 2,
        beats: 40,
        seed: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = DetectorTrainConfig {
        train: TrainConfig::new(1, 6),
        ..DetectorTrainConfig::default()
    };
    let a = train_detector(&records, &config).unwrap();
    let b = train_detector(&records, &config).unwrap();
    assert_eq!(a.history, b.history);
    for (x, y) in a
        .detector
        .graph
        .params()
        .iter()
        .zip(b.detector.graph.params())
    {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn siamese_training_is_reproducible_and_learns() {
    let beats = small_beats(9);
    let embedder =
        IdentifyModel::new(vec!["x".into(), "y".into()], IdentifyArch::default(), 9).unwrap();
    let rows: Vec<&[f32]> = beats.iter().map(|b| b.samples.as_slice()).collect();
    let labelled: Vec<(String, Vec<f32>)> = beats
        .iter()
        .map(|b| b.subject_id.clone())
        .zip(embedder.embed(&rows).unwrap())
        .collect();
    let (matched, mismatched) = sample_pairs(&labelled, 10, 2.0, 9).unwrap();
    assert!(matched.iter().all(|p| p.label == 1.0));
    assert!(mismatched.iter().all(|p| p.label == 0.0));
    let config = SiameseTrainConfig {
        train: TrainConfig::new(5, 9),
        ..SiameseTrainConfig::default()
    };
    let a = train_siamese(&embedder, &matched, &mismatched, &config).unwrap();
    let b = train_siamese(&embedder, &matched, &mismatched, &config).unwrap();
    assert_eq!(a.history, b.history);
    let first = a.history.first().unwrap().train_loss;
    let last = a.history.last().unwrap().train_loss;
    assert!(last < first, "loss {first} -> {last}");
}
