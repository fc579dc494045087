use pulsegate_tensor::testing::{check_graph, check_loss, random_layer_case, LAYER_KINDS};
use pulsegate_tensor::{GraphBuilder, LossKind, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 100;

#[test]
fn every_layer_kind_matches_finite_differences() {
    for kind in LAYER_KINDS {
        let mut worst = 0.0f64;
        for seed in 0..INSTANCES {
            let mut case = random_layer_case(kind, seed).unwrap();
            let r =
                check_graph(&mut case.graph, &case.inputs, case.mode, seed ^ 0xABCD, H).unwrap();
            assert!(
                r.max_rel_error <= TOL,
                "{kind} seed {seed}: rel error {} at {}",
                r.max_rel_error,
                r.worst
            );
            worst = worst.max(r.max_rel_error);
        }
        eprintln!("{kind:>10}: worst rel error {worst:.2e}");
    }
}

#[test]
fn losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..INSTANCES {
        let rows = rng.random_range(1..=4);
        let cols = rng.random_range(2..=5);
        // keep probabilities inside the clipping band
        let mut pred = Tensor::from_fn(&[rows, cols], |_| rng.random_range(0.05..0.95));
        for r in pred.data_mut().chunks_mut(cols) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|v| *v /= s);
        }
        let mut onehot = Tensor::zeros(&[rows, cols]);
        for r in onehot.data_mut().chunks_mut(cols) {
            r[rng.random_range(0..cols)] = 1.0;
        }
        let cce = check_loss(LossKind::CategoricalCrossentropy, &pred, &onehot, H).unwrap();
        assert!(
            cce.max_rel_error <= TOL,
            "cce instance {i}: {}",
            cce.max_rel_error
        );

        let probs = Tensor::from_fn(&[rows, cols], |_| rng.random_range(0.05..0.95));
        let bits = Tensor::from_fn(
            &[rows, cols],
            |_| if rng.random_bool(0.5) { 1.0 } else { 0.0 },
        );
        let bce = check_loss(LossKind::BinaryCrossentropy, &probs, &bits, H).unwrap();
        assert!(
            bce.max_rel_error <= TOL,
            "bce instance {i}: {}",
            bce.max_rel_error
        );

        let target = Tensor::from_fn(&[rows, cols], |_| rng.random_range(-1.0..1.0));
        let mse = check_loss(LossKind::MeanSquaredError, &probs, &target, H).unwrap();
        assert!(
            mse.max_rel_error <= TOL,
            "mse instance {i}: {}",
            mse.max_rel_error
        );
    }
}

#[test]
fn composed_network_matches_finite_differences() {
    // Residual multi-branch block with pooling and a softmax head.
    for seed in 0..10 {
        let mut b = GraphBuilder::<f64>::new(seed);
        let x = b.input("x", &[1, 16]).unwrap();
        let c1 = b.conv1d("c1", x, 2, 3).unwrap();
        let s1 = b.sigmoid("s1", c1).unwrap();
        let r1 = b.batchnorm("r1", s1).unwrap();
        let c2 = b.conv1d("c2", r1, 2, 3).unwrap();
        let cat = b.concat("cat", &[r1, c2]).unwrap();
        let skip = b.conv1d("skip", x, 4, 1).unwrap();
        let sum = b.add("sum", &[cat, skip]).unwrap();
        let p = b.spp("spp", sum, &[4, 8]).unwrap();
        let d = b.dense("d", p, 3).unwrap();
        let s = b.softmax("s", d).unwrap();
        let mut g = b.finish(&[s]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Tensor::from_fn(&[4, 1, 16], |_| rng.random_range(-1.0..1.0));
        let r = check_graph(
            &mut g,
            &[input],
            Mode::Train { dropout_seed: seed },
            seed,
            H,
        )
        .unwrap();
        assert!(
            r.max_rel_error <= TOL,
            "seed {seed}: {} at {}",
            r.max_rel_error,
            r.worst
        );
    }
}
