use proptest::prelude::*;
use pulsegate_tensor::{GraphBuilder, Mode, Tensor};

fn single<F>(shape: &[usize], build: F) -> pulsegate_tensor::ModelGraph<f64>
where
    F: FnOnce(&mut GraphBuilder<f64>, pulsegate_tensor::Source) -> pulsegate_tensor::Source,
{
    let mut b = GraphBuilder::<f64>::new(1);
    let x = b.input("x", shape).unwrap();
    let y = build(&mut b, x);
    b.finish(&[y]).unwrap()
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, logits in prop::collection::vec(-30.0f64..30.0, 10)) {
        let g = single(&[10], |b, x| b.softmax("s", x).unwrap());
        let data: Vec<f64> = (0..rows).flat_map(|r| logits.iter().map(move |v| v + r as f64)).collect();
        let out = g.forward(&Tensor::new(vec![rows, 10], data).unwrap(), Mode::Infer).unwrap();
        for row in out.output().data().chunks(10) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn same_conv_preserves_length(len in 1usize..40, k in 0usize..8, cin in 1usize..4, cout in 1usize..4) {
        let kernel = 2 * k + 1;
        let g = single(&[cin, len], |b, x| b.conv1d("c", x, cout, kernel).unwrap());
        let out = g.forward(&Tensor::full(&[2, cin, len], 0.5), Mode::Infer).unwrap();
        prop_assert_eq!(out.output().shape(), &[2, cout, len]);
    }

    #[test]
    // Input variance well above the normalization epsilon.
    fn train_batchnorm_standardizes(seed in 0u64..1000, batch in 16usize..24, scale in 1.0f64..50.0, shift in -20.0f64..20.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = single(&[3, 8], |b, x| b.batchnorm("bn", x).unwrap());
        let input = Tensor::from_fn(&[batch, 3, 8], |_| shift + scale * rng.random_range(-1.0..1.0));
        let out = g.forward(&input, Mode::Train { dropout_seed: 0 }).unwrap();
        let y = out.output().data();
        for c in 0..3 {
            let vals: Vec<f64> = (0..batch).flat_map(|s| (0..8).map(move |i| (s, i))).map(|(s, i)| y[(s * 3 + c) * 8 + i]).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / vals.len() as f64;
            prop_assert!(m.abs() <= 1e-5);
            prop_assert!((v - 1.0).abs() <= 1e-4);
        }
    }
}

#[test]
fn spp_lengths_and_constant_input() {
    let g = single(&[2, 256], |b, x| b.spp("spp", x, &[8, 16, 32]).unwrap());
    let out = g
        .forward(&Tensor::full(&[1, 2, 256], 3.25), Mode::Infer)
        .unwrap();
    assert_eq!(out.output().shape(), &[1, 2, 56]);
    assert!(out.output().data().iter().all(|&v| v == 3.25));
}

#[test]
fn single_window_spp_is_global_max() {
    let g = single(&[1, 32], |b, x| b.spp("spp", x, &[32]).unwrap());
    let data: Vec<f64> = (0..32)
        .map(|i| ((i * 37) % 32) as f64 * 0.1 - 1.0)
        .collect();
    let want = data.iter().copied().fold(f64::MIN, f64::max);
    let out = g
        .forward(&Tensor::new(vec![1, 1, 32], data).unwrap(), Mode::Infer)
        .unwrap();
    assert_eq!(out.output().data(), &[want]);
}

#[test]
fn spp_rejects_indivisible_length() {
    let mut b = GraphBuilder::<f64>::new(0);
    let x = b.input("x", &[1, 100]).unwrap();
    assert!(b.spp("spp", x, &[8, 16, 32]).is_err());
}
