//! Fits a tiny 1D conv net that tells whether a bump sits in the left or
//! right half of a signal.

use pulsegate_tensor::{loss, AdamConfig, AdamState, GraphBuilder, LossKind, Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LEN: usize = 32;

fn batch(rng: &mut ChaCha8Rng, n: usize) -> (Tensor<f32>, Tensor<f32>) {
    let mut x = Tensor::zeros(&[n, 1, LEN]);
    let mut y = Tensor::zeros(&[n, 2]);
    for i in 0..n {
        let at = rng.random_range(2..LEN - 2);
        for t in 0..LEN {
            let d = t as f32 - at as f32;
            x.data_mut()[i * LEN + t] = (-d * d / 4.0).exp() + rng.random_range(-0.1..0.1);
        }
        y.data_mut()[i * 2 + usize::from(at >= LEN / 2)] = 1.0;
    }
    (x, y)
}

fn main() -> pulsegate_tensor::Result<()> {
    let mut b = GraphBuilder::<f32>::new(0);
    let x = b.input("x", &[1, LEN])?;
    let h = b.conv1d("conv", x, 4, 5)?;
    let h = b.relu("relu", h)?;
    let h = b.max_pool("pool", h, 4)?;
    let h = b.dense("fc", h, 2)?;
    let out = b.softmax("softmax", h)?;
    let mut graph = b.finish(&[out])?;
    let mut adam = AdamState::for_graph(AdamConfig::default(), &graph);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    for step in 0..=300 {
        let (x, y) = batch(&mut rng, 16);
        let pass = graph.forward(&x, Mode::Train { dropout_seed: step })?;
        let l = loss(LossKind::CategoricalCrossentropy, pass.output(), &y)?;
        let grads = graph.backward(&pass, &[l.grad])?;
        adam.step(&mut graph, &grads)?;
        if step % 50 == 0 {
            println!("step {step:>3} loss {:.4}", l.value);
        }
    }

    let (x, y) = batch(&mut rng, 200);
    let probs = graph.forward(&x, Mode::Infer)?;
    let correct = probs
        .output()
        .data()
        .chunks(2)
        .zip(y.data().chunks(2))
        .filter(|(p, t)| (p[1] > p[0]) == (t[1] > t[0]))
        .count();
    println!("held-out accuracy {:.3}", correct as f64 / 200.0);
    Ok(())
}
