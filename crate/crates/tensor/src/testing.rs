//! Central finite-difference oracle for analytic gradients. Compiled only
//! for tests or with the `testing` feature.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Mode, ModelGraph};
use crate::loss::{loss, LossKind};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    /// Largest per-tensor relative error `|a - n| / max(|a|, |n|, floor)`.
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
}

impl GradCheck {
    fn record(&mut self, what: String, analytic: &[f64], numeric: &[f64]) {
        let e = relative_error(analytic, numeric);
        self.checked += analytic.len();
        if e > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = what;
        }
    }
}

pub const REL_ERROR_FLOOR: f64 = 1e-7;

pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(REL_ERROR_FLOOR)
}

/// Checks every input and parameter gradient of `graph` for the scalar
/// objective `sum_k <w_k, output_k>` with fixed random projections `w_k`.
pub fn check_graph(
    graph: &mut ModelGraph<f64>,
    inputs: &[Tensor<f64>],
    mode: Mode,
    projection_seed: u64,
    h: f64,
) -> Result<GradCheck> {
    let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
    let pass = graph.forward_multi(&refs, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
    let weights: Vec<Tensor<f64>> = pass
        .outputs()
        .iter()
        .map(|o| Tensor::from_fn(o.shape(), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let grads = graph.backward(&pass, &weights)?;

    let objective = |g: &ModelGraph<f64>, ins: &[Tensor<f64>]| -> Result<f64> {
        let refs: Vec<&Tensor<f64>> = ins.iter().collect();
        let p = g.forward_multi(&refs, mode)?;
        Ok(p.outputs()
            .iter()
            .zip(&weights)
            .map(|(o, w)| {
                o.data()
                    .iter()
                    .zip(w.data())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .sum())
    };

    let mut report = GradCheck::default();
    let mut ins = inputs.to_vec();
    for k in 0..ins.len() {
        let mut numeric = vec![0.0; ins[k].len()];
        for i in 0..ins[k].len() {
            let orig = ins[k].data()[i];
            ins[k].data_mut()[i] = orig + h;
            let up = objective(graph, &ins)?;
            ins[k].data_mut()[i] = orig - h;
            let down = objective(graph, &ins)?;
            ins[k].data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        report.record(format!("input {k}"), grads.inputs[k].data(), &numeric);
    }
    for p in 0..graph.params().len() {
        let mut numeric = vec![0.0; graph.params()[p].len()];
        for i in 0..numeric.len() {
            let orig = graph.params()[p].data()[i];
            graph.params_mut()[p].data_mut()[i] = orig + h;
            let up = objective(graph, &ins)?;
            graph.params_mut()[p].data_mut()[i] = orig - h;
            let down = objective(graph, &ins)?;
            graph.params_mut()[p].data_mut()[i] = orig;
            numeric[i] = (up - down) / (2.0 * h);
        }
        report.record(format!("parameter {p}"), grads.params[p].data(), &numeric);
    }
    Ok(report)
}

/// Compares a loss gradient against central differences of its value.
pub fn check_loss(
    kind: LossKind,
    pred: &Tensor<f64>,
    target: &Tensor<f64>,
    h: f64,
) -> Result<GradCheck> {
    let analytic = loss(kind, pred, target)?;
    let mut p = pred.clone();
    let mut numeric = vec![0.0; p.len()];
    for i in 0..p.len() {
        let orig = p.data()[i];
        p.data_mut()[i] = orig + h;
        let up = loss(kind, &p, target)?.value;
        p.data_mut()[i] = orig - h;
        let down = loss(kind, &p, target)?.value;
        p.data_mut()[i] = orig;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let mut report = GradCheck::default();
    report.record(format!("{kind:?}"), analytic.grad.data(), &numeric);
    Ok(report)
}

/// Every layer kind the engine supports, by name.
pub const LAYER_KINDS: [&str; 12] = [
    "conv1d",
    "batchnorm",
    "relu",
    "sigmoid",
    "maxpool1d",
    "spp",
    "dense",
    "dropout",
    "softmax",
    "concat",
    "add",
    "upsample1d",
];

/// A random single-layer graph of the given kind with inputs kept away from
/// the layer's non-differentiable points (ReLU at zero, pooling ties).
pub struct LayerCase {
    pub graph: ModelGraph<f64>,
    pub inputs: Vec<Tensor<f64>>,
    pub mode: Mode,
}

pub fn random_layer_case(kind: &str, seed: u64) -> Result<LayerCase> {
    use crate::graph::GraphBuilder;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::<f64>::new(seed.wrapping_add(1));
    let batch = rng.random_range(1..=3usize);
    let channels = rng.random_range(1..=3usize);
    let len = rng.random_range(2..=6usize) * 2;
    let train = Mode::Train { dropout_seed: seed };
    let mut mode = train;
    let uniform = |shape: &[usize], rng: &mut ChaCha8Rng| {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    };
    let mut inputs = Vec::new();

    let out = match kind {
        "conv1d" => {
            let x = b.input("x", &[channels, len])?;
            let k = [1, 3, 5][rng.random_range(0..3)];
            // random non-zero biases so the bias gradient is exercised too
            let y = b.conv1d("y", x, rng.random_range(1..=3), k)?;
            inputs.push(uniform(&[batch, channels, len], &mut rng));
            y
        }
        "batchnorm" => {
            let x = b.input("x", &[channels, len])?;
            let y = b.batchnorm("y", x)?;
            inputs.push(uniform(&[batch.max(2), channels, len], &mut rng));
            if rng.random_bool(0.3) {
                mode = Mode::Infer;
            }
            y
        }
        "relu" => {
            let x = b.input("x", &[channels, len])?;
            let y = b.relu("y", x)?;
            inputs.push(Tensor::from_fn(&[batch, channels, len], |_| {
                let m = rng.random_range(0.01..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            }));
            y
        }
        "sigmoid" => {
            let x = b.input("x", &[channels, len])?;
            let y = b.sigmoid("y", x)?;
            inputs.push(Tensor::from_fn(&[batch, channels, len], |_| {
                rng.random_range(-4.0..4.0)
            }));
            y
        }
        "maxpool1d" | "spp" => {
            let x = b.input("x", &[channels, len * 2])?;
            let y = if kind == "spp" {
                b.spp("y", x, &[2, 4])?
            } else {
                b.max_pool("y", x, [2, 4][rng.random_range(0..2)])?
            };
            inputs.push(distinct_values(&[batch, channels, len * 2], &mut rng));
            y
        }
        "dense" => {
            let x = b.input("x", &[channels, len])?;
            let y = b.dense("y", x, rng.random_range(1..=4))?;
            inputs.push(uniform(&[batch, channels, len], &mut rng));
            y
        }
        "dropout" => {
            let x = b.input("x", &[channels, len])?;
            let y = b.dropout("y", x, 0.3)?;
            inputs.push(uniform(&[batch, channels, len], &mut rng));
            if rng.random_bool(0.3) {
                mode = Mode::Infer;
            }
            y
        }
        "softmax" => {
            let x = b.input("x", &[len])?;
            let y = b.softmax("y", x)?;
            inputs.push(Tensor::from_fn(&[batch, len], |_| {
                rng.random_range(-3.0..3.0)
            }));
            y
        }
        "concat" | "add" => {
            let n = rng.random_range(2..=3);
            let mut xs = Vec::new();
            for i in 0..n {
                let c = if kind == "concat" {
                    rng.random_range(1..=3)
                } else {
                    channels
                };
                xs.push(b.input(&format!("x{i}"), &[c, len])?);
                inputs.push(uniform(&[batch, c, len], &mut rng));
            }
            if kind == "concat" {
                b.concat("y", &xs)?
            } else {
                b.add("y", &xs)?
            }
        }
        "upsample1d" => {
            let x = b.input("x", &[channels, len])?;
            let y = b.upsample("y", x, rng.random_range(2..=3))?;
            inputs.push(uniform(&[batch, channels, len], &mut rng));
            y
        }
        other => {
            return Err(crate::TensorError::layer(other, "unknown layer kind"));
        }
    };
    let mut graph = b.finish(&[out])?;
    // Move every parameter off its initial value so gamma/beta/bias are
    // generic, and give batch norm non-trivial running statistics.
    for p in graph.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.5..0.5);
        }
    }
    if kind == "batchnorm" {
        let refs: Vec<&Tensor<f64>> = inputs.iter().collect();
        let warm = Tensor::from_fn(refs[0].shape(), |_| rng.random_range(-2.0..2.0));
        let pass = graph.forward(&warm, train)?;
        graph.update_running_stats(&pass)?;
    }
    Ok(LayerCase {
        graph,
        inputs,
        mode,
    })
}

fn distinct_values(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let data = order
        .into_iter()
        .map(|k| k as f64 * 0.1 + rng.random_range(0.0..0.01))
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}
