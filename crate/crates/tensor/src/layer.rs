use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the current batch when updating running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

/// One layer of a [`crate::ModelGraph`]. Convolutions are stride 1 with
/// zero `same` padding; pooling windows are non-overlapping (stride = window).
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    /// Normalizes axis 1 over the batch and any trailing positions.
    BatchNorm {
        features: usize,
    },
    Relu,
    Sigmoid,
    MaxPool1d {
        window: usize,
    },
    /// Parallel max pools, concatenated along the length axis per channel.
    Spp {
        windows: Vec<usize>,
    },
    /// Fully connected over all non-batch axes flattened.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
    /// Over the last axis.
    Softmax,
    /// Along axis 1 (channels, or features for flat inputs).
    Concat,
    Add,
    Upsample1d {
        factor: usize,
    },
}

impl LayerSpec {
    pub fn kind_id(&self) -> u8 {
        match self {
            LayerSpec::Conv1d { .. } => 1,
            LayerSpec::BatchNorm { .. } => 2,
            LayerSpec::Relu => 3,
            LayerSpec::Sigmoid => 4,
            LayerSpec::MaxPool1d { .. } => 5,
            LayerSpec::Spp { .. } => 6,
            LayerSpec::Dense { .. } => 7,
            LayerSpec::Dropout { .. } => 8,
            LayerSpec::Softmax => 9,
            LayerSpec::Concat => 10,
            LayerSpec::Add => 11,
            LayerSpec::Upsample1d { .. } => 12,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Spp { .. } => "spp",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Concat => "concat",
            LayerSpec::Add => "add",
            LayerSpec::Upsample1d { .. } => "upsample1d",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(TensorError::layer(self.kind_name(), reason));
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => {
                if *in_channels == 0 || *out_channels == 0 || *kernel == 0 {
                    return bad("channel counts and kernel length must be positive");
                }
                if kernel % 2 == 0 {
                    return bad("kernel length must be odd for same padding");
                }
            }
            LayerSpec::BatchNorm { features } if *features == 0 => {
                return bad("feature count must be positive")
            }
            LayerSpec::MaxPool1d { window } if *window == 0 => {
                return bad("window must be positive")
            }
            LayerSpec::Spp { windows } => {
                if windows.is_empty() || windows[0] == 0 {
                    return bad("windows must be non-empty and positive");
                }
                if windows.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("windows must be strictly increasing");
                }
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } if *in_features == 0 || *out_features == 0 => {
                return bad("feature counts must be positive")
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                return bad("rate must lie in [0, 1)")
            }
            LayerSpec::Upsample1d { factor } if *factor == 0 => {
                return bad("factor must be positive")
            }
            _ => {}
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
            } => vec![
                vec![*out_channels, *in_channels, *kernel],
                vec![*out_channels],
            ],
            LayerSpec::BatchNorm { features } => vec![vec![*features], vec![*features]],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![vec![*out_features, *in_features], vec![*out_features]],
            _ => Vec::new(),
        }
    }

    pub fn arity(&self) -> Option<usize> {
        match self {
            LayerSpec::Concat | LayerSpec::Add => None,
            _ => Some(1),
        }
    }

    /// Per-sample output shape (batch axis excluded).
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let name = self.kind_name();
        match self.arity() {
            Some(n) if inputs.len() != n => {
                return Err(TensorError::layer(
                    name,
                    format!("expects {n} input(s), got {}", inputs.len()),
                ))
            }
            None if inputs.len() < 2 => {
                return Err(TensorError::layer(name, "expects at least 2 inputs"))
            }
            _ => {}
        }
        let first = inputs[0];
        let seq = |s: &[usize]| -> Result<(usize, usize)> {
            if s.len() != 2 {
                return Err(TensorError::layer(
                    name,
                    format!("expects [channels, length] input, got {s:?}"),
                ));
            }
            Ok((s[0], s[1]))
        };
        match self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                ..
            } => {
                let (c, l) = seq(first)?;
                if c != *in_channels {
                    return Err(TensorError::shape(name, &[*in_channels, l], first));
                }
                Ok(vec![*out_channels, l])
            }
            LayerSpec::BatchNorm { features } => {
                if first[0] != *features {
                    return Err(TensorError::layer(
                        name,
                        format!("expects {features} features on axis 1, got {first:?}"),
                    ));
                }
                Ok(first.to_vec())
            }
            LayerSpec::Relu
            | LayerSpec::Sigmoid
            | LayerSpec::Dropout { .. }
            | LayerSpec::Softmax => Ok(first.to_vec()),
            LayerSpec::MaxPool1d { window } => {
                let (c, l) = seq(first)?;
                if l % window != 0 {
                    return Err(TensorError::layer(
                        name,
                        format!("length {l} not divisible by window {window}"),
                    ));
                }
                Ok(vec![c, l / window])
            }
            LayerSpec::Spp { windows } => {
                let (c, l) = seq(first)?;
                let mut out = 0;
                for w in windows {
                    if l % w != 0 {
                        return Err(TensorError::layer(
                            name,
                            format!("length {l} not divisible by window {w}"),
                        ));
                    }
                    out += l / w;
                }
                Ok(vec![c, out])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let f: usize = first.iter().product();
                if f != *in_features {
                    return Err(TensorError::layer(
                        name,
                        format!("expects {in_features} input features, got {f} from {first:?}"),
                    ));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Concat => {
                let mut c_total = 0;
                for s in inputs {
                    if s.len() != first.len() || s[1..] != first[1..] {
                        return Err(TensorError::shape("concat", first, s));
                    }
                    c_total += s[0];
                }
                let mut out = first.to_vec();
                out[0] = c_total;
                Ok(out)
            }
            LayerSpec::Add => {
                for s in &inputs[1..] {
                    if *s != first {
                        return Err(TensorError::shape("add", first, s));
                    }
                }
                Ok(first.to_vec())
            }
            LayerSpec::Upsample1d { factor } => {
                let (c, l) = seq(first)?;
                Ok(vec![c, l * factor])
            }
        }
    }
}

/// Per-layer state captured during a forward pass.
#[derive(Clone, Debug)]
pub(crate) enum Cache<S> {
    None,
    BatchNorm {
        xhat: Vec<S>,
        inv_std: Vec<S>,
        batch_mean: Vec<S>,
        /// Unbiased batch variance; empty in inference mode.
        batch_var: Vec<S>,
    },
    Argmax(Vec<u32>),
    Mask(Vec<S>),
}

pub(crate) struct RunningStats<'a, S> {
    pub mean: &'a [S],
    pub var: &'a [S],
}

pub(crate) enum LayerMode {
    Train { seed: u64 },
    Infer,
}

pub(crate) fn forward<S: Scalar>(
    spec: &LayerSpec,
    inputs: &[&Tensor<S>],
    params: &[&Tensor<S>],
    running: Option<RunningStats<'_, S>>,
    mode: &LayerMode,
) -> Result<(Tensor<S>, Cache<S>)> {
    let x = inputs[0];
    let n = x.batch();
    let out_shape = {
        let per: Vec<&[usize]> = inputs.iter().map(|t| &t.shape()[1..]).collect();
        let mut s = vec![n];
        s.extend(spec.output_shape(&per)?);
        s
    };
    match spec {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let l = x.shape()[2];
            let (w, b) = (params[0].data(), params[1].data());
            let ck = in_channels * kernel;
            let mut cols = vec![S::zero(); ck * l];
            let mut out = Tensor::zeros(&out_shape);
            let per_in = in_channels * l;
            let per_out = out_channels * l;
            for s in 0..n {
                im2col(
                    &x.data()[s * per_in..(s + 1) * per_in],
                    *in_channels,
                    l,
                    *kernel,
                    &mut cols,
                );
                let y = &mut out.data_mut()[s * per_out..(s + 1) * per_out];
                for (co, row) in y.chunks_mut(l).enumerate() {
                    row.iter_mut().for_each(|v| *v = b[co]);
                }
                S::gemm(
                    *out_channels,
                    ck,
                    l,
                    S::one(),
                    w,
                    ck,
                    1,
                    &cols,
                    l,
                    1,
                    S::one(),
                    y,
                    l,
                    1,
                );
            }
            Ok((out, Cache::None))
        }
        LayerSpec::BatchNorm { features } => {
            let inner = x.len() / (n * features);
            let (gamma, beta) = (params[0].data(), params[1].data());
            let eps = S::lit(BN_EPSILON);
            let m = n * inner;
            let mut out = Tensor::zeros(&out_shape);
            let mut xhat = vec![S::zero(); x.len()];
            let mut inv_std = vec![S::zero(); *features];
            let mut batch_mean = vec![S::zero(); *features];
            let mut batch_var = Vec::new();
            let xd = x.data();
            let idx = |s: usize, c: usize, i: usize| (s * features + c) * inner + i;
            match mode {
                LayerMode::Train { .. } => {
                    batch_var = vec![S::zero(); *features];
                    let mf = S::from_usize(m).unwrap();
                    for c in 0..*features {
                        let mut sum = S::zero();
                        for s in 0..n {
                            for i in 0..inner {
                                sum += xd[idx(s, c, i)];
                            }
                        }
                        let mean = sum / mf;
                        let mut sq = S::zero();
                        for s in 0..n {
                            for i in 0..inner {
                                let d = xd[idx(s, c, i)] - mean;
                                sq += d * d;
                            }
                        }
                        let var = sq / mf;
                        batch_mean[c] = mean;
                        batch_var[c] = if m > 1 {
                            sq / S::from_usize(m - 1).unwrap()
                        } else {
                            var
                        };
                        inv_std[c] = S::one() / (var + eps).sqrt();
                    }
                }
                LayerMode::Infer => {
                    let stats = running.expect("batch norm running stats");
                    for c in 0..*features {
                        batch_mean[c] = stats.mean[c];
                        inv_std[c] = S::one() / (stats.var[c] + eps).sqrt();
                    }
                }
            }
            let od = out.data_mut();
            for s in 0..n {
                for c in 0..*features {
                    for i in 0..inner {
                        let j = idx(s, c, i);
                        let h = (xd[j] - batch_mean[c]) * inv_std[c];
                        xhat[j] = h;
                        od[j] = gamma[c] * h + beta[c];
                    }
                }
            }
            Ok((
                out,
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_mean,
                    batch_var,
                },
            ))
        }
        LayerSpec::Relu => {
            let data = x
                .data()
                .iter()
                .map(|&v| if v > S::zero() { v } else { S::zero() })
                .collect();
            Ok((Tensor::new(out_shape, data)?, Cache::None))
        }
        LayerSpec::Sigmoid => {
            let data = x.data().iter().map(|&v| sigmoid(v)).collect();
            Ok((Tensor::new(out_shape, data)?, Cache::None))
        }
        LayerSpec::MaxPool1d { window } => {
            let (out, arg) = max_pool(x, &[*window], &out_shape);
            Ok((out, Cache::Argmax(arg)))
        }
        LayerSpec::Spp { windows } => {
            let (out, arg) = max_pool(x, windows, &out_shape);
            Ok((out, Cache::Argmax(arg)))
        }
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let (w, b) = (params[0].data(), params[1].data());
            let mut out = Tensor::zeros(&out_shape);
            for row in out.data_mut().chunks_mut(*out_features) {
                row.copy_from_slice(b);
            }
            S::gemm(
                n,
                *in_features,
                *out_features,
                S::one(),
                x.data(),
                *in_features,
                1,
                w,
                1,
                *in_features,
                S::one(),
                out.data_mut(),
                *out_features,
                1,
            );
            Ok((out, Cache::None))
        }
        LayerSpec::Dropout { rate } => match mode {
            LayerMode::Train { seed } if *rate > 0.0 => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let keep = S::lit(1.0 / (1.0 - rate));
                let mask: Vec<S> = (0..x.len())
                    .map(|_| {
                        if rng.random::<f64>() < *rate {
                            S::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
                Ok((Tensor::new(out_shape, data)?, Cache::Mask(mask)))
            }
            _ => Ok((x.clone(), Cache::None)),
        },
        LayerSpec::Softmax => {
            let last = *x.shape().last().unwrap();
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(last) {
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
            Ok((out, Cache::None))
        }
        LayerSpec::Concat => {
            let mut out = Vec::with_capacity(out_shape.iter().product());
            for s in 0..n {
                for t in inputs {
                    out.extend_from_slice(t.row(s));
                }
            }
            Ok((Tensor::new(out_shape, out)?, Cache::None))
        }
        LayerSpec::Add => {
            let mut out = x.clone();
            for t in &inputs[1..] {
                out.add_assign(t);
            }
            Ok((out, Cache::None))
        }
        LayerSpec::Upsample1d { factor } => {
            let l = x.shape()[2];
            let mut out = Vec::with_capacity(x.len() * factor);
            for row in x.data().chunks(l) {
                for &v in row {
                    out.extend(std::iter::repeat_n(v, *factor));
                }
            }
            Ok((Tensor::new(out_shape, out)?, Cache::None))
        }
    }
}

/// Returns gradients for each input and each parameter.
pub(crate) fn backward<S: Scalar>(
    spec: &LayerSpec,
    inputs: &[&Tensor<S>],
    output: &Tensor<S>,
    cache: &Cache<S>,
    params: &[&Tensor<S>],
    gy: &Tensor<S>,
) -> (Vec<Tensor<S>>, Vec<Tensor<S>>) {
    let x = inputs[0];
    let n = x.batch();
    match spec {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel,
        } => {
            let l = x.shape()[2];
            let w = params[0].data();
            let ck = in_channels * kernel;
            let mut gw = Tensor::zeros(params[0].shape());
            let mut gb = Tensor::zeros(params[1].shape());
            let mut gx = Tensor::zeros(x.shape());
            let mut cols = vec![S::zero(); ck * l];
            let mut gcols = vec![S::zero(); ck * l];
            let per_in = in_channels * l;
            let per_out = out_channels * l;
            for s in 0..n {
                let g = &gy.data()[s * per_out..(s + 1) * per_out];
                im2col(
                    &x.data()[s * per_in..(s + 1) * per_in],
                    *in_channels,
                    l,
                    *kernel,
                    &mut cols,
                );
                // dW += gy * cols^T
                S::gemm(
                    *out_channels,
                    l,
                    ck,
                    S::one(),
                    g,
                    l,
                    1,
                    &cols,
                    1,
                    l,
                    S::one(),
                    gw.data_mut(),
                    ck,
                    1,
                );
                for (co, row) in g.chunks(l).enumerate() {
                    gb.data_mut()[co] += row.iter().copied().sum::<S>();
                }
                // dcols = W^T * gy
                S::gemm(
                    ck,
                    *out_channels,
                    l,
                    S::one(),
                    w,
                    1,
                    ck,
                    g,
                    l,
                    1,
                    S::zero(),
                    &mut gcols,
                    l,
                    1,
                );
                col2im(
                    &gcols,
                    *in_channels,
                    l,
                    *kernel,
                    &mut gx.data_mut()[s * per_in..(s + 1) * per_in],
                );
            }
            (vec![gx], vec![gw, gb])
        }
        LayerSpec::BatchNorm { features } => {
            let Cache::BatchNorm {
                xhat,
                inv_std,
                batch_var,
                ..
            } = cache
            else {
                unreachable!("batch norm cache")
            };
            let train = !batch_var.is_empty();
            let inner = x.len() / (n * features);
            let gamma = params[0].data();
            let g = gy.data();
            let idx = |s: usize, c: usize, i: usize| (s * features + c) * inner + i;
            let mut ggamma = vec![S::zero(); *features];
            let mut gbeta = vec![S::zero(); *features];
            for c in 0..*features {
                for s in 0..n {
                    for i in 0..inner {
                        let j = idx(s, c, i);
                        ggamma[c] += g[j] * xhat[j];
                        gbeta[c] += g[j];
                    }
                }
            }
            let mut gx = vec![S::zero(); x.len()];
            let m = S::from_usize(n * inner).unwrap();
            for c in 0..*features {
                let k = gamma[c] * inv_std[c];
                for s in 0..n {
                    for i in 0..inner {
                        let j = idx(s, c, i);
                        gx[j] = if train {
                            k * (g[j] - gbeta[c] / m - xhat[j] * ggamma[c] / m)
                        } else {
                            k * g[j]
                        };
                    }
                }
            }
            (
                vec![Tensor::new(x.shape().to_vec(), gx).unwrap()],
                vec![
                    Tensor::new(vec![*features], ggamma).unwrap(),
                    Tensor::new(vec![*features], gbeta).unwrap(),
                ],
            )
        }
        LayerSpec::Relu => {
            let data = x
                .data()
                .iter()
                .zip(gy.data())
                .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
                .collect();
            (
                vec![Tensor::new(x.shape().to_vec(), data).unwrap()],
                Vec::new(),
            )
        }
        LayerSpec::Sigmoid => {
            let data = output
                .data()
                .iter()
                .zip(gy.data())
                .map(|(&y, &g)| g * y * (S::one() - y))
                .collect();
            (
                vec![Tensor::new(x.shape().to_vec(), data).unwrap()],
                Vec::new(),
            )
        }
        LayerSpec::MaxPool1d { .. } | LayerSpec::Spp { .. } => {
            let Cache::Argmax(arg) = cache else {
                unreachable!("pooling cache")
            };
            let (c, l) = (x.shape()[1], x.shape()[2]);
            let out_l = output.shape()[2];
            let mut gx = Tensor::zeros(x.shape());
            let gxd = gx.data_mut();
            for row in 0..n * c {
                for j in 0..out_l {
                    let o = row * out_l + j;
                    gxd[row * l + arg[o] as usize] += gy.data()[o];
                }
            }
            (vec![gx], Vec::new())
        }
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let w = params[0].data();
            let mut gw = Tensor::zeros(params[0].shape());
            let mut gb = Tensor::zeros(params[1].shape());
            let mut gx = Tensor::zeros(x.shape());
            // dW = gy^T * x
            S::gemm(
                *out_features,
                n,
                *in_features,
                S::one(),
                gy.data(),
                1,
                *out_features,
                x.data(),
                *in_features,
                1,
                S::zero(),
                gw.data_mut(),
                *in_features,
                1,
            );
            for row in gy.data().chunks(*out_features) {
                for (b, &g) in gb.data_mut().iter_mut().zip(row) {
                    *b += g;
                }
            }
            // dx = gy * W
            S::gemm(
                n,
                *out_features,
                *in_features,
                S::one(),
                gy.data(),
                *out_features,
                1,
                w,
                *in_features,
                1,
                S::zero(),
                gx.data_mut(),
                *in_features,
                1,
            );
            (vec![gx], vec![gw, gb])
        }
        LayerSpec::Dropout { .. } => match cache {
            Cache::Mask(mask) => {
                let data = gy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                (
                    vec![Tensor::new(x.shape().to_vec(), data).unwrap()],
                    Vec::new(),
                )
            }
            _ => (vec![gy.clone()], Vec::new()),
        },
        LayerSpec::Softmax => {
            let last = *x.shape().last().unwrap();
            let mut gx = gy.clone();
            for (grow, yrow) in gx
                .data_mut()
                .chunks_mut(last)
                .zip(output.data().chunks(last))
            {
                let dot: S = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                for (g, &y) in grow.iter_mut().zip(yrow) {
                    *g = y * (*g - dot);
                }
            }
            (vec![gx], Vec::new())
        }
        LayerSpec::Concat => {
            let mut grads: Vec<Vec<S>> =
                inputs.iter().map(|t| Vec::with_capacity(t.len())).collect();
            let mut offset = 0;
            for _ in 0..n {
                for (t, g) in inputs.iter().zip(grads.iter_mut()) {
                    let per = t.len() / n;
                    g.extend_from_slice(&gy.data()[offset..offset + per]);
                    offset += per;
                }
            }
            let grads = inputs
                .iter()
                .zip(grads)
                .map(|(t, g)| Tensor::new(t.shape().to_vec(), g).unwrap())
                .collect();
            (grads, Vec::new())
        }
        LayerSpec::Add => (inputs.iter().map(|_| gy.clone()).collect(), Vec::new()),
        LayerSpec::Upsample1d { factor } => {
            let data = gy
                .data()
                .chunks(*factor)
                .map(|c| c.iter().copied().sum())
                .collect();
            (
                vec![Tensor::new(x.shape().to_vec(), data).unwrap()],
                Vec::new(),
            )
        }
    }
}

pub(crate) fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// `cols[(ci * k + j) * l + t] = x[ci, t + j - k/2]`, zero outside the signal.
fn im2col<S: Scalar>(x: &[S], channels: usize, l: usize, k: usize, cols: &mut [S]) {
    let pad = k / 2;
    for ci in 0..channels {
        let src = &x[ci * l..(ci + 1) * l];
        for j in 0..k {
            let dst = &mut cols[(ci * k + j) * l..(ci * k + j + 1) * l];
            // output position t reads src[t + j - pad]
            let lo = pad.saturating_sub(j).min(l);
            let hi = (l + pad).saturating_sub(j).min(l);
            dst[..lo].iter_mut().for_each(|v| *v = S::zero());
            if lo < hi {
                dst[lo..hi].copy_from_slice(&src[lo + j - pad..hi + j - pad]);
            }
            dst[hi.max(lo)..].iter_mut().for_each(|v| *v = S::zero());
        }
    }
}

fn col2im<S: Scalar>(cols: &[S], channels: usize, l: usize, k: usize, gx: &mut [S]) {
    let pad = k / 2;
    for ci in 0..channels {
        let dst = &mut gx[ci * l..(ci + 1) * l];
        for j in 0..k {
            let src = &cols[(ci * k + j) * l..(ci * k + j + 1) * l];
            let lo = pad.saturating_sub(j).min(l);
            let hi = (l + pad).saturating_sub(j).min(l);
            if lo < hi {
                for (d, &s) in dst[lo + j - pad..hi + j - pad].iter_mut().zip(&src[lo..hi]) {
                    *d += s;
                }
            }
        }
    }
}

fn max_pool<S: Scalar>(
    x: &Tensor<S>,
    windows: &[usize],
    out_shape: &[usize],
) -> (Tensor<S>, Vec<u32>) {
    let l = x.shape()[2];
    let out_l = out_shape[2];
    let mut out = Tensor::zeros(out_shape);
    let mut arg = vec![0u32; out.len()];
    for (r, row) in x.data().chunks(l).enumerate() {
        let mut j = r * out_l;
        for &w in windows {
            for start in (0..l).step_by(w) {
                let mut best = start;
                for i in start + 1..start + w {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.data_mut()[j] = row[best];
                arg[j] = best as u32;
                j += 1;
            }
        }
    }
    (out, arg)
}

pub(crate) fn dropout_seed(base: u64, node: usize) -> u64 {
    base ^ (node as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
