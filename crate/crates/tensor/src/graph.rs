use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::layer::{self, Cache, LayerMode, LayerSpec, RunningStats, BN_MOMENTUM};
use crate::scalar::Scalar;
use crate::tensor::{validate_shape, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Where a node reads one of its operands from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Input(usize),
    Node(NodeId),
}

/// Dropout draws its masks from `dropout_seed`; batch norm uses batch
/// statistics in `Train` and running statistics in `Infer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { dropout_seed: u64 },
    Infer,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub name: String,
    pub spec: LayerSpec,
    pub inputs: Vec<Source>,
    pub(crate) params: Vec<usize>,
    pub(crate) stats: Option<usize>,
}

#[derive(Clone, Debug)]
pub(crate) struct Running<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

/// A fixed-topology network: nodes are stored in topological order and may
/// only read graph inputs or earlier nodes, so the graph is acyclic by
/// construction.
#[derive(Clone, Debug)]
pub struct ModelGraph<S = f32> {
    id: u64,
    pub(crate) input_names: Vec<String>,
    pub(crate) input_shapes: Vec<Vec<usize>>,
    pub(crate) nodes: Vec<Node>,
    pub(crate) outputs: Vec<NodeId>,
    pub(crate) params: Vec<Tensor<S>>,
    pub(crate) running: Vec<Running<S>>,
}

/// Activations recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct Pass<S = f32> {
    graph_id: u64,
    train: bool,
    inputs: Vec<Tensor<S>>,
    values: Vec<Tensor<S>>,
    caches: Vec<Cache<S>>,
    outputs: Vec<NodeId>,
}

impl<S: Scalar> Pass<S> {
    /// First declared graph output.
    pub fn output(&self) -> &Tensor<S> {
        &self.values[self.outputs[0].0]
    }

    pub fn outputs(&self) -> Vec<&Tensor<S>> {
        self.outputs.iter().map(|id| &self.values[id.0]).collect()
    }

    pub fn value(&self, node: NodeId) -> &Tensor<S> {
        &self.values[node.0]
    }

    pub fn is_train(&self) -> bool {
        self.train
    }
}

/// One gradient slot per parameter (same order and shapes as
/// [`ModelGraph::params`]) plus the gradient with respect to each graph input.
#[derive(Clone, Debug)]
pub struct Gradients<S = f32> {
    pub params: Vec<Tensor<S>>,
    pub inputs: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn input(&self) -> &Tensor<S> {
        &self.inputs[0]
    }
}

impl<S: Scalar> ModelGraph<S> {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn input_shapes(&self) -> &[Vec<usize>] {
        &self.input_shapes
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name).map(NodeId)
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.params
    }

    /// Parameter indices owned by a node, in declaration order.
    pub fn node_params(&self, node: NodeId) -> &[usize] {
        &self.nodes[node.0].params
    }

    /// Running mean and variance of a batch-norm node.
    pub fn running_stats(&self, node: NodeId) -> Option<(&[S], &[S])> {
        self.nodes[node.0].stats.map(|i| {
            (
                self.running[i].mean.as_slice(),
                self.running[i].var.as_slice(),
            )
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Same parameters at a different precision.
    pub fn cast<T: Scalar>(&self) -> ModelGraph<T> {
        let conv = |v: &[S]| {
            v.iter()
                .map(|x| T::from_f64(x.to_f64().unwrap()).unwrap())
                .collect()
        };
        ModelGraph {
            id: fresh_id(),
            input_names: self.input_names.clone(),
            input_shapes: self.input_shapes.clone(),
            nodes: self.nodes.clone(),
            outputs: self.outputs.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            running: self
                .running
                .iter()
                .map(|r| Running {
                    mean: conv(&r.mean),
                    var: conv(&r.var),
                })
                .collect(),
        }
    }

    /// Same parameters, with some outputs redirected. Used to tap an
    /// intermediate activation without running unneeded heads.
    pub fn with_outputs(&self, outputs: &[NodeId]) -> Result<ModelGraph<S>> {
        if outputs.is_empty() || outputs.iter().any(|o| o.0 >= self.nodes.len()) {
            return Err(TensorError::layer("graph", "invalid output selection"));
        }
        let last = outputs.iter().map(|o| o.0).max().unwrap();
        let mut g = self.clone();
        g.id = fresh_id();
        g.nodes.truncate(last + 1);
        g.outputs = outputs.to_vec();
        Ok(g)
    }

    pub fn forward(&self, input: &Tensor<S>, mode: Mode) -> Result<Pass<S>> {
        self.forward_multi(&[input], mode)
    }

    pub fn forward_multi(&self, inputs: &[&Tensor<S>], mode: Mode) -> Result<Pass<S>> {
        if inputs.len() != self.input_shapes.len() {
            return Err(TensorError::layer(
                "graph",
                format!(
                    "expects {} inputs, got {}",
                    self.input_shapes.len(),
                    inputs.len()
                ),
            ));
        }
        let batch = inputs[0].batch();
        for (i, (t, shape)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            let mut expected = vec![batch];
            expected.extend_from_slice(shape);
            if t.shape() != expected.as_slice() {
                return Err(TensorError::shape(
                    format!("graph input `{}`", self.input_names[i]),
                    &expected,
                    t.shape(),
                ));
            }
            if !t.is_finite() {
                return Err(TensorError::NonFinite(format!(
                    "graph input `{}`",
                    self.input_names[i]
                )));
            }
        }
        for (node, n) in self.nodes.iter().enumerate() {
            for &p in &n.params {
                if !self.params[p].is_finite() {
                    return Err(TensorError::NonFinite(format!(
                        "parameter {p} of node `{}`",
                        self.nodes[node].name
                    )));
                }
            }
        }
        let (train, seed) = match mode {
            Mode::Train { dropout_seed } => (true, dropout_seed),
            Mode::Infer => (false, 0),
        };
        let mut values: Vec<Tensor<S>> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let (out, cache) = {
                let args: Vec<&Tensor<S>> = node
                    .inputs
                    .iter()
                    .map(|s| match *s {
                        Source::Input(k) => inputs[k],
                        Source::Node(id) => &values[id.0],
                    })
                    .collect();
                let params: Vec<&Tensor<S>> =
                    node.params.iter().map(|&p| &self.params[p]).collect();
                let running = node.stats.map(|k| RunningStats {
                    mean: &self.running[k].mean,
                    var: &self.running[k].var,
                });
                let lm = if train {
                    LayerMode::Train {
                        seed: layer::dropout_seed(seed, i),
                    }
                } else {
                    LayerMode::Infer
                };
                layer::forward(&node.spec, &args, &params, running, &lm)?
            };
            values.push(out);
            caches.push(cache);
        }
        Ok(Pass {
            graph_id: self.id,
            train,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            values,
            caches,
            outputs: self.outputs.clone(),
        })
    }

    /// Reverse-mode sweep. `output_grads` holds one gradient per declared
    /// output, shaped like that output.
    pub fn backward(&self, pass: &Pass<S>, output_grads: &[Tensor<S>]) -> Result<Gradients<S>> {
        if pass.graph_id != self.id || pass.values.len() != self.nodes.len() {
            return Err(TensorError::MissingForward(
                "the pass was recorded on a different graph".into(),
            ));
        }
        if output_grads.len() != self.outputs.len() {
            return Err(TensorError::layer(
                "graph",
                format!(
                    "expects {} output gradients, got {}",
                    self.outputs.len(),
                    output_grads.len()
                ),
            ));
        }
        let mut node_grads: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        for (id, g) in self.outputs.iter().zip(output_grads) {
            let v = &pass.values[id.0];
            if g.shape() != v.shape() {
                return Err(TensorError::shape(
                    format!("gradient of output `{}`", self.nodes[id.0].name),
                    v.shape(),
                    g.shape(),
                ));
            }
            accumulate(&mut node_grads[id.0], g.clone());
        }
        let mut param_grads: Vec<Tensor<S>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let mut input_grads: Vec<Option<Tensor<S>>> = vec![None; pass.inputs.len()];

        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let args: Vec<&Tensor<S>> = node
                .inputs
                .iter()
                .map(|s| match *s {
                    Source::Input(k) => &pass.inputs[k],
                    Source::Node(id) => &pass.values[id.0],
                })
                .collect();
            let params: Vec<&Tensor<S>> = node.params.iter().map(|&p| &self.params[p]).collect();
            let (gx, gp) = layer::backward(
                &node.spec,
                &args,
                &pass.values[i],
                &pass.caches[i],
                &params,
                &gy,
            );
            for (&p, g) in node.params.iter().zip(gp) {
                param_grads[p].add_assign(&g);
            }
            for (src, g) in node.inputs.iter().zip(gx) {
                match *src {
                    Source::Input(k) => accumulate(&mut input_grads[k], g),
                    Source::Node(id) => accumulate(&mut node_grads[id.0], g),
                }
            }
        }
        let inputs = input_grads
            .into_iter()
            .zip(&pass.inputs)
            .map(|(g, t)| g.unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        Ok(Gradients {
            params: param_grads,
            inputs,
        })
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics used at inference.
    pub fn update_running_stats(&mut self, pass: &Pass<S>) -> Result<()> {
        if pass.graph_id != self.id {
            return Err(TensorError::MissingForward(
                "the pass was recorded on a different graph".into(),
            ));
        }
        if !pass.train {
            return Ok(());
        }
        let m = S::lit(BN_MOMENTUM);
        let keep = S::one() - m;
        for (node, cache) in self.nodes.iter().zip(&pass.caches) {
            if let (
                Some(k),
                Cache::BatchNorm {
                    batch_mean,
                    batch_var,
                    ..
                },
            ) = (node.stats, cache)
            {
                let r = &mut self.running[k];
                for c in 0..r.mean.len() {
                    r.mean[c] = keep * r.mean[c] + m * batch_mean[c];
                    r.var[c] = keep * r.var[c] + m * batch_var[c];
                }
            }
        }
        Ok(())
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Declares a [`ModelGraph`] node by node, checking shapes as it goes and
/// initializing parameters from a seeded generator: He-uniform weights,
/// zero biases, unit gamma and zero beta.
pub struct GraphBuilder<S = f32> {
    rng: ChaCha8Rng,
    input_names: Vec<String>,
    input_shapes: Vec<Vec<usize>>,
    nodes: Vec<Node>,
    shapes: Vec<Vec<usize>>,
    names: HashMap<String, NodeId>,
    params: Vec<Tensor<S>>,
    running: Vec<Running<S>>,
}

impl<S: Scalar> GraphBuilder<S> {
    pub fn new(seed: u64) -> Self {
        GraphBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            input_names: Vec::new(),
            input_shapes: Vec::new(),
            nodes: Vec::new(),
            shapes: Vec::new(),
            names: HashMap::new(),
            params: Vec::new(),
            running: Vec::new(),
        }
    }

    /// Declares a graph input with its per-sample shape.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<Source> {
        validate_shape(shape)?;
        self.input_names.push(name.to_string());
        self.input_shapes.push(shape.to_vec());
        Ok(Source::Input(self.input_shapes.len() - 1))
    }

    pub fn shape_of(&self, src: Source) -> &[usize] {
        match src {
            Source::Input(k) => &self.input_shapes[k],
            Source::Node(id) => &self.shapes[id.0],
        }
    }

    pub fn layer(&mut self, name: &str, spec: LayerSpec, inputs: &[Source]) -> Result<Source> {
        spec.validate()?;
        if self.names.contains_key(name) {
            return Err(TensorError::layer(name, "duplicate node name"));
        }
        for s in inputs {
            let ok = match *s {
                Source::Input(k) => k < self.input_shapes.len(),
                Source::Node(id) => id.0 < self.nodes.len(),
            };
            if !ok {
                return Err(TensorError::layer(
                    name,
                    "input refers to an undeclared node",
                ));
            }
        }
        let in_shapes: Vec<&[usize]> = inputs.iter().map(|&s| self.shape_of(s)).collect();
        let out_shape = spec
            .output_shape(&in_shapes)
            .map_err(|e| TensorError::layer(name, e.to_string()))?;

        let mut params = Vec::new();
        for (i, shape) in spec.param_shapes().into_iter().enumerate() {
            let t = match (&spec, i) {
                (
                    LayerSpec::Conv1d {
                        in_channels,
                        kernel,
                        ..
                    },
                    0,
                ) => self.he_uniform(&shape, in_channels * kernel),
                (LayerSpec::Dense { in_features, .. }, 0) => self.he_uniform(&shape, *in_features),
                (LayerSpec::BatchNorm { .. }, 0) => Tensor::full(&shape, S::one()),
                _ => Tensor::zeros(&shape),
            };
            self.params.push(t);
            params.push(self.params.len() - 1);
        }
        let stats = if let LayerSpec::BatchNorm { features } = spec {
            self.running.push(Running {
                mean: vec![S::zero(); features],
                var: vec![S::one(); features],
            });
            Some(self.running.len() - 1)
        } else {
            None
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            name: name.to_string(),
            spec,
            inputs: inputs.to_vec(),
            params,
            stats,
        });
        self.shapes.push(out_shape);
        self.names.insert(name.to_string(), id);
        Ok(Source::Node(id))
    }

    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor<S> {
        let limit = (6.0 / fan_in as f64).sqrt();
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| S::lit(rng.random_range(-limit..limit)))
    }

    pub fn conv1d(
        &mut self,
        name: &str,
        x: Source,
        filters: usize,
        kernel: usize,
    ) -> Result<Source> {
        let in_channels = self.shape_of(x).first().copied().unwrap_or(0);
        self.layer(
            name,
            LayerSpec::Conv1d {
                in_channels,
                out_channels: filters,
                kernel,
            },
            &[x],
        )
    }

    pub fn batchnorm(&mut self, name: &str, x: Source) -> Result<Source> {
        let features = self.shape_of(x)[0];
        self.layer(name, LayerSpec::BatchNorm { features }, &[x])
    }

    pub fn relu(&mut self, name: &str, x: Source) -> Result<Source> {
        self.layer(name, LayerSpec::Relu, &[x])
    }

    pub fn sigmoid(&mut self, name: &str, x: Source) -> Result<Source> {
        self.layer(name, LayerSpec::Sigmoid, &[x])
    }

    pub fn max_pool(&mut self, name: &str, x: Source, window: usize) -> Result<Source> {
        self.layer(name, LayerSpec::MaxPool1d { window }, &[x])
    }

    pub fn spp(&mut self, name: &str, x: Source, windows: &[usize]) -> Result<Source> {
        self.layer(
            name,
            LayerSpec::Spp {
                windows: windows.to_vec(),
            },
            &[x],
        )
    }

    pub fn dense(&mut self, name: &str, x: Source, units: usize) -> Result<Source> {
        let in_features = self.shape_of(x).iter().product();
        self.layer(
            name,
            LayerSpec::Dense {
                in_features,
                out_features: units,
            },
            &[x],
        )
    }

    pub fn dropout(&mut self, name: &str, x: Source, rate: f64) -> Result<Source> {
        self.layer(name, LayerSpec::Dropout { rate }, &[x])
    }

    pub fn softmax(&mut self, name: &str, x: Source) -> Result<Source> {
        self.layer(name, LayerSpec::Softmax, &[x])
    }

    pub fn concat(&mut self, name: &str, xs: &[Source]) -> Result<Source> {
        self.layer(name, LayerSpec::Concat, xs)
    }

    pub fn add(&mut self, name: &str, xs: &[Source]) -> Result<Source> {
        self.layer(name, LayerSpec::Add, xs)
    }

    pub fn upsample(&mut self, name: &str, x: Source, factor: usize) -> Result<Source> {
        self.layer(name, LayerSpec::Upsample1d { factor }, &[x])
    }

    pub fn finish(self, outputs: &[Source]) -> Result<ModelGraph<S>> {
        if self.input_shapes.is_empty() {
            return Err(TensorError::layer("graph", "no inputs declared"));
        }
        let mut ids = Vec::new();
        for o in outputs {
            match *o {
                Source::Node(id) => ids.push(id),
                Source::Input(_) => {
                    return Err(TensorError::layer("graph", "an output must be a node"))
                }
            }
        }
        if ids.is_empty() {
            return Err(TensorError::layer("graph", "no outputs declared"));
        }
        Ok(ModelGraph {
            id: fresh_id(),
            input_names: self.input_names,
            input_shapes: self.input_shapes,
            nodes: self.nodes,
            outputs: ids,
            params: self.params,
            running: self.running,
        })
    }
}

impl Source {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Source::Node(id) => Some(id),
            Source::Input(_) => None,
        }
    }
}

// Rebuilding from a file goes through the same checks as the builder.
pub(crate) fn assemble<S: Scalar>(
    input_names: Vec<String>,
    input_shapes: Vec<Vec<usize>>,
    nodes: Vec<(String, LayerSpec, Vec<Source>)>,
    outputs: Vec<NodeId>,
) -> Result<ModelGraph<S>> {
    let mut b = GraphBuilder::<S>::new(0);
    for (n, s) in input_names.iter().zip(&input_shapes) {
        b.input(n, s)?;
    }
    for (name, spec, inputs) in nodes {
        for s in &inputs {
            if let Source::Node(id) = s {
                if id.0 >= b.nodes.len() {
                    return Err(TensorError::Format(format!(
                        "node `{name}` reads a later node"
                    )));
                }
            }
        }
        b.layer(&name, spec, &inputs)?;
    }
    let outs: Vec<Source> = outputs.into_iter().map(Source::Node).collect();
    for o in &outs {
        if let Source::Node(id) = o {
            if id.0 >= b.nodes.len() {
                return Err(TensorError::Format(
                    "output refers to a missing node".into(),
                ));
            }
        }
    }
    b.finish(&outs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[3]).unwrap();
        let y = b.relu("r", x).unwrap();
        let g = b.finish(&[y]).unwrap();
        let p = g
            .forward(&t(&[1, 3], &[-1.0, 0.0, 2.0]), Mode::Infer)
            .unwrap();
        assert_eq!(p.output().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[3]).unwrap();
        let y = b.softmax("s", x).unwrap();
        let g = b.finish(&[y]).unwrap();
        let p = g
            .forward(&t(&[1, 3], &[0.0, 0.0, 0.0]), Mode::Infer)
            .unwrap();
        for v in p.output().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn shift_kernel_delays_signal_by_one() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[1, 8]).unwrap();
        let y = b.conv1d("c", x, 1, 3).unwrap();
        let mut g = b.finish(&[y]).unwrap();
        // kernel taps read x[t-1], x[t], x[t+1]
        g.params_mut()[0] = t(&[1, 1, 3], &[1.0, 0.0, 0.0]);
        let signal: Vec<f64> = (1..=8).map(|v| v as f64 * 0.5).collect();
        let p = g.forward(&t(&[1, 1, 8], &signal), Mode::Infer).unwrap();
        // direct convolution oracle
        let want: Vec<f64> = (0..8)
            .map(|i| if i == 0 { 0.0 } else { signal[i - 1] })
            .collect();
        assert_eq!(p.output().data(), want.as_slice());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[1, 8]).unwrap();
        let y = b.relu("r", x).unwrap();
        let g = b.finish(&[y]).unwrap();
        let err = g
            .forward(&t(&[1, 1, 4], &[0.0; 4]), Mode::Infer)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("[1, 1, 8]") && err.contains("[1, 1, 4]"),
            "{err}"
        );
    }

    #[test]
    fn non_finite_parameter_rejected() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[2]).unwrap();
        let y = b.dense("d", x, 2).unwrap();
        let mut g = b.finish(&[y]).unwrap();
        g.params_mut()[0].data_mut()[0] = f64::NAN;
        assert!(matches!(
            g.forward(&t(&[1, 2], &[1.0, 1.0]), Mode::Infer),
            Err(TensorError::NonFinite(_))
        ));
    }

    #[test]
    fn backward_rejects_foreign_pass() {
        let build = || {
            let mut b = GraphBuilder::<f64>::new(0);
            let x = b.input("x", &[2]).unwrap();
            let y = b.relu("r", x).unwrap();
            b.finish(&[y]).unwrap()
        };
        let (g1, g2) = (build(), build());
        let pass = g1.forward(&t(&[1, 2], &[1.0, 2.0]), Mode::Infer).unwrap();
        let grad = t(&[1, 2], &[1.0, 1.0]);
        assert!(matches!(
            g2.backward(&pass, &[grad]),
            Err(TensorError::MissingForward(_))
        ));
    }

    #[test]
    fn dense_weight_gradient_of_sum_is_outer_product() {
        let mut b = GraphBuilder::<f64>::new(3);
        let x = b.input("x", &[4]).unwrap();
        let y = b.dense("d", x, 3).unwrap();
        let g = b.finish(&[y]).unwrap();
        let pass = g
            .forward(&t(&[1, 4], &[1.0; 4]), Mode::Train { dropout_seed: 0 })
            .unwrap();
        let grads = g.backward(&pass, &[Tensor::full(&[1, 3], 1.0)]).unwrap();
        assert_eq!(grads.params[0].shape(), &[3, 4]);
        assert!(grads.params[0].data().iter().all(|&v| v == 1.0));
        assert!(grads.params[1].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn inference_dropout_passes_gradient_through() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[5]).unwrap();
        let y = b.dropout("dr", x, 0.5).unwrap();
        let g = b.finish(&[y]).unwrap();
        let pass = g
            .forward(&t(&[1, 5], &[1.0, -2.0, 3.0, 0.5, 0.0]), Mode::Infer)
            .unwrap();
        let gy = t(&[1, 5], &[0.3, -1.0, 2.0, 7.0, 1.5]);
        let grads = g.backward(&pass, &[gy.clone()]).unwrap();
        assert_eq!(grads.input(), &gy);
    }

    #[test]
    fn infer_forward_is_bit_deterministic() {
        let mut b = GraphBuilder::<f32>::new(11);
        let x = b.input("x", &[2, 16]).unwrap();
        let c = b.conv1d("c", x, 4, 5).unwrap();
        let n = b.batchnorm("bn", c).unwrap();
        let r = b.relu("r", n).unwrap();
        let p = b.spp("spp", r, &[2, 4]).unwrap();
        let d = b.dense("d", p, 3).unwrap();
        let s = b.softmax("s", d).unwrap();
        let g = b.finish(&[s]).unwrap();
        let input = Tensor::from_fn(&[3, 2, 16], |i| ((i * 7919) % 13) as f32 / 13.0 - 0.5);
        let a = g.forward(&input, Mode::Infer).unwrap();
        let b2 = g.forward(&input, Mode::Infer).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.output()), bits(b2.output()));
    }

    #[test]
    fn running_stats_follow_batches() {
        let mut b = GraphBuilder::<f64>::new(0);
        let x = b.input("x", &[1, 4]).unwrap();
        let y = b.batchnorm("bn", x).unwrap();
        let mut g = b.finish(&[y]).unwrap();
        let input = t(&[2, 1, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        for _ in 0..300 {
            let pass = g.forward(&input, Mode::Train { dropout_seed: 0 }).unwrap();
            g.update_running_stats(&pass).unwrap();
        }
        let (mean, var) = g.running_stats(NodeId(0)).unwrap();
        assert!((mean[0] - 4.5).abs() < 1e-9);
        assert!((var[0] - 6.0).abs() < 1e-9);
    }
}
