//! Closed-set identification: the multiresolution CNN, split plans,
//! training, confusion-matrix metrics, majority-vote fusion, cross-session
//! evaluation, embeddings and saliency maps.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pulsegate_tensor::{loss, AdamState, GraphBuilder, LossKind, Mode, ModelGraph, NodeId, Tensor};

use crate::artifact;
use crate::beats::{Heartbeat, BEAT_LEN};
use crate::error::{Error, Result};
use crate::train::{self, TrainConfig};

pub const EMBED_DIM: usize = 128;

/// Node whose inference output, passed through a sigmoid, is the embedding.
pub const EMBED_NODE: &str = "fc_bn";

const INFER_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyArch {
    /// Filters of the three serial convolutions.
    pub filters: [usize; 3],
    pub kernel: usize,
    pub spp_windows: Vec<usize>,
    pub embed_dim: usize,
    pub dropout: f64,
}

impl Default for IdentifyArch {
    fn default() -> Self {
        IdentifyArch {
            filters: [32, 64, 128],
            kernel: 15,
            spp_windows: vec![8, 16, 32],
            embed_dim: EMBED_DIM,
            dropout: 0.25,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IdentifyModel {
    pub graph: ModelGraph<f32>,
    /// Subject id of each output unit.
    pub classes: Vec<String>,
    pub arch: IdentifyArch,
}

/// Sidecar stored next to the weights.
#[derive(Serialize, Deserialize)]
struct ModelMeta {
    classes: Vec<String>,
    arch: IdentifyArch,
    config_hash: Option<String>,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn build_graph<S: pulsegate_tensor::Scalar>(
    n_classes: usize,
    arch: &IdentifyArch,
    seed: u64,
) -> Result<ModelGraph<S>> {
    let mut b = GraphBuilder::<S>::new(seed);
    let x = b.input("beat", &[1, BEAT_LEN])?;
    let mut h = x;
    let mut branches = Vec::new();
    for (i, &f) in arch.filters.iter().enumerate() {
        let c = b.conv1d(&format!("mrb_conv{}", i + 1), h, f, arch.kernel)?;
        let n = b.batchnorm(&format!("mrb_bn{}", i + 1), c)?;
        h = b.relu(&format!("mrb_relu{}", i + 1), n)?;
        branches.push(h);
    }
    let cat = b.concat("mrb_concat", &branches)?;
    let width: usize = arch.filters.iter().sum();
    let res = b.conv1d("mrb_residual", x, width, 1)?;
    let res = b.batchnorm("mrb_residual_bn", res)?;
    let sum = b.add("mrb_add", &[cat, res])?;
    let sum = b.batchnorm("mrb_bn", sum)?;
    let sum = b.relu("mrb_relu", sum)?;
    let pooled = b.spp("spp", sum, &arch.spp_windows)?;
    let fc = b.dense("fc", pooled, arch.embed_dim)?;
    let fc = b.batchnorm(EMBED_NODE, fc)?;
    let fc = b.relu("fc_relu", fc)?;
    let fc = b.dropout("dropout", fc, arch.dropout)?;
    let logits = b.dense("logits", fc, n_classes)?;
    let probs = b.softmax("softmax", logits)?;
    Ok(b.finish(&[probs])?)
}

/// Model with `n_persons` anonymous classes named `0..n`.
pub fn build_identify_model(n_persons: usize, seed: u64) -> Result<IdentifyModel> {
    IdentifyModel::new(
        (0..n_persons).map(|i| i.to_string()).collect(),
        IdentifyArch::default(),
        seed,
    )
}

impl IdentifyModel {
    pub fn new(classes: Vec<String>, arch: IdentifyArch, seed: u64) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid(format!(
                "identification needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut sorted = classes.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != classes.len() {
            return Err(Error::invalid("class names must be distinct"));
        }
        Ok(IdentifyModel {
            graph: build_graph(classes.len(), &arch, seed)?,
            classes,
            arch,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, subject: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == subject)
    }

    fn labels(&self, beats: &[&Heartbeat]) -> Result<Vec<usize>> {
        beats
            .iter()
            .map(|b| {
                self.class_index(&b.subject_id).ok_or_else(|| {
                    Error::invalid(format!(
                        "subject `{}` is not one of the model's classes",
                        b.subject_id
                    ))
                })
            })
            .collect()
    }

    pub fn embed_node(&self) -> NodeId {
        self.graph
            .node_id(EMBED_NODE)
            .expect("identification graph has an embedding node")
    }

    /// Softmax probabilities per beat.
    pub fn predict_proba(&self, beats: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(beats.len());
        for chunk in beats.chunks(INFER_CHUNK) {
            let x = Tensor::stack(chunk, &[1, BEAT_LEN])?;
            let pass = self.graph.forward(&x, Mode::Infer)?;
            let y = pass.output();
            out.extend((0..y.batch()).map(|i| y.row(i).to_vec()));
        }
        Ok(out)
    }

    pub fn predict(&self, beats: &[&[f32]]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(beats)?
            .iter()
            .map(|p| argmax(p))
            .collect())
    }

    /// Sigmoid of the dense-128 pre-activation; dropout and the softmax
    /// head are not evaluated.
    pub fn embed(&self, beats: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let tap = self.graph.with_outputs(&[self.embed_node()])?;
        let mut out = Vec::with_capacity(beats.len());
        for chunk in beats.chunks(INFER_CHUNK) {
            let x = Tensor::stack(chunk, &[1, BEAT_LEN])?;
            let pass = tap.forward(&x, Mode::Infer)?;
            let y = pass.output();
            out.extend((0..y.batch()).map(|i| y.row(i).iter().map(|&v| sigmoid(v)).collect()));
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        self.graph.save(path).map_err(|e| with_path(path, e))?;
        artifact::write_json(
            &ModelMeta {
                classes: self.classes.clone(),
                arch: self.arch.clone(),
                config_hash: config_hash.map(str::to_string),
            },
            meta_path(path),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: ModelMeta = artifact::read_json(meta_path(path))?;
        let graph = ModelGraph::<f32>::load(path).map_err(|e| with_path(path, e))?;
        let expected = build_graph::<f32>(meta.classes.len(), &meta.arch, 0)?;
        let same = graph.params().len() == expected.params().len()
            && graph
                .params()
                .iter()
                .zip(expected.params())
                .all(|(a, b)| a.shape() == b.shape());
        if !same {
            return Err(Error::Format(format!(
                "{}: weights do not match the identification architecture in its sidecar",
                path.display()
            )));
        }
        Ok(IdentifyModel {
            graph,
            classes: meta.classes,
            arch: meta.arch,
        })
    }
}

pub(crate) fn with_path(path: &Path, e: pulsegate_tensor::TensorError) -> Error {
    match e {
        pulsegate_tensor::TensorError::Io(source) => Error::io(path, source),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

/// Index of the largest value; the first one on ties.
pub fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Split plans

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SplitScheme {
    StratifiedKFold {
        k: usize,
    },
    TrainValTest {
        train: f64,
        val: f64,
    },
    CrossSession {
        train_session: u32,
        test_session: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    /// Fold index per beat for k-fold; partition code (0 train, 1 val,
    /// 2 test) otherwise.
    pub assignment: Vec<usize>,
}

impl SplitPlan {
    /// Per-subject shuffled round-robin, so each fold holds either
    /// floor or ceil of a subject's share.
    pub fn stratified_kfold(beats: &[Heartbeat], k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
        }
        let mut assignment = vec![0; beats.len()];
        let mut offset = 0;
        for (s, idx) in by_subject(beats).into_values().enumerate() {
            let idx = shuffled(idx, seed, s as u64);
            for (j, &i) in idx.iter().enumerate() {
                assignment[i] = (offset + j) % k;
            }
            offset = (offset + idx.len()) % k;
        }
        Ok(SplitPlan {
            scheme: SplitScheme::StratifiedKFold { k },
            assignment,
        })
    }

    /// Per-subject shuffled split with rounded partition sizes.
    pub fn train_val_test(beats: &[Heartbeat], train: f64, val: f64, seed: u64) -> Result<Self> {
        if !(train > 0.0 && val >= 0.0 && train + val < 1.0) {
            return Err(Error::invalid(format!(
                "invalid split fractions train={train} val={val}"
            )));
        }
        let mut assignment = vec![0; beats.len()];
        for (s, idx) in by_subject(beats).into_values().enumerate() {
            let idx = shuffled(idx, seed, s as u64);
            let n = idx.len() as f64;
            let n_train = (train * n).round() as usize;
            let n_val = ((val * n).round() as usize).min(idx.len() - n_train.min(idx.len()));
            for (j, &i) in idx.iter().enumerate() {
                assignment[i] = if j < n_train {
                    0
                } else if j < n_train + n_val {
                    1
                } else {
                    2
                };
            }
        }
        Ok(SplitPlan {
            scheme: SplitScheme::TrainValTest { train, val },
            assignment,
        })
    }

    /// Train on one session, test on another; beats of other sessions are
    /// left out.
    pub fn cross_session(
        beats: &[Heartbeat],
        train_session: u32,
        test_session: u32,
    ) -> Result<Self> {
        for (subject, idx) in by_subject(beats) {
            for s in [train_session, test_session] {
                if !idx.iter().any(|&i| beats[i].session_id == s) {
                    return Err(Error::Protocol(format!(
                        "subject `{subject}` has no beats in session {s}"
                    )));
                }
            }
        }
        let assignment = beats
            .iter()
            .map(|b| match b.session_id {
                s if s == train_session => 0,
                s if s == test_session => 2,
                _ => 3,
            })
            .collect();
        Ok(SplitPlan {
            scheme: SplitScheme::CrossSession {
                train_session,
                test_session,
            },
            assignment,
        })
    }

    /// One partition vector per run: `k` for k-fold, one otherwise.
    /// Beats excluded from a run are `None`.
    pub fn runs(&self) -> Vec<Vec<Option<Partition>>> {
        match self.scheme {
            SplitScheme::StratifiedKFold { k } => (0..k)
                .map(|f| {
                    self.assignment
                        .iter()
                        .map(|&a| {
                            Some(if a == f {
                                Partition::Test
                            } else {
                                Partition::Train
                            })
                        })
                        .collect()
                })
                .collect(),
            _ => vec![self
                .assignment
                .iter()
                .map(|&a| match a {
                    0 => Some(Partition::Train),
                    1 => Some(Partition::Val),
                    2 => Some(Partition::Test),
                    _ => None,
                })
                .collect()],
        }
    }
}

fn by_subject(beats: &[Heartbeat]) -> BTreeMap<String, Vec<usize>> {
    let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, b) in beats.iter().enumerate() {
        m.entry(b.subject_id.clone()).or_default().push(i);
    }
    m
}

fn shuffled(mut idx: Vec<usize>, seed: u64, stream: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    idx.shuffle(&mut train::rng(seed, stream));
    idx
}

/// Beats whose partition equals `which`, in input order.
pub fn select<'a>(
    beats: &'a [Heartbeat],
    run: &[Option<Partition>],
    which: Partition,
) -> Vec<&'a Heartbeat> {
    beats
        .iter()
        .zip(run)
        .filter(|(_, p)| **p == Some(which))
        .map(|(b, _)| b)
        .collect()
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub fn train_identify(
    model: &mut IdentifyModel,
    train_beats: &[&Heartbeat],
    val_beats: &[&Heartbeat],
    config: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    let labels = model.labels(train_beats)?;
    let mut present = vec![false; model.n_classes()];
    for &l in &labels {
        present[l] = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(Error::Protocol(format!(
            "class `{}` has no beats in the training partition",
            model.classes[missing]
        )));
    }
    let val_labels = model.labels(val_beats)?;
    let n_classes = model.n_classes();
    let mut adam = AdamState::for_graph(config.adam(), &model.graph);
    let mut rng = train::rng(config.seed, 1);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        for (bi, batch) in train::epoch_batches(train_beats.len(), config.batch_size, &mut rng)
            .into_iter()
            .enumerate()
        {
            let rows: Vec<&[f32]> = batch
                .iter()
                .map(|&i| train_beats[i].samples.as_slice())
                .collect();
            let x = Tensor::stack(&rows, &[1, BEAT_LEN])?;
            let target = one_hot(batch.iter().map(|&i| labels[i]), n_classes);
            let mode = Mode::Train {
                dropout_seed: train::step_seed(config.seed, epoch, bi),
            };
            let pass = model.graph.forward(&x, mode)?;
            let l = loss(LossKind::CategoricalCrossentropy, pass.output(), &target)?;
            let lv = l.value as f64;
            train::check_finite(epoch, lv)?;
            let y = pass.output();
            for (r, &i) in batch.iter().enumerate() {
                if argmax(y.row(r)) == labels[i] {
                    correct += 1;
                }
            }
            loss_sum += lv * batch.len() as f64;
            seen += batch.len();
            let grads = model.graph.backward(&pass, &[l.grad])?;
            adam.step(&mut model.graph, &grads)?;
            model.graph.update_running_stats(&pass)?;
        }
        let (val_loss, val_accuracy) = if val_beats.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_loss(model, val_beats, &val_labels)?;
            (Some(l), Some(a))
        };
        history.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_loss,
            val_accuracy,
        });
        if let (Some(patience), Some(v)) = (config.patience, val_loss) {
            if v < best_val {
                best_val = v;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    break;
                }
            }
        }
    }
    Ok(history)
}

fn one_hot(labels: impl Iterator<Item = usize>, n: usize) -> Tensor<f32> {
    let labels: Vec<usize> = labels.collect();
    let mut t = Tensor::zeros(&[labels.len(), n]);
    for (r, &l) in labels.iter().enumerate() {
        t.data_mut()[r * n + l] = 1.0;
    }
    t
}

fn evaluate_loss(
    model: &IdentifyModel,
    beats: &[&Heartbeat],
    labels: &[usize],
) -> Result<(f64, f64)> {
    let rows: Vec<&[f32]> = beats.iter().map(|b| b.samples.as_slice()).collect();
    let probs = model.predict_proba(&rows)?;
    let mut total = 0.0;
    let mut correct = 0;
    for (p, &l) in probs.iter().zip(labels) {
        total -= (p[l] as f64)
            .clamp(pulsegate_tensor::CLIP_EPSILON, 1.0)
            .ln();
        if argmax(p) == l {
            correct += 1;
        }
    }
    Ok((
        total / beats.len() as f64,
        correct as f64 / beats.len() as f64,
    ))
}

// ---------------------------------------------------------------------------
// Metrics

/// One-vs-rest counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassCounts {
    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    /// Zero when nothing was predicted for the class.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[truth][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Micro: correct over total.
    pub accuracy: f64,
    /// Macro averages over the classes that occur in truth or predictions.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; n_classes]; n_classes],
        }
    }

    pub fn from_predictions(
        n_classes: usize,
        truth: &[usize],
        predicted: &[usize],
    ) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::invalid("truth and prediction lengths differ"));
        }
        let mut m = ConfusionMatrix::new(n_classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::invalid(format!("label outside 0..{n_classes}")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn class_counts(&self, c: usize) -> ClassCounts {
        let tp = self.counts[c][c];
        let row: u64 = self.counts[c].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }

    pub fn metrics(&self) -> Metrics {
        let active: Vec<ClassCounts> = (0..self.n_classes())
            .map(|c| self.class_counts(c))
            .filter(|k| k.tp + k.fp + k.fn_ > 0)
            .collect();
        let mean = |f: fn(&ClassCounts) -> f64| {
            if active.is_empty() {
                0.0
            } else {
                active.iter().map(f).sum::<f64>() / active.len() as f64
            }
        };
        Metrics {
            accuracy: ratio(self.correct(), self.total()),
            precision: mean(ClassCounts::precision),
            recall: mean(ClassCounts::recall),
            f1: mean(ClassCounts::f1),
        }
    }

    /// Header row of class names, then one row per true class.
    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut s = String::from("truth\\predicted");
        for c in classes {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (c, row) in classes.iter().zip(&self.counts) {
            s.push_str(c);
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

pub fn evaluate_identify(model: &IdentifyModel, beats: &[&Heartbeat]) -> Result<Evaluation> {
    if beats.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty beat set"));
    }
    let truth = model.labels(beats)?;
    let rows: Vec<&[f32]> = beats.iter().map(|b| b.samples.as_slice()).collect();
    let predicted = model.predict(&rows)?;
    let confusion = ConfusionMatrix::from_predictions(model.n_classes(), &truth, &predicted)?;
    Ok(Evaluation {
        metrics: confusion.metrics(),
        confusion,
    })
}

// ---------------------------------------------------------------------------
// Fusion

/// Majority vote over per-beat argmaxes; ties go to the larger summed
/// probability, then to the lower class index.
pub fn fuse_votes(probs: &[Vec<f32>]) -> Result<usize> {
    let n = probs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("fusion needs at least one beat"))?;
    let mut votes = vec![0usize; n];
    let mut mass = vec![0.0f64; n];
    for p in probs {
        if p.len() != n {
            return Err(Error::invalid("probability vectors differ in length"));
        }
        votes[argmax(p)] += 1;
        for (m, &v) in mass.iter_mut().zip(p) {
            *m += v as f64;
        }
    }
    let mut best = 0;
    for c in 1..n {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    Ok(best)
}

/// Fused prediction from the first `k` of `consecutive` beats.
pub fn fuse_majority(model: &IdentifyModel, consecutive: &[&[f32]], k: usize) -> Result<usize> {
    if k == 0 || k > consecutive.len() {
        return Err(Error::invalid(format!(
            "fusion k must be in 1..={}, got {k}",
            consecutive.len()
        )));
    }
    fuse_votes(&model.predict_proba(&consecutive[..k])?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub k: usize,
    pub decisions: usize,
    pub accuracy: f64,
}

/// Accuracy of k-beat fused decisions over non-overlapping runs of
/// consecutive beats, grouped by subject and session in record order.
/// Incomplete trailing runs are not scored.
pub fn fused_accuracy(
    model: &IdentifyModel,
    beats: &[&Heartbeat],
    k: usize,
) -> Result<FusionResult> {
    if k == 0 {
        return Err(Error::invalid("fusion k must be at least 1"));
    }
    let rows: Vec<&[f32]> = beats.iter().map(|b| b.samples.as_slice()).collect();
    let probs = model.predict_proba(&rows)?;
    let truth = model.labels(beats)?;
    let mut groups: BTreeMap<(&str, u32), Vec<usize>> = BTreeMap::new();
    for (i, b) in beats.iter().enumerate() {
        groups
            .entry((&b.subject_id, b.session_id))
            .or_default()
            .push(i);
    }
    let (mut decisions, mut correct) = (0, 0);
    for idx in groups.values_mut() {
        idx.sort_by_key(|&i| beats[i].peak);
        for run in idx.chunks_exact(k) {
            let p: Vec<Vec<f32>> = run.iter().map(|&i| probs[i].clone()).collect();
            decisions += 1;
            if fuse_votes(&p)? == truth[run[0]] {
                correct += 1;
            }
        }
    }
    if decisions == 0 {
        return Err(Error::invalid(format!(
            "no subject has {k} consecutive evaluation beats"
        )));
    }
    Ok(FusionResult {
        k,
        decisions,
        accuracy: correct as f64 / decisions as f64,
    })
}

// ---------------------------------------------------------------------------
// Cross-session

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSessionResult {
    pub sessions: (u32, u32),
    /// Trained on the first session, tested on the second.
    pub forward_accuracy: f64,
    /// Trained on the second session, tested on the first.
    pub backward_accuracy: f64,
    pub forward_history: Vec<EpochMetrics>,
    pub backward_history: Vec<EpochMetrics>,
}

pub fn cross_session_evaluate(
    beats: &[Heartbeat],
    sessions: (u32, u32),
    arch: &IdentifyArch,
    config: &TrainConfig,
) -> Result<CrossSessionResult> {
    let classes = crate::beats::subjects(beats);
    let run = |a: u32, b: u32| -> Result<(f64, Vec<EpochMetrics>)> {
        let plan = SplitPlan::cross_session(beats, a, b)?;
        let part = &plan.runs()[0];
        let train_set = select(beats, part, Partition::Train);
        let test_set = select(beats, part, Partition::Test);
        let mut model = IdentifyModel::new(classes.clone(), arch.clone(), config.seed)?;
        let history = train_identify(&mut model, &train_set, &[], config)?;
        Ok((
            evaluate_identify(&model, &test_set)?.metrics.accuracy,
            history,
        ))
    };
    let (forward_accuracy, forward_history) = run(sessions.0, sessions.1)?;
    let (backward_accuracy, backward_history) = run(sessions.1, sessions.0)?;
    Ok(CrossSessionResult {
        sessions,
        forward_accuracy,
        backward_accuracy,
        forward_history,
        backward_history,
    })
}

// ---------------------------------------------------------------------------
// Saliency

/// `|dL/dx_i|` of the categorical cross-entropy at `label`, computed in
/// 64-bit inference mode.
pub fn saliency(model: &IdentifyModel, beat: &[f32], label: usize) -> Result<Vec<f64>> {
    saliency_graph(&model.graph.cast::<f64>(), beat, label, 1.0)
}

/// Saliency of `scale * L` on an explicit 64-bit graph.
pub fn saliency_graph(
    graph: &ModelGraph<f64>,
    beat: &[f32],
    label: usize,
    scale: f64,
) -> Result<Vec<f64>> {
    let x: Vec<f64> = beat.iter().map(|&v| v as f64).collect();
    let x = Tensor::new(vec![1, 1, beat.len()], x)?;
    let pass = graph.forward(&x, Mode::Infer)?;
    let probs = pass.output();
    let n = probs.len();
    if label >= n {
        return Err(Error::invalid(format!("label {label} outside 0..{n}")));
    }
    let mut target = Tensor::zeros(&[1, n]);
    target.data_mut()[label] = 1.0;
    let mut l = loss(LossKind::CategoricalCrossentropy, probs, &target)?;
    l.grad.scale(scale);
    let grads = graph.backward(&pass, &[l.grad])?;
    Ok(grads.input().data().iter().map(|g| g.abs()).collect())
}

/// Scalar loss used by [`saliency_graph`], exposed for derivative checks.
pub fn saliency_loss(graph: &ModelGraph<f64>, beat: &[f64], label: usize) -> Result<f64> {
    let x = Tensor::new(vec![1, 1, beat.len()], beat.to_vec())?;
    let pass = graph.forward(&x, Mode::Infer)?;
    let probs = pass.output();
    let mut target = Tensor::zeros(probs.shape());
    target.data_mut()[label] = 1.0;
    Ok(loss(LossKind::CategoricalCrossentropy, probs, &target)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beat(subject: &str, session: u32, peak: usize, v: f32) -> Heartbeat {
        Heartbeat {
            samples: (0..BEAT_LEN)
                .map(|i| ((i as f32) * 0.05 + v).sin())
                .collect(),
            subject_id: subject.into(),
            session_id: session,
            peak,
            degenerate: false,
        }
    }

    #[test]
    fn eq4_accuracy() {
        let k = ClassCounts {
            tp: 3,
            tn: 5,
            fp: 1,
            fn_: 1,
        };
        assert!((k.accuracy() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_predictions(3, &[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
        let r = m.metrics();
        assert_eq!(
            (r.accuracy, r.precision, r.recall, r.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn confusion_counts_are_consistent() {
        let m =
            ConfusionMatrix::from_predictions(3, &[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 0, 2]).unwrap();
        for c in 0..3 {
            let k = m.class_counts(c);
            assert_eq!(k.tp + k.tn + k.fp + k.fn_, 6);
        }
        assert_eq!(m.metrics().accuracy, 4.0 / 6.0);
    }

    #[test]
    fn single_predicted_class() {
        let m = ConfusionMatrix::from_predictions(3, &[0, 1, 2, 2], &[2, 2, 2, 2]).unwrap();
        let k = m.class_counts(2);
        assert_eq!((k.tp, k.fp, k.fn_, k.tn), (2, 2, 0, 0));
        assert_eq!(m.class_counts(0).tn, 3);
        assert_eq!(m.metrics().accuracy, 0.5);
    }

    #[test]
    fn fusion_votes_and_ties() {
        let a = vec![0.6, 0.4];
        let b = vec![0.3, 0.7];
        assert_eq!(fuse_votes(&[a.clone(), a.clone(), b.clone()]).unwrap(), 0);
        assert_eq!(fuse_votes(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap(), 0);
        assert_eq!(fuse_votes(&[vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap(), 1);
        assert_eq!(fuse_votes(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap(), 0);
    }

    #[test]
    fn kfold_is_stratified() {
        let beats: Vec<Heartbeat> = (0..3)
            .flat_map(|s| (0..23 + s * 7).map(move |i| beat(&format!("S{s}"), 1, i, 0.0)))
            .collect();
        let plan = SplitPlan::stratified_kfold(&beats, 10, 4).unwrap();
        for s in 0..3 {
            let name = format!("S{s}");
            let total = beats.iter().filter(|b| b.subject_id == name).count();
            for f in 0..10 {
                let n = beats
                    .iter()
                    .zip(&plan.assignment)
                    .filter(|(b, &a)| b.subject_id == name && a == f)
                    .count();
                assert!((n as f64 - total as f64 / 10.0).abs() < 1.0);
            }
        }
    }

    #[test]
    fn split_partitions_are_exhaustive() {
        let beats: Vec<Heartbeat> = (0..2)
            .flat_map(|s| (0..200).map(move |i| beat(&format!("S{s}"), 1, i, 0.0)))
            .collect();
        let plan = SplitPlan::train_val_test(&beats, 0.6, 0.2, 1).unwrap();
        let run = &plan.runs()[0];
        let counts = [Partition::Train, Partition::Val, Partition::Test]
            .map(|p| select(&beats, run, p).len());
        assert_eq!(counts, [240, 80, 80]);
    }

    #[test]
    fn cross_session_names_missing_subject() {
        let beats = vec![
            beat("A", 1, 0, 0.0),
            beat("A", 2, 0, 0.0),
            beat("B", 1, 0, 0.0),
        ];
        let err = SplitPlan::cross_session(&beats, 1, 2)
            .unwrap_err()
            .to_string();
        assert!(err.contains("`B`"), "{err}");
    }

    #[test]
    fn model_shapes() {
        let arch = IdentifyArch {
            filters: [4, 4, 8],
            ..IdentifyArch::default()
        };
        let m = IdentifyModel::new(vec!["a".into(), "b".into()], arch, 1).unwrap();
        let b = beat("a", 1, 0, 0.3);
        let p = m.predict_proba(&[&b.samples]).unwrap();
        assert_eq!(p[0].len(), 2);
        assert!((p[0].iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let e = m.embed(&[&b.samples]).unwrap();
        assert_eq!(e[0].len(), EMBED_DIM);
        assert!(e[0].iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn training_rejects_missing_class() {
        let arch = IdentifyArch {
            filters: [2, 2, 2],
            ..IdentifyArch::default()
        };
        let mut m = IdentifyModel::new(vec!["a".into(), "b".into()], arch, 1).unwrap();
        let beats = [beat("a", 1, 0, 0.0), beat("a", 1, 1, 0.5)];
        let refs: Vec<&Heartbeat> = beats.iter().collect();
        let err = train_identify(&mut m, &refs, &[], &TrainConfig::new(1, 0)).unwrap_err();
        assert!(matches!(err, Error::Protocol(_)));
    }
}
