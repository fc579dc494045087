//! Identity verification over frozen embeddings: pair features, SMOTE
//! balancing, the Siamese head, enrollment templates, scoring backends and
//! FAR/FRR/EER evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use pulsegate_tensor::{loss, AdamState, GraphBuilder, LossKind, Mode, ModelGraph, Scalar, Tensor};

use crate::artifact;
use crate::beats::Heartbeat;
use crate::error::{Error, Result};
use crate::identify::{with_path, IdentifyModel, EMBED_DIM};
use crate::train::{self, TrainConfig};

pub const DEFAULT_SMOTE_RATIO: f64 = 21.5;
pub const DEFAULT_SMOTE_K: usize = 5;
pub const DEFAULT_ENROLL_FRACTION: f64 = 0.4;
pub const SWEEP_RESOLUTION: f64 = 1e-3;
const BRANCH_UNITS: usize = 32;

fn check_pair(u: &[f32], v: &[f32]) -> Result<()> {
    if u.len() != v.len() {
        return Err(Error::invalid(format!(
            "embedding lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    Ok(())
}

pub fn squared_difference(u: &[f32], v: &[f32]) -> Result<Vec<f32>> {
    check_pair(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| (b - a) * (b - a)).collect())
}

pub fn product_proximity(u: &[f32], v: &[f32]) -> Result<Vec<f32>> {
    check_pair(u, v)?;
    Ok(u.iter().zip(v).map(|(a, b)| a * b).collect())
}

/// Squared difference followed by product proximity.
pub fn combined_metric(u: &[f32], v: &[f32]) -> Result<Vec<f32>> {
    let mut out = squared_difference(u, v)?;
    out.extend(product_proximity(u, v)?);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Siamese head

pub fn build_head<S: Scalar>(dim: usize, seed: u64) -> Result<ModelGraph<S>> {
    let mut b = GraphBuilder::<S>::new(seed);
    let sq = b.input("squared_difference", &[dim])?;
    let pp = b.input("product_proximity", &[dim])?;
    let cm = b.input("combined", &[2 * dim])?;
    let mut branches = Vec::new();
    for (name, x) in [("sq", sq), ("pp", pp), ("cm", cm)] {
        let d = b.dense(&format!("{name}_dense"), x, BRANCH_UNITS)?;
        branches.push(b.relu(&format!("{name}_relu"), d)?);
    }
    let merged = b.concat("merge", &branches)?;
    let out = b.dense("out", merged, 1)?;
    let out = b.sigmoid("out_prob", out)?;
    Ok(b.finish(&[out])?)
}

#[derive(Clone, Debug)]
pub struct SiameseHead {
    pub graph: ModelGraph<f32>,
}

fn feature_tensors(pairs: &[(&[f32], &[f32])]) -> Result<[Tensor<f32>; 3]> {
    let dim = pairs.first().map_or(0, |p| p.0.len());
    let mut sq = Vec::with_capacity(pairs.len() * dim);
    let mut pp = Vec::with_capacity(pairs.len() * dim);
    let mut cm = Vec::with_capacity(pairs.len() * dim * 2);
    for (u, v) in pairs {
        let s = squared_difference(u, v)?;
        let p = product_proximity(u, v)?;
        if s.len() != dim {
            return Err(Error::invalid("pairs differ in embedding width"));
        }
        cm.extend_from_slice(&s);
        cm.extend_from_slice(&p);
        sq.extend(s);
        pp.extend(p);
    }
    let n = pairs.len();
    Ok([
        Tensor::new(vec![n, dim], sq)?,
        Tensor::new(vec![n, dim], pp)?,
        Tensor::new(vec![n, 2 * dim], cm)?,
    ])
}

impl SiameseHead {
    pub fn new(seed: u64) -> Result<Self> {
        Ok(SiameseHead {
            graph: build_head(EMBED_DIM, seed)?,
        })
    }

    pub fn score_pairs(&self, pairs: &[(&[f32], &[f32])]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(256) {
            let [sq, pp, cm] = feature_tensors(chunk)?;
            let pass = self.graph.forward_multi(&[&sq, &pp, &cm], Mode::Infer)?;
            out.extend_from_slice(pass.output().data());
        }
        Ok(out)
    }

    pub fn score(&self, u: &[f32], v: &[f32]) -> Result<f32> {
        Ok(self.score_pairs(&[(u, v)])?[0])
    }

    /// Writes the weights and a `path.json` sidecar holding the config hash.
    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        self.graph.save(path).map_err(|e| with_path(path, e))?;
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        artifact::write_json(
            &serde_json::json!({ "config_hash": config_hash }),
            PathBuf::from(side),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let graph = ModelGraph::<f32>::load(path).map_err(|e| with_path(path, e))?;
        if graph.input_shapes() != build_head::<f32>(EMBED_DIM, 0)?.input_shapes() {
            return Err(Error::Format(format!(
                "{}: not a Siamese head",
                path.display()
            )));
        }
        Ok(SiameseHead { graph })
    }
}

// ---------------------------------------------------------------------------
// Pairs and SMOTE

#[derive(Clone, Debug, PartialEq)]
pub struct PairSample {
    /// Subject of the first embedding.
    pub subject: String,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    /// 1 for a match, 0 for a mismatch.
    pub label: f32,
}

fn pair_vector(p: &PairSample) -> Vec<f32> {
    p.u.iter().chain(&p.v).copied().collect()
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// Adds `round(ratio * m)` synthetic matched pairs for every subject with
/// `m` matched pairs, each interpolated between a pair and one of its `k`
/// nearest same-subject neighbours in the concatenated pair space. Output
/// is the matched pairs, then the synthetic ones, then the mismatched.
pub fn smote_pairs(
    matched: &[PairSample],
    mismatched: &[PairSample],
    ratio: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<PairSample>> {
    if !(ratio >= 0.0 && ratio.is_finite()) {
        return Err(Error::invalid(format!(
            "SMOTE ratio must be non-negative, got {ratio}"
        )));
    }
    let mut out = matched.to_vec();
    if ratio > 0.0 {
        let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, p) in matched.iter().enumerate() {
            by_subject.entry(&p.subject).or_default().push(i);
        }
        let mut rng = train::rng(seed, 21);
        for (subject, idx) in by_subject {
            if idx.len() < k + 1 {
                return Err(Error::Protocol(format!(
                    "subject `{subject}` has {} matched pairs, SMOTE with k={k} needs at least {}",
                    idx.len(),
                    k + 1
                )));
            }
            let points: Vec<Vec<f32>> = idx.iter().map(|&i| pair_vector(&matched[i])).collect();
            let neighbours: Vec<Vec<usize>> = (0..points.len())
                .map(|a| {
                    let mut d: Vec<(f64, usize)> = (0..points.len())
                        .filter(|&b| b != a)
                        .map(|b| (sq_dist(&points[a], &points[b]), b))
                        .collect();
                    d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                    d.into_iter().take(k).map(|(_, b)| b).collect()
                })
                .collect();
            let dim = matched[idx[0]].u.len();
            let count = (ratio * idx.len() as f64).round() as usize;
            for s in 0..count {
                let a = s % points.len();
                let nb = neighbours[a][rng.random_range(0..k)];
                let r: f32 = rng.random_range(0.0..=1.0);
                let x: Vec<f32> = points[a]
                    .iter()
                    .zip(&points[nb])
                    .map(|(&x, &n)| x + r * (n - x))
                    .collect();
                out.push(PairSample {
                    subject: subject.to_string(),
                    u: x[..dim].to_vec(),
                    v: x[dim..].to_vec(),
                    label: 1.0,
                });
            }
        }
    }
    out.extend_from_slice(mismatched);
    Ok(out)
}

/// Random matched pairs within each subject and mismatched pairs against
/// other subjects; mismatches outnumber matches by `1 + imbalance`.
pub fn sample_pairs(
    embeddings: &[(String, Vec<f32>)],
    matched_per_subject: usize,
    imbalance: f64,
    seed: u64,
) -> Result<(Vec<PairSample>, Vec<PairSample>)> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (s, _)) in embeddings.iter().enumerate() {
        by_subject.entry(s).or_default().push(i);
    }
    if by_subject.len() < 2 {
        return Err(Error::invalid("pair sampling needs at least 2 subjects"));
    }
    let mut rng = train::rng(seed, 22);
    let (mut matched, mut mismatched) = (Vec::new(), Vec::new());
    let n_mismatch = ((1.0 + imbalance) * matched_per_subject as f64).round() as usize;
    for (subject, idx) in &by_subject {
        if idx.len() < 2 {
            return Err(Error::Protocol(format!(
                "subject `{subject}` needs at least 2 beats to form matched pairs"
            )));
        }
        let mut all: Vec<(usize, usize)> = Vec::new();
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                all.push((idx[a], idx[b]));
            }
        }
        all.shuffle(&mut rng);
        for &(a, b) in all.iter().take(matched_per_subject) {
            matched.push(PairSample {
                subject: subject.to_string(),
                u: embeddings[a].1.clone(),
                v: embeddings[b].1.clone(),
                label: 1.0,
            });
        }
        let others: Vec<usize> = (0..embeddings.len())
            .filter(|&i| embeddings[i].0 != **subject)
            .collect();
        for _ in 0..n_mismatch {
            let a = idx[rng.random_range(0..idx.len())];
            let b = others[rng.random_range(0..others.len())];
            mismatched.push(PairSample {
                subject: subject.to_string(),
                u: embeddings[a].1.clone(),
                v: embeddings[b].1.clone(),
                label: 0.0,
            });
        }
    }
    Ok((matched, mismatched))
}

// ---------------------------------------------------------------------------
// Head training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseTrainConfig {
    pub train: TrainConfig,
    pub val_fraction: f64,
    pub smote_ratio: f64,
    pub smote_k: usize,
}

impl Default for SiameseTrainConfig {
    fn default() -> Self {
        SiameseTrainConfig {
            train: TrainConfig::new(75, 0),
            val_fraction: 0.2,
            smote_ratio: DEFAULT_SMOTE_RATIO,
            smote_k: DEFAULT_SMOTE_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiameseEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct SiameseTraining {
    pub head: SiameseHead,
    pub history: Vec<SiameseEpoch>,
    pub val_matched_mean: f64,
    pub val_mismatched_mean: f64,
}

/// Rejects pairs involving any subject the embedder was trained on.
pub fn check_disjoint<'a>(
    embedder: &IdentifyModel,
    subjects: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let known: BTreeSet<&str> = embedder.classes.iter().map(String::as_str).collect();
    let overlap: BTreeSet<&str> = subjects.into_iter().filter(|s| known.contains(s)).collect();
    if !overlap.is_empty() {
        let names: Vec<&str> = overlap.into_iter().collect();
        return Err(Error::Protocol(format!(
            "verification subjects overlap the embedder's training subjects: {}",
            names.join(", ")
        )));
    }
    Ok(())
}

/// Splits the pairs 80/20, balances the training matches with SMOTE and
/// fits the head with MSE against the 0/1 labels. The embedder is only
/// consulted for the disjoint-subject check.
pub fn train_siamese(
    embedder: &IdentifyModel,
    matched: &[PairSample],
    mismatched: &[PairSample],
    config: &SiameseTrainConfig,
) -> Result<SiameseTraining> {
    config.train.validate()?;
    check_disjoint(
        embedder,
        matched.iter().chain(mismatched).map(|p| p.subject.as_str()),
    )?;
    if matched.is_empty() || mismatched.is_empty() {
        return Err(Error::invalid(
            "Siamese training needs both matched and mismatched pairs",
        ));
    }
    let split = |pairs: &[PairSample], stream: u64| {
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        idx.shuffle(&mut train::rng(config.train.seed, stream));
        let n_val = (pairs.len() as f64 * config.val_fraction).round() as usize;
        let val: Vec<PairSample> = idx[..n_val].iter().map(|&i| pairs[i].clone()).collect();
        let trn: Vec<PairSample> = idx[n_val..].iter().map(|&i| pairs[i].clone()).collect();
        (trn, val)
    };
    let (m_train, m_val) = split(matched, 23);
    let (x_train, x_val) = split(mismatched, 24);
    let train_set = smote_pairs(
        &m_train,
        &x_train,
        config.smote_ratio,
        config.smote_k,
        config.train.seed,
    )?;
    let val_set: Vec<PairSample> = m_val.into_iter().chain(x_val).collect();

    let mut head = SiameseHead::new(config.train.seed)?;
    let mut adam = AdamState::for_graph(config.train.adam(), &head.graph);
    let mut rng = train::rng(config.train.seed, 25);
    let mut history = Vec::new();
    for epoch in 1..=config.train.epochs {
        let (mut sum, mut seen) = (0.0, 0);
        for batch in train::epoch_batches(train_set.len(), config.train.batch_size, &mut rng) {
            let pairs: Vec<(&[f32], &[f32])> = batch
                .iter()
                .map(|&i| (train_set[i].u.as_slice(), train_set[i].v.as_slice()))
                .collect();
            let [sq, pp, cm] = feature_tensors(&pairs)?;
            let target = Tensor::new(
                vec![batch.len(), 1],
                batch.iter().map(|&i| train_set[i].label).collect(),
            )?;
            let pass = head
                .graph
                .forward_multi(&[&sq, &pp, &cm], Mode::Train { dropout_seed: 0 })?;
            let l = loss(LossKind::MeanSquaredError, pass.output(), &target)?;
            train::check_finite(epoch, l.value as f64)?;
            let g = head.graph.backward(&pass, &[l.grad])?;
            adam.step(&mut head.graph, &g)?;
            sum += l.value as f64 * batch.len() as f64;
            seen += batch.len();
        }
        let val_loss = if val_set.is_empty() {
            0.0
        } else {
            let s = head.score_pairs(
                &val_set
                    .iter()
                    .map(|p| (p.u.as_slice(), p.v.as_slice()))
                    .collect::<Vec<_>>(),
            )?;
            s.iter()
                .zip(&val_set)
                .map(|(s, p)| ((s - p.label) as f64).powi(2))
                .sum::<f64>()
                / val_set.len() as f64
        };
        history.push(SiameseEpoch {
            epoch,
            train_loss: sum / seen.max(1) as f64,
            val_loss,
        });
    }
    let mean_of = |label: f32| -> Result<f64> {
        let pairs: Vec<(&[f32], &[f32])> = val_set
            .iter()
            .filter(|p| p.label == label)
            .map(|p| (p.u.as_slice(), p.v.as_slice()))
            .collect();
        if pairs.is_empty() {
            return Ok(f64::NAN);
        }
        let s = head.score_pairs(&pairs)?;
        Ok(s.iter().map(|&v| v as f64).sum::<f64>() / s.len() as f64)
    };
    Ok(SiameseTraining {
        val_matched_mean: mean_of(1.0)?,
        val_mismatched_mean: mean_of(0.0)?,
        head,
        history,
    })
}

// ---------------------------------------------------------------------------
// Templates and scoring

#[derive(Clone, Debug, PartialEq)]
pub struct Template {
    pub subject_id: String,
    pub centroid: Vec<f32>,
    pub count: usize,
}

/// Per-dimension mean. Values are summed in sorted order so the result
/// does not depend on enrollment order.
pub fn enroll(subject_id: &str, embeddings: &[&[f32]]) -> Result<Template> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::invalid(format!("no embeddings to enroll for `{subject_id}`")))?;
    let dim = first.len();
    if embeddings.iter().any(|e| e.len() != dim) {
        return Err(Error::invalid("enrollment embeddings differ in length"));
    }
    let n = embeddings.len() as f64;
    let centroid = (0..dim)
        .map(|d| {
            let mut col: Vec<f32> = embeddings.iter().map(|e| e[d]).collect();
            col.sort_by(f32::total_cmp);
            (col.iter().map(|&v| v as f64).sum::<f64>() / n) as f32
        })
        .collect();
    Ok(Template {
        subject_id: subject_id.to_string(),
        centroid,
        count: embeddings.len(),
    })
}

impl Template {
    /// `u32` id length, id bytes, `u32` count, `u32` width, then the
    /// centroid as little-endian f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.subject_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.subject_id.as_bytes());
        out.extend_from_slice(&(self.count as u32).to_le_bytes());
        out.extend_from_slice(&(self.centroid.len() as u32).to_le_bytes());
        for v in &self.centroid {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = || Error::Format("truncated or malformed template".into());
        let u32_at = |o: usize| -> Result<u32> {
            bytes
                .get(o..o + 4)
                .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .ok_or_else(bad)
        };
        let id_len = u32_at(0)? as usize;
        let id = bytes.get(4..4 + id_len).ok_or_else(bad)?;
        let subject_id = String::from_utf8(id.to_vec()).map_err(|_| bad())?;
        let count = u32_at(4 + id_len)? as usize;
        let dim = u32_at(8 + id_len)? as usize;
        let body = &bytes[12 + id_len..];
        if body.len() != dim * 4 {
            return Err(bad());
        }
        let centroid = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Template {
            subject_id,
            centroid,
            count,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Writes `<dir>/<subject>.tpl` per template and an `index.json` listing
/// the subjects and the config hash.
pub fn save_templates(
    templates: &[Template],
    dir: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in templates {
        if t.subject_id.contains(['/', '\\']) || t.subject_id.is_empty() {
            return Err(Error::invalid(format!(
                "subject id `{}` cannot name a file",
                t.subject_id
            )));
        }
        t.save(dir.join(format!("{}.tpl", t.subject_id)))?;
    }
    let subjects: Vec<&str> = templates.iter().map(|t| t.subject_id.as_str()).collect();
    artifact::write_json(
        &serde_json::json!({ "config_hash": config_hash, "subjects": subjects }),
        dir.join("index.json"),
    )
}

/// Every `*.tpl` in `dir`, sorted by subject id.
pub fn load_templates(dir: impl AsRef<Path>) -> Result<Vec<Template>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "tpl") {
            out.push(Template::load(&path)?);
        }
    }
    out.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Siamese,
    Cosine,
    Euclidean,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "siamese" => Ok(Backend::Siamese),
            "cosine" => Ok(Backend::Cosine),
            "euclidean" => Ok(Backend::Euclidean),
            other => Err(Error::invalid(format!(
                "unknown backend `{other}` (expected siamese, cosine or euclidean)"
            ))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Siamese => "siamese",
            Backend::Cosine => "cosine",
            Backend::Euclidean => "euclidean",
        })
    }
}

/// `(1 + cos) / 2`.
pub fn cosine_score(u: &[f32], v: &[f32]) -> Result<f64> {
    check_pair(u, v)?;
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    let nu: f64 = u.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::invalid(
            "cosine similarity is undefined for a zero vector",
        ));
    }
    Ok(((1.0 + dot / (nu * nv)) / 2.0).clamp(0.0, 1.0))
}

/// `1 / (1 + L2)`.
pub fn euclidean_score(u: &[f32], v: &[f32]) -> Result<f64> {
    check_pair(u, v)?;
    Ok(1.0 / (1.0 + sq_dist(u, v).sqrt()))
}

/// Similarity in [0, 1]; higher means more alike for every backend.
pub fn score(
    template: &Template,
    embedding: &[f32],
    backend: Backend,
    head: Option<&SiameseHead>,
) -> Result<f64> {
    Ok(score_many(template, &[embedding], backend, head)?[0])
}

pub fn score_many(
    template: &Template,
    embeddings: &[&[f32]],
    backend: Backend,
    head: Option<&SiameseHead>,
) -> Result<Vec<f64>> {
    match backend {
        Backend::Siamese => {
            let head =
                head.ok_or_else(|| Error::invalid("the siamese backend needs a trained head"))?;
            let pairs: Vec<(&[f32], &[f32])> = embeddings
                .iter()
                .map(|e| (template.centroid.as_slice(), *e))
                .collect();
            Ok(head
                .score_pairs(&pairs)?
                .into_iter()
                .map(|v| v as f64)
                .collect())
        }
        Backend::Cosine => embeddings
            .iter()
            .map(|e| cosine_score(&template.centroid, e))
            .collect(),
        Backend::Euclidean => embeddings
            .iter()
            .map(|e| euclidean_score(&template.centroid, e))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// FAR / FRR / EER

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EerCurve {
    pub thresholds: Vec<f64>,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
    pub eer: f64,
    pub eer_threshold: f64,
    pub auc: f64,
    pub n_genuine: usize,
    pub n_imposter: usize,
}

/// Sorted scores plus rate helpers.
struct Rates {
    genuine: Vec<f64>,
    imposter: Vec<f64>,
}

impl Rates {
    /// (FAR, FRR) at `th`: imposters at or above, genuines below.
    fn at(&self, th: f64) -> (f64, f64) {
        let fa = self.imposter.len() - self.imposter.partition_point(|&s| s < th);
        let fr = self.genuine.partition_point(|&s| s < th);
        (
            fa as f64 / self.imposter.len() as f64,
            fr as f64 / self.genuine.len() as f64,
        )
    }
}

/// Sweeps thresholds `0, res, 2 res, ..., 1`. The EER is linearly
/// interpolated between the last operating point with FAR > FRR and the
/// first with FAR <= FRR; the bracketing sweep cell is re-scanned at every
/// score inside it so that no operating point is skipped.
pub fn far_frr_eer(genuine: &[f64], imposter: &[f64], resolution: f64) -> Result<EerCurve> {
    if genuine.is_empty() || imposter.is_empty() {
        return Err(Error::invalid(
            "EER needs at least one genuine and one imposter score",
        ));
    }
    if !(resolution > 0.0 && resolution <= 0.5) {
        return Err(Error::invalid(format!(
            "sweep resolution must be in (0, 0.5], got {resolution}"
        )));
    }
    for &s in genuine.iter().chain(imposter) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::invalid(format!("score {s} outside [0, 1]")));
        }
    }
    let mut rates = Rates {
        genuine: genuine.to_vec(),
        imposter: imposter.to_vec(),
    };
    rates.genuine.sort_by(f64::total_cmp);
    rates.imposter.sort_by(f64::total_cmp);

    let steps = (1.0 / resolution).round() as usize;
    let thresholds: Vec<f64> = (0..=steps)
        .map(|i| (i as f64 * resolution).min(1.0))
        .collect();
    let (far, frr): (Vec<f64>, Vec<f64>) = thresholds.iter().map(|&t| rates.at(t)).unzip();

    let (eer, eer_threshold) = match (0..thresholds.len()).find(|&i| far[i] <= frr[i]) {
        None => {
            let last = thresholds.len() - 1;
            ((far[last] + frr[last]) / 2.0, thresholds[last])
        }
        Some(0) => (far[0], thresholds[0]),
        Some(i) => {
            let (lo, hi) = (thresholds[i - 1], thresholds[i]);
            let mut points: Vec<f64> = rates
                .genuine
                .iter()
                .chain(&rates.imposter)
                .copied()
                .filter(|&s| s > lo && s < hi)
                .collect();
            points.sort_by(f64::total_cmp);
            points.dedup();
            let mut prev = (lo, far[i - 1], frr[i - 1]);
            let mut found = None;
            for t in points.into_iter().chain([hi]) {
                let (fa, fr) = rates.at(t);
                if fa <= fr {
                    found = Some(interpolate(prev, (t, fa, fr)));
                    break;
                }
                prev = (t, fa, fr);
            }
            found.expect("the sweep point itself satisfies FAR <= FRR")
        }
    };

    // ROC as (FAR, TAR) from high to low threshold.
    let mut auc = 0.0;
    let mut prev = (0.0, 0.0);
    for i in (0..thresholds.len()).rev() {
        let p = (far[i], 1.0 - frr[i]);
        auc += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    auc += (1.0 - prev.0) * (1.0 + prev.1) / 2.0;

    Ok(EerCurve {
        thresholds,
        far,
        frr,
        eer,
        eer_threshold,
        auc,
        n_genuine: genuine.len(),
        n_imposter: imposter.len(),
    })
}

/// Crossing of FAR - FRR between operating points `a` (positive) and `b`
/// (non-positive).
fn interpolate(a: (f64, f64, f64), b: (f64, f64, f64)) -> (f64, f64) {
    let da = a.1 - a.2;
    let db = b.1 - b.2;
    if db == 0.0 {
        return (b.1, b.0);
    }
    let t = da / (da - db);
    (a.1 + t * (b.1 - a.1), a.0 + t * (b.0 - a.0))
}

impl EerCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("th,far,frr\n");
        for ((t, a), r) in self.thresholds.iter().zip(&self.far).zip(&self.frr) {
            s.push_str(&format!("{t:.3},{a:.6},{r:.6}\n"));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Experiment protocol

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationConfig {
    pub enroll_fraction: f64,
    pub k: usize,
    pub backend: Backend,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        VerificationConfig {
            enroll_fraction: DEFAULT_ENROLL_FRACTION,
            k: 1,
            backend: Backend::Siamese,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub backend: Backend,
    pub k: usize,
    pub enroll_fraction: f64,
    pub curve: EerCurve,
    pub genuine_scores: Vec<f64>,
    pub imposter_scores: Vec<f64>,
    /// Subjects with fewer than `k` evaluation beats.
    pub skipped_subjects: usize,
}

/// Beats grouped per subject in record order (session, then peak).
pub fn per_subject(beats: &[Heartbeat]) -> BTreeMap<String, Vec<&Heartbeat>> {
    let mut m: BTreeMap<String, Vec<&Heartbeat>> = BTreeMap::new();
    for b in beats {
        m.entry(b.subject_id.clone()).or_default().push(b);
    }
    for v in m.values_mut() {
        v.sort_by_key(|b| (b.session_id, b.peak));
    }
    m
}

/// Number of leading beats used for enrollment.
pub fn enroll_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).clamp(1, n)
}

/// Enrollment beats and embeddings of every subject, split by record order.
#[derive(Clone, Debug)]
pub struct EnrollmentSplit {
    pub templates: Vec<Template>,
    /// Per subject, the embeddings of the beats after the enrollment prefix.
    pub evaluation: BTreeMap<String, Vec<Vec<f32>>>,
    /// Per subject, the enrollment embeddings.
    pub enrollment: BTreeMap<String, Vec<Vec<f32>>>,
}

pub fn enrollment_split(
    embedder: &IdentifyModel,
    beats: &[Heartbeat],
    fraction: f64,
) -> Result<EnrollmentSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "enrollment fraction must be in (0, 1], got {fraction}"
        )));
    }
    let groups = per_subject(beats);
    check_disjoint(embedder, groups.keys().map(String::as_str))?;
    let mut split = EnrollmentSplit {
        templates: Vec::new(),
        evaluation: BTreeMap::new(),
        enrollment: BTreeMap::new(),
    };
    for (subject, bs) in groups {
        let rows: Vec<&[f32]> = bs.iter().map(|b| b.samples.as_slice()).collect();
        let mut emb = embedder.embed(&rows)?;
        let n_enroll = enroll_count(emb.len(), fraction);
        let eval = emb.split_off(n_enroll);
        let refs: Vec<&[f32]> = emb.iter().map(Vec::as_slice).collect();
        split.templates.push(enroll(&subject, &refs)?);
        split.enrollment.insert(subject.clone(), emb);
        split.evaluation.insert(subject, eval);
    }
    Ok(split)
}

/// Genuine trials against the own template and imposter trials against
/// every other template, each decision averaging `k` consecutive beat
/// scores.
pub fn verify_trials(
    templates: &[Template],
    evaluation: &BTreeMap<String, Vec<Vec<f32>>>,
    config: &VerificationConfig,
    head: Option<&SiameseHead>,
) -> Result<VerificationResult> {
    if config.k == 0 {
        return Err(Error::invalid("beats per decision must be at least 1"));
    }
    let (mut genuine, mut imposter) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for (subject, emb) in evaluation {
        if emb.len() < config.k {
            skipped += 1;
            continue;
        }
        let refs: Vec<&[f32]> = emb.iter().map(Vec::as_slice).collect();
        for t in templates {
            let s = score_many(t, &refs, config.backend, head)?;
            for run in s.chunks_exact(config.k) {
                let d = run.iter().sum::<f64>() / config.k as f64;
                if t.subject_id == *subject {
                    genuine.push(d);
                } else {
                    imposter.push(d);
                }
            }
        }
    }
    if genuine.is_empty() || imposter.is_empty() {
        return Err(Error::Protocol(
            "no evaluation trials: every subject's beats went to enrollment or too few beats per decision".into(),
        ));
    }
    Ok(VerificationResult {
        backend: config.backend,
        k: config.k,
        enroll_fraction: config.enroll_fraction,
        curve: far_frr_eer(&genuine, &imposter, SWEEP_RESOLUTION)?,
        genuine_scores: genuine,
        imposter_scores: imposter,
        skipped_subjects: skipped,
    })
}

pub fn verification_experiment(
    embedder: &IdentifyModel,
    beats: &[Heartbeat],
    config: &VerificationConfig,
    head: Option<&SiameseHead>,
) -> Result<VerificationResult> {
    let split = enrollment_split(embedder, beats, config.enroll_fraction)?;
    verify_trials(&split.templates, &split.evaluation, config, head)
}

/// Settings of the end-to-end disjoint-subject protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    /// Fraction of subjects used to train the embedder.
    pub embedder_fraction: f64,
    pub embedder: TrainConfig,
    pub head: SiameseTrainConfig,
    pub matched_per_subject: usize,
    pub verification: VerificationConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            embedder_fraction: 0.5,
            embedder: TrainConfig::new(100, 0),
            head: SiameseTrainConfig::default(),
            matched_per_subject: 40,
            verification: VerificationConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub embedder: IdentifyModel,
    pub head: SiameseTraining,
    pub split: EnrollmentSplit,
    pub embedder_subjects: Vec<String>,
    pub verification_subjects: Vec<String>,
    pub enroll_fraction: f64,
}

/// Subjects are shuffled and split: the first part trains the embedder,
/// the rest are enrolled. The head learns from pairs of enrollment
/// embeddings only, so evaluation beats stay unseen by every model.
pub fn disjoint_protocol(
    beats: &[Heartbeat],
    arch: &crate::identify::IdentifyArch,
    config: &ProtocolConfig,
) -> Result<ProtocolOutcome> {
    let mut subjects = crate::beats::subjects(beats);
    if subjects.len() < 4 {
        return Err(Error::invalid(
            "the verification protocol needs at least 4 subjects",
        ));
    }
    subjects.shuffle(&mut train::rng(config.embedder.seed, 31));
    let n_embed = ((subjects.len() as f64 * config.embedder_fraction).round() as usize)
        .clamp(2, subjects.len() - 2);
    let mut embedder_subjects = subjects[..n_embed].to_vec();
    let mut verification_subjects = subjects[n_embed..].to_vec();
    embedder_subjects.sort();
    verification_subjects.sort();

    let embed_beats: Vec<&Heartbeat> = beats
        .iter()
        .filter(|b| embedder_subjects.contains(&b.subject_id))
        .collect();
    let verify_beats: Vec<Heartbeat> = beats
        .iter()
        .filter(|b| verification_subjects.contains(&b.subject_id))
        .cloned()
        .collect();
    let mut embedder = IdentifyModel::new(
        embedder_subjects.clone(),
        arch.clone(),
        config.embedder.seed,
    )?;
    crate::identify::train_identify(&mut embedder, &embed_beats, &[], &config.embedder)?;

    let split = enrollment_split(
        &embedder,
        &verify_beats,
        config.verification.enroll_fraction,
    )?;
    let labelled: Vec<(String, Vec<f32>)> = split
        .enrollment
        .iter()
        .flat_map(|(s, es)| es.iter().map(move |e| (s.clone(), e.clone())))
        .collect();
    let (matched, mismatched) = sample_pairs(
        &labelled,
        config.matched_per_subject,
        config.head.smote_ratio,
        config.head.train.seed,
    )?;
    let head = train_siamese(&embedder, &matched, &mismatched, &config.head)?;
    Ok(ProtocolOutcome {
        embedder,
        head,
        split,
        embedder_subjects,
        verification_subjects,
        enroll_fraction: config.verification.enroll_fraction,
    })
}

impl ProtocolOutcome {
    pub fn evaluate(&self, backend: Backend, k: usize) -> Result<VerificationResult> {
        let config = VerificationConfig {
            backend,
            k,
            enroll_fraction: self.enroll_fraction,
        };
        verify_trials(
            &self.split.templates,
            &self.split.evaluation,
            &config,
            Some(&self.head.head),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_arithmetic() {
        let u = [0.5f32, 0.0];
        let v = [0.1f32, 1.0];
        let sq = squared_difference(&u, &v).unwrap();
        assert!((sq[0] - 0.16).abs() < 1e-7 && sq[1] == 1.0);
        let pp = product_proximity(&u, &v).unwrap();
        assert!((pp[0] - 0.05).abs() < 1e-7 && pp[1] == 0.0);
        let cm = combined_metric(&u, &v).unwrap();
        assert_eq!(cm.len(), 4);
        assert_eq!(&cm[..2], &sq[..]);
        assert_eq!(&cm[2..], &pp[..]);
        assert!(squared_difference(&u, &[1.0]).is_err());
        assert_eq!(
            product_proximity(&[1.0; 3], &[1.0; 3]).unwrap(),
            vec![1.0; 3]
        );
    }

    #[test]
    fn score_backends() {
        let t = Template {
            subject_id: "a".into(),
            centroid: vec![1.0, 0.0],
            count: 1,
        };
        assert!((score(&t, &[1.0, 0.0], Backend::Cosine, None).unwrap() - 1.0).abs() < 1e-12);
        assert!((score(&t, &[0.0, 1.0], Backend::Cosine, None).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(
            score(&t, &[1.0, 0.0], Backend::Euclidean, None).unwrap(),
            1.0
        );
        assert!(score(&t, &[0.0, 0.0], Backend::Cosine, None).is_err());
        assert!(score(&t, &[1.0, 0.0], Backend::Siamese, None).is_err());
        assert!("manhattan".parse::<Backend>().is_err());
    }

    #[test]
    fn enroll_examples() {
        let e = [0.2f32, 0.9, 0.4];
        assert_eq!(enroll("a", &[&e]).unwrap().centroid, e.to_vec());
        let f = [0.8f32, 0.1, 0.6];
        assert!(enroll("a", &[&e, &f])
            .unwrap()
            .centroid
            .iter()
            .all(|&v| (v - 0.5).abs() < 1e-7));
        assert!(enroll("a", &[]).is_err());
    }

    #[test]
    fn template_round_trip() {
        let t = Template {
            subject_id: "S007".into(),
            centroid: (0..128).map(|i| i as f32 / 128.0).collect(),
            count: 42,
        };
        assert_eq!(Template::from_bytes(&t.to_bytes()).unwrap(), t);
        assert!(Template::from_bytes(&t.to_bytes()[..50]).is_err());
    }

    #[test]
    fn eer_examples() {
        let c = far_frr_eer(&[0.9, 0.8], &[0.2, 0.3], 1e-3).unwrap();
        assert_eq!(c.eer, 0.0);
        assert!((c.auc - 1.0).abs() < 1e-12);
        let s: Vec<f64> = (0..50).map(|i| i as f64 / 50.0 + 0.003).collect();
        let c = far_frr_eer(&s, &s, 1e-3).unwrap();
        assert!((c.eer - 0.5).abs() <= 1e-3);
        assert!(far_frr_eer(&[1.2], &[0.1], 1e-3).is_err());
        assert!(far_frr_eer(&[], &[0.1], 1e-3).is_err());
    }

    #[test]
    fn smote_ratio_zero_and_duplicates() {
        let p = |x: f32| PairSample {
            subject: "a".into(),
            u: vec![x; 4],
            v: vec![1.0 - x; 4],
            label: 1.0,
        };
        let matched: Vec<PairSample> = (0..6).map(|_| p(0.3)).collect();
        assert_eq!(smote_pairs(&matched, &[], 0.0, 5, 1).unwrap(), matched);
        let out = smote_pairs(&matched, &[], 2.0, 5, 1).unwrap();
        assert_eq!(out.len(), 18);
        assert!(out.iter().all(|q| *q == p(0.3)));
        let err = smote_pairs(&matched[..3], &[], 1.0, 5, 1)
            .unwrap_err()
            .to_string();
        assert!(err.contains("`a`"), "{err}");
    }
}
