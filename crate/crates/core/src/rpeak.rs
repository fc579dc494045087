//! Learned R-peak detection: a small 1D encoder-decoder with deep
//! supervision that maps a signal window to a per-sample peak probability,
//! plus the post-processing and the match metrics.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pulsegate_tensor::{
    loss, AdamState, GraphBuilder, LossKind, Mode, ModelGraph, Scalar, Source, Tensor,
};

use crate::artifact;
use crate::error::{Error, Result};
use crate::identify::with_path;
use crate::signal::{zscore, EcgRecord, PIPELINE_FS};
use crate::train::{self, TrainConfig};

pub const WINDOW: usize = 1024;
pub const STEP: usize = 256;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MIN_DISTANCE: usize = 100;
pub const DEFAULT_TOLERANCE: usize = 37;

/// Auxiliary loss weights for the half- and quarter-resolution heads.
pub const DEFAULT_AUX_WEIGHTS: [f64; 2] = [0.5, 0.25];

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorWindow {
    pub start: usize,
    /// Z-scored signal slice.
    pub input: Vec<f32>,
    /// 1 at R-peak offsets, 0 elsewhere.
    pub target: Vec<f32>,
    /// Target subsampled by 2, 4, ... (max over each bin).
    pub aux_targets: Vec<Vec<f32>>,
}

/// `target` max-pooled by `factor`.
pub fn subsample_target(target: &[f32], factor: usize) -> Vec<f32> {
    target
        .chunks(factor)
        .map(|c| if c.iter().any(|&v| v > 0.0) { 1.0 } else { 0.0 })
        .collect()
}

fn normalized(slice: &[f64]) -> Vec<f32> {
    let (z, _) = zscore(slice).expect("window is non-empty");
    z.into_iter().map(|v| v as f32).collect()
}

/// Overlapping training windows of [`WINDOW`] samples at stride [`STEP`],
/// with auxiliary targets down to `WINDOW / 2^depth`.
pub fn make_windows(record: &EcgRecord, depth: usize) -> Result<Vec<DetectorWindow>> {
    let peaks = record.rpeaks.as_deref().ok_or_else(|| {
        Error::invalid(format!(
            "record {}/{} has no R-peak annotations",
            record.subject_id, record.session_id
        ))
    })?;
    if record.len() < WINDOW {
        return Err(Error::invalid(format!(
            "record of {} samples is shorter than one {WINDOW}-sample window",
            record.len()
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start + WINDOW <= record.len() {
        let mut target = vec![0.0f32; WINDOW];
        let lo = peaks.partition_point(|&p| p < start);
        for &p in peaks[lo..].iter().take_while(|&&p| p < start + WINDOW) {
            target[p - start] = 1.0;
        }
        let aux_targets = (1..=depth)
            .map(|d| subsample_target(&target, 1 << d))
            .collect();
        out.push(DetectorWindow {
            start,
            input: normalized(&record.samples[start..start + WINDOW]),
            target,
            aux_targets,
        });
        start += STEP;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Model

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorArch {
    /// Block widths of the three encoder levels.
    pub widths: [usize; 3],
    pub deep_supervision: bool,
}

impl Default for DetectorArch {
    fn default() -> Self {
        DetectorArch {
            widths: [16, 32, 64],
            deep_supervision: true,
        }
    }
}

/// Serial 3-tap convolutions of widths w/4, w/4, w/2, concatenated, plus a
/// projected residual.
fn multires<S: Scalar>(b: &mut GraphBuilder<S>, name: &str, x: Source, w: usize) -> Result<Source> {
    let mut h = x;
    let mut parts = Vec::new();
    for (i, f) in [w / 4, w / 4, w - w / 2].into_iter().enumerate() {
        let c = b.conv1d(&format!("{name}_conv{}", i + 1), h, f, 3)?;
        let c = b.batchnorm(&format!("{name}_bn{}", i + 1), c)?;
        h = b.relu(&format!("{name}_relu{}", i + 1), c)?;
        parts.push(h);
    }
    let cat = b.concat(&format!("{name}_concat"), &parts)?;
    let res = b.conv1d(&format!("{name}_residual"), x, w, 1)?;
    let res = b.batchnorm(&format!("{name}_residual_bn"), res)?;
    let sum = b.add(&format!("{name}_add"), &[cat, res])?;
    let sum = b.batchnorm(&format!("{name}_bn"), sum)?;
    Ok(b.relu(&format!("{name}_out"), sum)?)
}

fn head<S: Scalar>(b: &mut GraphBuilder<S>, name: &str, x: Source) -> Result<Source> {
    let c = b.conv1d(name, x, 1, 1)?;
    Ok(b.sigmoid(&format!("{name}_prob"), c)?)
}

/// Roughly one R peak per 400 samples.
const PEAK_PRIOR: f64 = 1.0 / 400.0;

/// Starts every head at the log-odds of the peak prior instead of 0.5.
fn set_head_bias<S: Scalar>(graph: &mut ModelGraph<S>) {
    let bias = (PEAK_PRIOR / (1.0 - PEAK_PRIOR)).ln();
    for name in ["head", "aux_half", "aux_quarter"] {
        if let Some(id) = graph.node_id(name) {
            let p = graph.node_params(id)[1];
            for v in graph.params_mut()[p].data_mut() {
                *v = S::lit(bias);
            }
        }
    }
}

/// Outputs: full-resolution probabilities, then (with deep supervision)
/// the half- and quarter-resolution heads.
pub fn build_detector<S: Scalar>(arch: &DetectorArch, seed: u64) -> Result<ModelGraph<S>> {
    if arch.widths.iter().any(|&w| w < 4 || w % 4 != 0) {
        return Err(Error::invalid(
            "detector block widths must be positive multiples of 4",
        ));
    }
    let [w1, w2, w3] = arch.widths;
    let mut b = GraphBuilder::<S>::new(seed);
    let x = b.input("window", &[1, WINDOW])?;
    let e1 = multires(&mut b, "enc1", x, w1)?;
    let p1 = b.max_pool("pool1", e1, 2)?;
    let e2 = multires(&mut b, "enc2", p1, w2)?;
    let p2 = b.max_pool("pool2", e2, 2)?;
    let e3 = multires(&mut b, "enc3", p2, w3)?;
    let u2 = b.upsample("up2", e3, 2)?;
    let c2 = b.concat("skip2", &[u2, e2])?;
    let d2 = multires(&mut b, "dec2", c2, w2)?;
    let u1 = b.upsample("up1", d2, 2)?;
    let c1 = b.concat("skip1", &[u1, e1])?;
    let d1 = multires(&mut b, "dec1", c1, w1)?;
    let main = head(&mut b, "head", d1)?;
    let outputs = if arch.deep_supervision {
        let half = head(&mut b, "aux_half", d2)?;
        let quarter = head(&mut b, "aux_quarter", e3)?;
        vec![main, half, quarter]
    } else {
        vec![main]
    };
    let mut graph = b.finish(&outputs)?;
    set_head_bias(&mut graph);
    Ok(graph)
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub graph: ModelGraph<f32>,
    pub arch: DetectorArch,
}

#[derive(Serialize, Deserialize)]
struct DetectorMeta {
    arch: DetectorArch,
    config_hash: Option<String>,
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Detector {
    pub fn new(arch: DetectorArch, seed: u64) -> Result<Self> {
        Ok(Detector {
            graph: build_detector(&arch, seed)?,
            arch,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<()> {
        let path = path.as_ref();
        self.graph.save(path).map_err(|e| with_path(path, e))?;
        artifact::write_json(
            &DetectorMeta {
                arch: self.arch.clone(),
                config_hash: config_hash.map(str::to_string),
            },
            meta_path(path),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: DetectorMeta = artifact::read_json(meta_path(path))?;
        let graph = ModelGraph::<f32>::load(path).map_err(|e| with_path(path, e))?;
        let expected = build_detector::<f32>(&meta.arch, 0)?;
        if graph.param_count() != expected.param_count()
            || graph.outputs().len() != expected.outputs().len()
        {
            return Err(Error::Format(format!(
                "{}: weights do not match the detector architecture in its sidecar",
                path.display()
            )));
        }
        Ok(Detector {
            graph,
            arch: meta.arch,
        })
    }

    /// Full-resolution probabilities for a batch of prepared windows.
    fn window_probs(&self, windows: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        let main = self.graph.with_outputs(&[self.graph.outputs()[0]])?;
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(32) {
            let x = Tensor::stack(chunk, &[1, WINDOW])?;
            let pass = main.forward(&x, Mode::Infer)?;
            let y = pass.output();
            out.extend((0..y.batch()).map(|i| y.row(i).to_vec()));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub train: TrainConfig,
    /// Weights of the half-, quarter-, ... resolution losses; empty turns
    /// deep supervision off.
    pub aux_weights: Vec<f64>,
    pub val_fraction: f64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            train: TrainConfig::new(100, 0),
            aux_weights: DEFAULT_AUX_WEIGHTS.to_vec(),
            val_fraction: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorEpoch {
    pub epoch: usize,
    /// Total weighted loss.
    pub train_loss: f64,
    /// Main-output binary cross-entropy.
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct DetectorTraining {
    pub detector: Detector,
    /// Main-output validation loss before the first update.
    pub baseline_val_loss: f64,
    pub history: Vec<DetectorEpoch>,
}

fn stack_rows<'a>(rows: impl Iterator<Item = &'a [f32]>, len: usize) -> Result<Tensor<f32>> {
    let rows: Vec<&[f32]> = rows.collect();
    Ok(Tensor::stack(&rows, &[1, len])?)
}

pub fn train_detector(
    records: &[EcgRecord],
    config: &DetectorTrainConfig,
) -> Result<DetectorTraining> {
    config.train.validate()?;
    if config.aux_weights.len() > 2 {
        return Err(Error::invalid("the detector has at most 2 auxiliary heads"));
    }
    if !(config.val_fraction > 0.0 && config.val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "validation fraction must be in (0, 1), got {}",
            config.val_fraction
        )));
    }
    let arch = DetectorArch {
        deep_supervision: !config.aux_weights.is_empty(),
        ..DetectorArch::default()
    };
    let depth = if arch.deep_supervision { 2 } else { 0 };
    let mut windows = Vec::new();
    for r in records {
        require_pipeline_rate(r)?;
        windows.extend(make_windows(r, depth)?);
    }
    if windows.len() < 100 {
        return Err(Error::invalid(format!(
            "detector training needs at least 100 windows, corpus yields {}",
            windows.len()
        )));
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut train::rng(config.train.seed, 11));
    }
    let n_val = ((windows.len() as f64) * config.val_fraction)
        .round()
        .max(1.0) as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let val: Vec<&DetectorWindow> = val_idx.iter().map(|&i| &windows[i]).collect();
    let trn: Vec<&DetectorWindow> = train_idx.iter().map(|&i| &windows[i]).collect();

    let mut detector = Detector::new(arch, config.train.seed)?;
    let mut adam = AdamState::for_graph(config.train.adam(), &detector.graph);
    let mut rng = train::rng(config.train.seed, 12);
    let baseline_val_loss = validation_loss(&detector, &val)?;
    let mut history = Vec::new();
    for epoch in 1..=config.train.epochs {
        let mut sum = 0.0;
        let mut seen = 0;
        for batch in train::epoch_batches(trn.len(), config.train.batch_size, &mut rng) {
            let ws: Vec<&DetectorWindow> = batch.iter().map(|&i| trn[i]).collect();
            let x = stack_rows(ws.iter().map(|w| w.input.as_slice()), WINDOW)?;
            let pass = detector
                .graph
                .forward(&x, Mode::Train { dropout_seed: 0 })?;
            let outs = pass.outputs();
            let target = stack_rows(ws.iter().map(|w| w.target.as_slice()), WINDOW)?;
            let main = loss(LossKind::BinaryCrossentropy, outs[0], &target)?;
            let mut total = main.value as f64;
            let mut grads = vec![main.grad];
            for (d, &weight) in config.aux_weights.iter().enumerate() {
                let len = WINDOW >> (d + 1);
                let t = stack_rows(ws.iter().map(|w| w.aux_targets[d].as_slice()), len)?;
                let mut l = loss(LossKind::BinaryCrossentropy, outs[d + 1], &t)?;
                total += weight * l.value as f64;
                l.grad.scale(weight as f32);
                grads.push(l.grad);
            }
            train::check_finite(epoch, total)?;
            let g = detector.graph.backward(&pass, &grads)?;
            adam.step(&mut detector.graph, &g)?;
            detector.graph.update_running_stats(&pass)?;
            sum += total * ws.len() as f64;
            seen += ws.len();
        }
        let val_loss = validation_loss(&detector, &val)?;
        train::check_finite(epoch, val_loss)?;
        history.push(DetectorEpoch {
            epoch,
            train_loss: sum / seen.max(1) as f64,
            val_loss,
        });
    }
    Ok(DetectorTraining {
        detector,
        baseline_val_loss,
        history,
    })
}

fn validation_loss(detector: &Detector, val: &[&DetectorWindow]) -> Result<f64> {
    let inputs: Vec<&[f32]> = val.iter().map(|w| w.input.as_slice()).collect();
    let probs = detector.window_probs(&inputs)?;
    let mut total = 0.0;
    for (p, w) in probs.iter().zip(val) {
        let pred = Tensor::new(vec![1, WINDOW], p.clone())?;
        let t = Tensor::new(vec![1, WINDOW], w.target.clone())?;
        total += loss(LossKind::BinaryCrossentropy, &pred, &t)?.value as f64;
    }
    Ok(total / val.len() as f64)
}

// ---------------------------------------------------------------------------
// Inference

fn require_pipeline_rate(record: &EcgRecord) -> Result<()> {
    if record.fs != PIPELINE_FS {
        return Err(Error::invalid(format!(
            "record {}/{} is at {} Hz; resample to {PIPELINE_FS} Hz first",
            record.subject_id, record.session_id, record.fs
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeakProbabilityMap {
    pub probs: Vec<f32>,
    pub threshold: f64,
}

/// Per-sample probabilities averaged over every window covering the
/// sample; the last window is aligned to the record end. Records shorter
/// than a window are zero-padded after normalization.
pub fn probability_map(detector: &Detector, record: &EcgRecord) -> Result<Vec<f32>> {
    require_pipeline_rate(record)?;
    let n = record.len();
    let mut starts: Vec<usize> = if n <= WINDOW {
        vec![0]
    } else {
        (0..=(n - WINDOW) / STEP).map(|i| i * STEP).collect()
    };
    if n > WINDOW && *starts.last().unwrap() != n - WINDOW {
        starts.push(n - WINDOW);
    }
    let inputs: Vec<Vec<f32>> = starts
        .iter()
        .map(|&s| {
            let end = (s + WINDOW).min(n);
            let mut v = normalized(&record.samples[s..end]);
            v.resize(WINDOW, 0.0);
            v
        })
        .collect();
    let refs: Vec<&[f32]> = inputs.iter().map(Vec::as_slice).collect();
    let probs = detector.window_probs(&refs)?;
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    for (&s, p) in starts.iter().zip(&probs) {
        for (j, &v) in p.iter().enumerate().take(n - s) {
            sum[s + j] += v as f64;
            count[s + j] += 1;
        }
    }
    Ok(sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| (s / c as f64) as f32)
        .collect())
}

/// Indices at or above `threshold`.
pub fn candidates(probs: &[f32], threshold: f64) -> Vec<usize> {
    (0..probs.len())
        .filter(|&i| probs[i] as f64 >= threshold)
        .collect()
}

/// Groups candidates that are closer than `min_distance` to their
/// neighbour and replaces each group by its median (lower median for
/// even sizes).
pub fn peaks_from_probabilities(probs: &[f32], threshold: f64, min_distance: usize) -> Vec<usize> {
    let c = candidates(probs, threshold);
    let mut peaks = Vec::new();
    let mut start = 0;
    for i in 1..=c.len() {
        if i == c.len() || c[i] - c[i - 1] >= min_distance.max(1) {
            if i > start {
                peaks.push(c[start + (i - 1 - start) / 2]);
            }
            start = i;
        }
    }
    peaks
}

pub fn detect_rpeaks(
    detector: &Detector,
    record: &EcgRecord,
    threshold: f64,
    min_distance: usize,
) -> Result<Vec<usize>> {
    let probs = probability_map(detector, record)?;
    Ok(peaks_from_probabilities(&probs, threshold, min_distance))
}

// ---------------------------------------------------------------------------
// Metrics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakMatchReport {
    pub detected: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub tolerance: usize,
    /// `|predicted - truth|` per matched pair, in samples.
    pub temporal_errors: Vec<f64>,
    pub temporal_error_mean: f64,
    pub temporal_error_std: f64,
    /// (predicted index, truth index) positions into the input lists.
    #[serde(skip)]
    pub matches: Vec<(usize, usize)>,
    #[serde(skip)]
    pub unmatched_predicted: Vec<usize>,
    #[serde(skip)]
    pub unmatched_truth: Vec<usize>,
}

impl PeakMatchReport {
    pub fn sensitivity(&self) -> f64 {
        let n = self.true_positives + self.false_negatives;
        if n == 0 {
            1.0
        } else {
            self.true_positives as f64 / n as f64
        }
    }

    pub fn merge(reports: &[PeakMatchReport]) -> PeakMatchReport {
        let errors: Vec<f64> = reports
            .iter()
            .flat_map(|r| r.temporal_errors.iter().copied())
            .collect();
        let (mean, std) = mean_std(&errors);
        PeakMatchReport {
            detected: reports.iter().map(|r| r.detected).sum(),
            true_positives: reports.iter().map(|r| r.true_positives).sum(),
            false_positives: reports.iter().map(|r| r.false_positives).sum(),
            false_negatives: reports.iter().map(|r| r.false_negatives).sum(),
            tolerance: reports.first().map_or(DEFAULT_TOLERANCE, |r| r.tolerance),
            temporal_errors: errors,
            temporal_error_mean: mean,
            temporal_error_std: std,
            matches: Vec::new(),
            unmatched_predicted: Vec::new(),
            unmatched_truth: Vec::new(),
        }
    }
}

/// Population mean and standard deviation; zeros for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Greedy matching: candidate pairs within `tolerance` are taken in order
/// of increasing distance, each prediction and truth used at most once.
pub fn evaluate_peaks(predicted: &[usize], truth: &[usize], tolerance: usize) -> PeakMatchReport {
    let mut pairs = Vec::new();
    for (i, &p) in predicted.iter().enumerate() {
        let lo = truth.partition_point(|&t| t + tolerance < p);
        for (j, &t) in truth.iter().enumerate().skip(lo) {
            if t > p + tolerance {
                break;
            }
            pairs.push((p.abs_diff(t), i, j));
        }
    }
    pairs.sort_unstable();
    let mut used_p = vec![false; predicted.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matches = Vec::new();
    for (_, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            matches.push((i, j));
        }
    }
    matches.sort_unstable();
    let temporal_errors: Vec<f64> = matches
        .iter()
        .map(|&(i, j)| predicted[i].abs_diff(truth[j]) as f64)
        .collect();
    let (mean, std) = mean_std(&temporal_errors);
    let unmatched_predicted: Vec<usize> = (0..predicted.len()).filter(|&i| !used_p[i]).collect();
    let unmatched_truth: Vec<usize> = (0..truth.len()).filter(|&j| !used_t[j]).collect();
    PeakMatchReport {
        detected: predicted.len(),
        true_positives: matches.len(),
        false_positives: unmatched_predicted.len(),
        false_negatives: unmatched_truth.len(),
        tolerance,
        temporal_errors,
        temporal_error_mean: mean,
        temporal_error_std: std,
        matches,
        unmatched_predicted,
        unmatched_truth,
    }
}
