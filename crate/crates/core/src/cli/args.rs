//! Command-line arguments and how they override the run configuration.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::verify::Backend;

use super::config::*;

#[derive(Debug, Parser)]
#[command(
    name = "pulsegate",
    version,
    about = "ECG biometric identification and verification"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Convert a CSV or raw recording to the pipeline rate and add it to a corpus.
    Ingest(IngestArgs),
    TrainDetector(TrainDetectorArgs),
    /// Detect R-peaks in every corpus record.
    Detect(DetectArgs),
    /// Cut 256-sample beats around detected or annotated peaks.
    Segment(SegmentArgs),
    /// Train the identification network.
    TrainId(TrainIdArgs),
    /// Classify beats with a trained identification model.
    Identify(IdentifyArgs),
    /// Train on one session, test on the other, and back.
    CrossSession(CrossSessionArgs),
    /// Train the Siamese head on subjects unseen by the embedder.
    TrainSiamese(TrainSiameseArgs),
    /// Build per-subject templates from enrollment beats.
    Enroll(EnrollArgs),
    /// Score evaluation beats against templates and compute FAR/FRR/EER.
    Verify(VerifyArgs),
    /// Train and test the identification network under a split scheme.
    Evaluate(EvaluateArgs),
    /// Merge metrics files into one summary.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub beats: Option<usize>,
    #[arg(long)]
    pub sessions: Option<u32>,
    #[arg(long)]
    pub session_drift: Option<f64>,
    /// Noise standard deviation in mV for every subject.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long, default_value_t = 1)]
    pub session: u32,
    #[arg(long)]
    pub format: Option<InputFormat>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub gain: Option<f64>,
    /// Corpus directory; created or extended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainDetectorArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub no_deep_supervision: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub min_distance: Option<usize>,
    /// Matching tolerance in samples for annotated records.
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of `.peaks` files from `detect`; annotations are used otherwise.
    #[arg(long)]
    pub peaks: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BeatsArgs {
    #[arg(long)]
    pub beats: PathBuf,
    /// Comma-separated subject ids to keep.
    #[arg(long, value_delimiter = ',')]
    pub subjects: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainIdArgs {
    #[command(flatten)]
    pub beats: BeatsArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub patience: Option<usize>,
    /// `60-20-20`, `<k>fold` (fold 1 held out) or `cross-session`.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub beats: BeatsArgs,
    /// Split file written by `train-id`; without it every beat is scored.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub partition: String,
    #[arg(long)]
    pub fusion_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossSessionArgs {
    #[command(flatten)]
    pub beats: BeatsArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub sessions: Option<Vec<u32>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainSiameseArgs {
    #[arg(long)]
    pub embedder: PathBuf,
    #[command(flatten)]
    pub beats: BeatsArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub enroll_fraction: Option<f64>,
    #[arg(long)]
    pub matched_per_subject: Option<usize>,
    #[arg(long)]
    pub smote_ratio: Option<f64>,
    #[arg(long)]
    pub smote_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnrollArgs {
    #[arg(long)]
    pub embedder: PathBuf,
    #[command(flatten)]
    pub beats: BeatsArgs,
    #[arg(long)]
    pub enroll_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub embedder: PathBuf,
    #[arg(long)]
    pub templates: PathBuf,
    #[command(flatten)]
    pub beats: BeatsArgs,
    #[arg(long)]
    pub backend: Option<Backend>,
    /// Siamese head; required by the siamese backend.
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub fusion_k: Option<usize>,
    #[arg(long)]
    pub enroll_fraction: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub beats: BeatsArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub scheme: Option<Scheme>,
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub sessions: Option<Vec<u32>>,
    #[arg(long)]
    pub fusion_k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics JSON files and other stamped artifacts.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Combine inputs with differing config hashes.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl TrainArgs {
    fn apply(&self, epochs: &mut usize, batch: &mut usize, lr: &mut f64) {
        set(epochs, self.epochs);
        set(batch, self.batch_size);
        set(lr, self.learning_rate);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_sessions(slot: &mut [u32; 2], value: &Option<Vec<u32>>) {
    if let Some(v) = value {
        *slot = [v[0], v[1]];
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::TrainDetector(_) => "train-detector",
            Command::Detect(_) => "detect",
            Command::Segment(_) => "segment",
            Command::TrainId(_) => "train-id",
            Command::Identify(_) => "identify",
            Command::CrossSession(_) => "cross-session",
            Command::TrainSiamese(_) => "train-siamese",
            Command::Enroll(_) => "enroll",
            Command::Verify(_) => "verify",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
        }
    }

    /// Folds the command's flags into `cfg`.
    pub fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Synth(a) => {
                let s = &mut cfg.synth;
                set(&mut s.subjects, a.subjects);
                set(&mut s.beats, a.beats);
                set(&mut s.sessions, a.sessions);
                set(&mut s.session_drift, a.session_drift);
                if a.noise.is_some() {
                    s.noise_sigma_mv = a.noise;
                }
            }
            Command::Ingest(a) => {
                set(&mut cfg.ingest.format, a.format);
                if a.fs.is_some() {
                    cfg.ingest.fs = a.fs;
                }
                set(&mut cfg.ingest.gain, a.gain);
            }
            Command::TrainDetector(a) => {
                let d = &mut cfg.detector;
                a.train
                    .apply(&mut d.epochs, &mut d.batch_size, &mut d.learning_rate);
                if a.no_deep_supervision {
                    d.aux_weights.clear();
                }
            }
            Command::Detect(a) => {
                let d = &mut cfg.detector;
                set(&mut d.threshold, a.threshold);
                set(&mut d.min_distance, a.min_distance);
                set(&mut d.tolerance, a.tolerance);
            }
            Command::Segment(_) | Command::Report(_) => {}
            Command::TrainId(a) => {
                let i = &mut cfg.identify;
                a.train
                    .apply(&mut i.epochs, &mut i.batch_size, &mut i.learning_rate);
                if a.patience.is_some() {
                    i.patience = a.patience;
                }
                set(&mut i.scheme, a.scheme);
            }
            Command::Identify(a) => set(&mut cfg.identify.fusion_k, a.fusion_k),
            Command::CrossSession(a) => {
                let i = &mut cfg.identify;
                a.train
                    .apply(&mut i.epochs, &mut i.batch_size, &mut i.learning_rate);
                set_sessions(&mut i.sessions, &a.sessions);
            }
            Command::TrainSiamese(a) => {
                let v = &mut cfg.verify;
                a.train
                    .apply(&mut v.epochs, &mut v.batch_size, &mut v.learning_rate);
                set(&mut v.enroll_fraction, a.enroll_fraction);
                set(&mut v.matched_per_subject, a.matched_per_subject);
                set(&mut v.smote_ratio, a.smote_ratio);
                set(&mut v.smote_k, a.smote_k);
            }
            Command::Enroll(a) => set(&mut cfg.verify.enroll_fraction, a.enroll_fraction),
            Command::Verify(a) => {
                let v = &mut cfg.verify;
                set(&mut v.backend, a.backend);
                set(&mut v.fusion_k, a.fusion_k);
                set(&mut v.enroll_fraction, a.enroll_fraction);
            }
            Command::Evaluate(a) => {
                let i = &mut cfg.identify;
                a.train
                    .apply(&mut i.epochs, &mut i.batch_size, &mut i.learning_rate);
                set(&mut i.scheme, a.scheme);
                set_sessions(&mut i.sessions, &a.sessions);
                set(&mut i.fusion_k, a.fusion_k);
            }
        }
    }
}
