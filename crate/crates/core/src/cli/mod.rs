//! The `pulsegate` command line: one subcommand per pipeline stage, a TOML
//! run configuration, and a JSON run manifest next to every output.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use serde::Serialize;

use crate::artifact::{self, RunManifest, Versions};
use crate::beats::{self, Heartbeat};
use crate::error::{Error, Result};
use crate::identify::{self, IdentifyModel, SplitPlan};
use crate::report::{self, MetricsReport};
use crate::signal::{CorpusManifest, EcgRecord, ManifestEntry};
use crate::train::TrainConfig;

mod args;
mod commands;
mod config;

use commands::*;

pub use args::*;
pub use config::*;

// ---------------------------------------------------------------------------
// Entry points

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures print one `error:` line to stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind::*;
            if matches!(e.kind(), DisplayHelp | DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", first.trim());
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', "; "));
            1
        }
    }
}

pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| Error::invalid(e.to_string().lines().next().unwrap_or("").to_string()))?;
    run(cli)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, cfg.seed, env.as_deref())?;
    cfg.seed = Some(seed);
    cli.command.apply(&mut cfg);
    let mut ctx = Ctx {
        command: cli.command.name(),
        hash: cfg.hash(),
        seed,
        cfg,
        start: Instant::now(),
        inputs: cli.config.iter().cloned().collect(),
        outputs: Vec::new(),
        summary: serde_json::Map::new(),
        manifest: PathBuf::new(),
    };
    match &cli.command {
        Command::Synth(a) => synth(&mut ctx, a),
        Command::Ingest(a) => ingest(&mut ctx, a),
        Command::TrainDetector(a) => train_detector(&mut ctx, a),
        Command::Detect(a) => detect(&mut ctx, a),
        Command::Segment(a) => segment(&mut ctx, a),
        Command::TrainId(a) => train_id(&mut ctx, a),
        Command::Identify(a) => identify_cmd(&mut ctx, a),
        Command::CrossSession(a) => cross_session(&mut ctx, a),
        Command::TrainSiamese(a) => train_siamese(&mut ctx, a),
        Command::Enroll(a) => enroll(&mut ctx, a),
        Command::Verify(a) => verify_cmd(&mut ctx, a),
        Command::Evaluate(a) => evaluate(&mut ctx, a),
        Command::Report(a) => report_cmd(&mut ctx, a),
    }?;
    ctx.finish()
}

// ---------------------------------------------------------------------------
// Shared plumbing

struct Ctx {
    command: &'static str,
    cfg: RunConfig,
    hash: String,
    seed: u64,
    start: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    summary: serde_json::Map<String, serde_json::Value>,
    manifest: PathBuf,
}

impl Ctx {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(
            key.to_string(),
            serde_json::to_value(value).expect("summary value serializes"),
        );
    }

    /// Output directory: created, and the manifest goes inside it.
    fn out_dir(&mut self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.manifest = dir.join("run.json");
        Ok(())
    }

    /// Output file: parent created, the manifest goes to `<file>.run.json`.
    fn out_file(&mut self, file: &Path) -> Result<()> {
        if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.manifest = suffixed(file, ".run.json");
        Ok(())
    }

    fn write(&mut self, path: PathBuf, text: &str) -> Result<()> {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        self.output(path);
        Ok(())
    }

    fn stamped_csv(&mut self, path: PathBuf, body: &str) -> Result<()> {
        let text = artifact::hash_comment(&self.hash) + body;
        self.write(path, &text)
    }

    fn metrics(&self) -> MetricsReport {
        MetricsReport::new(self.command, &self.hash, self.seed)
    }

    fn save_metrics(&mut self, m: &MetricsReport, dir: &Path) -> Result<()> {
        let path = dir.join("metrics.json");
        m.save(&path)?;
        self.output(path);
        if !m.curves.is_empty() {
            for p in report::write_plots(&m.curves, dir)? {
                self.output(p);
            }
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            inputs: self.inputs,
            outputs: self.outputs,
            config_hash: self.hash,
            seed: self.seed,
            config: serde_json::to_value(&self.cfg).expect("config serializes"),
            versions: Versions::default(),
            wall_time_s: self.start.elapsed().as_secs_f64(),
            summary: serde_json::Value::Object(self.summary),
        };
        manifest.save(&self.manifest)
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn train_config(epochs: usize, batch_size: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        learning_rate,
        seed,
        patience: None,
    }
}

fn load_corpus(ctx: &mut Ctx, dir: &Path) -> Result<(CorpusManifest, Vec<EcgRecord>)> {
    let path = dir.join("manifest.json");
    ctx.input(&path);
    let manifest = CorpusManifest::load(&path)?;
    let records = manifest.load_records(dir)?;
    if records.is_empty() {
        return Err(Error::invalid(format!(
            "{}: the corpus has no records",
            path.display()
        )));
    }
    Ok((manifest, records))
}

fn record_stem(entry: &ManifestEntry) -> String {
    entry
        .path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{}_s{}", entry.subject_id, entry.session_id))
}

fn load_beats(ctx: &mut Ctx, a: &BeatsArgs) -> Result<Vec<Heartbeat>> {
    ctx.input(&a.beats);
    let mut all = beats::load_beats(&a.beats)?;
    if !a.subjects.is_empty() {
        for s in &a.subjects {
            if !all.iter().any(|b| &b.subject_id == s) {
                return Err(Error::invalid(format!(
                    "subject `{s}` has no beats in {}",
                    a.beats.display()
                )));
            }
        }
        all.retain(|b| a.subjects.contains(&b.subject_id));
    }
    if all.is_empty() {
        return Err(Error::invalid(format!("{}: no beats", a.beats.display())));
    }
    Ok(all)
}

fn load_model(ctx: &mut Ctx, path: &Path) -> Result<IdentifyModel> {
    ctx.input(path);
    IdentifyModel::load(path)
}

fn split_plan(beats: &[Heartbeat], section: &IdentifySection, seed: u64) -> Result<SplitPlan> {
    match section.scheme {
        Scheme::KFold(k) => SplitPlan::stratified_kfold(beats, k, seed),
        Scheme::TrainValTest => SplitPlan::train_val_test(beats, 0.6, 0.2, seed),
        Scheme::CrossSession => {
            SplitPlan::cross_session(beats, section.sessions[0], section.sessions[1])
        }
    }
}

fn run_label(scheme: Scheme, i: usize) -> String {
    match scheme {
        Scheme::KFold(_) => format!("fold{}", i + 1),
        Scheme::TrainValTest => "test".into(),
        Scheme::CrossSession => "cross-session".into(),
    }
}

/// Fused accuracy for `k = 1..=max_k`, stopping at the first `k` that no
/// subject has enough beats for.
fn fusion_curve(
    model: &IdentifyModel,
    beats: &[&Heartbeat],
    max_k: usize,
) -> Result<Vec<identify::FusionResult>> {
    let mut out = Vec::new();
    for k in 1..=max_k.max(1) {
        match identify::fused_accuracy(model, beats, k) {
            Ok(r) => out.push(r),
            Err(Error::Invalid(_)) if k > 1 => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn history_csv(history: &[identify::EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for h in history {
        s.push_str(&format!(
            "{},{:.6},{:.6},{},{}\n",
            h.epoch,
            h.train_loss,
            h.train_accuracy,
            opt(h.val_loss),
            opt(h.val_accuracy)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), DEFAULT_SEED);
        assert!(resolve_seed(None, None, Some("x")).is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let p = Path::new("run.toml");
        let err = RunConfig::parse("seed = 3\n[detector]\nepoch = 5\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(RunConfig::parse("colour = 1\n", p).is_err());
        let cfg = RunConfig::parse("seed = 3\n[identify]\nscheme = \"10fold\"\n", p).unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.identify.scheme, Scheme::KFold(10));
        assert_eq!(cfg.identify.epochs, 500);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::parse(&cfg.to_toml(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn scheme_names() {
        for s in ["10fold", "3fold", "60-20-20", "cross-session"] {
            assert_eq!(s.parse::<Scheme>().unwrap().to_string(), s);
        }
        assert!("1fold".parse::<Scheme>().is_err());
        assert!("70-30".parse::<Scheme>().is_err());
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "pulsegate",
            "detect",
            "--model",
            "m",
            "--corpus",
            "c",
            "--out",
            "o",
            "--threshold",
            "0.7",
        ])
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.detector.min_distance = 80;
        cli.command.apply(&mut cfg);
        assert_eq!(cfg.detector.threshold, 0.7);
        assert_eq!(cfg.detector.min_distance, 80);
    }
}
