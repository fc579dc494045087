//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::artifact;
use crate::beats::{self, Heartbeat, BEAT_LEN};
use crate::error::{Error, Result};
use crate::identify::{self, IdentifyArch, IdentifyModel, Partition};
use crate::report::{self, Curve, MetricsReport, RunTable};
use crate::rpeak::{self, Detector, DetectorTrainConfig, PeakMatchReport};
use crate::signal::{self, CorpusManifest, ManifestEntry, SampleFormat, SynthConfig, PIPELINE_FS};
use crate::verify::{self, Backend, SiameseTrainConfig, VerificationConfig};

use super::*;

pub(super) fn synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let s = &ctx.cfg.synth;
    let config = SynthConfig {
        subjects: s.subjects,
        beats: s.beats,
        fs: s.fs,
        seed: ctx.seed,
        sessions: s.sessions,
        session_drift: s.session_drift,
        noise_sigma_mv: s.noise_sigma_mv,
    };
    let records = signal::synth_corpus(&config)?;
    let manifest = signal::write_corpus(&records, &a.out, Some(&ctx.hash))?;
    for e in &manifest.records {
        ctx.output(a.out.join(&e.path));
    }
    ctx.output(a.out.join("manifest.json"));
    ctx.note("records", records.len());
    println!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

pub(super) fn ingest(ctx: &mut Ctx, a: &IngestArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    ctx.input(&a.input);
    let ing = ctx.cfg.ingest.clone();
    let record = match ing.format {
        InputFormat::Csv => signal::load_csv(&a.input, &a.subject, a.session)?,
        raw => {
            let fs = ing
                .fs
                .ok_or_else(|| Error::invalid("raw input needs --fs"))?;
            let format = match raw {
                InputFormat::Int16le => SampleFormat::Int16Le,
                _ => SampleFormat::Float32Le,
            };
            signal::load_raw(&a.input, fs, format, ing.gain, &a.subject, a.session)?
        }
    };
    let source_fs = record.fs;
    let mut record = signal::preprocess(&record);
    if record.fs != PIPELINE_FS {
        record = signal::resample(&record, PIPELINE_FS)?;
    }
    let name = PathBuf::from(format!("{}_s{}.csv", record.subject_id, record.session_id));
    let path = a.out.join(&name);
    signal::write_csv_stamped(&record, &path, Some(&ctx.hash))?;
    ctx.output(path);

    let manifest_path = a.out.join("manifest.json");
    let mut manifest = if manifest_path.is_file() {
        CorpusManifest::load(&manifest_path)?
    } else {
        CorpusManifest::default()
    };
    manifest
        .records
        .retain(|e| !(e.subject_id == record.subject_id && e.session_id == record.session_id));
    manifest.records.push(ManifestEntry {
        path: name,
        subject_id: record.subject_id.clone(),
        session_id: record.session_id,
    });
    manifest
        .records
        .sort_by(|x, y| (&x.subject_id, x.session_id).cmp(&(&y.subject_id, y.session_id)));
    if manifest.config_hash.as_deref() != Some(&ctx.hash) {
        manifest.config_hash = if manifest.records.len() == 1 {
            Some(ctx.hash.clone())
        } else {
            None
        };
    }
    manifest.save(&manifest_path)?;
    ctx.output(manifest_path);
    ctx.note("source_fs", source_fs);
    ctx.note("samples", record.len());
    ctx.note("annotated", record.rpeaks.is_some());
    println!(
        "ingested {} ({} samples at {} Hz, from {} Hz)",
        a.input.display(),
        record.len(),
        PIPELINE_FS,
        source_fs
    );
    Ok(())
}

pub(super) fn train_detector(ctx: &mut Ctx, a: &TrainDetectorArgs) -> Result<()> {
    ctx.out_file(&a.out)?;
    let (_, records) = load_corpus(ctx, &a.corpus)?;
    let d = &ctx.cfg.detector;
    let config = DetectorTrainConfig {
        train: train_config(d.epochs, d.batch_size, d.learning_rate, ctx.seed),
        aux_weights: d.aux_weights.clone(),
        val_fraction: d.val_fraction,
    };
    let trained = rpeak::train_detector(&records, &config)?;
    trained.detector.save(&a.out, Some(&ctx.hash))?;
    ctx.output(a.out.clone());
    ctx.output(suffixed(&a.out, ".json"));
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for h in &trained.history {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            h.epoch, h.train_loss, h.val_loss
        ));
    }
    ctx.stamped_csv(suffixed(&a.out, ".history.csv"), &csv)?;
    let last = trained.history.last().map_or(f64::NAN, |h| h.val_loss);
    ctx.note("baseline_val_loss", trained.baseline_val_loss);
    ctx.note("final_val_loss", last);
    println!(
        "detector trained: validation loss {:.5} -> {:.5}",
        trained.baseline_val_loss, last
    );
    Ok(())
}

pub(super) fn detect(ctx: &mut Ctx, a: &DetectArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    ctx.input(&a.model);
    let detector = Detector::load(&a.model)?;
    let (manifest, records) = load_corpus(ctx, &a.corpus)?;
    let d = ctx.cfg.detector.clone();
    let mut reports: Vec<PeakMatchReport> = Vec::new();
    let mut csv = String::from(
        "record,subject,session,detected,tp,fp,fn,temporal_error_mean,temporal_error_std\n",
    );
    let mut total = 0;
    for (entry, record) in manifest.records.iter().zip(&records) {
        let peaks = rpeak::detect_rpeaks(&detector, record, d.threshold, d.min_distance)?;
        total += peaks.len();
        let stem = record_stem(entry);
        let path = a.out.join(format!("{stem}.peaks"));
        signal::write_peaks(&peaks, &path, Some(&ctx.hash))?;
        ctx.output(path);
        match &record.rpeaks {
            Some(truth) => {
                let r = rpeak::evaluate_peaks(&peaks, truth, d.tolerance);
                csv.push_str(&format!(
                    "{stem},{},{},{},{},{},{},{:.4},{:.4}\n",
                    record.subject_id,
                    record.session_id,
                    r.detected,
                    r.true_positives,
                    r.false_positives,
                    r.false_negatives,
                    r.temporal_error_mean,
                    r.temporal_error_std
                ));
                reports.push(r);
            }
            None => csv.push_str(&format!(
                "{stem},{},{},{},,,,,\n",
                record.subject_id,
                record.session_id,
                peaks.len()
            )),
        }
    }
    ctx.stamped_csv(a.out.join("detections.csv"), &csv)?;
    let mut m = ctx.metrics();
    m.scalar("detected", total as f64);
    if !reports.is_empty() {
        let r = PeakMatchReport::merge(&reports);
        m.scalar("sensitivity", r.sensitivity())
            .scalar("tp", r.true_positives as f64)
            .scalar("fp", r.false_positives as f64)
            .scalar("fn", r.false_negatives as f64)
            .scalar(
                "fp_per_true_peak",
                r.false_positives as f64 / (r.true_positives + r.false_negatives).max(1) as f64,
            )
            .scalar("temporal_error_mean", r.temporal_error_mean)
            .scalar("temporal_error_std", r.temporal_error_std);
        println!(
            "{total} peaks; sensitivity {:.4}, {} false positives, temporal error {:.3} ± {:.3} samples",
            r.sensitivity(),
            r.false_positives,
            r.temporal_error_mean,
            r.temporal_error_std
        );
    } else {
        println!("{total} peaks in {} records", records.len());
    }
    ctx.save_metrics(&m, &a.out)?;
    ctx.note("detected", total);
    Ok(())
}

pub(super) fn segment(ctx: &mut Ctx, a: &SegmentArgs) -> Result<()> {
    ctx.out_file(&a.out)?;
    let (manifest, records) = load_corpus(ctx, &a.corpus)?;
    let mut all = Vec::new();
    let (mut peaks_total, mut skipped) = (0, 0);
    for (entry, record) in manifest.records.iter().zip(&records) {
        if record.fs != PIPELINE_FS {
            return Err(Error::invalid(format!(
                "record `{}` is at {} Hz; ingest it to {PIPELINE_FS} Hz first",
                record_stem(entry),
                record.fs
            )));
        }
        let peaks = match &a.peaks {
            Some(dir) => {
                let p = dir.join(format!("{}.peaks", record_stem(entry)));
                ctx.input(&p);
                signal::read_peaks(&p)?
            }
            None => record.rpeaks.clone().ok_or_else(|| {
                Error::invalid(format!(
                    "record `{}` has no annotations; pass --peaks from `detect`",
                    record_stem(entry)
                ))
            })?,
        };
        let seg = beats::segment(record, &peaks, BEAT_LEN)?;
        peaks_total += peaks.len();
        skipped += seg.skipped;
        all.extend(seg.beats);
    }
    beats::save_beats(&all, &a.out, Some(&ctx.hash))?;
    ctx.output(a.out.clone());
    ctx.output(suffixed(&a.out, ".csv"));
    ctx.note("peaks", peaks_total);
    ctx.note("beats", all.len());
    ctx.note("skipped", skipped);
    println!(
        "{} beats from {peaks_total} peaks ({skipped} too close to a record boundary)",
        all.len()
    );
    Ok(())
}

fn partition_name(p: Option<Partition>) -> &'static str {
    match p {
        Some(Partition::Train) => "train",
        Some(Partition::Val) => "val",
        Some(Partition::Test) => "test",
        None => "none",
    }
}

fn parse_partition(s: &str) -> Result<Option<Partition>> {
    match s {
        "train" => Ok(Some(Partition::Train)),
        "val" => Ok(Some(Partition::Val)),
        "test" => Ok(Some(Partition::Test)),
        "none" => Ok(None),
        other => Err(Error::invalid(format!(
            "unknown partition `{other}` (expected train, val or test)"
        ))),
    }
}

pub(super) fn train_id(ctx: &mut Ctx, a: &TrainIdArgs) -> Result<()> {
    ctx.out_file(&a.out)?;
    let beats = load_beats(ctx, &a.beats)?;
    let section = ctx.cfg.identify.clone();
    let plan = split_plan(&beats, &section, ctx.seed)?;
    let run = &plan.runs()[0];
    let train_set = identify::select(&beats, run, Partition::Train);
    let val_set = identify::select(&beats, run, Partition::Val);
    let mut model = IdentifyModel::new(beats::subjects(&beats), IdentifyArch::default(), ctx.seed)?;
    let mut config = train_config(
        section.epochs,
        section.batch_size,
        section.learning_rate,
        ctx.seed,
    );
    config.patience = section.patience;
    let history = identify::train_identify(&mut model, &train_set, &val_set, &config)?;
    model.save(&a.out, Some(&ctx.hash))?;
    ctx.output(a.out.clone());
    ctx.output(suffixed(&a.out, ".json"));
    ctx.stamped_csv(suffixed(&a.out, ".history.csv"), &history_csv(&history))?;
    let mut split = String::from("index,subject,session,peak,partition\n");
    for (i, (b, p)) in beats.iter().zip(run).enumerate() {
        split.push_str(&format!(
            "{i},{},{},{},{}\n",
            b.subject_id,
            b.session_id,
            b.peak,
            partition_name(*p)
        ));
    }
    ctx.stamped_csv(suffixed(&a.out, ".split.csv"), &split)?;
    let last = history.last();
    ctx.note("epochs", history.len());
    ctx.note("train_beats", train_set.len());
    ctx.note("final_train_accuracy", last.map(|h| h.train_accuracy));
    ctx.note("final_val_accuracy", last.and_then(|h| h.val_accuracy));
    println!(
        "trained on {} beats of {} subjects for {} epochs; final training accuracy {:.4}",
        train_set.len(),
        model.n_classes(),
        history.len(),
        last.map_or(f64::NAN, |h| h.train_accuracy)
    );
    Ok(())
}

/// Partition per beat from a `train-id` split file, checked against `beats`.
fn read_split(path: &Path, beats: &[Heartbeat]) -> Result<Vec<Option<Partition>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(beats.len());
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("index,") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(parse_err(
                i + 1,
                format!("expected 5 fields, got {}", f.len()),
            ));
        }
        let b = beats
            .get(out.len())
            .ok_or_else(|| parse_err(i + 1, "more rows than beats".into()))?;
        if f[1] != b.subject_id || f[3] != b.peak.to_string() {
            return Err(parse_err(i + 1, "row does not match the beat file".into()));
        }
        out.push(parse_partition(f[4]).map_err(|e| parse_err(i + 1, e.to_string()))?);
    }
    if out.len() != beats.len() {
        return Err(parse_err(
            0,
            format!("{} rows for {} beats", out.len(), beats.len()),
        ));
    }
    Ok(out)
}

pub(super) fn identify_cmd(ctx: &mut Ctx, a: &IdentifyArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let model = load_model(ctx, &a.model)?;
    let beats = load_beats(ctx, &a.beats)?;
    let selected: Vec<&Heartbeat> = match &a.split {
        Some(p) => {
            ctx.input(p);
            let run = read_split(p, &beats)?;
            let which = parse_partition(&a.partition)?
                .ok_or_else(|| Error::invalid("--partition none selects no beats"))?;
            identify::select(&beats, &run, which)
        }
        None => beats.iter().collect(),
    };
    if selected.is_empty() {
        return Err(Error::invalid(format!(
            "partition `{}` holds no beats",
            a.partition
        )));
    }
    let rows: Vec<&[f32]> = selected.iter().map(|b| b.samples.as_slice()).collect();
    let probs = model.predict_proba(&rows)?;
    let mut csv = String::from("subject,session,peak,predicted,confidence\n");
    for (b, p) in selected.iter().zip(&probs) {
        let c = identify::argmax(p);
        csv.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            b.subject_id, b.session_id, b.peak, model.classes[c], p[c]
        ));
    }
    ctx.stamped_csv(a.out.join("predictions.csv"), &csv)?;

    let eval = identify::evaluate_identify(&model, &selected)?;
    ctx.stamped_csv(
        a.out.join("confusion.csv"),
        &eval.confusion.to_csv(&model.classes),
    )?;
    let fusion = fusion_curve(&model, &selected, ctx.cfg.identify.fusion_k)?;
    let mut m = ctx.metrics();
    let mt = &eval.metrics;
    m.scalar("accuracy", mt.accuracy)
        .scalar("precision", mt.precision)
        .scalar("recall", mt.recall)
        .scalar("f1", mt.f1)
        .scalar("beats", selected.len() as f64);
    for f in &fusion {
        m.scalar(&format!("fused_accuracy_k{}", f.k), f.accuracy);
    }
    m.curves.push(Curve {
        plot: report::PLOT_ACCURACY_VS_BEATS.into(),
        name: "accuracy".into(),
        points: fusion.iter().map(|f| [f.k as f64, f.accuracy]).collect(),
    });
    m.detail = serde_json::json!({ "fusion": fusion });
    ctx.save_metrics(&m, &a.out)?;
    ctx.note("accuracy", mt.accuracy);
    println!(
        "{} beats: accuracy {:.4}, macro F1 {:.4}{}",
        selected.len(),
        mt.accuracy,
        mt.f1,
        fusion
            .last()
            .filter(|f| f.k > 1)
            .map_or(String::new(), |f| format!(
                ", {}-beat fused accuracy {:.4}",
                f.k, f.accuracy
            ))
    );
    Ok(())
}

pub(super) fn cross_session(ctx: &mut Ctx, a: &CrossSessionArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let beats = load_beats(ctx, &a.beats)?;
    let s = ctx.cfg.identify.clone();
    let config = train_config(s.epochs, s.batch_size, s.learning_rate, ctx.seed);
    let r = identify::cross_session_evaluate(
        &beats,
        (s.sessions[0], s.sessions[1]),
        &IdentifyArch::default(),
        &config,
    )?;
    let mut table = RunTable::new(&["accuracy"]);
    table.push(
        format!("train{}_test{}", s.sessions[0], s.sessions[1]),
        vec![r.forward_accuracy],
    );
    table.push(
        format!("train{}_test{}", s.sessions[1], s.sessions[0]),
        vec![r.backward_accuracy],
    );
    let csv = table.to_csv(Some(&ctx.hash));
    ctx.write(a.out.join("runs.csv"), &csv)?;
    let mut m = ctx.metrics();
    m.scalar("forward_accuracy", r.forward_accuracy)
        .scalar("backward_accuracy", r.backward_accuracy);
    m.detail = serde_json::json!({ "sessions": s.sessions });
    ctx.save_metrics(&m, &a.out)?;
    println!(
        "session {} -> {}: {:.4}; session {} -> {}: {:.4}",
        s.sessions[0],
        s.sessions[1],
        r.forward_accuracy,
        s.sessions[1],
        s.sessions[0],
        r.backward_accuracy
    );
    Ok(())
}

pub(super) fn train_siamese(ctx: &mut Ctx, a: &TrainSiameseArgs) -> Result<()> {
    ctx.out_file(&a.out)?;
    let embedder = load_model(ctx, &a.embedder)?;
    let beats = load_beats(ctx, &a.beats)?;
    let v = ctx.cfg.verify.clone();
    let split = verify::enrollment_split(&embedder, &beats, v.enroll_fraction)?;
    let labelled: Vec<(String, Vec<f32>)> = split
        .enrollment
        .iter()
        .flat_map(|(s, es)| es.iter().map(move |e| (s.clone(), e.clone())))
        .collect();
    let (matched, mismatched) =
        verify::sample_pairs(&labelled, v.matched_per_subject, v.smote_ratio, ctx.seed)?;
    let config = SiameseTrainConfig {
        train: train_config(v.epochs, v.batch_size, v.learning_rate, ctx.seed),
        val_fraction: v.val_fraction,
        smote_ratio: v.smote_ratio,
        smote_k: v.smote_k,
    };
    let trained = verify::train_siamese(&embedder, &matched, &mismatched, &config)?;
    trained.head.save(&a.out, Some(&ctx.hash))?;
    ctx.output(a.out.clone());
    ctx.output(suffixed(&a.out, ".json"));
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for h in &trained.history {
        csv.push_str(&format!(
            "{},{:.6},{:.6}\n",
            h.epoch, h.train_loss, h.val_loss
        ));
    }
    ctx.stamped_csv(suffixed(&a.out, ".history.csv"), &csv)?;
    ctx.note("matched_pairs", matched.len());
    ctx.note("mismatched_pairs", mismatched.len());
    ctx.note("val_matched_mean", trained.val_matched_mean);
    ctx.note("val_mismatched_mean", trained.val_mismatched_mean);
    println!(
        "head trained on {} matched and {} mismatched pairs; validation scores {:.3} (match) vs {:.3} (mismatch)",
        matched.len(),
        mismatched.len(),
        trained.val_matched_mean,
        trained.val_mismatched_mean
    );
    Ok(())
}

pub(super) fn enroll(ctx: &mut Ctx, a: &EnrollArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let embedder = load_model(ctx, &a.embedder)?;
    let beats = load_beats(ctx, &a.beats)?;
    let split = verify::enrollment_split(&embedder, &beats, ctx.cfg.verify.enroll_fraction)?;
    verify::save_templates(&split.templates, &a.out, Some(&ctx.hash))?;
    for t in &split.templates {
        ctx.output(a.out.join(format!("{}.tpl", t.subject_id)));
    }
    ctx.output(a.out.join("index.json"));
    ctx.note("subjects", split.templates.len());
    println!("enrolled {} subjects", split.templates.len());
    Ok(())
}

pub(super) fn verify_cmd(ctx: &mut Ctx, a: &VerifyArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let embedder = load_model(ctx, &a.embedder)?;
    ctx.input(&a.templates);
    let templates = verify::load_templates(&a.templates)?;
    if templates.is_empty() {
        return Err(Error::invalid(format!(
            "{}: no templates",
            a.templates.display()
        )));
    }
    let beats = load_beats(ctx, &a.beats)?;
    let v = ctx.cfg.verify.clone();
    let head = match (&a.head, v.backend) {
        (Some(p), _) => {
            ctx.input(p);
            Some(verify::SiameseHead::load(p)?)
        }
        (None, Backend::Siamese) => return Err(Error::invalid("the siamese backend needs --head")),
        (None, _) => None,
    };
    let split = verify::enrollment_split(&embedder, &beats, v.enroll_fraction)?;
    let config = VerificationConfig {
        enroll_fraction: v.enroll_fraction,
        k: v.fusion_k,
        backend: v.backend,
    };
    let r = verify::verify_trials(&templates, &split.evaluation, &config, head.as_ref())?;
    ctx.stamped_csv(a.out.join("far_frr.csv"), &r.curve.to_csv())?;
    let mut scores = String::from("trial,score\n");
    for s in &r.genuine_scores {
        scores.push_str(&format!("genuine,{s:.6}\n"));
    }
    for s in &r.imposter_scores {
        scores.push_str(&format!("imposter,{s:.6}\n"));
    }
    ctx.stamped_csv(a.out.join("scores.csv"), &scores)?;
    let mut m = ctx.metrics();
    m.scalar("eer", r.curve.eer)
        .scalar("eer_threshold", r.curve.eer_threshold)
        .scalar("auc", r.curve.auc)
        .scalar("genuine_trials", r.curve.n_genuine as f64)
        .scalar("imposter_trials", r.curve.n_imposter as f64)
        .scalar("skipped_subjects", r.skipped_subjects as f64);
    let pts = |ys: &[f64]| -> Vec<[f64; 2]> {
        r.curve
            .thresholds
            .iter()
            .zip(ys)
            .map(|(&t, &y)| [t, y])
            .collect()
    };
    m.curves.push(Curve {
        plot: report::PLOT_FAR_FRR.into(),
        name: format!("FAR ({})", r.backend),
        points: pts(&r.curve.far),
    });
    m.curves.push(Curve {
        plot: report::PLOT_FAR_FRR.into(),
        name: format!("FRR ({})", r.backend),
        points: pts(&r.curve.frr),
    });
    m.detail =
        serde_json::json!({ "backend": r.backend, "k": r.k, "enroll_fraction": r.enroll_fraction });
    ctx.save_metrics(&m, &a.out)?;
    ctx.note("eer", r.curve.eer);
    println!(
        "{} backend, k={}: EER {:.4} at threshold {:.4} ({} genuine, {} imposter trials)",
        r.backend, r.k, r.curve.eer, r.curve.eer_threshold, r.curve.n_genuine, r.curve.n_imposter
    );
    Ok(())
}

pub(super) fn evaluate(ctx: &mut Ctx, a: &EvaluateArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let beats = load_beats(ctx, &a.beats)?;
    let s = ctx.cfg.identify.clone();
    let plan = split_plan(&beats, &s, ctx.seed)?;
    let classes = beats::subjects(&beats);
    let mut config = train_config(s.epochs, s.batch_size, s.learning_rate, ctx.seed);
    config.patience = s.patience;
    let mut table = RunTable::new(&[
        "accuracy",
        "precision",
        "recall",
        "f1",
        &format!("fused_k{}", s.fusion_k),
    ]);
    let mut confusion = identify::ConfusionMatrix::new(classes.len());
    let mut curves: Vec<Vec<identify::FusionResult>> = Vec::new();
    for (i, run) in plan.runs().iter().enumerate() {
        let train_set = identify::select(&beats, run, Partition::Train);
        let val_set = identify::select(&beats, run, Partition::Val);
        let test_set = identify::select(&beats, run, Partition::Test);
        let mut model = IdentifyModel::new(classes.clone(), IdentifyArch::default(), ctx.seed)?;
        identify::train_identify(&mut model, &train_set, &val_set, &config)?;
        let eval = identify::evaluate_identify(&model, &test_set)?;
        for (row, counts) in confusion.counts.iter_mut().zip(&eval.confusion.counts) {
            for (c, v) in row.iter_mut().zip(counts) {
                *c += v;
            }
        }
        let fusion = fusion_curve(&model, &test_set, s.fusion_k)?;
        let fused = fusion
            .last()
            .filter(|f| f.k == s.fusion_k)
            .map_or(f64::NAN, |f| f.accuracy);
        let mt = &eval.metrics;
        table.push(
            run_label(s.scheme, i),
            vec![mt.accuracy, mt.precision, mt.recall, mt.f1, fused],
        );
        curves.push(fusion);
    }
    let csv = table.to_csv(Some(&ctx.hash));
    ctx.write(a.out.join("runs.csv"), &csv)?;
    ctx.stamped_csv(a.out.join("confusion.csv"), &confusion.to_csv(&classes))?;

    let mut m = ctx.metrics();
    for (name, (mean, std)) in table.columns.iter().zip(table.summary()) {
        m.scalar(&format!("{name}_mean"), mean)
            .scalar(&format!("{name}_std"), std);
    }
    let max_k = curves.iter().map(Vec::len).min().unwrap_or(0);
    let mean_curve: Vec<[f64; 2]> = (0..max_k)
        .map(|j| {
            let acc = curves.iter().map(|c| c[j].accuracy).sum::<f64>() / curves.len() as f64;
            [curves[0][j].k as f64, acc]
        })
        .collect();
    m.curves.push(Curve {
        plot: report::PLOT_ACCURACY_VS_BEATS.into(),
        name: format!("{} mean", s.scheme),
        points: mean_curve,
    });
    let rows: BTreeMap<&str, &Vec<f64>> = table.rows.iter().map(|(r, v)| (r.as_str(), v)).collect();
    m.detail = serde_json::json!({ "scheme": s.scheme, "columns": table.columns, "runs": rows });
    ctx.save_metrics(&m, &a.out)?;
    let (acc, sd) = table.summary()[0];
    ctx.note("accuracy_mean", acc);
    println!(
        "{} over {} run(s): accuracy {acc:.4} ± {sd:.4}",
        s.scheme,
        table.rows.len()
    );
    Ok(())
}

pub(super) fn report_cmd(ctx: &mut Ctx, a: &ReportArgs) -> Result<()> {
    ctx.out_dir(&a.out)?;
    let mut stamps = Vec::new();
    for p in &a.inputs {
        ctx.input(p);
        stamps.push((p.clone(), report::artifact_hash(p)?));
    }
    let common = report::common_hash(&stamps, a.force)?;
    // The report is stamped with the inputs' hash, not its own.
    let stamp = common.clone().unwrap_or_else(|| "mixed".to_string());
    ctx.hash = stamp.clone();

    let mut entries = Vec::new();
    for p in &a.inputs {
        if p.extension().is_some_and(|e| e == "json") {
            if let Ok(m) = MetricsReport::load(p) {
                entries.push((p.clone(), m));
            }
        }
    }
    let columns: Vec<String> = {
        let mut c: Vec<String> = entries
            .iter()
            .flat_map(|(_, m)| m.scalars.keys().cloned())
            .collect();
        c.sort();
        c.dedup();
        c
    };
    let mut csv = artifact::hash_comment(&stamp) + "input,command";
    for c in &columns {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    let mut curves = Vec::new();
    for (p, m) in &entries {
        csv.push_str(&format!("{},{}", p.display(), m.command));
        for c in &columns {
            match m.scalars.get(c) {
                Some(v) => csv.push_str(&format!(",{v:.6}")),
                None => csv.push(','),
            }
        }
        csv.push('\n');
        for c in &m.curves {
            let mut c = c.clone();
            if entries.len() > 1 {
                c.name = format!("{}: {}", p.display(), c.name);
            }
            curves.push(c);
        }
    }
    ctx.write(a.out.join("summary.csv"), &csv)?;
    let summary = serde_json::json!({
        "config_hash": common,
        "inputs": entries.iter().map(|(p, m)| serde_json::json!({
            "path": p, "command": m.command, "seed": m.seed, "scalars": m.scalars,
        })).collect::<Vec<_>>(),
    });
    let path = a.out.join("summary.json");
    artifact::write_json(&summary, &path)?;
    ctx.output(path);
    for p in report::write_plots(&curves, &a.out)? {
        ctx.output(p);
    }
    ctx.note("metrics_inputs", entries.len());
    println!(
        "summarized {} metrics file(s) from {} input(s)",
        entries.len(),
        a.inputs.len()
    );
    Ok(())
}
