//! ECG records: ingestion from CSV or raw binary, resampling, Z-score
//! normalization, and a seeded synthetic multi-subject ECG generator.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate every downstream stage expects.
pub const PIPELINE_FS: f64 = 500.0;

/// Standard deviations at or below this are treated as a flat signal.
pub const ZSCORE_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct EcgRecord {
    /// Millivolts.
    pub samples: Vec<f64>,
    pub fs: f64,
    pub subject_id: String,
    pub session_id: u32,
    /// Strictly increasing sample indices of R peaks, when known.
    pub rpeaks: Option<Vec<usize>>,
}

impl EcgRecord {
    pub fn new(
        samples: Vec<f64>,
        fs: f64,
        subject_id: impl Into<String>,
        session_id: u32,
        rpeaks: Option<Vec<usize>>,
    ) -> Result<Self> {
        let r = EcgRecord {
            samples,
            fs,
            subject_id: subject_id.into(),
            session_id,
            rpeaks,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::invalid(format!(
                "sampling rate must be positive, got {}",
                self.fs
            )));
        }
        if self.samples.is_empty() {
            return Err(Error::invalid(format!(
                "record for `{}` has no samples",
                self.subject_id
            )));
        }
        if let Some(peaks) = &self.rpeaks {
            if let Some(&last) = peaks.last() {
                if last >= self.samples.len() {
                    return Err(Error::invalid(format!(
                        "annotation {last} outside record of {} samples",
                        self.samples.len()
                    )));
                }
            }
            if peaks.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid("annotations must be strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Catmull-Rom resampling with clamped ends. Annotations are rescaled and
/// rounded to the nearest output sample.
pub fn resample(record: &EcgRecord, target_fs: f64) -> Result<EcgRecord> {
    if !(target_fs > 0.0 && target_fs.is_finite()) {
        return Err(Error::invalid(format!(
            "target rate must be positive, got {target_fs}"
        )));
    }
    record.validate()?;
    if record.fs == target_fs {
        return Ok(record.clone());
    }
    let n = record.samples.len();
    if n < 4 {
        return Err(Error::invalid(format!(
            "cubic resampling needs at least 4 samples, record has {n}"
        )));
    }
    let ratio = target_fs / record.fs;
    let n_out = ((n - 1) as f64 * ratio).floor() as usize + 1;
    let x = &record.samples;
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    let samples = (0..n_out)
        .map(|j| {
            let pos = j as f64 / ratio;
            let i = pos.floor() as isize;
            let t = pos - i as f64;
            let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
            let t2 = t * t;
            let t3 = t2 * t;
            0.5 * (2.0 * p1
                + (p2 - p0) * t
                + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2
                + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3)
        })
        .collect();
    let rpeaks = record.rpeaks.as_ref().map(|peaks| {
        let mut out: Vec<usize> = peaks
            .iter()
            .map(|&p| ((p as f64 * ratio).round() as usize).min(n_out - 1))
            .collect();
        out.dedup();
        out
    });
    EcgRecord::new(
        samples,
        target_fs,
        record.subject_id.clone(),
        record.session_id,
        rpeaks,
    )
}

/// Z-score with population standard deviation. Returns all zeros and
/// `degenerate = true` for a flat input.
pub fn zscore(signal: &[f64]) -> Result<(Vec<f64>, bool)> {
    if signal.is_empty() {
        return Err(Error::invalid("cannot normalize an empty signal"));
    }
    let n = signal.len() as f64;
    let mean = signal.iter().sum::<f64>() / n;
    let var = signal.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > ZSCORE_EPSILON) {
        return Ok((vec![0.0; signal.len()], true));
    }
    Ok((signal.iter().map(|v| (v - mean) / std).collect(), false))
}

// ---------------------------------------------------------------------------
// Synthetic corpus

/// One Gaussian component of a synthetic heartbeat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude_mv: f64,
    /// Centre relative to the R apex, in milliseconds.
    pub center_ms: f64,
    /// Gaussian standard deviation, in milliseconds.
    pub width_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSubjectParams {
    /// P, Q, R, S, T in that order.
    pub waves: [Wave; 5],
    pub heart_rate_bpm: f64,
    /// Half-width of the uniform beat-to-beat RR jitter, as a fraction of RR.
    pub hr_jitter: f64,
    pub noise_sigma_mv: f64,
}

pub const WAVE_NAMES: [&str; 5] = ["P", "Q", "R", "S", "T"];

// (amplitude, centre, width) ranges per wave; Q and S amplitudes are negative.
const WAVE_RANGES: [[(f64, f64); 3]; 5] = [
    [(0.08, 0.25), (-220.0, -140.0), (15.0, 30.0)],
    [(-0.20, -0.04), (-36.0, -20.0), (5.0, 9.0)],
    [(0.8, 1.6), (0.0, 0.0), (6.0, 11.0)],
    [(-0.40, -0.08), (20.0, 40.0), (5.0, 11.0)],
    [(0.12, 0.50), (200.0, 320.0), (30.0, 60.0)],
];
const HR_RANGE: (f64, f64) = (55.0, 85.0);
const JITTER_RANGE: (f64, f64) = (0.02, 0.06);
const NOISE_RANGE: (f64, f64) = (0.01, 0.03);

/// Minimum normalized L-infinity distance between the wave parameters of
/// any two subjects of one corpus.
pub const MIN_SUBJECT_SEPARATION: f64 = 0.12;

/// Relative amplitude variation between consecutive beats of one subject.
const BEAT_AMPLITUDE_VARIATION: f64 = 0.03;

impl SynthSubjectParams {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut u = |(lo, hi): (f64, f64)| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        };
        let mut waves = [Wave {
            amplitude_mv: 0.0,
            center_ms: 0.0,
            width_ms: 1.0,
        }; 5];
        for (w, r) in waves.iter_mut().zip(WAVE_RANGES.iter()) {
            *w = Wave {
                amplitude_mv: u(r[0]),
                center_ms: u(r[1]),
                width_ms: u(r[2]),
            };
        }
        SynthSubjectParams {
            waves,
            heart_rate_bpm: u(HR_RANGE),
            hr_jitter: u(JITTER_RANGE),
            noise_sigma_mv: u(NOISE_RANGE),
        }
    }

    /// Wave parameters scaled to [0, 1] by their sampling ranges.
    fn normalized(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, r) in self.waves.iter().zip(WAVE_RANGES.iter()) {
            for (v, (lo, hi)) in [w.amplitude_mv, w.center_ms, w.width_ms]
                .into_iter()
                .zip(r.iter())
            {
                if hi > lo {
                    out.push((v - lo) / (hi - lo));
                }
            }
        }
        out
    }

    /// Largest normalized difference over all wave parameters.
    pub fn separation(&self, other: &SynthSubjectParams) -> f64 {
        self.normalized()
            .iter()
            .zip(other.normalized())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.waves[2].amplitude_mv;
        if !(r > self.waves[1].amplitude_mv.abs() && r > self.waves[3].amplitude_mv.abs()) {
            return Err(Error::invalid("R amplitude must exceed |Q| and |S|"));
        }
        if self.waves.iter().any(|w| !(w.width_ms > 0.0)) {
            return Err(Error::invalid("wave widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub subjects: usize,
    pub beats: usize,
    pub fs: f64,
    pub seed: u64,
    pub sessions: u32,
    /// Standard deviation of the per-session relative amplitude change of
    /// each wave (sessions after the first).
    pub session_drift: f64,
    /// Replaces every subject's noise level when set.
    pub noise_sigma_mv: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            subjects: 10,
            beats: 200,
            fs: PIPELINE_FS,
            seed: 7,
            sessions: 1,
            session_drift: 0.0,
            noise_sigma_mv: None,
        }
    }
}

/// Draws `n` subject parameter sets, each at least
/// [`MIN_SUBJECT_SEPARATION`] away from all earlier ones.
pub fn draw_subjects(n: usize, seed: u64) -> Vec<SynthSubjectParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_5AB7EC7);
    let mut out: Vec<SynthSubjectParams> = Vec::with_capacity(n);
    while out.len() < n {
        let p = SynthSubjectParams::draw(&mut rng);
        if out
            .iter()
            .all(|q| q.separation(&p) >= MIN_SUBJECT_SEPARATION)
        {
            out.push(p);
        }
    }
    out
}

pub fn subject_name(index: usize) -> String {
    format!("S{:03}", index + 1)
}

/// One record per (subject, session), with exact R-apex annotations.
pub fn synth_corpus(config: &SynthConfig) -> Result<Vec<EcgRecord>> {
    if config.subjects < 2 {
        return Err(Error::invalid(
            "a synthetic corpus needs at least 2 subjects",
        ));
    }
    if config.beats < 1 {
        return Err(Error::invalid(
            "a synthetic corpus needs at least 1 beat per subject",
        ));
    }
    if config.sessions < 1 {
        return Err(Error::invalid(
            "a synthetic corpus needs at least 1 session",
        ));
    }
    let subjects = draw_subjects(config.subjects, config.seed);
    let mut records = Vec::new();
    for (k, base) in subjects.iter().enumerate() {
        for session in 1..=config.sessions {
            let stream = config.seed.wrapping_mul(1_000_003) ^ ((k as u64) << 20) ^ session as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(stream);
            let mut params = base.clone();
            if let Some(s) = config.noise_sigma_mv {
                params.noise_sigma_mv = s;
            }
            if session > 1 && config.session_drift > 0.0 {
                let drift = Normal::new(0.0, config.session_drift).unwrap();
                for w in params.waves.iter_mut() {
                    w.amplitude_mv *= (1.0 + drift.sample(&mut rng)).clamp(0.5, 1.5);
                }
                let r = params.waves[2].amplitude_mv;
                for i in [1, 3] {
                    if params.waves[i].amplitude_mv.abs() >= r {
                        params.waves[i].amplitude_mv = -0.9 * r;
                    }
                }
                params.heart_rate_bpm *= 1.0 + 0.5 * drift.sample(&mut rng).clamp(-0.2, 0.2);
            }
            records.push(synth_record(
                &params,
                config.beats,
                config.fs,
                &subject_name(k),
                session,
                &mut rng,
            )?);
        }
    }
    Ok(records)
}

/// A record of `beats` heartbeats drawn from `params`.
pub fn synth_record(
    params: &SynthSubjectParams,
    beats: usize,
    fs: f64,
    subject_id: &str,
    session_id: u32,
    rng: &mut ChaCha8Rng,
) -> Result<EcgRecord> {
    params.validate()?;
    let rr = 60.0 / params.heart_rate_bpm;
    let lead = 0.7;
    let mut centers = Vec::with_capacity(beats);
    let mut t = lead;
    for _ in 0..beats {
        centers.push((t * fs).round() as usize);
        t += rr * (1.0 + params.hr_jitter * rng.random_range(-1.0..1.0));
    }
    let n = ((t - rr + lead) * fs).ceil() as usize + 1;
    let mut clean = vec![0.0; n];
    let variation = Normal::new(1.0, BEAT_AMPLITUDE_VARIATION).unwrap();
    for &c in &centers {
        for w in &params.waves {
            let gain = variation.sample(rng);
            let mu = c as f64 + w.center_ms * 1e-3 * fs;
            let sigma = w.width_ms * 1e-3 * fs;
            let lo = (mu - 5.0 * sigma).floor().max(0.0) as usize;
            let hi = ((mu + 5.0 * sigma).ceil() as usize).min(n - 1);
            for (i, v) in clean.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let z = (i as f64 - mu) / sigma;
                *v += gain * w.amplitude_mv * (-0.5 * z * z).exp();
            }
        }
    }
    // Annotate the apex of the noise-free waveform near each R centre.
    let reach = (params.waves[2].width_ms * 1e-3 * fs).ceil() as usize + 1;
    let rpeaks: Vec<usize> = centers
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(reach);
            let hi = (c + reach).min(n - 1);
            (lo..=hi)
                .max_by(|&a, &b| clean[a].total_cmp(&clean[b]))
                .unwrap()
        })
        .collect();
    let noise = Normal::new(0.0, params.noise_sigma_mv.max(0.0)).unwrap();
    let samples = clean
        .iter()
        .map(|&v| {
            if params.noise_sigma_mv > 0.0 {
                v + noise.sample(rng)
            } else {
                v
            }
        })
        .collect();
    EcgRecord::new(samples, fs, subject_id, session_id, Some(rpeaks))
}

// ---------------------------------------------------------------------------
// File formats

pub const CSV_HEADER: &str = "time_s,ecg_mv";
pub const CSV_HEADER_WITH_PEAKS: &str = "time_s,ecg_mv,rpeak";

/// Reads `time_s,ecg_mv[,rpeak]`. The sampling rate is inferred from the
/// median time step; `rpeak` is 0/1 per row. Leading `#` lines are skipped.
pub fn load_csv(path: impl AsRef<Path>, subject_id: &str, session_id: u32) -> Result<EcgRecord> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines().enumerate().peekable();
    let mut header_line = 1;
    let header = loop {
        match lines.next() {
            Some((i, h)) => {
                let h = h.map_err(|e| Error::io(path, e))?;
                if !h.starts_with('#') {
                    header_line = i + 1;
                    break h;
                }
            }
            None => return Err(parse_err(header_line, "empty file".into())),
        }
    };
    let columns: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let with_peaks = match columns.as_slice() {
        ["time_s", "ecg_mv"] => false,
        ["time_s", "ecg_mv", "rpeak"] => true,
        _ => {
            return Err(parse_err(
                header_line,
                format!(
                    "expected header `{CSV_HEADER}` or `{CSV_HEADER_WITH_PEAKS}`, got `{header}`"
                ),
            ))
        }
    };
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut peaks = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, got {}", columns.len(), fields.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(lineno, format!("invalid {what} `{s}`")))
        };
        let t = num(fields[0], "time")?;
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(parse_err(
                    lineno,
                    format!("time {t} does not increase (previous {prev})"),
                ));
            }
        }
        times.push(t);
        samples.push(num(fields[1], "sample")?);
        if with_peaks {
            match fields[2] {
                "0" => {}
                "1" => peaks.push(samples.len() - 1),
                other => {
                    return Err(parse_err(
                        lineno,
                        format!("rpeak must be 0 or 1, got `{other}`"),
                    ))
                }
            }
        }
    }
    if times.len() < 2 {
        return Err(parse_err(
            1,
            "need at least two samples to infer the sampling rate".into(),
        ));
    }
    let mut steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let median = steps[steps.len() / 2];
    let fs = 1.0 / median;
    // Round to a whole rate when the grid is within rounding error of one.
    let fs = if (fs - fs.round()).abs() < 1e-3 {
        fs.round()
    } else {
        fs
    };
    EcgRecord::new(
        samples,
        fs,
        subject_id,
        session_id,
        with_peaks.then_some(peaks),
    )
}

pub fn write_csv(record: &EcgRecord, path: impl AsRef<Path>) -> Result<()> {
    write_csv_stamped(record, path, None)
}

/// [`write_csv`] with a leading config-hash comment.
pub fn write_csv_stamped(
    record: &EcgRecord,
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(record.len() * 24);
    if let Some(h) = config_hash {
        out.push_str(&crate::artifact::hash_comment(h));
    }
    let peaks = record.rpeaks.as_deref();
    out.push_str(if peaks.is_some() {
        CSV_HEADER_WITH_PEAKS
    } else {
        CSV_HEADER
    });
    out.push('\n');
    let mut next = 0;
    for (i, v) in record.samples.iter().enumerate() {
        let t = i as f64 / record.fs;
        match peaks {
            Some(p) => {
                let is_peak = next < p.len() && p[next] == i;
                if is_peak {
                    next += 1;
                }
                out.push_str(&format!("{t:.6},{v:.9},{}\n", is_peak as u8));
            }
            None => out.push_str(&format!("{t:.6},{v:.9}\n")),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleFormat {
    Int16Le,
    Float32Le,
}

impl std::str::FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int16" | "i16" | "int16le" => Ok(SampleFormat::Int16Le),
            "float32" | "f32" | "float32le" => Ok(SampleFormat::Float32Le),
            other => Err(Error::invalid(format!(
                "unknown sample format `{other}` (expected int16 or float32)"
            ))),
        }
    }
}

/// Headerless little-endian samples; millivolts = raw / gain.
pub fn load_raw(
    path: impl AsRef<Path>,
    fs: f64,
    format: SampleFormat,
    gain: f64,
    subject_id: &str,
    session_id: u32,
) -> Result<EcgRecord> {
    let path = path.as_ref();
    if !(gain.is_finite() && gain != 0.0) {
        return Err(Error::invalid(format!(
            "gain must be finite and non-zero, got {gain}"
        )));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let width = match format {
        SampleFormat::Int16Le => 2,
        SampleFormat::Float32Le => 4,
    };
    if bytes.len() % width != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of {width}-byte samples",
            path.display(),
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(width)
        .map(|c| match format {
            SampleFormat::Int16Le => i16::from_le_bytes([c[0], c[1]]) as f64 / gain,
            SampleFormat::Float32Le => f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64 / gain,
        })
        .collect();
    EcgRecord::new(samples, fs, subject_id, session_id, None)
}

/// Stand-in for a filtering stage. Benchmark-style inputs are assumed
/// already filtered, so this is the identity.
pub fn preprocess(record: &EcgRecord) -> EcgRecord {
    record.clone()
}

// ---------------------------------------------------------------------------
// Corpus manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub subject_id: String,
    pub session_id: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub records: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads every listed record, resolving relative paths against `base`.
    pub fn load_records(&self, base: &Path) -> Result<Vec<EcgRecord>> {
        self.records
            .iter()
            .map(|e| {
                let p: PathBuf = if e.path.is_absolute() {
                    e.path.clone()
                } else {
                    base.join(&e.path)
                };
                load_csv(p, &e.subject_id, e.session_id)
            })
            .collect()
    }
}

/// Writes one CSV per record plus `manifest.json` into `dir`.
pub fn write_corpus(
    records: &[EcgRecord],
    dir: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<CorpusManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = CorpusManifest {
        config_hash: config_hash.map(str::to_string),
        records: Vec::new(),
    };
    for r in records {
        let name = PathBuf::from(format!("{}_s{}.csv", r.subject_id, r.session_id));
        write_csv_stamped(r, dir.join(&name), config_hash)?;
        manifest.records.push(ManifestEntry {
            path: name,
            subject_id: r.subject_id.clone(),
            session_id: r.session_id,
        });
    }
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// One index per line, after an optional config-hash comment.
pub fn write_peaks(
    peaks: &[usize],
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(h) = config_hash {
        f.write_all(crate::artifact::hash_comment(h).as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    for p in peaks {
        writeln!(f, "{p}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_peaks(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<usize> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = line.parse::<usize>().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("invalid peak index `{line}`"),
        })?;
        if out.last().is_some_and(|&p| p >= v) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "peak indices must be strictly increasing".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(samples: Vec<f64>, fs: f64) -> EcgRecord {
        EcgRecord::new(samples, fs, "A", 1, None).unwrap()
    }

    #[test]
    fn zscore_closed_form() {
        let (z, degenerate) = zscore(&[1.0, 2.0, 3.0]).unwrap();
        assert!(!degenerate);
        let s = (2.0f64 / 3.0).sqrt();
        for (a, b) in z.iter().zip([-1.0 / s, 0.0, 1.0 / s]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((z[2] - 1.224744871391589).abs() < 1e-12);
    }

    #[test]
    fn zscore_flat_is_degenerate() {
        let (z, degenerate) = zscore(&[4.2; 10]).unwrap();
        assert!(degenerate);
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(zscore(&[]).is_err());
    }

    #[test]
    fn resample_same_rate_is_identity() {
        let r = record(vec![1.0, 2.0, 0.5, 3.0, 1.0], 250.0);
        assert_eq!(resample(&r, 250.0).unwrap(), r);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let r = record(vec![0.7; 100], 360.0);
        let out = resample(&r, 500.0).unwrap();
        assert_eq!(out.len(), 138);
        assert!(out.samples.iter().all(|&v| (v - 0.7).abs() < 1e-12));
        let down = resample(&r, 128.0).unwrap();
        assert!(down.samples.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn resample_sinusoid_against_closed_form() {
        let fs = 125.0;
        let f = 2.0;
        let x: Vec<f64> = (0..500)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
            .collect();
        let out = resample(&record(x, fs), 500.0).unwrap();
        // time span covered by the samples is preserved within one output sample
        let span_in = 499.0 / fs;
        let span_out = (out.len() - 1) as f64 / 500.0;
        assert!((span_out - span_in).abs() <= 1.0 / 500.0 + 1e-12);
        let worst = out
            .samples
            .iter()
            .enumerate()
            .map(|(j, v)| (v - (2.0 * std::f64::consts::PI * f * j as f64 / 500.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-2, "max deviation {worst}");
    }

    #[test]
    fn resample_rescales_annotations() {
        let r = EcgRecord::new(vec![0.0; 360], 360.0, "A", 1, Some(vec![0, 36, 359])).unwrap();
        let out = resample(&r, 500.0).unwrap();
        assert_eq!(out.rpeaks.unwrap(), vec![0, 50, 498]);
    }

    #[test]
    fn resample_needs_four_samples() {
        assert!(resample(&record(vec![1.0, 2.0, 3.0], 100.0), 500.0).is_err());
    }

    #[test]
    fn record_validation() {
        assert!(EcgRecord::new(vec![], 500.0, "A", 1, None).is_err());
        assert!(EcgRecord::new(vec![0.0], 0.0, "A", 1, None).is_err());
        assert!(EcgRecord::new(vec![0.0; 4], 500.0, "A", 1, Some(vec![2, 2])).is_err());
        assert!(EcgRecord::new(vec![0.0; 4], 500.0, "A", 1, Some(vec![4])).is_err());
    }

    #[test]
    fn synthetic_corpus_is_deterministic() {
        let cfg = SynthConfig {
            subjects: 3,
            beats: 20,
            ..SynthConfig::default()
        };
        assert_eq!(synth_corpus(&cfg).unwrap(), synth_corpus(&cfg).unwrap());
        let other = synth_corpus(&SynthConfig {
            seed: 8,
            ..cfg.clone()
        })
        .unwrap();
        assert_ne!(other, synth_corpus(&cfg).unwrap());
    }

    #[test]
    fn noise_free_annotation_is_beat_argmax() {
        let cfg = SynthConfig {
            subjects: 4,
            beats: 30,
            noise_sigma_mv: Some(0.0),
            ..SynthConfig::default()
        };
        for r in synth_corpus(&cfg).unwrap() {
            let peaks = r.rpeaks.clone().unwrap();
            assert_eq!(peaks.len(), 30);
            for &p in &peaks {
                // beat window [p - 64, p + 192)
                let lo = p.saturating_sub(64);
                let hi = (p + 192).min(r.len());
                let arg = (lo..hi)
                    .max_by(|&a, &b| r.samples[a].total_cmp(&r.samples[b]))
                    .unwrap();
                assert_eq!(arg, p, "subject {}", r.subject_id);
            }
        }
    }

    #[test]
    fn subjects_are_separated() {
        let subjects = draw_subjects(30, 3);
        for i in 0..subjects.len() {
            subjects[i].validate().unwrap();
            for j in 0..i {
                assert!(subjects[i].separation(&subjects[j]) >= MIN_SUBJECT_SEPARATION);
            }
        }
    }

    #[test]
    fn synth_rejects_single_subject() {
        let cfg = SynthConfig {
            subjects: 1,
            ..SynthConfig::default()
        };
        assert!(synth_corpus(&cfg).is_err());
    }

    #[test]
    fn csv_round_trip_infers_rate() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            subjects: 2,
            beats: 5,
            ..SynthConfig::default()
        };
        let recs = synth_corpus(&cfg).unwrap();
        let path = dir.path().join("r.csv");
        write_csv_stamped(&recs[0], &path, Some("ab")).unwrap();
        let back = load_csv(&path, "S001", 1).unwrap();
        assert_eq!(back.fs, 500.0);
        assert_eq!(back.rpeaks, recs[0].rpeaks);
        assert_eq!(back.len(), recs[0].len());
    }

    #[test]
    fn csv_rejects_non_monotonic_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "time_s,ecg_mv\n0.000,1\n0.002,1\n0.001,2\n0.004,1\n").unwrap();
        let err = load_csv(&path, "A", 1).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_rejects_malformed_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "time_s,ecg_mv\n0.000,1\n0.002,abc\n").unwrap();
        assert!(matches!(
            load_csv(&path, "A", 1),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn raw_int16_scaled_by_gain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bin");
        let raw: Vec<u8> = [200i16, -400, 1000]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        fs::write(&path, raw).unwrap();
        let r = load_raw(&path, 500.0, SampleFormat::Int16Le, 200.0, "A", 1).unwrap();
        assert_eq!(r.samples, vec![1.0, -2.0, 5.0]);
        assert!("int24".parse::<SampleFormat>().is_err());
    }

    #[test]
    fn peaks_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        write_peaks(&[3, 400, 901], &path, Some("ab")).unwrap();
        assert_eq!(read_peaks(&path).unwrap(), vec![3, 400, 901]);
    }
}
