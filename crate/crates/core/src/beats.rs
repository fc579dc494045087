//! Heartbeat segmentation around R peaks and the beat-set file format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::artifact;
use crate::error::{Error, Result};
use crate::signal::{zscore, EcgRecord};

/// Samples per beat.
pub const BEAT_LEN: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Heartbeat {
    /// Z-scored, with the R peak at offset `w / 4`.
    pub samples: Vec<f32>,
    pub subject_id: String,
    pub session_id: u32,
    /// R-peak index in the source record.
    pub peak: usize,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segmentation {
    pub beats: Vec<Heartbeat>,
    /// Peaks too close to either end of the record.
    pub skipped: usize,
}

/// Window `[p - w/4, p + 3w/4)` around `peak`, or `None` when it does not
/// fit inside a record of `len` samples.
pub fn beat_window(peak: usize, len: usize, w: usize) -> Option<(usize, usize)> {
    let before = w / 4;
    let after = w - before;
    if peak < before || peak + after > len {
        return None;
    }
    Some((peak - before, peak + after))
}

pub fn segment(record: &EcgRecord, peaks: &[usize], w: usize) -> Result<Segmentation> {
    if w == 0 || w % 4 != 0 {
        return Err(Error::invalid(format!(
            "beat width must be a positive multiple of 4, got {w}"
        )));
    }
    let mut out = Segmentation::default();
    for &p in peaks {
        match beat_window(p, record.len(), w) {
            Some((lo, hi)) => {
                let (z, degenerate) = zscore(&record.samples[lo..hi])?;
                out.beats.push(Heartbeat {
                    samples: z.into_iter().map(|v| v as f32).collect(),
                    subject_id: record.subject_id.clone(),
                    session_id: record.session_id,
                    peak: p,
                    degenerate,
                });
            }
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// Segments every record at its own annotations.
pub fn segment_annotated(records: &[EcgRecord]) -> Result<Segmentation> {
    let mut all = Segmentation::default();
    for r in records {
        let peaks = r.rpeaks.as_deref().ok_or_else(|| {
            Error::invalid(format!(
                "record {}/{} has no R-peak annotations",
                r.subject_id, r.session_id
            ))
        })?;
        let s = segment(r, peaks, BEAT_LEN)?;
        all.beats.extend(s.beats);
        all.skipped += s.skipped;
    }
    Ok(all)
}

/// Sorted distinct subject ids.
pub fn subjects(beats: &[Heartbeat]) -> Vec<String> {
    let mut ids: Vec<String> = beats.iter().map(|b| b.subject_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".csv");
    PathBuf::from(s)
}

/// Writes `path` (little-endian f32 rows of [`BEAT_LEN`]) and `path.csv`
/// (`subject,session,peak,degenerate` per row).
pub fn save_beats(
    beats: &[Heartbeat],
    path: impl AsRef<Path>,
    config_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    let mut bin = Vec::with_capacity(beats.len() * BEAT_LEN * 4);
    let mut csv = String::new();
    if let Some(h) = config_hash {
        csv.push_str(&artifact::hash_comment(h));
    }
    csv.push_str("subject,session,peak,degenerate\n");
    for b in beats {
        if b.samples.len() != BEAT_LEN {
            return Err(Error::invalid(format!(
                "beat has {} samples, expected {BEAT_LEN}",
                b.samples.len()
            )));
        }
        if b.subject_id.contains([',', '\n']) {
            return Err(Error::invalid(format!(
                "subject id `{}` contains a separator",
                b.subject_id
            )));
        }
        for v in &b.samples {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        csv.push_str(&format!(
            "{},{},{},{}\n",
            b.subject_id, b.session_id, b.peak, b.degenerate as u8
        ));
    }
    fs::write(path, bin).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let mut f = fs::File::create(&side).map_err(|e| Error::io(&side, e))?;
    f.write_all(csv.as_bytes()).map_err(|e| Error::io(&side, e))
}

pub fn load_beats(path: impl AsRef<Path>) -> Result<Vec<Heartbeat>> {
    let path = path.as_ref();
    let bin = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let row_bytes = BEAT_LEN * 4;
    if bin.len() % row_bytes != 0 {
        return Err(Error::Format(format!(
            "{}: {} bytes is not a whole number of {BEAT_LEN}-sample rows",
            path.display(),
            bin.len()
        )));
    }
    let mut rows = bin.chunks_exact(row_bytes);
    let mut beats = Vec::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: side.clone(),
        line,
        message,
    };
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line.trim() != "subject,session,peak,degenerate" {
                return Err(parse_err(lineno, format!("unexpected header `{line}`")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(
                lineno,
                format!("expected 4 fields, got {}", f.len()),
            ));
        }
        let session = f[1]
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid session `{}`", f[1])))?;
        let peak = f[2]
            .parse()
            .map_err(|_| parse_err(lineno, format!("invalid peak `{}`", f[2])))?;
        let degenerate = match f[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(parse_err(
                    lineno,
                    format!("invalid degenerate flag `{other}`"),
                ))
            }
        };
        let row = rows
            .next()
            .ok_or_else(|| parse_err(lineno, "more sidecar rows than beats".into()))?;
        beats.push(Heartbeat {
            samples: row
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            subject_id: f[0].to_string(),
            session_id: session,
            peak,
            degenerate,
        });
    }
    if rows.next().is_some() {
        return Err(Error::Format(format!(
            "{}: more beats than sidecar rows",
            path.display()
        )));
    }
    Ok(beats)
}
