//! Metrics files, summary tables and SVG line plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::error::{Error, Result};
use crate::rpeak::mean_std;

pub const PLOT_ACCURACY_VS_BEATS: &str = "accuracy_vs_beats";
pub const PLOT_FAR_FRR: &str = "far_frr";
pub const PLOT_TRAINING: &str = "training";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// Which plot the curve belongs to, e.g. [`PLOT_FAR_FRR`].
    pub plot: String,
    pub name: String,
    pub points: Vec<[f64; 2]>,
}

/// The `metrics.json` every evaluating command writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub curves: Vec<Curve>,
    #[serde(default)]
    pub detail: serde_json::Value,
}

impl MetricsReport {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        MetricsReport {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            scalars: BTreeMap::new(),
            curves: Vec::new(),
            detail: serde_json::Value::Null,
        }
    }

    pub fn scalar(&mut self, name: &str, value: f64) -> &mut Self {
        self.scalars.insert(name.to_string(), value);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        artifact::read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        artifact::write_json(self, path)
    }
}

// ---------------------------------------------------------------------------
// Tables

/// One row per fold or partition, plus a `mean±std` summary row.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTable {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<f64>)>,
}

impl RunTable {
    pub fn new(columns: &[&str]) -> Self {
        RunTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, run: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.columns.len(), "row width");
        self.rows.push((run.into(), values));
    }

    /// Per-column mean and population standard deviation.
    pub fn summary(&self) -> Vec<(f64, f64)> {
        (0..self.columns.len())
            .map(|c| mean_std(&self.rows.iter().map(|r| r.1[c]).collect::<Vec<_>>()))
            .collect()
    }

    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut s = config_hash.map(artifact::hash_comment).unwrap_or_default();
        s.push_str("run");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (run, vals) in &self.rows {
            s.push_str(run);
            for v in vals {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s.push_str("mean±std");
        for (m, sd) in self.summary() {
            let _ = write!(s, ",{m:.6}±{sd:.6}");
        }
        s.push('\n');
        s
    }
}

// ---------------------------------------------------------------------------
// Provenance checks

/// The config hash stamped into an artifact: the `config_hash` field of a
/// JSON file, the leading comment of a text file, or the JSON sidecar of a
/// model or beat file.
pub fn artifact_hash(path: &Path) -> Result<Option<String>> {
    let from_json = |p: &Path| -> Result<Option<String>> {
        let v: serde_json::Value = artifact::read_json(p)?;
        Ok(v.get("config_hash")
            .and_then(|h| h.as_str())
            .map(str::to_string))
    };
    if path.extension().is_some_and(|e| e == "json") {
        return from_json(path);
    }
    for suffix in [".json", ".csv"] {
        let mut side = path.as_os_str().to_owned();
        side.push(suffix);
        let side = PathBuf::from(side);
        if side.is_file() {
            return if suffix == ".json" {
                from_json(&side)
            } else {
                let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                Ok(artifact::read_csv_hash(&text))
            };
        }
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(artifact::read_csv_hash(&String::from_utf8_lossy(
        &bytes[..bytes.len().min(256)],
    )))
}

/// The common hash of all inputs. Differing or missing stamps are an error
/// unless `force` is set, in which case `None` is returned.
pub fn common_hash(stamps: &[(PathBuf, Option<String>)], force: bool) -> Result<Option<String>> {
    let first = match stamps.first() {
        Some((_, h)) => h.clone(),
        None => return Err(Error::invalid("no report inputs")),
    };
    for (p, h) in stamps {
        if h.is_none() || *h != first {
            if force {
                return Ok(None);
            }
            return Err(Error::Protocol(format!(
                "config hash mismatch: {} has {}, {} has {} (pass --force to combine)",
                stamps[0].0.display(),
                first.as_deref().unwrap_or("no hash"),
                p.display(),
                h.as_deref().unwrap_or("no hash")
            )));
        }
    }
    Ok(first)
}

// ---------------------------------------------------------------------------
// SVG

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub fn plot_labels(plot: &str) -> (&'static str, &'static str, &'static str) {
    match plot {
        PLOT_ACCURACY_VS_BEATS => ("Accuracy vs fused beats", "beats per decision", "accuracy"),
        PLOT_FAR_FRR => ("FAR / FRR", "threshold", "rate"),
        PLOT_TRAINING => ("Training history", "epoch", "loss"),
        _ => ("", "x", "y"),
    }
}

/// Data confined to [0, 1] is drawn on exactly that range.
fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) || (lo >= 0.0 && hi <= 1.0 && hi - lo > 0.2) {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Static SVG with axes, five ticks per axis and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, curves: &[&Curve]) -> String {
    let pts = curves
        .iter()
        .flat_map(|c| c.points.iter())
        .filter(|p| p[0].is_finite() && p[1].is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in pts {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let (x0, x1) = nice_range(x0, x1);
    let (y0, y1) = nice_range(y0, y1);
    let (ml, mr, mt, mb) = MARGIN;
    let pw = WIDTH - ml - mr;
    let ph = HEIGHT - mt - mb;
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{a:.1}" x2="{x:.1}" y2="{b:.1}" stroke="black"/><text x="{x:.1}" y="{t:.1}" text-anchor="middle">{xv:.3}</text>"#,
            x = sx(xv),
            a = mt + ph,
            b = mt + ph + 4.0,
            t = mt + ph + 16.0
        );
        let _ = writeln!(
            s,
            r#"<line x1="{a:.1}" y1="{y:.1}" x2="{ml}" y2="{y:.1}" stroke="black"/><text x="{t:.1}" y="{ty:.1}" text-anchor="end">{yv:.3}</text>"#,
            y = sy(yv),
            a = ml - 4.0,
            t = ml - 6.0,
            ty = sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{y}" text-anchor="middle" transform="rotate(-90 15 {y})">{}</text>"#,
        escape(y_label),
        y = mt + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = c
            .points
            .iter()
            .filter(|p| p[0].is_finite() && p[1].is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p[0]), sy(p[1])))
            .collect();
        if path.len() == 1 {
            let _ = writeln!(
                s,
                r#"<circle cx="{}" r="3" fill="{color}"/>"#,
                path[0].replacen(',', "\" cy=\"", 1)
            );
        } else if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = mt + 14.0 + 14.0 * i as f64;
        let lx = ml + pw - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(&c.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one SVG per distinct plot kind in `curves` into `dir`; returns
/// the written paths.
pub fn write_plots(curves: &[Curve], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut by_plot: BTreeMap<&str, Vec<&Curve>> = BTreeMap::new();
    for c in curves {
        by_plot.entry(&c.plot).or_default().push(c);
    }
    let mut out = Vec::new();
    for (plot, cs) in by_plot {
        let (title, xl, yl) = plot_labels(plot);
        let path = dir.join(format!("{plot}.svg"));
        fs::write(&path, line_plot_svg(title, xl, yl, &cs)).map_err(|e| Error::io(&path, e))?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_row_is_mean_and_std() {
        let mut t = RunTable::new(&["accuracy"]);
        t.push("fold1", vec![0.5]);
        t.push("fold2", vec![1.0]);
        let csv = t.to_csv(Some("ff"));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# config_hash=ff");
        assert_eq!(lines[1], "run,accuracy");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[4], "mean±std,0.750000±0.250000");
    }

    #[test]
    fn mixed_hashes_refused() {
        let a = (PathBuf::from("a"), Some("1".to_string()));
        let b = (PathBuf::from("b"), Some("2".to_string()));
        assert!(matches!(
            common_hash(&[a.clone(), b.clone()], false),
            Err(Error::Protocol(_))
        ));
        assert_eq!(common_hash(&[a.clone(), b], true).unwrap(), None);
        assert_eq!(
            common_hash(&[a.clone(), a], false).unwrap().as_deref(),
            Some("1")
        );
    }

    #[test]
    fn svg_contains_every_curve() {
        let c1 = Curve {
            plot: PLOT_FAR_FRR.into(),
            name: "FAR".into(),
            points: vec![[0.0, 1.0], [1.0, 0.0]],
        };
        let c2 = Curve {
            plot: PLOT_FAR_FRR.into(),
            name: "FRR <b>".into(),
            points: vec![[0.0, 0.0], [1.0, 1.0]],
        };
        let svg = line_plot_svg("t", "x", "y", &[&c1, &c2]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("FRR &lt;b&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
