//! Run artifacts: line-delimited result records, the run manifest, CSV grids
//! and SVG heatmaps. Everything numeric is written with Rust's shortest
//! round-trip float formatting so identical inputs give identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceModel, QubitId, GRID_SIZE};
use crate::error::{Error, Result};

pub const RECORD_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Populations,
    Correlation,
    FringeGrid,
    Fit,
    CalibrationStep,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub kind: RecordKind,
    pub schema_version: u32,
    /// Time or sweep coordinates locating the record.
    pub coordinates: BTreeMap<String, f64>,
    pub payload: serde_json::Value,
}

impl ResultRecord {
    pub fn new(kind: RecordKind, payload: impl Serialize) -> Result<Self> {
        Ok(ResultRecord {
            kind,
            schema_version: RECORD_SCHEMA_VERSION,
            coordinates: BTreeMap::new(),
            payload: serde_json::to_value(payload)?,
        })
    }

    pub fn at(mut self, name: &str, value: f64) -> Self {
        self.coordinates.insert(name.to_string(), value);
        self
    }
}

/// Append-only JSONL writer; one record per line.
pub struct RecordSink {
    path: PathBuf,
    out: BufWriter<File>,
    written: usize,
}

impl RecordSink {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(RecordSink {
            path,
            out: BufWriter::new(file),
            written: 0,
        })
    }

    pub fn write(&mut self, record: &ResultRecord) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n").map_err(|e| Error::io(&self.path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ResultRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub scenario: String,
    pub scenario_name: String,
    pub kind: String,
    pub seed: u64,
    pub code_version: String,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub status: RunStatus,
    pub overrides: Vec<String>,
    pub outputs: Vec<String>,
    pub error: Option<String>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn begin(scenario: &str, name: &str, kind: &str, seed: u64, overrides: Vec<String>) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            scenario: scenario.to_string(),
            scenario_name: name.to_string(),
            kind: kind.to_string(),
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: unix_now(),
            finished_unix_s: None,
            status: RunStatus::Running,
            overrides,
            outputs: Vec::new(),
            error: None,
        }
    }

    pub fn finish(&mut self, outcome: std::result::Result<(), String>) {
        self.finished_unix_s = Some(unix_now());
        match outcome {
            Ok(()) => self.status = RunStatus::Succeeded,
            Err(e) => {
                self.status = RunStatus::Failed;
                self.error = Some(e);
            }
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: RunManifest = serde_json::from_str(&text)?;
        m.validate(dir)?;
        Ok(m)
    }

    /// Schema version, terminal status consistency and listed outputs present.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Config(format!("manifest schema {} unsupported", self.schema_version)));
        }
        match self.status {
            RunStatus::Running => {}
            RunStatus::Succeeded if self.error.is_some() || self.finished_unix_s.is_none() => {
                return Err(Error::Config("succeeded manifest carries an error or no finish time".into()))
            }
            RunStatus::Failed if self.error.is_none() => {
                return Err(Error::Config("failed manifest without an error".into()))
            }
            _ => {}
        }
        for o in &self.outputs {
            if !dir.join(o).is_file() {
                return Err(Error::Config(format!("manifest lists missing output {o}")));
            }
        }
        Ok(())
    }
}

/// CSV with a header row `row_label,<column labels…>`.
pub fn write_matrix_csv(
    path: &Path,
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &DMatrix<f64>,
) -> Result<()> {
    if row_labels.len() != m.nrows() || col_labels.len() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows() * m.ncols(),
            got: row_labels.len() * col_labels.len(),
        });
    }
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec![corner.to_string()];
    header.extend(col_labels.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (r, label) in row_labels.iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.ncols()).map(|c| format!("{}", m[(r, c)])));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledMatrix {
    pub corner: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: DMatrix<f64>,
}

pub fn read_matrix_csv(path: &Path) -> Result<LabeledMatrix> {
    let csv_err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let corner = header.get(0).unwrap_or("").to_string();
    let col_labels: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut row_labels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        row_labels.push(rec.get(0).unwrap_or("").to_string());
        for cell in rec.iter().skip(1) {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: `{cell}`: {e}", path.display())))?,
            );
        }
    }
    if values.len() != row_labels.len() * col_labels.len() {
        return Err(Error::Config(format!("{}: ragged rows", path.display())));
    }
    Ok(LabeledMatrix {
        corner,
        values: DMatrix::from_row_slice(row_labels.len(), col_labels.len(), &values),
        row_labels,
        col_labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorScale {
    /// White to dark blue over [min, max].
    Sequential,
    /// Blue through white to red, symmetric about zero.
    Diverging,
}

impl std::str::FromStr for ColorScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(ColorScale::Sequential),
            "diverging" => Ok(ColorScale::Diverging),
            _ => Err(Error::UnknownStrategy {
                kind: "color scale",
                name: s.to_string(),
                available: "diverging, sequential".into(),
            }),
        }
    }
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [u8; 3] {
    let mut out = [0u8; 3];
    for k in 0..3 {
        out[k] = (a[k] + (b[k] - a[k]) * t).round().clamp(0.0, 255.0) as u8;
    }
    out
}

impl ColorScale {
    fn color(self, v: f64, lo: f64, hi: f64) -> [u8; 3] {
        const WHITE: [f64; 3] = [255.0, 255.0, 255.0];
        const BLUE: [f64; 3] = [33.0, 72.0, 150.0];
        const RED: [f64; 3] = [178.0, 34.0, 34.0];
        match self {
            ColorScale::Sequential => {
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                lerp(WHITE, BLUE, t.clamp(0.0, 1.0))
            }
            ColorScale::Diverging => {
                let m = lo.abs().max(hi.abs());
                let t = if m > 0.0 { (v / m).clamp(-1.0, 1.0) } else { 0.0 };
                if t >= 0.0 {
                    lerp(WHITE, RED, t)
                } else {
                    lerp(WHITE, BLUE, -t)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; `None` cells are drawn as gaps.
    pub cells: Vec<Option<f64>>,
    pub scale: ColorScale,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

const CELL: usize = 24;
const MARGIN: usize = 48;

impl Heatmap {
    pub fn from_matrix(m: &DMatrix<f64>, scale: ColorScale) -> Self {
        Heatmap {
            rows: m.nrows(),
            cols: m.ncols(),
            cells: (0..m.nrows()).flat_map(|r| (0..m.ncols()).map(move |c| (r, c))).map(|rc| Some(m[rc])).collect(),
            scale,
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
        }
    }

    /// 8×8 device picture; non-functional qubits become gaps.
    pub fn device(device: &DeviceModel, values: &BTreeMap<QubitId, f64>, scale: ColorScale) -> Self {
        let mut cells = vec![None; GRID_SIZE * GRID_SIZE];
        for (q, v) in values {
            if device.is_functional(*q) {
                let (r, c) = q.grid_position();
                cells[r * GRID_SIZE + c] = Some(*v);
            }
        }
        Heatmap {
            rows: GRID_SIZE,
            cols: GRID_SIZE,
            cells,
            scale,
            title: String::new(),
            x_label: "column".into(),
            y_label: "row".into(),
        }
    }

    pub fn titled(mut self, title: &str, x_label: &str, y_label: &str) -> Self {
        self.title = title.to_string();
        self.x_label = x_label.to_string();
        self.y_label = y_label.to_string();
        self
    }

    pub fn render(&self) -> Result<String> {
        if self.rows == 0 || self.cols == 0 || self.cells.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: self.cells.len(),
            });
        }
        if let Some(i) = self.cells.iter().position(|c| c.is_some_and(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "heatmap cell ({}, {}) is not finite",
                i / self.cols,
                i % self.cols
            )));
        }
        let present = self.cells.iter().flatten();
        let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
        let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
        let (w, h) = (self.cols * CELL + 2 * MARGIN, self.rows * CELL + 2 * MARGIN);
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(s, r##"<rect width="{w}" height="{h}" fill="#ffffff"/>"##);
        if !self.title.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
                w / 2,
                MARGIN / 2,
                escape(&self.title)
            );
        }
        for r in 0..self.rows {
            for c in 0..self.cols {
                let Some(v) = self.cells[r * self.cols + c] else {
                    continue;
                };
                let [cr, cg, cb] = self.scale.color(v, lo, hi);
                let _ = writeln!(
                    s,
                    r##"<rect x="{}" y="{}" width="{CELL}" height="{CELL}" fill="#{cr:02x}{cg:02x}{cb:02x}"><title>({r}, {c}) {v}</title></rect>"##,
                    MARGIN + c * CELL,
                    MARGIN + r * CELL
                );
            }
        }
        if !self.x_label.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
                w / 2,
                h - MARGIN / 3,
                escape(&self.x_label)
            );
        }
        if !self.y_label.is_empty() {
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 {x} {y})">{}</text>"#,
                escape(&self.y_label),
                x = MARGIN / 3,
                y = h / 2
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">range [{lo:.4}, {hi:.4}]</text>"#,
            w - 4,
            h - 4
        );
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_heatmap(m: &DMatrix<f64>, scale: ColorScale, title: &str, x_label: &str, y_label: &str) -> Result<String> {
    Heatmap::from_matrix(m, scale).titled(title, x_label, y_label).render()
}
