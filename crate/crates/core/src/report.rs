//! Result grids and their CSV / JSON / Markdown renderings.
//!
//! Every grid cell keeps the per-episode evidence it was computed from, so a
//! number in a table can always be traced back to individual forward passes.
//! Rendering is a pure function of the results: identical results give
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ReportFormat};
use crate::error::{Error, Result};
use crate::eval::EvalOutcome;
use crate::lens::FrameSummary;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeValue {
    pub episode_id: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cell {
    /// `None` renders as an empty cell (e.g. an undefined baseline).
    pub value: Option<f64>,
    /// Outcomes of the intervened runs aggregated into `value`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outcomes: Vec<EvalOutcome>,
    /// Per-episode quantities aggregated into `value`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_episode: Vec<EpisodeValue>,
}

impl Cell {
    pub fn value(value: Option<f64>) -> Self {
        Self {
            value,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub label: String,
    /// Second descriptive column, e.g. the number of ablated tokens.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// File stem of the CSV rendering.
    pub name: String,
    pub title: String,
    pub row_header: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail_header: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<GridRow>,
    /// Decimal places used by the Markdown rendering.
    pub decimals: usize,
}

impl Grid {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.columns.len())
    }

    pub fn row(&self, label: &str) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.row(row)?.cells.get(c)?.value
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            if r.cells.len() != self.columns.len() {
                return Err(Error::Shape(format!(
                    "grid `{}` row `{}` has {} cells for {} columns",
                    self.name,
                    r.label,
                    r.cells.len(),
                    self.columns.len()
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        self.validate()?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec![self.row_header.clone()];
        header.extend(self.detail_header.iter().cloned());
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.label.clone()];
            if self.detail_header.is_some() {
                rec.push(r.detail.clone().unwrap_or_default());
            }
            rec.extend(r.cells.iter().map(|c| match c.value {
                Some(v) => format!("{v:.6}"),
                None => String::new(),
            }));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Input(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> Result<String> {
        self.validate()?;
        let mut out = String::new();
        let _ = writeln!(out, "### {}\n", self.title);
        let mut header = vec![self.row_header.as_str()];
        header.extend(self.detail_header.as_deref());
        header.extend(self.columns.iter().map(String::as_str));
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for r in &self.rows {
            let mut cells = vec![r.label.clone()];
            if self.detail_header.is_some() {
                cells.push(r.detail.clone().unwrap_or_default());
            }
            cells.extend(r.cells.iter().map(|c| match c.value {
                Some(v) => format!("{v:.*}", self.decimals),
                None => "n/a".to_string(),
            }));
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Input(format!("csv: {e}"))
}

/// Final-layer lens readout at one spatial location across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRecord {
    pub episode_id: u32,
    pub position: usize,
    pub frames: Vec<FrameSummary>,
}

/// Everything one circuit run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub schema_version: u32,
    pub circuit: String,
    pub config: ExperimentConfig,
    /// Episodes generated or loaded, before curation.
    pub n_episodes: usize,
    /// Episode ids that every grid is computed over.
    pub episode_ids: Vec<u32>,
    /// Unintervened outcomes shared by every grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baseline: Vec<EvalOutcome>,
    pub grids: Vec<Grid>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub temporal: Vec<TemporalRecord>,
}

impl ResultsBundle {
    pub fn grid(&self, name: &str) -> Option<&Grid> {
        self.grids.iter().find(|g| g.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bundle: Self = serde_json::from_str(text)?;
        if bundle.schema_version != RESULTS_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!(
                    "results schema {} is not supported (expected {RESULTS_SCHEMA_VERSION})",
                    bundle.schema_version
                ),
            ));
        }
        Ok(bundle)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_markdown(&self) -> Result<String> {
        let mut out = format!(
            "# {} results\n\nEpisodes: {} evaluated of {} loaded (seed {}).\n\n",
            self.circuit,
            self.episode_ids.len(),
            self.n_episodes,
            self.config.seed
        );
        for g in &self.grids {
            out.push_str(&g.to_markdown()?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the requested renderings into `dir` and returns the paths in
    /// the order written. CSV produces one file per grid.
    pub fn emit(&self, dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut formats = formats.to_vec();
        formats.sort();
        formats.dedup();
        let mut written = Vec::new();
        let mut put = |name: String, body: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        for f in formats {
            match f {
                ReportFormat::Csv => {
                    for g in &self.grids {
                        put(format!("{}.csv", g.name), g.to_csv()?)?;
                    }
                }
                ReportFormat::Json => {
                    put(format!("{}_results.json", self.circuit), self.to_json()?)?
                }
                ReportFormat::Md => {
                    put(format!("{}_summary.md", self.circuit), self.to_markdown()?)?
                }
            }
        }
        Ok(written)
    }
}
