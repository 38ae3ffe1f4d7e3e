//! Report artifacts: one JSON document per run plus figure-ready CSV tables.
//!
//! Byte stability is a contract here. The JSON serializer walks plain structs
//! (field order fixed at compile time) and the CSV writer formats every float
//! with the shortest representation that round-trips, so re-running a config
//! reproduces each artifact byte for byte and every table parses back into an
//! equal in-memory value.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::AuditReport64;

// ---------------------------------------------------------------------------
// JSON report
// ---------------------------------------------------------------------------

/// The configuration echoed into every report. Thread count is deliberately
/// absent: results do not depend on it, so it must not perturb the bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub n: usize,
    pub rho: f64,
    pub trials: usize,
    pub master_seed: u64,
    pub epsilon: f64,
    pub s: f64,
    pub x_max: f64,
    pub k0: usize,
    pub gamma: f64,
    pub s_grid: Vec<f64>,
    pub clt_k: usize,
    pub output_dir: String,
}

impl From<&ExperimentConfig> for ConfigEcho {
    fn from(cfg: &ExperimentConfig) -> Self {
        ConfigEcho {
            n: cfg.n,
            rho: cfg.rho,
            trials: cfg.trials,
            master_seed: cfg.master_seed,
            epsilon: cfg.epsilon,
            s: cfg.s,
            x_max: cfg.x_max,
            k0: cfg.k0,
            gamma: cfg.gamma,
            s_grid: cfg.s_grid.clone(),
            clt_k: cfg.clt_k,
            output_dir: cfg.output_dir.display().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditBlock {
    /// Abscissas the closed-form laws were probed on.
    pub grid: Vec<f64>,
    pub report: AuditReport64,
    pub all_hold: bool,
}

/// One standardized central-limit sample with its summary numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub mode: String,
    /// The abscissa (counting mode) or index (point mode) standardized.
    pub parameter: f64,
    pub mean: f64,
    pub variance: f64,
    pub ks_distance: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltBlock {
    pub k: usize,
    /// Abscissa matched to `k` through the mean-count law.
    pub s: f64,
    pub counting: CltSummary,
    pub point: CltSummary,
}

/// Fixed-range histogram; values beyond `hi` land in `overflow`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub overflow: u64,
}

/// Bins `values` into `bins` equal cells on `[lo, hi)`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let mut counts = vec![0u64; bins];
    let mut overflow = 0u64;
    let width = (hi - lo) / bins as f64;
    for &v in values {
        if v >= hi {
            overflow += 1;
        } else {
            let cell = ((v - lo) / width).floor().max(0.0) as usize;
            counts[cell.min(bins - 1)] += 1;
        }
    }
    Histogram { lo, hi, counts, overflow }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupSummary {
    pub count: usize,
    pub mean: f64,
    pub max: f64,
    pub histogram: Histogram,
}

/// Share of trials whose sup deviation stays under the widened slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRung {
    pub epsilon: f64,
    pub counting_fraction: f64,
    pub point_fraction: f64,
}

/// Share of trials whose deviation trace visits the strip
/// `slope - epsilon <= |value| <= slope + epsilon` at least once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub epsilon: f64,
    pub counting_fraction: f64,
    pub point_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidityBlock {
    pub s: f64,
    pub x_max: f64,
    pub k0: usize,
    pub k_max: usize,
    /// Coverage at epsilon, 2 epsilon, 4 epsilon; fractions are monotone in
    /// the widening by construction.
    pub coverage: Vec<CoverageRung>,
    pub band_entry: BandEntry,
    pub sup_counting: SupSummary,
    pub sup_point: SupSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentEntry {
    pub s: f64,
    pub ratio: Option<f64>,
    pub stderr: Option<f64>,
    /// The same ratio recomputed from each half of the trial set; their gap
    /// against `halves_stderr` is the stability check.
    pub first_half: Option<f64>,
    pub second_half: Option<f64>,
    pub halves_stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpMomentBlock {
    pub gamma: f64,
    pub trials: usize,
    pub entries: Vec<ExpMomentEntry>,
    /// Max minus min of the available ratios across the grid.
    pub ratio_spread: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelPoint {
    pub x: f64,
    pub diag: f64,
    pub err_estimate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCountCheck {
    pub x: f64,
    pub integrated: f64,
    pub mu: f64,
    pub abs_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBlock {
    pub rho: f64,
    pub points: Vec<KernelPoint>,
    /// Largest gap between the density at x and at -x over the probe set.
    pub evenness_max_gap: f64,
    pub mean_count: MeanCountCheck,
}

/// The single JSON document a run emits. Blocks a subcommand does not
/// compute stay `None` and are omitted from the serialized output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    /// Version-only identifier; no timestamps, hostnames, or paths that
    /// would break byte reproducibility.
    pub tool: String,
    pub config: ConfigEcho,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clt: Option<CltBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rigidity: Option<RigidityBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_moment: Option<ExpMomentBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelBlock>,
    /// File names (relative to the output directory) of the tables written
    /// alongside this report.
    pub csv_files: Vec<String>,
}

pub fn tool_identifier() -> String {
    format!("pearcey-lab {}", env!("CARGO_PKG_VERSION"))
}

/// Serializes the report; pretty-printed, trailing newline, stable bytes.
pub fn render_json(report: &JsonReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn parse_json(bytes: &[u8]) -> Result<JsonReport> {
    Ok(serde_json::from_slice(bytes)?)
}

pub fn write_json(report: &JsonReport, path: &Path) -> Result<()> {
    fs::write(path, render_json(report)?)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<JsonReport> {
    parse_json(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// CSV tables
// ---------------------------------------------------------------------------

/// One formatted CSV cell. Floats must be finite; `Display` for `f64` is the
/// shortest decimal that parses back to the same bits, which makes the
/// write-parse cycle lossless.
#[derive(Clone, Copy, Debug)]
pub enum Cell {
    Int(u64),
    Float(f64),
}

/// A row type bound to one fixed header line.
pub trait CsvRecord: Sized {
    const HEADER: &'static str;
    fn cells(&self) -> Vec<Cell>;
    fn from_cells(cells: &[&str]) -> Result<Self>;
}

fn col<T: std::str::FromStr>(cells: &[&str], idx: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = cells
        .get(idx)
        .ok_or_else(|| Error::input(format!("missing column {idx}")))?;
    raw.trim()
        .parse::<T>()
        .map_err(|e| Error::input(format!("column {idx} ({raw:?}): {e}")))
}

fn expect_width(cells: &[&str], width: usize) -> Result<()> {
    if cells.len() != width {
        return Err(Error::input(format!(
            "expected {width} columns, found {}",
            cells.len()
        )));
    }
    Ok(())
}

/// Renders header plus rows; separator ',', decimal '.', line ending LF.
pub fn render_csv<R: CsvRecord>(rows: &[R]) -> Result<String> {
    let mut out = String::new();
    out.push_str(R::HEADER);
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let cells = row.cells();
        for (j, cell) in cells.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            match *cell {
                Cell::Int(v) => {
                    let _ = write!(out, "{v}");
                }
                Cell::Float(v) => {
                    if !v.is_finite() {
                        return Err(Error::input(format!(
                            "row {i}: refusing to write non-finite value {v}"
                        )));
                    }
                    let _ = write!(out, "{v}");
                }
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_csv<R: CsvRecord>(text: &str) -> Result<Vec<R>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::input("empty table".to_string()))?;
    if header != R::HEADER {
        return Err(Error::input(format!(
            "header mismatch: expected {:?}, found {header:?}",
            R::HEADER
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let row = R::from_cells(&cells)
            .map_err(|e| Error::input(format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_csv<R: CsvRecord>(rows: &[R], path: &Path) -> Result<()> {
    fs::write(path, render_csv(rows)?)?;
    Ok(())
}

pub fn read_csv<R: CsvRecord>(path: &Path) -> Result<Vec<R>> {
    parse_csv(&fs::read_to_string(path)?)
}

/// Counting trajectory of the plotted trial against the mean-count law and
/// its widened band.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountingFigureRow {
    pub x: f64,
    pub count: f64,
    pub mu: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl CsvRecord for CountingFigureRow {
    const HEADER: &'static str = "x,N_of_x,mu,band_lo,band_hi";

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Float(self.x),
            Cell::Float(self.count),
            Cell::Float(self.mu),
            Cell::Float(self.band_lo),
            Cell::Float(self.band_hi),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        expect_width(cells, 5)?;
        Ok(CountingFigureRow {
            x: col(cells, 0)?,
            count: col(cells, 1)?,
            mu: col(cells, 2)?,
            band_lo: col(cells, 3)?,
            band_hi: col(cells, 4)?,
        })
    }
}

/// Normalized counting deviation of the plotted trial with the guide levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CountingRatioRow {
    pub x: f64,
    pub ratio: f64,
    pub guide_hi: f64,
    pub guide_lo: f64,
}

impl CsvRecord for CountingRatioRow {
    const HEADER: &'static str = "x,ratio,guide_hi,guide_lo";

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Float(self.x),
            Cell::Float(self.ratio),
            Cell::Float(self.guide_hi),
            Cell::Float(self.guide_lo),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        expect_width(cells, 4)?;
        Ok(CountingRatioRow {
            x: col(cells, 0)?,
            ratio: col(cells, 1)?,
            guide_hi: col(cells, 2)?,
            guide_lo: col(cells, 3)?,
        })
    }
}

/// Ordered point magnitudes of the plotted trial against the inverse law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointFigureRow {
    pub k: u64,
    pub x_k: f64,
    pub mu_inv: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl CsvRecord for PointFigureRow {
    const HEADER: &'static str = "k,x_k,mu_inv,band_lo,band_hi";

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.k),
            Cell::Float(self.x_k),
            Cell::Float(self.mu_inv),
            Cell::Float(self.band_lo),
            Cell::Float(self.band_hi),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        expect_width(cells, 5)?;
        Ok(PointFigureRow {
            k: col(cells, 0)?,
            x_k: col(cells, 1)?,
            mu_inv: col(cells, 2)?,
            band_lo: col(cells, 3)?,
            band_hi: col(cells, 4)?,
        })
    }
}

/// Normalized point deviation of the plotted trial with the guide levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointRatioRow {
    pub k: u64,
    pub ratio: f64,
    pub guide_hi: f64,
    pub guide_lo: f64,
}

impl CsvRecord for PointRatioRow {
    const HEADER: &'static str = "k,ratio,guide_hi,guide_lo";

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.k),
            Cell::Float(self.ratio),
            Cell::Float(self.guide_hi),
            Cell::Float(self.guide_lo),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        expect_width(cells, 4)?;
        Ok(PointRatioRow {
            k: col(cells, 0)?,
            ratio: col(cells, 1)?,
            guide_hi: col(cells, 2)?,
            guide_lo: col(cells, 3)?,
        })
    }
}

/// Correlation-kernel diagonal samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelDiagRow {
    pub x: f64,
    pub diag: f64,
    pub err_estimate: f64,
}

impl CsvRecord for KernelDiagRow {
    const HEADER: &'static str = "x,diag,err_estimate";

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Float(self.x),
            Cell::Float(self.diag),
            Cell::Float(self.err_estimate),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        expect_width(cells, 3)?;
        Ok(KernelDiagRow {
            x: col(cells, 0)?,
            diag: col(cells, 1)?,
            err_estimate: col(cells, 2)?,
        })
    }
}

/// Exponential-moment ratio estimates over the abscissa grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpMomentRow {
    pub s: f64,
    pub gamma: f64,
    pub r: f64,
    pub stderr: f64,
}

impl CsvRecord for ExpMomentRow {
    const HEADER: &'static str = "s,gamma,r,stderr";

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Float(self.s),
            Cell::Float(self.gamma),
            Cell::Float(self.r),
            Cell::Float(self.stderr),
        ]
    }

    fn from_cells(cells: &[&str]) -> Result<Self> {
        expect_width(cells, 4)?;
        Ok(ExpMomentRow {
            s: col(cells, 0)?,
            gamma: col(cells, 1)?,
            r: col(cells, 2)?,
            stderr: col(cells, 3)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> JsonReport {
        JsonReport {
            tool: tool_identifier(),
            config: ConfigEcho::from(&ExperimentConfig::default()),
            audit: None,
            clt: None,
            rigidity: None,
            exp_moment: Some(ExpMomentBlock {
                gamma: 0.5,
                trials: 4,
                entries: vec![ExpMomentEntry {
                    s: 8.0,
                    ratio: Some(1.02),
                    stderr: Some(0.03),
                    first_half: Some(1.01),
                    second_half: Some(1.04),
                    halves_stderr: Some(0.05),
                }],
                ratio_spread: Some(0.0),
            }),
            kernel: None,
            csv_files: vec!["expmoment.csv".to_string()],
        }
    }

    #[test]
    fn json_render_is_stable_and_parses_back() {
        let report = sample_report();
        let a = render_json(&report).unwrap();
        let b = render_json(&report).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.last(), Some(&b'\n'));
        let back = parse_json(&a).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn json_omits_absent_blocks() {
        let bytes = render_json(&sample_report()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("\"exp_moment\""));
        assert!(!text.contains("\"rigidity\""));
        assert!(!text.contains("\"threads\""));
    }

    #[test]
    fn csv_round_trip_preserves_every_bit() {
        let rows = vec![
            CountingFigureRow {
                x: 1.05,
                count: 0.0,
                mu: 0.443_152_157_760_474_3,
                band_lo: -0.1,
                band_hi: 1.0 / 3.0,
            },
            CountingFigureRow {
                x: 30.0,
                count: 38.0,
                mu: 38.521_747_317_84,
                band_lo: 36.3,
                band_hi: 40.7,
            },
        ];
        let text = render_csv(&rows).unwrap();
        assert!(text.starts_with("x,N_of_x,mu,band_lo,band_hi\n"));
        assert!(!text.contains('\r'));
        let back: Vec<CountingFigureRow> = parse_csv(&text).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn csv_integer_column_round_trips() {
        let rows = vec![
            PointFigureRow {
                k: 2,
                x_k: 2.9,
                mu_inv: 3.1,
                band_lo: 2.0,
                band_hi: 4.5,
            },
            PointFigureRow {
                k: 38,
                x_k: 29.4,
                mu_inv: 29.8,
                band_lo: 27.9,
                band_hi: 31.6,
            },
        ];
        let text = render_csv(&rows).unwrap();
        let back: Vec<PointFigureRow> = parse_csv(&text).unwrap();
        assert_eq!(back, rows);
        assert!(text.lines().nth(1).unwrap().starts_with("2,"));
    }

    #[test]
    fn csv_rejects_wrong_header_and_ragged_rows() {
        let bad_header = "x,n,mu,band_lo,band_hi\n1,2,3,4,5\n";
        assert!(parse_csv::<CountingFigureRow>(bad_header).is_err());
        let ragged = "x,N_of_x,mu,band_lo,band_hi\n1,2,3,4\n";
        assert!(parse_csv::<CountingFigureRow>(ragged).is_err());
        let garbage = "x,N_of_x,mu,band_lo,band_hi\n1,2,three,4,5\n";
        assert!(parse_csv::<CountingFigureRow>(garbage).is_err());
    }

    #[test]
    fn csv_refuses_non_finite_values() {
        let rows = vec![KernelDiagRow {
            x: 0.0,
            diag: f64::NAN,
            err_estimate: 0.0,
        }];
        assert!(render_csv(&rows).is_err());
    }

    #[test]
    fn histogram_bins_and_overflow() {
        let h = histogram(&[0.0, 0.1, 0.95, 1.0, 2.9, 3.0, 5.0], 0.0, 3.0, 3);
        assert_eq!(h.counts, vec![3, 1, 1]);
        assert_eq!(h.overflow, 2);
    }
}
