//! End-to-end experiment execution: draw trials in parallel, reduce them into
//! report blocks, and stage figure-ready tables.
//!
//! Determinism contract: trial `i` is fully determined by `(master_seed, i)`,
//! trials are merged in index order, and every reduction below is a
//! sequential fold over that order, so the emitted artifacts are identical
//! for any worker-thread count.

use std::path::PathBuf;

use crate::config::ExperimentConfig;
use crate::ensemble::{sample_many, SpectrumSample};
use crate::error::{Error, Result};
use crate::kernel::{kernel_diag, mean_count, QuadratureSpec};
use crate::report::{
    histogram, AuditBlock, BandEntry, CltBlock, CltSummary, ConfigEcho, CountingFigureRow,
    CountingRatioRow, CoverageRung, ExpMomentBlock, ExpMomentEntry, ExpMomentRow, JsonReport,
    KernelBlock, KernelDiagRow, KernelPoint, MeanCountCheck, PointFigureRow, PointRatioRow,
    RigidityBlock, SupSummary,
};
use crate::scaling::{audit_conditions, counting_slope, default_audit_grid, point_slope};
use crate::stats::{
    clt_counting_from_samples, clt_point_from_samples, counting_step, coverage_fractions,
    exp_moment_from_samples, ks_statistic, normal_cdf, StepFunction,
};
use crate::{ModelParams64, SpectrumSample64};

/// What a CLI subcommand asks the pipeline to produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Audit,
    Simulate,
    Clt,
    Rigidity,
    Kernel,
    ExpMoment,
    Figures,
}

/// The report blocks a task computes.
#[derive(Clone, Copy, Debug, Default)]
pub struct BlockSet {
    pub audit: bool,
    pub clt: bool,
    pub rigidity: bool,
    pub exp_moment: bool,
    pub kernel: bool,
    pub figures: bool,
}

impl Task {
    pub fn blocks(self) -> BlockSet {
        match self {
            Task::Audit => BlockSet {
                audit: true,
                ..BlockSet::default()
            },
            Task::Simulate => BlockSet {
                audit: true,
                clt: true,
                rigidity: true,
                exp_moment: true,
                figures: true,
                ..BlockSet::default()
            },
            Task::Clt => BlockSet {
                clt: true,
                ..BlockSet::default()
            },
            // The rigidity evidence is read against the figure tables, so a
            // rigidity run stages them too.
            Task::Rigidity => BlockSet {
                rigidity: true,
                figures: true,
                ..BlockSet::default()
            },
            Task::Kernel => BlockSet {
                kernel: true,
                ..BlockSet::default()
            },
            Task::ExpMoment => BlockSet {
                exp_moment: true,
                ..BlockSet::default()
            },
            Task::Figures => BlockSet {
                figures: true,
                ..BlockSet::default()
            },
        }
    }
}

/// In-memory CSV tables staged by a run; vectors are empty for tables the
/// task does not produce.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Tables {
    pub figure1_counting: Vec<CountingFigureRow>,
    pub figure1_ratio: Vec<CountingRatioRow>,
    pub figure2_points: Vec<PointFigureRow>,
    pub figure2_ratio: Vec<PointRatioRow>,
    pub kernel_diag: Vec<KernelDiagRow>,
    pub exp_moment: Vec<ExpMomentRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub report: JsonReport,
    pub tables: Tables,
}

/// Number of abscissas in the figure tables.
const FIGURE_GRID: usize = 512;
/// Interior probes per constant segment when scanning a deviation trace.
const TRACE_PROBES: usize = 16;
/// Probe points for the density evenness check.
const EVENNESS_PROBES: [f64; 3] = [1.0, 2.5, 4.0];
/// Radius for the integrated-density cross-check against the mean-count law.
const MEAN_COUNT_RADIUS: f64 = 4.0;
/// The density table never extends past this point: beyond it the
/// exponential growth of the second kernel factor amplifies quadrature noise
/// past the signal.
const DENSITY_TABLE_LIMIT: f64 = 12.0;

/// Runs `task` under `config` and returns the report plus staged tables.
/// Nothing touches the filesystem here; see [`emit`].
pub fn run_experiment(config: &ExperimentConfig, task: Task) -> Result<ExperimentOutput> {
    config.validate()?;
    let params = config.params()?;
    let blocks = task.blocks();

    let trials_needed = if blocks.clt || blocks.rigidity || blocks.exp_moment {
        config.trials
    } else if blocks.figures {
        1
    } else {
        0
    };
    let samples = draw_trials(config, trials_needed)?;

    let mut tables = Tables::default();
    let mut report = JsonReport {
        tool: crate::report::tool_identifier(),
        config: ConfigEcho::from(config),
        audit: None,
        clt: None,
        rigidity: None,
        exp_moment: None,
        kernel: None,
        csv_files: Vec::new(),
    };

    if blocks.audit {
        report.audit = Some(audit_block(&params)?);
    }
    if blocks.clt {
        report.clt = Some(clt_block(config, &params, &samples)?);
    }
    if blocks.rigidity {
        report.rigidity = Some(rigidity_block(config, &params, &samples)?);
    }
    if blocks.exp_moment {
        let block = exp_moment_block(config, &params, &samples)?;
        tables.exp_moment = exp_moment_rows(config, &block);
        report.exp_moment = Some(block);
    }
    if blocks.kernel {
        let (block, rows) = kernel_block(config, &params)?;
        tables.kernel_diag = rows;
        report.kernel = Some(block);
    }
    if blocks.figures {
        let trial = samples
            .first()
            .ok_or_else(|| Error::input("figure tables need at least one trial".to_string()))?;
        figure_tables(config, &params, trial, &mut tables)?;
    }

    report.csv_files = csv_names(&tables);
    Ok(ExperimentOutput { report, tables })
}

/// Writes the JSON report and every staged table into the output directory;
/// returns the paths written, report first.
pub fn emit(config: &ExperimentConfig, output: &ExperimentOutput) -> Result<Vec<PathBuf>> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let report_path = dir.join("report.json");
    crate::report::write_json(&output.report, &report_path)?;
    written.push(report_path);

    let t = &output.tables;
    if !t.figure1_counting.is_empty() {
        let p = dir.join("figure1_counting.csv");
        crate::report::write_csv(&t.figure1_counting, &p)?;
        written.push(p);
    }
    if !t.figure1_ratio.is_empty() {
        let p = dir.join("figure1_ratio.csv");
        crate::report::write_csv(&t.figure1_ratio, &p)?;
        written.push(p);
    }
    if !t.figure2_points.is_empty() {
        let p = dir.join("figure2_points.csv");
        crate::report::write_csv(&t.figure2_points, &p)?;
        written.push(p);
    }
    if !t.figure2_ratio.is_empty() {
        let p = dir.join("figure2_ratio.csv");
        crate::report::write_csv(&t.figure2_ratio, &p)?;
        written.push(p);
    }
    if !t.kernel_diag.is_empty() {
        let p = dir.join("kernel_diag.csv");
        crate::report::write_csv(&t.kernel_diag, &p)?;
        written.push(p);
    }
    if !t.exp_moment.is_empty() {
        let p = dir.join("expmoment.csv");
        crate::report::write_csv(&t.exp_moment, &p)?;
        written.push(p);
    }
    Ok(written)
}

fn csv_names(tables: &Tables) -> Vec<String> {
    let mut names = Vec::new();
    if !tables.figure1_counting.is_empty() {
        names.push("figure1_counting.csv".to_string());
    }
    if !tables.figure1_ratio.is_empty() {
        names.push("figure1_ratio.csv".to_string());
    }
    if !tables.figure2_points.is_empty() {
        names.push("figure2_points.csv".to_string());
    }
    if !tables.figure2_ratio.is_empty() {
        names.push("figure2_ratio.csv".to_string());
    }
    if !tables.kernel_diag.is_empty() {
        names.push("kernel_diag.csv".to_string());
    }
    if !tables.exp_moment.is_empty() {
        names.push("expmoment.csv".to_string());
    }
    names
}

/// Draws `count` trials inside a pool of the configured width. Trial order
/// in the result matches trial index regardless of scheduling.
fn draw_trials(config: &ExperimentConfig, count: usize) -> Result<Vec<SpectrumSample64>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let configs = (0..count)
        .map(|i| config.ensemble_config(i))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::config(format!("could not build a {}-thread pool: {e}", config.threads)))?;
    pool.install(|| sample_many(&configs))
}

fn audit_block(params: &ModelParams64) -> Result<AuditBlock> {
    let grid: Vec<f64> = default_audit_grid(15);
    let report = audit_conditions(params, &grid)?;
    let all_hold = report.all_hold();
    Ok(AuditBlock {
        grid,
        report,
        all_hold,
    })
}

fn clt_block(
    config: &ExperimentConfig,
    params: &ModelParams64,
    samples: &[SpectrumSample64],
) -> Result<CltBlock> {
    let k = config.clt_k;
    let s = params.mu_inv(k as f64)?;
    let counting = clt_counting_from_samples(samples, params, s)?;
    let point = clt_point_from_samples(samples, params, k)?;
    let summarize = |mode: &str, parameter: f64, values: Vec<f64>| -> Result<CltSummary> {
        let ks = ks_statistic(&values, normal_cdf)?;
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let variance = if values.len() < 2 {
            0.0
        } else {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (values.len() - 1) as f64
        };
        Ok(CltSummary {
            mode: mode.to_string(),
            parameter,
            mean,
            variance,
            ks_distance: ks,
            values,
        })
    };
    Ok(CltBlock {
        k,
        s,
        counting: summarize("counting", s, counting.standardized_values)?,
        point: summarize("point", k as f64, point.standardized_values)?,
    })
}

fn sup_summary(values: &[f64]) -> SupSummary {
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count.max(1) as f64;
    let max = values.iter().copied().fold(0.0f64, f64::max);
    SupSummary {
        count,
        mean,
        max,
        histogram: histogram(values, 0.0, 2.0, 40),
    }
}

fn rigidity_block(
    config: &ExperimentConfig,
    params: &ModelParams64,
    samples: &[SpectrumSample64],
) -> Result<RigidityBlock> {
    let k_max = config.k_max()?;
    let mut sup_c = Vec::with_capacity(samples.len());
    let mut sup_p = Vec::with_capacity(samples.len());
    let mut entered_c = 0usize;
    let mut entered_p = 0usize;
    for (idx, sample) in samples.iter().enumerate() {
        let per_trial = || -> Result<(f64, f64, bool, bool)> {
            let step = counting_step(sample)?;
            let sc =
                crate::stats::sup_counting_deviation(&step, params, config.s, config.x_max)?;
            let sp = crate::stats::sup_point_deviation(sample, params, config.k0, k_max)?;
            let ec = counting_trace_enters_strip(
                &step,
                params,
                config.epsilon,
                config.s,
                config.x_max,
            )?;
            let ep =
                point_trace_enters_strip(sample, params, config.epsilon, config.k0, k_max)?;
            Ok((sc.value, sp.value, ec, ep))
        };
        let (sc, sp, ec, ep) = per_trial().map_err(|e| {
            e.in_trial(idx, crate::seed::derive_trial_seed(config.master_seed, idx as u64))
        })?;
        sup_c.push(sc);
        sup_p.push(sp);
        entered_c += usize::from(ec);
        entered_p += usize::from(ep);
    }
    let coverage = [1.0, 2.0, 4.0]
        .iter()
        .map(|m| {
            let eps = config.epsilon * m;
            let (c, p) = coverage_fractions(&sup_c, &sup_p, eps);
            CoverageRung {
                epsilon: eps,
                counting_fraction: c,
                point_fraction: p,
            }
        })
        .collect();
    let denom = samples.len().max(1) as f64;
    Ok(RigidityBlock {
        s: config.s,
        x_max: config.x_max,
        k0: config.k0,
        k_max,
        coverage,
        band_entry: BandEntry {
            epsilon: config.epsilon,
            counting_fraction: entered_c as f64 / denom,
            point_fraction: entered_p as f64 / denom,
        },
        sup_counting: sup_summary(&sup_c),
        sup_point: sup_summary(&sup_p),
    })
}

/// Whether the normalized counting deviation `(N(x) - mu(x)) / ln x` visits
/// the strip `slope - eps <= |value| <= slope + eps` somewhere on
/// `[s, x_max]`. The trace is scanned on every constant segment of `N`
/// (both one-sided values at each jump plus interior probes), and a segment
/// whose consecutive probes straddle the strip counts as a visit.
fn counting_trace_enters_strip(
    step: &StepFunction<f64>,
    params: &ModelParams64,
    eps: f64,
    s: f64,
    x_max: f64,
) -> Result<bool> {
    let lo = (counting_slope::<f64>() - eps).max(0.0);
    let hi = counting_slope::<f64>() + eps;
    let mut boundaries = vec![s];
    boundaries.extend(
        step.jumps()
            .iter()
            .copied()
            .filter(|&j| j > s && j < x_max),
    );
    boundaries.push(x_max);
    for pair in boundaries.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        // Count over the open segment; at x = a this is the right limit.
        let count = step.value_at((a + b) * 0.5) as f64;
        // The trace is continuous only within a segment, so the
        // straddle check must not look across the jump at `a`.
        let mut prev: Option<f64> = None;
        for i in 0..=TRACE_PROBES {
            let x = a + (b - a) * i as f64 / TRACE_PROBES as f64;
            let u = ((count - params.mu(x)?) / x.ln()).abs();
            if (lo..=hi).contains(&u) {
                return Ok(true);
            }
            if let Some(p) = prev {
                if (p < lo && u > hi) || (p > hi && u < lo) {
                    return Ok(true);
                }
            }
            prev = Some(u);
        }
    }
    Ok(false)
}

/// Whether any plotted point deviation `(mu(x_k) - k) / ln k` for
/// `k0 <= k <= k_max` lands in the strip `slope - eps <= |value| <= slope + eps`.
fn point_trace_enters_strip(
    sample: &SpectrumSample64,
    params: &ModelParams64,
    eps: f64,
    k0: usize,
    k_max: usize,
) -> Result<bool> {
    let lo = (point_slope::<f64>() - eps).max(0.0);
    let hi = point_slope::<f64>() + eps;
    let magnitudes = sample.magnitudes();
    for k in k0..=k_max {
        let x_k = magnitudes[k - 1];
        let u = ((params.mu(x_k)? - k as f64) / (k as f64).ln()).abs();
        if (lo..=hi).contains(&u) {
            return Ok(true);
        }
    }
    Ok(false)
}

fn exp_moment_block(
    config: &ExperimentConfig,
    params: &ModelParams64,
    samples: &[SpectrumSample64],
) -> Result<ExpMomentBlock> {
    let points = exp_moment_from_samples(samples, params, config.gamma, &config.s_grid)?;
    let halves = if samples.len() >= 2 {
        let mid = samples.len() / 2;
        let first = exp_moment_from_samples(&samples[..mid], params, config.gamma, &config.s_grid)?;
        let second = exp_moment_from_samples(&samples[mid..], params, config.gamma, &config.s_grid)?;
        Some((first, second))
    } else {
        None
    };
    let entries: Vec<ExpMomentEntry> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (first, second, halves_stderr) = match &halves {
                Some((f, s)) => {
                    let combined = match (f[i].stderr, s[i].stderr) {
                        (Some(a), Some(b)) => Some((a * a + b * b).sqrt()),
                        _ => None,
                    };
                    (f[i].ratio, s[i].ratio, combined)
                }
                None => (None, None, None),
            };
            ExpMomentEntry {
                s: p.s,
                ratio: p.ratio,
                stderr: p.stderr,
                first_half: first,
                second_half: second,
                halves_stderr,
            }
        })
        .collect();
    let available: Vec<f64> = entries.iter().filter_map(|e| e.ratio).collect();
    let ratio_spread = if available.is_empty() {
        None
    } else {
        let max = available.iter().copied().fold(f64::MIN, f64::max);
        let min = available.iter().copied().fold(f64::MAX, f64::min);
        Some(max - min)
    };
    Ok(ExpMomentBlock {
        gamma: config.gamma,
        trials: samples.len(),
        entries,
        ratio_spread,
    })
}

fn exp_moment_rows(config: &ExperimentConfig, block: &ExpMomentBlock) -> Vec<ExpMomentRow> {
    block
        .entries
        .iter()
        .filter_map(|e| match (e.ratio, e.stderr) {
            (Some(r), Some(stderr)) => Some(ExpMomentRow {
                s: e.s,
                gamma: config.gamma,
                r,
                stderr,
            }),
            _ => None,
        })
        .collect()
}

fn kernel_block(
    config: &ExperimentConfig,
    params: &ModelParams64,
) -> Result<(KernelBlock, Vec<KernelDiagRow>)> {
    let spec = QuadratureSpec::for_params(params);
    let top = config.x_max.min(DENSITY_TABLE_LIMIT);
    let steps = 48usize;
    let mut rows = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let x = top * i as f64 / steps as f64;
        let est = kernel_diag(params, x, &spec)?;
        rows.push(KernelDiagRow {
            x,
            diag: est.value.re,
            err_estimate: est.error_estimate,
        });
    }
    let mut evenness_max_gap = 0.0f64;
    for &x in &EVENNESS_PROBES {
        let plus = kernel_diag(params, x, &spec)?.value.re;
        let minus = kernel_diag(params, -x, &spec)?.value.re;
        evenness_max_gap = evenness_max_gap.max((plus - minus).abs());
    }
    let integrated = mean_count(params, MEAN_COUNT_RADIUS, &spec)?;
    let mu = params.mu(MEAN_COUNT_RADIUS)?;
    let points = rows
        .iter()
        .map(|r| KernelPoint {
            x: r.x,
            diag: r.diag,
            err_estimate: r.err_estimate,
        })
        .collect();
    Ok((
        KernelBlock {
            rho: config.rho,
            points,
            evenness_max_gap,
            mean_count: MeanCountCheck {
                x: MEAN_COUNT_RADIUS,
                integrated,
                mu,
                abs_diff: (integrated - mu).abs(),
            },
        },
        rows,
    ))
}

fn figure_tables(
    config: &ExperimentConfig,
    params: &ModelParams64,
    trial: &SpectrumSample<f64>,
    tables: &mut Tables,
) -> Result<()> {
    let step = counting_step(trial)?;
    let eps = config.epsilon;
    let x_max = config.x_max;
    // Start just above 1 so the band half-width (slope + eps) ln x and the
    // ratio denominator are positive; for narrow windows the margin shrinks
    // with the window.
    let x_lo = 1.0 + (x_max - 1.0).min(1.0) * 0.05;
    let c_hi = counting_slope::<f64>() + eps;
    for i in 0..FIGURE_GRID {
        let x = x_lo + (x_max - x_lo) * i as f64 / (FIGURE_GRID - 1) as f64;
        let (band_lo, band_hi) = params.counting_band(eps, x)?;
        let count = step.value_at(x) as f64;
        tables.figure1_counting.push(CountingFigureRow {
            x,
            count,
            mu: params.mu(x)?,
            band_lo,
            band_hi,
        });
        tables.figure1_ratio.push(CountingRatioRow {
            x,
            ratio: (count - params.mu(x)?) / x.ln(),
            guide_hi: c_hi,
            guide_lo: -c_hi,
        });
    }
    let k_max = config.k_max()?.min(trial.len());
    let p_hi = point_slope::<f64>() + eps;
    let magnitudes = trial.magnitudes();
    for k in config.k0..=k_max {
        let kf = k as f64;
        let x_k = magnitudes[k - 1];
        let (band_lo, band_hi) = params.point_band(eps, kf)?;
        tables.figure2_points.push(PointFigureRow {
            k: k as u64,
            x_k,
            mu_inv: params.mu_inv(kf)?,
            band_lo,
            band_hi,
        });
        tables.figure2_ratio.push(PointRatioRow {
            k: k as u64,
            ratio: (params.mu(x_k)? - kf) / kf.ln(),
            guide_hi: p_hi,
            guide_lo: -p_hi,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n: 40,
            rho: 0.0,
            trials: 6,
            master_seed: 7,
            epsilon: 0.05,
            s: 2.0,
            x_max: 5.0,
            k0: 2,
            gamma: 0.5,
            s_grid: vec![2.5, 3.5],
            clt_k: 6,
            output_dir: std::path::PathBuf::from("unused"),
            threads: 2,
        }
    }

    fn names(report: &JsonReport) -> Vec<&str> {
        report.csv_files.iter().map(String::as_str).collect()
    }

    #[test]
    fn simulate_produces_every_block_and_table() {
        let cfg = small_config();
        let out = run_experiment(&cfg, Task::Simulate).unwrap();
        assert!(out.report.audit.is_some());
        assert!(out.report.clt.is_some());
        assert!(out.report.rigidity.is_some());
        assert!(out.report.exp_moment.is_some());
        assert!(out.report.kernel.is_none());
        assert_eq!(out.tables.figure1_counting.len(), FIGURE_GRID);
        assert_eq!(out.tables.figure1_ratio.len(), FIGURE_GRID);
        assert!(!out.tables.figure2_points.is_empty());
        assert_eq!(
            names(&out.report),
            vec![
                "figure1_counting.csv",
                "figure1_ratio.csv",
                "figure2_points.csv",
                "figure2_ratio.csv",
                "expmoment.csv"
            ]
        );
        let clt = out.report.clt.unwrap();
        assert_eq!(clt.counting.values.len(), cfg.trials);
        assert_eq!(clt.point.values.len(), cfg.trials);
        let rig = out.report.rigidity.unwrap();
        assert_eq!(rig.coverage.len(), 3);
        assert!(rig.coverage[0].counting_fraction <= rig.coverage[2].counting_fraction);
    }

    #[test]
    fn reports_are_identical_across_thread_counts() {
        let mut outputs = Vec::new();
        for threads in [1usize, 2, 8] {
            let cfg = ExperimentConfig {
                threads,
                ..small_config()
            };
            let out = run_experiment(&cfg, Task::Simulate).unwrap();
            outputs.push(crate::report::render_json(&out.report).unwrap());
        }
        assert_eq!(outputs[0], outputs[1]);
        assert_eq!(outputs[1], outputs[2]);
    }

    #[test]
    fn figures_task_samples_only_the_plotted_trial() {
        let cfg = small_config();
        let out = run_experiment(&cfg, Task::Figures).unwrap();
        assert!(out.report.clt.is_none());
        assert!(out.report.rigidity.is_none());
        assert_eq!(
            names(&out.report),
            vec![
                "figure1_counting.csv",
                "figure1_ratio.csv",
                "figure2_points.csv",
                "figure2_ratio.csv"
            ]
        );
        // The plotted trial is trial 0, so the whole-figure tables must agree
        // with a full simulate run on the same seed.
        let sim = run_experiment(&cfg, Task::Simulate).unwrap();
        assert_eq!(out.tables.figure1_counting, sim.tables.figure1_counting);
        assert_eq!(out.tables.figure2_points, sim.tables.figure2_points);
    }

    #[test]
    fn figure_tables_have_ordered_bands_and_symmetric_guides() {
        let cfg = small_config();
        let out = run_experiment(&cfg, Task::Rigidity).unwrap();
        for row in &out.tables.figure1_counting {
            assert!(row.band_lo < row.band_hi);
            assert!(row.band_lo < row.mu && row.mu < row.band_hi);
        }
        for row in &out.tables.figure2_points {
            assert!(row.band_lo < row.band_hi);
        }
        let c_hi = counting_slope::<f64>() + cfg.epsilon;
        for row in &out.tables.figure1_ratio {
            assert_eq!(row.guide_hi, c_hi);
            assert_eq!(row.guide_lo, -c_hi);
        }
        let p_hi = point_slope::<f64>() + cfg.epsilon;
        for row in &out.tables.figure2_ratio {
            assert_eq!(row.guide_hi, p_hi);
            assert_eq!(row.guide_lo, -p_hi);
        }
        let ks: Vec<u64> = out.tables.figure2_points.iter().map(|r| r.k).collect();
        assert_eq!(ks[0], cfg.k0 as u64);
        assert!(ks.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn kernel_task_reports_an_even_density_tracking_the_mean_count() {
        let cfg = ExperimentConfig {
            x_max: 6.0,
            ..small_config()
        };
        let out = run_experiment(&cfg, Task::Kernel).unwrap();
        let block = out.report.kernel.as_ref().unwrap();
        assert_eq!(out.tables.kernel_diag.len(), 49);
        assert!(block.evenness_max_gap < 1e-10);
        assert!(block.mean_count.abs_diff < 1.0);
        for row in &out.tables.kernel_diag {
            assert!(row.diag >= -1e-9);
            assert!(row.err_estimate < 1e-4);
        }
        assert_eq!(names(&out.report), vec!["kernel_diag.csv"]);
    }

    #[test]
    fn emit_writes_report_and_tables_that_read_back_equal() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output_dir: dir.path().to_path_buf(),
            ..small_config()
        };
        let out = run_experiment(&cfg, Task::Rigidity).unwrap();
        let written = emit(&cfg, &out).unwrap();
        assert_eq!(written.len(), 1 + out.report.csv_files.len());
        let report = crate::report::read_json(&written[0]).unwrap();
        assert_eq!(report, out.report);
        let rows: Vec<CountingFigureRow> =
            crate::report::read_csv(&dir.path().join("figure1_counting.csv")).unwrap();
        assert_eq!(rows, out.tables.figure1_counting);
    }

    #[test]
    fn strip_entry_detects_a_synthetic_crossing() {
        // One point at x = 2 gives N = 1 beyond it; against rho = 0 the
        // deviation trace sweeps continuously from near mu(s)/ln s down
        // through zero, so it must pass through the strip.
        let params = ModelParams64::new(0.0).unwrap();
        let step = StepFunction::from_jumps(vec![2.0]).unwrap();
        let entered =
            counting_trace_enters_strip(&step, &params, 0.05, 1.5, 40.0).unwrap();
        assert!(entered);
        // A window squeezed around the jump where the trace stays far above
        // the strip detects nothing.
        let tight = counting_trace_enters_strip(&step, &params, 0.001, 1.9, 2.05).unwrap();
        assert!(!tight);
    }
}
