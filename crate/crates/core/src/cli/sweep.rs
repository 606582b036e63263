//! Hyperparameter sweeps: a cartesian grid over reward and optimization
//! knobs, one seeded run per cell.
//!
//! Cells are independent (each owns its output subdirectory) and may run
//! concurrently; results are keyed and sorted by the cell's override
//! string, so the emitted table does not depend on execution order.
//! Per-cell failures are recorded in the table and do not abort the sweep.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{generate_corpus, imbalance_stats};
use crate::eval::{per_class_report, predict_by_object};
use crate::grpo;
use crate::policy::CheckpointData;

use super::config::{RunConfig, ScaleDefect};
use super::{CliError, CliErrorKind, CHECKPOINT_FILE, REPORT_RECORDS_FILE, TRAIN_LOG_FILE};

/// One sweepable knob with its list of values.
#[derive(Debug, Clone, PartialEq)]
pub enum GridAxis {
    Alpha(Vec<f64>),
    Gamma(Vec<f64>),
    ScaleDefect(Vec<ScaleDefect>),
    GroupSize(Vec<usize>),
    Beta(Vec<f64>),
    LearningRate(Vec<f64>),
    Seed(Vec<u64>),
}

impl GridAxis {
    fn key(&self) -> &'static str {
        match self {
            GridAxis::Alpha(_) => "alpha",
            GridAxis::Gamma(_) => "gamma",
            GridAxis::ScaleDefect(_) => "scale_defect",
            GridAxis::GroupSize(_) => "group_size",
            GridAxis::Beta(_) => "beta",
            GridAxis::LearningRate(_) => "learning_rate",
            GridAxis::Seed(_) => "seed",
        }
    }

    fn len(&self) -> usize {
        match self {
            GridAxis::Alpha(v) | GridAxis::Gamma(v) | GridAxis::Beta(v)
            | GridAxis::LearningRate(v) => v.len(),
            GridAxis::ScaleDefect(v) => v.len(),
            GridAxis::GroupSize(v) => v.len(),
            GridAxis::Seed(v) => v.len(),
        }
    }
}

/// A single assignment of one knob inside a cell.
#[derive(Debug, Clone, PartialEq)]
enum Override {
    Alpha(f64),
    Gamma(f64),
    ScaleDefect(ScaleDefect),
    GroupSize(usize),
    Beta(f64),
    LearningRate(f64),
    Seed(u64),
}

impl Override {
    fn label(&self) -> String {
        match self {
            Override::Alpha(v) => format!("alpha={v}"),
            Override::Gamma(v) => format!("gamma={v}"),
            Override::ScaleDefect(ScaleDefect::Auto) => "scale_defect=auto".to_string(),
            Override::ScaleDefect(ScaleDefect::Fixed(v)) => format!("scale_defect={v}"),
            Override::GroupSize(v) => format!("group_size={v}"),
            Override::Beta(v) => format!("beta={v}"),
            Override::LearningRate(v) => format!("learning_rate={v}"),
            Override::Seed(v) => format!("seed={v}"),
        }
    }

    fn apply(&self, config: &mut RunConfig) {
        match self {
            Override::Alpha(v) => config.rewards.alpha = *v,
            Override::Gamma(v) => config.rewards.gamma = *v,
            Override::ScaleDefect(v) => config.rewards.scale_defect = *v,
            Override::GroupSize(v) => config.grpo.group_size = *v,
            Override::Beta(v) => config.grpo.beta = *v,
            Override::LearningRate(v) => config.grpo.learning_rate = *v,
            Override::Seed(v) => config.seed = *v,
        }
    }
}

/// Parsed grid specification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridSpec {
    axes: Vec<GridAxis>,
}

impl GridSpec {
    /// Parse repeated `key=v1,v2,...` arguments.
    pub fn parse(args: &[String]) -> Result<GridSpec, CliError> {
        let mut axes = Vec::new();
        for arg in args {
            let Some((key, values)) = arg.split_once('=') else {
                return Err(CliError::usage(format!(
                    "grid spec {arg:?} is not of the form key=v1,v2"
                )));
            };
            let axis = Self::parse_axis(key.trim(), values)?;
            if axes.iter().any(|a: &GridAxis| a.key() == axis.key()) {
                return Err(CliError::usage(format!("duplicate grid key {key:?}")));
            }
            if axis.len() == 0 {
                return Err(CliError::usage(format!("grid key {key:?} has no values")));
            }
            axes.push(axis);
        }
        Ok(GridSpec { axes })
    }

    fn parse_axis(key: &str, values: &str) -> Result<GridAxis, CliError> {
        fn floats(key: &str, values: &str) -> Result<Vec<f64>, CliError> {
            values
                .split(',')
                .map(|v| {
                    v.trim().parse::<f64>().map_err(|_| {
                        CliError::usage(format!("grid {key}: {v:?} is not a number"))
                    })
                })
                .collect()
        }
        match key {
            "alpha" => Ok(GridAxis::Alpha(floats(key, values)?)),
            "gamma" => Ok(GridAxis::Gamma(floats(key, values)?)),
            "beta" => Ok(GridAxis::Beta(floats(key, values)?)),
            "learning_rate" => Ok(GridAxis::LearningRate(floats(key, values)?)),
            "scale_defect" => values
                .split(',')
                .map(|v| {
                    let v = v.trim();
                    if v == "auto" {
                        Ok(ScaleDefect::Auto)
                    } else {
                        v.parse::<f64>().map(ScaleDefect::Fixed).map_err(|_| {
                            CliError::usage(format!(
                                "grid scale_defect: {v:?} is not a number or \"auto\""
                            ))
                        })
                    }
                })
                .collect::<Result<Vec<_>, _>>()
                .map(GridAxis::ScaleDefect),
            "group_size" => values
                .split(',')
                .map(|v| {
                    v.trim().parse::<usize>().map_err(|_| {
                        CliError::usage(format!("grid group_size: {v:?} is not an integer"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(GridAxis::GroupSize),
            "seed" => values
                .split(',')
                .map(|v| {
                    v.trim().parse::<u64>().map_err(|_| {
                        CliError::usage(format!("grid seed: {v:?} is not an integer"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(GridAxis::Seed),
            other => Err(CliError::usage(format!(
                "unknown grid key {other:?} (expected alpha, gamma, scale_defect, group_size, beta, learning_rate, seed)"
            ))),
        }
    }

    /// Cartesian product of the axes. An empty spec yields one base cell.
    fn cells(&self) -> Vec<Vec<Override>> {
        let mut cells: Vec<Vec<Override>> = vec![Vec::new()];
        for axis in &self.axes {
            let values: Vec<Override> = match axis {
                GridAxis::Alpha(v) => v.iter().map(|&x| Override::Alpha(x)).collect(),
                GridAxis::Gamma(v) => v.iter().map(|&x| Override::Gamma(x)).collect(),
                GridAxis::ScaleDefect(v) => {
                    v.iter().map(|&x| Override::ScaleDefect(x)).collect()
                }
                GridAxis::GroupSize(v) => v.iter().map(|&x| Override::GroupSize(x)).collect(),
                GridAxis::Beta(v) => v.iter().map(|&x| Override::Beta(x)).collect(),
                GridAxis::LearningRate(v) => {
                    v.iter().map(|&x| Override::LearningRate(x)).collect()
                }
                GridAxis::Seed(v) => v.iter().map(|&x| Override::Seed(x)).collect(),
            };
            cells = cells
                .into_iter()
                .flat_map(|cell| {
                    values.iter().map(move |value| {
                        let mut next = cell.clone();
                        next.push(value.clone());
                        next
                    })
                })
                .collect();
        }
        cells
    }
}

/// One result row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub accuracy: Option<f64>,
    pub f1_macro: Option<f64>,
    pub malformed_rate: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub table_path: PathBuf,
}

impl SweepSummary {
    pub fn render_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.cell.len())
            .chain(["cell".len()])
            .max()
            .unwrap_or(4)
            + 2;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<width$}{:>10}{:>10}{:>12}\n",
            "cell", "acc%", "f1%", "malformed%"
        ));
        for row in &self.rows {
            match &row.error {
                Some(err) => out.push_str(&format!("{:<width$}failed: {err}\n", row.cell)),
                None => out.push_str(&format!(
                    "{:<width$}{:>10.2}{:>10.2}{:>12.2}\n",
                    row.cell,
                    row.accuracy.unwrap_or(f64::NAN) * 100.0,
                    row.f1_macro.unwrap_or(f64::NAN) * 100.0,
                    row.malformed_rate.unwrap_or(f64::NAN) * 100.0,
                )),
            }
        }
        out
    }
}

fn cell_label(overrides: &[Override]) -> String {
    if overrides.is_empty() {
        return "base".to_string();
    }
    let mut parts: Vec<String> = overrides.iter().map(|o| o.label()).collect();
    parts.sort();
    parts.join(",")
}

fn cell_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| match c {
            '=' => '-',
            ',' => '_',
            c if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' => c,
            _ => '_',
        })
        .collect()
}

/// Train and evaluate one cell, writing its artifacts under `dir`.
fn run_cell(base: &RunConfig, overrides: &[Override], dir: &Path) -> Result<SweepRow, CliError> {
    let mut config = base.clone();
    for o in overrides {
        o.apply(&mut config);
    }
    let resolved = config.resolve()?;
    let dataset = generate_corpus(&resolved.corpus)
        .map_err(|err| CliError::usage(format!("corpus config: {err}")))?;
    let stats = imbalance_stats(&dataset);
    let reward_cfg = resolved.reward_config(&stats)?;
    let initial = resolved.initial_policy();

    let mut rng = ChaCha8Rng::seed_from_u64(resolved.grpo.seed);
    let run = grpo::train(&initial, &dataset, &reward_cfg, &resolved.grpo, &mut rng)
        .map_err(super::classify_grpo)?;

    let grouped = predict_by_object(&run.params, &dataset)
        .map_err(|err| CliError::data(err.to_string()))?;
    let report = per_class_report(&grouped).map_err(|err| CliError::data(err.to_string()))?;

    fs::create_dir_all(dir)
        .map_err(|err| CliError::data(format!("cannot create {}: {err}", dir.display())))?;
    fs::write(dir.join(TRAIN_LOG_FILE), run.log.to_jsonl())
        .map_err(|err| CliError::data(err.to_string()))?;
    let mut checkpoint_json =
        serde_json::to_string(&CheckpointData::from_params(&run.params)).expect("serializes");
    checkpoint_json.push('\n');
    fs::write(dir.join(CHECKPOINT_FILE), checkpoint_json)
        .map_err(|err| CliError::data(err.to_string()))?;
    let records = crate::eval::report_records(&grouped)
        .map_err(|err| CliError::data(err.to_string()))?;
    let mut records_text = String::new();
    for record in &records {
        records_text.push_str(&serde_json::to_string(record).expect("serializes"));
        records_text.push('\n');
    }
    fs::write(dir.join(REPORT_RECORDS_FILE), records_text)
        .map_err(|err| CliError::data(err.to_string()))?;

    Ok(SweepRow {
        cell: cell_label(overrides),
        accuracy: Some(report.accuracy),
        f1_macro: Some(report.f1_macro),
        malformed_rate: Some(report.malformed_rate),
        error: None,
    })
}

/// Run the whole grid. Cells execute on up to `jobs` threads; the result
/// table is sorted by cell label either way.
pub fn cmd_sweep(
    config: &RunConfig,
    grid: &GridSpec,
    out: &Path,
    jobs: usize,
) -> Result<SweepSummary, CliError> {
    if jobs == 0 {
        return Err(CliError::new(CliErrorKind::Usage, "--jobs must be at least 1"));
    }
    // Validate the base config and every cell before any side effect.
    config.resolve()?;
    let cells = grid.cells();
    for overrides in &cells {
        let mut cell_config = config.clone();
        for o in overrides {
            o.apply(&mut cell_config);
        }
        cell_config.resolve().map_err(|err| {
            CliError::new(
                err.kind(),
                format!("cell {}: {err}", cell_label(overrides)),
            )
        })?;
    }

    fs::create_dir_all(out)
        .map_err(|err| CliError::data(format!("cannot create {}: {err}", out.display())))?;
    let cells_dir = out.join("cells");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|err| CliError::data(format!("cannot build thread pool: {err}")))?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|overrides| {
                let label = cell_label(overrides);
                let dir = cells_dir.join(cell_dir_name(&label));
                run_cell(config, overrides, &dir).unwrap_or_else(|err| SweepRow {
                    cell: label,
                    accuracy: None,
                    f1_macro: None,
                    malformed_rate: None,
                    error: Some(err.to_string()),
                })
            })
            .collect()
    });
    rows.sort_by(|a, b| a.cell.cmp(&b.cell));

    let table_path = out.join("sweep.jsonl");
    let mut text = String::new();
    for row in &rows {
        text.push_str(&serde_json::to_string(row).expect("row serializes"));
        text.push('\n');
    }
    fs::write(&table_path, text)
        .map_err(|err| CliError::data(format!("cannot write sweep table: {err}")))?;

    Ok(SweepSummary { rows, table_path })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(args: &[&str]) -> Result<GridSpec, CliError> {
        GridSpec::parse(&args.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    }

    #[test]
    fn grid_parses_typed_values() {
        let grid = spec(&["gamma=0,2", "scale_defect=auto,1"]).unwrap();
        assert_eq!(grid.axes.len(), 2);
        assert_eq!(grid.cells().len(), 4);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        assert!(spec(&["gamma"]).is_err());
        assert!(spec(&["gamma=a,b"]).is_err());
        assert!(spec(&["gamma=1", "gamma=2"]).is_err());
        assert!(spec(&["warp=9"]).is_err());
        assert!(spec(&["seed=-1"]).is_err());
    }

    #[test]
    fn empty_grid_is_one_base_cell() {
        let grid = GridSpec::default();
        let cells = grid.cells();
        assert_eq!(cells.len(), 1);
        assert!(cells[0].is_empty());
        assert_eq!(cell_label(&cells[0]), "base");
    }

    #[test]
    fn labels_are_canonical() {
        let grid = spec(&["gamma=2", "alpha=0.5"]).unwrap();
        let cells = grid.cells();
        assert_eq!(cells.len(), 1);
        // Sorted by key regardless of argument order.
        assert_eq!(cell_label(&cells[0]), "alpha=0.5,gamma=2");
        assert_eq!(cell_dir_name("alpha=0.5,gamma=2"), "alpha-0.5_gamma-2");
    }
}
