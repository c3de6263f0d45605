//! Hyperparameter grid over the loss coefficients α, β and γ.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::train::{train, Selection, TrainConfig};

/// Environment variable holding the default worker count of the grid runner.
pub const THREADS_ENV: &str = "VAECI_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Settings shared by every cell; its loss coefficients are overridden.
    pub base: TrainConfig,
    /// Worker threads; falls back to `VAECI_THREADS`, then to the core count.
    pub threads: Option<usize>,
}

fn decades(from: i32, to: i32) -> Vec<f64> {
    std::iter::once(0.0)
        .chain((from..=to).map(|e| 10f64.powi(e)))
        .collect()
}

impl Default for GridSpec {
    /// The full search space: α ∈ {0, 1e-3 … 1e1}, β ∈ {0, 1e-3 … 1e2},
    /// γ ∈ {0, 1e-5 … 1e0}.
    fn default() -> Self {
        GridSpec {
            alpha: decades(-3, 1),
            beta: decades(-3, 2),
            gamma: decades(-5, 0),
            seeds: vec![0],
            base: TrainConfig::default(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [("alpha", &self.alpha), ("beta", &self.beta), ("gamma", &self.gamma)] {
            if axis.is_empty() {
                return Err(Error::Config(format!("grid axis `{name}` is empty")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one seed".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.base.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: GridSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Cells in seed-major, then α, β, γ order.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for &alpha in &self.alpha {
                for &beta in &self.beta {
                    for &gamma in &self.gamma {
                        out.push(GridCell { alpha, beta, gamma, seed });
                    }
                }
            }
        }
        out
    }

    pub fn cell_config(&self, cell: &GridCell) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.loss.alpha = cell.alpha;
        cfg.loss.beta = cell.beta;
        cfg.loss.gamma = cell.gamma;
        cfg.seed = cell.seed;
        cfg
    }

    fn thread_count(&self) -> usize {
        self.threads
            .or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub cell: GridCell,
    pub validation_objective: Option<f64>,
    pub validation_factual: Option<f64>,
    pub error: Option<String>,
    pub report_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub selection: Selection,
    pub cells: Vec<CellResult>,
    /// Index into `cells` of the selected cell.
    pub best: Option<usize>,
}

/// Picks the non-failed cell with the lowest validation score.
pub fn summarize(cells: Vec<CellResult>, selection: Selection) -> GridSummary {
    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let s = match selection {
                Selection::Objective => c.validation_objective,
                Selection::Factual => c.validation_factual,
            }?;
            (c.error.is_none() && s.is_finite()).then_some((i, s))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    GridSummary {
        selection,
        cells,
        best,
    }
}

/// Trains every cell, writes one report per cell plus `summary.json` into
/// `out_dir` when given, and returns the summary with the successful reports.
pub fn run_grid(
    spec: &GridSpec,
    data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<(GridSummary, Vec<Option<MetricsReport>>)> {
    spec.validate()?;
    let cells = spec.cells();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.thread_count())
        .build()
        .map_err(|e| Error::Config(format!("cannot start grid workers: {e}")))?;
    let outcomes: Vec<std::result::Result<MetricsReport, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let cfg = spec.cell_config(cell);
                train(&cfg, data).map(|o| o.report).map_err(|e| e.to_string())
            })
            .collect()
    });

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut results = Vec::with_capacity(cells.len());
    let mut reports = Vec::with_capacity(cells.len());
    for (index, (cell, outcome)) in cells.iter().zip(outcomes).enumerate() {
        let mut r = CellResult {
            index,
            cell: *cell,
            validation_objective: None,
            validation_factual: None,
            error: None,
            report_file: None,
        };
        match outcome {
            Ok(report) => {
                if let Some(t) = &report.training {
                    r.validation_objective = Some(t.best_validation_objective);
                    r.validation_factual = Some(t.best_validation_factual);
                }
                if let Some(dir) = out_dir {
                    let name = format!("cell_{index:04}.json");
                    report.write(dir.join(&name))?;
                    r.report_file = Some(name);
                }
                reports.push(Some(report));
            }
            Err(e) => {
                log::warn!("grid cell {index} failed: {e}");
                r.error = Some(e);
                reports.push(None);
            }
        }
        results.push(r);
    }
    let summary = summarize(results, spec.base.selection);
    if let Some(dir) = out_dir {
        let path: PathBuf = dir.join("summary.json");
        let json = serde_json::to_string_pretty(&summary)?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok((summary, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_294_cells_per_seed() {
        let spec = GridSpec::default();
        assert_eq!((spec.alpha.len(), spec.beta.len(), spec.gamma.len()), (6, 7, 7));
        assert_eq!(spec.cells().len(), 294);
        assert_eq!(spec.alpha, vec![0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0]);
        assert_eq!(*spec.beta.last().unwrap(), 100.0);
        assert_eq!(spec.gamma[1], 1e-5);
        let two = GridSpec { seeds: vec![1, 2], ..GridSpec::default() };
        assert_eq!(two.cells().len(), 588);
    }

    #[test]
    fn empty_axis_is_rejected() {
        let spec = GridSpec { beta: vec![], ..GridSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
        assert!(GridSpec::from_toml("alpha = [0.0]\nunknown = 1").is_err());
    }

    fn result(i: usize, obj: Option<f64>, fact: Option<f64>, err: bool) -> CellResult {
        CellResult {
            index: i,
            cell: GridCell { alpha: 0.0, beta: 0.0, gamma: 0.0, seed: 0 },
            validation_objective: obj,
            validation_factual: fact,
            error: err.then(|| "boom".to_string()),
            report_file: None,
        }
    }

    #[test]
    fn selection_is_argmin_over_successful_cells() {
        let cells = vec![
            result(0, Some(3.0), Some(0.1), false),
            result(1, Some(1.0), Some(0.5), false),
            result(2, None, None, true),
            result(3, Some(2.0), Some(0.2), false),
        ];
        assert_eq!(summarize(cells.clone(), Selection::Objective).best, Some(1));
        assert_eq!(summarize(cells.clone(), Selection::Factual).best, Some(0));
        assert_eq!(summarize(vec![result(0, None, None, true)], Selection::Objective).best, None);
        // a pure function of its inputs
        assert_eq!(summarize(cells.clone(), Selection::Objective), summarize(cells, Selection::Objective));
    }
}
