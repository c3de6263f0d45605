//! Command-line surface: `generate`, `train`, `eval`, `probe`, `grid` and `compare`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::data::Dataset;
use crate::evaluation::{evaluate, method_label, probe, welch_t_test, MetricsReport};
use crate::grid::{run_grid, GridSpec};
use crate::model::{ModelGraph, ProbeUpstream};
use crate::synthetic::{generate, scenario_mesh, SyntheticConfig, DEFAULT_MESH_SIZES};
use crate::train::{train, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "vaeci", version, about = "Train and evaluate VAE treatment-effect models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Upstream {
    PosteriorMeans,
    Zeros,
}

impl From<Upstream> for ProbeUpstream {
    fn from(u: Upstream) -> Self {
        match u {
            Upstream::PosteriorMeans => ProbeUpstream::PosteriorMeans,
            Upstream::Zeros => ProbeUpstream::Zeros,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset, or the whole scenario mesh with --mesh.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV file, or a directory with --mesh.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        mesh: bool,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write it with its metrics report.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Optional CSV of every loss component per iteration.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Score a saved model on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Decomposition probe table of a saved model.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "posterior-means")]
        upstream: Upstream,
    },
    /// Train every cell of a hyperparameter grid.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare methods across reports with Welch's t-test.
    Compare {
        /// Glob matching report JSON files.
        #[arg(long)]
        reports: String,
        #[arg(long, default_value = "pehe")]
        metric: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Per scenario and method summary CSV.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Scenario × method table of mean metric values.
        #[arg(long)]
        radar: Option<PathBuf>,
    },
}

pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Generate { config, out, mesh, n, seed } => cmd_generate(config, &out, mesh, n, seed),
        Command::Train { data, config, model_out, report, curves } => {
            cmd_train(&data, config, &model_out, &report, curves)
        }
        Command::Eval { data, model, report } => cmd_eval(&data, &model, &report),
        Command::Probe { model, report, upstream } => cmd_probe(&model, &report, upstream.into()),
        Command::Grid { data, grid, out_dir, threads } => cmd_grid(&data, grid, &out_dir, threads),
        Command::Compare { reports, metric, alpha, summary, radar } => {
            let files = glob::glob(&reports)
                .with_context(|| format!("bad glob `{reports}`"))?
                .collect::<Result<Vec<_>, _>>()?;
            if files.is_empty() {
                bail!("no reports match `{reports}`");
            }
            let loaded = files
                .iter()
                .map(|f| MetricsReport::read(f).with_context(|| format!("reading {}", f.display())))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let cmp = compare_reports(&loaded, &metric, alpha)?;
            print!("{}", cmp.table());
            if let Some(path) = summary {
                std::fs::write(&path, cmp.summary_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            if let Some(path) = radar {
                std::fs::write(&path, cmp.radar_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(())
        }
    }
}

fn read_toml_or_default<T: Default>(path: Option<PathBuf>, read: impl Fn(&Path) -> crate::Result<T>) -> anyhow::Result<T> {
    match path {
        Some(p) => read(&p).with_context(|| format!("loading {}", p.display())),
        None => Ok(T::default()),
    }
}

fn cmd_generate(config: Option<PathBuf>, out: &Path, mesh: bool, n: Option<usize>, seed: Option<u64>) -> anyhow::Result<()> {
    let mut base: SyntheticConfig = read_toml_or_default(config, |p| {
        let text = std::fs::read_to_string(p).map_err(|e| crate::Error::io(p, e))?;
        toml::from_str(&text).map_err(|e| crate::Error::Config(e.to_string()))
    })?;
    if let Some(n) = n {
        base.n = n;
    }
    if let Some(seed) = seed {
        base.seed = seed;
    }
    if mesh {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        for cfg in scenario_mesh(&DEFAULT_MESH_SIZES, base.m_xi, &base) {
            let (data, _) = generate(&cfg)?;
            data.write_csv(out.join(format!("scenario_{}.csv", cfg.scenario())))?;
        }
    } else {
        let (data, _) = generate(&base)?;
        data.write_csv(out)?;
    }
    Ok(())
}

fn load_data(path: &Path) -> anyhow::Result<Dataset> {
    Dataset::read_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_train(data: &Path, config: Option<PathBuf>, model_out: &Path, report: &Path, curves: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg: TrainConfig = read_toml_or_default(config, |p| TrainConfig::read(p))?;
    cfg.validate()?;
    let dataset = load_data(data)?;
    let outcome = train(&cfg, &dataset)?;
    outcome.model.save(model_out)?;
    outcome.report.write(report)?;
    if let Some(path) = curves {
        outcome.curves.write_csv(path)?;
    }
    Ok(())
}

/// Report for `model` scored on `data`; the probe is included when the schema
/// carries factor blocks.
pub fn eval_report(model: &ModelGraph, data: &Dataset) -> crate::Result<MetricsReport> {
    let start = Instant::now();
    model.check_schema(&data.schema)?;
    let mut report = MetricsReport::new("eval", method_label(model));
    report.scenario = data.metadata.get("scenario").cloned();
    report.metrics.insert("data".into(), evaluate(model, data)?);
    if model.schema.blocks.is_some() {
        report.probe = Some(probe(model, ProbeUpstream::PosteriorMeans)?);
    }
    report.config = serde_json::to_value(&model.config)?;
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

fn cmd_eval(data: &Path, model: &Path, report: &Path) -> anyhow::Result<()> {
    let dataset = load_data(data)?;
    let model = ModelGraph::load_for(model, &dataset.schema)?;
    eval_report(&model, &dataset)?.write(report)?;
    Ok(())
}

fn cmd_probe(model: &Path, report: &Path, upstream: ProbeUpstream) -> anyhow::Result<()> {
    let model = ModelGraph::load(model)?;
    let mut r = MetricsReport::new("probe", method_label(&model));
    r.probe = Some(probe(&model, upstream)?);
    r.config = serde_json::to_value(&model.config)?;
    r.write(report)?;
    Ok(())
}

fn cmd_grid(data: &Path, grid: Option<PathBuf>, out_dir: &Path, threads: Option<usize>) -> anyhow::Result<()> {
    let mut spec: GridSpec = read_toml_or_default(grid, |p| GridSpec::read(p))?;
    if threads.is_some() {
        spec.threads = threads;
    }
    let dataset = load_data(data)?;
    let (summary, _) = run_grid(&spec, &dataset, Some(out_dir))?;
    let failed = summary.cells.iter().filter(|c| c.error.is_some()).count();
    match summary.best {
        Some(i) => {
            let c = &summary.cells[i].cell;
            println!(
                "{} cells, {failed} failed; best alpha={} beta={} gamma={} seed={}",
                summary.cells.len(),
                c.alpha,
                c.beta,
                c.gamma,
                c.seed
            );
        }
        None => bail!("all {} grid cells failed", summary.cells.len()),
    }
    Ok(())
}

/// One method's samples of a metric within a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodStats {
    pub method: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    /// Whether this method is the scenario's best (lowest mean).
    pub best: bool,
    /// Welch p-value against the best method; `None` for the best itself or
    /// when the test is undefined.
    pub p_value: Option<f64>,
    pub significantly_worse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub metric: String,
    pub methods: Vec<String>,
    pub scenarios: BTreeMap<String, Vec<MethodStats>>,
}

fn metric_value(report: &MetricsReport, metric: &str) -> Option<f64> {
    let m = report.headline()?;
    match metric {
        "pehe" => m.pehe,
        "pehe_noiseless" => m.pehe_noiseless,
        "ate_bias" => m.ate_bias,
        "ate_bias_noiseless" => m.ate_bias_noiseless,
        "factual_rmse" => m.factual_rmse,
        "factual_log_loss" => m.factual_log_loss,
        _ => None,
    }
}

pub const COMPARABLE_METRICS: [&str; 6] = [
    "pehe",
    "pehe_noiseless",
    "ate_bias",
    "ate_bias_noiseless",
    "factual_rmse",
    "factual_log_loss",
];

/// Groups reports by scenario and method, and tests every method against the
/// best one of its scenario.
pub fn compare_reports(reports: &[MetricsReport], metric: &str, alpha: f64) -> anyhow::Result<Comparison> {
    if !COMPARABLE_METRICS.contains(&metric) {
        bail!("unknown metric `{metric}`; expected one of {}", COMPARABLE_METRICS.join(", "));
    }
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        if let Some(v) = metric_value(r, metric) {
            let scenario = r.scenario.clone().unwrap_or_else(|| "unknown".into());
            groups.entry(scenario).or_default().entry(r.method.clone()).or_default().push(v);
        }
    }
    if groups.is_empty() {
        bail!("no report carries metric `{metric}`");
    }
    let mut methods: Vec<String> = groups.values().flat_map(|m| m.keys().cloned()).collect();
    methods.sort();
    methods.dedup();
    let mut scenarios = BTreeMap::new();
    for (scenario, by_method) in groups {
        let mut stats: Vec<MethodStats> = by_method
            .iter()
            .map(|(method, v)| {
                let n = v.len();
                let mean = v.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                MethodStats {
                    method: method.clone(),
                    n,
                    mean,
                    std,
                    best: false,
                    p_value: None,
                    significantly_worse: false,
                }
            })
            .collect();
        let best = stats
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .map(|(i, _)| i)
            .expect("non-empty group");
        stats[best].best = true;
        let best_samples = &by_method[&stats[best].method];
        for s in stats.iter_mut().filter(|s| !s.best) {
            if let Ok(w) = welch_t_test(&by_method[&s.method], best_samples, alpha) {
                s.p_value = Some(w.p_value);
                s.significantly_worse = w.significant;
            }
        }
        scenarios.insert(scenario, stats);
    }
    Ok(Comparison {
        metric: metric.to_string(),
        methods,
        scenarios,
    })
}

impl Comparison {
    /// Text table of `mean (std)`; `*` marks the best method of a scenario and
    /// `†` methods significantly worse than it.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<12}", "scenario");
        for m in &self.methods {
            let _ = write!(out, " {m:>20}");
        }
        out.push('\n');
        for (scenario, stats) in &self.scenarios {
            let _ = write!(out, "{scenario:<12}");
            for m in &self.methods {
                let cell = match stats.iter().find(|s| &s.method == m) {
                    Some(s) => {
                        let mark = if s.best {
                            "*"
                        } else if s.significantly_worse {
                            "†"
                        } else {
                            ""
                        };
                        format!("{:.3} ({:.3}){mark}", s.mean, s.std)
                    }
                    None => "-".into(),
                };
                let _ = write!(out, " {cell:>20}");
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("scenario,method,n,mean,std,best,p_value,significantly_worse\n");
        for (scenario, stats) in &self.scenarios {
            for s in stats {
                let p = s.p_value.map(|p| p.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{scenario},{},{},{},{},{},{p},{}",
                    s.method, s.n, s.mean, s.std, s.best, s.significantly_worse
                );
            }
        }
        out
    }

    /// One row per scenario, one column of mean metric per method.
    pub fn radar_csv(&self) -> String {
        let mut out = String::from("scenario");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (scenario, stats) in &self.scenarios {
            out.push_str(scenario);
            for m in &self.methods {
                out.push(',');
                if let Some(s) = stats.iter().find(|s| &s.method == m) {
                    out.push_str(&s.mean.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}
