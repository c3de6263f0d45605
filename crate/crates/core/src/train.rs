//! Mini-batch Adam training with validation-selected checkpoints.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Graph, ParamStore};
use crate::data::{batches, split, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, method_label, MetricsReport, TrainingSummary};
use crate::model::{ModelBatch, ModelConfig, ModelGraph, Noise, OutcomeType, ProbeUpstream};
use crate::objectives::{LossBreakdown, Objective, ObjectiveConfig};

/// Validation quantity used to pick checkpoints and grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Full objective J.
    #[default]
    Objective,
    /// Weighted factual loss alone.
    Factual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Checkpoint {
    /// Parameters with the best validation score.
    #[default]
    Best,
    /// Parameters after the final iteration.
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: ObjectiveConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_iterations: usize,
    pub validate_every: usize,
    pub seed: u64,
    /// Seed of the test/validation splits; defaults to `seed`.
    pub split_seed: Option<u64>,
    /// Held-out share for out-of-sample metrics; 0 disables the test split.
    pub test_fraction: f64,
    /// Share of the remaining data used for validation.
    pub validation_fraction: f64,
    pub selection: Selection,
    pub checkpoint: Checkpoint,
    /// Add the decomposition probe to the report when the schema has factor blocks.
    pub probe: bool,
    pub probe_upstream: ProbeUpstream,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            loss: ObjectiveConfig::default(),
            learning_rate: 1e-3,
            batch_size: 300,
            max_iterations: 10_000,
            validate_every: 100,
            seed: 0,
            split_seed: None,
            test_fraction: 0.2,
            validation_fraction: 0.2,
            selection: Selection::Objective,
            checkpoint: Checkpoint::Best,
            probe: true,
            probe_upstream: ProbeUpstream::PosteriorMeans,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.validate_every == 0 {
            return Err(Error::Config("validate_every must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }
}

/// Train/validation/test partition of a dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Option<Dataset>,
}

pub fn make_splits(data: &Dataset, config: &TrainConfig) -> Result<Splits> {
    let seed = config.split_seed();
    let (rest, test) = if config.test_fraction > 0.0 {
        let (rest, test) = split(data, 1.0 - config.test_fraction, seed)?;
        (rest, Some(test))
    } else {
        (data.clone(), None)
    };
    let (train, validation) = split(&rest, 1.0 - config.validation_fraction, seed.wrapping_add(1))?;
    Ok(Splits {
        train,
        validation,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub validation: bool,
    pub loss: LossBreakdown,
}

/// Every training-batch breakdown plus the periodic validation ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurves {
    pub points: Vec<CurvePoint>,
}

impl LossCurves {
    pub fn validation(&self) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(|p| p.validation)
    }

    pub fn training(&self) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(|p| !p.validation)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::io(path, e);
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(
            w,
            "iteration,split,total,pred,factual,treatment_ce,propensity_ce,disc,rec,kld,reg,empty_arm"
        )
        .map_err(io)?;
        for p in &self.points {
            let l = &p.loss;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                p.iteration,
                if p.validation { "validation" } else { "train" },
                l.total,
                l.pred,
                l.factual,
                l.treatment_ce,
                l.propensity_ce,
                l.disc,
                l.rec,
                l.kld,
                l.reg,
                l.empty_arm as u8
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelGraph,
    pub report: MetricsReport,
    pub curves: LossCurves,
}

/// Seeds of the independent random streams of one run.
const INIT_STREAM: u64 = 0x1d1d;
const NOISE_STREAM: u64 = 0x2e2e;
const BATCH_STREAM: u64 = 0x3f3f;
const VALIDATION_NOISE: u64 = 0x4a4a;

fn score(b: &LossBreakdown, selection: Selection) -> f64 {
    match selection {
        Selection::Objective => b.total,
        Selection::Factual => b.factual,
    }
}

fn check_finite(b: &LossBreakdown, iteration: usize) -> Result<()> {
    match b.non_finite_component() {
        Some(component) => Err(Error::NonFiniteLoss { component, iteration }),
        None => Ok(()),
    }
}

/// Objective breakdown of `batch` under the current parameters, without gradients.
pub fn assess(model: &ModelGraph, objective: &Objective, batch: &ModelBatch, noise_seed: u64) -> Result<LossBreakdown> {
    let mut g = Graph::with_params(&model.params);
    let trace = model.forward_train(&mut g, batch, &mut Noise::seeded(noise_seed))?;
    Ok(objective.evaluate(&mut g, model, &trace, None)?.breakdown)
}

/// One optimizer step on `batch`; returns the pre-step breakdown.
pub fn train_step(
    model: &mut ModelGraph,
    objective: &Objective,
    adam: &mut Adam,
    batch: &ModelBatch,
    noise: &mut Noise,
    iteration: usize,
) -> Result<LossBreakdown> {
    let (breakdown, grads) = {
        let mut g = Graph::with_params(&model.params);
        let trace = model.forward_train(&mut g, batch, noise)?;
        let eval = objective.evaluate(&mut g, model, &trace, None)?;
        check_finite(&eval.breakdown, iteration)?;
        g.backward(eval.loss)?;
        (eval.breakdown, g.param_grads())
    };
    adam.step(&mut model.params, &grads)?;
    Ok(breakdown)
}

/// Trains on `splits.train`, selecting the checkpoint on `splits.validation`.
pub fn fit(config: &TrainConfig, splits: &Splits) -> Result<(ModelGraph, LossCurves, TrainingSummary)> {
    config.validate()?;
    let train = &splits.train;
    if !train.has_both_arms() || !splits.validation.has_both_arms() {
        return Err(Error::DegenerateTreatment(
            "training and validation data need both treatment arms".into(),
        ));
    }
    let mut model = ModelGraph::build(config.model.clone(), train.schema.clone(), config.seed ^ INIT_STREAM)?;
    model.scaler = Standardizer::fit(train, config.model.outcome == OutcomeType::Real);
    let objective = Objective::for_model(config.loss, &model, train.treated_fraction())?;
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let validation = model.prepare_all(&splits.validation)?;
    let mut noise = Noise::seeded(config.seed ^ NOISE_STREAM);
    let batch_seed = config.seed ^ BATCH_STREAM;
    let val_seed = config.seed ^ VALIDATION_NOISE;

    let mut curves = LossCurves::default();
    let initial = assess(&model, &objective, &validation, val_seed)?;
    check_finite(&initial, 0)?;
    curves.points.push(CurvePoint {
        iteration: 0,
        validation: true,
        loss: initial,
    });
    let mut best_score = score(&initial, config.selection);
    let mut best_params: ParamStore = model.params.clone();
    let mut summary = TrainingSummary {
        iterations: config.max_iterations,
        best_iteration: 0,
        initial_validation_objective: initial.total,
        best_validation_objective: initial.total,
        best_validation_factual: initial.factual,
        empty_arm_batches: 0,
    };

    let mut epoch = 0u64;
    let mut order = batches(train.len(), config.batch_size, batch_seed, epoch)?.into_iter();
    for it in 1..=config.max_iterations {
        let idx = match order.next() {
            Some(idx) => idx,
            None => {
                epoch += 1;
                order = batches(train.len(), config.batch_size, batch_seed, epoch)?.into_iter();
                order.next().expect("non-empty training set")
            }
        };
        let batch = model.prepare_batch(train, &idx)?;
        let b = train_step(&mut model, &objective, &mut adam, &batch, &mut noise, it)?;
        if b.empty_arm {
            summary.empty_arm_batches += 1;
            log::warn!("iteration {it}: batch holds a single treatment arm, balance term skipped");
        }
        curves.points.push(CurvePoint {
            iteration: it,
            validation: false,
            loss: b,
        });
        if it % config.validate_every == 0 || it == config.max_iterations {
            let v = assess(&model, &objective, &validation, val_seed)?;
            check_finite(&v, it)?;
            curves.points.push(CurvePoint {
                iteration: it,
                validation: true,
                loss: v,
            });
            log::debug!("iteration {it}: validation J {:.5}, factual {:.5}", v.total, v.factual);
            let s = score(&v, config.selection);
            if s < best_score {
                best_score = s;
                best_params = model.params.clone();
                summary.best_iteration = it;
                summary.best_validation_objective = v.total;
                summary.best_validation_factual = v.factual;
            }
        }
    }
    if config.checkpoint == Checkpoint::Best {
        model.params = best_params;
    } else {
        let last = curves.validation().last().expect("final validation").loss;
        summary.best_iteration = config.max_iterations;
        summary.best_validation_objective = last.total;
        summary.best_validation_factual = last.factual;
    }
    Ok((model, curves, summary))
}

/// Scores `model` on each split and, when possible, probes it.
pub fn build_report(model: &ModelGraph, config: &TrainConfig, splits: &Splits) -> Result<MetricsReport> {
    let mut report = MetricsReport::new("train", method_label(model));
    report.seed = Some(config.seed);
    report.scenario = splits.train.metadata.get("scenario").cloned();
    report.metrics.insert("train".into(), evaluate(model, &splits.train)?);
    report.metrics.insert("validation".into(), evaluate(model, &splits.validation)?);
    if let Some(test) = &splits.test {
        report.metrics.insert("test".into(), evaluate(model, test)?);
    }
    if config.probe && model.schema.blocks.is_some() {
        report.probe = Some(crate::evaluation::probe(model, config.probe_upstream)?);
    }
    report.config = serde_json::to_value(config)?;
    Ok(report)
}

/// Splits `data`, trains, and reports metrics on every split.
pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let start = Instant::now();
    data.validate()?;
    if !data.has_both_arms() {
        return Err(Error::DegenerateTreatment("dataset has a single treatment arm".into()));
    }
    let splits = make_splits(data, config)?;
    let (model, curves, summary) = fit(config, &splits)?;
    let mut report = build_report(&model, config, &splits)?;
    report.training = Some(summary);
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(TrainOutcome { model, report, curves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelKind, WeightScheme};
    use crate::synthetic::{generate, SyntheticConfig};

    fn tiny(kind: ModelKind) -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                kind,
                latent_dim: 2,
                hidden_width: 8,
                depth: 1,
                ..ModelConfig::default()
            },
            batch_size: 32,
            max_iterations: 30,
            validate_every: 10,
            ..TrainConfig::default()
        }
    }

    fn data(n: usize) -> Dataset {
        generate(&SyntheticConfig {
            n,
            m_gamma: 2,
            m_delta: 2,
            m_upsilon: 2,
            seed: 3,
            ..SyntheticConfig::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = TrainConfig {
            split_seed: Some(4),
            ..tiny(ModelKind::Parallel)
        };
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        assert!(TrainConfig::from_toml("bogus_key = 1").is_err());
        assert!(TrainConfig::from_toml("max_iterations = 0").is_err());
        assert!(TrainConfig::from_toml("batch_size = 1").is_err());
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let d = data(200);
        let s = make_splits(&d, &tiny(ModelKind::Series)).unwrap();
        let total = s.train.len() + s.validation.len() + s.test.as_ref().unwrap().len();
        assert_eq!(total, 200);
        assert_eq!(s.test.as_ref().unwrap().len(), 40);
    }

    #[test]
    fn training_is_deterministic_and_checkpoint_monotone() {
        let d = data(300);
        for kind in [ModelKind::Series, ModelKind::Hybrid] {
            let cfg = tiny(kind);
            let a = train(&cfg, &d).unwrap();
            let b = train(&cfg, &d).unwrap();
            assert_eq!(a.model.params.values(), b.model.params.values());
            assert_eq!(a.curves, b.curves);
            let s = a.report.training.as_ref().unwrap();
            assert!(s.best_validation_objective <= s.initial_validation_objective);
            assert_eq!(a.curves.training().count(), 30);
            assert_eq!(a.curves.validation().count(), 4);
            assert!(a.report.metrics.contains_key("test"));
            assert!(a.report.probe.is_some());
        }
    }

    #[test]
    fn gamma_zero_reports_generative_terms() {
        let mut cfg = tiny(ModelKind::Series);
        cfg.loss.gamma = 0.0;
        let out = train(&cfg, &data(200)).unwrap();
        let p = out.curves.training().next().unwrap().loss;
        assert!(p.rec != 0.0 && p.kld > 0.0);
        let expect = p.pred + cfg.loss.alpha * p.disc + cfg.loss.lambda * p.reg;
        assert!((p.total - expect).abs() < 1e-10);
    }

    #[test]
    fn ca_training_runs() {
        let mut cfg = tiny(ModelKind::Hybrid);
        cfg.model.weight_scheme = WeightScheme::Ca;
        let out = train(&cfg, &data(200)).unwrap();
        assert_eq!(out.report.method, "hybrid-ca");
    }

    #[test]
    fn single_arm_data_is_rejected() {
        let mut d = data(50);
        d.t.iter_mut().for_each(|t| *t = 1);
        assert!(matches!(train(&tiny(ModelKind::Series), &d), Err(Error::DegenerateTreatment(_))));
    }

    #[test]
    fn non_finite_loss_names_component() {
        let d = data(100);
        let cfg = tiny(ModelKind::Series);
        let mut model = ModelGraph::build(cfg.model.clone(), d.schema.clone(), 0).unwrap();
        let head = model.nets[&crate::model::Role::Outcome(0)].layers[0].weight;
        model.params.get_mut(head).fill(f64::NAN);
        let objective = Objective::for_model(cfg.loss, &model, d.treated_fraction()).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &model.params);
        let batch = model.prepare_all(&d).unwrap();
        match train_step(&mut model, &objective, &mut adam, &batch, &mut Noise::Zero, 7) {
            Err(Error::NonFiniteLoss { component, iteration }) => assert_eq!((component, iteration), ("factual", 7)),
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }
}
