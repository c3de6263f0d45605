//! Training objective: weighted factual loss, MMD balance penalty, β-weighted
//! ELBO and L2 penalty.
//!
//! `J = pred + α·disc + γ·(−RecL + β·KLD) + λ·reg`, where `pred` also carries
//! the cross-entropy of the treatment heads.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{l2_penalty, pairwise_sq_dists, sigmoid, Bandwidth, Graph, Tensor, Var};
use crate::data::FeatureKind;
use crate::distributions::{bernoulli_log_prob_elementwise, unit_gaussian_log_prob_elementwise};
use crate::error::{Error, Result};
use crate::model::{ForwardTrace, Latent, ModelGraph, OutcomeType, WeightScheme};

pub const CA_WEIGHT_MIN: f64 = 0.1;
pub const CA_WEIGHT_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MmdEstimator {
    /// Biased estimator, all pairs including the diagonal.
    #[default]
    V,
    /// Unbiased estimator, same-arm diagonal terms excluded.
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub mmd: MmdEstimator,
    pub bandwidth_floor: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            lambda: 1e-4,
            mmd: MmdEstimator::V,
            bandwidth_floor: 1e-3,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.bandwidth_floor.is_nan() || self.bandwidth_floor <= 0.0 {
            return Err(Error::Config("bandwidth floor must be positive".into()));
        }
        Ok(())
    }
}

/// Per-component values of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Weighted factual loss plus treatment-head cross-entropies.
    pub pred: f64,
    pub factual: f64,
    pub treatment_ce: f64,
    pub propensity_ce: f64,
    /// Unscaled MMD² between arms.
    pub disc: f64,
    /// Mean reconstruction log-likelihood per instance.
    pub rec: f64,
    /// Mean summed KL per instance.
    pub kld: f64,
    /// Unscaled sum of squared weights.
    pub reg: f64,
    /// Set when one arm was absent from the batch and the MMD was taken as 0.
    pub empty_arm: bool,
}

impl LossBreakdown {
    /// Name of the first non-finite component, if any.
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            ("factual", self.factual),
            ("treatment_ce", self.treatment_ce),
            ("propensity_ce", self.propensity_ce),
            ("disc", self.disc),
            ("rec", self.rec),
            ("kld", self.kld),
            ("reg", self.reg),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Population-based weights `t/(2u) + (1−t)/(2(1−u))` for marginal treatment
/// probability `u`.
pub fn pb_weights(t: &[u8], u: f64) -> Result<Vec<f64>> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::DegenerateTreatment(format!(
            "treatment probability {u} leaves an arm empty"
        )));
    }
    Ok(t.iter()
        .map(|&t| if t == 1 { 0.5 / u } else { 0.5 / (1.0 - u) })
        .collect())
}

/// Context-aware weights `1 + P̂(¬t|z₅)/P̂(t|z₅)` from propensity logits,
/// clipped to `[0.1, 10]` and rescaled to mean one.
pub fn ca_weights(t: &[u8], propensity_logits: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = t
        .iter()
        .zip(propensity_logits)
        .map(|(&t, &l)| {
            let p = sigmoid(l);
            let (own, other) = if t == 1 { (p, 1.0 - p) } else { (1.0 - p, p) };
            let w = if own > 0.0 { 1.0 + other / own } else { CA_WEIGHT_MAX };
            w.clamp(CA_WEIGHT_MIN, CA_WEIGHT_MAX)
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    raw.into_iter().map(|w| w / mean).collect()
}

/// Coefficients turning `Σ C_ij K_ij` into the MMD² estimate between the arms.
/// `None` when an arm has too few rows.
pub fn mmd_coefficients(t: &[u8], estimator: MmdEstimator) -> Option<Tensor> {
    let n = t.len();
    let n1 = t.iter().filter(|&&v| v == 1).count();
    let n0 = n - n1;
    let min = match estimator {
        MmdEstimator::V => 1,
        MmdEstimator::U => 2,
    };
    if n0 < min || n1 < min {
        return None;
    }
    let same = |na: usize| match estimator {
        MmdEstimator::V => 1.0 / (na * na) as f64,
        MmdEstimator::U => 1.0 / (na * (na - 1)) as f64,
    };
    let cross = -1.0 / (n0 * n1) as f64;
    Some(Array2::from_shape_fn((n, n), |(i, j)| {
        match (t[i], t[j]) {
            (a, b) if a != b => cross,
            _ if i == j && estimator == MmdEstimator::U => 0.0,
            (1, _) => same(n1),
            _ => same(n0),
        }
    }))
}

/// Median of the pairwise distances over distinct pairs, floored.
pub fn median_bandwidth(z: &Tensor, floor: f64) -> f64 {
    let sq = pairwise_sq_dists(z);
    let n = z.nrows();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq[(i, j)].max(0.0).sqrt());
        }
    }
    if d.is_empty() {
        return floor;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    med.max(floor)
}

/// Value-level MMD² with the same conventions as the graph objective.
pub fn mmd2(z: &Tensor, t: &[u8], estimator: MmdEstimator, bandwidth: Bandwidth) -> Option<f64> {
    let coef = mmd_coefficients(t, estimator)?;
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median { floor } => median_bandwidth(z, floor),
    };
    let sq = pairwise_sq_dists(z);
    Some(
        (&coef * &sq.mapv(|d| (-d / (2.0 * sigma * sigma)).exp()))
            .iter()
            .sum(),
    )
}

/// Objective bound to a model and the training-set treatment rate.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub config: ObjectiveConfig,
    pub scheme: WeightScheme,
    pub outcome: OutcomeType,
    /// Fraction treated in the training data.
    pub treated_rate: f64,
}

/// Graph handle of `J` with its breakdown and the factual weights used.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub weights: Vec<f64>,
}

fn mean_ce(g: &mut Graph, logits: Var, target: Var) -> Result<Var> {
    let ll = bernoulli_log_prob_elementwise(g, logits, target)?;
    let m = g.mean(ll);
    Ok(g.scale(m, -1.0))
}

impl Objective {
    pub fn new(config: ObjectiveConfig, scheme: WeightScheme, outcome: OutcomeType, treated_rate: f64) -> Result<Self> {
        config.validate()?;
        if !(treated_rate > 0.0 && treated_rate < 1.0) {
            return Err(Error::DegenerateTreatment(format!(
                "training data treatment rate is {treated_rate}; both arms are required"
            )));
        }
        Ok(Objective {
            config,
            scheme,
            outcome,
            treated_rate,
        })
    }

    pub fn for_model(config: ObjectiveConfig, model: &ModelGraph, treated_rate: f64) -> Result<Self> {
        Self::new(config, model.config.weight_scheme, model.config.outcome, treated_rate)
    }

    /// Builds `J` on `g`. `weights` overrides the factual importance weights,
    /// which otherwise follow the weighting scheme; context-aware weights are
    /// treated as constants.
    pub fn evaluate(
        &self,
        g: &mut Graph,
        model: &ModelGraph,
        trace: &ForwardTrace,
        weights: Option<&[f64]>,
    ) -> Result<Evaluated> {
        let n = trace.t_bits.len();
        let cfg = &self.config;
        let mut b = LossBreakdown::default();

        let weights = match weights {
            Some(w) if w.len() != n => return Err(Error::shape("factual weights", n, w.len())),
            Some(w) => w.to_vec(),
            None => match (self.scheme, trace.propensity_logits) {
                (WeightScheme::Ca, Some(logits)) => {
                    let l: Vec<f64> = g.value(logits).column(0).to_vec();
                    ca_weights(&trace.t_bits, &l)
                }
                (WeightScheme::Ca, None) => {
                    return Err(Error::Config("context-aware weights need a propensity head".into()))
                }
                (WeightScheme::Pb, _) => pb_weights(&trace.t_bits, self.treated_rate)?,
            },
        };
        let w = g.constant(Array2::from_shape_vec((n, 1), weights.clone()).expect("n weights"));

        // factual loss
        let per = match self.outcome {
            OutcomeType::Real => {
                let r = g.sub(trace.outcome, trace.y)?;
                g.square(r)
            }
            OutcomeType::Binary => {
                let ll = bernoulli_log_prob_elementwise(g, trace.outcome, trace.y)?;
                g.scale(ll, -1.0)
            }
        };
        let weighted = g.mul(w, per)?;
        let factual = g.mean(weighted);
        b.factual = g.scalar_value(factual);
        let mut pred = factual;
        if let Some(logits) = trace.treatment_logits {
            let ce = mean_ce(g, logits, trace.t)?;
            b.treatment_ce = g.scalar_value(ce);
            pred = g.add(pred, ce)?;
        }
        if let Some(logits) = trace.propensity_logits {
            let ce = mean_ce(g, logits, trace.t)?;
            b.propensity_ce = g.scalar_value(ce);
            pred = g.add(pred, ce)?;
        }
        b.pred = g.scalar_value(pred);
        let mut total = pred;

        // balance penalty on the outcome representation
        let z1 = trace.samples[&Latent::Z1];
        let disc = match mmd_coefficients(&trace.t_bits, cfg.mmd) {
            Some(coef) => g.rbf_quadratic_form(
                z1,
                coef,
                Bandwidth::Median {
                    floor: cfg.bandwidth_floor,
                },
            )?,
            None => {
                b.empty_arm = true;
                g.scalar(0.0)
            }
        };
        b.disc = g.scalar_value(disc);
        if cfg.alpha != 0.0 {
            let d = g.scale(disc, cfg.alpha);
            total = g.add(total, d)?;
        }

        // ELBO terms
        let rec = self.reconstruction(g, model, trace)?;
        b.rec = g.scalar_value(rec);
        let mut kl_rows: Option<Var> = None;
        for (_, q, p) in trace.kl_pairs() {
            let kl = match p {
                Some(p) => q.kl(g, &p)?,
                None => q.kl_to_standard(g)?,
            };
            kl_rows = Some(match kl_rows {
                Some(acc) => g.add(acc, kl)?,
                None => kl,
            });
        }
        let kld = match kl_rows {
            Some(rows) => g.mean(rows),
            None => g.scalar(0.0),
        };
        b.kld = g.scalar_value(kld);
        if cfg.gamma != 0.0 {
            let neg_rec = g.scale(rec, -1.0);
            let kl_term = g.scale(kld, cfg.beta);
            let elbo = g.add(neg_rec, kl_term)?;
            let elbo = g.scale(elbo, cfg.gamma);
            total = g.add(total, elbo)?;
        }

        let reg = l2_penalty(g, model.nets.values())?;
        b.reg = g.scalar_value(reg);
        if cfg.lambda != 0.0 {
            let r = g.scale(reg, cfg.lambda);
            total = g.add(total, r)?;
        }
        b.total = g.scalar_value(total);
        Ok(Evaluated {
            loss: total,
            breakdown: b,
            weights,
        })
    }

    /// Mean over instances of the summed per-feature log-likelihood: unit
    /// variance Gaussian for continuous features, Bernoulli for binary ones.
    fn reconstruction(&self, g: &mut Graph, model: &ModelGraph, trace: &ForwardTrace) -> Result<Var> {
        let kinds = &model.schema.kinds;
        let n = g.shape(trace.x).0;
        let mask = |kind: FeatureKind| {
            Array2::from_shape_fn((n, kinds.len()), |(_, j)| if kinds[j] == kind { 1.0 } else { 0.0 })
        };
        let has = |kind| kinds.contains(&kind);
        let mut per: Option<Var> = None;
        for kind in [FeatureKind::Continuous, FeatureKind::Binary] {
            if !has(kind) {
                continue;
            }
            let ll = match kind {
                FeatureKind::Continuous => unit_gaussian_log_prob_elementwise(g, trace.reconstruction, trace.x)?,
                FeatureKind::Binary => bernoulli_log_prob_elementwise(g, trace.reconstruction, trace.x)?,
            };
            let ll = if kinds.iter().all(|&k| k == kind) {
                ll
            } else {
                let m = g.constant(mask(kind));
                g.mul(ll, m)?
            };
            per = Some(match per {
                Some(acc) => g.add(acc, ll)?,
                None => ll,
            });
        }
        let per = per.ok_or_else(|| Error::Schema("no covariates".into()))?;
        let rows = g.sum_cols(per);
        Ok(g.mean(rows))
    }
}
