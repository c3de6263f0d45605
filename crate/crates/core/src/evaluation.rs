//! Effect-estimation metrics, the factor-decomposition probe table and
//! Welch's unequal-variance t-test.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Latent, ModelGraph, OutcomeType, ProbeUpstream};
use crate::synthetic::dummy_vectors;

pub const REPORT_VERSION: u32 = 1;
/// Probe denominators at or below this leave the cell undefined.
pub const PROBE_FLOOR: f64 = 1e-9;

fn check_lengths(parts: [&[f64]; 4]) -> Result<usize> {
    let n = parts[0].len();
    if parts.iter().any(|p| p.len() != n) {
        return Err(Error::Contract("effect vectors differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Contract("no instances to evaluate".into()));
    }
    Ok(n)
}

/// Root mean squared error between estimated and true individual effects.
pub fn pehe(y1_hat: &[f64], y0_hat: &[f64], y1: &[f64], y0: &[f64]) -> Result<f64> {
    let n = check_lengths([y1_hat, y0_hat, y1, y0])?;
    let sse: f64 = (0..n)
        .map(|i| ((y1_hat[i] - y0_hat[i]) - (y1[i] - y0[i])).powi(2))
        .sum();
    Ok((sse / n as f64).sqrt())
}

/// Absolute error of the average treatment effect.
pub fn ate_bias(y1_hat: &[f64], y0_hat: &[f64], y1: &[f64], y0: &[f64]) -> Result<f64> {
    let n = check_lengths([y1_hat, y0_hat, y1, y0])? as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    Ok(((mean(y1) - mean(y0)) - (mean(y1_hat) - mean(y0_hat))).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p_value: f64,
    pub significant: bool,
}

/// Two-sided Welch test of equal means.
pub fn welch_t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::UndefinedTest(format!(
            "each sample needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let moments = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (n, m, var)
    };
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2.is_nan() || se2 <= 0.0 {
        return Err(Error::UndefinedTest("both samples have zero variance".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::UndefinedTest(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(WelchResult {
        t,
        dof,
        p_value,
        significant: p_value < alpha,
    })
}

/// Ratios of mean probe activation for the Γ, Δ and Υ indicator inputs over
/// the all-factors input, one column per latent encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTable {
    pub rows: Vec<String>,
    pub columns: Vec<Latent>,
    /// Row-major; `None` where the denominator is at or below the floor.
    pub values: Vec<Vec<Option<f64>>>,
}

pub const PROBE_ROWS: [&str; 3] = ["gamma", "delta", "upsilon"];

impl ProbeTable {
    /// Builds the table from mean activations: `means[v][j]` for dummy
    /// vector `v` (the last one being the reference) and latent column `j`.
    pub fn from_means(columns: Vec<Latent>, means: [Vec<f64>; 4]) -> Self {
        let [g, d, u, all] = means;
        let values = [g, d, u]
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&all)
                    .map(|(&num, &den)| (den > PROBE_FLOOR).then(|| num / den))
                    .collect()
            })
            .collect();
        ProbeTable {
            rows: PROBE_ROWS.iter().map(|s| s.to_string()).collect(),
            columns,
            values,
        }
    }

    pub fn get(&self, row: &str, z: Latent) -> Option<f64> {
        let r = self.rows.iter().position(|n| n == row)?;
        let c = self.columns.iter().position(|&l| l == z)?;
        self.values[r][c]
    }

    /// Latent with the largest defined ratio in `row`.
    pub fn argmax(&self, row: &str) -> Option<Latent> {
        let r = self.rows.iter().position(|n| n == row)?;
        self.values[r]
            .iter()
            .zip(&self.columns)
            .filter_map(|(v, z)| v.map(|v| (v, *z)))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, z)| z)
    }

    /// Γ strongest in Z₃ or Z₄, Υ strongest in Z₁, and Δ stronger in Z₅ than in Z₁.
    pub fn shows_expected_decomposition(&self) -> bool {
        let gamma_ok = matches!(self.argmax("gamma"), Some(Latent::Z3 | Latent::Z4));
        let upsilon_ok = self.argmax("upsilon") == Some(Latent::Z1);
        let delta_ok = match (self.get("delta", Latent::Z5), self.get("delta", Latent::Z1)) {
            (Some(z5), Some(z1)) => z5 > z1,
            _ => false,
        };
        gamma_ok && upsilon_ok && delta_ok
    }

    /// Cell-wise mean over tables with identical layout; a cell undefined in
    /// any table stays undefined.
    pub fn average(tables: &[ProbeTable]) -> Option<ProbeTable> {
        let first = tables.first()?;
        if tables.iter().any(|t| t.columns != first.columns || t.rows != first.rows) {
            return None;
        }
        let n = tables.len() as f64;
        let values = (0..first.rows.len())
            .map(|r| {
                (0..first.columns.len())
                    .map(|c| {
                        tables
                            .iter()
                            .map(|t| t.values[r][c])
                            .sum::<Option<f64>>()
                            .map(|s| s / n)
                    })
                    .collect()
            })
            .collect();
        Some(ProbeTable {
            rows: first.rows.clone(),
            columns: first.columns.clone(),
            values,
        })
    }
}

/// Runs the four dummy vectors through every latent encoder and tabulates the
/// activation ratios.
pub fn probe(model: &ModelGraph, upstream: ProbeUpstream) -> Result<ProbeTable> {
    let blocks = model.schema.blocks.ok_or_else(|| {
        Error::ProbeUnavailable("the model's covariate schema has no factor-block annotation".into())
    })?;
    let vectors = dummy_vectors(&blocks);
    let columns = model.latents();
    let mut means: [Vec<f64>; 4] = Default::default();
    for (slot, v) in means.iter_mut().zip(&vectors) {
        let acts = model.probe_activations_with(v, upstream)?;
        *slot = columns
            .iter()
            .map(|z| {
                let a = &acts[z];
                a.iter().sum::<f64>() / a.len() as f64
            })
            .collect();
    }
    Ok(ProbeTable::from_means(columns, means))
}

/// Metrics for one dataset split. Absent values could not be computed; the
/// reason is listed in `unavailable`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub n: usize,
    /// PEHE against the noisy potential outcomes (`y`, `ycf`).
    pub pehe: Option<f64>,
    pub ate_bias: Option<f64>,
    /// PEHE against the noiseless outcome means (`mu0`, `mu1`).
    pub pehe_noiseless: Option<f64>,
    pub ate_bias_noiseless: Option<f64>,
    pub factual_rmse: Option<f64>,
    pub factual_log_loss: Option<f64>,
    pub predicted_ate: f64,
    pub unavailable: Vec<String>,
}

/// Predicts both arms for `data` and scores them against whatever truth is present.
pub fn evaluate(model: &ModelGraph, data: &Dataset) -> Result<MetricSet> {
    model.check_schema(&data.schema)?;
    let (y0_hat, y1_hat) = model.predict_outcomes(&data.x)?;
    let n = data.len();
    let mut m = MetricSet {
        n,
        predicted_ate: y1_hat.iter().zip(&y0_hat).map(|(a, b)| a - b).sum::<f64>() / n.max(1) as f64,
        ..MetricSet::default()
    };
    let factual: Vec<f64> = (0..n)
        .map(|i| if data.t[i] == 1 { y1_hat[i] } else { y0_hat[i] })
        .collect();
    match model.config.outcome {
        OutcomeType::Real => {
            let mse = factual.iter().zip(&data.y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n as f64;
            m.factual_rmse = Some(mse.sqrt());
        }
        OutcomeType::Binary => {
            let eps = 1e-12;
            let ll = factual
                .iter()
                .zip(&data.y)
                .map(|(&p, &y)| {
                    let p = p.clamp(eps, 1.0 - eps);
                    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / n as f64;
            m.factual_log_loss = Some(ll);
        }
    }
    match data.potential_outcomes() {
        Some((y0, y1)) => {
            m.pehe = Some(pehe(&y1_hat, &y0_hat, &y1, &y0)?);
            m.ate_bias = Some(ate_bias(&y1_hat, &y0_hat, &y1, &y0)?);
        }
        None => m.unavailable.push("pehe: no counterfactual outcome column".into()),
    }
    match data.noiseless_outcomes() {
        Some((mu0, mu1)) => {
            m.pehe_noiseless = Some(pehe(&y1_hat, &y0_hat, &mu1, &mu0)?);
            m.ate_bias_noiseless = Some(ate_bias(&y1_hat, &y0_hat, &mu1, &mu0)?);
        }
        None => m.unavailable.push("pehe_noiseless: no noiseless outcome columns".into()),
    }
    let finite = [
        m.pehe,
        m.ate_bias,
        m.pehe_noiseless,
        m.ate_bias_noiseless,
        m.factual_rmse,
        m.factual_log_loss,
        Some(m.predicted_ate),
    ];
    if finite.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Contract("model produced non-finite predictions".into()));
    }
    Ok(m)
}

/// Summary of a training run carried in its report.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub iterations: usize,
    pub best_iteration: usize,
    pub initial_validation_objective: f64,
    pub best_validation_objective: f64,
    pub best_validation_factual: f64,
    pub empty_arm_batches: usize,
}

/// Versioned result document written by `train`, `eval` and `probe`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    /// `train`, `eval` or `probe`.
    pub kind: String,
    /// Model label, e.g. `hybrid-ca`.
    pub method: String,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    /// Keyed by split: `train`, `validation`, `test` or `data`.
    pub metrics: BTreeMap<String, MetricSet>,
    pub probe: Option<ProbeTable>,
    pub training: Option<TrainingSummary>,
    pub wall_clock_seconds: f64,
    /// Full configuration echo.
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn new(kind: &str, method: String) -> Self {
        MetricsReport {
            version: REPORT_VERSION,
            kind: kind.to_string(),
            method,
            scenario: None,
            seed: None,
            metrics: BTreeMap::new(),
            probe: None,
            training: None,
            wall_clock_seconds: 0.0,
            config: serde_json::Value::Null,
        }
    }

    /// Metrics of the held-out test split if present, else whatever was evaluated.
    pub fn headline(&self) -> Option<&MetricSet> {
        ["test", "data", "validation", "train"]
            .iter()
            .find_map(|k| self.metrics.get(*k))
    }

    pub fn write(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Method label used in reports, e.g. `series-pb`.
pub fn method_label(model: &ModelGraph) -> String {
    let scheme = match model.config.weight_scheme {
        crate::model::WeightScheme::Pb => "pb",
        crate::model::WeightScheme::Ca => "ca",
    };
    format!("{}-{}", model.kind(), scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSchema;
    use crate::model::{ModelConfig, ModelKind};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn pehe_examples() {
        assert_eq!(pehe(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        let v = pehe(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
        let v = pehe(&[1.5, 2.5], &[0.0, 0.0], &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!(pehe(&[1.0], &[0.0, 0.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn ate_bias_examples() {
        assert_eq!(ate_bias(&[1.0, 2.0], &[0.0, 0.0], &[1.0, 2.0], &[0.0, 0.0]).unwrap(), 0.0);
        let v = ate_bias(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let shifted = ate_bias(&[4.0, 4.0], &[3.0, 3.0], &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert!((shifted - v).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pehe_symmetric_and_permutation_invariant(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 1..30),
            rot in 0usize..30,
        ) {
            let col = |k: usize| rows.iter().map(|r| [r.0, r.1, r.2, r.3][k]).collect::<Vec<_>>();
            let (a, b, c, d) = (col(0), col(1), col(2), col(3));
            let p = pehe(&a, &b, &c, &d).unwrap();
            prop_assert!((p - pehe(&c, &d, &a, &b).unwrap()).abs() < 1e-12);
            let r = rot % rows.len();
            let rotate = |v: &Vec<f64>| { let mut v = v.clone(); v.rotate_left(r); v };
            let q = pehe(&rotate(&a), &rotate(&b), &rotate(&c), &rotate(&d)).unwrap();
            prop_assert!((p - q).abs() < 1e-12);
            // the mean-matched predictor has zero ATE error
            let n = a.len() as f64;
            let shift = (c.iter().sum::<f64>() - d.iter().sum::<f64>() - a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n;
            let matched: Vec<f64> = a.iter().map(|v| v + shift).collect();
            prop_assert!(ate_bias(&matched, &b, &c, &d).unwrap() < 1e-9);
        }
    }

    #[test]
    fn welch_reference_values() {
        // hand computation: means 2 and 5, variances 1 and 4, n = 3 each
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0], 0.05).unwrap();
        let se = (1.0 / 3.0 + 4.0 / 3.0f64).sqrt();
        assert!((r.t - (-3.0 / se)).abs() < 1e-12);
        let dof = (5.0f64 / 3.0).powi(2) / ((1.0f64 / 3.0).powi(2) / 2.0 + (4.0f64 / 3.0).powi(2) / 2.0);
        assert!((r.dof - dof).abs() < 1e-12);
        // Student t with 1 dof is Cauchy: P(|T| > x) = 1 − (2/π) atan(x)
        let c = welch_t_test(&[0.0, 2.0], &[-1.0, 1.0], 0.05).unwrap();
        assert!((c.dof - 2.0).abs() < 1e-12);
        // 2 dof: P(|T| > x) = 1 − x / sqrt(2 + x²)
        let x = c.t.abs();
        assert!((c.p_value - (1.0 - x / (2.0 + x * x).sqrt())).abs() < 1e-10);
    }

    #[test]
    fn welch_edge_cases() {
        let same = welch_t_test(&[1.0, 2.0, 4.0], &[1.0, 2.0, 4.0], 0.05).unwrap();
        assert_eq!(same.t, 0.0);
        assert!(!same.significant);
        let a = [1e-6, -1e-6, 1e-6, -1e-6];
        let b = [1.0 + 1e-6, 1.0 - 1e-6, 1.0, 1.0];
        assert!(welch_t_test(&a, &b, 0.05).unwrap().significant);
        assert!(matches!(welch_t_test(&[1.0], &[1.0, 2.0], 0.05), Err(Error::UndefinedTest(_))));
        assert!(matches!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0], 0.05), Err(Error::UndefinedTest(_))));
    }

    #[test]
    fn welch_false_positive_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut hits = 0;
        for _ in 0..1000 {
            let mut draw = || (0..30).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
            let (a, b) = (draw(), draw());
            hits += welch_t_test(&a, &b, 0.05).unwrap().significant as usize;
        }
        let rate = hits as f64 / 1000.0;
        assert!((rate - 0.05).abs() <= 0.03, "{rate}");
    }

    #[test]
    fn probe_table_ratios_and_scaling() {
        let cols = vec![Latent::Z1, Latent::Z2];
        let means = [vec![1.0, 3.0], vec![2.0, 0.0], vec![0.5, 6.0], vec![2.0, 6.0]];
        let t = ProbeTable::from_means(cols.clone(), means.clone());
        assert_eq!(t.values[0], vec![Some(0.5), Some(0.5)]);
        assert_eq!(t.get("upsilon", Latent::Z2), Some(1.0));
        assert_eq!(t.argmax("delta"), Some(Latent::Z1));
        let scaled = means.map(|row| vec![row[0] * 7.0, row[1] * 0.25]);
        let s = ProbeTable::from_means(cols.clone(), scaled);
        for (a, b) in t.values.iter().flatten().zip(s.values.iter().flatten()) {
            assert!((a.unwrap() - b.unwrap()).abs() < 1e-12);
        }
        let undefined = ProbeTable::from_means(cols, [vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(undefined.values[0][0], None);
        assert_eq!(undefined.argmax("gamma"), Some(Latent::Z2));
    }

    #[test]
    fn decomposition_pattern_check() {
        use Latent::*;
        let cols = vec![Z1, Z2, Z3, Z4, Z5, Z6, Z7];
        let t = ProbeTable::from_means(
            cols,
            [
                vec![0.1, 0.1, 0.9, 0.2, 0.1, 0.1, 0.1],
                vec![0.3, 0.1, 0.1, 0.1, 0.5, 0.1, 0.1],
                vec![0.8, 0.1, 0.1, 0.1, 0.5, 0.1, 0.1],
                vec![1.0; 7],
            ],
        );
        assert!(t.shows_expected_decomposition());
        let avg = ProbeTable::average(&[t.clone(), t.clone()]).unwrap();
        assert_eq!(avg, t);
    }

    #[test]
    fn zero_weight_model_probes_to_ones() {
        let mut schema = FeatureSchema::continuous(crate::data::FactorBlocks { gamma: 2, delta: 2, upsilon: 2, xi: 1 }.column_names());
        schema.blocks = FeatureSchema::infer_blocks(&schema.names);
        let cfg = ModelConfig { kind: ModelKind::Hybrid, latent_dim: 2, hidden_width: 5, depth: 2, ..ModelConfig::default() };
        let mut m = ModelGraph::build(cfg, schema, 0).unwrap();
        for net in m.nets.values() {
            for l in &net.layers {
                m.params.get_mut(l.weight).fill(0.0);
                m.params.get_mut(l.bias).fill(0.3);
            }
        }
        for upstream in [ProbeUpstream::PosteriorMeans, ProbeUpstream::Zeros] {
            let t = probe(&m, upstream).unwrap();
            assert_eq!(t.columns.len(), 7);
            assert!(t.values.iter().flatten().all(|v| *v == Some(1.0)));
        }
    }

    #[test]
    fn probe_needs_blocks() {
        let schema = FeatureSchema::continuous(vec!["a".into(), "b".into()]);
        let cfg = ModelConfig { kind: ModelKind::Series, latent_dim: 2, hidden_width: 4, ..ModelConfig::default() };
        let m = ModelGraph::build(cfg, schema, 0).unwrap();
        assert!(matches!(probe(&m, ProbeUpstream::PosteriorMeans), Err(Error::ProbeUnavailable(_))));
    }
}
