//! Synthetic benchmark with known instrumental (Γ), confounder (Δ), adjustment
//! (Υ) and noise (Ξ) factors, both potential outcomes and a logistic logging
//! policy whose slope controls selection bias.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::{Dataset, FactorBlocks, FeatureSchema};
use crate::error::{Error, Result};

/// Diagonal Gaussian of one factor block; empty vectors mean standard normal.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockMoments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BlockMoments {
    fn check(&self, name: &str, width: usize) -> Result<()> {
        for (what, v) in [("mean", &self.mean), ("std", &self.std)] {
            if !v.is_empty() && v.len() != width {
                return Err(Error::Config(format!(
                    "{name} {what} has {} entries, block width is {width}",
                    v.len()
                )));
            }
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("{name} moments must be finite with std ≥ 0")));
        }
        Ok(())
    }

    fn mean(&self, j: usize) -> f64 {
        self.mean.get(j).copied().unwrap_or(0.0)
    }

    fn std(&self, j: usize) -> f64 {
        self.std.get(j).copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n: usize,
    pub m_gamma: usize,
    pub m_delta: usize,
    pub m_upsilon: usize,
    pub m_xi: usize,
    /// Slope of the logistic logging policy; 0 gives a randomized trial.
    pub zeta: f64,
    /// Standard deviation of the outcome noise.
    pub noise_std: f64,
    pub noise: bool,
    pub gamma_moments: BlockMoments,
    pub delta_moments: BlockMoments,
    pub upsilon_moments: BlockMoments,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 10_000,
            m_gamma: 8,
            m_delta: 8,
            m_upsilon: 8,
            m_xi: 1,
            zeta: 1.0,
            noise_std: 0.1,
            noise: true,
            gamma_moments: BlockMoments::default(),
            delta_moments: BlockMoments::default(),
            upsilon_moments: BlockMoments::default(),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn blocks(&self) -> FactorBlocks {
        FactorBlocks {
            gamma: self.m_gamma,
            delta: self.m_delta,
            upsilon: self.m_upsilon,
            xi: self.m_xi,
        }
    }

    /// Scenario label `mΓ_mΔ_mΥ`.
    pub fn scenario(&self) -> String {
        format!("{}_{}_{}", self.m_gamma, self.m_delta, self.m_upsilon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_delta + self.m_upsilon == 0 {
            return Err(Error::RejectedScenario(format!(
                "scenario {} has neither confounders nor adjustment factors, so outcomes are pure noise",
                self.scenario()
            )));
        }
        if self.n == 0 {
            return Err(Error::Config("synthetic dataset needs n ≥ 1".into()));
        }
        if !self.zeta.is_finite() {
            return Err(Error::Config("zeta must be finite".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be finite and non-negative".into()));
        }
        self.gamma_moments.check("gamma", self.m_gamma)?;
        self.delta_moments.check("delta", self.m_delta)?;
        self.upsilon_moments.check("upsilon", self.m_upsilon)?;
        Ok(())
    }
}

/// Ground truth behind a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// Treatment coefficients over Ψ = Γ‖Δ.
    pub theta: Array1<f64>,
    /// Outcome coefficients over Φ = Δ‖Υ for each arm.
    pub vartheta0: Array1<f64>,
    pub vartheta1: Array1<f64>,
    pub propensity: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub psi: Array2<f64>,
    pub phi: Array2<f64>,
}

impl SyntheticTruth {
    /// Noiseless individual effects μ¹ − μ⁰.
    pub fn effects(&self) -> Vec<f64> {
        self.mu1.iter().zip(&self.mu0).map(|(a, b)| a - b).collect()
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

/// Noiseless outcome means for rows of Φ.
pub fn outcome_means(phi: &Array2<f64>, vartheta0: &Array1<f64>, vartheta1: &Array1<f64>) -> (Vec<f64>, Vec<f64>) {
    let m = phi.ncols() as f64;
    let mu0 = (phi.mapv(|v| v * v * v + 0.5).dot(vartheta0) / m).to_vec();
    let mu1 = (phi.mapv(|v| v * v).dot(vartheta1) / m).to_vec();
    (mu0, mu1)
}

pub fn generate(config: &SyntheticConfig) -> Result<(Dataset, SyntheticTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let blocks = config.blocks();
    let (n, k) = (config.n, blocks.width());
    let theta = normal_vec(&mut rng, config.m_gamma + config.m_delta);
    let vartheta0 = normal_vec(&mut rng, config.m_delta + config.m_upsilon);
    let vartheta1 = normal_vec(&mut rng, config.m_delta + config.m_upsilon);

    let mut x = Array2::<f64>::zeros((n, k));
    let layout = [
        (blocks.gamma_range(), Some(&config.gamma_moments)),
        (blocks.delta_range(), Some(&config.delta_moments)),
        (blocks.upsilon_range(), Some(&config.upsilon_moments)),
        (blocks.xi_range(), None),
    ];
    for mut row in x.rows_mut() {
        for (range, moments) in &layout {
            for (j, col) in range.clone().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                row[col] = match moments {
                    Some(m) => m.mean(j) + m.std(j) * z,
                    None => z,
                };
            }
        }
    }

    let psi = x.slice(s![.., 0..config.m_gamma + config.m_delta]).to_owned();
    let phi = x
        .slice(s![.., blocks.delta_range().start..blocks.upsilon_range().end])
        .to_owned();
    let propensity: Vec<f64> = psi.dot(&theta).iter().map(|z| sigmoid(config.zeta * z)).collect();
    let t: Vec<u8> = propensity.iter().map(|&p| rng.random_bool(p) as u8).collect();

    let (mu0, mu1) = outcome_means(&phi, &vartheta0, &vartheta1);
    let noise = Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut draw = |mu: f64| if config.noise { mu + noise.sample(&mut rng) } else { mu };
    let (mut y, mut ycf) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let y0 = draw(mu0[i]);
        let y1 = draw(mu1[i]);
        if t[i] == 1 {
            y.push(y1);
            ycf.push(y0);
        } else {
            y.push(y0);
            ycf.push(y1);
        }
    }

    let schema = FeatureSchema {
        names: blocks.column_names(),
        kinds: vec![crate::data::FeatureKind::Continuous; k],
        blocks: Some(blocks),
    };
    let mut data = Dataset::new(x, t, y, schema)?.with_truth(Some(ycf), Some(mu0.clone()), Some(mu1.clone()))?;
    data.metadata.insert("scenario".into(), config.scenario());
    data.metadata.insert("column_order".into(), "gamma,delta,upsilon,xi".into());
    data.metadata.insert("seed".into(), config.seed.to_string());
    data.metadata.insert("zeta".into(), config.zeta.to_string());
    let truth = SyntheticTruth {
        theta,
        vartheta0,
        vartheta1,
        propensity,
        mu0,
        mu1,
        psi,
        phi,
    };
    Ok((data, truth))
}

/// Every (mΓ, mΔ, mΥ) over `sizes` except those with mΔ = mΥ = 0, built on `base`.
pub fn scenario_mesh(sizes: &[usize], m_xi: usize, base: &SyntheticConfig) -> Vec<SyntheticConfig> {
    let mut out = Vec::new();
    for &g in sizes {
        for &d in sizes {
            for &u in sizes {
                if d + u == 0 {
                    continue;
                }
                out.push(SyntheticConfig {
                    m_gamma: g,
                    m_delta: d,
                    m_upsilon: u,
                    m_xi,
                    ..base.clone()
                });
            }
        }
    }
    out
}

pub const DEFAULT_MESH_SIZES: [usize; 3] = [0, 4, 8];

/// The four probe inputs: indicators of the Γ, Δ and Υ blocks, and ones on
/// every non-noise column.
pub fn dummy_vectors(blocks: &FactorBlocks) -> [Vec<f64>; 4] {
    let k = blocks.width();
    let indicator = |range: std::ops::Range<usize>| {
        let mut v = vec![0.0; k];
        v[range].fill(1.0);
        v
    };
    let mut all = vec![1.0; k];
    all[blocks.xi_range()].fill(0.0);
    [
        indicator(blocks.gamma_range()),
        indicator(blocks.delta_range()),
        indicator(blocks.upsilon_range()),
        all,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(m: (usize, usize, usize), n: usize, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n,
            m_gamma: m.0,
            m_delta: m.1,
            m_upsilon: m.2,
            seed,
            ..SyntheticConfig::default()
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn mesh_has_24_scenarios() {
        let mesh = scenario_mesh(&DEFAULT_MESH_SIZES, 1, &SyntheticConfig::default());
        assert_eq!(mesh.len(), 24);
        let names: Vec<String> = mesh.iter().map(|c| c.scenario()).collect();
        assert!(names.contains(&"8_8_8".to_string()));
        for gone in ["0_0_0", "4_0_0", "8_0_0"] {
            assert!(!names.contains(&gone.to_string()));
        }
        assert!(mesh.iter().all(|c| c.validate().is_ok()));
    }

    #[test]
    fn pure_noise_scenario_is_rejected() {
        assert!(matches!(generate(&small((4, 0, 0), 10, 0)), Err(Error::RejectedScenario(_))));
    }

    #[test]
    fn layout_and_truth_columns() {
        let (d, truth) = generate(&small((8, 8, 8), 50, 7)).unwrap();
        assert_eq!(d.width(), 25);
        assert_eq!(d.schema.names[0], "gamma_0");
        assert_eq!(d.schema.names[24], "xi_0");
        assert_eq!(d.schema.blocks.unwrap().width(), 25);
        assert_eq!(truth.theta.len(), 16);
        assert_eq!(truth.vartheta0.len(), 16);
        assert!(truth.propensity.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(truth.psi.column(8), d.x.column(8));
        assert_eq!(truth.phi.column(0), d.x.column(8));
        let (y0, y1) = d.potential_outcomes().unwrap();
        for i in 0..50 {
            let fact = if d.t[i] == 1 { y1[i] } else { y0[i] };
            assert_eq!(fact, d.y[i]);
        }
    }

    #[test]
    fn outcome_formula_by_direct_evaluation() {
        let cfg = SyntheticConfig { noise: false, ..small((2, 2, 1), 20, 3) };
        let (d, truth) = generate(&cfg).unwrap();
        for i in 0..20 {
            let phi: Vec<f64> = (2..5).map(|j| d.x[(i, j)]).collect();
            let mu0: f64 = phi.iter().zip(&truth.vartheta0).map(|(p, v)| (p * p * p + 0.5) * v).sum::<f64>() / 3.0;
            let mu1: f64 = phi.iter().zip(&truth.vartheta1).map(|(p, v)| p * p * v).sum::<f64>() / 3.0;
            assert!((truth.mu0[i] - mu0).abs() < 1e-12);
            assert!((truth.mu1[i] - mu1).abs() < 1e-12);
            let z: f64 = (0..4).map(|j| d.x[(i, j)] * truth.theta[j]).sum();
            assert!((truth.propensity[i] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
        let (y0, y1) = d.potential_outcomes().unwrap();
        assert_eq!(y0, truth.mu0);
        assert_eq!(y1, truth.mu1);
    }

    #[test]
    fn zero_phi_gives_constant_outcomes() {
        let phi = Array2::zeros((3, 4));
        let v0 = Array1::from(vec![1.0, -2.0, 0.5, 0.25]);
        let v1 = Array1::from(vec![3.0, 1.0, 1.0, 1.0]);
        let (mu0, mu1) = outcome_means(&phi, &v0, &v1);
        assert!(mu0.iter().all(|&m| (m - 0.5 * (-0.25) / 4.0).abs() < 1e-15));
        assert!(mu1.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zeta_zero_is_a_randomized_trial() {
        let (d, truth) = generate(&SyntheticConfig { zeta: 0.0, ..small((8, 8, 8), 10_000, 1) }).unwrap();
        assert!(truth.propensity.iter().all(|&p| p == 0.5));
        assert!((d.treated_fraction() - 0.5).abs() <= 0.02);
    }

    #[test]
    fn upsilon_only_treatment_is_independent_of_x() {
        let (d, _) = generate(&small((0, 0, 8), 10_000, 2)).unwrap();
        let t: Vec<f64> = d.t.iter().map(|&v| v as f64).collect();
        for j in 0..d.width() {
            let c = corr(&t, &d.x.column(j).to_vec());
            assert!(c.abs() <= 0.05, "column {j}: {c}");
        }
    }

    #[test]
    fn selection_bias_grows_with_zeta() {
        let mut prev = -1.0;
        for zeta in [0.0, 1.0, 3.0] {
            let mut total = 0.0;
            for seed in 0..5 {
                let (d, truth) = generate(&SyntheticConfig { zeta, ..small((8, 8, 8), 10_000, seed) }).unwrap();
                let z = truth.psi.dot(&truth.theta).to_vec();
                let t: Vec<f64> = d.t.iter().map(|&v| v as f64).collect();
                total += corr(&z, &t).abs();
            }
            assert!(total >= prev, "zeta {zeta}");
            prev = total;
        }
    }

    #[test]
    fn oracle_predictor_hits_noise_floor() {
        let (d, truth) = generate(&small((8, 8, 8), 10_000, 4)).unwrap();
        let (y0, y1) = d.potential_outcomes().unwrap();
        let n = d.len() as f64;
        let pehe = (truth
            .effects()
            .iter()
            .zip(y1.iter().zip(&y0))
            .map(|(e, (a, b))| (e - (a - b)).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        assert!(pehe <= 0.2 * 2f64.sqrt() + 0.02, "{pehe}");
        assert!((pehe - 0.1 * 2f64.sqrt()).abs() < 0.01);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small((4, 4, 0), 100, 9);
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let (a, _) = generate(&cfg).unwrap();
        let (b, _) = generate(&SyntheticConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.x, b.x);
    }

    #[test]
    fn block_moments_shift_columns() {
        let cfg = SyntheticConfig {
            delta_moments: BlockMoments { mean: vec![5.0, -5.0], std: vec![0.0, 0.0] },
            ..small((1, 2, 1), 10, 0)
        };
        let (d, _) = generate(&cfg).unwrap();
        assert!(d.x.column(1).iter().all(|&v| v == 5.0));
        assert!(d.x.column(2).iter().all(|&v| v == -5.0));
        let bad = SyntheticConfig {
            delta_moments: BlockMoments { mean: vec![1.0], std: vec![] },
            ..small((1, 2, 1), 10, 0)
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dummy_vector_layout() {
        let b = FactorBlocks { gamma: 8, delta: 8, upsilon: 8, xi: 1 };
        let [v1, v2, v3, v4] = dummy_vectors(&b);
        assert_eq!(&v1[..8], &[1.0; 8]);
        assert_eq!(&v1[8..], &[0.0; 17]);
        assert_eq!(v2.iter().sum::<f64>(), 8.0);
        assert_eq!(v3[16..24], [1.0; 8]);
        assert_eq!(v4.iter().sum::<f64>(), 24.0);
        assert_eq!(v4[24], 0.0);
        let b = FactorBlocks { gamma: 4, delta: 0, upsilon: 8, xi: 1 };
        assert!(dummy_vectors(&b)[1].iter().all(|&v| v == 0.0));
    }
}
