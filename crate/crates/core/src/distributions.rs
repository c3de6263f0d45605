//! Diagonal Gaussian and Bernoulli factors: reparameterized sampling,
//! log-likelihoods and closed-form KL divergences.
//!
//! Each operation exists twice: on plain vectors (for inspection and tests)
//! and on graph nodes, where a batch is a matrix with one instance per row and
//! per-instance results come back as an `n×1` column.

use std::f64::consts::PI;

use crate::autodiff::{softplus, Graph, Var};
use crate::error::{Error, Result};

/// Bounds applied to every log-variance an encoder or prior network emits.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::shape("DiagGaussian", mean.len(), log_var.len()));
        }
        if log_var.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("log-variance must be finite".into()));
        }
        Ok(DiagGaussian { mean, log_var })
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `mean + exp(log_var / 2) ⊙ noise`.
    pub fn rsample(&self, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.len() {
            return Err(Error::shape("rsample", self.len(), noise.len()));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(noise)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect())
    }

    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        gaussian_log_prob(self, x)
    }
}

/// Independent Bernoulli factors parameterized by logits.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliVec {
    pub logits: Vec<f64>,
}

impl BernoulliVec {
    pub fn probabilities(&self) -> Vec<f64> {
        self.logits.iter().map(|&l| crate::autodiff::sigmoid(l)).collect()
    }
}

pub fn kl_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> Result<f64> {
    if q.len() != p.len() {
        return Err(Error::shape("kl_gaussians", q.len(), p.len()));
    }
    Ok((0..q.len())
        .map(|d| {
            let (mq, lq, mp, lp) = (q.mean[d], q.log_var[d], p.mean[d], p.log_var[d]);
            0.5 * (lp - lq) + (lq.exp() + (mq - mp).powi(2)) / (2.0 * lp.exp()) - 0.5
        })
        .sum())
}

/// KL(q ‖ N(0, I)).
pub fn kl_to_standard(q: &DiagGaussian) -> f64 {
    q.mean
        .iter()
        .zip(&q.log_var)
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum()
}

pub fn gaussian_log_prob(g: &DiagGaussian, x: &[f64]) -> Result<f64> {
    if x.len() != g.len() {
        return Err(Error::shape("gaussian_log_prob", g.len(), x.len()));
    }
    Ok(g.mean
        .iter()
        .zip(&g.log_var)
        .zip(x)
        .map(|((m, lv), x)| -HALF_LN_2PI - 0.5 * lv - (x - m).powi(2) / (2.0 * lv.exp()))
        .sum())
}

/// `Σ x log p + (1 − x) log(1 − p)`, computed as `x·l − softplus(l)`.
pub fn bernoulli_log_prob(b: &BernoulliVec, x: &[f64]) -> Result<f64> {
    if x.len() != b.logits.len() {
        return Err(Error::shape("bernoulli_log_prob", b.logits.len(), x.len()));
    }
    if let Some(bad) = x.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Contract(format!("Bernoulli observation must be 0 or 1, got {bad}")));
    }
    Ok(b.logits.iter().zip(x).map(|(l, x)| x * l - softplus(*l)).sum())
}

/// A batch of diagonal Gaussians living on a graph: `mean` and `log_var` are n×d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianNode {
    pub mean: Var,
    pub log_var: Var,
}

impl GaussianNode {
    /// Splits a network output `[mean | raw log-variance]` of width `2·dim` and
    /// clamps the log-variance.
    pub fn from_params(g: &mut Graph, params: Var, dim: usize) -> Result<Self> {
        let width = g.shape(params).1;
        if width != 2 * dim {
            return Err(Error::shape("GaussianNode", 2 * dim, width));
        }
        let mean = g.slice_cols(params, 0, dim)?;
        let raw = g.slice_cols(params, dim, 2 * dim)?;
        let log_var = g.clamp(raw, LOG_VAR_MIN, LOG_VAR_MAX);
        Ok(GaussianNode { mean, log_var })
    }

    pub fn dim(&self, g: &Graph) -> usize {
        g.shape(self.mean).1
    }

    /// Row `r` as a value-level Gaussian.
    pub fn row(&self, g: &Graph, r: usize) -> DiagGaussian {
        DiagGaussian {
            mean: g.value(self.mean).row(r).to_vec(),
            log_var: g.value(self.log_var).row(r).to_vec(),
        }
    }

    /// Reparameterized sample; `noise` has the same shape as `mean`.
    pub fn rsample(&self, g: &mut Graph, noise: Var) -> Result<Var> {
        let half = g.scale(self.log_var, 0.5);
        let std = g.exp(half);
        let scaled = g.mul(std, noise)?;
        g.add(self.mean, scaled)
    }

    /// Per-row KL(self ‖ p).
    pub fn kl(&self, g: &mut Graph, p: &GaussianNode) -> Result<Var> {
        let diff = g.sub(self.mean, p.mean)?;
        let diff2 = g.square(diff);
        let var_q = g.exp(self.log_var);
        let num = g.add(var_q, diff2)?;
        let neg_lp = g.scale(p.log_var, -1.0);
        let inv_var_p = g.exp(neg_lp);
        let ratio = g.mul(num, inv_var_p)?;
        let ratio = g.scale(ratio, 0.5);
        let lv_diff = g.sub(p.log_var, self.log_var)?;
        let lv_diff = g.scale(lv_diff, 0.5);
        let terms = g.add(lv_diff, ratio)?;
        let terms = g.add_scalar(terms, -0.5);
        Ok(g.sum_cols(terms))
    }

    /// Per-row KL(self ‖ N(0, I)).
    pub fn kl_to_standard(&self, g: &mut Graph) -> Result<Var> {
        let var = g.exp(self.log_var);
        let m2 = g.square(self.mean);
        let a = g.add(var, m2)?;
        let b = g.sub(a, self.log_var)?;
        let b = g.add_scalar(b, -1.0);
        let b = g.scale(b, 0.5);
        Ok(g.sum_cols(b))
    }
}

/// Per-row Gaussian log-density of `x` under unit variance and mean `mean`.
pub fn unit_gaussian_log_prob_node(g: &mut Graph, mean: Var, x: Var) -> Result<Var> {
    let per = unit_gaussian_log_prob_elementwise(g, mean, x)?;
    Ok(g.sum_cols(per))
}

pub(crate) fn unit_gaussian_log_prob_elementwise(g: &mut Graph, mean: Var, x: Var) -> Result<Var> {
    let r = g.sub(x, mean)?;
    let r2 = g.square(r);
    let r2 = g.scale(r2, -0.5);
    Ok(g.add_scalar(r2, -HALF_LN_2PI))
}

/// Per-row Bernoulli log-likelihood of binary `x` given `logits`.
pub fn bernoulli_log_prob_node(g: &mut Graph, logits: Var, x: Var) -> Result<Var> {
    let per = bernoulli_log_prob_elementwise(g, logits, x)?;
    Ok(g.sum_cols(per))
}

pub(crate) fn bernoulli_log_prob_elementwise(g: &mut Graph, logits: Var, x: Var) -> Result<Var> {
    let xl = g.mul(x, logits)?;
    let sp = g.softplus(logits);
    g.sub(xl, sp)
}

/// `−½ log 2π`, the unit-variance Gaussian log-density at the mean.
pub fn unit_gaussian_peak_log_density() -> f64 {
    -0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gauss(mean: &[f64], log_var: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), log_var.to_vec()).unwrap()
    }

    #[test]
    fn rsample_examples() {
        let g = gauss(&[0.3, -2.0], &[1.0, -4.0]);
        assert_eq!(g.rsample(&[0.0, 0.0]).unwrap(), vec![0.3, -2.0]);
        assert_eq!(gauss(&[0.0], &[0.0]).rsample(&[1.5]).unwrap(), vec![1.5]);
        let v = gauss(&[2.0], &[4f64.ln()]).rsample(&[-1.0]).unwrap()[0];
        assert!(v.abs() < 1e-15);
        assert!(g.rsample(&[1.0]).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = gauss(&[0.4, -1.0], &[0.2, 0.7]);
        assert_eq!(kl_gaussians(&p, &p).unwrap(), 0.0);
        let kl = kl_gaussians(&gauss(&[1.0], &[0.0]), &gauss(&[0.0], &[0.0])).unwrap();
        assert!((kl - 0.5).abs() < 1e-12);
        // q = N(0, 4): ½(4 − 1 − ln 4)
        let kl = kl_gaussians(&gauss(&[0.0], &[4f64.ln()]), &gauss(&[0.0], &[0.0])).unwrap();
        assert!((kl - 0.5 * (3.0 - 4f64.ln())).abs() < 1e-12);
        assert!((kl - 0.8069).abs() < 1e-4);
    }

    #[test]
    fn kl_agrees_with_monte_carlo() {
        let q = gauss(&[0.0], &[4f64.ln()]);
        let p = DiagGaussian::standard(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = q.rsample(&[e]).unwrap();
            acc += q.log_prob(&x).unwrap() - p.log_prob(&x).unwrap();
        }
        let mc = acc / n as f64;
        assert!((mc - kl_gaussians(&q, &p).unwrap()).abs() < 1e-2, "mc {mc}");
    }

    #[test]
    fn log_prob_examples() {
        let n = DiagGaussian::standard(1);
        assert!((n.log_prob(&[0.0]).unwrap() + 0.9189385332046727).abs() < 1e-12);
        assert!((n.log_prob(&[1.0]).unwrap() + 1.4189385332046727).abs() < 1e-12);
        let two = gauss(&[0.5, -1.0], &[0.3, -0.2]);
        let joint = two.log_prob(&[1.0, 2.0]).unwrap();
        let split = gauss(&[0.5], &[0.3]).log_prob(&[1.0]).unwrap()
            + gauss(&[-1.0], &[-0.2]).log_prob(&[2.0]).unwrap();
        assert!((joint - split).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_examples() {
        let half = bernoulli_log_prob(&BernoulliVec { logits: vec![0.0] }, &[1.0]).unwrap();
        assert!((half - 0.5f64.ln()).abs() < 1e-12);
        let sat = bernoulli_log_prob(&BernoulliVec { logits: vec![20.0] }, &[1.0]).unwrap();
        assert!(sat.abs() < 1e-8);
        let two = bernoulli_log_prob(&BernoulliVec { logits: vec![0.0, 0.0] }, &[1.0, 0.0]).unwrap();
        assert!((two - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            bernoulli_log_prob(&BernoulliVec { logits: vec![0.0] }, &[0.5]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn kl_to_standard_examples() {
        assert_eq!(kl_to_standard(&DiagGaussian::standard(3)), 0.0);
        assert!((kl_to_standard(&gauss(&[1.0, 1.0], &[0.0, 0.0])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn node_versions_match_value_versions() {
        let mut g = Graph::new();
        let qm = g.constant(array![[0.2, -0.7], [1.5, 0.1]]);
        let ql = g.constant(array![[-0.3, 0.4], [0.0, -1.2]]);
        let pm = g.constant(array![[0.0, 0.3], [-0.5, 0.9]]);
        let pl = g.constant(array![[0.6, -0.1], [0.2, 0.5]]);
        let q = GaussianNode { mean: qm, log_var: ql };
        let p = GaussianNode { mean: pm, log_var: pl };
        let kl = q.kl(&mut g, &p).unwrap();
        let kls = q.kl_to_standard(&mut g).unwrap();
        let x = g.constant(array![[1.0, 0.0], [0.0, 1.0]]);
        let lp = unit_gaussian_log_prob_node(&mut g, qm, x).unwrap();
        let bl = bernoulli_log_prob_node(&mut g, qm, x).unwrap();
        for r in 0..2 {
            let (qr, pr) = (q.row(&g, r), p.row(&g, r));
            assert!((g.value(kl)[[r, 0]] - kl_gaussians(&qr, &pr).unwrap()).abs() < 1e-14);
            assert!((g.value(kls)[[r, 0]] - kl_to_standard(&qr)).abs() < 1e-14);
            let unit = DiagGaussian::new(qr.mean.clone(), vec![0.0; 2]).unwrap();
            let xr = g.value(x).row(r).to_vec();
            assert!((g.value(lp)[[r, 0]] - unit.log_prob(&xr).unwrap()).abs() < 1e-14);
            let b = BernoulliVec { logits: qr.mean.clone() };
            assert!((g.value(bl)[[r, 0]] - bernoulli_log_prob(&b, &xr).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn rsample_gradients() {
        let mean0 = array![[0.4, -1.1]];
        let lv0 = array![[0.3, -0.6]];
        let noise = array![[0.8, -1.7]];
        let upstream = array![[1.3, -0.2]];
        let run = |mean: &Array2<f64>, lv: &Array2<f64>, track: bool| {
            let mut g = Graph::new();
            let (m, l) = if track {
                (g.variable(mean.clone()), g.variable(lv.clone()))
            } else {
                (g.constant(mean.clone()), g.constant(lv.clone()))
            };
            let e = g.constant(noise.clone());
            let u = g.constant(upstream.clone());
            let z = GaussianNode { mean: m, log_var: l }.rsample(&mut g, e).unwrap();
            let w = g.mul(z, u).unwrap();
            let loss = g.sum(w);
            let value = g.scalar_value(loss);
            if track {
                g.backward(loss).unwrap();
                (value, g.grad(m).cloned(), g.grad(l).cloned())
            } else {
                (value, None, None)
            }
        };
        let (_, gm, gl) = run(&mean0, &lv0, true);
        assert_eq!(gm.unwrap(), upstream);
        let gl = gl.unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut plus = lv0.clone();
            plus[[0, c]] += h;
            let mut minus = lv0.clone();
            minus[[0, c]] -= h;
            let fd = (run(&mean0, &plus, false).0 - run(&mean0, &minus, false).0) / (2.0 * h);
            assert!((fd - gl[[0, c]]).abs() / (gl[[0, c]].abs() + 1e-8) < 1e-4);
        }
    }

    #[test]
    fn clamped_log_variance() {
        let mut g = Graph::new();
        let out = g.constant(array![[0.0, 50.0], [1.0, -50.0]]);
        let q = GaussianNode::from_params(&mut g, out, 1).unwrap();
        assert_eq!(g.value(q.log_var), &array![[10.0], [-10.0]]);
        assert!(GaussianNode::from_params(&mut g, out, 2).is_err());
    }

    fn arb_gaussian(dim: usize) -> impl Strategy<Value = DiagGaussian> {
        (
            prop::collection::vec(-3.0..3.0f64, dim),
            prop::collection::vec(-4.0..4.0f64, dim),
        )
            .prop_map(|(m, l)| DiagGaussian::new(m, l).unwrap())
    }

    proptest! {
        #[test]
        fn kl_is_non_negative_and_zero_on_self(q in arb_gaussian(4), p in arb_gaussian(4)) {
            prop_assert!(kl_gaussians(&q, &p).unwrap() >= -1e-12);
            prop_assert!(kl_gaussians(&q, &q).unwrap().abs() <= 1e-12);
        }

        #[test]
        fn kl_to_standard_is_the_general_kl(q in arb_gaussian(5)) {
            let general = kl_gaussians(&q, &DiagGaussian::standard(5)).unwrap();
            prop_assert!((general - kl_to_standard(&q)).abs() <= 1e-12 * (1.0 + general.abs()));
        }

        #[test]
        fn log_prob_peaks_at_mean(q in arb_gaussian(3), d in 0usize..3, eps in 1e-3..1.0f64) {
            let at_mean = q.log_prob(&q.mean).unwrap();
            let mut x = q.mean.clone();
            x[d] += eps;
            prop_assert!(q.log_prob(&x).unwrap() < at_mean);
            x[d] -= 2.0 * eps;
            prop_assert!(q.log_prob(&x).unwrap() < at_mean);
        }
    }
}
