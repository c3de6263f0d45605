use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the RBF bandwidth of a [`Graph::rbf_quadratic_form`] node is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise Euclidean distance of the rows, never below `floor`.
    Median { floor: f64 },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Square(Var),
    Elu(Var),
    Relu(Var),
    Softplus(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize, usize),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Vec<(Var, Vec<usize>)>),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    RbfQuad {
        z: Var,
        coef: Tensor,
        kernel: Tensor,
        sigma: f64,
        /// Pairs whose distances define the median bandwidth, each with its share
        /// of the bandwidth. Empty when the bandwidth is fixed or floored.
        median_pairs: Vec<(usize, usize, f64)>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Tape-based reverse-mode automatic differentiation over dense 2-D arrays.
///
/// Nodes are appended in evaluation order, so the tape is a topological order
/// and the graph is acyclic by construction. Trainable tensors are read from a
/// borrowed [`ParamStore`]; each parameter enters the tape at most once.
#[derive(Debug)]
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::Param(_) => true,
            other => parents(other).iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A free input whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].needs_grad = true;
        v
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// The node holding parameter `id`, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: true,
        });
        self.grads.push(None);
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self
                .params
                .expect("parameter node without a store")
                .get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::shape("matmul", format!("inner dim {}", sa.1), sb.0));
        }
        let out = self.value(a).dot(self.value(b));
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a + bias` with the 1×m bias broadcast over the rows of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sb.1 != sa.1 {
            return Err(Error::shape("add_bias", format!("1x{}", sa.1), format!("{}x{}", sb.0, sb.1)));
        }
        let out = self.value(a) + self.value(bias);
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    fn same_shape(&self, ctx: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(ctx, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        self.push(out, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Exponential linear unit with α = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(elu);
        self.push(out, Op::Elu(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// `ln(1 + e^a)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(softplus);
        self.push(out, Op::Softplus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Elementwise clamp; the gradient is zero wherever the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        if let Some(bad) = parts.iter().find(|p| self.shape(**p).0 != rows) {
            return Err(Error::shape("concat", rows, self.shape(*bad).0));
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.shape(a).1;
        if start > end || end > cols {
            return Err(Error::shape("slice_cols", format!("range within 0..{cols}"), format!("{start}..{end}")));
        }
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        Ok(self.push(out, Op::Slice(a, start, end)))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let n = self.shape(a).0;
        if let Some(&r) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row < {n}"), r));
        }
        let out = self.value(a).select(Axis(0), rows);
        Ok(self.push(out, Op::GatherRows(a, rows.to_vec())))
    }

    /// Inverse of [`Graph::gather_rows`]: row `k` of part `p` lands at `parts[p].1[k]`
    /// in an `n`-row output. Positions not covered are zero.
    pub fn scatter_rows(&mut self, parts: &[(Var, Vec<usize>)], n: usize) -> Result<Var> {
        let cols = self.shape(parts[0].0).1;
        let mut out = Array2::zeros((n, cols));
        for (v, idx) in parts {
            let val = self.value(*v);
            if val.nrows() != idx.len() || val.ncols() != cols {
                return Err(Error::shape("scatter_rows", format!("{}x{}", idx.len(), cols), format!("{:?}", val.dim())));
            }
            for (k, &r) in idx.iter().enumerate() {
                if r >= n {
                    return Err(Error::shape("scatter_rows", format!("row < {n}"), r));
                }
                out.row_mut(r).assign(&val.row(k));
            }
        }
        Ok(self.push(out, Op::ScatterRows(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Array2::from_elem((1, 1), v.sum() / v.len().max(1) as f64);
        self.push(out, Op::Mean(a))
    }

    /// Row sums: n×m → n×1.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(out, Op::SumCols(a))
    }

    /// `Σ_ij coef_ij · exp(−‖z_i − z_j‖² / (2σ²))` for the rows of `z`, with a
    /// symmetric coefficient matrix. Under [`Bandwidth::Median`] the gradient also
    /// flows through the data-dependent bandwidth.
    pub fn rbf_quadratic_form(&mut self, z: Var, coef: Tensor, bandwidth: Bandwidth) -> Result<Var> {
        let zv = self.value(z);
        let n = zv.nrows();
        if coef.dim() != (n, n) {
            return Err(Error::shape("rbf_quadratic_form", format!("{n}x{n}"), format!("{:?}", coef.dim())));
        }
        let sq = pairwise_sq_dists(zv);
        let (sigma, median_pairs) = match bandwidth {
            Bandwidth::Fixed(s) => (s, Vec::new()),
            Bandwidth::Median { floor } => median_bandwidth(&sq, floor),
        };
        let inv = 1.0 / (2.0 * sigma * sigma);
        let kernel = sq.mapv(|d| (-d * inv).exp());
        let value = (&coef * &kernel).sum();
        Ok(self.push(
            Array2::from_elem((1, 1), value),
            Op::RbfQuad {
                z,
                coef,
                kernel,
                sigma,
                median_pairs,
            },
        ))
    }

    /// Reverse pass from a scalar node. Gradients accumulate across calls until
    /// [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut local);
            match &mut self.grads[i] {
                Some(acc) => *acc += &g,
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Accumulated gradient of `v`, if any reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter in the store, zeros where unreached.
    pub fn param_grads(&self) -> Vec<Tensor> {
        let store = self.params.expect("graph has no parameter store");
        store
            .ids()
            .map(|id| match self.param_vars[id.0].and_then(|v| self.grads[v.0].clone()) {
                Some(g) => g,
                None => Array2::zeros(store.get(id).raw_dim()),
            })
            .collect()
    }

    fn propagate(&self, i: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        let send = |v: Var, t: Tensor, local: &mut [Option<Tensor>]| {
            if self.nodes[v.0].needs_grad {
                accumulate(local, v, t);
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if needs(a) {
                    send(*a, g.dot(&self.value(*b).t()), local);
                }
                if needs(b) {
                    send(*b, self.value(*a).t().dot(g), local);
                }
            }
            Op::AddBias(a, b) => {
                send(*a, g.clone(), local);
                if needs(b) {
                    send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)), local);
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone(), local);
                send(*b, g.clone(), local);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), local);
                if needs(b) {
                    send(*b, -g, local);
                }
            }
            Op::Mul(a, b) => {
                if needs(a) {
                    send(*a, g * self.value(*b), local);
                }
                if needs(b) {
                    send(*b, g * self.value(*a), local);
                }
            }
            Op::Scale(a, c) => send(*a, g * *c, local),
            Op::AddScalar(a) => send(*a, g.clone(), local),
            Op::Exp(a) => send(*a, g * self.value(Var(i)), local),
            Op::Square(a) => send(*a, g * self.value(*a) * 2.0, local),
            Op::Elu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= x.exp();
                        }
                    });
                send(*a, d, local);
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                send(*a, d, local);
            }
            Op::Softplus(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| *d *= sigmoid(x));
                send(*a, d, local);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(Var(i)))
                    .for_each(|d, &s| *d *= s * (1.0 - s));
                send(*a, d, local);
            }
            Op::Clamp(a, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x < *lo || x > *hi {
                            *d = 0.0;
                        }
                    });
                send(*a, d, local);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if needs(p) {
                        send(*p, g.slice(s![.., start..start + w]).to_owned(), local);
                    }
                    start += w;
                }
            }
            Op::Slice(a, start, end) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                d.slice_mut(s![.., *start..*end]).assign(g);
                send(*a, d, local);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(self.value(*a).raw_dim());
                for (k, &r) in rows.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(k);
                }
                send(*a, d, local);
            }
            Op::ScatterRows(parts) => {
                for (v, idx) in parts {
                    if needs(v) {
                        send(*v, g.select(Axis(0), idx), local);
                    }
                }
            }
            Op::Sum(a) => {
                let d = Array2::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                send(*a, d, local);
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let d = Array2::from_elem(v.raw_dim(), g[[0, 0]] / v.len().max(1) as f64);
                send(*a, d, local);
            }
            Op::SumCols(a) => {
                let v = self.value(*a);
                let mut d = Array2::zeros(v.raw_dim());
                d.columns_mut().into_iter().for_each(|mut c| c.assign(&g.column(0)));
                send(*a, d, local);
            }
            Op::RbfQuad {
                z,
                coef,
                kernel,
                sigma,
                median_pairs,
            } => {
                let zv = self.value(*z);
                let (n, dim) = zv.dim();
                let up = g[[0, 0]];
                let s2 = sigma * sigma;
                // ck_ij = coef_ij K_ij, symmetric
                let ck = coef * kernel;
                // Σ_j ck_ij (z_i − z_j) = rowsum(ck)_i z_i − (ck z)_i
                let rowsum = ck.sum_axis(Axis(1));
                let ckz = ck.dot(zv);
                let mut d = Array2::zeros((n, dim));
                for r in 0..n {
                    for c in 0..dim {
                        d[[r, c]] = -2.0 / s2 * (rowsum[r] * zv[[r, c]] - ckz[[r, c]]) * up;
                    }
                }
                if !median_pairs.is_empty() {
                    let sq = pairwise_sq_dists(zv);
                    let dv_dsigma = (&ck * &sq).sum() / (s2 * sigma);
                    for &(k, l, share) in median_pairs {
                        let dist = sq[[k, l]].sqrt();
                        if dist <= 0.0 {
                            continue;
                        }
                        for c in 0..dim {
                            let dd = up * dv_dsigma * share * (zv[[k, c]] - zv[[l, c]]) / dist;
                            d[[k, c]] += dd;
                            d[[l, c]] -= dd;
                        }
                    }
                }
                send(*z, d, local);
            }
        }
    }
}

fn accumulate(local: &mut [Option<Tensor>], v: Var, t: Tensor) {
    match &mut local[v.0] {
        Some(acc) => *acc += &t,
        slot @ None => *slot = Some(t),
    }
}

fn parents(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf | Op::Param(_) => vec![],
        Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Exp(a)
        | Op::Square(a)
        | Op::Elu(a)
        | Op::Relu(a)
        | Op::Softplus(a)
        | Op::Sigmoid(a)
        | Op::Clamp(a, _, _)
        | Op::Slice(a, _, _)
        | Op::GatherRows(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::SumCols(a) => vec![*a],
        Op::Concat(parts) => parts.clone(),
        Op::ScatterRows(parts) => parts.iter().map(|(v, _)| *v).collect(),
        Op::RbfQuad { z, .. } => vec![*z],
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn pairwise_sq_dists(z: &Tensor) -> Tensor {
    let n = z.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = z
                .row(i)
                .iter()
                .zip(z.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

/// Median pairwise distance (average of the two middle values for an even
/// count) and the pairs it was taken from.
fn median_bandwidth(sq: &Tensor, floor: f64) -> (f64, Vec<(usize, usize, f64)>) {
    let n = sq.nrows();
    let mut dists: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((sq[[i, j]].sqrt(), i, j));
        }
    }
    if dists.is_empty() {
        return (floor, Vec::new());
    }
    let m = dists.len();
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0);
    let (median, pairs) = if m % 2 == 1 {
        let (_, mid, _) = dists.select_nth_unstable_by(m / 2, cmp);
        (mid.0, vec![(mid.1, mid.2, 1.0)])
    } else {
        let (lower, hi, _) = dists.select_nth_unstable_by(m / 2, cmp);
        let hi = *hi;
        let lo = *lower
            .iter()
            .max_by(|a, b| cmp(a, b))
            .expect("even count ≥ 2");
        (0.5 * (lo.0 + hi.0), vec![(lo.1, lo.2, 0.5), (hi.1, hi.2, 0.5)])
    };
    if median < floor {
        (floor, Vec::new())
    } else {
        (median, pairs)
    }
}
