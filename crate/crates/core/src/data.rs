//! Dataset representation, CSV ingestion and emission, stratified splits and
//! mini-batching.
//!
//! CSV layout: UTF-8, comma separated, header row. The reserved columns are
//! `t` (treatment, 0/1), `y` (factual outcome) and, optionally, `ycf`
//! (counterfactual outcome), `mu0` and `mu1` (noiseless potential outcomes).
//! Every other column is a covariate, in file order. Covariates named
//! `gamma_*`, `delta_*`, `upsilon_*`, `xi_*`, laid out in that block order,
//! carry a factor-block annotation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESERVED_COLUMNS: [&str; 5] = ["t", "y", "ycf", "mu0", "mu1"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

/// Column spans of the instrumental (Γ), confounder (Δ), adjustment (Υ) and
/// noise (Ξ) blocks. Blocks are contiguous and appear in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorBlocks {
    pub gamma: usize,
    pub delta: usize,
    pub upsilon: usize,
    pub xi: usize,
}

impl FactorBlocks {
    pub fn width(&self) -> usize {
        self.gamma + self.delta + self.upsilon + self.xi
    }

    pub fn gamma_range(&self) -> Range<usize> {
        0..self.gamma
    }

    pub fn delta_range(&self) -> Range<usize> {
        self.gamma..self.gamma + self.delta
    }

    pub fn upsilon_range(&self) -> Range<usize> {
        let start = self.gamma + self.delta;
        start..start + self.upsilon
    }

    pub fn xi_range(&self) -> Range<usize> {
        let start = self.gamma + self.delta + self.upsilon;
        start..start + self.xi
    }

    /// Column names following the block naming convention.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for (prefix, count) in [
            ("gamma", self.gamma),
            ("delta", self.delta),
            ("upsilon", self.upsilon),
            ("xi", self.xi),
        ] {
            names.extend((0..count).map(|i| format!("{prefix}_{i}")));
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub blocks: Option<FactorBlocks>,
}

impl FeatureSchema {
    pub fn continuous(names: Vec<String>) -> Self {
        let kinds = vec![FeatureKind::Continuous; names.len()];
        FeatureSchema {
            names,
            kinds,
            blocks: None,
        }
    }

    pub fn width(&self) -> usize {
        self.kinds.len()
    }

    pub fn binary_columns(&self) -> impl Iterator<Item = usize> + '_ {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == FeatureKind::Binary)
            .map(|(i, _)| i)
    }

    /// Recovers block annotation from column names, if they follow the convention.
    pub fn infer_blocks(names: &[String]) -> Option<FactorBlocks> {
        let prefixes = ["gamma_", "delta_", "upsilon_", "xi_"];
        let mut counts = [0usize; 4];
        let mut current = 0;
        for name in names {
            let block = prefixes.iter().position(|p| name.starts_with(p))?;
            if block < current {
                return None;
            }
            current = block;
            counts[block] += 1;
        }
        let blocks = FactorBlocks {
            gamma: counts[0],
            delta: counts[1],
            upsilon: counts[2],
            xi: counts[3],
        };
        (blocks.width() > 0 && blocks.column_names() == names).then_some(blocks)
    }

    fn validate(&self) -> Result<()> {
        if self.names.len() != self.kinds.len() {
            return Err(Error::Schema(format!(
                "{} names for {} feature kinds",
                self.names.len(),
                self.kinds.len()
            )));
        }
        if let Some(b) = &self.blocks {
            if b.width() != self.width() {
                return Err(Error::Schema(format!(
                    "factor blocks cover {} columns, schema has {}",
                    b.width(),
                    self.width()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
    pub y_cf: Option<Vec<f64>>,
    pub mu0: Option<Vec<f64>>,
    pub mu1: Option<Vec<f64>>,
    pub schema: FeatureSchema,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    /// Validates shapes, finiteness, treatment bits and binary columns.
    pub fn new(
        x: Array2<f64>,
        t: Vec<u8>,
        y: Vec<f64>,
        schema: FeatureSchema,
    ) -> Result<Self> {
        let ds = Dataset {
            x,
            t,
            y,
            y_cf: None,
            mu0: None,
            mu1: None,
            schema,
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_truth(
        mut self,
        y_cf: Option<Vec<f64>>,
        mu0: Option<Vec<f64>>,
        mu1: Option<Vec<f64>>,
    ) -> Result<Self> {
        self.y_cf = y_cf;
        self.mu0 = mu0;
        self.mu1 = mu1;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let n = self.x.nrows();
        if self.x.ncols() != self.schema.width() {
            return Err(Error::Schema(format!(
                "{} covariate columns, schema has {}",
                self.x.ncols(),
                self.schema.width()
            )));
        }
        if self.t.len() != n || self.y.len() != n {
            return Err(Error::Schema(format!(
                "length mismatch: {} rows, {} treatments, {} outcomes",
                n,
                self.t.len(),
                self.y.len()
            )));
        }
        for (name, col) in [("ycf", &self.y_cf), ("mu0", &self.mu0), ("mu1", &self.mu1)] {
            if let Some(c) = col {
                if c.len() != n {
                    return Err(Error::Schema(format!("`{name}` has {} rows, expected {n}", c.len())));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Schema(format!("`{name}` contains non-finite values")));
                }
            }
        }
        if self.x.iter().any(|v| !v.is_finite()) || self.y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("covariates and outcomes must be finite".into()));
        }
        if let Some(bad) = self.t.iter().find(|&&t| t > 1) {
            return Err(Error::Schema(format!("treatment must be 0 or 1, got {bad}")));
        }
        for c in self.schema.binary_columns() {
            if self.x.column(c).iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Schema(format!(
                    "binary column `{}` holds values other than 0/1",
                    self.schema.names[c]
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated_count(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    /// Empirical Pr(t = 1).
    pub fn treated_fraction(&self) -> f64 {
        self.treated_count() as f64 / self.len().max(1) as f64
    }

    pub fn has_both_arms(&self) -> bool {
        let treated = self.treated_count();
        treated > 0 && treated < self.len()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let pick = |v: &Vec<f64>| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: self.x.select(Axis(0), indices),
            t: indices.iter().map(|&i| self.t[i]).collect(),
            y: pick(&self.y),
            y_cf: self.y_cf.as_ref().map(pick),
            mu0: self.mu0.as_ref().map(pick),
            mu1: self.mu1.as_ref().map(pick),
            schema: self.schema.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Noisy potential outcomes `(y⁰, y¹)` assembled from `y` and `ycf`.
    pub fn potential_outcomes(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let cf = self.y_cf.as_ref()?;
        let (mut y0, mut y1) = (Vec::with_capacity(self.len()), Vec::with_capacity(self.len()));
        for ((&t, &y), &c) in self.t.iter().zip(&self.y).zip(cf) {
            let (a, b) = if t == 1 { (c, y) } else { (y, c) };
            y0.push(a);
            y1.push(b);
        }
        Some((y0, y1))
    }

    /// Noiseless potential outcomes `(μ⁰, μ¹)`.
    pub fn noiseless_outcomes(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        Some((self.mu0.clone()?, self.mu1.clone()?))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ds = Self::from_reader(file)?;
        ds.metadata
            .insert("source".into(), path.display().to_string());
        Ok(ds)
    }

    pub fn from_reader(reader: impl std::io::Read) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 1,
                column: 0,
                message: e.to_string(),
            })?
            .iter()
            .map(str::to_string)
            .collect();
        let find = |name: &str| header.iter().position(|h| h == name);
        let t_col = find("t").ok_or_else(|| Error::Parse {
            row: 1,
            column: 0,
            message: "missing required column `t`".into(),
        })?;
        let y_col = find("y").ok_or_else(|| Error::Parse {
            row: 1,
            column: 0,
            message: "missing required column `y`".into(),
        })?;
        let (ycf_col, mu0_col, mu1_col) = (find("ycf"), find("mu0"), find("mu1"));
        let feature_cols: Vec<usize> = (0..header.len())
            .filter(|&c| !RESERVED_COLUMNS.contains(&header[c].as_str()))
            .collect();

        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            // header is row 1
            let row = r + 2;
            let record = record.map_err(|e| Error::Parse {
                row,
                column: 0,
                message: e.to_string(),
            })?;
            if record.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    column: record.len().min(header.len()) + 1,
                    message: format!("expected {} fields, found {}", header.len(), record.len()),
                });
            }
            let values = record
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.parse::<f64>().map_err(|_| Error::Parse {
                        row,
                        column: c + 1,
                        message: format!("non-numeric cell `{cell}` in column `{}`", header[c]),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(values);
        }

        let n = rows.len();
        let k = feature_cols.len();
        let x = Array2::from_shape_fn((n, k), |(i, j)| rows[i][feature_cols[j]]);
        let column = |c: usize| rows.iter().map(|r| r[c]).collect::<Vec<f64>>();
        let mut t = Vec::with_capacity(n);
        for (i, r) in rows.iter().enumerate() {
            match r[t_col] {
                0.0 => t.push(0),
                1.0 => t.push(1),
                v => {
                    return Err(Error::Parse {
                        row: i + 2,
                        column: t_col + 1,
                        message: format!("treatment must be 0 or 1, got {v}"),
                    })
                }
            }
        }
        let names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();
        let kinds = (0..k)
            .map(|j| {
                let binary = n > 0 && x.column(j).iter().all(|&v| v == 0.0 || v == 1.0);
                if binary {
                    FeatureKind::Binary
                } else {
                    FeatureKind::Continuous
                }
            })
            .collect();
        let blocks = FeatureSchema::infer_blocks(&names);
        let schema = FeatureSchema {
            names,
            kinds,
            blocks,
        };
        let mut ds = Dataset::new(x, t, column(y_col), schema)?.with_truth(
            ycf_col.map(column),
            mu0_col.map(column),
            mu1_col.map(column),
        )?;
        // block-named columns identify the synthetic scenario
        if let Some(b) = &ds.schema.blocks {
            let scenario = format!("{}_{}_{}", b.gamma, b.delta, b.upsilon);
            ds.metadata.insert("scenario".into(), scenario);
            ds.metadata.insert("column_order".into(), "gamma,delta,upsilon,xi".into());
        }
        Ok(ds)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut header: Vec<&str> = self.schema.names.iter().map(String::as_str).collect();
        header.extend(["t", "y"]);
        let optional = [("ycf", &self.y_cf), ("mu0", &self.mu0), ("mu1", &self.mu1)];
        for (name, col) in &optional {
            if col.is_some() {
                header.push(name);
            }
        }
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut line = String::new();
            for v in self.x.row(i) {
                line.push_str(&format!("{v},"));
            }
            line.push_str(&format!("{},{}", self.t[i], self.y[i]));
            for (_, col) in &optional {
                if let Some(c) = col {
                    line.push_str(&format!(",{}", c[i]));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Seed-deterministic split stratified by treatment arm.
///
/// Each arm contributes `round(train_frac · n_arm)` instances to the training
/// side. Returned index lists are sorted.
pub fn split_indices(t: &[u8], train_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_frac}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for arm in [0u8, 1] {
        let mut idx: Vec<usize> = (0..t.len()).filter(|&i| t[i] == arm).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let n_train = (train_frac * idx.len() as f64).round() as usize;
        if n_train == 0 || n_train == idx.len() {
            return Err(Error::Stratification(format!(
                "arm t={arm} has {} instances; a {train_frac} split leaves one side without it",
                idx.len()
            )));
        }
        train.extend_from_slice(&idx[..n_train]);
        valid.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

pub fn split(dataset: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (tr, va) = split_indices(&dataset.t, train_frac, seed)?;
    Ok((dataset.subset(&tr), dataset.subset(&va)))
}

/// One epoch of shuffled mini-batches over `0..n`; the final batch may be short.
/// The shuffle depends on both `seed` and `epoch`.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!("batch size must be at least 2, got {batch_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Per-column affine standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub outcome_mean: f64,
    pub outcome_std: f64,
}

impl Standardizer {
    pub fn identity(width: usize) -> Self {
        Standardizer {
            feature_mean: vec![0.0; width],
            feature_std: vec![1.0; width],
            outcome_mean: 0.0,
            outcome_std: 1.0,
        }
    }

    /// Continuous columns get a z-score; binary columns pass through. The
    /// outcome is standardized only when `real_outcome` is set.
    pub fn fit(data: &Dataset, real_outcome: bool) -> Self {
        let n = data.len().max(1) as f64;
        let mut s = Standardizer::identity(data.width());
        for (j, kind) in data.schema.kinds.iter().enumerate() {
            if *kind == FeatureKind::Continuous {
                let (m, sd) = mean_std(data.x.column(j).iter().copied(), n);
                s.feature_mean[j] = m;
                s.feature_std[j] = sd;
            }
        }
        if real_outcome {
            let (m, sd) = mean_std(data.y.iter().copied(), n);
            s.outcome_mean = m;
            s.outcome_std = sd;
        }
        s
    }

    pub fn transform_x(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            let (m, s) = (self.feature_mean[j], self.feature_std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn transform_y(&self, y: f64) -> f64 {
        (y - self.outcome_mean) / self.outcome_std
    }

    pub fn inverse_y(&self, y: f64) -> f64 {
        y * self.outcome_std + self.outcome_mean
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Dataset> {
        Dataset::from_reader(s.as_bytes())
    }

    #[test]
    fn reads_small_file() {
        let ds = parse("x0,x1,t,y\n0.5,0,1,2.0\n1.5,1,0,3.0\n-2,1,1,4\n").unwrap();
        assert_eq!((ds.len(), ds.width()), (3, 2));
        assert_eq!(ds.t, vec![1, 0, 1]);
        assert_eq!(ds.schema.kinds, vec![FeatureKind::Continuous, FeatureKind::Binary]);
        assert!(ds.y_cf.is_none());
    }

    #[test]
    fn binary_inference() {
        let ds = parse("a,b,t,y\n0,0,0,1\n1,1,1,1\n1,0.5,0,1\n").unwrap();
        assert_eq!(ds.schema.kinds, vec![FeatureKind::Binary, FeatureKind::Continuous]);
    }

    #[test]
    fn parse_errors_carry_location() {
        assert!(matches!(parse("x0,y\n1,2\n"), Err(Error::Parse { row: 1, .. })));
        assert!(matches!(parse("x0,t\n1,0\n"), Err(Error::Parse { row: 1, .. })));
        match parse("x0,t,y\n1,0,2\n1,abc,2\n") {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        match parse("x0,t,y\n1,0,2\n1,0\n") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn block_annotation_from_names() {
        let names: Vec<String> = ["gamma_0", "delta_0", "delta_1", "xi_0"].map(String::from).to_vec();
        let b = FeatureSchema::infer_blocks(&names).unwrap();
        assert_eq!((b.gamma, b.delta, b.upsilon, b.xi), (1, 2, 0, 1));
        let shuffled: Vec<String> = ["delta_0", "gamma_0"].map(String::from).to_vec();
        assert!(FeatureSchema::infer_blocks(&shuffled).is_none());
        let plain: Vec<String> = ["x0"].map(String::from).to_vec();
        assert!(FeatureSchema::infer_blocks(&plain).is_none());
    }

    #[test]
    fn split_examples() {
        let t: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let (a, b) = split_indices(&t, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        assert_eq!(a.iter().filter(|&&i| t[i] == 1).count(), 4);
        assert_eq!(a.iter().filter(|&&i| t[i] == 0).count(), 4);
        assert_eq!(split_indices(&t, 0.8, 3).unwrap(), (a, b));
        let lonely = [0, 0, 0, 0, 1];
        assert!(matches!(split_indices(&lonely, 0.8, 1), Err(Error::Stratification(_))));
        assert!(split_indices(&t, 1.0, 1).is_err());
    }

    #[test]
    fn batch_examples() {
        let b = batches(700, 300, 9, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![300, 300, 100]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..700).collect::<Vec<_>>());
        assert_ne!(batches(700, 300, 9, 1).unwrap(), b);
        assert_eq!(batches(700, 300, 9, 0).unwrap(), b);
        assert!(batches(10, 1, 0, 0).is_err());
    }

    #[test]
    fn standardizer_round_trip() {
        let x = array![[1.0, 0.0], [3.0, 1.0], [5.0, 1.0]];
        let schema = FeatureSchema {
            names: vec!["a".into(), "b".into()],
            kinds: vec![FeatureKind::Continuous, FeatureKind::Binary],
            blocks: None,
        };
        let ds = Dataset::new(x, vec![0, 1, 0], vec![2.0, 4.0, 6.0], schema).unwrap();
        let s = Standardizer::fit(&ds, true);
        let z = s.transform_x(&ds.x);
        assert!(z.column(0).sum().abs() < 1e-12);
        assert_eq!(z.column(1), ds.x.column(1));
        assert!((s.inverse_y(s.transform_y(4.5)) - 4.5).abs() < 1e-12);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (2usize..20, 1usize..5).prop_flat_map(|(n, k)| {
            (
                prop::collection::vec(-1e6..1e6f64, n * k),
                prop::collection::vec(0u8..2, n),
                prop::collection::vec(-1e3..1e3f64, n),
                prop::collection::vec(-1e3..1e3f64, n),
            )
                .prop_map(move |(x, t, y, ycf)| {
                    let x = Array2::from_shape_vec((n, k), x).unwrap();
                    let schema = FeatureSchema::continuous((0..k).map(|j| format!("x{j}")).collect());
                    Dataset::new(x, t, y, schema)
                        .unwrap()
                        .with_truth(Some(ycf), None, None)
                        .unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(ds in arb_dataset()) {
            let mut buf = Vec::new();
            ds.write_to(&mut buf).unwrap();
            let back = Dataset::from_reader(buf.as_slice()).unwrap();
            prop_assert_eq!(&back.x, &ds.x);
            prop_assert_eq!(&back.t, &ds.t);
            prop_assert_eq!(&back.y, &ds.y);
            prop_assert_eq!(&back.y_cf, &ds.y_cf);
        }

        #[test]
        fn split_is_stratified_and_exhaustive(
            t in prop::collection::vec(0u8..2, 10..200),
            seed in any::<u64>(),
            frac in 0.2..0.8f64,
        ) {
            let n1 = t.iter().filter(|&&v| v == 1).count();
            let n0 = t.len() - n1;
            prop_assume!(n0 >= 5 && n1 >= 5);
            let (tr, va) = split_indices(&t, frac, seed).unwrap();
            let mut all = [tr.clone(), va.clone()].concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..t.len()).collect::<Vec<_>>());
            let tr1 = tr.iter().filter(|&&i| t[i] == 1).count() as f64;
            prop_assert!((tr1 - frac * n1 as f64).abs() <= 1.0);
            let tr0 = tr.len() as f64 - tr1;
            prop_assert!((tr0 - frac * n0 as f64).abs() <= 1.0);
        }

        #[test]
        fn batches_partition(n in 1usize..1000, size in 2usize..400, seed in any::<u64>(), epoch in 0u64..5) {
            let mut all = batches(n, size, seed, epoch).unwrap().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
