//! Regression engines for conditional expectations: ordinary least squares
//! via modified Gram-Schmidt QR (with collinear-column dropping and classic
//! t statistics) and cross-fitted k-nearest-neighbour averaging.
//!
//! Every routine here is invariant under reordering of the observations: the
//! rows are processed internally in path-id order and the results mapped back.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::rng::splitmix64;
use crate::stats::t_two_sided_p;

/// Result of an OLS fit. Dropped (collinear) columns carry coefficient 0 and
/// NaN inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub stderr: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub p_values: Vec<f64>,
    pub kept: Vec<bool>,
    pub residual_df: usize,
    pub sigma2: f64,
}

impl OlsFit {
    pub fn rank(&self) -> usize {
        self.kept.iter().filter(|k| **k).count()
    }

    pub fn dropped_columns(&self) -> bool {
        self.kept.iter().any(|k| !k)
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Least squares of `y` on the columns of `design` (column-major, each of
/// length `n`). Columns whose residual norm after orthogonalisation falls
/// below `1e-9` of their original norm are dropped.
pub fn ols(design: &[Vec<f64>], y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    let p = design.len();
    if p == 0 {
        return Err(Error::invalid("ols with an empty design"));
    }
    if design.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("design columns and response differ in length"));
    }
    if y.iter().chain(design.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("ols", "non-finite value in design or response"));
    }
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut kept = vec![false; p];
    let mut kept_idx = Vec::with_capacity(p);
    // r[k][j]: column k of R over kept columns, row j
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(p);
    for (j, col) in design.iter().enumerate() {
        let norm0 = dot(col, col).sqrt();
        let mut v = col.clone();
        let mut rc = vec![0.0; q.len() + 1];
        // two passes of MGS for numerical orthogonality
        for _ in 0..2 {
            for (k, qk) in q.iter().enumerate() {
                let c = dot(qk, &v);
                rc[k] += c;
                v.iter_mut().zip(qk).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm0 == 0.0 || norm <= 1e-9 * norm0 {
            continue;
        }
        v.iter_mut().for_each(|vi| *vi /= norm);
        rc[q.len()] = norm;
        q.push(v);
        r.push(rc);
        kept[j] = true;
        kept_idx.push(j);
    }
    let rank = q.len();
    if rank == 0 {
        return Err(Error::invalid("ols design has no usable column"));
    }
    if n <= rank {
        return Err(Error::invalid(format!(
            "ols needs more rows ({n}) than columns ({rank})"
        )));
    }
    let qty: Vec<f64> = q.iter().map(|qk| dot(qk, y)).collect();
    // back substitution, R upper triangular with R[i][k] = r[k][i]
    let mut beta = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut s = qty[i];
        for k in i + 1..rank {
            s -= r[k][i] * beta[k];
        }
        beta[i] = s / r[i][i];
    }
    let mut resid = y.to_vec();
    for (qk, c) in q.iter().zip(&qty) {
        resid.iter_mut().zip(qk).for_each(|(e, qi)| *e -= c * qi);
    }
    let df = n - rank;
    let sigma2 = dot(&resid, &resid) / df as f64;
    // R^{-1}, column by column
    let mut rinv = vec![vec![0.0; rank]; rank]; // rinv[i][k]
    for k in 0..rank {
        rinv[k][k] = 1.0 / r[k][k];
        for i in (0..k).rev() {
            let mut s = 0.0;
            for j in i + 1..=k {
                s += r[j][i] * rinv[j][k];
            }
            rinv[i][k] = -s / r[i][i];
        }
    }
    let mut coefficients = vec![0.0; p];
    let mut stderr = vec![f64::NAN; p];
    let mut t_stats = vec![f64::NAN; p];
    let mut p_values = vec![f64::NAN; p];
    for (i, &j) in kept_idx.iter().enumerate() {
        let var: f64 = (i..rank).map(|k| rinv[i][k] * rinv[i][k]).sum::<f64>() * sigma2;
        let se = var.sqrt();
        coefficients[j] = beta[i];
        stderr[j] = se;
        let t = if se > 0.0 {
            beta[i] / se
        } else if beta[i] == 0.0 {
            0.0
        } else {
            beta[i].signum() * f64::INFINITY
        };
        t_stats[j] = t;
        p_values[j] = t_two_sided_p(t, df as f64)?;
    }
    Ok(OlsFit {
        coefficients,
        stderr,
        t_stats,
        p_values,
        kept,
        residual_df: df,
        sigma2,
    })
}

/// Design basis for least-squares conditional expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    /// Constant and linear terms.
    Affine,
    /// Constant, linear and all pairwise products including squares.
    Quadratic,
}

impl Basis {
    pub fn expand(self, row: &[f64]) -> Vec<f64> {
        match self {
            Basis::Affine => std::iter::once(1.0).chain(row.iter().copied()).collect(),
            Basis::Quadratic => quadratic_terms(row),
        }
    }
}

/// `[1, x_1, .., x_d, x_1 x_1, x_1 x_2, .., x_d x_d]`.
pub fn quadratic_terms(row: &[f64]) -> Vec<f64> {
    let d = row.len();
    let mut out = Vec::with_capacity(1 + d + d * (d + 1) / 2);
    out.push(1.0);
    out.extend_from_slice(row);
    for i in 0..d {
        for j in i..d {
            out.push(row[i] * row[j]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegressionMethod {
    /// `k = None` uses `ceil(n^{4/5} / 10)`.
    Knn {
        k: Option<usize>,
    },
    LeastSquares {
        basis: Basis,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub method: RegressionMethod,
    pub folds: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            method: RegressionMethod::Knn { k: None },
            folds: 5,
        }
    }
}

impl RegressionConfig {
    pub fn least_squares(basis: Basis) -> Self {
        Self {
            method: RegressionMethod::LeastSquares { basis },
            folds: 5,
        }
    }

    pub fn knn(k: Option<usize>) -> Self {
        Self {
            method: RegressionMethod::Knn { k },
            folds: 5,
        }
    }
}

/// Fitted conditional expectation, one value per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionEstimate {
    pub fitted: Vec<f64>,
    pub method: String,
    pub in_sample_l1: f64,
    pub cross_fitted_l1: f64,
    /// Set when every feature was constant and the sample mean was used.
    pub degenerate_features: bool,
}

pub fn default_k(n: usize) -> usize {
    ((n as f64).powf(0.8) / 10.0).ceil().max(1.0) as usize
}

/// Fold of a path, from its id alone.
pub fn fold_of(id: u64, folds: usize) -> usize {
    (splitmix64(id ^ 0x0F01_D5EE_D000_0001) % folds as u64) as usize
}

/// Cross-fitted regression of `targets` on `features` (one row per path).
pub fn cross_fit(
    features: &[Vec<f64>],
    ids: &[u64],
    targets: &[f64],
    cfg: &RegressionConfig,
) -> Result<RegressionEstimate> {
    let n = targets.len();
    if features.len() != n || ids.len() != n {
        return Err(Error::invalid("features, ids and targets differ in length"));
    }
    if n < 2 * cfg.folds.max(2) {
        return Err(Error::invalid(format!("too few paths ({n}) for {} folds", cfg.folds)));
    }
    if cfg.folds < 2 {
        return Err(Error::invalid("cross-fitting needs at least two folds"));
    }
    let d = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    if targets.iter().chain(features.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("regression", "non-finite target or feature"));
    }
    // canonical order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| ids[i]);
    if order.windows(2).any(|w| ids[w[0]] == ids[w[1]]) {
        return Err(Error::invalid("duplicate path ids"));
    }
    let y: Vec<f64> = order.iter().map(|&i| targets[i]).collect();
    let sid: Vec<u64> = order.iter().map(|&i| ids[i]).collect();
    let x = standardize(&order.iter().map(|&i| features[i].clone()).collect::<Vec<_>>());
    let folds: Vec<usize> = sid.iter().map(|&id| fold_of(id, cfg.folds)).collect();

    let (fitted_sorted, in_sample, label, degenerate) = if x.first().is_none_or(|r| r.is_empty()) {
        let m = pairwise_mean(&y);
        let cross = (0..cfg.folds)
            .map(|f| {
                let train: Vec<f64> = y
                    .iter()
                    .zip(&folds)
                    .filter(|(_, g)| **g != f)
                    .map(|(v, _)| *v)
                    .collect();
                pairwise_mean(&train)
            })
            .collect::<Vec<_>>();
        let fitted = folds.iter().map(|&f| cross[f]).collect();
        (fitted, vec![m; n], "sample-mean".to_string(), true)
    } else {
        match cfg.method {
            RegressionMethod::Knn { k } => {
                let k = k.unwrap_or_else(|| default_k(n));
                if k == 0 {
                    return Err(Error::invalid("k must be positive"));
                }
                let cross = knn_cross(&x, &y, &sid, &folds, cfg.folds, k);
                let all = knn_fit(
                    &x,
                    &y,
                    &sid,
                    &(0..n).collect::<Vec<_>>(),
                    &(0..n).collect::<Vec<_>>(),
                    k,
                );
                (cross, all, format!("knn(k={k},folds={})", cfg.folds), false)
            }
            RegressionMethod::LeastSquares { basis } => {
                let rows: Vec<Vec<f64>> = x.iter().map(|r| basis.expand(r)).collect();
                let mut cross = vec![0.0; n];
                for f in 0..cfg.folds {
                    let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
                    let fit = ols(
                        &columns(&rows, &train),
                        &train.iter().map(|&i| y[i]).collect::<Vec<_>>(),
                    )?;
                    for i in (0..n).filter(|&i| folds[i] == f) {
                        cross[i] = fit.predict(&rows[i]);
                    }
                }
                let all: Vec<usize> = (0..n).collect();
                let fit = ols(&columns(&rows, &all), &y)?;
                let ins = rows.iter().map(|r| fit.predict(r)).collect();
                (
                    cross,
                    ins,
                    format!("least-squares({basis:?},folds={})", cfg.folds).to_lowercase(),
                    false,
                )
            }
        }
    };
    let l1 = |f: &[f64]| pairwise_mean(&f.iter().zip(&y).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>());
    let cross_fitted_l1 = l1(&fitted_sorted);
    let in_sample_l1 = l1(&in_sample);
    let mut fitted = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        fitted[i] = fitted_sorted[pos];
    }
    if fitted.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("regression", "non-finite fitted value"));
    }
    Ok(RegressionEstimate {
        fitted,
        method: label,
        in_sample_l1,
        cross_fitted_l1,
        degenerate_features: degenerate,
    })
}

fn columns(rows: &[Vec<f64>], idx: &[usize]) -> Vec<Vec<f64>> {
    let p = rows[0].len();
    (0..p).map(|j| idx.iter().map(|&i| rows[i][j]).collect()).collect()
}

/// Pairwise (cascade) summation mean; fixed reduction order.
pub fn pairwise_mean(xs: &[f64]) -> f64 {
    fn sum(xs: &[f64]) -> f64 {
        if xs.len() <= 32 {
            return xs.iter().sum();
        }
        let (a, b) = xs.split_at(xs.len() / 2);
        sum(a) + sum(b)
    }
    if xs.is_empty() {
        0.0
    } else {
        sum(xs) / xs.len() as f64
    }
}

/// Standardise each column to mean 0, sd 1; constant columns are removed.
fn standardize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let mut keep = Vec::new();
    for j in 0..d {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let m = pairwise_mean(&col);
        let v = pairwise_mean(&col.iter().map(|x| (x - m).powi(2)).collect::<Vec<_>>());
        let sd = v.sqrt();
        if sd > 1e-12 * (1.0 + m.abs()) {
            keep.push((j, m, sd));
        }
    }
    (0..n)
        .map(|i| keep.iter().map(|&(j, m, sd)| (rows[i][j] - m) / sd).collect())
        .collect()
}

#[derive(PartialEq)]
struct Cand {
    dist: f64,
    id: u64,
    idx: usize,
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// kNN means for `queries` using only `train` rows. The training set is
/// swept outward along the first coordinate, which bounds the distance.
fn knn_fit(x: &[Vec<f64>], y: &[f64], ids: &[u64], train: &[usize], queries: &[usize], k: usize) -> Vec<f64> {
    let mut sorted: Vec<usize> = train.to_vec();
    sorted.sort_by(|&a, &b| x[a][0].total_cmp(&x[b][0]).then(ids[a].cmp(&ids[b])));
    let keys: Vec<f64> = sorted.iter().map(|&i| x[i][0]).collect();
    let k = k.min(sorted.len());
    par::map_range(queries.len(), |qi| {
        let q = &x[queries[qi]];
        let start = keys.partition_point(|&v| v < q[0]);
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        let mut push = |idx: usize| {
            let c = Cand {
                dist: sq_dist(q, &x[idx]),
                id: ids[idx],
                idx,
            };
            if heap.len() < k {
                heap.push(c);
            } else if c < *heap.peek().expect("k >= 1") {
                heap.pop();
                heap.push(c);
            }
            if heap.len() == k {
                heap.peek().map_or(f64::INFINITY, |c| c.dist)
            } else {
                f64::INFINITY
            }
        };
        let (mut lo, mut hi) = (start, start);
        let mut worst = f64::INFINITY;
        loop {
            let dl = if lo > 0 {
                (q[0] - keys[lo - 1]).powi(2)
            } else {
                f64::INFINITY
            };
            let dh = if hi < keys.len() {
                (keys[hi] - q[0]).powi(2)
            } else {
                f64::INFINITY
            };
            let (gap, left) = if dl <= dh { (dl, true) } else { (dh, false) };
            if gap == f64::INFINITY || gap > worst {
                break;
            }
            if left {
                lo -= 1;
                worst = push(sorted[lo]);
            } else {
                worst = push(sorted[hi]);
                hi += 1;
            }
        }
        let mut nb = heap.into_vec();
        nb.sort();
        nb.iter().map(|c| y[c.idx]).sum::<f64>() / nb.len() as f64
    })
}

fn knn_cross(x: &[Vec<f64>], y: &[f64], ids: &[u64], folds: &[usize], nfolds: usize, k: usize) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    for f in 0..nfolds {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let queries: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        if queries.is_empty() {
            continue;
        }
        for (q, v) in queries.iter().zip(knn_fit(x, y, ids, &train, &queries, k)) {
            out[*q] = v;
        }
    }
    out
}
