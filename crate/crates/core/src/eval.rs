//! Evaluation: ground-truth matching, correlations, FNC, modularity, paired
//! t-tests, class-balanced folds, macro F-scores, KNN and logistic
//! regression classifiers, a PCA baseline, and the depth experiment.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::data::{self, DataError, SampleMatrix};
use crate::dbn::{self, DbnError, FineTuneConfig};
use crate::rbm::RbmTrainConfig;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("requested {requested} components but data has rank {rank}")]
    DegenerateRank { requested: usize, rank: usize },
    #[error("differences have zero variance")]
    DegenerateVariance,
    #[error("invalid fold count {folds} for {samples} samples")]
    InvalidFolds { folds: usize, samples: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Dbn(#[from] DbnError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Pearson correlation; 0 when either input has zero variance.
pub fn pearson(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.sum() / n, b.sum() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Correlation of every row of `a` with every row of `b`.
pub fn row_correlations(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| pearson(a.row(i), b.row(j)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `n x cols`, orthonormal rows.
    pub components: Array2<f64>,
    /// `rows x n` coordinates of the centered data.
    pub projections: Array2<f64>,
    /// Variance (sum of squares of centered data) captured by each component.
    pub eigenvalues: Vec<f64>,
    /// Sum of squares of the centered data left out by the kept components.
    pub discarded: f64,
    pub mean: Array1<f64>,
}

/// Principal components of the column-centered data. Each component's
/// largest-magnitude coordinate is made positive.
pub fn pca_baseline(data: &SampleMatrix, n_components: usize) -> Result<Pca, EvalError> {
    let (rows, cols) = (data.rows(), data.cols());
    if n_components == 0 || n_components > rows.min(cols) {
        return Err(EvalError::InvalidArgument(format!(
            "n_components {n_components} must lie in 1..={}",
            rows.min(cols)
        )));
    }
    let mean = data::column_means(data.view());
    let centered = data.values() - &mean.view().insert_axis(Axis(0));
    let total: f64 = centered.iter().map(|v| v * v).sum();

    // Eigen-decompose the smaller of the Gram and scatter matrices.
    let use_gram = rows <= cols;
    let small = if use_gram {
        centered.dot(&centered.t())
    } else {
        centered.t().dot(&centered)
    };
    let k = small.nrows();
    let eig = SymmetricEigen::new(DMatrix::from_fn(k, k, |i, j| small[[i, j]]));
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = top * 1e-12 * k as f64;
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > floor)
        .count();
    if top <= 0.0 || rank < n_components {
        return Err(EvalError::DegenerateRank {
            requested: n_components,
            rank: if top <= 0.0 { 0 } else { rank },
        });
    }

    let mut components = Array2::zeros((n_components, cols));
    let mut eigenvalues = Vec::with_capacity(n_components);
    for (c, &i) in order.iter().take(n_components).enumerate() {
        let lambda = eig.eigenvalues[i];
        let vec = Array1::from_iter(eig.eigenvectors.column(i).iter().copied());
        let mut comp = if use_gram {
            centered.t().dot(&vec) / lambda.sqrt()
        } else {
            vec
        };
        let norm = comp.dot(&comp).sqrt();
        comp /= norm;
        let lead =
            comp.iter().enumerate().fold(
                0,
                |best, (j, v)| if v.abs() > comp[best].abs() { j } else { best },
            );
        if comp[lead] < 0.0 {
            comp.mapv_inplace(|v| -v);
        }
        components.row_mut(c).assign(&comp);
        eigenvalues.push(lambda);
    }
    let projections = centered.dot(&components.t());
    let kept: f64 = eigenvalues.iter().sum();
    Ok(Pca {
        components,
        projections,
        eigenvalues,
        discarded: (total - kept).max(0.0),
        mean,
    })
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows <= cols`). Returns the column for each row. Ties resolve to the
/// lowest column index.
pub fn hungarian(cost: ArrayView2<'_, f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "hungarian needs rows <= cols");
    // Potentials formulation, 1-based with a virtual row/column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub ground_truth: usize,
    pub estimate: usize,
    /// Sign that makes the matched correlation nonnegative.
    pub sign: f64,
    /// |Pearson r| between the spatial maps.
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One entry per matched pair, ordered by ground-truth index.
    pub pairs: Vec<MatchedPair>,
    pub mean_sm_correlation: f64,
    pub tc_correlations: Option<Vec<f64>>,
    pub mean_tc_correlation: Option<f64>,
}

impl MatchResult {
    /// Correlates time courses (columns) under the spatial matching, with
    /// the matched signs applied.
    pub fn with_time_courses(
        mut self,
        est_tc: &SampleMatrix,
        gt_tc: &SampleMatrix,
    ) -> Result<Self, EvalError> {
        if est_tc.rows() != gt_tc.rows() {
            return Err(EvalError::DimensionMismatch {
                what: "time course length",
                expected: gt_tc.rows(),
                found: est_tc.rows(),
            });
        }
        let mut corr = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            if p.estimate >= est_tc.cols() || p.ground_truth >= gt_tc.cols() {
                return Err(EvalError::InvalidArgument(
                    "time courses do not cover matched components".into(),
                ));
            }
            let r = pearson(
                est_tc.values().column(p.estimate),
                gt_tc.values().column(p.ground_truth),
            );
            corr.push(p.sign * r);
        }
        self.mean_tc_correlation = Some(mean(&corr));
        self.tc_correlations = Some(corr);
        Ok(self)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Assigns estimated components (rows of `est`) to ground-truth components
/// (rows of `gt`) maximizing the summed absolute correlation.
pub fn match_components(est: &SampleMatrix, gt: &SampleMatrix) -> Result<MatchResult, EvalError> {
    if est.cols() != gt.cols() {
        return Err(EvalError::DimensionMismatch {
            what: "component length",
            expected: gt.cols(),
            found: est.cols(),
        });
    }
    let corr = row_correlations(gt.view(), est.view());
    let abs_cost = corr.mapv(|r| -r.abs());
    let pairs_gt_est: Vec<(usize, usize)> = if gt.rows() <= est.rows() {
        hungarian(abs_cost.view()).into_iter().enumerate().collect()
    } else {
        let mut p: Vec<(usize, usize)> = hungarian(abs_cost.t())
            .into_iter()
            .enumerate()
            .map(|(e, g)| (g, e))
            .collect();
        p.sort_unstable();
        p
    };
    let pairs: Vec<MatchedPair> = pairs_gt_est
        .into_iter()
        .map(|(g, e)| {
            let r = corr[[g, e]];
            MatchedPair {
                ground_truth: g,
                estimate: e,
                sign: if r < 0.0 { -1.0 } else { 1.0 },
                correlation: r.abs(),
            }
        })
        .collect();
    let mean_sm = mean(&pairs.iter().map(|p| p.correlation).collect::<Vec<_>>());
    Ok(MatchResult {
        pairs,
        mean_sm_correlation: mean_sm,
        tc_correlations: None,
        mean_tc_correlation: None,
    })
}

/// Correlation matrix of the time-course columns. Zero-variance columns get
/// zero off-diagonal entries.
pub fn fnc(tc: &SampleMatrix) -> Result<Array2<f64>, EvalError> {
    if tc.rows() < 3 {
        return Err(EvalError::InvalidArgument(format!(
            "fnc needs at least 3 timepoints, got {}",
            tc.rows()
        )));
    }
    let r = tc.cols();
    let cols = tc.values().t();
    let mut out = Array2::eye(r);
    for i in 0..r {
        for j in i + 1..r {
            let c = pearson(cols.row(i), cols.row(j));
            out[[i, j]] = c;
            out[[j, i]] = c;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Modularity {
    pub q: f64,
    /// Community of each node, numbered by first appearance.
    pub labels: Vec<usize>,
}

impl Modularity {
    pub fn communities(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Signed modularity of a partition of a weighted graph: the positive part
/// normalized by its own total weight minus the negative part normalized by
/// the total absolute weight. The diagonal is ignored.
pub fn signed_modularity(c: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    let n = c.nrows();
    let part = |sign: f64| {
        let w = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                (sign * c[[i, j]]).max(0.0)
            }
        });
        let strength = w.sum_axis(Axis(1));
        let total = strength.sum();
        let mut within = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    within += w[[i, j]]
                        - if total > 0.0 {
                            strength[i] * strength[j] / total
                        } else {
                            0.0
                        };
                }
            }
        }
        (within, total)
    };
    let (pos, vpos) = part(1.0);
    let (neg, vneg) = part(-1.0);
    let mut q = 0.0;
    if vpos > 0.0 {
        q += pos / vpos;
    }
    if vneg > 0.0 {
        q -= neg / (vpos + vneg);
    }
    q
}

/// Greedy agglomerative modularity maximization on the positive weights
/// (diagonal excluded), scored with [`signed_modularity`].
pub fn modularity(c: ArrayView2<'_, f64>) -> Result<Modularity, EvalError> {
    let n = c.nrows();
    if n == 0 || c.ncols() != n {
        return Err(EvalError::InvalidArgument(
            "modularity needs a non-empty square matrix".into(),
        ));
    }
    for i in 0..n {
        for j in 0..i {
            if (c[[i, j]] - c[[j, i]]).abs() > 1e-12 * (1.0 + c[[i, j]].abs()) {
                return Err(EvalError::InvalidArgument(
                    "modularity needs a symmetric matrix".into(),
                ));
            }
        }
    }
    let w = Array2::from_shape_fn(
        (n, n),
        |(i, j)| if i == j { 0.0 } else { c[[i, j]].max(0.0) },
    );
    let total = w.sum();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    if total > 0.0 {
        // e[a][b]: weight between communities; strength[a]: summed node strength.
        let mut e = w.clone();
        let mut strength = w.sum_axis(Axis(1));
        let mut alive: Vec<bool> = vec![true; n];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for a in 0..n {
                if !alive[a] {
                    continue;
                }
                for b in a + 1..n {
                    if !alive[b] {
                        continue;
                    }
                    let dq =
                        2.0 * (e[[a, b]] / total - strength[a] * strength[b] / (total * total));
                    if dq > 1e-14 && best.is_none_or(|(q, _, _)| dq > q) {
                        best = Some((dq, a, b));
                    }
                }
            }
            let Some((_, a, b)) = best else { break };
            let moved = std::mem::take(&mut members[b]);
            members[a].extend(moved);
            alive[b] = false;
            strength[a] += strength[b];
            for k in 0..n {
                let merged = e[[a, k]] + e[[b, k]];
                e[[a, k]] = merged;
                e[[k, a]] = merged;
            }
            e[[a, a]] += e[[b, b]];
        }
    }
    let mut labels = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if labels[i] == usize::MAX {
            let group = members
                .iter()
                .find(|m| m.contains(&i))
                .expect("every node has a community");
            for &node in group {
                labels[node] = next;
            }
            next += 1;
        }
    }
    let q = if total > 0.0 || c.iter().any(|&v| v < 0.0) {
        signed_modularity(c, &labels)
    } else {
        0.0
    };
    Ok(Modularity { q, labels })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub dof: usize,
}

/// Paired t-test on `x - y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTest, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::DimensionMismatch {
            what: "paired samples",
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let sd = sample_sd(&d);
    if sd == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let n = d.len();
    let t = mean(&d) / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, p, dof: n - 1 })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    /// Fold index of every sample.
    pub assignment: Vec<usize>,
    pub folds: usize,
}

impl FoldPlan {
    /// `(train, test)` sample indices for `fold`, each in increasing order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignment.len()).partition(|&i| self.assignment[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Class-balanced folds: the samples of each class are shuffled with the
/// seeded generator and dealt round-robin, continuing the deal across classes.
pub fn kfold_split(labels: &[usize], folds: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if folds == 0 || folds > labels.len() {
        return Err(EvalError::InvalidFolds {
            folds,
            samples: labels.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(FoldPlan { assignment, folds })
}

/// F-score of each class present in `truth` or `pred`, as `(class, F)`.
pub fn per_class_f_scores(pred: &[usize], truth: &[usize]) -> Result<Vec<(usize, f64)>, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::DimensionMismatch {
            what: "predictions",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if truth.is_empty() {
        return Err(EvalError::Empty("macro F-score of no samples"));
    }
    let mut classes: Vec<usize> = truth.iter().chain(pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    Ok(classes
        .into_iter()
        .map(|c| {
            let tp = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == c && **t == c)
                .count() as f64;
            let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
            let actual = truth.iter().filter(|&&t| t == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            let f = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (c, f)
        })
        .collect())
}

/// Unweighted mean of the per-class F-scores.
pub fn macro_f_score(pred: &[usize], truth: &[usize]) -> Result<f64, EvalError> {
    let per_class = per_class_f_scores(pred, truth)?;
    Ok(per_class.iter().map(|(_, f)| f).sum::<f64>() / per_class.len() as f64)
}

/// Majority vote among the `k` nearest training rows (Euclidean). Distance
/// ties go to the lower training index, vote ties to the lower class.
pub fn knn_classify(
    train: &SampleMatrix,
    train_labels: &[usize],
    test: &SampleMatrix,
    k: usize,
) -> Result<Vec<usize>, EvalError> {
    if train_labels.len() != train.rows() {
        return Err(EvalError::DimensionMismatch {
            what: "training labels",
            expected: train.rows(),
            found: train_labels.len(),
        });
    }
    if train.cols() != test.cols() {
        return Err(EvalError::DimensionMismatch {
            what: "test columns",
            expected: train.cols(),
            found: test.cols(),
        });
    }
    if k == 0 || k > train.rows() {
        return Err(EvalError::InvalidArgument(format!(
            "k = {k} must lie in 1..={}",
            train.rows()
        )));
    }
    let classes = train_labels.iter().max().map_or(0, |m| m + 1);
    let out = test
        .values()
        .rows()
        .into_iter()
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = train
                .values()
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| (squared_distance(q, r), i))
                .collect();
            dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes = vec![0usize; classes];
            for &(_, i) in &dist[..k] {
                votes[train_labels[i]] += 1;
            }
            (0..classes).fold(0, |best, c| if votes[c] > votes[best] { c } else { best })
        })
        .collect();
    Ok(out)
}

pub(crate) fn squared_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    pub iterations: usize,
    pub l2: f64,
    /// Fixed step size; `None` uses the inverse of a curvature bound, which
    /// makes every step non-increasing in loss.
    pub learning_rate: Option<f64>,
    /// Class count; defaults to `max label + 1` (at least 2).
    pub classes: Option<usize>,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            l2: 1e-4,
            learning_rate: None,
            classes: None,
        }
    }
}

/// Multinomial logistic regression, `weights` stored `features x classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogRegModel {
    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            weights: Array2::zeros((features, classes)),
            bias: Array1::zeros(classes),
        }
    }

    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights) + self.bias.view().insert_axis(Axis(0));
        for mut row in z.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let total = row.sum();
            row /= total;
        }
        z
    }
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2`, and its gradient `(dW, db)`.
pub fn logreg_loss_and_gradient(
    model: &LogRegModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut delta = model.probabilities(x);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= delta[[i, y]].max(f64::MIN_POSITIVE).ln();
        delta[[i, y]] -= 1.0;
    }
    loss /= n;
    delta /= n;
    loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    let dw = x.t().dot(&delta) + &model.weights * l2;
    let db = delta.sum_axis(Axis(0));
    (loss, dw, db)
}

/// Largest eigenvalue of `[x 1]^T [x 1] / n`, by a fixed number of power
/// iterations from the all-ones vector.
fn curvature_bound(x: ArrayView2<'_, f64>) -> f64 {
    let n = x.nrows() as f64;
    let d = x.ncols();
    let mut v = Array1::ones(d + 1);
    let mut lambda = 0.0;
    for _ in 0..100 {
        let xv = x.dot(&v.slice(s![..d])) + v[d];
        let mut next = Array1::zeros(d + 1);
        next.slice_mut(s![..d]).assign(&(x.t().dot(&xv) / n));
        next[d] = xv.sum() / n;
        let norm = next.dot(&next).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / v.dot(&v).sqrt();
        v = next / norm;
    }
    lambda
}

/// Full-batch gradient descent from zero weights. Returns the model and the
/// loss before each iteration plus the final loss.
pub fn logreg_train(
    data: &SampleMatrix,
    labels: &[usize],
    cfg: &LogRegConfig,
) -> Result<(LogRegModel, Vec<f64>), EvalError> {
    if labels.len() != data.rows() {
        return Err(EvalError::DimensionMismatch {
            what: "labels",
            expected: data.rows(),
            found: labels.len(),
        });
    }
    if !(cfg.l2 >= 0.0 && cfg.l2.is_finite())
        || matches!(cfg.learning_rate, Some(lr) if !(lr > 0.0 && lr.is_finite()))
    {
        return Err(EvalError::InvalidArgument(
            "l2 must be >= 0 and learning rate > 0".into(),
        ));
    }
    let classes = cfg
        .classes
        .unwrap_or_else(|| labels.iter().max().map_or(2, |&m| (m + 1).max(2)));
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(EvalError::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let x = data.view();
    // Softmax cross-entropy has curvature at most 1/2 per unit input norm.
    let lr = cfg
        .learning_rate
        .unwrap_or_else(|| 1.0 / (0.5 * curvature_bound(x) * 1.05 + cfg.l2));
    let mut model = LogRegModel::zeros(data.cols(), classes);
    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    for _ in 0..cfg.iterations {
        let (loss, dw, db) = logreg_loss_and_gradient(&model, x, labels, cfg.l2);
        losses.push(loss);
        model.weights.scaled_add(-lr, &dw);
        model.bias.scaled_add(-lr, &db);
    }
    losses.push(logreg_loss_and_gradient(&model, x, labels, cfg.l2).0);
    Ok((model, losses))
}

/// Argmax class per row, lowest class on ties.
pub fn logreg_predict(model: &LogRegModel, data: &SampleMatrix) -> Result<Vec<usize>, EvalError> {
    if data.cols() != model.weights.nrows() {
        return Err(EvalError::DimensionMismatch {
            what: "features",
            expected: model.weights.nrows(),
            found: data.cols(),
        });
    }
    let probs = model.probabilities(data.view());
    Ok(probs.rows().into_iter().map(dbn::argmax).collect())
}

/// Mean silhouette coefficient of labeled points (Euclidean).
pub fn silhouette(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, EvalError> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(EvalError::DimensionMismatch {
            what: "labels",
            expected: n,
            found: labels.len(),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; classes];
        let mut counts = vec![0usize; classes];
        for j in 0..n {
            if i != j {
                sums[labels[j]] += squared_distance(points.row(i), points.row(j)).sqrt();
                counts[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if counts[own] == 0 {
            continue;
        }
        let a = sums[own] / counts[own] as f64;
        let b = (0..classes)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    Ok(total / n as f64)
}

/// Which representation a depth-table row scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FeatureDepth {
    Raw,
    Hidden(usize),
}

impl fmt::Display for FeatureDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureDepth::Raw => write!(f, "raw"),
            FeatureDepth::Hidden(d) => write!(f, "{d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    LogReg,
    Knn,
}

impl fmt::Display for Classifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Classifier::LogReg => write!(f, "LR"),
            Classifier::Knn => write!(f, "KNN"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DepthExperimentConfig {
    pub layer_sizes: Vec<usize>,
    pub pretrain: RbmTrainConfig,
    pub fine_tune: FineTuneConfig,
    pub logreg: LogRegConfig,
    pub knn_k: usize,
    pub folds: usize,
    pub scaling: InputScaling,
    pub seed: u64,
}

impl Default for DepthExperimentConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![50, 50, 100],
            pretrain: RbmTrainConfig {
                epsilon: 0.01,
                lambda: 0.001,
                epochs: 20,
                ..RbmTrainConfig::default()
            },
            fine_tune: FineTuneConfig {
                epochs: 100,
                ..FineTuneConfig::default()
            },
            logreg: LogRegConfig::default(),
            knn_k: 5,
            folds: 10,
            scaling: InputScaling::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRow {
    pub depth: FeatureDepth,
    pub classifier: Classifier,
    /// Macro F-score of each fold's test split.
    pub fold_scores: Vec<f64>,
    pub mean_f: f64,
    pub sd_f: f64,
    /// Mean over folds of each class's F-score, indexed by class.
    pub per_class_f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthTable {
    pub rows: Vec<DepthRow>,
}

impl DepthTable {
    pub fn get(&self, depth: FeatureDepth, classifier: Classifier) -> Option<&DepthRow> {
        self.rows
            .iter()
            .find(|r| r.depth == depth && r.classifier == classifier)
    }

    /// One line per condition: `depth classifier mean_f sd_f f_class0 f_class1 ...`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# depth classifier mean_f sd_f per_class_f...\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{} {} {:.6} {:.6}",
                r.depth, r.classifier, r.mean_f, r.sd_f
            ));
            for f in &r.per_class_f {
                out.push_str(&format!(" {f:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// How the depth experiment scales DBN inputs, using training-split statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputScaling {
    /// Per-column mean and population deviation.
    PerColumn,
    /// Per-column mean and one deviation pooled over all columns.
    #[default]
    Global,
}

/// Centers and scales both splits with statistics of `train`.
fn standardize_pair(
    train: &SampleMatrix,
    test: &SampleMatrix,
    scaling: InputScaling,
) -> Result<(SampleMatrix, SampleMatrix), DataError> {
    let mut stats: Vec<(f64, f64)> = train
        .values()
        .columns()
        .into_iter()
        .map(data::mean_and_population_sd)
        .collect();
    if scaling == InputScaling::Global {
        let pooled = (stats.iter().map(|(_, sd)| sd * sd).sum::<f64>() / stats.len() as f64).sqrt();
        for s in &mut stats {
            s.1 = pooled;
        }
    }
    let apply = |m: &SampleMatrix| {
        let mut v = m.values().clone();
        for (mut col, &(mu, sd)) in v.columns_mut().into_iter().zip(&stats) {
            if sd > 0.0 {
                col.mapv_inplace(|x| (x - mu) / sd);
            } else {
                col.fill(0.0);
            }
        }
        SampleMatrix::new(v)
    };
    Ok((apply(train)?, apply(test)?))
}

// (depth, classifier, macro F, per-class F)
type FoldScore = (FeatureDepth, Classifier, f64, Vec<(usize, f64)>);

struct FoldScores {
    scores: Vec<FoldScore>,
}

#[allow(clippy::too_many_arguments)]
fn score_classifiers(
    depth: FeatureDepth,
    train: &SampleMatrix,
    train_y: &[usize],
    test: &SampleMatrix,
    test_y: &[usize],
    cfg: &DepthExperimentConfig,
    classes: usize,
    out: &mut FoldScores,
) -> Result<(), EvalError> {
    let lr_cfg = LogRegConfig {
        classes: Some(classes),
        ..cfg.logreg.clone()
    };
    let (model, _) = logreg_train(train, train_y, &lr_cfg)?;
    let pred = logreg_predict(&model, test)?;
    out.scores.push((
        depth,
        Classifier::LogReg,
        macro_f_score(&pred, test_y)?,
        per_class_f_scores(&pred, test_y)?,
    ));
    let k = cfg.knn_k.min(train.rows());
    let pred = knn_classify(train, train_y, test, k)?;
    out.scores.push((
        depth,
        Classifier::Knn,
        macro_f_score(&pred, test_y)?,
        per_class_f_scores(&pred, test_y)?,
    ));
    Ok(())
}

/// Cross-validated classification of raw data and of DBN features at every
/// depth. For each fold a stack of `layer_sizes` is pretrained on the
/// standardized training split; for each depth `d` the bottom `d` layers get
/// a softmax head, are fine-tuned, and their top activations feed the LR and
/// KNN classifiers.
pub fn depth_experiment(
    data: &SampleMatrix,
    labels: &[usize],
    cfg: &DepthExperimentConfig,
) -> Result<DepthTable, EvalError> {
    if labels.len() != data.rows() {
        return Err(EvalError::DimensionMismatch {
            what: "labels",
            expected: data.rows(),
            found: labels.len(),
        });
    }
    if cfg.layer_sizes.is_empty() {
        return Err(EvalError::InvalidArgument(
            "layer_sizes must be non-empty".into(),
        ));
    }
    let classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    let plan = kfold_split(labels, cfg.folds, cfg.seed)?;
    let mut per_fold = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let (train_idx, test_idx) = plan.split(fold);
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(EvalError::InvalidFolds {
                folds: cfg.folds,
                samples: labels.len(),
            });
        }
        let train = data.select_rows(&train_idx)?;
        let test = data.select_rows(&test_idx)?;
        let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let test_y: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        let mut scores = FoldScores { scores: Vec::new() };
        score_classifiers(
            FeatureDepth::Raw,
            &train,
            &train_y,
            &test,
            &test_y,
            cfg,
            classes,
            &mut scores,
        )?;

        let (train_z, test_z) = standardize_pair(&train, &test, cfg.scaling)?;
        let fold_seed = cfg.seed.wrapping_add(1000 * (fold as u64 + 1));
        let pre_cfg = RbmTrainConfig {
            seed: fold_seed,
            ..cfg.pretrain.clone()
        };
        let (stack, _) = dbn::pretrain(&train_z, &cfg.layer_sizes, &pre_cfg)?;
        for depth in 1..=stack.depth() {
            let ft_cfg = FineTuneConfig {
                seed: fold_seed.wrapping_add(depth as u64),
                classes: Some(classes),
                ..cfg.fine_tune.clone()
            };
            let (tuned, _) = dbn::fine_tune(&stack.truncated(depth)?, &train_z, &train_y, &ft_cfg)?;
            let f_train = dbn::hidden_features(&tuned, &train_z, depth)?;
            let f_test = dbn::hidden_features(&tuned, &test_z, depth)?;
            score_classifiers(
                FeatureDepth::Hidden(depth),
                &f_train,
                &train_y,
                &f_test,
                &test_y,
                cfg,
                classes,
                &mut scores,
            )?;
        }
        per_fold.push(scores);
    }

    let mut rows = Vec::new();
    let depths = std::iter::once(FeatureDepth::Raw)
        .chain((1..=cfg.layer_sizes.len()).map(FeatureDepth::Hidden));
    for depth in depths {
        for classifier in [Classifier::LogReg, Classifier::Knn] {
            let mut fold_scores = Vec::with_capacity(cfg.folds);
            let mut per_class = vec![Vec::new(); classes];
            for fold in &per_fold {
                let (_, _, f, pc) = fold
                    .scores
                    .iter()
                    .find(|(d, c, _, _)| *d == depth && *c == classifier)
                    .expect("every condition scored");
                fold_scores.push(*f);
                for &(class, cf) in pc {
                    per_class[class].push(cf);
                }
            }
            rows.push(DepthRow {
                depth,
                classifier,
                mean_f: mean(&fold_scores),
                sd_f: sample_sd(&fold_scores),
                per_class_f: per_class.iter().map(|v| mean(v)).collect(),
                fold_scores,
            });
        }
    }
    Ok(DepthTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn m(values: Array2<f64>) -> SampleMatrix {
        SampleMatrix::new(values).unwrap()
    }

    #[test]
    fn pearson_guards_zero_variance() {
        assert_eq!(
            pearson(array![1.0, 1.0, 1.0].view(), array![1.0, 2.0, 3.0].view()),
            0.0
        );
        assert_abs_diff_eq!(
            pearson(array![1.0, 2.0, 3.0].view(), array![2.0, 4.0, 6.0].view()),
            1.0
        );
    }

    #[test]
    fn identical_components_match_identically() {
        let gt = m(array![
            [1.0, 0.0, 0.0, 0.5],
            [0.0, 1.0, 0.2, 0.0],
            [0.3, 0.0, 1.0, 0.0]
        ]);
        let r = match_components(&gt, &gt).unwrap();
        for (g, p) in r.pairs.iter().enumerate() {
            assert_eq!(p.ground_truth, g);
            assert_eq!(p.estimate, g);
            assert_abs_diff_eq!(p.correlation, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn recovers_shuffle_and_sign_flips() {
        let gt = m(array![
            [1.0, 0.0, 0.0, 0.5],
            [0.0, 1.0, 0.2, 0.0],
            [0.3, 0.0, 1.0, 0.0]
        ]);
        let est = m(array![
            [-0.3, 0.0, -1.0, 0.0],
            [1.0, 0.0, 0.0, 0.5],
            [0.0, -1.0, -0.2, 0.0]
        ]);
        let r = match_components(&est, &gt).unwrap();
        let est_of: Vec<usize> = r.pairs.iter().map(|p| p.estimate).collect();
        assert_eq!(est_of, vec![1, 2, 0]);
        let signs: Vec<f64> = r.pairs.iter().map(|p| p.sign).collect();
        assert_eq!(signs, vec![1.0, -1.0, -1.0]);
        assert_abs_diff_eq!(r.mean_sm_correlation, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hungarian_beats_greedy() {
        // Greedy takes 0.9 at (0,0) and is then forced into 0.1 + 0.1;
        // the optimum is 0.8 + 0.8 + 0.8.
        let score = array![[0.9, 0.8, 0.0], [0.8, 0.1, 0.0], [0.0, 0.0, 0.8]];
        let best = hungarian((-&score).view());
        assert_eq!(best, vec![1, 0, 2]);
        let total: f64 = best.iter().enumerate().map(|(i, &j)| score[[i, j]]).sum();
        // Brute force over all six permutations.
        let perms = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        let brute = perms
            .iter()
            .map(|p| (0..3).map(|i| score[[i, p[i]]]).sum::<f64>())
            .fold(f64::MIN, f64::max);
        assert_abs_diff_eq!(total, brute, epsilon = 1e-15);
    }

    #[test]
    fn rectangular_matching_both_ways() {
        let gt = m(array![[1.0, 0.0, 0.0, 0.2], [0.0, 0.0, 1.0, 0.1]]);
        let est = m(array![
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.1],
            [1.0, 0.0, 0.0, 0.2]
        ]);
        let r = match_components(&est, &gt).unwrap();
        assert_eq!(
            r.pairs.iter().map(|p| p.estimate).collect::<Vec<_>>(),
            vec![2, 1]
        );
        let r = match_components(&gt, &est).unwrap();
        assert_eq!(r.pairs.len(), 2);
        assert_eq!(
            r.pairs
                .iter()
                .map(|p| (p.ground_truth, p.estimate))
                .collect::<Vec<_>>(),
            vec![(1, 1), (2, 0)]
        );
    }

    #[test]
    fn time_course_correlations_follow_the_match() {
        let gt = m(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.2]]);
        let est = m(array![[0.0, -1.0, -0.2], [1.0, 0.0, 0.0]]);
        let gt_tc = m(array![[1.0, 0.0], [2.0, 1.0], [0.0, 5.0], [1.0, 2.0]]);
        let est_tc = m(array![[0.0, 1.0], [-1.0, 2.0], [-5.0, 0.0], [-2.0, 1.0]]);
        let r = match_components(&est, &gt)
            .unwrap()
            .with_time_courses(&est_tc, &gt_tc)
            .unwrap();
        assert_abs_diff_eq!(r.mean_tc_correlation.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fnc_examples() {
        let same = m(array![[1.0, 1.0], [2.0, 2.0], [4.0, 4.0], [3.0, 3.0]]);
        let c = fnc(&same).unwrap();
        assert!(c.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let t = 200;
        let tc = Array2::from_shape_fn((t, 2), |(i, j)| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / t as f64;
            if j == 0 {
                (3.0 * phase).sin()
            } else {
                (5.0 * phase).cos()
            }
        });
        let c = fnc(&m(tc)).unwrap();
        assert!(c[[0, 1]].abs() < 0.05);
        assert_eq!(c, c.t());

        let with_flat = m(array![[1.0, 3.0], [2.0, 3.0], [0.0, 3.0]]);
        let c = fnc(&with_flat).unwrap();
        assert_eq!(c, array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(fnc(&m(array![[1.0], [2.0]])).is_err());
    }

    #[test]
    fn modularity_blocks_and_uniform() {
        let mut blocks = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                if (i < 3) == (j < 3) {
                    blocks[[i, j]] = 1.0;
                }
            }
        }
        let r = modularity(blocks.view()).unwrap();
        assert_eq!(r.communities(), 2);
        assert_eq!(r.labels, vec![0, 0, 0, 1, 1, 1]);
        assert!(r.q > 0.4);
        assert_abs_diff_eq!(r.q, 0.5, epsilon = 1e-12);

        let ones = Array2::ones((5, 5));
        let r = modularity(ones.view()).unwrap();
        assert_eq!(r.communities(), 1);
        assert_abs_diff_eq!(r.q, 0.0, epsilon = 1e-12);

        let zero = Array2::zeros((4, 4));
        let r = modularity(zero.view()).unwrap();
        assert_eq!(r.q, 0.0);
        assert_eq!(r.labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn signed_modularity_penalizes_negative_within() {
        let c = array![[1.0, 0.8, -0.5], [0.8, 1.0, -0.4], [-0.5, -0.4, 1.0]];
        let r = modularity(c.view()).unwrap();
        assert_eq!(r.labels, vec![0, 0, 1]);
        let together = signed_modularity(c.view(), &[0, 0, 0]);
        assert!(r.q > together);
    }

    #[test]
    fn t_test_hand_instance() {
        // d = [1, 2, 3, 6]: mean 3, sample variance 14/3.
        let x = [3.0, 5.0, 4.0, 10.0];
        let y = [2.0, 3.0, 1.0, 4.0];
        let r = paired_t_test(&x, &y).unwrap();
        let expected = 3.0 / ((14.0f64 / 3.0).sqrt() / 2.0);
        assert_abs_diff_eq!(r.t, expected, epsilon = 1e-10);
        assert_eq!(r.dof, 3);
        let swapped = paired_t_test(&y, &x).unwrap();
        assert_abs_diff_eq!(swapped.t, -r.t, epsilon = 1e-12);
        assert_abs_diff_eq!(swapped.p, r.p, epsilon = 1e-15);
        assert!(matches!(
            paired_t_test(&x, &x),
            Err(EvalError::DegenerateVariance)
        ));
    }

    #[test]
    fn kfold_examples() {
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let plan = kfold_split(&labels, 10, 3).unwrap();
        for f in 0..10 {
            let (_, test) = plan.split(f);
            let ones = test.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!(test.len(), 2);
            assert_eq!(ones, 1);
        }
        let one = kfold_split(&labels, 1, 0).unwrap();
        assert!(one.assignment.iter().all(|&f| f == 0));
        assert_eq!(kfold_split(&labels, 10, 3).unwrap(), plan);
        assert!(kfold_split(&labels, 21, 0).is_err());
        assert!(kfold_split(&labels, 0, 0).is_err());
    }

    #[test]
    fn macro_f_examples() {
        assert_eq!(macro_f_score(&[0, 1, 1, 0], &[0, 1, 1, 0]).unwrap(), 1.0);
        let f = macro_f_score(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_abs_diff_eq!(f, 1.0 / 3.0, epsilon = 1e-15);
        let a = macro_f_score(&[0, 1, 1, 2, 0], &[0, 1, 2, 2, 1]).unwrap();
        let relabel = |v: &[usize]| v.iter().map(|&c| [2, 0, 1][c]).collect::<Vec<_>>();
        let b = macro_f_score(&relabel(&[0, 1, 1, 2, 0]), &relabel(&[0, 1, 2, 2, 1])).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        assert!(macro_f_score(&[], &[]).is_err());
    }

    #[test]
    fn knn_examples() {
        let train = m(array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]);
        let labels = [0, 0, 1];
        let test = m(array![[5.0, 5.0], [5.0, 5.0], [0.4, 0.0]]);
        assert_eq!(
            knn_classify(&train, &labels, &test, 1).unwrap(),
            vec![1, 1, 0]
        );
        let far = m(array![[9.0, 9.0]]);
        assert_eq!(knn_classify(&train, &labels, &far, 3).unwrap(), vec![0]);
        // Vote tie (one each) goes to the lower class.
        let tie_train = m(array![[1.0], [-1.0]]);
        assert_eq!(
            knn_classify(&tie_train, &[1, 0], &m(array![[0.0]]), 2).unwrap(),
            vec![0]
        );
        assert!(knn_classify(&train, &labels, &test, 4).is_err());
    }

    #[test]
    fn logreg_separable_and_uniform() {
        let x = m(array![[-2.0], [-1.5], [-1.0], [1.0], [1.5], [2.0]]);
        let y = [0, 0, 0, 1, 1, 1];
        let (model, losses) = logreg_train(&x, &y, &LogRegConfig::default()).unwrap();
        assert_eq!(logreg_predict(&model, &x).unwrap(), y.to_vec());
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-15));

        let zero = LogRegModel::zeros(1, 2);
        let p = zero.probabilities(x.view());
        assert!(p.iter().all(|&v| v == 0.5));
        assert_eq!(logreg_predict(&zero, &x).unwrap(), vec![0; 6]);
    }

    #[test]
    fn logreg_gradient_matches_finite_differences() {
        let x = array![[0.5, -1.0], [1.5, 0.3], [-0.7, 0.8], [0.2, 2.0]];
        let y = [0, 2, 1, 2];
        let model = LogRegModel {
            weights: array![[0.1, -0.2, 0.3], [0.4, 0.0, -0.1]],
            bias: array![0.05, -0.05, 0.1],
        };
        let l2 = 1e-2;
        let (_, dw, db) = logreg_loss_and_gradient(&model, x.view(), &y, l2);
        let h = 1e-6;
        for idx in 0..6 {
            let (i, j) = (idx / 3, idx % 3);
            let mut plus = model.clone();
            plus.weights[[i, j]] += h;
            let mut minus = model.clone();
            minus.weights[[i, j]] -= h;
            let fd = (logreg_loss_and_gradient(&plus, x.view(), &y, l2).0
                - logreg_loss_and_gradient(&minus, x.view(), &y, l2).0)
                / (2.0 * h);
            assert!((fd - dw[[i, j]]).abs() / dw[[i, j]].abs().max(1e-3) < 1e-5);
        }
        for j in 0..3 {
            let mut plus = model.clone();
            plus.bias[j] += h;
            let mut minus = model.clone();
            minus.bias[j] -= h;
            let fd = (logreg_loss_and_gradient(&plus, x.view(), &y, l2).0
                - logreg_loss_and_gradient(&minus, x.view(), &y, l2).0)
                / (2.0 * h);
            assert!((fd - db[j]).abs() / db[j].abs().max(1e-3) < 1e-5);
        }
    }

    #[test]
    fn pca_orthonormal_and_reconstructs() {
        let data = m(array![
            [2.0, 0.0, 1.0, 3.0],
            [0.0, 1.0, -1.0, 2.0],
            [1.0, 3.0, 0.5, -1.0],
            [4.0, -2.0, 2.0, 0.0],
            [-1.0, 0.5, 0.0, 1.0]
        ]);
        for n in 1..=3 {
            let pca = pca_baseline(&data, n).unwrap();
            let gram = pca.components.dot(&pca.components.t());
            for i in 0..n {
                for j in 0..n {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(gram[[i, j]], want, epsilon = 1e-8);
                }
            }
            let centered = data.values() - &pca.mean.view().insert_axis(Axis(0));
            let err: f64 = (&centered - &pca.projections.dot(&pca.components))
                .mapv(|v| v * v)
                .sum();
            assert_abs_diff_eq!(err, pca.discarded, epsilon = 1e-9);
        }
        assert!(pca_baseline(&data, 5).is_err());
        let flat = m(Array2::ones((3, 4)));
        assert!(matches!(
            pca_baseline(&flat, 1),
            Err(EvalError::DegenerateRank { .. })
        ));
    }

    #[test]
    fn silhouette_of_separated_clusters() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]];
        let s = silhouette(pts.view(), &[0, 0, 1, 1]).unwrap();
        assert!(s > 0.98);
        let mixed = silhouette(pts.view(), &[0, 1, 0, 1]).unwrap();
        assert!(mixed < 0.0);
    }
}
