//! Downstream evaluation of a refined graph: node classification with a
//! fresh GCN, and k-means clustering of the view embeddings.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Splits;
use crate::nn::ops::{cross_entropy, gcn_normalize};
use crate::nn::{Adam, GcnParams, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classify,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over runs.
    pub std: f64,
    pub values: Vec<f64>,
}

impl MetricSummary {
    fn of(values: Vec<f64>) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MetricSummary {
            mean,
            std: var.sqrt(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub seed: u64,
    pub runs: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

impl MetricsReport {
    fn collect(task: Task, seed: u64, per_run: Vec<Vec<(&'static str, f64)>>) -> Self {
        let runs = per_run.len();
        let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for run in per_run {
            for (name, v) in run {
                values.entry(name.to_string()).or_default().push(v);
            }
        }
        MetricsReport {
            task,
            seed,
            runs,
            metrics: values
                .into_iter()
                .map(|(k, v)| (k, MetricSummary::of(v)))
                .collect(),
        }
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).map(|m| m.mean)
    }

    /// `name  mean ± std` lines in percent.
    pub fn table(&self) -> String {
        self.metrics
            .iter()
            .map(|(k, m)| format!("{k:<6} {:6.2} ± {:.2}\n", 100.0 * m.mean, 100.0 * m.std))
            .collect()
    }
}

/// Training protocol of the evaluation GCN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            epochs: 200,
            lr: 1e-2,
            weight_decay: 5e-4,
            hidden_dim: 32,
            dropout: 0.5,
        }
    }
}

/// Per class: 10% train, 10% validation, the rest test (at least one node
/// in train whenever the class has any).
pub fn stratified_splits(labels: &[usize], seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut splits = Splits {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let tenth = ((members.len() as f64) * 0.1).round().max(1.0) as usize;
        let n_train = tenth.min(members.len());
        let n_val = tenth.min(members.len() - n_train);
        splits.train.extend(&members[..n_train]);
        splits.val.extend(&members[n_train..n_train + n_val]);
        splits.test.extend(&members[n_train + n_val..]);
    }
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

/// Trains a fresh two-layer GCN on `(A* + I, X*)` per run and reports test
/// ACC / weighted F1 / macro F1 at the epoch with the best validation
/// accuracy. Without `splits`, stratified 10/10/80 splits are drawn from
/// `seed`.
pub fn classify(
    a_star: &Array2<f64>,
    x_star: &Array2<f64>,
    labels: &[usize],
    splits: Option<&Splits>,
    runs: usize,
    seed: u64,
    cfg: &ClassifyConfig,
) -> Result<MetricsReport> {
    let n = a_star.nrows();
    if a_star.ncols() != n || x_star.nrows() != n || labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "A* {:?}, X* {:?}, {} labels",
            a_star.dim(),
            x_star.dim(),
            labels.len()
        )));
    }
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::InvalidParameter(format!("dropout {} not in [0, 1)", cfg.dropout)));
    }
    let drawn;
    let splits = match splits {
        Some(s) => s,
        None => {
            drawn = stratified_splits(labels, seed);
            &drawn
        }
    };
    if splits.train.is_empty() || splits.test.is_empty() {
        return Err(Error::Missing("non-empty train and test splits"));
    }
    if let Some(&bad) = splits.train.iter().chain(&splits.val).chain(&splits.test).find(|&&i| i >= n) {
        return Err(Error::NodeOutOfRange { index: bad, n });
    }

    let mut a = a_star.clone();
    a.diag_mut().mapv_inplace(|d| d + 1.0);
    let per_run = (0..runs)
        .map(|run| train_classifier(&a, x_star, labels, splits, seed.wrapping_add(run as u64), cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::collect(Task::Classify, seed, per_run))
}

fn train_classifier(
    a_looped: &Array2<f64>,
    x: &Array2<f64>,
    labels: &[usize],
    splits: &Splits,
    seed: u64,
    cfg: &ClassifyConfig,
) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let n = x.nrows();
    let mut params = GcnParams::init(x.ncols(), cfg.hidden_dim, classes, &mut rng);
    let mut adam = Adam::new(cfg.lr).with_weight_decay(cfg.weight_decay);
    let a_hat = {
        let tape = Tape::new();
        let v = gcn_normalize(tape.constant(a_looped.clone())).value().clone();
        v
    };

    let mut best_val = f64::NEG_INFINITY;
    let mut best_pred: Vec<usize> = Vec::new();
    for _ in 0..cfg.epochs {
        let tape = Tape::new();
        let vars = params.on(&tape);
        let keep = 1.0 - cfg.dropout;
        let mask = Array2::from_shape_fn((n, cfg.hidden_dim), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let logits = vars.propagate(
            tape.constant(a_hat.clone()),
            tape.constant(x.clone()),
            Some(tape.constant(mask)),
        );
        let loss = cross_entropy(logits, labels, &splits.train);
        if !loss.item().is_finite() {
            return Err(Error::NonFinite("classification loss".into()));
        }
        let grads = tape.backward(loss);
        let g: Vec<Array2<f64>> = vars.all().iter().map(|v| grads.wrt(*v)).collect();
        adam.step(&mut params.tensors_mut(), &g);

        let pred = predict(&a_hat, x, &params);
        // with no validation split, the last epoch is used
        let val = if splits.val.is_empty() { 0.0 } else { accuracy_on(&pred, labels, &splits.val) };
        if val >= best_val {
            best_val = val;
            best_pred = pred;
        }
    }
    if best_pred.is_empty() {
        best_pred = predict(&a_hat, x, &params);
    }
    let truth: Vec<usize> = splits.test.iter().map(|&i| labels[i]).collect();
    let pred: Vec<usize> = splits.test.iter().map(|&i| best_pred[i]).collect();
    let (weighted, macro_f1) = f1_scores(&truth, &pred);
    Ok(vec![("acc", accuracy(&truth, &pred)), ("w_f1", weighted), ("m_f1", macro_f1)])
}

fn predict(a_hat: &Array2<f64>, x: &Array2<f64>, params: &GcnParams) -> Vec<usize> {
    let tape = Tape::new();
    let vars = params.on(&tape);
    let logits = vars.propagate(tape.constant(a_hat.clone()), tape.constant(x.clone()), None);
    let logits = logits.value();
    logits.rows().into_iter().map(argmax).collect()
}

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn accuracy_on(pred: &[usize], labels: &[usize], rows: &[usize]) -> f64 {
    rows.iter().filter(|&&i| pred[i] == labels[i]).count() as f64 / rows.len() as f64
}

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

/// `(weighted F1, macro F1)` over every label seen in either sequence.
pub fn f1_scores(truth: &[usize], pred: &[usize]) -> (f64, f64) {
    let k = truth.iter().chain(pred).max().map_or(0, |m| m + 1);
    let (mut tp, mut fp, mut fn_) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (&t, &p) in truth.iter().zip(pred) {
        if t == p {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let (mut weighted, mut macro_sum, mut present) = (0.0, 0.0, 0usize);
    for c in 0..k {
        let support = tp[c] + fn_[c];
        if support == 0 && fp[c] == 0 {
            continue;
        }
        present += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        let f1 = if denom == 0 { 0.0 } else { 2.0 * tp[c] as f64 / denom as f64 };
        macro_sum += f1;
        weighted += f1 * support as f64;
    }
    let total = truth.len().max(1) as f64;
    (weighted / total, macro_sum / present.max(1) as f64)
}

pub const KMEANS_ITERS: usize = 300;
pub const KMEANS_INITS: usize = 10;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centers: Array2<f64>,
    pub inertia: f64,
}

/// Lloyd iterations from a k-means++ seeding; the best of
/// [`KMEANS_INITS`] restarts by inertia.
pub fn kmeans(x: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Result<KMeans> {
    let n = x.nrows();
    if k < 2 {
        return Err(Error::InvalidParameter(format!("k = {k}, need at least 2")));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!("k = {k} exceeds {n} points")));
    }
    let mut best: Option<KMeans> = None;
    for _ in 0..KMEANS_INITS {
        let run = lloyd(x, plus_plus(x, k, rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus(x: &Array2<f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centers = Array2::zeros((k, x.ncols()));
    centers.row_mut(0).assign(&x.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = x.rows().into_iter().map(|r| sq_dist(r, centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&x.row(pick));
        for (i, r) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, centers.row(c)));
        }
    }
    centers
}

fn lloyd(x: &Array2<f64>, mut centers: Array2<f64>) -> KMeans {
    let (n, k) = (x.nrows(), centers.nrows());
    let mut assignment = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (i, r) in x.rows().into_iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (c, center) in centers.rows().into_iter().enumerate() {
                let d = sq_dist(r, center);
                if d < best.1 {
                    best = (c, d);
                }
            }
            if assignment[i] != best.0 {
                assignment[i] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros(centers.dim());
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().into_iter().enumerate() {
            sums.row_mut(assignment[i]).scaled_add(1.0, &r);
            counts[assignment[i]] += 1;
        }
        for c in 0..k {
            // an emptied cluster keeps its previous center
            if counts[c] > 0 {
                centers.row_mut(c).assign(&(&sums.row(c) / counts[c] as f64));
            }
        }
    }
    let inertia = x
        .rows()
        .into_iter()
        .zip(&assignment)
        .map(|(r, &c)| sq_dist(r, centers.row(c)))
        .sum();
    KMeans {
        assignment,
        centers,
        inertia,
    }
}

/// Minimum-cost assignment for a rectangular `rows ≤ cols` cost matrix;
/// returns the column chosen for each row.
pub fn hungarian(cost: &Array2<f64>) -> Vec<usize> {
    let (n, m) = cost.dim();
    assert!(n <= m, "hungarian needs rows <= cols");
    // potentials and matching, 1-based with a virtual column 0
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
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

fn contingency(truth: &[usize], pred: &[usize]) -> Array2<f64> {
    let r = truth.iter().max().map_or(0, |m| m + 1);
    let c = pred.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::zeros((r, c));
    for (&t, &p) in truth.iter().zip(pred) {
        table[[t, p]] += 1.0;
    }
    table
}

/// Accuracy under the best one-to-one relabeling of predicted clusters.
pub fn cluster_accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let table = contingency(truth, pred);
    let size = table.nrows().max(table.ncols());
    let mut cost = Array2::zeros((size, size));
    for ((t, p), &v) in table.indexed_iter() {
        cost[[p, t]] = -v;
    }
    let matched: f64 = hungarian(&cost)
        .into_iter()
        .enumerate()
        .map(|(p, t)| -cost[[p, t]])
        .sum();
    matched / truth.len() as f64
}

fn entropy(counts: impl Iterator<Item = f64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0.0)
        .map(|c| -(c / n) * (c / n).ln())
        .sum()
}

/// Mutual information normalized by the arithmetic mean of the entropies.
pub fn nmi(truth: &[usize], pred: &[usize]) -> f64 {
    let n = truth.len() as f64;
    let table = contingency(truth, pred);
    let rows = table.sum_axis(Axis(1));
    let cols = table.sum_axis(Axis(0));
    let (ht, hp) = (entropy(rows.iter().copied(), n), entropy(cols.iter().copied(), n));
    if ht == 0.0 && hp == 0.0 {
        return 1.0;
    }
    let mut mi = 0.0;
    for ((t, p), &v) in table.indexed_iter() {
        if v > 0.0 {
            mi += v / n * (n * v / (rows[t] * cols[p])).ln();
        }
    }
    (mi / ((ht + hp) / 2.0)).clamp(0.0, 1.0)
}

/// Adjusted Rand index.
pub fn ari(truth: &[usize], pred: &[usize]) -> f64 {
    let pairs = |x: f64| x * (x - 1.0) / 2.0;
    let table = contingency(truth, pred);
    let index: f64 = table.iter().map(|&v| pairs(v)).sum();
    let a: f64 = table.sum_axis(Axis(1)).iter().map(|&v| pairs(v)).sum();
    let b: f64 = table.sum_axis(Axis(0)).iter().map(|&v| pairs(v)).sum();
    let total = pairs(truth.len() as f64);
    let expected = a * b / total;
    let max = (a + b) / 2.0;
    if max == expected {
        // both partitions trivial in the same way
        return 1.0;
    }
    (index - expected) / (max - expected)
}

/// k-means on `embeddings` per run; ACC (Hungarian-matched), NMI and ARI.
pub fn cluster(
    embeddings: &Array2<f64>,
    labels: &[usize],
    k: usize,
    runs: usize,
    seed: u64,
) -> Result<MetricsReport> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} embeddings, {} labels",
            embeddings.nrows(),
            labels.len()
        )));
    }
    if runs == 0 {
        return Err(Error::InvalidParameter("runs must be at least 1".into()));
    }
    let per_run = (0..runs)
        .map(|run| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
            let km = kmeans(embeddings, k, &mut rng)?;
            let p = &km.assignment;
            Ok(vec![
                ("acc", cluster_accuracy(labels, p)),
                ("nmi", nmi(labels, p)),
                ("ari", ari(labels, p)),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::collect(Task::Cluster, seed, per_run))
}
