use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.iter().enumerate() {
        let d = sq_dist(p, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub distortion: f64,
    pub iterations: usize,
}

/// k-means++ seeding followed by Lloyd iterations.
///
/// Seeding draws from `ChaCha8Rng::seed_from_u64(seed)`: the first centre is
/// `random_range(0..len)`; each further centre is the first point whose
/// cumulative squared distance exceeds `random::<f64>() * total`. Lloyd stops
/// when assignments no longer change or after [`MAX_LLOYD_ITERATIONS`]
/// updates; an empty cluster keeps its previous centroid. Distance ties go to
/// the lower cluster index.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > points.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} available points",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch("points differ in dimension".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let r = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = points.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            acc += d;
            if acc > r {
                pick = i;
                break;
            }
        }
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }

    let mut assignments: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == assignments {
            break;
        }
        assignments = next;
    }
    let distortion = points
        .iter()
        .zip(&assignments)
        .map(|(p, &a)| sq_dist(p, &centroids[a]))
        .sum();
    Ok(KMeans {
        centroids,
        assignments,
        distortion,
        iterations,
    })
}

/// Mean silhouette coefficient, computed on at most `sample` points drawn
/// without replacement. `None` when fewer than two clusters are populated.
pub fn silhouette(points: &[Vec<f64>], assignments: &[usize], k: usize, sample: usize, seed: u64) -> Option<f64> {
    let idx: Vec<usize> = if points.len() > sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, points.len(), sample).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..points.len()).collect()
    };
    let mut sizes = vec![0usize; k];
    for &i in &idx {
        sizes[assignments[i]] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return None;
    }
    let mut total = 0.0;
    for &i in &idx {
        let own = assignments[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for &j in &idx {
            if i != j {
                sums[assignments[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Some(total / idx.len() as f64)
}

/// Davies-Bouldin index over populated clusters. `None` below two clusters.
pub fn davies_bouldin(points: &[Vec<f64>], centroids: &[Vec<f64>], assignments: &[usize]) -> Option<f64> {
    let k = centroids.len();
    let mut scatter = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        scatter[a] += sq_dist(p, &centroids[a]).sqrt();
        counts[a] += 1;
    }
    let live: Vec<usize> = (0..k).filter(|&c| counts[c] > 0).collect();
    if live.len() < 2 {
        return None;
    }
    for &c in &live {
        scatter[c] /= counts[c] as f64;
    }
    let sum: f64 = live
        .iter()
        .map(|&i| {
            live.iter()
                .filter(|&&j| j != i)
                .map(|&j| (scatter[i] + scatter[j]) / sq_dist(&centroids[i], &centroids[j]).sqrt())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum();
    Some(sum / live.len() as f64)
}

/// Counts `M[i][a]` of points in cluster `i` labelled with action `a`.
pub fn contingency(assignments: &[usize], labels: &[usize], k: usize, m: usize) -> Vec<Vec<usize>> {
    let mut mat = vec![vec![0; m]; k];
    for (&c, &a) in assignments.iter().zip(labels) {
        mat[c][a] += 1;
    }
    mat
}

/// Per-cluster purity (majority share, 0 for empty clusters) and overall
/// purity.
pub fn purity(contingency: &[Vec<usize>]) -> (Vec<f64>, f64) {
    let mut majority = 0;
    let mut total = 0;
    let per = contingency
        .iter()
        .map(|row| {
            let size: usize = row.iter().sum();
            let max = row.iter().copied().max().unwrap_or(0);
            majority += max;
            total += size;
            if size == 0 {
                0.0
            } else {
                max as f64 / size as f64
            }
        })
        .collect();
    (per, if total == 0 { 0.0 } else { majority as f64 / total as f64 })
}

/// Action-pure cluster sets: cluster `i` joins `C(a)` when `a` is the unique
/// argmax of row `i` and `M[i][a] > tau * Σ_j M[i][j]`. Tied rows join no set.
pub fn cluster_sets(contingency: &[Vec<usize>], tau: f64) -> Vec<Vec<usize>> {
    let m = contingency.first().map_or(0, Vec::len);
    let mut sets = vec![Vec::new(); m];
    for (i, row) in contingency.iter().enumerate() {
        let Some(&max) = row.iter().max() else { continue };
        let mut winners = row.iter().enumerate().filter(|(_, &v)| v == max);
        let (a, _) = winners.next().expect("row is nonempty");
        if winners.next().is_some() {
            continue;
        }
        let size: usize = row.iter().sum();
        if max as f64 > tau * size as f64 {
            sets[a].push(i);
        }
    }
    sets
}

/// Mean of the member centroids; `None` for an empty set.
pub fn importance(centroids: &[Vec<f64>], members: &[usize]) -> Option<Vec<f64>> {
    let first = centroids.get(*members.first()?)?;
    let mut acc = vec![0.0; first.len()];
    for &c in members {
        for (a, x) in acc.iter_mut().zip(&centroids[c]) {
            *a += x;
        }
    }
    Some(acc.into_iter().map(|v| v / members.len() as f64).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub purity: Vec<f64>,
    pub overall_purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub tau: f64,
    pub seed: u64,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub distortion: f64,
    /// `k x m`.
    pub contingency: Vec<Vec<usize>>,
    pub metrics: ClusterMetrics,
    /// `cluster_sets[a]` lists the clusters in `C(a)`.
    pub cluster_sets: Vec<Vec<usize>>,
    /// `I(a)`, absent when `C(a)` is empty.
    pub importance: Vec<Option<Vec<f64>>>,
}

impl ClusterModel {
    pub fn fit(
        points: &[Vec<f64>],
        labels: &[usize],
        m: usize,
        k: usize,
        tau: f64,
        seed: u64,
        silhouette_sample: usize,
    ) -> Result<Self> {
        if points.len() != labels.len() {
            return Err(Error::DimensionMismatch("one label per point required".into()));
        }
        if let Some(&a) = labels.iter().find(|&&a| a >= m) {
            return Err(Error::UnknownAction { action: a, n_actions: m });
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidArgument(format!("tau = {tau} must lie in (0, 1)")));
        }
        let km = kmeans(points, k, seed)?;
        let contingency = contingency(&km.assignments, labels, k, m);
        let (per, overall) = purity(&contingency);
        let metrics = ClusterMetrics {
            silhouette: silhouette(points, &km.assignments, k, silhouette_sample, seed),
            davies_bouldin: davies_bouldin(points, &km.centroids, &km.assignments),
            purity: per,
            overall_purity: overall,
        };
        let sets = cluster_sets(&contingency, tau);
        let importance = sets.iter().map(|s| importance(&km.centroids, s)).collect();
        Ok(Self {
            k,
            tau,
            seed,
            centroids: km.centroids,
            assignments: km.assignments,
            distortion: km.distortion,
            contingency,
            metrics,
            cluster_sets: sets,
            importance,
        })
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.contingency.iter().map(|r| r.iter().sum()).collect()
    }
}
