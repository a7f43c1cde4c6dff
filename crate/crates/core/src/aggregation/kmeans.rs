//! Lloyd iterations with pluggable assignment steps.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{cluster_means, own_inertia, Algorithm, ClusterConfig, ClusterModel, EpisodeBounds, LabelTransitions};
use crate::embedding::EmbeddedDataset;
use crate::error::{Result, SamdpError};
use crate::matrix::{sq_dist, Matrix};

enum Assignment<'a> {
    Nearest,
    Window { w: usize, bounds: &'a EpisodeBounds },
    Entropy { d: f64, bounds: &'a EpisodeBounds },
}

/// Standard K-means assignment: nearest centroid, lowest index on ties.
pub fn assign_nearest(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
    (0..points.rows())
        .into_par_iter()
        .map(|p| argmin((0..centroids.rows()).map(|k| sq_dist(points.row(p), centroids.row(k)))))
        .collect()
}

/// Spatio-temporal assignment: each point goes to the centroid with the smallest
/// mean squared distance over the window `[p - w, p + w]`, truncated at episode edges.
pub fn assign_spatiotemporal(
    points: &Matrix,
    centroids: &Matrix,
    w: usize,
    episode_offsets: &[usize],
) -> Vec<usize> {
    let bounds = EpisodeBounds::new(episode_offsets, points.rows());
    window_assign(points, centroids, w, &bounds)
}

fn window_assign(points: &Matrix, centroids: &Matrix, w: usize, bounds: &EpisodeBounds) -> Vec<usize> {
    let k = centroids.rows();
    let dist = distance_table(points, centroids);
    (0..points.rows())
        .into_par_iter()
        .map(|p| argmin((0..k).map(|c| window_cost(&dist, k, bounds, p, w, c))))
        .collect()
}

fn distance_table(points: &Matrix, centroids: &Matrix) -> Vec<f64> {
    let k = centroids.rows();
    let mut dist = vec![0.0; points.rows() * k];
    dist.par_chunks_mut(k.max(1))
        .enumerate()
        .for_each(|(p, row)| {
            for (c, d) in row.iter_mut().enumerate() {
                *d = sq_dist(points.row(p), centroids.row(c));
            }
        });
    dist
}

#[inline]
fn window_cost(dist: &[f64], k: usize, bounds: &EpisodeBounds, p: usize, w: usize, c: usize) -> f64 {
    let win = bounds.window(p, w);
    let len = win.len() as f64;
    win.map(|q| dist[q * k + c]).sum::<f64>() / len
}

fn argmin(costs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in costs.enumerate() {
        // NaN centroids (empty clusters) never win
        if c < best.1 {
            best = (i, c);
        }
    }
    best.0
}

fn entropy_pass(points: &Matrix, centroids: &Matrix, labels: &[usize], d: f64, bounds: &EpisodeBounds) -> Vec<usize> {
    let k = centroids.rows();
    let mut labels = labels.to_vec();
    let mut trans = LabelTransitions::from_labels(&labels, bounds, k);
    for p in 0..labels.len() {
        let x = points.row(p);
        let best = argmin((0..k).map(|c| {
            let spatial = sq_dist(x, centroids.row(c));
            if d == 0.0 {
                spatial
            } else {
                spatial + d * trans.move_gain(&labels, bounds, p, c)
            }
        }));
        if best != labels[p] {
            trans.apply_move(&labels, bounds, p, best);
            labels[p] = best;
        }
    }
    labels
}

fn count_distinct(points: &Matrix) -> usize {
    points
        .iter_rows()
        .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

/// k-means++ seeding: first center uniform, then proportional to squared distance.
fn seed_centroids(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|p| sq_dist(points.row(p), points.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (p, &d) in nearest.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                pick = p;
                break;
            }
            target -= d;
        }
        // rounding can leave the tail pick on a zero-weight point
        if nearest[pick] <= 0.0 {
            pick = (0..n).rev().find(|&p| nearest[p] > 0.0).unwrap_or(pick);
        }
        chosen.push(pick);
        for (p, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(p), points.row(pick)));
        }
    }
    points.select_rows(&chosen)
}

/// Recomputes centroids, re-seeding any empty cluster with the point farthest
/// from its own centroid.
fn update_centroids(points: &Matrix, labels: &mut [usize], k: usize) -> Matrix {
    loop {
        let means = cluster_means(points, labels, k);
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return means;
        };
        let mut far = (usize::MAX, f64::NEG_INFINITY);
        for (p, &l) in labels.iter().enumerate() {
            if sizes[l] < 2 {
                continue;
            }
            let d = sq_dist(points.row(p), means.row(l));
            if d > far.1 {
                far = (p, d);
            }
        }
        log::warn!("cluster {empty} became empty; re-seeded with point {}", far.0);
        labels[far.0] = empty;
    }
}

struct LloydRun {
    centroids: Matrix,
    labels: Vec<usize>,
    objective: f64,
    converged: bool,
    iterations: usize,
    history: Vec<f64>,
}

fn objective(points: &Matrix, centroids: &Matrix, labels: &[usize], step: &Assignment<'_>) -> f64 {
    match step {
        Assignment::Nearest => own_inertia(points, centroids, labels),
        Assignment::Window { w, bounds } => {
            let k = centroids.rows();
            let dist = distance_table(points, centroids);
            (0..labels.len())
                .map(|p| window_cost(&dist, k, bounds, p, *w, labels[p]))
                .sum()
        }
        Assignment::Entropy { d, bounds } => {
            let e = LabelTransitions::from_labels(labels, bounds, centroids.rows()).entropy();
            own_inertia(points, centroids, labels) + d * e
        }
    }
}

fn lloyd(points: &Matrix, cfg: &ClusterConfig, step: &Assignment<'_>, init: Matrix) -> LloydRun {
    let k = cfg.k;
    let mut centroids = init;
    let mut labels: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iters {
        iterations = it + 1;
        let next = match step {
            Assignment::Nearest => assign_nearest(points, &centroids),
            Assignment::Window { w, bounds } => window_assign(points, &centroids, *w, bounds),
            Assignment::Entropy { .. } if it == 0 => assign_nearest(points, &centroids),
            Assignment::Entropy { d, bounds } => entropy_pass(points, &centroids, &labels, *d, bounds),
        };
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        centroids = update_centroids(points, &mut labels, k);
        history.push(objective(points, &centroids, &labels, step));
    }
    let objective = history.last().copied().unwrap_or(f64::INFINITY);
    LloydRun {
        centroids,
        labels,
        objective,
        converged,
        iterations,
        history,
    }
}

fn run(points: &EmbeddedDataset, cfg: &ClusterConfig, step: Assignment<'_>) -> Result<ClusterModel> {
    cfg.validate()?;
    let pts = &points.points;
    let distinct = count_distinct(pts);
    if cfg.k > distinct {
        return Err(SamdpError::invalid(format!(
            "K={} exceeds the {distinct} distinct points",
            cfg.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<LloydRun> = None;
    for _ in 0..cfg.restarts {
        let init = seed_centroids(pts, cfg.k, &mut rng);
        let run = lloyd(pts, cfg, &step, init);
        if best.as_ref().is_none_or(|b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    let inertia = own_inertia(pts, &best.centroids, &best.labels);
    Ok(ClusterModel {
        centroids: best.centroids,
        labels: best.labels,
        inertia,
        config: cfg.clone(),
        converged: best.converged,
        iterations_run: best.iterations,
        objective_history: best.history,
    })
}

/// Plain K-means (Lloyd) with k-means++ seeding; best of `restarts` by inertia.
pub fn kmeans(points: &EmbeddedDataset, config: &ClusterConfig) -> Result<ClusterModel> {
    let cfg = ClusterConfig {
        algorithm: Algorithm::Kmeans,
        ..config.clone()
    };
    run(points, &cfg, Assignment::Nearest)
}

/// K-means whose assignment step uses windowed mean distances along each episode.
pub fn kmeans_spatiotemporal(
    points: &EmbeddedDataset,
    config: &ClusterConfig,
    episode_offsets: &[usize],
) -> Result<ClusterModel> {
    let cfg = ClusterConfig {
        algorithm: Algorithm::Spatiotemporal,
        ..config.clone()
    };
    let bounds = EpisodeBounds::new(episode_offsets, points.len());
    run(points, &cfg, Assignment::Window { w: cfg.w, bounds: &bounds })
}

/// K-means whose assignment charges each reassignment `d_penalty` times the
/// entropy change of the cluster-change transition structure.
///
/// The first iteration is a plain assignment (there is no previous structure);
/// later iterations visit points sequentially in dataset order, each accepted
/// move updating the shared counts.
pub fn kmeans_entropy_regularized(
    points: &EmbeddedDataset,
    config: &ClusterConfig,
    episode_offsets: &[usize],
) -> Result<ClusterModel> {
    let cfg = ClusterConfig {
        algorithm: Algorithm::EntropyRegularized,
        ..config.clone()
    };
    let bounds = EpisodeBounds::new(episode_offsets, points.len());
    run(points, &cfg, Assignment::Entropy { d: cfg.d_penalty, bounds: &bounds })
}
