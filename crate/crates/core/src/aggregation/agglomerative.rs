//! Bottom-up clustering with a linkage mixing mean pairwise distance and the
//! entropy change of the induced cluster-change structure.
//!
//! Cost is O(M^3) in the number of starting clusters M, so this is meant for
//! small inputs or for merging an existing over-segmentation.

use super::{cluster_means, own_inertia, Algorithm, ClusterConfig, ClusterModel, EpisodeBounds};
use crate::embedding::EmbeddedDataset;
use crate::error::{Result, SamdpError};
use crate::matrix::sq_dist;

#[inline]
fn xlogx(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

fn row_term(size: f64, counts: &[f64], skip: &[usize]) -> f64 {
    let (mut total, mut sx) = (0.0, 0.0);
    for (j, &c) in counts.iter().enumerate() {
        if !skip.contains(&j) {
            total += c;
            sx += xlogx(c);
        }
    }
    if total > 0.0 && size > 0.0 {
        (size * (total.ln() - sx / total)).max(0.0)
    } else {
        0.0
    }
}

struct State {
    active: Vec<bool>,
    size: Vec<f64>,
    /// `counts[a][b]`: cluster-change transitions from slot a to slot b.
    counts: Vec<Vec<f64>>,
    /// Sum of pairwise distances between members of two slots.
    dist_sum: Vec<Vec<f64>>,
    /// Slot each dead slot was merged into.
    parent: Vec<usize>,
}

impl State {
    fn term(&self, r: usize) -> f64 {
        row_term(self.size[r], &self.counts[r], &[r])
    }

    /// Entropy after merging slots `a < b` minus entropy before.
    fn merge_entropy_delta(&self, a: usize, b: usize) -> f64 {
        let m = self.active.len();
        let mut merged = vec![0.0; m];
        for j in 0..m {
            if j != a && j != b {
                merged[j] = self.counts[a][j] + self.counts[b][j];
            }
        }
        let mut delta = row_term(self.size[a] + self.size[b], &merged, &[a, b])
            - self.term(a)
            - self.term(b);
        for r in 0..m {
            if !self.active[r] || r == a || r == b {
                continue;
            }
            let (ca, cb) = (self.counts[r][a], self.counts[r][b]);
            if ca > 0.0 && cb > 0.0 {
                let row = &self.counts[r];
                let total: f64 = row.iter().sum();
                let sx: f64 = row.iter().map(|&c| xlogx(c)).sum();
                let sx_after = sx - xlogx(ca) - xlogx(cb) + xlogx(ca + cb);
                let size = self.size[r];
                let after = (size * (total.ln() - sx_after / total)).max(0.0);
                delta += after - self.term(r);
            }
        }
        delta
    }

    fn merge(&mut self, a: usize, b: usize) {
        let m = self.active.len();
        for j in 0..m {
            let cb = self.counts[b][j];
            self.counts[a][j] += cb;
            self.counts[b][j] = 0.0;
        }
        for r in 0..m {
            let cb = self.counts[r][b];
            self.counts[r][a] += cb;
            self.counts[r][b] = 0.0;
        }
        self.counts[a][a] = 0.0;
        for j in 0..m {
            let d = self.dist_sum[b][j];
            self.dist_sum[a][j] += d;
            self.dist_sum[j][a] = self.dist_sum[a][j];
        }
        self.size[a] += self.size[b];
        self.size[b] = 0.0;
        self.active[b] = false;
        self.parent[b] = a;
    }

    fn survivor(&self, mut s: usize) -> usize {
        while !self.active[s] {
            s = self.parent[s];
        }
        s
    }
}

/// Agglomerative clustering from singletons down to `k_target` clusters.
pub fn agglomerative_entropy(
    points: &EmbeddedDataset,
    episode_offsets: &[usize],
    k_target: usize,
    lambda: f64,
) -> Result<ClusterModel> {
    let initial: Vec<usize> = (0..points.len()).collect();
    agglomerative_entropy_from(points, episode_offsets, &initial, k_target, lambda)
}

/// Agglomerative clustering starting from an arbitrary partition.
///
/// Each round merges the pair `(A, B)` minimizing
/// `(1 - lambda) * mean{|x_a - x_b|} + lambda * (e_after - e_before)`;
/// ties go to the lowest pair of starting-cluster ids. Final clusters are
/// numbered in order of their lowest starting id.
pub fn agglomerative_entropy_from(
    points: &EmbeddedDataset,
    episode_offsets: &[usize],
    initial_labels: &[usize],
    k_target: usize,
    lambda: f64,
) -> Result<ClusterModel> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(SamdpError::invalid("lambda must lie in [0, 1]"));
    }
    let n = points.len();
    if initial_labels.len() != n {
        return Err(SamdpError::invalid("initial labels and points differ in length"));
    }
    let m = initial_labels.iter().max().map_or(0, |&l| l + 1);
    if k_target == 0 || k_target > n {
        return Err(SamdpError::invalid(format!("K={k_target} must lie in 1..={n}")));
    }
    let pts = &points.points;
    let bounds = EpisodeBounds::new(episode_offsets, n);

    let mut st = State {
        active: vec![false; m],
        size: vec![0.0; m],
        counts: vec![vec![0.0; m]; m],
        dist_sum: vec![vec![0.0; m]; m],
        parent: (0..m).collect(),
    };
    for (p, &l) in initial_labels.iter().enumerate() {
        st.active[l] = true;
        st.size[l] += 1.0;
        if let Some(q) = bounds.next(p) {
            let lq = initial_labels[q];
            if lq != l {
                st.counts[l][lq] += 1.0;
            }
        }
    }
    for p in 0..n {
        for q in p + 1..n {
            let (a, b) = (initial_labels[p], initial_labels[q]);
            if a != b {
                let d = sq_dist(pts.row(p), pts.row(q)).sqrt();
                st.dist_sum[a][b] += d;
                st.dist_sum[b][a] += d;
            }
        }
    }

    let mut live = st.active.iter().filter(|&&a| a).count();
    if k_target > live {
        return Err(SamdpError::invalid(format!(
            "K={k_target} exceeds the {live} starting clusters"
        )));
    }
    while live > k_target {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..m {
            if !st.active[a] {
                continue;
            }
            for b in a + 1..m {
                if !st.active[b] {
                    continue;
                }
                let mean_dist = st.dist_sum[a][b] / (st.size[a] * st.size[b]);
                let mut cost = (1.0 - lambda) * mean_dist;
                if lambda > 0.0 {
                    cost += lambda * st.merge_entropy_delta(a, b);
                }
                if best.is_none_or(|(_, _, c)| cost < c) {
                    best = Some((a, b, cost));
                }
            }
        }
        let (a, b, _) = best.expect("at least two live clusters");
        st.merge(a, b);
        live -= 1;
    }

    let mut final_id = vec![usize::MAX; m];
    let mut next = 0;
    for s in 0..m {
        if st.active[s] {
            final_id[s] = next;
            next += 1;
        }
    }
    let labels: Vec<usize> = initial_labels
        .iter()
        .map(|&s| final_id[st.survivor(s)])
        .collect();
    let centroids = cluster_means(pts, &labels, k_target);
    let inertia = own_inertia(pts, &centroids, &labels);
    Ok(ClusterModel {
        centroids,
        labels,
        inertia,
        config: ClusterConfig {
            algorithm: Algorithm::AgglomerativeEntropy,
            k: k_target,
            w: 0,
            lambda,
            ..ClusterConfig::default()
        },
        converged: true,
        iterations_run: m - k_target,
        objective_history: Vec::new(),
    })
}
