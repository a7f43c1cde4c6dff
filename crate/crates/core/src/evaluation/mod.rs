//! Fitness criteria for a fitted SAMDP, model selection over a parameter
//! grid, the random-model test and the consistency checks against the
//! best and worst trajectories.

mod consistency;
mod random;
mod report;
mod selection;

pub use consistency::{
    extreme_episodes, extreme_matrices, greedy_matrix, greedy_reward_correlation, greedy_vs_extremes,
    pearson,
};
pub use random::{random_model_pvalue, RandomLabels, RandomTest, RandomTestConfig};
pub use report::{KeyValueReport, REPORT_TAG};
pub use selection::{grid_search_select, select_from_reports, GridEntry, SelectionResult};

use crate::aggregation::{Algorithm, ClusterModel};
use crate::error::{Result, SamdpError};
use crate::matrix::{sq_dist, Matrix};
use crate::samdp::SamdpModel;
use crate::trajectory::TrajectoryDataset;

/// The four fitness criteria of one clustering configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    pub k: usize,
    pub w: usize,
    pub algorithm: Algorithm,
    pub vmse: f64,
    pub inertia: f64,
    pub entropy: f64,
    pub intensity_factor: f64,
}

impl FitnessReport {
    /// Criteria as "lower is better" numbers, in the order vmse, inertia,
    /// entropy, intensity (negated).
    pub fn costs(&self) -> [f64; 4] {
        [self.vmse, self.inertia, self.entropy, -self.intensity_factor]
    }
}

pub const CRITERIA: [&str; 4] = ["vmse", "inertia", "entropy", "intensity_factor"];

/// Mean agent value estimate of each cluster (`None` for empty clusters).
///
/// Sums are taken relative to the first value seen in each cluster, so a
/// cluster of identical values averages to that value exactly.
pub fn cluster_agent_values(labels: &[usize], dataset: &TrajectoryDataset, k: usize) -> Vec<Option<f64>> {
    let mut first = vec![None; k];
    let mut sum = vec![0.0; k];
    let mut n = vec![0usize; k];
    for (&l, r) in labels.iter().zip(dataset.records()) {
        let base = *first[l].get_or_insert(r.value_estimate);
        sum[l] += r.value_estimate - base;
        n[l] += 1;
    }
    (0..k)
        .map(|i| first[i].map(|b| b + sum[i] / n[i] as f64))
        .collect()
}

/// Relative L2 distance between cluster-averaged agent values and the model values,
/// over clusters that contain at least one step.
pub fn vmse(model: &SamdpModel, labels: &[usize], dataset: &TrajectoryDataset) -> Result<f64> {
    let agent = cluster_agent_values(labels, dataset, model.k());
    let (mut num, mut den) = (0.0, 0.0);
    for (i, a) in agent.iter().enumerate() {
        if let Some(a) = a {
            let d = a - model.value[i];
            num += d * d;
            den += a * a;
        }
    }
    if den == 0.0 {
        return Err(SamdpError::Numerical(
            "cluster-averaged agent values are all zero; VMSE is undefined".into(),
        ));
    }
    Ok((num / den).sqrt())
}

/// Sum over points of the squared distance to the nearest centroid.
/// Centroids with non-finite coordinates (empty clusters) are skipped.
pub fn inertia(points: &Matrix, centroids: &Matrix) -> f64 {
    let usable: Vec<&[f64]> = centroids
        .iter_rows()
        .filter(|c| c.iter().all(|x| x.is_finite()))
        .collect();
    points
        .iter_rows()
        .map(|x| usable.iter().map(|c| sq_dist(x, c)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Size-weighted row entropy of a transition matrix.
pub fn transition_entropy(p: &Matrix, sizes: &[usize]) -> f64 {
    let mut e = 0.0;
    for (i, row) in p.iter_rows().enumerate() {
        let h: f64 = row
            .iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| -x * x.ln())
            .sum();
        e += sizes[i] as f64 * h;
    }
    e
}

pub fn entropy(model: &SamdpModel) -> f64 {
    transition_entropy(&model.p, &model.sizes)
}

/// Step-level cluster transition matrix, self transitions included.
/// Only consecutive steps of the same episode are counted.
pub fn step_transition_matrix(labels: &[usize], episode_offsets: &[usize], k: usize) -> Matrix {
    let n = labels.len();
    let mut counts = Matrix::zeros(k, k);
    for (e, &start) in episode_offsets.iter().enumerate() {
        let end = episode_offsets.get(e + 1).copied().unwrap_or(n);
        for p in start..end.saturating_sub(1) {
            let (a, b) = (labels[p], labels[p + 1]);
            counts.set(a, b, counts.get(a, b) + 1.0);
        }
    }
    for i in 0..k {
        let total: f64 = counts.row(i).iter().sum();
        if total > 0.0 {
            for x in counts.row_mut(i) {
                *x /= total;
            }
        }
    }
    counts
}

/// Sum over states of the self-transition share of each row.
pub fn intensity_factor(p_step: &Matrix) -> f64 {
    p_step
        .iter_rows()
        .enumerate()
        .map(|(j, row)| {
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row[j] / total
            } else {
                0.0
            }
        })
        .sum()
}

/// All four criteria for a clustering and the SAMDP fitted from it.
pub fn score_model(
    points: &Matrix,
    clusters: &ClusterModel,
    model: &SamdpModel,
    dataset: &TrajectoryDataset,
) -> Result<FitnessReport> {
    let labels = &clusters.labels;
    let p_step = step_transition_matrix(labels, dataset.episode_offsets(), clusters.k());
    let report = FitnessReport {
        k: clusters.k(),
        w: clusters.config.w,
        algorithm: clusters.config.algorithm,
        vmse: vmse(model, labels, dataset)?,
        inertia: inertia(points, &clusters.centroids),
        entropy: entropy(model),
        intensity_factor: intensity_factor(&p_step),
    };
    if report.costs().iter().any(|c| !c.is_finite()) {
        return Err(SamdpError::Numerical(format!(
            "non-finite criterion for K={} w={}",
            report.k, report.w
        )));
    }
    Ok(report)
}
