use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{score_model, FitnessReport};
use crate::aggregation::{cluster_means, ClusterConfig, ClusterModel};
use crate::error::{Result, SamdpError};
use crate::matrix::Matrix;
use crate::samdp::{fit_samdp, FitParams};
use crate::trajectory::TrajectoryDataset;

/// How random clusterings are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomLabels {
    /// Every step gets an independent uniform label.
    Uniform,
    /// The reference labels are permuted within each episode.
    ShuffleWithinEpisodes,
}

impl FromStr for RandomLabels {
    type Err = SamdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(RandomLabels::Uniform),
            "shuffle" => Ok(RandomLabels::ShuffleWithinEpisodes),
            other => Err(SamdpError::Config(format!(
                "random label mode must be `uniform` or `shuffle`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for RandomLabels {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RandomLabels::Uniform => "uniform",
            RandomLabels::ShuffleWithinEpisodes => "shuffle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomTestConfig {
    pub n_random: usize,
    pub seed: u64,
    pub mode: RandomLabels,
}

impl Default for RandomTestConfig {
    fn default() -> Self {
        RandomTestConfig {
            n_random: 1000,
            seed: 0,
            mode: RandomLabels::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomTest {
    /// Per criterion, the fraction of random models strictly better than the reference.
    pub better_fraction: [f64; 4],
    /// Random models that could not be scored (dropped from the fractions).
    pub failed: usize,
    pub reports: Vec<FitnessReport>,
}

/// Scores `n_random` random clusterings with the same K as `reference`.
///
/// Each random model uses its own stream of a seeded generator, so results do
/// not depend on the number of worker threads.
pub fn random_model_pvalue(
    points: &Matrix,
    dataset: &TrajectoryDataset,
    reference_labels: &[usize],
    reference: &FitnessReport,
    params: &FitParams,
    cfg: &RandomTestConfig,
) -> Result<RandomTest> {
    let RandomTestConfig { n_random, seed, mode } = *cfg;
    let k = reference.k;
    let n = dataset.total_steps();
    if points.rows() != n || reference_labels.len() != n {
        return Err(SamdpError::invalid("points, labels and dataset differ in length"));
    }
    let scored: Vec<Option<FitnessReport>> = (0..n_random)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let labels = match mode {
                RandomLabels::Uniform => (0..n).map(|_| rng.random_range(0..k)).collect(),
                RandomLabels::ShuffleWithinEpisodes => {
                    let mut l = reference_labels.to_vec();
                    for r in dataset.episode_ranges() {
                        l[r].shuffle(&mut rng);
                    }
                    l
                }
            };
            score_labels(points, dataset, labels, k, reference, params).ok()
        })
        .collect();
    let reports: Vec<FitnessReport> = scored.iter().flatten().cloned().collect();
    let failed = n_random - reports.len();
    let mut better = [0.0; 4];
    let ref_costs = reference.costs();
    for r in &reports {
        for (c, b) in better.iter_mut().enumerate() {
            if r.costs()[c] < ref_costs[c] {
                *b += 1.0;
            }
        }
    }
    if !reports.is_empty() {
        for b in &mut better {
            *b /= reports.len() as f64;
        }
    }
    Ok(RandomTest {
        better_fraction: better,
        failed,
        reports,
    })
}

fn score_labels(
    points: &Matrix,
    dataset: &TrajectoryDataset,
    labels: Vec<usize>,
    k: usize,
    reference: &FitnessReport,
    params: &FitParams,
) -> Result<FitnessReport> {
    let centroids = cluster_means(points, &labels, k);
    let clusters = ClusterModel {
        inertia: f64::NAN,
        centroids,
        labels,
        config: ClusterConfig {
            k,
            w: reference.w,
            algorithm: reference.algorithm,
            ..ClusterConfig::default()
        },
        converged: true,
        iterations_run: 0,
        objective_history: Vec::new(),
    };
    let model = fit_samdp(&clusters.labels, k, dataset, params)?;
    score_model(points, &clusters, &model, dataset)
}
