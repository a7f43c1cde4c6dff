//! Fixtures and independent reference computations shared by the
//! integration tests and the acceptance run.
#![allow(dead_code)]

use samdp_core::rooms::RoomsConfig;
use samdp_core::{FitnessReport, SamdpModel, StepRecord, TrajectoryDataset};

/// Dataset with one-dimensional features, given per-episode rewards and
/// whether each episode ends in a terminal step.
pub fn dataset(episodes: &[(Vec<f64>, bool)]) -> TrajectoryDataset {
    let mut recs = Vec::new();
    for (e, (rewards, terminal)) in episodes.iter().enumerate() {
        let n = rewards.len();
        for (s, &r) in rewards.iter().enumerate() {
            recs.push(StepRecord {
                episode_id: e,
                step_index: s,
                features: vec![(e * 100 + s) as f64],
                value_estimate: 0.5,
                reward: r,
                action: 0,
                terminal: *terminal && s + 1 == n,
            });
        }
    }
    TrajectoryDataset::from_records(recs).unwrap()
}

/// Per-step labels after flicker removal: a step in a run shorter than `f`
/// takes the label of the closest earlier run that is long enough, or of the
/// first long run when there is none before it. With no long run at all the
/// whole episode takes its first label.
pub fn deflickered(labels: &[usize], f: usize) -> Vec<usize> {
    let mut runs: Vec<(usize, usize)> = Vec::new(); // (label, length)
    for &l in labels {
        match runs.last_mut() {
            Some((x, n)) if *x == l => *n += 1,
            _ => runs.push((l, 1)),
        }
    }
    let long: Vec<bool> = runs.iter().map(|&(_, n)| n >= f).collect();
    let first_long = runs.iter().zip(&long).find(|(_, &k)| k).map(|(r, _)| r.0);
    let mut out = Vec::with_capacity(labels.len());
    let mut last_long = None;
    for (i, &(l, n)) in runs.iter().enumerate() {
        let lab = if long[i] {
            last_long = Some(l);
            l
        } else {
            last_long.or(first_long).unwrap_or(labels[0])
        };
        out.extend(std::iter::repeat(lab).take(n));
    }
    out
}

/// Segment counts by brute force: every change of the deflickered label
/// inside an episode is one segment.
pub fn segment_counts(labels: &[usize], ds: &TrajectoryDataset, f: usize, k: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; k]; k];
    for r in ds.episode_ranges() {
        let clean = deflickered(&labels[r], f);
        for w in clean.windows(2) {
            if w[0] != w[1] {
                counts[w[0]][w[1]] += 1;
            }
        }
    }
    counts
}

/// Row-normalized counts; rows without data stay zero.
pub fn normalized(counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().map(|&c| c as f64).sum();
            row.iter()
                .map(|&c| if total > 0.0 { c as f64 / total } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Chosen index by growing every criterion's prefix one step at a time until
/// all four prefixes share a member; ties go to the smallest `(k, w)`.
pub fn select_by_prefix_growth(reports: &[FitnessReport]) -> (usize, usize) {
    let n = reports.len();
    let mut lists: Vec<Vec<usize>> = Vec::new();
    for c in 0..4 {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| {
            let (x, y) = (reports[a].costs()[c], reports[b].costs()[c]);
            x.partial_cmp(&y)
                .unwrap()
                .then((reports[a].k, reports[a].w).cmp(&(reports[b].k, reports[b].w)))
        });
        lists.push(idx);
    }
    for p in 1..=n {
        let mut common: Vec<usize> = (0..n)
            .filter(|i| lists.iter().all(|l| l[..p].contains(i)))
            .collect();
        if !common.is_empty() {
            common.sort_by_key(|&i| (reports[i].k, reports[i].w));
            return (common[0], p);
        }
    }
    unreachable!("the full lists always intersect")
}

/// The rooms data used by the end-to-end checks: 20x20, 300 episodes, a
/// quarter of them played with heavy exploration.
pub fn rooms_train() -> RoomsConfig {
    samdp_core::PipelineConfig::default().rooms
}

/// Held-out episodes for the eject check, same layout and features.
pub fn rooms_eval() -> RoomsConfig {
    samdp_core::PipelineConfig::default().eval_rooms()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Value system assembled from the model fields, independent of the library's own.
pub fn bellman_by_hand(m: &SamdpModel) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = m.k();
    let mut a = vec![vec![0.0; k]; k];
    let mut b = vec![0.0; k];
    for i in 0..k {
        let out: f64 = m.counts.row(i).iter().sum();
        let total = out + m.exit_counts[i];
        let e = if total > 0.0 { m.exit_counts[i] / total } else { 0.0 };
        let kbar: f64 = (0..k).map(|j| m.p.get(i, j) * m.k_bar.get(i, j)).sum();
        let disc = m.gamma.powf(kbar);
        for j in 0..k {
            a[i][j] = (1.0 - e) * disc * m.p.get(i, j);
            b[i] += (1.0 - e) * m.p.get(i, j) * m.r.get(i, j);
        }
        b[i] += e * m.exit_reward[i];
    }
    (a, b)
}

/// Largest absolute residual of `v = A v + b`.
pub fn residual(a: &[Vec<f64>], b: &[f64], v: &[f64]) -> f64 {
    (0..b.len())
        .map(|i| {
            let av: f64 = (0..b.len()).map(|j| a[i][j] * v[j]).sum();
            (v[i] - av - b[i]).abs()
        })
        .fold(0.0, f64::max)
}
