use crate::error::Result;
use crate::matrix::Matrix;
use crate::samdp::{segment_episodes, transition_matrix, SamdpModel};
use crate::trajectory::{episode_returns, TrajectoryDataset};

/// Pearson correlation; `None` with fewer than two points or zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Per cluster, the correlation across episodes between how often the
/// episode's skills out of that cluster follow the greedy choice and the
/// episode's return. Clusters seen in fewer than 3 episodes get `None`.
pub fn greedy_reward_correlation(
    model: &SamdpModel,
    labels: &[usize],
    dataset: &TrajectoryDataset,
) -> Result<Vec<Option<f64>>> {
    let k = model.k();
    let returns = episode_returns(dataset);
    let mut xs: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut ys: Vec<Vec<f64>> = vec![Vec::new(); k];
    for (j, &ret) in returns.iter().enumerate() {
        let seg = segment_episodes(labels, dataset, &[j], model.gamma, model.f_flicker)?;
        let mut started = vec![0usize; k];
        let mut followed = vec![0usize; k];
        for s in &seg.segments {
            started[s.source] += 1;
            if model.greedy[s.source] == Some(s.target) {
                followed[s.source] += 1;
            }
        }
        for i in 0..k {
            if started[i] > 0 && model.greedy[i].is_some() {
                xs[i].push(followed[i] as f64 / started[i] as f64);
                ys[i].push(ret);
            }
        }
    }
    Ok((0..k)
        .map(|i| if xs[i].len() < 3 { None } else { pearson(&xs[i], &ys[i]) })
        .collect())
}

/// Indices of the `k` highest-return and `k` lowest-return episodes.
///
/// The top set is ordered by return descending, the bottom set by return
/// ascending; equal returns go to the lower episode id first.
pub fn extreme_episodes(dataset: &TrajectoryDataset, k: usize) -> (Vec<usize>, Vec<usize>) {
    let returns = episode_returns(dataset);
    let n = returns.len();
    let k = if k > n {
        log::warn!("k={k} exceeds the {n} episodes; using all of them");
        n
    } else {
        k
    };
    let id = |j: usize| dataset.episode_id(j);
    let mut top: Vec<usize> = (0..n).collect();
    top.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(id(a).cmp(&id(b))));
    let mut bottom: Vec<usize> = (0..n).collect();
    bottom.sort_by(|&a, &b| returns[a].total_cmp(&returns[b]).then(id(a).cmp(&id(b))));
    top.truncate(k);
    bottom.truncate(k);
    (top, bottom)
}

/// Skill transition matrices estimated from the best and the worst `k` episodes
/// only, with the same flicker and truncation settings as `model`.
pub fn extreme_matrices(
    model: &SamdpModel,
    labels: &[usize],
    dataset: &TrajectoryDataset,
    k: usize,
) -> Result<(Matrix, Matrix)> {
    let (top, bottom) = extreme_episodes(dataset, k);
    let est = |eps: &[usize]| -> Result<Matrix> {
        let seg = segment_episodes(labels, dataset, eps, model.gamma, model.f_flicker)?;
        Ok(transition_matrix(&seg.segments, model.k(), model.p_truncate))
    };
    Ok((est(&top)?, est(&bottom)?))
}

/// Deterministic matrix with a one at `(i, greedy[i])`.
pub fn greedy_matrix(model: &SamdpModel) -> Matrix {
    let k = model.k();
    let mut g = Matrix::zeros(k, k);
    for (i, t) in model.greedy.iter().enumerate() {
        if let Some(j) = t {
            g.set(i, *j, 1.0);
        }
    }
    g
}

fn matrix_correlation(model: &SamdpModel, g: &Matrix, t: &Matrix) -> Option<f64> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..model.k() {
        if model.greedy[i].is_none() || t.row(i).iter().all(|&x| x == 0.0) {
            continue;
        }
        xs.extend_from_slice(g.row(i));
        ys.extend_from_slice(t.row(i));
    }
    pearson(&xs, &ys)
}

/// Correlation of the greedy policy matrix with each extreme matrix, over
/// rows where the greedy choice is defined and the extreme matrix has data.
pub fn greedy_vs_extremes(model: &SamdpModel, t_plus: &Matrix, t_minus: &Matrix) -> (Option<f64>, Option<f64>) {
    let g = greedy_matrix(model);
    (
        matrix_correlation(model, &g, t_plus),
        matrix_correlation(model, &g, t_minus),
    )
}
