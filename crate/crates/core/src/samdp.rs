//! Skill extraction and the semi-aggregated MDP built from cluster labels.
//!
//! A skill is a maximal stay in one cluster followed by a move to another.
//! Episodes that end in a terminal state also leave through their last run;
//! those "exits" are kept separately so the goal cluster gets the reward it
//! actually collects instead of a value of zero.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, SamdpError};
use crate::matrix::Matrix;
use crate::textio::{self, Header};
use crate::trajectory::TrajectoryDataset;

pub const MODEL_TAG: &str = "samdp-model";

/// One observed skill: a stay in `source` ending with the first step in `target`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillSegment {
    pub source: usize,
    pub target: usize,
    /// Episode position in the dataset (not the file id).
    pub episode: usize,
    pub episode_id: usize,
    pub start_step: usize,
    pub end_step: usize,
    pub length: usize,
    pub discounted_reward: f64,
}

/// The final run of a terminated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalExit {
    pub cluster: usize,
    pub episode: usize,
    pub start_step: usize,
    pub length: usize,
    pub discounted_reward: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<SkillSegment>,
    pub exits: Vec<TerminalExit>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitParams {
    pub gamma: f64,
    pub f_flicker: usize,
    pub p_truncate: f64,
}

impl Default for FitParams {
    fn default() -> Self {
        FitParams {
            gamma: 0.99,
            f_flicker: 2,
            p_truncate: 0.1,
        }
    }
}

impl FitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SamdpError::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.p_truncate) {
            return Err(SamdpError::Config(format!(
                "p_truncate must lie in [0, 1), got {}",
                self.p_truncate
            )));
        }
        Ok(())
    }
}

/// Run-length encodes one episode's labels and dissolves runs shorter than `f`.
///
/// A short run joins the run before it; short runs at the very start join the
/// first run that survives. Returned runs are `(label, start, end)` with
/// positions relative to the slice.
pub fn smoothed_runs(labels: &[usize], f: usize) -> Vec<(usize, usize, usize)> {
    let mut raw: Vec<(usize, usize, usize)> = Vec::new();
    for (p, &l) in labels.iter().enumerate() {
        match raw.last_mut() {
            Some(last) if last.0 == l => last.2 = p + 1,
            _ => raw.push((l, p, p + 1)),
        }
    }
    let mut out: Vec<(usize, usize, usize)> = Vec::with_capacity(raw.len());
    let mut leading: Option<usize> = None;
    for (l, s, e) in raw {
        let short = e - s < f;
        match out.last_mut() {
            Some(last) if short || last.0 == l => last.2 = e,
            Some(_) => out.push((l, s, e)),
            None if short => {
                leading.get_or_insert(s);
            }
            None => out.push((l, leading.take().unwrap_or(s), e)),
        }
    }
    if out.is_empty() && !labels.is_empty() {
        // every run was a flicker; keep the episode as one stay in its first cluster
        out.push((labels[0], 0, labels.len()));
    }
    out
}

fn discounted(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut g = 1.0;
    for r in rewards {
        acc += g * r;
        g *= gamma;
    }
    acc
}

fn segment_episode(
    labels: &[usize],
    dataset: &TrajectoryDataset,
    episode: usize,
    gamma: f64,
    f: usize,
) -> Segmentation {
    let range = dataset.episode_range(episode);
    let recs = &dataset.records()[range.clone()];
    let rewards: Vec<f64> = recs.iter().map(|r| r.reward).collect();
    let runs = smoothed_runs(&labels[range.clone()], f);
    let mut seg = Segmentation::default();
    for pair in runs.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        seg.segments.push(SkillSegment {
            source: a.0,
            target: b.0,
            episode,
            episode_id: dataset.episode_id(episode),
            start_step: range.start + a.1,
            end_step: range.start + b.1,
            length: b.1 - a.1,
            discounted_reward: discounted(&rewards[a.1..b.1], gamma),
        });
    }
    if dataset.episode_terminated(episode) {
        if let Some(&(l, s, e)) = runs.last() {
            seg.exits.push(TerminalExit {
                cluster: l,
                episode,
                start_step: range.start + s,
                length: e - s,
                discounted_reward: discounted(&rewards[s..e], gamma),
            });
        }
    }
    seg
}

/// Segments and terminal exits of the given episodes, in episode order.
pub fn segment_episodes(
    labels: &[usize],
    dataset: &TrajectoryDataset,
    episodes: &[usize],
    gamma: f64,
    f: usize,
) -> Result<Segmentation> {
    if labels.len() != dataset.total_steps() {
        return Err(SamdpError::invalid(format!(
            "{} labels for {} steps",
            labels.len(),
            dataset.total_steps()
        )));
    }
    let parts: Vec<Segmentation> = episodes
        .par_iter()
        .map(|&j| segment_episode(labels, dataset, j, gamma, f))
        .collect();
    let mut out = Segmentation::default();
    for p in parts {
        out.segments.extend(p.segments);
        out.exits.extend(p.exits);
    }
    Ok(out)
}

/// All skill segments in the dataset.
pub fn extract_segments(
    labels: &[usize],
    dataset: &TrajectoryDataset,
    gamma: f64,
    f_flicker: usize,
) -> Result<Vec<SkillSegment>> {
    let all: Vec<usize> = (0..dataset.num_episodes()).collect();
    Ok(segment_episodes(labels, dataset, &all, gamma, f_flicker)?.segments)
}

/// Row-normalized segment counts with small entries dropped.
///
/// Entries below `p_truncate` are zeroed and the row renormalized; if that
/// would empty a row, only its largest entry (lowest index on ties) is kept.
pub fn transition_matrix(segments: &[SkillSegment], k: usize, p_truncate: f64) -> Matrix {
    let mut counts = Matrix::zeros(k, k);
    for s in segments {
        counts.set(s.source, s.target, counts.get(s.source, s.target) + 1.0);
    }
    normalize_counts(&counts, p_truncate)
}

pub(crate) fn normalize_counts(counts: &Matrix, p_truncate: f64) -> Matrix {
    let k = counts.rows();
    let mut p = Matrix::zeros(k, k);
    for i in 0..k {
        let row = counts.row(i);
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let mut kept: Vec<f64> = row
            .iter()
            .map(|&c| if c / total >= p_truncate { c } else { 0.0 })
            .collect();
        if kept.iter().all(|&c| c == 0.0) {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            kept[best] = row[best];
        }
        let kept_total: f64 = kept.iter().sum();
        for (j, c) in kept.into_iter().enumerate() {
            p.set(i, j, c / kept_total);
        }
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamdpModel {
    pub gamma: f64,
    pub f_flicker: usize,
    pub p_truncate: f64,
    /// Skill transition probabilities after truncation; zero diagonal.
    pub p: Matrix,
    /// Mean discounted reward of each observed skill.
    pub r: Matrix,
    /// Mean length of each observed skill.
    pub k_bar: Matrix,
    /// Raw segment counts before truncation.
    pub counts: Matrix,
    /// Terminal exits per cluster, with their mean discounted reward and length.
    pub exit_counts: Vec<f64>,
    pub exit_reward: Vec<f64>,
    pub exit_length: Vec<f64>,
    /// Number of steps labeled with each cluster.
    pub sizes: Vec<usize>,
    pub value: Vec<f64>,
    pub greedy: Vec<Option<usize>>,
}

impl SamdpModel {
    pub fn k(&self) -> usize {
        self.p.rows()
    }

    pub fn visited(&self, i: usize) -> bool {
        self.sizes[i] > 0
    }

    /// Fraction of departures from `i` that end the episode.
    pub fn exit_probability(&self, i: usize) -> f64 {
        let out: f64 = self.counts.row(i).iter().sum();
        let total = out + self.exit_counts[i];
        if total > 0.0 {
            self.exit_counts[i] / total
        } else {
            0.0
        }
    }

    /// P-weighted mean skill length out of `i` (0 when `i` has no skills).
    pub fn mean_length(&self, i: usize) -> f64 {
        (0..self.k()).map(|j| self.p.get(i, j) * self.k_bar.get(i, j)).sum()
    }

    /// Coefficients of the Bellman system `V = b + A V`.
    ///
    /// `A[i][j] = (1 - e_i) * gamma^kbar_i * P[i][j]` and
    /// `b[i] = (1 - e_i) * sum_j P[i][j] R[i][j] + e_i * X_i`, where `e_i` is
    /// the exit probability and `X_i` the mean exit reward.
    pub fn bellman_system(&self) -> (Matrix, Vec<f64>) {
        let k = self.k();
        let mut a = Matrix::zeros(k, k);
        let mut b = vec![0.0; k];
        for i in 0..k {
            let e = self.exit_probability(i);
            let disc = self.gamma.powf(self.mean_length(i));
            let mut r_agg = 0.0;
            for j in 0..k {
                let pij = self.p.get(i, j);
                r_agg += pij * self.r.get(i, j);
                a.set(i, j, (1.0 - e) * disc * pij);
            }
            b[i] = (1.0 - e) * r_agg + e * self.exit_reward[i];
        }
        (a, b)
    }

    /// `max_i |((I - A) V - b)_i|` for a candidate value vector.
    pub fn residual(&self, value: &[f64]) -> f64 {
        let (a, b) = self.bellman_system();
        residual_of(&a, &b, value)
    }

    pub fn to_text(&self) -> String {
        let k = self.k();
        let mut out = format!(
            "#{MODEL_TAG} v1 K={k} gamma={:.16e} f_flicker={} p_truncate={:.16e}\n",
            self.gamma, self.f_flicker, self.p_truncate
        );
        for (name, m) in [("P", &self.p), ("R", &self.r), ("k_bar", &self.k_bar), ("counts", &self.counts)] {
            out.push_str(name);
            out.push('\n');
            for row in m.iter_rows() {
                textio::push_row(&mut out, row, true);
            }
        }
        let sizes: Vec<f64> = self.sizes.iter().map(|&s| s as f64).collect();
        for (name, v) in [
            ("exit_count", &self.exit_counts),
            ("exit_reward", &self.exit_reward),
            ("exit_length", &self.exit_length),
            ("size", &sizes),
            ("value", &self.value),
        ] {
            out.push_str(name);
            out.push(' ');
            textio::push_row(&mut out, v, true);
        }
        out.push_str("greedy");
        for g in &self.greedy {
            match g {
                Some(j) => out.push_str(&format!(" {j}")),
                None => out.push_str(" -"),
            }
        }
        out.push('\n');
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header = Header::parse(origin, lines.next().map(|(_, l)| l), MODEL_TAG)?;
        let k: usize = header.require(origin, "K")?;
        let gamma: f64 = header.require(origin, "gamma")?;
        let f_flicker: usize = header.get("f_flicker").and_then(|v| v.parse().ok()).unwrap_or(0);
        let p_truncate: f64 = header.get("p_truncate").and_then(|v| v.parse().ok()).unwrap_or(0.0);
        let parse_err = |line: usize, message: String| SamdpError::Parse {
            path: origin.to_string(),
            line,
            message,
        };

        let mut block = |name: &str| -> Result<Matrix> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("missing `{name}` block")))?;
            if line.trim() != name {
                return Err(parse_err(idx + 1, format!("expected `{name}`, found `{}`", line.trim())));
            }
            let mut data = Vec::with_capacity(k * k);
            for _ in 0..k {
                let (idx, line) = lines
                    .next()
                    .ok_or_else(|| parse_err(0, format!("`{name}` block is truncated")))?;
                data.extend(textio::parse_row(origin, idx + 1, line, k)?);
            }
            Matrix::from_vec(k, k, data)
        };
        let p = block("P")?;
        let r = block("R")?;
        let k_bar = block("k_bar")?;
        let counts = block("counts")?;

        let mut vector = |name: &str| -> Result<(usize, Vec<String>)> {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("missing `{name}` line")))?;
            let mut toks = line.split_ascii_whitespace();
            if toks.next() != Some(name) {
                return Err(parse_err(idx + 1, format!("expected `{name}` line")));
            }
            let toks: Vec<String> = toks.map(str::to_string).collect();
            if toks.len() != k {
                return Err(parse_err(idx + 1, format!("expected {k} entries, found {}", toks.len())));
            }
            Ok((idx + 1, toks))
        };
        let mut reals = |name: &str| -> Result<Vec<f64>> {
            let (line, toks) = vector(name)?;
            toks.iter().map(|t| textio::parse_f64(origin, line, t)).collect()
        };
        let exit_counts = reals("exit_count")?;
        let exit_reward = reals("exit_reward")?;
        let exit_length = reals("exit_length")?;
        let sizes: Vec<usize> = reals("size")?.into_iter().map(|s| s as usize).collect();
        let value = reals("value")?;
        let (line, toks) = vector("greedy")?;
        let greedy = toks
            .iter()
            .map(|t| {
                if t == "-" {
                    Ok(None)
                } else {
                    let j = textio::parse_usize(origin, line, t)?;
                    if j >= k {
                        return Err(parse_err(line, format!("greedy target {j} out of range")));
                    }
                    Ok(Some(j))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SamdpModel {
            gamma,
            f_flicker,
            p_truncate,
            p,
            r,
            k_bar,
            counts,
            exit_counts,
            exit_reward,
            exit_length,
            sizes,
            value,
            greedy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SamdpModel::parse(&textio::read_text(path)?, &path.display().to_string())
    }
}

fn residual_of(a: &Matrix, b: &[f64], v: &[f64]) -> f64 {
    let k = b.len();
    let mut worst: f64 = 0.0;
    for i in 0..k {
        let mut lhs = v[i];
        for j in 0..k {
            lhs -= a.get(i, j) * v[j];
        }
        worst = worst.max((lhs - b[i]).abs());
    }
    worst
}

/// Estimates the model from labels and solves for its value and greedy policy.
pub fn fit_samdp(
    labels: &[usize],
    k: usize,
    dataset: &TrajectoryDataset,
    params: &FitParams,
) -> Result<SamdpModel> {
    params.validate()?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(SamdpError::invalid(format!("label {bad} out of range for K={k}")));
    }
    let all: Vec<usize> = (0..dataset.num_episodes()).collect();
    let seg = segment_episodes(labels, dataset, &all, params.gamma, params.f_flicker)?;

    let mut counts = Matrix::zeros(k, k);
    let mut r_sum = Matrix::zeros(k, k);
    let mut len_sum = Matrix::zeros(k, k);
    for s in &seg.segments {
        let (i, j) = (s.source, s.target);
        counts.set(i, j, counts.get(i, j) + 1.0);
        r_sum.set(i, j, r_sum.get(i, j) + s.discounted_reward);
        len_sum.set(i, j, len_sum.get(i, j) + s.length as f64);
    }
    let mut r = Matrix::zeros(k, k);
    let mut k_bar = Matrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let c = counts.get(i, j);
            if c > 0.0 {
                r.set(i, j, r_sum.get(i, j) / c);
                k_bar.set(i, j, len_sum.get(i, j) / c);
            }
        }
    }
    let mut exit_counts = vec![0.0; k];
    let mut exit_reward = vec![0.0; k];
    let mut exit_length = vec![0.0; k];
    for x in &seg.exits {
        exit_counts[x.cluster] += 1.0;
        exit_reward[x.cluster] += x.discounted_reward;
        exit_length[x.cluster] += x.length as f64;
    }
    for i in 0..k {
        if exit_counts[i] > 0.0 {
            exit_reward[i] /= exit_counts[i];
            exit_length[i] /= exit_counts[i];
        }
    }
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut model = SamdpModel {
        gamma: params.gamma,
        f_flicker: params.f_flicker,
        p_truncate: params.p_truncate,
        p: normalize_counts(&counts, params.p_truncate),
        r,
        k_bar,
        counts,
        exit_counts,
        exit_reward,
        exit_length,
        sizes,
        value: vec![0.0; k],
        greedy: vec![None; k],
    };
    model.value = solve_value(&model)?;
    model.greedy = greedy_policy(&model);
    Ok(model)
}

/// Solves `(I - A) V = b` (see [`SamdpModel::bellman_system`]) by LU.
///
/// States never visited keep value 0. The residual is checked against
/// `1e-10 * (1 + |b|_inf)`, with one refinement step before giving up.
pub fn solve_value(model: &SamdpModel) -> Result<Vec<f64>> {
    let k = model.k();
    let (a, b) = model.bellman_system();
    let m = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 } - a.get(i, j));
    let lu = m.clone().lu();
    let rhs = DVector::from_column_slice(&b);
    let mut v = lu.solve(&rhs).ok_or_else(|| singular_error(&a))?;
    let tol = 1e-10 * (1.0 + b.iter().fold(0.0f64, |acc, x| acc.max(x.abs())));
    let mut value: Vec<f64> = v.iter().copied().collect();
    if residual_of(&a, &b, &value) > tol {
        let corr = lu.solve(&(&rhs - &m * &v)).ok_or_else(|| singular_error(&a))?;
        v += corr;
        value = v.iter().copied().collect();
    }
    if value.iter().any(|x| !x.is_finite()) || residual_of(&a, &b, &value) > tol {
        return Err(singular_error(&a));
    }
    for (i, x) in value.iter_mut().enumerate() {
        if !model.visited(i) {
            *x = 0.0;
        }
    }
    Ok(value)
}

fn singular_error(a: &Matrix) -> SamdpError {
    // rows whose discounted continuation mass is (numerically) one make I - A singular
    let states: Vec<String> = (0..a.rows())
        .filter(|&i| a.row(i).iter().sum::<f64>() >= 1.0 - 1e-12)
        .map(|i| i.to_string())
        .collect();
    SamdpError::Numerical(format!(
        "value system is singular or ill-conditioned; undiscounted states: [{}]",
        states.join(", ")
    ))
}

/// Best observed successor of each state under `R + gamma^k_bar V`.
pub fn greedy_policy(model: &SamdpModel) -> Vec<Option<usize>> {
    let k = model.k();
    (0..k)
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..k {
                if model.counts.get(i, j) <= 0.0 {
                    continue;
                }
                let q = model.r.get(i, j) + model.gamma.powf(model.k_bar.get(i, j)) * model.value[j];
                if best.is_none_or(|(_, b)| q > b) {
                    best = Some((j, q));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect()
}
