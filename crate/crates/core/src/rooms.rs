//! Four-rooms gridworld used as a synthetic data source with known structure.
//!
//! The grid is split into four rooms by one horizontal and one vertical wall
//! that run along cell edges; each of the four wall segments has a single
//! doorway gap. Reaching the goal pays 1 and ends the episode. The recorded
//! features are radial-basis responses of the cell position, and the recorded
//! value estimate is the exact optimal value.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SamdpError};
use crate::textio::{self, Header};
use crate::trajectory::{StepRecord, TrajectoryDataset};

pub const ROOMS_TAG: &str = "samdp-rooms";

/// up, right, down, left
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

#[derive(Debug, Clone, PartialEq)]
pub struct RoomsConfig {
    pub rows: usize,
    pub cols: usize,
    pub goal: (usize, usize),
    pub epsilon: f64,
    pub gamma: f64,
    pub episodes: usize,
    pub max_steps: usize,
    pub feature_dim: usize,
    pub rbf_width: f64,
    /// Seeds episode starts and exploration.
    pub seed: u64,
    /// Seeds the feature anchors; keep it fixed to get comparable datasets.
    pub feature_seed: u64,
    /// Share of episodes played with `corrupt_epsilon` instead of `epsilon`.
    pub corrupt_fraction: f64,
    pub corrupt_epsilon: f64,
}

impl Default for RoomsConfig {
    fn default() -> Self {
        RoomsConfig {
            rows: 20,
            cols: 20,
            goal: (12, 12),
            epsilon: 0.05,
            gamma: 0.99,
            episodes: 300,
            max_steps: 32,
            feature_dim: 64,
            rbf_width: 3.0,
            seed: 0,
            feature_seed: 0,
            corrupt_fraction: 0.0,
            corrupt_epsilon: 0.5,
        }
    }
}

/// Grid geometry: wall positions, doorways and distances to the goal.
#[derive(Debug, Clone)]
pub struct RoomsGrid {
    pub rows: usize,
    pub cols: usize,
    pub goal: (usize, usize),
    /// First row of the bottom rooms / first column of the right rooms.
    split_row: usize,
    split_col: usize,
    /// Doorway rows in the vertical wall (top, bottom) and columns in the horizontal one (left, right).
    door_rows: [usize; 2],
    door_cols: [usize; 2],
    /// Steps to the goal for every cell (row-major), `usize::MAX` if unreachable.
    pub distance: Vec<usize>,
}

impl RoomsGrid {
    pub fn new(rows: usize, cols: usize, goal: (usize, usize)) -> Result<Self> {
        if rows < 4 || cols < 4 {
            return Err(SamdpError::Config("rooms grid needs at least 4x4 cells".into()));
        }
        if goal.0 >= rows || goal.1 >= cols {
            return Err(SamdpError::Config(format!("goal {goal:?} lies outside the grid")));
        }
        let (split_row, split_col) = (rows / 2, cols / 2);
        let mut grid = RoomsGrid {
            rows,
            cols,
            goal,
            split_row,
            split_col,
            door_rows: [split_row / 2, split_row + (rows - split_row) / 2],
            door_cols: [split_col / 2, split_col + (cols - split_col) / 2],
            distance: Vec::new(),
        };
        grid.distance = grid.bfs_from_goal();
        if grid.distance.contains(&usize::MAX) {
            return Err(SamdpError::Config("goal is not reachable from every cell".into()));
        }
        Ok(grid)
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn index(&self, cell: (usize, usize)) -> usize {
        cell.0 * self.cols + cell.1
    }

    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    /// Room id: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub fn room(&self, cell: (usize, usize)) -> usize {
        2 * usize::from(cell.0 >= self.split_row) + usize::from(cell.1 >= self.split_col)
    }

    fn blocked(&self, from: (usize, usize), to: (usize, usize)) -> bool {
        if from.1 != to.1 {
            // horizontal move across the vertical wall
            let crosses = from.1.min(to.1) + 1 == self.split_col;
            let door = if from.0 < self.split_row { self.door_rows[0] } else { self.door_rows[1] };
            crosses && from.0 != door
        } else {
            let crosses = from.0.min(to.0) + 1 == self.split_row;
            let door = if from.1 < self.split_col { self.door_cols[0] } else { self.door_cols[1] };
            crosses && from.1 != door
        }
    }

    /// Cell reached by taking `action`; bumping into a wall or the border stays put.
    pub fn step(&self, cell: (usize, usize), action: usize) -> (usize, usize) {
        let (dr, dc) = MOVES[action];
        let r = cell.0 as isize + dr;
        let c = cell.1 as isize + dc;
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            return cell;
        }
        let to = (r as usize, c as usize);
        if self.blocked(cell, to) {
            cell
        } else {
            to
        }
    }

    fn bfs_from_goal(&self) -> Vec<usize> {
        self.bfs_from(self.goal)
    }

    /// Shortest-path step counts from `source` to every cell (moves are symmetric).
    pub fn bfs_from(&self, source: (usize, usize)) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.num_cells()];
        let mut queue = VecDeque::new();
        dist[self.index(source)] = 0;
        queue.push_back(source);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)];
            for a in 0..4 {
                let n = self.step(c, a);
                if dist[self.index(n)] == usize::MAX {
                    dist[self.index(n)] = d + 1;
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn distance_to_goal(&self, cell: (usize, usize)) -> usize {
        self.distance[self.index(cell)]
    }

    /// Actions that bring the agent one step closer to the goal.
    pub fn optimal_actions(&self, cell: (usize, usize)) -> Vec<usize> {
        let d = self.distance_to_goal(cell);
        (0..4)
            .filter(|&a| self.distance_to_goal(self.step(cell, a)) + 1 == d)
            .collect()
    }

    /// Optimal values by value iteration: reward 1 on entering the goal,
    /// goal absorbing with value 0. Iterates until the update is below `tol`.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> Vec<f64> {
        let n = self.num_cells();
        let g = self.index(self.goal);
        let mut v = vec![0.0; n];
        loop {
            let mut delta: f64 = 0.0;
            let mut next = vec![0.0; n];
            for (s, slot) in next.iter_mut().enumerate() {
                if s == g {
                    continue;
                }
                let cell = self.cell(s);
                let best = (0..4)
                    .map(|a| {
                        let t = self.index(self.step(cell, a));
                        if t == g {
                            1.0
                        } else {
                            gamma * v[t]
                        }
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                *slot = best;
            }
            v = next;
            if delta < tol {
                return v;
            }
        }
    }
}

/// Everything the generator knows about the episodes it wrote.
#[derive(Debug, Clone)]
pub struct RoomsData {
    pub dataset: TrajectoryDataset,
    pub room_labels: Vec<usize>,
    pub oracle_values: Vec<f64>,
    /// Undiscounted return of each episode, accumulated while generating.
    pub returns: Vec<f64>,
    pub corrupted: Vec<bool>,
}

/// Radial-basis features of a cell around fixed random anchor cells.
///
/// Distances are shortest-path step counts, so two cells on either side of a
/// wall look as far apart as the detour between them.
#[derive(Debug, Clone)]
pub struct RbfFeatures {
    /// `table[a][cell]` is the response of anchor `a`.
    table: Vec<Vec<f64>>,
    cols: usize,
}

impl RbfFeatures {
    pub fn new(grid: &RoomsGrid, dim: usize, width: f64, rng: &mut ChaCha8Rng) -> Self {
        let s = 2.0 * width * width;
        let table = (0..dim)
            .map(|_| {
                let anchor = grid.cell(rng.random_range(0..grid.num_cells()));
                grid.bfs_from(anchor)
                    .into_iter()
                    .map(|d| (-((d * d) as f64) / s).exp())
                    .collect()
            })
            .collect();
        RbfFeatures { table, cols: grid.cols }
    }

    pub fn features(&self, cell: (usize, usize)) -> Vec<f64> {
        let idx = cell.0 * self.cols + cell.1;
        self.table.iter().map(|t| t[idx]).collect()
    }
}

impl RoomsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.corrupt_epsilon) {
            return Err(SamdpError::Config("epsilon must lie in [0, 1)".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(SamdpError::Config("gamma must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(SamdpError::Config("corrupt_fraction must lie in [0, 1]".into()));
        }
        if self.episodes == 0 || self.max_steps == 0 || self.feature_dim == 0 {
            return Err(SamdpError::Config(
                "episodes, max_steps and feature_dim must be positive".into(),
            ));
        }
        if !(self.rbf_width > 0.0) {
            return Err(SamdpError::Config("rbf_width must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<RoomsGrid> {
        RoomsGrid::new(self.rows, self.cols, self.goal)
    }
}

struct Episode {
    records: Vec<StepRecord>,
    rooms: Vec<usize>,
    values: Vec<f64>,
    ret: f64,
}

fn play_episode(
    cfg: &RoomsConfig,
    grid: &RoomsGrid,
    rbf: &RbfFeatures,
    values: &[f64],
    episode: usize,
    epsilon: f64,
) -> Episode {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(episode as u64 + 1);
    let goal = grid.index(grid.goal);
    let start = loop {
        let s = rng.random_range(0..grid.num_cells());
        if s != goal {
            break grid.cell(s);
        }
    };
    let mut ep = Episode {
        records: Vec::new(),
        rooms: Vec::new(),
        values: Vec::new(),
        ret: 0.0,
    };
    let mut cell = start;
    for t in 0..cfg.max_steps {
        let explore = rng.random::<f64>() < epsilon;
        let action = if explore {
            rng.random_range(0..4)
        } else {
            *grid.optimal_actions(cell).choose(&mut rng).expect("non-goal cell has an optimal move")
        };
        let next = grid.step(cell, action);
        let reached = next == grid.goal;
        let reward = if reached { 1.0 } else { 0.0 };
        ep.ret += reward;
        let v = values[grid.index(cell)];
        ep.records.push(StepRecord {
            episode_id: episode,
            step_index: t,
            features: rbf.features(cell),
            value_estimate: v,
            reward,
            action,
            terminal: reached,
        });
        ep.rooms.push(grid.room(cell));
        ep.values.push(v);
        if reached {
            break;
        }
        cell = next;
    }
    ep
}

/// Generates `cfg.episodes` seeded episodes.
pub fn generate(cfg: &RoomsConfig) -> Result<RoomsData> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let values = grid.value_iteration(cfg.gamma, 1e-10);
    let rbf = RbfFeatures::new(
        &grid,
        cfg.feature_dim,
        cfg.rbf_width,
        &mut ChaCha8Rng::seed_from_u64(cfg.feature_seed),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let n_corrupt = (cfg.corrupt_fraction * cfg.episodes as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.episodes).collect();
    order.shuffle(&mut rng);
    let mut corrupted = vec![false; cfg.episodes];
    for &j in &order[..n_corrupt] {
        corrupted[j] = true;
    }

    let episodes: Vec<Episode> = (0..cfg.episodes)
        .into_par_iter()
        .map(|j| {
            let eps = if corrupted[j] { cfg.corrupt_epsilon } else { cfg.epsilon };
            play_episode(cfg, &grid, &rbf, &values, j, eps)
        })
        .collect();

    let mut records = Vec::new();
    let mut room_labels = Vec::new();
    let mut oracle_values = Vec::new();
    let mut returns = Vec::new();
    for ep in episodes {
        records.extend(ep.records);
        room_labels.extend(ep.rooms);
        oracle_values.extend(ep.values);
        returns.push(ep.ret);
    }
    Ok(RoomsData {
        dataset: TrajectoryDataset::from_records(records)?,
        room_labels,
        oracle_values,
        returns,
        corrupted,
    })
}

/// Sidecar text with one `room value` pair per step.
pub fn sidecar_text(room_labels: &[usize], oracle_values: &[f64]) -> String {
    let mut out = format!("#{ROOMS_TAG} v1 N={}\n", room_labels.len());
    for (r, v) in room_labels.iter().zip(oracle_values) {
        out.push_str(&format!("{r} {v:.16e}\n"));
    }
    out
}

pub fn save_sidecar(path: &Path, room_labels: &[usize], oracle_values: &[f64]) -> Result<()> {
    textio::write_text(path, &sidecar_text(room_labels, oracle_values))
}

/// Reads a sidecar back as `(room_labels, oracle_values)`.
pub fn parse_sidecar(text: &str, origin: &str) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = Header::parse(origin, lines.next().map(|(_, l)| l), ROOMS_TAG)?;
    let n: usize = header.require(origin, "N")?;
    let (mut rooms, mut values) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for (idx, line) in lines {
        let mut toks = line.split_ascii_whitespace();
        let (Some(r), Some(v), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(SamdpError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message: "expected `room value`".into(),
            });
        };
        rooms.push(textio::parse_usize(origin, idx + 1, r)?);
        values.push(textio::parse_f64(origin, idx + 1, v)?);
    }
    if rooms.len() != n {
        return Err(SamdpError::Parse {
            path: origin.to_string(),
            line: 1,
            message: format!("header declares N={n} but {} rows follow", rooms.len()),
        });
    }
    Ok((rooms, values))
}

pub fn load_sidecar(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    parse_sidecar(&textio::read_text(path)?, &path.display().to_string())
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    let mut ra = vec![0u64; ka];
    let mut rb = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        ra[x] += 1;
        rb[y] += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&m| c2(m)).sum();
    let sa: f64 = ra.iter().map(|&m| c2(m)).sum();
    let sb: f64 = rb.iter().map(|&m| c2(m)).sum();
    let expected = sa * sb / c2(n as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        // both partitions trivial in the same way
        return if index == expected { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RoomsConfig {
        RoomsConfig {
            episodes: 20,
            ..RoomsConfig::default()
        }
    }

    #[test]
    fn value_iteration_matches_distance() {
        let grid = small().grid().unwrap();
        let v = grid.value_iteration(0.99, 1e-10);
        for s in 0..grid.num_cells() {
            let d = grid.distance[s];
            if d == 0 {
                assert_eq!(v[s], 0.0);
            } else {
                assert!((v[s] - 0.99f64.powi(d as i32 - 1)).abs() < 1e-9, "cell {s}");
            }
        }
    }

    #[test]
    fn greedy_episode_length_equals_distance() {
        let cfg = RoomsConfig { epsilon: 0.0, ..small() };
        let data = generate(&cfg).unwrap();
        let grid = cfg.grid().unwrap();
        for j in 0..data.dataset.num_episodes() {
            let r = data.dataset.episode_range(j);
            let first = &data.dataset.records()[r.start];
            // recover the start cell from the oracle value
            let d = (first.value_estimate.ln() / 0.99f64.ln()).round() as usize + 1;
            if d <= cfg.max_steps {
                assert_eq!(r.len(), d);
                assert_eq!(data.returns[j], 1.0);
                assert!(data.dataset.episode_terminated(j));
            }
        }
        assert!(grid.distance.iter().all(|&d| d != usize::MAX));
    }

    #[test]
    fn rooms_change_only_through_doorways() {
        let cfg = RoomsConfig { epsilon: 0.3, ..small() };
        let grid = cfg.grid().unwrap();
        for s in 0..grid.num_cells() {
            let c = grid.cell(s);
            for a in 0..4 {
                let n = grid.step(c, a);
                if grid.room(n) != grid.room(c) {
                    let at_door = grid.door_rows.contains(&c.0) || grid.door_cols.contains(&c.1);
                    assert!(at_door, "{c:?} -> {n:?}");
                }
            }
        }
    }

    #[test]
    fn deterministic_and_returns_match() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.dataset.to_text(), b.dataset.to_text());
        assert_eq!(a.returns, crate::trajectory::episode_returns(&a.dataset));
    }

    #[test]
    fn features_are_injective() {
        let cfg = RoomsConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.feature_seed);
        let grid = cfg.grid().unwrap();
        let rbf = RbfFeatures::new(&grid, cfg.feature_dim, cfg.rbf_width, &mut rng);
        let feats: Vec<Vec<f64>> = (0..grid.num_cells()).map(|s| rbf.features(grid.cell(s))).collect();
        for i in 0..feats.len() {
            for j in i + 1..feats.len() {
                assert!(crate::matrix::sq_dist(&feats[i], &feats[j]) > 1e-12);
            }
        }
    }

    #[test]
    fn ari_reference_values() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let rooms: Vec<usize> = (0..40).map(|i| i / 10).collect();
        let ari = adjusted_rand_index(&vec![0; 40], &rooms);
        assert!(ari.abs() < 1e-12);
        // hand value: one co-clustered pair, 2 pairs on each side, 10 pairs total
        let v = adjusted_rand_index(&[0, 0, 1, 1, 2], &[0, 0, 1, 2, 2]);
        assert!((v - (1.0 - 0.4) / (2.0 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn sidecar_round_trip() {
        let text = sidecar_text(&[0, 3], &[0.5, 0.25]);
        assert_eq!(parse_sidecar(&text, "mem").unwrap(), (vec![0, 3], vec![0.5, 0.25]));
    }
}
