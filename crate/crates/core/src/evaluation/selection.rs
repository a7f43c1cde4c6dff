use rayon::prelude::*;

use super::{score_model, FitnessReport};
use crate::aggregation::{cluster, ClusterConfig, ClusterModel};
use crate::embedding::EmbeddedDataset;
use crate::error::{Result, SamdpError};
use crate::samdp::{fit_samdp, FitParams, SamdpModel};
use crate::trajectory::TrajectoryDataset;

/// One grid cell: its configuration and either the fitted result or the failure.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub k: usize,
    pub w: usize,
    pub outcome: std::result::Result<(ClusterModel, SamdpModel, FitnessReport), String>,
}

impl GridEntry {
    pub fn report(&self) -> Option<&FitnessReport> {
        self.outcome.as_ref().ok().map(|o| &o.2)
    }
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub entries: Vec<GridEntry>,
    /// Index into `entries` of the chosen configuration.
    pub chosen: usize,
    pub prefix_depth: usize,
    /// Other entries in the same winning intersection.
    pub tied: Vec<usize>,
}

impl SelectionResult {
    pub fn chosen_entry(&self) -> &GridEntry {
        &self.entries[self.chosen]
    }

    pub fn chosen_fit(&self) -> &(ClusterModel, SamdpModel, FitnessReport) {
        self.entries[self.chosen]
            .outcome
            .as_ref()
            .expect("chosen entry fitted")
    }
}

/// Smallest-p intersection of the four criterion rankings.
///
/// Each criterion list is sorted best first with ties broken by `(k, w)`.
/// Returns `(chosen, p, tied)` with indices into `reports`; the chosen one is
/// the lexicographically smallest `(k, w)` in the first non-empty
/// intersection. `None` for an empty input.
pub fn select_from_reports(reports: &[FitnessReport]) -> Option<(usize, usize, Vec<usize>)> {
    let n = reports.len();
    if n == 0 {
        return None;
    }
    let key = |i: usize| (reports[i].k, reports[i].w);
    let orders: Vec<Vec<usize>> = (0..4)
        .map(|c| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| {
                reports[a].costs()[c]
                    .total_cmp(&reports[b].costs()[c])
                    .then(key(a).cmp(&key(b)))
            });
            idx
        })
        .collect();
    // rank[c][i] = position of report i in list c
    let mut worst_rank = vec![0usize; n];
    for order in &orders {
        for (pos, &i) in order.iter().enumerate() {
            worst_rank[i] = worst_rank[i].max(pos + 1);
        }
    }
    let p = *worst_rank.iter().min().expect("non-empty");
    let mut members: Vec<usize> = (0..n).filter(|&i| worst_rank[i] == p).collect();
    members.sort_by_key(|&i| key(i));
    let chosen = members[0];
    Some((chosen, p, members[1..].to_vec()))
}

/// Fits and scores every `(k, w)` pair, then picks one by prefix intersection.
///
/// Configurations that fail are kept in `entries` with their error and left
/// out of the ranking.
pub fn grid_search_select(
    dataset: &TrajectoryDataset,
    embedded: &EmbeddedDataset,
    k_values: &[usize],
    w_values: &[usize],
    base: &ClusterConfig,
    params: &FitParams,
) -> Result<SelectionResult> {
    if k_values.is_empty() || w_values.is_empty() {
        return Err(SamdpError::Config("grid ranges must be non-empty".into()));
    }
    let grid: Vec<(usize, usize)> = k_values
        .iter()
        .flat_map(|&k| w_values.iter().map(move |&w| (k, w)))
        .collect();
    let entries: Vec<GridEntry> = grid
        .par_iter()
        .map(|&(k, w)| {
            let cfg = ClusterConfig { k, w, ..base.clone() };
            let outcome = fit_one(dataset, embedded, &cfg, params).map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                log::warn!("configuration K={k} w={w} failed: {e}");
            }
            GridEntry { k, w, outcome }
        })
        .collect();
    let ok: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].outcome.is_ok()).collect();
    let reports: Vec<FitnessReport> = ok.iter().map(|&i| entries[i].report().unwrap().clone()).collect();
    let (c, p, tied) = select_from_reports(&reports)
        .ok_or_else(|| SamdpError::Numerical("every grid configuration failed to fit".into()))?;
    Ok(SelectionResult {
        chosen: ok[c],
        prefix_depth: p,
        tied: tied.into_iter().map(|t| ok[t]).collect(),
        entries,
    })
}

/// Clusters, fits and scores one configuration.
pub(crate) fn fit_one(
    dataset: &TrajectoryDataset,
    embedded: &EmbeddedDataset,
    cfg: &ClusterConfig,
    params: &FitParams,
) -> Result<(ClusterModel, SamdpModel, FitnessReport)> {
    let clusters = cluster(embedded, cfg, dataset.episode_offsets())?;
    let model = fit_samdp(&clusters.labels, clusters.k(), dataset, params)?;
    let report = score_model(&embedded.points, &clusters, &model, dataset)?;
    Ok((clusters, model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::Algorithm;

    fn rep(k: usize, w: usize, c: [f64; 4]) -> FitnessReport {
        FitnessReport {
            k,
            w,
            algorithm: Algorithm::Spatiotemporal,
            vmse: c[0],
            inertia: c[1],
            entropy: c[2],
            intensity_factor: c[3],
        }
    }

    /// Literal prefix growth: intersect the first p of each list until non-empty.
    fn brute(reports: &[FitnessReport]) -> (usize, usize) {
        let n = reports.len();
        let mut lists = Vec::new();
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
            let mut inter: Vec<usize> = (0..n)
                .filter(|i| lists.iter().all(|l| l[..p].contains(i)))
                .collect();
            if !inter.is_empty() {
                inter.sort_by_key(|&i| (reports[i].k, reports[i].w));
                return (inter[0], p);
            }
        }
        unreachable!()
    }

    #[test]
    fn singleton_grid() {
        let r = [rep(3, 1, [0.5, 1.0, 2.0, 1.0])];
        assert_eq!(select_from_reports(&r), Some((0, 1, vec![])));
    }

    #[test]
    fn dominant_configuration_wins_at_p1() {
        let r = [rep(3, 1, [0.5, 1.0, 2.0, 1.0]), rep(4, 1, [0.4, 0.9, 1.0, 2.0])];
        assert_eq!(select_from_reports(&r).map(|s| (s.0, s.1)), Some((1, 1)));
    }

    proptest::proptest! {
        #[test]
        fn matches_literal_prefix_growth(
            costs in proptest::collection::vec(proptest::array::uniform4(0u8..5), 1..12)
        ) {
            let reports: Vec<FitnessReport> = costs
                .iter()
                .enumerate()
                .map(|(i, c)| rep(10 + i / 3, i % 3, c.map(f64::from)))
                .collect();
            let (chosen, p, _) = select_from_reports(&reports).unwrap();
            proptest::prop_assert_eq!((chosen, p), brute(&reports));
        }
    }
}
