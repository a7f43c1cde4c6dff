//! Cluster-change transition counts with cluster-size-weighted row entropy.
//!
//! Counts `c[i][j]` are the number of consecutive within-episode steps that go
//! from cluster `i` to a different cluster `j`. The entropy is
//! `sum_i |C_i| * H(row i)` with `|C_i|` the number of steps labeled `i`.

use super::EpisodeBounds;

#[inline]
fn xlogx(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

#[inline]
fn weighted_row_entropy(size: f64, total: f64, sum_xlogx: f64) -> f64 {
    if total > 0.0 && size > 0.0 {
        // guard tiny negative rounding on deterministic rows
        (size * (total.ln() - sum_xlogx / total)).max(0.0)
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct LabelTransitions {
    k: usize,
    counts: Vec<f64>,
    totals: Vec<f64>,
    sum_xlogx: Vec<f64>,
    sizes: Vec<f64>,
}

impl LabelTransitions {
    pub fn from_labels(labels: &[usize], bounds: &EpisodeBounds, k: usize) -> Self {
        let mut t = LabelTransitions {
            k,
            counts: vec![0.0; k * k],
            totals: vec![0.0; k],
            sum_xlogx: vec![0.0; k],
            sizes: vec![0.0; k],
        };
        for (p, &l) in labels.iter().enumerate() {
            t.sizes[l] += 1.0;
            if let Some(q) = bounds.next(p) {
                if labels[q] != l {
                    t.counts[l * k + labels[q]] += 1.0;
                    t.totals[l] += 1.0;
                }
            }
        }
        for i in 0..k {
            t.refresh_row(i);
        }
        t
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn count(&self, i: usize, j: usize) -> f64 {
        self.counts[i * self.k + j]
    }

    pub fn size(&self, i: usize) -> f64 {
        self.sizes[i]
    }

    fn refresh_row(&mut self, i: usize) {
        let k = self.k;
        self.sum_xlogx[i] = self.counts[i * k..(i + 1) * k].iter().map(|&c| xlogx(c)).sum();
    }

    pub fn row_term(&self, i: usize) -> f64 {
        weighted_row_entropy(self.sizes[i], self.totals[i], self.sum_xlogx[i])
    }

    pub fn entropy(&self) -> f64 {
        (0..self.k).map(|i| self.row_term(i)).sum()
    }

    fn move_deltas(
        labels: &[usize],
        bounds: &EpisodeBounds,
        p: usize,
        to: usize,
    ) -> ([(usize, usize, f64); 4], usize) {
        let from = labels[p];
        let mut out = [(0, 0, 0.0); 4];
        let mut n = 0;
        if let Some(q) = bounds.prev(p) {
            let u = labels[q];
            if u != from {
                out[n] = (u, from, -1.0);
                n += 1;
            }
            if u != to {
                out[n] = (u, to, 1.0);
                n += 1;
            }
        }
        if let Some(q) = bounds.next(p) {
            let v = labels[q];
            if from != v {
                out[n] = (from, v, -1.0);
                n += 1;
            }
            if to != v {
                out[n] = (to, v, 1.0);
                n += 1;
            }
        }
        (out, n)
    }

    /// Entropy change caused by relabeling step `p` to cluster `to`.
    pub fn move_gain(&self, labels: &[usize], bounds: &EpisodeBounds, p: usize, to: usize) -> f64 {
        let from = labels[p];
        if from == to {
            return 0.0;
        }
        let (deltas, n) = Self::move_deltas(labels, bounds, p, to);
        let deltas = &deltas[..n];
        let mut rows = [from, to, usize::MAX, usize::MAX, usize::MAX, usize::MAX];
        let mut nrows = 2;
        for &(r, _, _) in deltas {
            if !rows[..nrows].contains(&r) {
                rows[nrows] = r;
                nrows += 1;
            }
        }
        let mut gain = 0.0;
        for &r in &rows[..nrows] {
            let mut total = self.totals[r];
            let mut sx = self.sum_xlogx[r];
            // the same (row, col) can appear twice, so accumulate per column first
            let mut seen: [usize; 4] = [usize::MAX; 4];
            let mut ns = 0;
            for &(rr, c, _) in deltas {
                if rr != r || seen[..ns].contains(&c) {
                    continue;
                }
                seen[ns] = c;
                ns += 1;
                let delta: f64 = deltas
                    .iter()
                    .filter(|(r2, c2, _)| *r2 == r && *c2 == c)
                    .map(|d| d.2)
                    .sum();
                let old = self.counts[r * self.k + c];
                sx += xlogx(old + delta) - xlogx(old);
                total += delta;
            }
            let size = self.sizes[r]
                + if r == to { 1.0 } else { 0.0 }
                - if r == from { 1.0 } else { 0.0 };
            gain += weighted_row_entropy(size, total, sx) - self.row_term(r);
        }
        gain
    }

    /// Applies the relabeling of step `p` to `to`; the caller updates `labels` afterwards.
    pub fn apply_move(&mut self, labels: &[usize], bounds: &EpisodeBounds, p: usize, to: usize) {
        let from = labels[p];
        if from == to {
            return;
        }
        let (deltas, n) = Self::move_deltas(labels, bounds, p, to);
        for &(r, c, d) in &deltas[..n] {
            self.counts[r * self.k + c] += d;
            self.totals[r] += d;
        }
        self.sizes[from] -= 1.0;
        self.sizes[to] += 1.0;
        for &(r, _, _) in &deltas[..n] {
            self.refresh_row(r);
        }
        self.refresh_row(from);
        self.refresh_row(to);
    }
}

/// Entropy of the cluster-change structure induced by `labels`.
pub fn label_change_entropy(labels: &[usize], episode_offsets: &[usize], k: usize) -> f64 {
    let bounds = EpisodeBounds::new(episode_offsets, labels.len());
    LabelTransitions::from_labels(labels, &bounds, k).entropy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_entropy(labels: &[usize], offsets: &[usize], k: usize) -> f64 {
        let n = labels.len();
        let mut c = vec![vec![0.0f64; k]; k];
        for p in 0..n.saturating_sub(1) {
            let boundary = offsets.contains(&(p + 1));
            if !boundary && labels[p] != labels[p + 1] {
                c[labels[p]][labels[p + 1]] += 1.0;
            }
        }
        (0..k)
            .map(|i| {
                let size = labels.iter().filter(|&&l| l == i).count() as f64;
                let tot: f64 = c[i].iter().sum();
                let h: f64 = c[i]
                    .iter()
                    .filter(|&&x| x > 0.0)
                    .map(|&x| -(x / tot) * (x / tot).ln())
                    .sum();
                size * h
            })
            .sum()
    }

    #[test]
    fn deterministic_sequence_has_zero_entropy() {
        let labels = [0, 0, 1, 1, 2, 2, 0, 0, 1];
        assert_eq!(label_change_entropy(&labels, &[0], 3), 0.0);
    }

    #[test]
    fn two_way_split_entropy() {
        // 0 -> 1 once and 0 -> 2 once; |C_0| = 2
        let labels = [0, 1, 0, 2];
        let e = label_change_entropy(&labels, &[0], 3);
        assert!((e - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn incremental_gain_matches_recount(
            labels in proptest::collection::vec(0usize..4, 2..40),
            p_frac in 0.0f64..1.0,
            to in 0usize..4,
            split in 0usize..40,
        ) {
            let n = labels.len();
            let p = ((p_frac * n as f64) as usize).min(n - 1);
            let offsets: Vec<usize> = if split > 0 && split < n { vec![0, split] } else { vec![0] };
            let bounds = EpisodeBounds::new(&offsets, n);
            let mut t = LabelTransitions::from_labels(&labels, &bounds, 4);
            let before = t.entropy();
            let gain = t.move_gain(&labels, &bounds, p, to);
            let mut moved = labels.clone();
            moved[p] = to;
            let after = brute_entropy(&moved, &offsets, 4);
            prop_assert!((before - brute_entropy(&labels, &offsets, 4)).abs() < 1e-9);
            prop_assert!((after - before - gain).abs() < 1e-9);
            t.apply_move(&labels, &bounds, p, to);
            prop_assert!((t.entropy() - after).abs() < 1e-9);
        }
    }
}
