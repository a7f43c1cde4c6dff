use std::ops::Range;

/// Per-step episode boundaries derived from episode offsets.
#[derive(Debug, Clone)]
pub struct EpisodeBounds {
    start: Vec<usize>,
    end: Vec<usize>,
}

impl EpisodeBounds {
    pub fn new(episode_offsets: &[usize], n: usize) -> Self {
        let mut start = vec![0; n];
        let mut end = vec![n; n];
        for (j, &s) in episode_offsets.iter().enumerate() {
            let e = episode_offsets.get(j + 1).copied().unwrap_or(n).min(n);
            for p in s.min(n)..e {
                start[p] = s;
                end[p] = e;
            }
        }
        EpisodeBounds { start, end }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// Window `[p - w, p + w]` truncated to the episode containing `p`.
    pub fn window(&self, p: usize, w: usize) -> Range<usize> {
        let lo = p.saturating_sub(w).max(self.start[p]);
        let hi = (p + w + 1).min(self.end[p]);
        lo..hi
    }

    /// Step before `p` in the same episode.
    pub fn prev(&self, p: usize) -> Option<usize> {
        (p > self.start[p]).then(|| p - 1)
    }

    /// Step after `p` in the same episode.
    pub fn next(&self, p: usize) -> Option<usize> {
        (p + 1 < self.end[p]).then_some(p + 1)
    }
}
