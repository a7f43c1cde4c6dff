//! Reduction of per-step features to the 3-dim aggregation space:
//! PCA, then t-SNE to a 2-D map, then the scaled value estimate.

mod features;
mod pca;
mod tsne;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use features::build_feature_vectors;
pub use pca::{pca_reduce, PcaModel, PCA_TAG};
pub use tsne::{calibrate_row, kl_objective, tsne_embed, Calibration, TsneOutput, KL_TRACE_EVERY};

use crate::error::{Result, SamdpError};
use crate::matrix::{sq_dist, Matrix};
use crate::textio::{self, Header};
use crate::trajectory::TrajectoryDataset;

pub const EMBED_TAG: &str = "samdp-embed";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueScaleMode {
    Off,
    Standardize,
}

impl FromStr for ValueScaleMode {
    type Err = SamdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(ValueScaleMode::Off),
            "standardize" => Ok(ValueScaleMode::Standardize),
            other => Err(SamdpError::Config(format!(
                "value scale mode must be `off` or `standardize`, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for ValueScaleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValueScaleMode::Off => "off",
            ValueScaleMode::Standardize => "standardize",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    pub pca_dims: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub seed: u64,
    pub value_scale_mode: ValueScaleMode,
    /// Steps beyond this count are subsampled uniformly before t-SNE.
    pub max_points: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            pca_dims: 50,
            perplexity: 30.0,
            iterations: 3000,
            learning_rate: 200.0,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            seed: 0,
            value_scale_mode: ValueScaleMode::Standardize,
            max_points: 10_000,
        }
    }
}

/// One `(map_x, map_y, scaled_value)` point per step record.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedDataset {
    pub points: Matrix,
}

impl EmbeddedDataset {
    pub fn new(points: Matrix) -> Result<Self> {
        if points.cols() != 3 {
            return Err(SamdpError::invalid(format!(
                "embedded points must be 3-dimensional, got {}",
                points.cols()
            )));
        }
        if !points.is_finite() {
            return Err(SamdpError::invalid("embedded points contain non-finite values"));
        }
        Ok(EmbeddedDataset { points })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#{EMBED_TAG} v1 N={}\n", self.len());
        for r in self.points.iter_rows() {
            textio::push_row(&mut out, r, false);
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = Header::parse(origin, lines.next(), EMBED_TAG)?;
        let n: usize = header.require(origin, "N")?;
        let mut data = Vec::with_capacity(3 * n);
        let mut count = 0;
        for (idx, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            data.extend(textio::parse_row(origin, idx + 2, line, 3)?);
            count += 1;
        }
        if count != n {
            return Err(SamdpError::Parse {
                path: origin.to_string(),
                line: count + 1,
                message: format!("header declares N={n} but {count} points follow"),
            });
        }
        EmbeddedDataset::new(Matrix::from_vec(n, 3, data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textio::write_text(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        EmbeddedDataset::parse(&textio::read_text(path)?, &path.display().to_string())
    }
}

/// Everything produced by [`embed_dataset`].
#[derive(Debug, Clone)]
pub struct EmbeddingRun {
    pub embedded: EmbeddedDataset,
    pub pca: PcaModel,
    /// Step indices that went through t-SNE: one representative per distinct
    /// feature vector, subsampled when there are more than `max_points`.
    pub sampled: Vec<usize>,
    pub tsne: TsneOutput,
}

/// Runs the full reduction for a trajectory dataset.
///
/// Steps with identical features are embedded once and share map
/// coordinates; exact duplicates would otherwise collapse into isolated
/// clumps whose perplexity cannot be calibrated. When more than `max_points`
/// distinct vectors remain, a seeded uniform subsample is embedded and every
/// other vector borrows the map coordinates of its nearest sampled one in PCA
/// space.
pub fn embed_dataset(dataset: &TrajectoryDataset, cfg: &EmbeddingConfig) -> Result<EmbeddingRun> {
    let features = dataset.features();
    if cfg.pca_dims > dataset.feature_dim() {
        return Err(SamdpError::Config(format!(
            "pca_dims {} exceeds feature dimension {}",
            cfg.pca_dims,
            dataset.feature_dim()
        )));
    }
    let pca = PcaModel::fit(&features, cfg.pca_dims)?;
    let reduced = pca.transform(&features)?;
    let n = reduced.rows();

    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut distinct: Vec<usize> = Vec::new();
    let mut slot_of = vec![0usize; n];
    for (i, slot) in slot_of.iter_mut().enumerate() {
        let key: Vec<u64> = features.row(i).iter().map(|v| v.to_bits()).collect();
        *slot = *seen.entry(key).or_insert_with(|| {
            distinct.push(i);
            distinct.len() - 1
        });
    }
    let m = distinct.len();
    if m < n {
        log::info!("{n} steps carry {m} distinct feature vectors");
    }

    let sampled_slots: Vec<usize> = if m > cfg.max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ab5_a3b1);
        let mut idx = rand::seq::index::sample(&mut rng, m, cfg.max_points).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..m).collect()
    };
    let sampled: Vec<usize> = sampled_slots.iter().map(|&d| distinct[d]).collect();
    let sample_rows = reduced.select_rows(&sampled);
    let tsne = tsne_embed(&sample_rows, cfg)?;

    // map coordinates of every distinct vector
    let mut slot_coords = Matrix::zeros(m, 2);
    let mut next = 0;
    for d in 0..m {
        let src = if next < sampled_slots.len() && sampled_slots[next] == d {
            next += 1;
            next - 1
        } else {
            nearest_row(&sample_rows, reduced.row(distinct[d]))
        };
        slot_coords.row_mut(d).copy_from_slice(tsne.coords.row(src));
    }
    let mut map = Matrix::zeros(n, 2);
    for (i, &d) in slot_of.iter().enumerate() {
        map.row_mut(i).copy_from_slice(slot_coords.row(d));
    }
    let embedded = build_feature_vectors(&map, &dataset.values(), cfg.value_scale_mode)?;
    Ok(EmbeddingRun {
        embedded,
        pca,
        sampled,
        tsne,
    })
}

fn nearest_row(rows: &Matrix, x: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, r) in rows.iter_rows().enumerate() {
        let d = sq_dist(r, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}
