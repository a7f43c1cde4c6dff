//! Stage driver: synthetic data, embedding, clustering, model fitting,
//! selection, evaluation, eject monitoring and drawing.
//!
//! Each stage reads the files written by earlier stages from `out_dir` and
//! writes its own, so any stage can be re-run on its own.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::aggregation::{cluster, ClusterConfig, ClusterModel};
use crate::eject::{evaluate_eject, EjectConfig, ProjectionModel};
use crate::embedding::{embed_dataset, EmbeddedDataset, EmbeddingConfig, PcaModel};
use crate::error::{Result, SamdpError};
use crate::evaluation::{
    extreme_matrices, greedy_reward_correlation, greedy_vs_extremes, grid_search_select,
    random_model_pvalue, score_model, KeyValueReport, RandomTestConfig, CRITERIA,
};
use crate::rooms::{self, RoomsConfig};
use crate::samdp::{fit_samdp, FitParams, SamdpModel};
use crate::textio;
use crate::trajectory::{load_dataset, TrajectoryDataset};
use crate::viz;

pub const TRAJECTORIES: &str = "trajectories.txt";
pub const ROOMS_SIDECAR: &str = "rooms.txt";
pub const EVAL_TRAJECTORIES: &str = "eval_trajectories.txt";
pub const EVAL_ROOMS_SIDECAR: &str = "eval_rooms.txt";
pub const EMBEDDING: &str = "embedding.txt";
pub const PCA: &str = "pca.txt";
pub const CLUSTERS: &str = "clusters.txt";
pub const MODEL: &str = "model.txt";
pub const SELECTION: &str = "selection.txt";
pub const REPORT: &str = "report.txt";
pub const PROJECTION: &str = "projection.txt";
pub const EJECT: &str = "eject.txt";
pub const SVG: &str = "samdp.svg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Embed,
    Cluster,
    Fit,
    Select,
    Eval,
    Eject,
    Viz,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Synth,
        Stage::Embed,
        Stage::Cluster,
        Stage::Fit,
        Stage::Select,
        Stage::Eval,
        Stage::Eject,
        Stage::Viz,
    ];
}

impl FromStr for Stage {
    type Err = SamdpError;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| SamdpError::Config(format!("unknown stage `{s}`")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Synth => "synth",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Fit => "fit",
            Stage::Select => "select",
            Stage::Eval => "eval",
            Stage::Eject => "eject",
            Stage::Viz => "viz",
        })
    }
}

/// Everything a pipeline run needs. Loaded from `key = value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    /// Training trajectories; `out_dir/trajectories.txt` when unset.
    pub trajectories: Option<PathBuf>,
    /// Held-out trajectories for the eject stage; `out_dir/eval_trajectories.txt` when unset.
    pub eval_trajectories: Option<PathBuf>,
    pub rooms: RoomsConfig,
    pub eval_seed: u64,
    pub eval_episodes: usize,
    pub eval_corrupt_fraction: f64,
    pub embedding: EmbeddingConfig,
    /// Used by the `cluster` stage and as the base of the selection grid.
    pub cluster: ClusterConfig,
    pub k_values: Vec<usize>,
    pub w_values: Vec<usize>,
    pub fit: FitParams,
    pub random: RandomTestConfig,
    pub extreme_k: Vec<usize>,
    pub eject: EjectConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            out_dir: PathBuf::from("samdp_out"),
            trajectories: None,
            eval_trajectories: None,
            rooms: RoomsConfig {
                corrupt_fraction: 0.25,
                ..RoomsConfig::default()
            },
            eval_seed: 1,
            eval_episodes: 300,
            eval_corrupt_fraction: 0.25,
            embedding: EmbeddingConfig::default(),
            cluster: ClusterConfig {
                k: 4,
                w: 2,
                ..ClusterConfig::default()
            },
            k_values: vec![4, 5, 6],
            w_values: vec![1, 2, 3],
            fit: FitParams::default(),
            random: RandomTestConfig::default(),
            extreme_k: vec![5, 10, 20],
            eject: EjectConfig::default(),
        }
    }
}

fn bad(key: &str, value: &str) -> SamdpError {
    SamdpError::Config(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn as_config(e: SamdpError) -> SamdpError {
    match e {
        SamdpError::Config(_) => e,
        other => SamdpError::Config(other.to_string()),
    }
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "out_dir",
        "trajectories",
        "eval_trajectories",
        "rooms_rows",
        "rooms_cols",
        "rooms_goal_row",
        "rooms_goal_col",
        "rooms_epsilon",
        "rooms_gamma",
        "rooms_episodes",
        "rooms_max_steps",
        "rooms_feature_dim",
        "rooms_rbf_width",
        "rooms_seed",
        "rooms_feature_seed",
        "rooms_corrupt_fraction",
        "rooms_corrupt_epsilon",
        "eval_seed",
        "eval_episodes",
        "eval_corrupt_fraction",
        "pca_dims",
        "perplexity",
        "tsne_iterations",
        "learning_rate",
        "early_exaggeration_factor",
        "early_exaggeration_iters",
        "embed_seed",
        "value_scale_mode",
        "max_points",
        "algorithm",
        "k",
        "w",
        "k_values",
        "w_values",
        "d_penalty",
        "lambda",
        "max_iters",
        "restarts",
        "cluster_seed",
        "gamma",
        "f_flicker",
        "p_truncate",
        "n_random",
        "random_seed",
        "random_mode",
        "extreme_k",
        "k_extreme",
        "likelihood_floor",
        "min_transitions",
    ];

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "out_dir" => self.out_dir = PathBuf::from(v),
            "trajectories" => self.trajectories = Some(PathBuf::from(v)),
            "eval_trajectories" => self.eval_trajectories = Some(PathBuf::from(v)),
            "rooms_rows" => self.rooms.rows = num(key, v)?,
            "rooms_cols" => self.rooms.cols = num(key, v)?,
            "rooms_goal_row" => self.rooms.goal.0 = num(key, v)?,
            "rooms_goal_col" => self.rooms.goal.1 = num(key, v)?,
            "rooms_epsilon" => self.rooms.epsilon = num(key, v)?,
            "rooms_gamma" => self.rooms.gamma = num(key, v)?,
            "rooms_episodes" => self.rooms.episodes = num(key, v)?,
            "rooms_max_steps" => self.rooms.max_steps = num(key, v)?,
            "rooms_feature_dim" => self.rooms.feature_dim = num(key, v)?,
            "rooms_rbf_width" => self.rooms.rbf_width = num(key, v)?,
            "rooms_seed" => self.rooms.seed = num(key, v)?,
            "rooms_feature_seed" => self.rooms.feature_seed = num(key, v)?,
            "rooms_corrupt_fraction" => self.rooms.corrupt_fraction = num(key, v)?,
            "rooms_corrupt_epsilon" => self.rooms.corrupt_epsilon = num(key, v)?,
            "eval_seed" => self.eval_seed = num(key, v)?,
            "eval_episodes" => self.eval_episodes = num(key, v)?,
            "eval_corrupt_fraction" => self.eval_corrupt_fraction = num(key, v)?,
            "pca_dims" => self.embedding.pca_dims = num(key, v)?,
            "perplexity" => self.embedding.perplexity = num(key, v)?,
            "tsne_iterations" => self.embedding.iterations = num(key, v)?,
            "learning_rate" => self.embedding.learning_rate = num(key, v)?,
            "early_exaggeration_factor" => self.embedding.early_exaggeration_factor = num(key, v)?,
            "early_exaggeration_iters" => self.embedding.early_exaggeration_iters = num(key, v)?,
            "embed_seed" => self.embedding.seed = num(key, v)?,
            "value_scale_mode" => self.embedding.value_scale_mode = v.parse()?,
            "max_points" => self.embedding.max_points = num(key, v)?,
            "algorithm" => self.cluster.algorithm = v.parse()?,
            "k" => self.cluster.k = num(key, v)?,
            "w" => self.cluster.w = num(key, v)?,
            "k_values" => self.k_values = list(key, v)?,
            "w_values" => self.w_values = list(key, v)?,
            "d_penalty" => self.cluster.d_penalty = num(key, v)?,
            "lambda" => self.cluster.lambda = num(key, v)?,
            "max_iters" => self.cluster.max_iters = num(key, v)?,
            "restarts" => self.cluster.restarts = num(key, v)?,
            "cluster_seed" => self.cluster.seed = num(key, v)?,
            "gamma" => self.fit.gamma = num(key, v)?,
            "f_flicker" => self.fit.f_flicker = num(key, v)?,
            "p_truncate" => self.fit.p_truncate = num(key, v)?,
            "n_random" => self.random.n_random = num(key, v)?,
            "random_seed" => self.random.seed = num(key, v)?,
            "random_mode" => self.random.mode = v.parse()?,
            "extreme_k" => self.extreme_k = list(key, v)?,
            "k_extreme" => self.eject.k_extreme = num(key, v)?,
            "likelihood_floor" => self.eject.likelihood_floor = num(key, v)?,
            "min_transitions" => self.eject.min_transitions = num(key, v)?,
            other => return Err(SamdpError::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| SamdpError::Config(format!("expected key=value, got `{pair}`")))?;
        self.set(k, v)
    }

    /// Defaults overridden by the `key = value` lines of `text`.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            cfg.set_pair(line)
                .map_err(|e| SamdpError::Config(format!("{origin}: line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PipelineConfig::parse(&textio::read_text(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        self.rooms.validate().map_err(as_config)?;
        if self.eval_episodes == 0 || !(0.0..=1.0).contains(&self.eval_corrupt_fraction) {
            return Err(SamdpError::Config(
                "eval_episodes must be positive and eval_corrupt_fraction in [0, 1]".into(),
            ));
        }
        self.cluster.validate().map_err(as_config)?;
        self.fit.validate().map_err(as_config)?;
        self.eject.validate()?;
        if self.k_values.is_empty() || self.w_values.is_empty() || self.extreme_k.is_empty() {
            return Err(SamdpError::Config("k_values, w_values and extreme_k must be non-empty".into()));
        }
        if self.k_values.iter().any(|&k| k < 2) {
            return Err(SamdpError::Config("every entry of k_values must be at least 2".into()));
        }
        if self.extreme_k.contains(&0) {
            return Err(SamdpError::Config("extreme_k entries must be positive".into()));
        }
        if !(self.embedding.perplexity > 0.0) || self.embedding.iterations == 0 || self.embedding.pca_dims == 0 {
            return Err(SamdpError::Config(
                "perplexity, tsne_iterations and pca_dims must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn trajectories_path(&self) -> PathBuf {
        self.trajectories.clone().unwrap_or_else(|| self.path(TRAJECTORIES))
    }

    pub fn eval_trajectories_path(&self) -> PathBuf {
        self.eval_trajectories.clone().unwrap_or_else(|| self.path(EVAL_TRAJECTORIES))
    }

    pub fn eval_rooms(&self) -> RoomsConfig {
        RoomsConfig {
            seed: self.eval_seed,
            episodes: self.eval_episodes,
            corrupt_fraction: self.eval_corrupt_fraction,
            ..self.rooms.clone()
        }
    }
}

/// Runs one stage and returns the files it wrote.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    log::info!("stage {stage}");
    match stage {
        Stage::Synth => synth(cfg),
        Stage::Embed => embed(cfg),
        Stage::Cluster => cluster_stage(cfg),
        Stage::Fit => fit(cfg),
        Stage::Select => select(cfg),
        Stage::Eval => eval(cfg),
        Stage::Eject => eject(cfg),
        Stage::Viz => draw(cfg),
    }
}

/// The usual end-to-end order: everything except the single-configuration
/// `cluster` and `fit` stages, whose outputs `select` replaces.
pub const DEFAULT_SEQUENCE: [Stage; 6] = [
    Stage::Synth,
    Stage::Embed,
    Stage::Select,
    Stage::Eval,
    Stage::Eject,
    Stage::Viz,
];

pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for stage in DEFAULT_SEQUENCE {
        out.extend(run_stage(stage, cfg)?);
    }
    Ok(out)
}

fn synth(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (rc, traj, side) in [
        (cfg.rooms.clone(), cfg.path(TRAJECTORIES), cfg.path(ROOMS_SIDECAR)),
        (cfg.eval_rooms(), cfg.path(EVAL_TRAJECTORIES), cfg.path(EVAL_ROOMS_SIDECAR)),
    ] {
        let data = rooms::generate(&rc)?;
        data.dataset.save(&traj)?;
        rooms::save_sidecar(&side, &data.room_labels, &data.oracle_values)?;
        written.push(traj);
        written.push(side);
    }
    Ok(written)
}

fn embed(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&cfg.trajectories_path())?;
    let run = embed_dataset(&ds, &cfg.embedding)?;
    let failed = run.tsne.failed_calibrations();
    if !failed.is_empty() {
        log::warn!("perplexity calibration did not converge for {} points", failed.len());
    }
    let (e, p) = (cfg.path(EMBEDDING), cfg.path(PCA));
    run.embedded.save(&e)?;
    run.pca.save(&p)?;
    Ok(vec![e, p])
}

fn load_embedding(cfg: &PipelineConfig, ds: &TrajectoryDataset) -> Result<EmbeddedDataset> {
    let e = EmbeddedDataset::load(&cfg.path(EMBEDDING))?;
    if e.len() != ds.total_steps() {
        return Err(SamdpError::invalid(format!(
            "embedding has {} points but the trajectories have {} steps",
            e.len(),
            ds.total_steps()
        )));
    }
    Ok(e)
}

fn cluster_stage(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&cfg.trajectories_path())?;
    let e = load_embedding(cfg, &ds)?;
    let model = cluster(&e, &cfg.cluster, ds.episode_offsets())?;
    let out = cfg.path(CLUSTERS);
    model.save(&out)?;
    Ok(vec![out])
}

fn load_clusters(cfg: &PipelineConfig, ds: &TrajectoryDataset, e: Option<&EmbeddedDataset>) -> Result<ClusterModel> {
    let c = ClusterModel::load(&cfg.path(CLUSTERS), e.map(|e| &e.points))?;
    if c.labels.len() != ds.total_steps() {
        return Err(SamdpError::invalid("cluster labels and trajectories differ in length"));
    }
    Ok(c)
}

fn fit(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&cfg.trajectories_path())?;
    let c = load_clusters(cfg, &ds, None)?;
    let model = fit_samdp(&c.labels, c.k(), &ds, &cfg.fit)?;
    let out = cfg.path(MODEL);
    model.save(&out)?;
    Ok(vec![out])
}

fn select(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&cfg.trajectories_path())?;
    let e = load_embedding(cfg, &ds)?;
    let sel = grid_search_select(&ds, &e, &cfg.k_values, &cfg.w_values, &cfg.cluster, &cfg.fit)?;
    let (clusters, model, chosen) = sel.chosen_fit();
    let mut rep = KeyValueReport::new();
    rep.push("algorithm", cfg.cluster.algorithm);
    rep.push("chosen_k", chosen.k);
    rep.push("chosen_w", chosen.w);
    rep.push("prefix_depth", sel.prefix_depth);
    let tied: Vec<String> = sel
        .tied
        .iter()
        .map(|&t| format!("K{}w{}", sel.entries[t].k, sel.entries[t].w))
        .collect();
    rep.push("tied", if tied.is_empty() { "none".to_string() } else { tied.join(",") });
    for entry in &sel.entries {
        let tag = format!("grid.K{}.w{}", entry.k, entry.w);
        match &entry.outcome {
            Ok((_, _, r)) => {
                for (name, v) in CRITERIA.iter().zip([r.vmse, r.inertia, r.entropy, r.intensity_factor]) {
                    rep.push_real(&format!("{tag}.{name}"), v);
                }
            }
            Err(msg) => rep.push(&format!("{tag}.error"), msg.replace('\n', " ")),
        }
    }
    let (s, c, m) = (cfg.path(SELECTION), cfg.path(CLUSTERS), cfg.path(MODEL));
    rep.save(&s)?;
    clusters.save(&c)?;
    model.save(&m)?;
    Ok(vec![s, c, m])
}

fn eval(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&cfg.trajectories_path())?;
    let e = load_embedding(cfg, &ds)?;
    let c = load_clusters(cfg, &ds, Some(&e))?;
    let model = SamdpModel::load(&cfg.path(MODEL))?;
    if model.k() != c.k() {
        return Err(SamdpError::invalid("model and clusters disagree on K"));
    }
    let fitness = score_model(&e.points, &c, &model, &ds)?;
    let mut rep = KeyValueReport::new();
    rep.push("k", fitness.k);
    rep.push("w", fitness.w);
    rep.push("algorithm", fitness.algorithm);
    rep.push_real("vmse", fitness.vmse);
    rep.push_real("inertia", fitness.inertia);
    rep.push_real("entropy", fitness.entropy);
    rep.push_real("intensity_factor", fitness.intensity_factor);

    let rt = random_model_pvalue(&e.points, &ds, &c.labels, &fitness, &cfg.fit, &cfg.random)?;
    rep.push("random_models", cfg.random.n_random);
    rep.push("random_mode", cfg.random.mode);
    rep.push("random_failed", rt.failed);
    for (name, f) in CRITERIA.iter().zip(rt.better_fraction) {
        rep.push_real(&format!("random_better_fraction.{name}"), f);
    }
    for &k in &cfg.extreme_k {
        let (tp, tm) = extreme_matrices(&model, &c.labels, &ds, k)?;
        let (plus, minus) = greedy_vs_extremes(&model, &tp, &tm);
        rep.push_opt_real(&format!("corr_plus.k{k}"), plus);
        rep.push_opt_real(&format!("corr_minus.k{k}"), minus);
    }
    for (i, r) in greedy_reward_correlation(&model, &c.labels, &ds)?.into_iter().enumerate() {
        rep.push_opt_real(&format!("greedy_reward_corr.{i}"), r);
    }
    // ground truth is only there for generated data
    let sidecar = cfg.path(ROOMS_SIDECAR);
    if cfg.trajectories.is_none() && sidecar.exists() {
        let (rooms_labels, _) = rooms::load_sidecar(&sidecar)?;
        if rooms_labels.len() == c.labels.len() {
            rep.push_real("ari_rooms", rooms::adjusted_rand_index(&c.labels, &rooms_labels));
        }
    }
    let out = cfg.path(REPORT);
    rep.save(&out)?;
    Ok(vec![out])
}

fn eject(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&cfg.trajectories_path())?;
    let c = load_clusters(cfg, &ds, None)?;
    let model = SamdpModel::load(&cfg.path(MODEL))?;
    let pca = PcaModel::load(&cfg.path(PCA))?;
    let test = load_dataset(&cfg.eval_trajectories_path())?;
    let reduced = pca.transform(&ds.features())?;
    let projection = ProjectionModel::fit(&reduced, &c.labels, c.k())?;
    let (tp, tm) = extreme_matrices(&model, &c.labels, &ds, cfg.eject.k_extreme)?;
    let outcome = evaluate_eject(&test, &pca, &projection, &tp, &tm, model.f_flicker, &cfg.eject)?;
    let (p, o) = (cfg.path(PROJECTION), cfg.path(EJECT));
    projection.save(&p)?;
    textio::write_text(&o, &outcome.to_text())?;
    Ok(vec![p, o])
}

fn draw(cfg: &PipelineConfig) -> Result<Vec<PathBuf>> {
    let emb = EmbeddedDataset::load(&cfg.path(EMBEDDING))?;
    let c = ClusterModel::load(&cfg.path(CLUSTERS), None)?;
    let model = SamdpModel::load(&cfg.path(MODEL))?;
    let out = cfg.path(SVG);
    viz::save_svg(&out, &emb, &c, &model)?;
    Ok(vec![out])
}
