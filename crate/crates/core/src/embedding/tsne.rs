//! Exact t-SNE: perplexity-calibrated Gaussian affinities matched to Student-t
//! affinities in two dimensions by gradient descent on the KL divergence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::EmbeddingConfig;
use crate::error::{Result, SamdpError};
use crate::matrix::{sq_dist, Matrix};

const MAX_CALIBRATION_STEPS: usize = 200;
const ENTROPY_TOL: f64 = 1e-6;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;
const INIT_STD: f64 = 1e-4;
/// Iteration spacing of the recorded KL trace.
pub const KL_TRACE_EVERY: usize = 50;

/// Outcome of the per-point precision search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    /// Precision of the Gaussian kernel, `1 / (2 sigma^2)`.
    pub beta: f64,
    /// Achieved perplexity, `exp(H)` with `H` in nats.
    pub perplexity: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct TsneOutput {
    /// N x 2 map coordinates.
    pub coords: Matrix,
    pub calibration: Vec<Calibration>,
    /// `(iteration, KL(P || Q))` every [`KL_TRACE_EVERY`] iterations and at the end.
    pub kl_trace: Vec<(usize, f64)>,
}

impl TsneOutput {
    pub fn failed_calibrations(&self) -> Vec<usize> {
        self.calibration
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.converged)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Conditional affinities of one point given its squared distances to all
/// others (`dist2[self_index]` is ignored).
pub fn calibrate_row(dist2: &[f64], self_index: usize, perplexity: f64) -> (Vec<f64>, Calibration) {
    let target = perplexity.ln();
    let min = dist2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != self_index)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = dist2.iter().map(|d| d - min).collect();
    let mean_shift = shifted
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != self_index)
        .map(|(_, d)| *d)
        .sum::<f64>()
        / (dist2.len() - 1) as f64;

    let mut beta = if mean_shift > 0.0 { 1.0 / mean_shift } else { 1.0 };
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut probs = vec![0.0; dist2.len()];
    let mut entropy = 0.0;
    let mut converged = false;
    for _ in 0..MAX_CALIBRATION_STEPS {
        entropy = row_entropy(&shifted, self_index, beta, &mut probs);
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOL {
            converged = true;
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
    }
    if !converged {
        entropy = row_entropy(&shifted, self_index, beta, &mut probs);
    }
    (
        probs,
        Calibration {
            beta,
            perplexity: entropy.exp(),
            converged,
        },
    )
}

// Fills `probs` with the normalized kernel and returns its entropy in nats.
fn row_entropy(shifted: &[f64], self_index: usize, beta: f64, probs: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (p, d)) in probs.iter_mut().zip(shifted).enumerate() {
        if j == self_index {
            *p = 0.0;
            continue;
        }
        let v = (-beta * d).exp();
        *p = v;
        sum += v;
        weighted += d * v;
    }
    probs.iter_mut().for_each(|p| *p /= sum);
    sum.ln() + beta * weighted / sum
}

/// Packed upper-triangular joint affinities, `p[i][j]` for `i < j`.
struct JointAffinities {
    n: usize,
    upper: Vec<f64>,
}

impl JointAffinities {
    fn build(data: &Matrix, perplexity: f64) -> (Self, Vec<Calibration>) {
        let n = data.rows();
        let rows: Vec<(Vec<f64>, Calibration)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = data.row(i);
                let dist2: Vec<f64> = data.iter_rows().map(|xj| sq_dist(xi, xj)).collect();
                calibrate_row(&dist2, i, perplexity)
            })
            .collect();
        let mut upper = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let p = (rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64);
                upper.push(p.max(P_FLOOR));
            }
        }
        let calib = rows.into_iter().map(|(_, c)| c).collect();
        (JointAffinities { n, upper }, calib)
    }

    fn kl(&self, y: &[f64]) -> f64 {
        let n = self.n;
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                z += 2.0 * student_t(y, i, j);
            }
        }
        let mut kl = 0.0;
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let p = self.upper[k];
                let q = (student_t(y, i, j) / z).max(f64::MIN_POSITIVE);
                kl += 2.0 * p * (p / q).ln();
                k += 1;
            }
        }
        kl
    }

    /// Writes the KL gradient (with `exaggeration` applied to P) into `grad`.
    fn gradient(&self, y: &[f64], exaggeration: f64, attract: &mut [f64], repulse: &mut [f64], grad: &mut [f64]) {
        let n = self.n;
        attract.iter_mut().for_each(|v| *v = 0.0);
        repulse.iter_mut().for_each(|v| *v = 0.0);
        let mut z = 0.0;
        let mut k = 0;
        for i in 0..n {
            let (yi0, yi1) = (y[2 * i], y[2 * i + 1]);
            let (mut ai0, mut ai1, mut ri0, mut ri1) = (0.0, 0.0, 0.0, 0.0);
            for j in i + 1..n {
                let dx = yi0 - y[2 * j];
                let dy = yi1 - y[2 * j + 1];
                let num = 1.0 / (1.0 + dx * dx + dy * dy);
                z += 2.0 * num;
                let a = self.upper[k] * exaggeration * num;
                let r = num * num;
                ai0 += a * dx;
                ai1 += a * dy;
                ri0 += r * dx;
                ri1 += r * dy;
                attract[2 * j] -= a * dx;
                attract[2 * j + 1] -= a * dy;
                repulse[2 * j] -= r * dx;
                repulse[2 * j + 1] -= r * dy;
                k += 1;
            }
            attract[2 * i] += ai0;
            attract[2 * i + 1] += ai1;
            repulse[2 * i] += ri0;
            repulse[2 * i + 1] += ri1;
        }
        for ((g, a), r) in grad.iter_mut().zip(attract.iter()).zip(repulse.iter()) {
            *g = 4.0 * (a - r / z);
        }
    }
}

#[inline]
fn student_t(y: &[f64], i: usize, j: usize) -> f64 {
    let dx = y[2 * i] - y[2 * j];
    let dy = y[2 * i + 1] - y[2 * j + 1];
    1.0 / (1.0 + dx * dx + dy * dy)
}

/// Embeds the rows of `data` into two dimensions.
pub fn tsne_embed(data: &Matrix, cfg: &EmbeddingConfig) -> Result<TsneOutput> {
    let n = data.rows();
    if !(cfg.perplexity > 0.0) || (n as f64) < 3.0 * cfg.perplexity {
        return Err(SamdpError::invalid(format!(
            "perplexity {} requires at least {} points, got {n}",
            cfg.perplexity,
            (3.0 * cfg.perplexity).ceil()
        )));
    }
    if !data.is_finite() {
        return Err(SamdpError::invalid("t-SNE input contains non-finite values"));
    }
    if data.iter_rows().all(|r| r == data.row(0)) {
        return Err(SamdpError::invalid("t-SNE input points are all identical"));
    }

    let (joint, calibration) = JointAffinities::build(data, cfg.perplexity);
    let failed = calibration.iter().filter(|c| !c.converged).count();
    if failed > 0 {
        log::warn!("perplexity calibration did not converge for {failed} of {n} points");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains: Vec<f64> = vec![1.0; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut attract = vec![0.0; 2 * n];
    let mut repulse = vec![0.0; 2 * n];
    let mut kl_trace = Vec::new();

    for iter in 0..cfg.iterations {
        let exaggerating = iter < cfg.early_exaggeration_iters;
        let exaggeration = if exaggerating { cfg.early_exaggeration_factor } else { 1.0 };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        if iter % KL_TRACE_EVERY == 0 {
            kl_trace.push((iter, joint.kl(&y)));
        }
        joint.gradient(&y, exaggeration, &mut attract, &mut repulse, &mut grad);
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        center(&mut y);
    }
    kl_trace.push((cfg.iterations, joint.kl(&y)));

    if y.iter().any(|v| !v.is_finite()) {
        return Err(SamdpError::Numerical("t-SNE produced non-finite coordinates".into()));
    }
    Ok(TsneOutput {
        coords: Matrix::from_vec(n, 2, y)?,
        calibration,
        kl_trace,
    })
}

fn center(y: &mut [f64]) {
    let n = (y.len() / 2) as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in y.chunks_exact(2) {
        mx += p[0];
        my += p[1];
    }
    mx /= n;
    my /= n;
    for p in y.chunks_exact_mut(2) {
        p[0] -= mx;
        p[1] -= my;
    }
}

/// KL divergence between the calibrated input affinities and the Student-t
/// affinities of an arbitrary layout.
pub fn kl_objective(data: &Matrix, coords: &Matrix, perplexity: f64) -> f64 {
    let (joint, _) = JointAffinities::build(data, perplexity);
    joint.kl(coords.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn calibration_hits_target_perplexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..120)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let data = Matrix::from_rows(&pts).unwrap();
        for i in 0..data.rows() {
            let dist2: Vec<f64> = data.iter_rows().map(|r| sq_dist(data.row(i), r)).collect();
            let (p, c) = calibrate_row(&dist2, i, 20.0);
            assert!(c.converged);
            assert!((c.perplexity - 20.0).abs() <= 1e-3 * 20.0);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(p[i], 0.0);
        }
    }

    #[test]
    fn unreachable_perplexity_is_reported() {
        // 8 exact duplicates of the query make perplexity 4 unreachable
        let mut dist2 = vec![0.0; 9];
        dist2.extend(std::iter::repeat_n(5.0, 30));
        let (_, c) = calibrate_row(&dist2, 0, 4.0);
        assert!(!c.converged);
    }

    #[test]
    fn rejects_identical_points_and_small_n() {
        let cfg = EmbeddingConfig {
            perplexity: 2.0,
            iterations: 10,
            ..EmbeddingConfig::default()
        };
        let same = Matrix::from_vec(10, 2, vec![1.0; 20]).unwrap();
        assert!(tsne_embed(&same, &cfg).is_err());
        let few = Matrix::from_vec(5, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(tsne_embed(&few, &cfg).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Matrix::from_rows(&pts).unwrap();
        let (joint, _) = JointAffinities::build(&data, 4.0);
        let y: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut grad = vec![0.0; 30];
        let (mut a, mut r) = (vec![0.0; 30], vec![0.0; 30]);
        joint.gradient(&y, 1.0, &mut a, &mut r, &mut grad);
        let h = 1e-6;
        for k in 0..30 {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[k] += h;
            ym[k] -= h;
            let fd = (joint.kl(&yp) - joint.kl(&ym)) / (2.0 * h);
            assert!((fd - grad[k]).abs() < 1e-6, "coord {k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn same_seed_is_bit_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let data = Matrix::from_rows(&pts).unwrap();
        let cfg = EmbeddingConfig {
            perplexity: 8.0,
            iterations: 120,
            early_exaggeration_iters: 50,
            ..EmbeddingConfig::default()
        };
        let a = tsne_embed(&data, &cfg).unwrap();
        let b = tsne_embed(&data, &cfg).unwrap();
        assert_eq!(a.coords, b.coords);
    }
}
