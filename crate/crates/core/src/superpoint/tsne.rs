//! Exact t-SNE.
//!
//! Affinities are dense and symmetric, so memory grows as N²/2; callers
//! subsample large clouds before embedding. The optimizer follows the usual
//! schedule: early exaggeration, momentum switch, and per-coordinate gains.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Binary-search budget and entropy tolerance for bandwidth calibration.
    pub calibration_iterations: usize,
    pub calibration_tolerance: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            calibration_iterations: 50,
            calibration_tolerance: 1e-5,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.perplexity > 1.0) {
            return Err(Error::Config(format!("perplexity must be > 1, got {}", self.perplexity)));
        }
        if self.iterations == 0 {
            return Err(Error::Config("t-SNE needs at least one iteration".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::Config("t-SNE learning rate must be > 0 and exaggeration >= 1".into()));
        }
        Ok(())
    }
}

/// 2D coordinates aligned index-for-index with the embedded points.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub coords: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct TsneRun {
    pub embedding: Embedding2D,
    /// `(iteration, KL(P‖Q))` samples; iteration 0 is the initial layout,
    /// `iterations` the final one.
    pub kl_trace: Vec<(usize, f64)>,
}

impl TsneRun {
    pub fn initial_kl(&self) -> f64 {
        self.kl_trace.first().map(|x| x.1).unwrap_or(f64::NAN)
    }

    pub fn final_kl(&self) -> f64 {
        self.kl_trace.last().map(|x| x.1).unwrap_or(f64::NAN)
    }
}

/// Packed strictly-upper-triangular storage of a symmetric N×N matrix.
#[derive(Debug, Clone)]
pub struct Triangular {
    n: usize,
    data: Vec<f64>,
}

impl Triangular {
    fn new(n: usize) -> Self {
        Triangular {
            n,
            data: vec![0.0; n * n.saturating_sub(1) / 2],
        }
    }

    #[inline]
    fn row_start(&self, i: usize) -> usize {
        // offset of (i, i+1)
        i * (2 * self.n - i - 1) / 2
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.data[self.row_start(i) + (j - i - 1)],
            std::cmp::Ordering::Greater => self.data[self.row_start(j) + (i - j - 1)],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn squared_distances<const D: usize>(points: &[[f64; D]]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = crate::cloud::dist2(&points[i], &points[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities `p_{j|i}` for a Gaussian whose
/// bandwidth is tuned by bisection so that the row entropy is `ln(perplexity)`.
fn calibrate_row(dist_row: &[f64], i: usize, perplexity: f64, tol: f64, max_iter: usize, out: &mut [f64]) {
    let n = dist_row.len();
    let target = perplexity.ln();
    // shifting by the nearest distance leaves the normalized row unchanged but avoids underflow
    let dmin = dist_row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut beta = 1.0;
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    if dmin.is_finite() {
        let spread = dist_row.iter().copied().fold(0.0, f64::max) - dmin;
        if spread > 0.0 {
            beta = 1.0 / spread.max(1e-300);
        }
    }
    for _ in 0..max_iter.max(1) {
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for j in 0..n {
            if j == i {
                out[j] = 0.0;
                continue;
            }
            let s = dist_row[j] - dmin;
            let p = (-beta * s).exp();
            out[j] = p;
            sum += p;
            wsum += s * p;
        }
        let entropy = sum.ln() + beta * wsum / sum;
        let diff = entropy - target;
        if diff.abs() < tol {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
}

/// Conditional affinities `p_{j|i}` as a dense row-major N×N matrix.
pub fn conditional_affinities<const D: usize>(points: &[[f64; D]], perplexity: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = points.len();
    let dist = squared_distances(points);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        calibrate_row(&dist[i * n..(i + 1) * n], i, perplexity, tol, max_iter, &mut p[i * n..(i + 1) * n]);
    }
    p
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2N`.
pub fn joint_affinities<const D: usize>(points: &[[f64; D]], config: &TsneConfig) -> Triangular {
    let n = points.len();
    let cond = conditional_affinities(points, config.perplexity, config.calibration_tolerance, config.calibration_iterations);
    let mut p = Triangular::new(n);
    let denom = 2.0 * n as f64;
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            p.data[k] = ((cond[i * n + j] + cond[j * n + i]) / denom).max(f64::MIN_POSITIVE);
            k += 1;
        }
    }
    p
}

/// Student-t kernel weights `1 / (1 + ‖yᵢ − yⱼ‖²)` and their total over ordered pairs.
fn kernel(y: &[[f64; 2]], w: &mut Triangular) -> f64 {
    let n = y.len();
    let mut k = 0;
    let mut z = 0.0;
    for i in 0..n {
        let yi = y[i];
        for yj in &y[(i + 1)..n] {
            let dx = yi[0] - yj[0];
            let dy = yi[1] - yj[1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            w.data[k] = v;
            z += v;
            k += 1;
        }
    }
    2.0 * z
}

fn kl_from_kernel(p: &Triangular, w: &Triangular, z: f64) -> f64 {
    let ln_z = z.ln();
    let mut s = 0.0;
    for (&pij, &wij) in p.data.iter().zip(&w.data) {
        s += pij * (pij.ln() - wij.ln() + ln_z);
    }
    2.0 * s
}

/// KL(P‖Q) for a given layout.
pub fn kl_divergence(p: &Triangular, y: &[[f64; 2]]) -> f64 {
    let mut w = Triangular::new(y.len());
    let z = kernel(y, &mut w);
    kl_from_kernel(p, &w, z)
}

/// Gradient of KL(exaggeration·P ‖ Q), written into `grad`.
fn gradient(p: &Triangular, w: &Triangular, z: f64, y: &[[f64; 2]], exaggeration: f64, grad: &mut [[f64; 2]]) {
    let n = y.len();
    for g in grad.iter_mut() {
        *g = [0.0; 2];
    }
    let inv_z = 1.0 / z;
    let mut k = 0;
    for i in 0..n {
        let yi = y[i];
        let mut gi = [0.0; 2];
        for j in (i + 1)..n {
            let wij = w.data[k];
            let m = (exaggeration * p.data[k] - wij * inv_z) * wij;
            let fx = m * (yi[0] - y[j][0]);
            let fy = m * (yi[1] - y[j][1]);
            gi[0] += fx;
            gi[1] += fy;
            grad[j][0] -= fx;
            grad[j][1] -= fy;
            k += 1;
        }
        grad[i][0] += gi[0];
        grad[i][1] += gi[1];
    }
    for g in grad.iter_mut() {
        g[0] *= 4.0;
        g[1] *= 4.0;
    }
}

fn record_kl(iter: usize, total: usize) -> bool {
    iter == 0 || iter + 50 >= total || iter % 10 == 0
}

/// Embeds `points` into the plane.
pub fn tsne_embed<const D: usize>(points: &[[f64; D]], config: &TsneConfig) -> Result<TsneRun> {
    config.validate()?;
    let n = points.len();
    if (n as f64) < 3.0 * config.perplexity {
        return Err(Error::InvalidInput(format!(
            "perplexity {} needs at least {} points, got {n}",
            config.perplexity,
            (3.0 * config.perplexity).ceil()
        )));
    }
    let p = joint_affinities(points, config);

    let mut rng = rng::derived(config.seed, 0x75_6e_65);
    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0; 2]; n];
    let mut w = Triangular::new(n);
    let mut kl_trace = Vec::new();

    for iter in 0..config.iterations {
        let z = kernel(&y, &mut w);
        if record_kl(iter, config.iterations) {
            kl_trace.push((iter, kl_from_kernel(&p, &w, z)));
        }
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        gradient(&p, &w, z, &y, exaggeration, &mut grad);
        for i in 0..n {
            for d in 0..2 {
                let g = grad[i][d];
                let gain = &mut gains[i][d];
                *gain = if (g > 0.0) != (velocity[i][d] > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(0.01)
                };
                velocity[i][d] = momentum * velocity[i][d] - config.learning_rate * *gain * g;
                y[i][d] += velocity[i][d];
            }
        }
        let mean = y.iter().fold([0.0; 2], |a, v| [a[0] + v[0], a[1] + v[1]]);
        let mean = [mean[0] / n as f64, mean[1] / n as f64];
        for v in y.iter_mut() {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Numerical(format!("t-SNE diverged at iteration {iter}")));
        }
    }
    let z = kernel(&y, &mut w);
    kl_trace.push((config.iterations, kl_from_kernel(&p, &w, z)));
    Ok(TsneRun {
        embedding: Embedding2D { coords: y },
        kl_trace,
    })
}
