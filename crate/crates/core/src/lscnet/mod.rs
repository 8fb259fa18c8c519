//! Superpoint classifier: set abstraction with adaptive region centers (CSM)
//! and radii (RUM), trained by momentum SGD on labeled superpoints.

pub mod checkpoint;
pub mod classifier;
pub mod model;
pub mod sampling;
pub mod tape;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::cloud::{Label, Point3};
use crate::error::Result;

pub use checkpoint::{load_model, read_model, save_model, write_model};
pub use classifier::{
    classifier_by_name, classifier_names, segment_plant, GeometricClassifier, LscNetClassifier, OracleClassifier,
    Segmentation, SuperpointClassifier,
};
pub use model::{forward, GroupingPlan, LayerPlan, ModelSpec, Mode, NormUpdate, Params, RegionState, SaLayerSpec};
pub use sampling::{ball_group, fps, prepare_input, resample, BallIndex, GroupedRegion};
pub use tape::{Tape, Tensor, Var};
pub use train::{superpoint_samples, train, ClassWeighting, TrainConfig, TrainReport, TrainingSample};

/// `ĉ = c + Δc`.
pub fn update_center(c: &Point3, shift: &Point3) -> Point3 {
    [c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]]
}

/// `r̂ = r + Δr`.
pub fn update_radius(r: f64, change: f64) -> f64 {
    r + change
}

/// Bounded radius change `r·ρ·tanh(z)`.
pub fn radius_change(r: f64, z: f64, bound: f64) -> f64 {
    r * bound * z.tanh()
}

/// Softmax-weighted mean of the offsets `p_i − c`.
pub fn attention_shift(relative: &[Point3], scores: &[f64]) -> Point3 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut out = [0.0; 3];
    for (p, wi) in relative.iter().zip(&w) {
        for d in 0..3 {
            out[d] += wi / z * p[d];
        }
    }
    out
}

/// Two class scores of one superpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub leaf: f64,
    pub stem: f64,
}

impl Scores {
    /// Arg-max class; ties go to stem.
    pub fn label(&self) -> Label {
        if self.leaf > self.stem {
            Label::Leaf
        } else {
            Label::Stem
        }
    }
}

/// A trained (or freshly initialized) network.
#[derive(Debug, Clone, PartialEq)]
pub struct LscNet {
    pub spec: ModelSpec,
    pub params: Params,
    /// Running normalization statistics used at inference.
    pub buffers: Params,
}

impl LscNet {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = Params::init(&spec, seed);
        let buffers = Params::init_buffers(&spec);
        Ok(LscNet { spec, params, buffers })
    }

    pub fn from_parts(spec: ModelSpec, params: Params, buffers: Params) -> Result<Self> {
        spec.validate()?;
        params.check(&spec)?;
        buffers.check_buffers(&spec)?;
        Ok(LscNet { spec, params, buffers })
    }

    /// Folds batch statistics into the running averages with weight `momentum`.
    pub fn update_running_stats(&mut self, updates: &[NormUpdate], momentum: f64) {
        for u in updates {
            for (suffix, values) in [("running_mean", &u.mean), ("running_var", &u.var)] {
                let t = self
                    .buffers
                    .get_mut(&format!("{}.{suffix}", u.prefix))
                    .expect("buffer layout follows the model spec");
                for (r, v) in t.data.iter_mut().zip(values) {
                    *r = (1.0 - momentum) * *r + momentum * v;
                }
            }
        }
    }

    /// Scores of an arbitrary superpoint: canonical ordering, seeded resample
    /// to the input size, unit-sphere normalization, forward pass.
    pub fn classify(&self, points: &[Point3], seed: u64) -> Result<Scores> {
        let input = prepare_input(points, self.spec.input_points, seed)?;
        self.classify_prepared(&input, seed)
    }

    pub fn classify_prepared(&self, input: &[Point3], seed: u64) -> Result<Scores> {
        let f = forward(&self.spec, &self.params, &self.buffers, &[input.to_vec()], Mode::Eval, None, seed)?;
        let s = f.scores()[0];
        if !s.iter().all(|v| v.is_finite()) {
            return Err(crate::Error::Numerical("network produced non-finite scores".into()));
        }
        Ok(Scores {
            leaf: s[model::LEAF],
            stem: s[model::STEM],
        })
    }
}

/// Derivative check of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub analytic_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`, zero when both vanish.
    pub relative_error: f64,
}

/// Compares reverse-mode gradients of the mean cross-entropy loss of a
/// batch with central differences for every parameter tensor. FPS centers
/// and group members are frozen to the unperturbed pass, and training mode
/// reuses the same dropout masks, so the loss is a smooth function of the
/// parameters.
pub fn gradient_check(
    net: &LscNet,
    inputs: &[Vec<Point3>],
    targets: &[Label],
    mode: Mode,
    eps: f64,
    seed: u64,
) -> Result<Vec<TensorCheck>> {
    let classes: Vec<usize> = targets
        .iter()
        .map(|&t| if t == Label::Leaf { model::LEAF } else { model::STEM })
        .collect();
    let weights = vec![1.0; classes.len()];
    let mut base = forward(&net.spec, &net.params, &net.buffers, inputs, mode, None, seed)?;
    let plan = base.plan.clone();
    let loss = base.tape.softmax_cross_entropy(base.logits, &classes, &weights);
    let grads = base.tape.backward(loss);

    let loss_at = |params: &Params| -> Result<f64> {
        let mut f = forward(&net.spec, params, &net.buffers, inputs, mode, Some(&plan), seed)?;
        let l = f.tape.softmax_cross_entropy(f.logits, &classes, &weights);
        Ok(f.tape.value(l).data[0])
    };

    let mut out = Vec::new();
    let mut params = net.params.clone();
    for (t, name) in net.params.names().iter().enumerate() {
        let analytic = grads[base.params[t].0]
            .as_ref()
            .map_or_else(|| vec![0.0; net.params.tensors()[t].len()], |g| g.data.clone());
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = params.tensors()[t].data[i];
            params.tensors_mut()[t].data[i] = orig + eps;
            let up = loss_at(&params)?;
            params.tensors_mut()[t].data[i] = orig - eps;
            let down = loss_at(&params)?;
            params.tensors_mut()[t].data[i] = orig;
            numeric.push((up - down) / (2.0 * eps));
        }
        let an = analytic.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let denom = an.max(nn);
        out.push(TensorCheck {
            name: name.clone(),
            analytic_norm: an,
            relative_error: if denom > 0.0 { diff / denom } else { 0.0 },
        });
    }
    Ok(out)
}

/// Adds small seeded noise to every parameter, moving zero offsets away from
/// ReLU kinks before a derivative check.
pub fn jitter(params: &mut Params, seed: u64) {
    use rand::Rng as _;
    let mut rng = crate::rng::derived(seed, 0x717);
    for t in params.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
}
