//! Supervised training on labeled superpoints.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{forward, ModelSpec, Mode, LEAF, STEM};
use super::sampling::prepare_input;
use super::tape::Tensor;
use super::LscNet;
use crate::cloud::{Label, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::rng;
use crate::superpoint::SuperpointPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassWeighting {
    None,
    /// Weight each class by `total / (2 · count)`.
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// The learning rate halves after every this many epochs.
    pub halve_every: usize,
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    /// Superpoints below this majority-label purity are left out of training.
    pub min_purity: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-3,
            momentum: 0.9,
            halve_every: 20,
            seed: 0,
            class_weighting: ClassWeighting::InverseFrequency,
            min_purity: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.halve_every == 0 {
            return Err(Error::Config("epochs, batch size and halving period must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be > 0 and momentum in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.min_purity) {
            return Err(Error::Config("minimum purity must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub points: Vec<Point3>,
    pub label: Label,
}

/// One sample per superpoint whose majority label reaches `min_purity`;
/// unlabeled points do not vote, ties go to stem.
pub fn superpoint_samples(cloud: &PointCloud, partition: &SuperpointPartition, min_purity: f64) -> Vec<TrainingSample> {
    let labels = cloud.semantic();
    partition
        .members
        .iter()
        .filter_map(|m| {
            let stem = m.iter().filter(|&&i| labels[i] == Label::Stem).count();
            let leaf = m.iter().filter(|&&i| labels[i] == Label::Leaf).count();
            let voted = stem + leaf;
            if voted == 0 {
                return None;
            }
            let (label, top) = if leaf > stem { (Label::Leaf, leaf) } else { (Label::Stem, stem) };
            (top as f64 / m.len() as f64 >= min_purity).then(|| TrainingSample {
                points: m.iter().map(|&i| cloud.positions()[i]).collect(),
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean weighted cross-entropy per epoch, measured during the epoch.
    pub epoch_loss: Vec<f64>,
    /// Training accuracy per epoch (dropout active).
    pub epoch_accuracy: Vec<f64>,
    pub samples: usize,
    pub class_weights: [f64; 2],
}

/// Weight of the newest batch in the running normalization statistics.
pub const RUNNING_MOMENTUM: f64 = 0.1;

fn class_index(label: Label) -> usize {
    if label == Label::Leaf {
        LEAF
    } else {
        STEM
    }
}

/// Momentum SGD over shuffled minibatches. Each visit of a sample draws a
/// fresh resample and dropout mask, all derived from `config.seed`.
pub fn train(samples: &[TrainingSample], spec: &ModelSpec, config: &TrainConfig) -> Result<(LscNet, TrainReport)> {
    config.validate()?;
    spec.validate()?;
    let mut counts = [0usize; 2];
    for s in samples {
        if !s.label.is_labeled() {
            return Err(Error::InvalidInput("training samples must be labeled stem or leaf".into()));
        }
        if s.points.is_empty() {
            return Err(Error::InvalidInput("training sample without points".into()));
        }
        counts[class_index(s.label)] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::InvalidInput(format!(
            "training needs both classes, got {} stem and {} leaf samples",
            counts[STEM], counts[LEAF]
        )));
    }
    let total = samples.len() as f64;
    let weights = match config.class_weighting {
        ClassWeighting::None => [1.0, 1.0],
        ClassWeighting::InverseFrequency => [total / (2.0 * counts[0] as f64), total / (2.0 * counts[1] as f64)],
    };

    let mut net = LscNet::new(spec.clone(), rng::mix(config.seed, 1))?;
    let mut velocity: Vec<Tensor> = net.params.tensors().iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = rng::derived(config.seed, 0x5b0f);
    let mut report = TrainReport {
        epoch_loss: Vec::new(),
        epoch_accuracy: Vec::new(),
        samples: samples.len(),
        class_weights: weights,
    };

    for epoch in 0..config.epochs {
        let lr = config.learning_rate * 0.5f64.powi((epoch / config.halve_every) as i32);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let visit = rng::mix(config.seed, ((epoch as u64) << 32) | b as u64);
            let inputs = batch
                .iter()
                .map(|&i| prepare_input(&samples[i].points, spec.input_points, rng::mix(visit, i as u64)))
                .collect::<Result<Vec<_>>>()?;
            let classes: Vec<usize> = batch.iter().map(|&i| class_index(samples[i].label)).collect();
            let sample_weights: Vec<f64> = classes.iter().map(|&c| weights[c]).collect();
            let mut f = forward(
                spec,
                &net.params,
                &net.buffers,
                &inputs,
                Mode::Train { dropout_seed: visit },
                None,
                visit,
            )?;
            for (s, &c) in f.scores().iter().zip(&classes) {
                let predicted = if s[LEAF] > s[STEM] { LEAF } else { STEM };
                correct += usize::from(predicted == c);
            }
            let loss = f.tape.softmax_cross_entropy(f.logits, &classes, &sample_weights);
            let value = f.tape.value(loss).data[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss in epoch {}", epoch + 1)));
            }
            loss_sum += value * batch.len() as f64;
            let grads = f.tape.backward(loss);
            for ((p, v), var) in net.params.tensors_mut().iter_mut().zip(&mut velocity).zip(&f.params) {
                let Some(g) = &grads[var.0] else { continue };
                for ((pi, vi), gi) in p.data.iter_mut().zip(&mut v.data).zip(&g.data) {
                    *vi = config.momentum * *vi - lr * gi;
                    *pi += *vi;
                }
            }
            net.update_running_stats(&f.norm_updates, RUNNING_MOMENTUM);
        }
        let mean = loss_sum / total;
        log::debug!("epoch {} loss {mean:.5} acc {:.4}", epoch + 1, correct as f64 / total);
        report.epoch_loss.push(mean);
        report.epoch_accuracy.push(correct as f64 / total);
    }
    Ok((net, report))
}
