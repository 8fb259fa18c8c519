//! Network layout, parameters and the forward pass.
//!
//! Each set-abstraction layer picks centers by FPS, optionally moves them
//! (CSM: attention-weighted mean offset of the grouped points) and rescales
//! their radii (RUM: bounded tanh update), regroups around the updated
//! regions and pools a shared point-wise MLP by channel max. A global layer
//! pools everything, and a small fully connected head produces two scores.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sampling::{fps, BallIndex};
use super::tape::{Tape, Tensor, Var};
use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::rng;

/// Class order of the two network outputs.
pub const STEM: usize = 0;
pub const LEAF: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaLayerSpec {
    /// Number of region centers `N_L`.
    pub centers: usize,
    /// Base radius `r^L` in unit-sphere coordinates.
    pub radius: f64,
    pub group_size: usize,
    pub mlp: Vec<usize>,
    pub csm: bool,
    pub rum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_points: usize,
    pub layers: Vec<SaLayerSpec>,
    pub global_mlp: Vec<usize>,
    /// Hidden widths of the head; the output layer (2 scores) is implicit.
    pub head: Vec<usize>,
    pub dropout: f64,
    /// Width of the CSM/RUM point embeddings.
    pub attention_width: usize,
    /// RUM bound ρ: `r̂ ∈ (r(1−ρ), r(1+ρ))`.
    pub radius_bound: f64,
}

impl ModelSpec {
    /// Full-size layout: 1024 input points, 512 and 128 regions.
    pub fn standard() -> Self {
        ModelSpec {
            input_points: 1024,
            layers: vec![
                SaLayerSpec {
                    centers: 512,
                    radius: 0.2,
                    group_size: 32,
                    mlp: vec![64, 64, 128],
                    csm: true,
                    rum: true,
                },
                SaLayerSpec {
                    centers: 128,
                    radius: 0.4,
                    group_size: 64,
                    mlp: vec![128, 128, 256],
                    csm: true,
                    rum: true,
                },
            ],
            global_mlp: vec![256, 512, 1024],
            head: vec![512, 256],
            dropout: 0.4,
            attention_width: 64,
            radius_bound: 0.9,
        }
    }

    /// Same structure at a size that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        ModelSpec {
            input_points: 128,
            layers: vec![
                SaLayerSpec {
                    centers: 32,
                    radius: 0.2,
                    group_size: 16,
                    mlp: vec![16, 16, 32],
                    csm: true,
                    rum: true,
                },
                SaLayerSpec {
                    centers: 8,
                    radius: 0.4,
                    group_size: 16,
                    mlp: vec![32, 32, 64],
                    csm: true,
                    rum: true,
                },
            ],
            global_mlp: vec![64, 128],
            head: vec![64, 32],
            dropout: 0.4,
            attention_width: 16,
            radius_bound: 0.9,
        }
    }

    /// Tiny layout for derivative checks on a 16-point input.
    pub fn toy() -> Self {
        ModelSpec {
            input_points: 16,
            layers: vec![
                SaLayerSpec {
                    centers: 8,
                    radius: 0.5,
                    group_size: 4,
                    mlp: vec![6, 8],
                    csm: true,
                    rum: true,
                },
                SaLayerSpec {
                    centers: 4,
                    radius: 0.9,
                    group_size: 4,
                    mlp: vec![8],
                    csm: true,
                    rum: true,
                },
            ],
            global_mlp: vec![8],
            head: vec![6],
            dropout: 0.4,
            attention_width: 5,
            radius_bound: 0.9,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(ModelSpec::standard()),
            "desk" => Ok(ModelSpec::desk()),
            "toy" => Ok(ModelSpec::toy()),
            other => Err(Error::Config(format!("unknown model preset {other:?} (standard, desk, toy)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_points == 0 || self.layers.is_empty() {
            return bad("model needs input points and at least one set-abstraction layer".into());
        }
        let mut available = self.input_points;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.centers == 0 || layer.centers > available {
                return bad(format!("layer {} has {} centers for {available} inputs", l + 1, layer.centers));
            }
            if !(layer.radius > 0.0) || layer.group_size == 0 || layer.mlp.is_empty() || layer.mlp.contains(&0) {
                return bad(format!("layer {} needs radius > 0, K ≥ 1 and positive widths", l + 1));
            }
            available = layer.centers;
        }
        if self.global_mlp.is_empty() || self.global_mlp.contains(&0) || self.head.contains(&0) {
            return bad("global and head widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)".into());
        }
        if self.attention_width == 0 || !(self.radius_bound > 0.0 && self.radius_bound < 1.0) {
            return bad("attention width must be positive and the radius bound in (0, 1)".into());
        }
        Ok(())
    }

    /// Every parameter tensor with its shape, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut feat = 0;
        let h = self.attention_width;
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("sa{}", l + 1);
            let d = 3 + feat;
            if layer.csm {
                for (n, s) in [
                    ("we", (d, h)),
                    ("be", (1, h)),
                    ("wa", (h, h)),
                    ("wg", (h, h)),
                    ("wu", (h, h)),
                    ("ba", (1, h)),
                    ("v", (h, 1)),
                ] {
                    out.push((format!("{p}.csm.{n}"), s));
                }
            }
            if layer.rum {
                for (n, s) in [("we", (d, h)), ("be", (1, h)), ("wg", (h, 1)), ("wu", (h, 1)), ("b", (1, 1))] {
                    out.push((format!("{p}.rum.{n}"), s));
                }
            }
            push_mlp(&mut out, &p, d, &layer.mlp);
            feat = *layer.mlp.last().expect("validated");
        }
        push_mlp(&mut out, "global", 3 + feat, &self.global_mlp);
        let mut prev = *self.global_mlp.last().expect("validated");
        for (i, &w) in self.head.iter().chain(std::iter::once(&2)).enumerate() {
            out.push((format!("head.fc{i}.w"), (prev, w)));
            out.push((format!("head.fc{i}.b"), (1, w)));
            prev = w;
        }
        out
    }
}

impl ModelSpec {
    /// Running normalization statistics, one mean and one variance row per
    /// normalized layer.
    pub fn buffer_shapes(&self) -> Vec<(String, (usize, usize))> {
        self.parameter_shapes()
            .into_iter()
            .filter_map(|(name, shape)| {
                let prefix = name.strip_suffix(".gamma")?.to_string();
                Some([(format!("{prefix}.running_mean"), shape), (format!("{prefix}.running_var"), shape)])
            })
            .flatten()
            .collect()
    }
}

fn push_mlp(out: &mut Vec<(String, (usize, usize))>, prefix: &str, input: usize, widths: &[usize]) {
    let mut prev = input;
    for (i, &w) in widths.iter().enumerate() {
        out.push((format!("{prefix}.mlp{i}.w"), (prev, w)));
        out.push((format!("{prefix}.mlp{i}.gamma"), (1, w)));
        out.push((format!("{prefix}.mlp{i}.beta"), (1, w)));
        prev = w;
    }
}

/// Named parameter tensors in the order given by [`ModelSpec::parameter_shapes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl Params {
    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::InvalidInput("parameter names and tensors differ in count".into()));
        }
        let index: BTreeMap<String, usize> = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        if index.len() != names.len() {
            return Err(Error::InvalidInput("duplicate parameter name".into()));
        }
        Ok(Params { names, tensors, index })
    }

    /// He-style initialization; attention score and radius weights start small,
    /// normalization scales at one, all offsets at zero.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = rng::derived(seed, 0x1417);
        let (names, tensors) = spec
            .parameter_shapes()
            .into_iter()
            .map(|(name, (r, c))| {
                let leaf = name.rsplit('.').next().unwrap_or_default();
                let t = match leaf {
                    "gamma" => Tensor::filled(r, c, 1.0),
                    "beta" | "b" | "be" | "ba" => Tensor::zeros(r, c),
                    _ => {
                        let small = name.contains(".rum.w") && leaf != "we" || leaf == "v";
                        let std = if small { 0.1 } else { 1.0 } * (2.0 / r as f64).sqrt();
                        let normal = Normal::new(0.0, std).expect("finite std");
                        Tensor::new(r, c, (0..r * c).map(|_| normal.sample(&mut rng)).collect())
                    }
                };
                (name, t)
            })
            .unzip();
        Params::from_parts(names, tensors).expect("shapes come from the model spec")
    }

    /// Fresh running statistics: zero means, unit variances.
    pub fn init_buffers(spec: &ModelSpec) -> Self {
        let (names, tensors) = spec
            .buffer_shapes()
            .into_iter()
            .map(|(name, (r, c))| {
                let fill = if name.ends_with(".running_var") { 1.0 } else { 0.0 };
                (name, Tensor::filled(r, c, fill))
            })
            .unzip();
        Params::from_parts(names, tensors).expect("shapes come from the model spec")
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Checks names and shapes against the model spec's parameter layout.
    pub fn check(&self, spec: &ModelSpec) -> Result<()> {
        self.check_against(&spec.parameter_shapes())
    }

    pub fn check_buffers(&self, spec: &ModelSpec) -> Result<()> {
        self.check_against(&spec.buffer_shapes())
    }

    fn check_against(&self, shapes: &[(String, (usize, usize))]) -> Result<()> {
        if shapes.len() != self.len() {
            return Err(Error::InvalidInput(format!(
                "model has {} parameter tensors, layout expects {}",
                self.len(),
                shapes.len()
            )));
        }
        for ((name, shape), (have, t)) in shapes.iter().zip(self.names.iter().zip(&self.tensors)) {
            if name != have || *shape != t.shape() {
                return Err(Error::InvalidInput(format!(
                    "parameter {have} {:?} does not match layout entry {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Discrete choices of one forward pass: FPS centers and group members, as
/// row indices into the layer's stacked input.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerPlan {
    pub centers: Vec<usize>,
    /// Groups around the FPS centers used by CSM/RUM (empty when both are off).
    pub attention_groups: Vec<usize>,
    /// Groups around the updated centers and radii that feed the layer MLP.
    pub region_groups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub layers: Vec<LayerPlan>,
}

/// Region centers and radii of one layer before and after the updates,
/// stacked over the samples of a batch (sample-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionState {
    pub centers: Vec<Point3>,
    pub base_radius: f64,
    pub center_shift: Vec<Point3>,
    pub radius_change: Vec<f64>,
    pub updated_centers: Vec<Point3>,
    pub updated_radii: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Running normalization statistics, no dropout.
    Eval,
    /// Batch statistics; dropout masks drawn from the seed.
    Train { dropout_seed: u64 },
}

/// Batch statistics of one normalization layer, for the running averages.
#[derive(Debug, Clone, PartialEq)]
pub struct NormUpdate {
    pub prefix: String,
    pub mean: Vec<f64>,
    /// Unbiased variance over the normalized rows.
    pub var: Vec<f64>,
}

pub struct Forward {
    pub tape: Tape,
    /// One row of two scores per sample.
    pub logits: Var,
    pub params: Vec<Var>,
    pub regions: Vec<RegionState>,
    pub plan: GroupingPlan,
    pub norm_updates: Vec<NormUpdate>,
}

impl Forward {
    pub fn scores(&self) -> Vec<[f64; 2]> {
        self.tape
            .value(self.logits)
            .data
            .chunks_exact(2)
            .map(|l| [l[STEM], l[LEAF]])
            .collect()
    }
}

fn points_of(t: &Tensor) -> Vec<Point3> {
    t.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

struct Ctx<'a> {
    tape: Tape,
    params: &'a Params,
    buffers: &'a Params,
    vars: Vec<Var>,
    train: bool,
    norm_updates: Vec<NormUpdate>,
}

impl Ctx<'_> {
    fn p(&self, name: &str) -> Var {
        self.vars[self.params.position(name).unwrap_or_else(|| panic!("missing parameter {name}"))]
    }

    /// Shared MLP with per-channel normalization and ReLU.
    fn mlp(&mut self, mut h: Var, prefix: &str, widths: usize) -> Var {
        for i in 0..widths {
            let layer = format!("{prefix}.mlp{i}");
            let w = self.p(&format!("{layer}.w"));
            let (g, b) = (self.p(&format!("{layer}.gamma")), self.p(&format!("{layer}.beta")));
            h = self.tape.matmul(h, w);
            h = if self.train {
                let out = self.tape.channel_norm(h, g, b);
                let rows = self.tape.value(h).rows as f64;
                let (mean, var) = self.tape.norm_stats(out).expect("normalization node");
                let correction = if rows > 1.0 { rows / (rows - 1.0) } else { 1.0 };
                self.norm_updates.push(NormUpdate {
                    prefix: layer,
                    mean: mean.to_vec(),
                    var: var.iter().map(|v| v * correction).collect(),
                });
                out
            } else {
                let mean = &self.buffers.get(&format!("{layer}.running_mean")).expect("buffer").data;
                let var = &self.buffers.get(&format!("{layer}.running_var")).expect("buffer").data;
                self.tape.fixed_norm(h, g, b, mean, var)
            };
            h = self.tape.relu(h);
        }
        h
    }

    fn dense_relu(&mut self, x: Var, prefix: &str) -> Var {
        let (w, b) = (self.p(&format!("{prefix}.we")), self.p(&format!("{prefix}.be")));
        let h = self.tape.matmul(x, w);
        let h = self.tape.add_row(h, b);
        self.tape.relu(h)
    }
}

fn group_seed(seed: u64, layer: usize, center: usize, pass: u64) -> u64 {
    rng::mix(seed, ((layer as u64) << 40) ^ ((center as u64) << 2) ^ pass)
}

/// Runs the network on a batch of prepared inputs (see `prepare_input`).
/// Sample `b` draws its group samples from `mix(seed, b)`. With a `plan`,
/// all discrete choices are replayed instead of recomputed.
pub fn forward(
    spec: &ModelSpec,
    params: &Params,
    buffers: &Params,
    inputs: &[Vec<Point3>],
    mode: Mode,
    plan: Option<&GroupingPlan>,
    seed: u64,
) -> Result<Forward> {
    let batch = inputs.len();
    if batch == 0 {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if let Some(bad) = inputs.iter().find(|p| p.len() != spec.input_points) {
        return Err(Error::InvalidInput(format!(
            "model expects {} input points, got {}",
            spec.input_points,
            bad.len()
        )));
    }
    if let Some(p) = plan {
        if p.layers.len() != spec.layers.len() {
            return Err(Error::InvalidInput("grouping plan does not match the layer count".into()));
        }
    }
    let mut ctx = Ctx {
        tape: Tape::new(),
        params,
        buffers,
        vars: Vec::new(),
        train: matches!(mode, Mode::Train { .. }),
        norm_updates: Vec::new(),
    };
    ctx.vars = params.tensors().iter().map(|t| ctx.tape.leaf(t.clone())).collect();
    let sample_seed: Vec<u64> = (0..batch).map(|b| rng::mix(seed, b as u64)).collect();

    let stacked: Vec<Point3> = inputs.iter().flatten().copied().collect();
    let mut pos = ctx.tape.leaf(Tensor::from_rows(&stacked));
    let mut n_in = spec.input_points;
    let mut feat: Option<Var> = None;
    let mut regions = Vec::new();
    let mut new_plan = GroupingPlan::default();

    for (l, layer) in spec.layers.iter().enumerate() {
        let prefix = format!("sa{}", l + 1);
        let (m, k, r) = (layer.centers, layer.group_size, layer.radius);
        let pos_vals = points_of(ctx.tape.value(pos));
        let slices: Vec<&[Point3]> = pos_vals.chunks_exact(n_in).collect();
        let indexes = slices.iter().map(|s| BallIndex::new(s)).collect::<Result<Vec<_>>>()?;
        let replay = plan.map(|p| &p.layers[l]);

        let centers_idx = match replay {
            Some(lp) => lp.centers.clone(),
            None => {
                let mut all = Vec::with_capacity(batch * m);
                for (b, s) in slices.iter().enumerate() {
                    all.extend(fps(s, m, 0)?.into_iter().map(|i| i + b * n_in));
                }
                all
            }
        };
        let c = ctx.tape.gather_rows(pos, &centers_idx);
        let c_vals = points_of(ctx.tape.value(c));
        // groups around `centers[j]` with `radii[j]`, as stacked row indices
        let group_all = |centers: &[Point3], radii: &[f64], pass: u64| -> Vec<usize> {
            let mut out = Vec::with_capacity(centers.len() * k);
            for (row, (cj, &rj)) in centers.iter().zip(radii).enumerate() {
                let (b, j) = (row / m, row % m);
                let local = indexes[b].group(cj, rj, k, group_seed(sample_seed[b], l, j, pass));
                out.extend(local.into_iter().map(|i| i + b * n_in));
            }
            out
        };

        let mut c_hat = c;
        let mut shift: Option<Var> = None;
        let mut r_hat: Option<Var> = None;
        let mut dr: Option<Var> = None;
        let mut attention_groups = Vec::new();
        if layer.csm || layer.rum {
            attention_groups = match replay {
                Some(lp) => lp.attention_groups.clone(),
                None => group_all(&c_vals, &vec![r; c_vals.len()], 0),
            };
            let grouped = ctx.tape.gather_rows(pos, &attention_groups);
            let c_rep = ctx.tape.repeat_rows(c, k);
            let rel = ctx.tape.sub(grouped, c_rep);
            let mut x = ctx.tape.scale(rel, 1.0 / r);
            if let Some(f) = feat {
                let gf = ctx.tape.gather_rows(f, &attention_groups);
                x = ctx.tape.concat_cols(x, gf);
            }
            if layer.csm {
                let csm = format!("{prefix}.csm");
                let e = ctx.dense_relu(x, &csm);
                let g = ctx.tape.group_max(e, k);
                let u = ctx.tape.group_max(g, m);
                let ea = ctx.tape.matmul(e, ctx.p(&format!("{csm}.wa")));
                let gg = ctx.tape.matmul(g, ctx.p(&format!("{csm}.wg")));
                let gg = ctx.tape.repeat_rows(gg, k);
                let uu = ctx.tape.matmul(u, ctx.p(&format!("{csm}.wu")));
                let uu = ctx.tape.repeat_rows(uu, m * k);
                let s = ctx.tape.add(ea, gg);
                let s = ctx.tape.add(s, uu);
                let s = ctx.tape.add_row(s, ctx.p(&format!("{csm}.ba")));
                let s = ctx.tape.tanh(s);
                let score = ctx.tape.matmul(s, ctx.p(&format!("{csm}.v")));
                let a = ctx.tape.group_softmax(score, k);
                let dc = ctx.tape.group_weighted_sum(a, rel, k);
                c_hat = ctx.tape.add(c, dc);
                shift = Some(dc);
            }
            if layer.rum {
                let rum = format!("{prefix}.rum");
                let e = ctx.dense_relu(x, &rum);
                let g = ctx.tape.group_max(e, k);
                let u = ctx.tape.group_max(g, m);
                let zg = ctx.tape.matmul(g, ctx.p(&format!("{rum}.wg")));
                let zu = ctx.tape.matmul(u, ctx.p(&format!("{rum}.wu")));
                let zu = ctx.tape.repeat_rows(zu, m);
                let z = ctx.tape.add(zg, zu);
                let z = ctx.tape.add_row(z, ctx.p(&format!("{rum}.b")));
                let t = ctx.tape.tanh(z);
                let delta = ctx.tape.scale(t, r * spec.radius_bound);
                r_hat = Some(ctx.tape.add_const(delta, r));
                dr = Some(delta);
            }
        }

        let c_hat_vals = points_of(ctx.tape.value(c_hat));
        let radii: Vec<f64> = match r_hat {
            Some(v) => ctx.tape.value(v).data.clone(),
            None => vec![r; c_hat_vals.len()],
        };
        let region_groups = match replay {
            Some(lp) => lp.region_groups.clone(),
            None => group_all(&c_hat_vals, &radii, 1),
        };
        let grouped = ctx.tape.gather_rows(pos, &region_groups);
        let c_rep = ctx.tape.repeat_rows(c_hat, k);
        let rel = ctx.tape.sub(grouped, c_rep);
        let mut x = match r_hat {
            Some(v) => {
                let inv = ctx.tape.recip(v);
                let inv = ctx.tape.repeat_rows(inv, k);
                ctx.tape.scale_rows(rel, inv)
            }
            None => ctx.tape.scale(rel, 1.0 / r),
        };
        if let Some(f) = feat {
            let gf = ctx.tape.gather_rows(f, &region_groups);
            x = ctx.tape.concat_cols(x, gf);
        }
        let h = ctx.mlp(x, &prefix, layer.mlp.len());
        let pooled = ctx.tape.group_max(h, k);

        let rows = c_vals.len();
        regions.push(RegionState {
            centers: c_vals,
            base_radius: r,
            center_shift: shift.map_or(vec![[0.0; 3]; rows], |v| points_of(ctx.tape.value(v))),
            radius_change: dr.map_or(vec![0.0; rows], |v| ctx.tape.value(v).data.clone()),
            updated_centers: c_hat_vals,
            updated_radii: radii,
        });
        new_plan.layers.push(LayerPlan {
            centers: centers_idx,
            attention_groups,
            region_groups,
        });
        pos = c_hat;
        feat = Some(pooled);
        n_in = m;
    }

    let x = match feat {
        Some(f) => ctx.tape.concat_cols(pos, f),
        None => pos,
    };
    let h = ctx.mlp(x, "global", spec.global_mlp.len());
    let mut h = ctx.tape.group_max(h, n_in);

    let mut dropout_rng = match mode {
        Mode::Train { dropout_seed } => Some(rng::derived(dropout_seed, 0xd0)),
        Mode::Eval => None,
    };
    let layers = spec.head.len() + 1;
    for i in 0..layers {
        let w = ctx.p(&format!("head.fc{i}.w"));
        let b = ctx.p(&format!("head.fc{i}.b"));
        h = ctx.tape.matmul(h, w);
        h = ctx.tape.add_row(h, b);
        if i + 1 < layers {
            h = ctx.tape.relu(h);
            if let Some(rng) = dropout_rng.as_mut() {
                use rand::Rng as _;
                let keep = 1.0 - spec.dropout;
                let mask = (0..ctx.tape.value(h).len())
                    .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                h = ctx.tape.mul_const(h, mask);
            }
        }
    }

    Ok(Forward {
        tape: ctx.tape,
        logits: h,
        params: ctx.vars,
        regions,
        plan: new_plan,
        norm_updates: ctx.norm_updates,
    })
}
