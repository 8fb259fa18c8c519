//! Synthetic plants and scenes with exact ground truth.
//!
//! Plants are a noisy cylindrical main stem (optionally with one side
//! branch) carrying leaves: each leaf is a thin petiole tube ending in a
//! curved elliptical blade. Stem, branch and petioles are labeled stem;
//! blades are labeled leaf, with one instance id per blade. Scenes add a
//! ground plane, a pot and ruler landmarks, then hide the metric frame
//! behind a random similarity transform.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::cloud::{save_ply, Label, Point3, PointCloud};
use crate::error::{Error, Result};
use crate::normalize::{LandmarkPair, LandmarkSet};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStyle {
    /// Surface sampling density, points per cm².
    pub density: f64,
    pub noise_sigma: f64,
    pub leaves: (usize, usize),
    pub stem_height: (f64, f64),
    pub stem_radius: (f64, f64),
    pub branch_probability: f64,
    pub blade_length: (f64, f64),
    pub blade_width: (f64, f64),
    pub petiole_length: (f64, f64),
    pub petiole_radius: f64,
}

impl Default for PlantStyle {
    fn default() -> Self {
        PlantStyle {
            density: 14.0,
            noise_sigma: 0.02,
            leaves: (4, 7),
            stem_height: (10.0, 15.0),
            stem_radius: (0.2, 0.26),
            branch_probability: 0.5,
            blade_length: (4.0, 6.0),
            blade_width: (2.0, 3.0),
            petiole_length: (1.4, 2.2),
            petiole_radius: 0.08,
        }
    }
}

struct Sampler {
    rng: Rng,
    noise: Normal<f64>,
    density: f64,
    positions: Vec<Point3>,
    labels: Vec<Label>,
    instance: Vec<u32>,
}

fn orthonormal_frame(axis: Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = axis.normalize();
    let helper = if a.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
    let e1 = a.cross(&helper).normalize();
    let e2 = a.cross(&e1);
    (e1, e2)
}

fn count_for_area(rng: &mut Rng, expected: f64) -> usize {
    let base = expected.floor();
    (base as usize) + usize::from(rng.random::<f64>() < expected - base)
}

impl Sampler {
    fn push(&mut self, p: Vector3<f64>, label: Label, instance: u32) {
        let q = [
            p.x + self.noise.sample(&mut self.rng),
            p.y + self.noise.sample(&mut self.rng),
            p.z + self.noise.sample(&mut self.rng),
        ];
        self.positions.push(q);
        self.labels.push(label);
        self.instance.push(instance);
    }

    /// Tube of radius `radius(t)` around the polyline-free curve `center(t)`, t ∈ [0, 1].
    fn tube(
        &mut self,
        center: impl Fn(f64) -> Vector3<f64>,
        radius: impl Fn(f64) -> f64,
        length: f64,
        label: Label,
        instance: u32,
    ) {
        let mean_r = (radius(0.0) + radius(0.5) + radius(1.0)) / 3.0;
        let n = count_for_area(&mut self.rng, self.density * 2.0 * PI * mean_r * length);
        for _ in 0..n {
            let t: f64 = self.rng.random();
            let theta: f64 = self.rng.random::<f64>() * 2.0 * PI;
            let h = 1e-4;
            let tangent = center((t + h).min(1.0)) - center((t - h).max(0.0));
            let (e1, e2) = orthonormal_frame(tangent);
            let p = center(t) + radius(t) * (theta.cos() * e1 + theta.sin() * e2);
            self.push(p, label, instance);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn blade(
        &mut self,
        base: Vector3<f64>,
        along: Vector3<f64>,
        across: Vector3<f64>,
        half_length: f64,
        half_width: f64,
        curl: f64,
        droop: f64,
        instance: u32,
    ) {
        let normal = along.cross(&across).normalize();
        let n = count_for_area(&mut self.rng, self.density * PI * half_length * half_width);
        for _ in 0..n {
            // uniform in the unit disk
            let r = self.rng.random::<f64>().sqrt();
            let phi = self.rng.random::<f64>() * 2.0 * PI;
            let (u, v) = (r * phi.cos(), r * phi.sin());
            let s = (u + 1.0) * half_length; // distance from blade base
            let w = v * half_width;
            let lift = curl * w * w - droop * (s / (2.0 * half_length)).powi(2);
            let p = base + s * along + w * across + lift * normal;
            self.push(p, Label::Leaf, instance);
        }
    }
}

fn uniform(rng: &mut Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

/// A labeled synthetic plant with its base at the origin, growing along +z.
pub fn generate_plant(seed: u64, style: &PlantStyle) -> PointCloud {
    let mut rng = rng::derived(seed, 0x91a7);
    let sampler_rng = rng::derived(seed, 0x5a3b);
    let mut s = Sampler {
        rng: sampler_rng,
        noise: Normal::new(0.0, style.noise_sigma.max(0.0)).expect("finite sigma"),
        density: style.density,
        positions: Vec::new(),
        labels: Vec::new(),
        instance: Vec::new(),
    };

    let height = uniform(&mut rng, style.stem_height);
    let r0 = uniform(&mut rng, style.stem_radius);
    let (wx, wy) = (rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
    let phase = rng.random_range(0.0..PI);
    let stem = move |t: f64| Vector3::new(wx * (PI * t + phase).sin() - wx * phase.sin(), wy * (1.3 * PI * t).sin(), height * t);
    s.tube(stem, |t| r0 * (1.0 - 0.3 * t), height, Label::Stem, 0);

    // attachment points: (position, outward azimuth, parent radius)
    let mut attachments: Vec<(Vector3<f64>, f64, f64)> = Vec::new();
    let n_leaves = rng.random_range(style.leaves.0..=style.leaves.1.max(style.leaves.0));
    let golden = PI * (3.0 - 5f64.sqrt());
    let az0 = rng.random_range(0.0..2.0 * PI);
    let branch = rng.random::<f64>() < style.branch_probability;
    let stem_leaves = if branch { n_leaves.saturating_sub(2).max(1) } else { n_leaves };
    for k in 0..stem_leaves {
        let t = 0.3 + 0.7 * (k as f64 + 0.5) / stem_leaves as f64;
        attachments.push((stem(t), az0 + golden * k as f64, r0 * (1.0 - 0.3 * t)));
    }
    if branch {
        let t0 = rng.random_range(0.3..0.5);
        let origin = stem(t0);
        let az = az0 + PI + rng.random_range(-0.5..0.5);
        let elev: f64 = rng.random_range(0.7..1.0);
        let dir = Vector3::new(az.cos() * elev.cos(), az.sin() * elev.cos(), elev.sin());
        let len = rng.random_range(4.0..6.0);
        let rb = r0 * 0.7;
        s.tube(move |t| origin + dir * (len * t), move |_| rb, len, Label::Stem, 0);
        let extra = n_leaves - stem_leaves;
        for k in 0..extra {
            let t = 0.6 + 0.4 * (k as f64 + 1.0) / extra as f64;
            attachments.push((origin + dir * (len * t), az + golden * (k as f64 + 1.0), rb));
        }
    }

    for (leaf, (attach, az, parent_r)) in attachments.into_iter().enumerate() {
        let instance = leaf as u32 + 1;
        let elev: f64 = rng.random_range(0.35..0.75);
        let dir = Vector3::new(az.cos() * elev.cos(), az.sin() * elev.cos(), elev.sin());
        let plen = uniform(&mut rng, style.petiole_length);
        let start = attach + dir * parent_r;
        let pr = style.petiole_radius;
        s.tube(move |t| start + dir * (plen * t), move |_| pr, plen, Label::Stem, 0);
        let tip = start + dir * plen;
        let blade_elev: f64 = rng.random_range(-0.1..0.3);
        let along = Vector3::new(az.cos() * blade_elev.cos(), az.sin() * blade_elev.cos(), blade_elev.sin());
        let across = Vector3::new(-az.sin(), az.cos(), 0.0);
        let half_length = uniform(&mut rng, style.blade_length) / 2.0;
        let half_width = uniform(&mut rng, style.blade_width) / 2.0;
        let curl = rng.random_range(0.0..0.25);
        let droop = rng.random_range(0.0..0.6);
        // small gap so the blade starts where the petiole ends
        s.blade(tip + along * 0.05, along, across, half_length, half_width, curl, droop, instance);
    }

    let n = s.positions.len();
    let mut conf_rng = rng::derived(seed, 0xc0f);
    let confidence: Vec<u32> = (0..n)
        .map(|_| if conf_rng.random::<f64>() < 0.08 { conf_rng.random_range(1..6) } else { conf_rng.random_range(6..30) })
        .collect();
    let colors: Vec<[u8; 3]> = s
        .labels
        .iter()
        .map(|l| match l {
            Label::Leaf => [conf_rng.random_range(40..80), conf_rng.random_range(120..180), conf_rng.random_range(30..60)],
            _ => [conf_rng.random_range(90..130), conf_rng.random_range(100..140), conf_rng.random_range(40..70)],
        })
        .collect();
    PointCloud::new(s.positions, Some(colors), Some(confidence), s.labels, Some(s.instance))
        .expect("generator produces consistent attributes")
}

/// Which part of a synthetic scene a point came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenePart {
    Ground,
    Pot,
    Plant,
}

#[derive(Debug, Clone)]
pub struct Scene {
    /// Reconstruction-frame cloud (unknown scale, pose and origin).
    pub raw: PointCloud,
    pub parts: Vec<ScenePart>,
    pub landmarks: LandmarkSet,
    /// Metric cm per reconstruction unit; the scale factor to recover.
    pub true_scale: f64,
    /// Metric-frame plant, base at the origin, for comparison.
    pub plant: PointCloud,
}

#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub plant: PlantStyle,
    pub ground_half_extent: f64,
    pub ground_density: f64,
    pub ground_noise: f64,
    pub pot_radius: f64,
    pub pot_height: f64,
    /// Reconstruction units per cm (the shrink applied to hide the metric scale).
    pub shrink: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            plant: PlantStyle::default(),
            ground_half_extent: 30.0,
            ground_density: 0.6,
            ground_noise: 0.05,
            pot_radius: 6.0,
            pot_height: 10.0,
            shrink: 0.37,
        }
    }
}

/// Ground plane at z = 0, a pot standing on it, the plant rising from the
/// soil level at `pot_height`, and four ruler markers on the ground. The
/// whole scene is then scaled by `shrink`, rotated and translated.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Scene {
    let mut rng = rng::derived(seed, 0x5ce7e);
    let ground_noise = Normal::new(0.0, params.ground_noise).expect("finite sigma");
    let mut positions: Vec<Point3> = Vec::new();
    let mut parts = Vec::new();
    let mut labels = Vec::new();

    let e = params.ground_half_extent;
    let n_ground = (params.ground_density * 4.0 * e * e) as usize;
    for _ in 0..n_ground {
        let (x, y) = (rng.random_range(-e..e), rng.random_range(-e..e));
        if x * x + y * y < params.pot_radius * params.pot_radius {
            continue;
        }
        positions.push([x, y, ground_noise.sample(&mut rng)]);
        parts.push(ScenePart::Ground);
        labels.push(Label::Unlabeled);
    }
    // pot wall, top kept just below soil level
    let wall_top = params.pot_height - 0.3;
    let n_pot = (2.0 * 2.0 * PI * params.pot_radius * wall_top) as usize;
    for _ in 0..n_pot {
        let th = rng.random_range(0.0..2.0 * PI);
        let z = rng.random_range(0.0..wall_top);
        positions.push([params.pot_radius * th.cos(), params.pot_radius * th.sin(), z]);
        parts.push(ScenePart::Pot);
        labels.push(Label::Unlabeled);
    }
    let plant = generate_plant(rng::mix(seed, 1), &params.plant);
    // stray points below the base (soil crumbs) belong to the pot
    for (p, &l) in plant.positions().iter().zip(plant.semantic()) {
        let q = [p[0], p[1], p[2] + params.pot_height];
        positions.push(q);
        parts.push(if p[2] >= 0.0 { ScenePart::Plant } else { ScenePart::Pot });
        labels.push(l);
    }

    let markers: Vec<Point3> = vec![
        [-20.0, -20.0, 0.0],
        [20.0, -20.0, 0.0],
        [-20.0, 20.0, 0.0],
        [15.0, 18.0, 0.0],
    ];
    let pairs: Vec<LandmarkPair> = [(0, 1), (0, 2), (1, 3), (2, 3)]
        .iter()
        .map(|&(r, s)| LandmarkPair {
            r,
            s,
            distance_cm: crate::cloud::dist2(&markers[r], &markers[s]).sqrt(),
        })
        .collect();
    let base_metric = [0.0, 0.0, params.pot_height];

    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let rotation = Rotation3::from_axis_angle(&axis, rng.random_range(0.2..2.8));
    let shift = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let to_raw = |p: &Point3| -> Point3 { (rotation * Vector3::from(*p) * params.shrink + shift).into() };

    let raw_positions: Vec<Point3> = positions.iter().map(to_raw).collect();
    let raw = PointCloud::new(raw_positions, None, None, labels, None).expect("consistent scene");
    let landmarks = LandmarkSet::new(markers.iter().map(to_raw).collect(), pairs, Some(to_raw(&base_metric)))
        .expect("valid synthetic landmarks");
    Scene {
        raw,
        parts,
        landmarks,
        true_scale: 1.0 / params.shrink,
        plant,
    }
}

/// Writes `count` plants as `plant_000.ply`, … into `dir`; returns the paths.
pub fn write_corpus(dir: impl AsRef<Path>, seed: u64, count: usize, style: &PlantStyle) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count)
        .map(|i| {
            let path = dir.join(format!("plant_{i:03}.ply"));
            save_ply(&generate_plant(rng::mix(seed, i as u64), style), &path)?;
            Ok(path)
        })
        .collect()
}

/// Corpus of `count` plants generated in memory.
pub fn corpus(seed: u64, count: usize, style: &PlantStyle) -> Vec<PointCloud> {
    (0..count).map(|i| generate_plant(rng::mix(seed, i as u64), style)).collect()
}
