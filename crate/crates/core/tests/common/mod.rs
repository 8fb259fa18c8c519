//! Brute-force reference implementations and randomized instance
//! generators shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use plantseg::cloud::{connected_components, nn_propagate, voxel_filter, Label, Point3, PointCloud, VoxelGridSpec};
use plantseg::lscnet::{ball_group, fps};
use plantseg::metrics::{evaluate, UnlabeledPolicy};
use plantseg::partition::confidence_filter;
use plantseg::superpoint::{euclidean_cluster_2d, Embedding2D};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 120;
pub const MAX_POINTS: usize = 2000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn d2<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        s += (a[k] - b[k]) * (a[k] - b[k]);
    }
    s
}

/// A random cloud of up to `MAX_POINTS` points. Every third instance lives on
/// a coarse integer lattice so that exact distance ties and duplicates occur.
pub fn cloud_points(r: &mut ChaCha8Rng, instance: usize) -> Vec<Point3> {
    let n = r.random_range(1..=MAX_POINTS);
    if instance % 3 == 0 {
        (0..n)
            .map(|_| [0, 1, 2].map(|_| r.random_range(-6i32..=6) as f64))
            .collect()
    } else {
        let blobs = r.random_range(1..6);
        let centers: Vec<Point3> = (0..blobs).map(|_| [0, 1, 2].map(|_| r.random_range(-10.0..10.0))).collect();
        (0..n)
            .map(|_| {
                let c = centers[r.random_range(0..blobs)];
                [0, 1, 2].map(|k| c[k] + r.random_range(-2.0..2.0))
            })
            .collect()
    }
}

pub fn planar_points(r: &mut ChaCha8Rng, instance: usize) -> Vec<[f64; 2]> {
    cloud_points(r, instance).into_iter().map(|p| [p[0], p[1]]).collect()
}

fn label(r: &mut ChaCha8Rng) -> Label {
    if r.random_bool(0.5) {
        Label::Leaf
    } else {
        Label::Stem
    }
}

/// Greedy max-min by direct scan over the points not yet chosen.
pub fn fps_oracle(points: &[Point3], m: usize, start: usize) -> Vec<usize> {
    let mut chosen = vec![start];
    let mut taken = vec![false; points.len()];
    taken[start] = true;
    let mut best: Vec<f64> = points.iter().map(|p| d2(p, &points[start])).collect();
    while chosen.len() < m {
        let mut pick = usize::MAX;
        for i in 0..points.len() {
            if !taken[i] && (pick == usize::MAX || best[i] > best[pick]) {
                pick = i;
            }
        }
        chosen.push(pick);
        taken[pick] = true;
        for (i, p) in points.iter().enumerate() {
            best[i] = best[i].min(d2(p, &points[pick]));
        }
    }
    chosen
}

/// Ids numbered by first occurrence, grown by breadth-first search over all pairs.
pub fn components_oracle<const D: usize>(points: &[[f64; D]], radius: f64) -> Vec<usize> {
    let n = points.len();
    let mut id = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if id[s] != usize::MAX {
            continue;
        }
        id[s] = next;
        let mut queue = vec![s];
        while let Some(i) = queue.pop() {
            for j in 0..n {
                if id[j] == usize::MAX && d2(&points[i], &points[j]) <= radius * radius {
                    id[j] = next;
                    queue.push(j);
                }
            }
        }
        next += 1;
    }
    id
}

pub fn check_fps() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(1000 + inst as u64);
        let mut pts = cloud_points(&mut r, inst);
        // every fourth instance doubles up a small cloud and asks for every
        // point, so the sampler runs out of distinct positions
        if inst % 4 == 1 {
            pts.truncate(40);
            pts.extend(pts.clone());
        }
        let m = if inst % 4 == 1 { pts.len() } else { r.random_range(1..=pts.len().min(64)) };
        let start = r.random_range(0..pts.len());
        let got = fps(&pts, m, start).map_err(|e| e.to_string())?;
        if got != fps_oracle(&pts, m, start) {
            return Err(format!("instance {inst}: fps differs (n = {}, m = {m})", pts.len()));
        }
    }
    Ok(())
}

pub fn check_ball_group() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(2000 + inst as u64);
        let pts = cloud_points(&mut r, inst);
        let center = [0, 1, 2].map(|_| r.random_range(-8.0..8.0));
        let radius = r.random_range(0.2..4.0);
        let k = r.random_range(1..48);
        let g = ball_group(&pts, &[], &center, radius, k, inst as u64).map_err(|e| e.to_string())?;
        let ball: BTreeSet<usize> = (0..pts.len()).filter(|&i| d2(&pts[i], &center) <= radius * radius).collect();
        let got: BTreeSet<usize> = g.indices.iter().copied().collect();
        let fail = |why: &str| Err(format!("instance {inst}: {why}"));
        if g.indices.len() != k {
            return fail("wrong group size");
        }
        for (i, rel) in g.indices.iter().zip(&g.relative) {
            if (0..3).any(|d| (rel[d] - (pts[*i][d] - center[d])).abs() > 1e-9) {
                return fail("relative coordinates wrong");
            }
        }
        if ball.is_empty() {
            let nearest = (0..pts.len())
                .min_by(|&a, &b| d2(&pts[a], &center).total_cmp(&d2(&pts[b], &center)).then(a.cmp(&b)))
                .expect("non-empty");
            if g.indices.iter().any(|&i| i != nearest) {
                return fail("empty ball must repeat the global nearest point");
            }
        } else if ball.len() >= k {
            if got.len() != k || !got.is_subset(&ball) {
                return fail("sample must be k distinct in-ball points");
            }
        } else {
            let pad = *ball
                .iter()
                .min_by(|&&a, &&b| d2(&pts[a], &center).total_cmp(&d2(&pts[b], &center)).then(a.cmp(&b)))
                .expect("non-empty");
            let mut want: Vec<usize> = ball.iter().copied().collect();
            want.resize(k, pad);
            let mut have = g.indices.clone();
            have.sort_unstable();
            want.sort_unstable();
            if have != want {
                return fail("short ball must hold every in-ball point plus nearest-point padding");
            }
        }
    }
    Ok(())
}

pub fn check_voxel_filter() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(3000 + inst as u64);
        let pts = cloud_points(&mut r, inst);
        let edge = r.random_range(0.3..3.0);
        let cloud = PointCloud::from_positions(pts.clone()).expect("finite");
        let (out, map) = voxel_filter(&cloud, VoxelGridSpec::new(edge).expect("edge")).map_err(|e| e.to_string())?;
        let mut slot: BTreeMap<[i64; 3], usize> = BTreeMap::new();
        let mut sums: Vec<([f64; 3], usize)> = Vec::new();
        let mut want_map = Vec::new();
        for p in &pts {
            let key = [0, 1, 2].map(|k| (p[k] / edge).floor() as i64);
            let s = *slot.entry(key).or_insert_with(|| {
                sums.push(([0.0; 3], 0));
                sums.len() - 1
            });
            for k in 0..3 {
                sums[s].0[k] += p[k];
            }
            sums[s].1 += 1;
            want_map.push(s);
        }
        if out.len() != sums.len() || map != want_map {
            return Err(format!("instance {inst}: voxel count or membership differs"));
        }
        for (q, (s, c)) in out.positions().iter().zip(&sums) {
            if (0..3).any(|k| (q[k] - s[k] / *c as f64).abs() > 1e-9) {
                return Err(format!("instance {inst}: voxel mean differs"));
            }
        }
    }
    Ok(())
}

pub fn check_connected_components() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(4000 + inst as u64);
        let pts = cloud_points(&mut r, inst);
        let radius = if inst % 3 == 0 { 1.0 } else { r.random_range(0.05..0.6) };
        let got = connected_components(&pts, radius).map_err(|e| e.to_string())?;
        if got != components_oracle(&pts, radius) {
            return Err(format!("instance {inst}: components differ"));
        }
    }
    Ok(())
}

pub fn check_nn_propagate() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(5000 + inst as u64);
        let src = cloud_points(&mut r, inst);
        let n_tgt = r.random_range(1..=MAX_POINTS);
        let tgt: Vec<Point3> = (0..n_tgt).map(|_| [0, 1, 2].map(|_| r.random_range(-12.0..12.0))).collect();
        let labels: Vec<Label> = (0..src.len()).map(|_| label(&mut r)).collect();
        let instance: Vec<u32> = (0..src.len() as u32).collect();
        let source = PointCloud::new(src.clone(), None, None, labels.clone(), Some(instance)).expect("valid");
        let target = PointCloud::from_positions(tgt.clone()).expect("valid");
        let out = nn_propagate(&source, &target).map_err(|e| e.to_string())?;
        for (t, q) in tgt.iter().enumerate() {
            let best = (0..src.len())
                .min_by(|&a, &b| d2(&src[a], q).total_cmp(&d2(&src[b], q)).then(a.cmp(&b)))
                .expect("non-empty");
            let chosen = out.instance().expect("carried")[t] as usize;
            let same = chosen == best || (d2(&src[chosen], q) - d2(&src[best], q)).abs() <= 1e-9;
            if !same || out.semantic()[t] != labels[chosen] {
                return Err(format!("instance {inst}: target {t} took the wrong source"));
            }
        }
    }
    Ok(())
}

pub fn check_euclidean_cluster_2d() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(6000 + inst as u64);
        let pts = planar_points(&mut r, inst);
        let threshold = if inst % 3 == 0 { 1.0 } else { r.random_range(0.02..0.5) };
        let got = euclidean_cluster_2d(&Embedding2D { coords: pts.clone() }, threshold).map_err(|e| e.to_string())?;
        if got != components_oracle(&pts, threshold) {
            return Err(format!("instance {inst}: 2D clusters differ"));
        }
    }
    Ok(())
}

pub fn check_confidence_filter() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(7000 + inst as u64);
        let pts = cloud_points(&mut r, inst);
        let conf: Vec<u32> = (0..pts.len()).map(|_| r.random_range(0..12)).collect();
        let min = r.random_range(0..13);
        let cloud = PointCloud::new(pts.clone(), None, Some(conf.clone()), vec![Label::Unlabeled; pts.len()], None)
            .expect("valid");
        let out = confidence_filter(&cloud, min).map_err(|e| e.to_string())?;
        let want: Vec<Point3> = (0..pts.len()).filter(|&i| conf[i] >= min).map(|i| pts[i]).collect();
        let want_conf: Vec<u32> = conf.iter().copied().filter(|&c| c >= min).collect();
        if out.positions() != want.as_slice() || out.confidence().expect("kept") != want_conf.as_slice() {
            return Err(format!("instance {inst}: survivors differ"));
        }
    }
    Ok(())
}

pub fn check_evaluate() -> Result<(), String> {
    for inst in 0..INSTANCES {
        let mut r = rng(8000 + inst as u64);
        let n = r.random_range(1..=MAX_POINTS);
        let bias = r.random_range(0.0..1.0);
        let truth: Vec<Label> = (0..n).map(|_| label(&mut r)).collect();
        let pred: Vec<Label> = truth
            .iter()
            .map(|&t| if r.random_bool(bias) { t } else { label(&mut r) })
            .collect();
        let rep = evaluate(&pred, &truth, UnlabeledPolicy::Reject).map_err(|e| e.to_string())?;
        let count = |p: Label, t: Label| pred.iter().zip(&truth).filter(|(a, b)| **a == p && **b == t).count() as f64;
        for c in [Label::Stem, Label::Leaf] {
            let o = if c == Label::Stem { Label::Leaf } else { Label::Stem };
            let (tp, fp, fn_) = (count(c, c), count(c, o), count(o, c));
            let ratio = |a: f64, b: f64| (b > 0.0).then(|| a / b);
            let want = [ratio(tp, tp + fp), ratio(tp, tp + fn_), ratio(tp, tp + fp + fn_)];
            let s = if c == Label::Stem { rep.stem } else { rep.leaf };
            let have = [s.precision, s.recall, s.iou];
            for (h, w) in have.iter().zip(&want) {
                let ok = match (h, w) {
                    (Some(h), Some(w)) => (h - w).abs() <= 1e-9,
                    (None, None) => true,
                    _ => false,
                };
                if !ok {
                    return Err(format!("instance {inst}: {c:?} measures differ"));
                }
            }
        }
        let correct = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64;
        if (rep.acc.unwrap_or(-1.0) - correct / n as f64).abs() > 1e-9 {
            return Err(format!("instance {inst}: accuracy differs"));
        }
    }
    Ok(())
}

/// Every criterion-4 check with its name.
pub fn oracle_suite() -> Vec<(&'static str, fn() -> Result<(), String>)> {
    vec![
        ("fps", check_fps),
        ("ball_group", check_ball_group),
        ("voxel_filter", check_voxel_filter),
        ("connected_components", check_connected_components),
        ("nn_propagate", check_nn_propagate),
        ("euclidean_cluster_2d", check_euclidean_cluster_2d),
        ("confidence_filter", check_confidence_filter),
        ("evaluate", check_evaluate),
    ]
}
