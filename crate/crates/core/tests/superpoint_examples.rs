mod common;

use plantseg::cloud::{dist2, Label, Point3, PointCloud};
use plantseg::superpoint::shape::median_nn_distance;
use plantseg::superpoint::spectral::spectral_bisect;
use plantseg::superpoint::{
    convexify, extract_superpoints, linearity, solidity, tsne_embed, ConvexifyParams, StopReason, SuperpointConfig,
    TsneConfig,
};
use plantseg::synth::{generate_plant, PlantStyle};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn params() -> ConvexifyParams {
    ConvexifyParams::from(&SuperpointConfig::default())
}

fn disk(r: &mut impl Rng, n: usize, radius: f64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let (t, a) = (r.random::<f64>().sqrt() * radius, r.random_range(0.0..std::f64::consts::TAU));
            [t * a.cos(), t * a.sin()]
        })
        .collect()
}

/// Jittered hexagonal lattice with spacing `h`, clipped by `keep`. Embedded
/// clusters look like this: t-SNE repulsion spaces points nearly evenly.
fn lattice(r: &mut impl Rng, h: f64, extent: f64, keep: impl Fn(f64, f64) -> bool) -> Vec<[f64; 2]> {
    let rows = (extent / (h * 0.866)).ceil() as i64;
    let cols = (extent / h).ceil() as i64;
    let mut out = Vec::new();
    for i in -rows..=rows {
        for j in -cols..=cols {
            let x = j as f64 * h + if i % 2 == 0 { 0.0 } else { h / 2.0 };
            let y = i as f64 * h * 0.866;
            if keep(x, y) {
                out.push([x + r.random_range(-0.05..0.05) * h, y + r.random_range(-0.05..0.05) * h]);
            }
        }
    }
    out
}

#[test]
fn convex_disk_is_not_split() {
    let pts = lattice(&mut common::rng(1), 0.25, 3.0, |x, y| x * x + y * y <= 9.0);
    let members: Vec<usize> = (0..pts.len()).collect();
    let pieces = convexify(&pts, &members, &params());
    assert_eq!(pieces.len(), 1);
    assert_eq!(pieces[0].reason, StopReason::Solid);
    assert!(pieces[0].solidity.unwrap() > 0.9);
}

#[test]
fn v_shape_splits_into_its_arms() {
    let mut r = common::rng(2);
    // two strips of half-width 0.5 along (±1, 1.6), meeting below y = 1
    let (dx, dy) = (1.0 / 1.887, 1.6 / 1.887);
    let arm_of = |x: f64, y: f64| -> Option<usize> {
        for (side, sx) in [(0, 1.0), (1, -1.0)] {
            let (along, across) = (sx * x * dx + y * dy, -sx * x * dy + y * dx);
            if (1.5..8.0).contains(&along) && across.abs() <= 0.5 {
                return Some(side);
            }
        }
        None
    };
    let pts = lattice(&mut r, 0.2, 8.0, |x, y| arm_of(x, y).is_some());
    let arm: Vec<usize> = pts.iter().map(|p| arm_of(p[0], p[1]).unwrap_or_else(|| if p[0] > 0.0 { 0 } else { 1 })).collect();
    let members: Vec<usize> = (0..pts.len()).collect();
    let full = solidity(&pts, params().alpha_factor).unwrap();
    assert!(full < params().solidity_threshold, "V solidity {full}");
    let pieces = convexify(&pts, &members, &params());
    assert_eq!(pieces.len(), 2, "{:?}", pieces.iter().map(|p| (p.members.len(), p.reason)).collect::<Vec<_>>());
    for piece in &pieces {
        assert!(piece.solidity.unwrap() >= params().solidity_threshold);
        let side = arm[piece.members[0]];
        assert!(piece.members.iter().all(|&i| arm[i] == side));
    }
}

#[test]
fn spectral_split_of_a_dumbbell() {
    let mut r = common::rng(3);
    let mut pts = disk(&mut r, 150, 1.0);
    pts.extend(disk(&mut r, 150, 1.0).iter().map(|p| [p[0] + 6.0, p[1]]));
    let side = spectral_bisect(&pts, 10, 4).unwrap();
    assert!(side[..150].iter().all(|&s| s == side[0]));
    assert!(side[150..].iter().all(|&s| s != side[0]));
}

#[test]
fn gaussian_disk_is_not_linear() {
    let mut r = common::rng(4);
    let n = Normal::new(0.0, 1.0).unwrap();
    let pts: Vec<[f64; 2]> = (0..2000).map(|_| [n.sample(&mut r), n.sample(&mut r)]).collect();
    let l = linearity(&pts).unwrap();
    assert!((l - 0.5).abs() < 0.05, "ratio {l}");
}

fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mut same, mut ns, mut other, mut no) = (0.0, 0, 0.0, 0);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = dist2(&points[i], &points[j]).sqrt();
            if labels[i] == labels[j] {
                same += d;
                ns += 1;
            } else {
                other += d;
                no += 1;
            }
        }
        let (a, b) = (same / ns as f64, other / no as f64);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

#[test]
fn separated_clusters_stay_separated_in_the_embedding() {
    let mut r = common::rng(5);
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let mut labels = Vec::new();
    for (c, offset) in [(0, 0.0), (1, 100.0)] {
        for _ in 0..100 {
            pts.push([offset + r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)]);
            labels.push(c);
        }
    }
    let run = tsne_embed(&pts, &TsneConfig::default()).unwrap();
    let s = silhouette(&run.embedding.coords, &labels);
    assert!(s > 0.8, "silhouette {s}");
    assert!(run.final_kl() < run.initial_kl());
}

#[test]
fn kl_decreases_on_random_points() {
    let mut r = common::rng(6);
    let pts: Vec<[f64; 3]> = (0..500).map(|_| [0, 1, 2].map(|_| r.random_range(-1.0..1.0))).collect();
    let run = tsne_embed(&pts, &TsneConfig { seed: 3, ..TsneConfig::default() }).unwrap();
    assert!(run.final_kl() < run.initial_kl(), "{} -> {}", run.initial_kl(), run.final_kl());
}

/// A uniform sheet embeds with neighbour spacing above the default link
/// threshold of 1.0, so under defaults it breaks into many superpoints
/// rather than one. Only the partition itself is checked here.
#[test]
fn flat_disk_superpoints() {
    let mut r = common::rng(7);
    let pts: Vec<Point3> = disk(&mut r, 1500, 2.5).iter().map(|p| [p[0], p[1], 0.0]).collect();
    let cloud = PointCloud::from_positions(pts).unwrap();
    let sp = extract_superpoints(&cloud, &SuperpointConfig::default()).unwrap();
    assert!(sp.partition.is_valid_partition());
    let spacing = median_nn_distance(&sp.tsne.as_ref().unwrap().embedding.coords).unwrap();
    assert!(spacing > 1.0, "embedding spacing {spacing}");
}

#[test]
fn synthetic_plant_superpoints() {
    let style = PlantStyle {
        leaves: (6, 6),
        ..PlantStyle::default()
    };
    let plant = generate_plant(11, &style);
    let sp = extract_superpoints(&plant, &SuperpointConfig::default()).unwrap();
    assert!(sp.partition.is_valid_partition());
    assert!(sp.partition.len() >= 7, "{} superpoints", sp.partition.len());
    let purity: Vec<f64> = sp
        .partition
        .members
        .iter()
        .map(|m| {
            let stems = m.iter().filter(|&&i| plant.semantic()[i] == Label::Stem).count();
            stems.max(m.len() - stems) as f64 / m.len() as f64
        })
        .collect();
    let mean = purity.iter().sum::<f64>() / purity.len() as f64;
    assert!(mean >= 0.9, "mean purity {mean}");
    let pure = purity.iter().filter(|&&p| p >= 0.9).count();
    println!("{pure} of {} superpoints at least 90% pure", purity.len());
}
