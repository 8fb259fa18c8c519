//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.
//!
//! `PLANTSEG_PEPPER_DIR` (optional) points at a directory of labeled pepper
//! PLY files; files whose stem ends in 01, 03 or 07 are held out. Numeric
//! arguments (`cargo test --test acceptance -- 3 5`) run a subset.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use plantseg::cloud::{dist2, load_ply, Label, Point3, PointCloud};
use plantseg::lscnet::{
    forward, gradient_check, jitter, prepare_input, radius_change, segment_plant, superpoint_samples, train,
    update_center, update_radius, LscNet, LscNetClassifier, ModelSpec, Mode, TrainConfig,
};
use plantseg::metrics::{aggregate, evaluate, Aggregation, ConfusionMatrix, SegmentationReport, UnlabeledPolicy};
use plantseg::normalize::{fit_plane_msac, normalize_pose, scale_factor, LandmarkPair, LandmarkSet, MsacParams};
use plantseg::superpoint::{extract_superpoints, StopReason, SuperpointConfig, SuperpointResult};
use plantseg::synth::{corpus, PlantStyle};
use rand::Rng;

const CORPUS_SEED: u64 = 2024;
const CORPUS_SIZE: usize = 30;
const TRAIN_PLANTS: usize = 20;
const E2E_BUDGET: Duration = Duration::from_secs(15 * 60);

type Outcome = Result<String, String>;

struct Corpus {
    plants: Vec<PointCloud>,
    superpoints: Vec<SuperpointResult>,
    config: SuperpointConfig,
}

fn report(id: usize, name: &str, outcome: Outcome, failures: &mut usize) {
    match outcome {
        Ok(detail) => println!("PASS  {id}. {name}: {detail}"),
        Err(detail) => {
            *failures += 1;
            println!("FAIL  {id}. {name}: {detail}");
        }
    }
}

fn iou_from(p: f64, r: f64) -> f64 {
    1.0 / (1.0 / p + 1.0 / r - 1.0)
}

fn criterion_1() -> Outcome {
    // (species, stem P R IoU, leaf P R IoU, MIoU), percentages as printed
    let rows: [(&str, [f64; 3], [f64; 3], f64); 3] = [
        ("pepper", [97.6, 94.5, 92.4], [98.3, 99.3, 97.6], 95.0),
        ("rose", [96.4, 85.6, 83.0], [97.2, 99.4, 96.6], 89.8),
        ("ribes", [96.7, 94.0, 91.1], [98.5, 99.2, 97.8], 94.5),
    ];
    let mut notes = Vec::new();
    for (species, stem, leaf, miou) in rows {
        let mean = (stem[2] + leaf[2]) / 2.0;
        if (mean - miou).abs() > 0.05 + 1e-9 {
            return Err(format!("{species}: mean IoU {mean:.2} vs MIoU {miou}"));
        }
        for (class, v) in [("stem", stem), ("leaf", leaf)] {
            let derived = 100.0 * iou_from(v[0] / 100.0, v[1] / 100.0);
            // P and R are printed to 0.1, which moves IoU by at most ~0.1
            if (derived - v[2]).abs() > 0.15 {
                return Err(format!("{species} {class}: IoU from P/R {derived:.2} vs {}", v[2]));
            }
        }
        notes.push(format!("{species} {miou}"));
    }
    let dataset = match std::env::var_os("PLANTSEG_PEPPER_DIR") {
        None => "dataset run skipped (PLANTSEG_PEPPER_DIR unset)".to_string(),
        Some(dir) => {
            let miou = pepper_run(Path::new(&dir))?;
            if miou < 0.90 {
                return Err(format!("pepper MIoU {miou:.4} is more than 5 points below 0.950"));
            }
            format!("pepper MIoU {miou:.4}")
        }
    };
    Ok(format!("internally consistent ({}); {dataset}", notes.join(", ")))
}

fn pepper_run(dir: &Path) -> Result<f64, String> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ply"))
        .collect();
    files.sort();
    let held_out = |p: &Path| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        ["01", "03", "07"].iter().any(|id| stem.ends_with(id))
    };
    let cfg = SuperpointConfig::default();
    let mut samples = Vec::new();
    let mut test = Vec::new();
    for f in &files {
        let cloud = load_ply(f).map_err(|e| e.to_string())?;
        if held_out(f) {
            test.push(cloud);
        } else {
            let sp = extract_superpoints(&cloud, &cfg).map_err(|e| e.to_string())?;
            samples.extend(superpoint_samples(&cloud, &sp.partition, TrainConfig::default().min_purity));
        }
    }
    if test.is_empty() || samples.is_empty() {
        return Err("dataset directory lacks training or held-out plants".into());
    }
    let (net, _) = train(&samples, &ModelSpec::standard(), &TrainConfig::default()).map_err(|e| e.to_string())?;
    let clf = LscNetClassifier { net, seed: 0 };
    let mut reports = Vec::new();
    for cloud in &test {
        let seg = segment_plant(cloud, &clf, &cfg).map_err(|e| e.to_string())?;
        reports.push(evaluate(seg.cloud.semantic(), cloud.semantic(), UnlabeledPolicy::Exclude).map_err(|e| e.to_string())?);
    }
    let agg = aggregate(&reports, Aggregation::Micro).map_err(|e| e.to_string())?;
    agg.miou.ok_or_else(|| "MIoU undefined".to_string())
}

fn build_corpus() -> Result<Corpus, String> {
    let plants = corpus(CORPUS_SEED, CORPUS_SIZE, &PlantStyle::default());
    let config = SuperpointConfig::default();
    let superpoints = plants
        .iter()
        .map(|p| extract_superpoints(p, &config))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Corpus {
        plants,
        superpoints,
        config,
    })
}

fn criterion_2(c: &Corpus, setup: Duration) -> Outcome {
    let start = Instant::now();
    let mut samples = Vec::new();
    for (p, sp) in c.plants.iter().zip(&c.superpoints).take(TRAIN_PLANTS) {
        samples.extend(superpoint_samples(p, &sp.partition, 0.7));
    }
    let tc = TrainConfig {
        epochs: 40,
        batch_size: 16,
        learning_rate: 0.01,
        halve_every: 13,
        seed: 1,
        ..TrainConfig::default()
    };
    let (net, _) = train(&samples, &ModelSpec::desk(), &tc).map_err(|e| e.to_string())?;
    let clf = LscNetClassifier { net, seed: 5 };
    let mut reports = Vec::new();
    for p in &c.plants[TRAIN_PLANTS..] {
        let seg = segment_plant(p, &clf, &c.config).map_err(|e| e.to_string())?;
        reports.push(evaluate(seg.cloud.semantic(), p.semantic(), UnlabeledPolicy::Reject).map_err(|e| e.to_string())?);
    }
    let agg = aggregate(&reports, Aggregation::Micro).map_err(|e| e.to_string())?;
    let miou = agg.miou.unwrap_or(f64::NAN);
    let elapsed = setup + start.elapsed();
    let detail = format!(
        "MIoU {miou:.4} (Acc {:.4}) on {} held-out plants, {} training superpoints, {:.0} s",
        agg.acc.unwrap_or(f64::NAN),
        CORPUS_SIZE - TRAIN_PLANTS,
        samples.len(),
        elapsed.as_secs_f64()
    );
    if miou >= 0.90 && elapsed <= E2E_BUDGET {
        Ok(detail)
    } else {
        Err(detail)
    }
}

type Batch = (Vec<Vec<Point3>>, Vec<Label>, Mode);

/// Worst (error, tensor) over eval and train checks at `eps`, plus the tensor count.
fn worst_gradient(net: &LscNet, runs: &[Batch], eps: f64) -> Result<(f64, String, usize), String> {
    let mut worst = (0.0f64, String::new(), 0);
    for (inputs, targets, mode) in runs {
        for check in gradient_check(net, inputs, targets, *mode, eps, 9).map_err(|e| e.to_string())? {
            worst.2 += 1;
            if check.relative_error > worst.0 || worst.1.is_empty() {
                (worst.0, worst.1) = (check.relative_error, check.name);
            }
        }
    }
    Ok(worst)
}

fn eval_and_train(a: Vec<Point3>, b: Vec<Point3>) -> Vec<Batch> {
    vec![
        (vec![a.clone()], vec![Label::Leaf], Mode::Eval),
        (vec![a, b], vec![Label::Leaf, Label::Stem], Mode::Train { dropout_seed: 4 }),
    ]
}

fn randomize_buffers(net: &mut LscNet, r: &mut rand_chacha::ChaCha8Rng) {
    let names = net.buffers.names().to_vec();
    for (name, t) in names.iter().zip(net.buffers.tensors_mut()) {
        let var = name.ends_with("running_var");
        t.data.iter_mut().for_each(|v| *v = if var { r.random_range(0.5..2.0) } else { r.random_range(-0.3..0.3) });
    }
}

/// Pinned instance: a 16-point spiral and an 11-point prefix of it, jittered
/// toy parameters, randomized running statistics. A second, fully random
/// instance is reported alongside; finite differences straddling a ReLU or
/// max switch show up there as an error that vanishes at a smaller step.
fn criterion_3() -> Outcome {
    let mut r = common::rng(23);
    let mut net = LscNet::new(ModelSpec::toy(), 11).map_err(|e| e.to_string())?;
    jitter(&mut net.params, 12);
    randomize_buffers(&mut net, &mut r);
    let spiral: Vec<Point3> = (0..16)
        .map(|i| {
            let t = i as f64 * 0.7;
            [t.cos() * (1.0 + 0.1 * i as f64), t.sin(), 0.05 * i as f64]
        })
        .collect();
    let a = prepare_input(&spiral, 16, 0).map_err(|e| e.to_string())?;
    let b = prepare_input(&spiral[..11], 16, 1).map_err(|e| e.to_string())?;
    let (worst, name, tensors) = worst_gradient(&net, &eval_and_train(a, b), 1e-4)?;
    let csm = net.params.names().iter().any(|n| n.contains(".csm."));
    let rum = net.params.names().iter().any(|n| n.contains(".rum."));

    let mut other = LscNet::new(ModelSpec::toy(), 21).map_err(|e| e.to_string())?;
    jitter(&mut other.params, 22);
    randomize_buffers(&mut other, &mut r);
    let mut cloud = || -> Vec<Point3> { (0..16).map(|_| [0, 1, 2].map(|_| r.random_range(-1.0..1.0))).collect() };
    let (ra, rb) = (cloud(), cloud());
    let runs = eval_and_train(
        prepare_input(&ra, 16, 0).map_err(|e| e.to_string())?,
        prepare_input(&rb, 16, 1).map_err(|e| e.to_string())?,
    );
    let (random_worst, random_name, _) = worst_gradient(&other, &runs, 1e-4)?;
    let (fine_worst, _, _) = worst_gradient(&other, &runs, 1e-5)?;

    let detail = format!(
        "{tensors} tensor checks (eval + train, CSM {csm}, RUM {rum}), worst {worst:.2e} at {name}; \
         random instance: worst {random_worst:.2e} at {random_name} (eps 1e-4), {fine_worst:.2e} at eps 1e-5"
    );
    if worst <= 1e-3 && csm && rum {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4() -> Outcome {
    let mut names = Vec::new();
    for (name, check) in common::oracle_suite() {
        check().map_err(|e| format!("{name}: {e}"))?;
        names.push(name);
    }
    Ok(format!("{} x {} instances: {}", names.len(), common::INSTANCES, names.join(", ")))
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

fn criterion_5() -> Outcome {
    const TRIALS: u64 = 50;
    let normal_dist = rand_distr::Normal::new(0.0, 0.05).expect("valid sigma");
    let mut worst_angle = 0.0f64;
    let mut worst_scale = 0.0f64;
    let mut worst_dist = 0.0f64;
    let mut worst_height = 0.0f64;
    let mut worst_plane = 0.0f64;
    for trial in 0..TRIALS {
        let mut r = common::rng(500 + trial);
        let n = unit([r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), 1.0]);
        let offset = r.random_range(-5.0..5.0);
        // two in-plane directions
        let t = unit(if n[0].abs() < 0.9 { [0.0, -n[2], n[1]] } else { [-n[2], 0.0, n[0]] });
        let u = [n[1] * t[2] - n[2] * t[1], n[2] * t[0] - n[0] * t[2], n[0] * t[1] - n[1] * t[0]];
        let total = 1000;
        let outliers = total * 3 / 10;
        let mut pts = Vec::with_capacity(total);
        for i in 0..total {
            let (a, b) = (r.random_range(-20.0..20.0), r.random_range(-20.0..20.0));
            let h = if i < outliers {
                r.random_range(1.0..15.0)
            } else {
                r.sample(normal_dist)
            };
            pts.push([0, 1, 2].map(|k| -offset * n[k] + a * t[k] + b * u[k] + h * n[k]));
        }
        let params = MsacParams {
            seed: trial,
            ..MsacParams::default()
        };
        let plane = fit_plane_msac(&pts, &params).map_err(|e| e.to_string())?;
        let dot: f64 = (0..3).map(|k| plane.normal[k] * n[k]).sum();
        worst_angle = worst_angle.max(dot.clamp(-1.0, 1.0).acos().to_degrees());

        // shrink a known landmark layout by s and recover 1/s
        let s = r.random_range(0.05..5.0);
        let truth: Vec<Point3> = (0..5).map(|_| [0, 1, 2].map(|_| r.random_range(-10.0..10.0))).collect();
        let shrunk: Vec<Point3> = truth.iter().map(|p| p.map(|c| c * s)).collect();
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)]
            .into_iter()
            .map(|(a, b)| LandmarkPair {
                r: a,
                s: b,
                distance_cm: dist2(&truth[a], &truth[b]).sqrt(),
            })
            .collect();
        let set = LandmarkSet::new(shrunk, pairs, None).map_err(|e| e.to_string())?;
        let k = scale_factor(&set).map_err(|e| e.to_string())?;
        worst_scale = worst_scale.max((k * s - 1.0).abs());

        let cloud = PointCloud::from_positions(pts.clone()).map_err(|e| e.to_string())?;
        let base = pts[outliers];
        let (posed, _) = normalize_pose(&cloud, &plane, base).map_err(|e| e.to_string())?;
        let q = posed.positions();
        for _ in 0..200 {
            let (i, j) = (r.random_range(0..total), r.random_range(0..total));
            let before = dist2(&pts[i], &pts[j]).sqrt();
            let after = dist2(&q[i], &q[j]).sqrt();
            worst_dist = worst_dist.max((before - after).abs());
        }
        // posed z = n·(p − base): the fitted plane lands on z = −d(base)
        let d_base = plane.signed_distance(&base);
        if d_base.abs() > plane.inlier_threshold {
            return Err(format!("trial {trial}: fitted plane sits at z = {} after posing", -d_base));
        }
        for (p, q) in pts.iter().zip(q) {
            let d = plane.signed_distance(p);
            if d.abs() <= plane.inlier_threshold {
                worst_height = worst_height.max((q[2] - (d - d_base)).abs());
            }
        }
        worst_plane = worst_plane.max(d_base.abs());
    }
    let detail = format!(
        "{TRIALS} trials: normal error <= {worst_angle:.3} deg, scale rel. error {worst_scale:.1e}, distance drift {worst_dist:.1e}, inlier height residual {worst_height:.1e}, plane at |z| <= {worst_plane:.3} (threshold 0.5)"
    );
    if worst_angle <= 1.0 && worst_scale <= 1e-12 && worst_dist <= 1e-9 && worst_height <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6(c: &Corpus) -> Outcome {
    let mut purity_sum = 0.0;
    let mut superpoints = 0usize;
    let mut pieces = 0usize;
    let mut bad_pieces = Vec::new();
    for (plant, (cloud, sp)) in c.plants.iter().zip(&c.superpoints).enumerate() {
        if !sp.partition.is_valid_partition() || sp.partition.ids.len() != cloud.len() {
            return Err(format!("plant {plant}: superpoints are not a partition"));
        }
        for m in &sp.partition.members {
            let stems = m.iter().filter(|&&i| cloud.semantic()[i] == Label::Stem).count();
            purity_sum += stems.max(m.len() - stems) as f64 / m.len() as f64;
            superpoints += 1;
        }
        for piece in sp.pieces.iter().filter(|p| p.reason != StopReason::Linear) {
            pieces += 1;
            let ok = piece.members.len() < 4
                || piece.solidity.is_some_and(|s| s >= c.config.solidity_threshold)
                || piece.depth >= c.config.max_depth;
            if !ok {
                bad_pieces.push(format!("plant {plant} {:?} size {}", piece.reason, piece.members.len()));
            }
        }
        let run = sp.tsne.as_ref().ok_or_else(|| format!("plant {plant}: no t-SNE run"))?;
        if !(run.final_kl() < run.initial_kl()) {
            return Err(format!("plant {plant}: KL {} -> {}", run.initial_kl(), run.final_kl()));
        }
    }
    let purity = purity_sum / superpoints as f64;
    let detail = format!(
        "{} plants, {superpoints} superpoints, mean purity {purity:.4}, {pieces} convexified pieces ({} violating), KL decreased on every run",
        c.plants.len(),
        bad_pieces.len()
    );
    if purity >= 0.90 && bad_pieces.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", bad_pieces.join("; ")))
    }
}

fn criterion_7() -> Outcome {
    let mut r = common::rng(7);
    for _ in 0..10_000 {
        let c = [0, 1, 2].map(|_| r.random_range(-1e3..1e3));
        if update_center(&c, &[0.0; 3]) != c {
            return Err(format!("zero shift moved {c:?}"));
        }
        let radius = r.random_range(1e-6..10.0);
        if update_radius(radius, radius_change(radius, 0.0, 0.9)) != radius {
            return Err(format!("zero change moved radius {radius}"));
        }
        let z = r.random_range(-1e6..1e6) * r.random_range(0.0..1.0f64).powi(6);
        let bound = r.random_range(0.0..1.0);
        let rh = update_radius(radius, radius_change(radius, z, bound));
        if !(rh > 0.0) {
            return Err(format!("r = {radius}, z = {z}, bound = {bound} gave {rh}"));
        }
    }
    // inside the network, with randomized and inflated parameters
    let mut regions = 0usize;
    for trial in 0..40u64 {
        let mut net = LscNet::new(ModelSpec::toy(), 100 + trial).map_err(|e| e.to_string())?;
        let scale = 1.0 + 20.0 * r.random::<f64>();
        for t in net.params.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= scale);
        }
        let pts: Vec<Point3> = (0..16).map(|_| [0, 1, 2].map(|_| r.random_range(-1.0..1.0))).collect();
        let input = prepare_input(&pts, 16, trial).map_err(|e| e.to_string())?;
        let f = forward(&net.spec, &net.params, &net.buffers, &[input], Mode::Eval, None, trial).map_err(|e| e.to_string())?;
        for region in &f.regions {
            for (j, &rh) in region.updated_radii.iter().enumerate() {
                regions += 1;
                if !(rh > 0.0) || rh != update_radius(region.base_radius, region.radius_change[j]) {
                    return Err(format!("trial {trial}: updated radius {rh}"));
                }
                if region.updated_centers[j] != update_center(&region.centers[j], &region.center_shift[j]) {
                    return Err(format!("trial {trial}: center update is not c + shift"));
                }
            }
        }
    }
    Ok(format!("10000 scalar trials exact, {regions} network regions with r > 0"))
}

fn criterion_8() -> Outcome {
    let mut m = ConfusionMatrix::default();
    // 90 stem->stem, 10 leaf predicted as stem, 5 stem predicted as leaf
    let mut pred = vec![Label::Stem; 90];
    let mut truth = vec![Label::Stem; 90];
    pred.extend([Label::Stem; 10]);
    truth.extend([Label::Leaf; 10]);
    pred.extend([Label::Leaf; 5]);
    truth.extend([Label::Stem; 5]);
    m.add(&plantseg::metrics::confusion(&pred, &truth, UnlabeledPolicy::Reject).map_err(|e| e.to_string())?);
    let report = SegmentationReport::from_confusion(m);
    let stem = m.class(Label::Stem);
    if (stem.tp, stem.fp, stem.fn_) != (90, 10, 5) {
        return Err(format!("counts {stem:?}"));
    }
    let expect = [("Precision - Stem", 0.9000), ("Recall - Stem", 0.9474), ("IoU - Stem", 0.8571)];
    for (row, want) in expect {
        let got = report.get(row).ok_or_else(|| format!("row {row} missing"))?;
        if (got - want).abs() > 5e-5 {
            return Err(format!("{row} = {got}"));
        }
    }
    let names: Vec<&str> = report.rows().iter().map(|r| r.0).collect();
    let table = [
        "Precision - Stem",
        "Recall - Stem",
        "IoU - Stem",
        "Precision - Leaf",
        "Recall - Leaf",
        "IoU - Leaf",
        "Acc",
        "MIoU",
    ];
    if names != table {
        return Err(format!("row names {names:?}"));
    }
    let text = report.to_text();
    if !text.contains("Precision - Stem: 0.9000\nRecall - Stem: 0.9474\nIoU - Stem: 0.8571\n") {
        return Err(format!("report text:\n{text}"));
    }
    Ok("0.9000 / 0.9474 / 0.8571, canonical row names".into())
}

/// Criteria to run: numeric arguments select a subset, none means all.
fn selection() -> Vec<usize> {
    let picked: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).filter(|n| (1..=8).contains(n)).collect();
    if picked.is_empty() {
        (1..=8).collect()
    } else {
        picked
    }
}

fn main() {
    let selected = selection();
    let mut failures = 0;
    let needs_corpus = selected.contains(&2) || selected.contains(&6);
    let setup = Instant::now();
    let corpus = if needs_corpus { Some(build_corpus()) } else { None };
    let setup = setup.elapsed();
    let with_corpus = |f: &dyn Fn(&Corpus) -> Outcome| match corpus.as_ref().expect("built when selected") {
        Ok(c) => f(c),
        Err(e) => Err(e.clone()),
    };
    for &id in &selected {
        let (name, outcome) = match id {
            1 => ("published figures", criterion_1()),
            2 => ("synthetic end-to-end", with_corpus(&|c| criterion_2(c, setup))),
            3 => ("gradient suite", criterion_3()),
            4 => ("oracle equivalence", criterion_4()),
            5 => ("normalization", criterion_5()),
            6 => ("superpoints", with_corpus(&criterion_6)),
            7 => ("center/radius identities", criterion_7()),
            _ => ("metrics hand-check", criterion_8()),
        };
        report(id, name, outcome, &mut failures);
    }
    println!("acceptance: {} of {} criteria passed", selected.len() - failures, selected.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
