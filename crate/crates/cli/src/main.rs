use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use plantseg::cloud::ply::PlyFormat;
use plantseg::cloud::{read_ply, write_ply, PointCloud};
use plantseg::config::{parse_override, PipelineConfig};
use plantseg::lscnet::{self, classifier_by_name, segment_plant, superpoint_samples, LscNet};
use plantseg::metrics::{aggregate, evaluate, SegmentationReport};
use plantseg::normalize::{normalize_scene, LandmarkSet};
use plantseg::partition::{partition_blocks, prepare_cloud, save_blocks, BlockPurpose};
use plantseg::superpoint::extract_superpoints;
use plantseg::synth::{generate_scene, write_corpus, PlantStyle, SceneParams};
use plantseg::{rng, Error, Result};

/// Leaf/stem segmentation of plant point clouds
#[derive(Parser)]
#[command(name = "plantseg", version)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key, e.g. --set tsne.perplexity=20
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// More logging (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scale, level and crop a raw reconstruction to the plant
    Normalize {
        input: PathBuf,
        landmarks: PathBuf,
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Oversegment a plant; writes a `superpoint` vertex property
    Superpoints {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Confidence-filter, subsample and tile a plant into blocks
    Partition {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Drop sparse blocks, as for building a training set
        #[arg(long)]
        training: bool,
    },
    /// Train the superpoint classifier on a directory of labeled PLY files
    Train {
        train_dir: PathBuf,
        model: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Segment a plant; the model may be `-` for classifiers that need none
    Predict {
        input: PathBuf,
        model: String,
        output: PathBuf,
        /// Superpoint classifier (lscnet, geometric, oracle)
        #[arg(long)]
        classifier: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against ground truth (files, or directories paired by file name)
    Evaluate {
        prediction: PathBuf,
        truth: PathBuf,
        report: Option<PathBuf>,
        /// Print JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Write a labeled synthetic plant corpus
    Synth {
        out_dir: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        count: usize,
        /// Also write raw scenes with ground, pot and landmark files
        #[arg(long)]
        scenes: bool,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_config(cli: &Cli, seed: Option<u64>) -> Result<PipelineConfig> {
    load_config_with(cli, seed, Vec::new())
}

/// File, then `--set` overrides, then `extra`, then the command's `--seed`.
fn load_config_with(cli: &Cli, seed: Option<u64>, extra: Vec<(String, toml::Value)>) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let mut pairs = cli
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>>>()?;
    pairs.extend(extra);
    if let Some(seed) = seed {
        pairs.push(("seed".into(), toml::Value::String(seed.to_string())));
    }
    cfg.apply(&pairs)?;
    for line in cfg.to_toml().lines() {
        info!("config {line}");
    }
    Ok(cfg)
}

fn config_comments(cfg: &PipelineConfig, command: &str) -> Vec<String> {
    let mut c = vec![format!("plantseg {command}")];
    c.extend(cfg.to_toml().lines().map(|l| format!("config {l}")));
    c
}

fn ply_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("no .ply files in {}", dir.display())));
    }
    Ok(files)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Normalize {
            input,
            landmarks,
            output,
            seed,
        } => {
            let cfg = load_config(cli, *seed)?;
            let raw = read_ply(input)?.cloud;
            let lm = LandmarkSet::load(landmarks)?;
            let (plant, outcome) = normalize_scene(&raw, &lm, &cfg.normalize_params())?;
            info!(
                "scale {:.6}, plane normal {:?}, kept {} of {} points",
                outcome.scale,
                outcome.plane.normal,
                outcome.kept_points,
                raw.len()
            );
            let mut comments = config_comments(&cfg, "normalize");
            comments.push(format!("scale {}", outcome.scale));
            write_ply(output, &plant, &[], &comments, PlyFormat::BinaryLittleEndian)
        }
        Command::Superpoints { input, output, seed } => {
            let cfg = load_config(cli, Some(*seed))?;
            let cloud = read_ply(input)?.cloud;
            let sp = extract_superpoints(&cloud, &cfg.superpoint_config())?;
            info!("{} superpoints over {} points", sp.partition.len(), cloud.len());
            let ids: Vec<i32> = sp.partition.ids.iter().map(|&i| i as i32).collect();
            let comments = config_comments(&cfg, "superpoints");
            write_ply(output, &cloud, &[("superpoint", &ids)], &comments, PlyFormat::BinaryLittleEndian)
        }
        Command::Partition {
            input,
            output,
            seed,
            training,
        } => {
            let cfg = load_config(cli, *seed)?;
            let cloud = read_ply(input)?.cloud;
            let prepared = prepare_cloud(&cloud, &cfg.blocks, cfg.min_confidence)?;
            let purpose = if *training {
                BlockPurpose::Training
            } else {
                BlockPurpose::Inference
            };
            let blocks = partition_blocks(&prepared, &cfg.blocks, cfg.seed, purpose)?;
            info!("{} points after filtering, {} blocks", prepared.len(), blocks.len());
            save_blocks(output, &prepared, &blocks, &cfg.blocks, cfg.seed, purpose, &cfg.to_json())
        }
        Command::Train { train_dir, model, seed } => {
            let cfg = load_config(cli, Some(*seed))?;
            let sp_cfg = cfg.superpoint_config();
            let mut samples = Vec::new();
            for path in ply_files(train_dir)? {
                let cloud = read_ply(&path)?.cloud;
                let sp = extract_superpoints(&cloud, &sp_cfg)?;
                let s = superpoint_samples(&cloud, &sp.partition, cfg.train.min_purity);
                info!("{}: {} superpoints, {} usable", path.display(), sp.partition.len(), s.len());
                samples.extend(s);
            }
            let (net, report) = lscnet::train(&samples, &cfg.model, &cfg.train_config())?;
            info!(
                "trained on {} superpoints, final loss {:.4}",
                report.samples,
                report.epoch_loss.last().copied().unwrap_or(f64::NAN)
            );
            lscnet::save_model(&net, &cfg.to_json(), model)
        }
        Command::Predict {
            input,
            model,
            output,
            classifier,
            seed,
        } => {
            let extra = classifier
                .iter()
                .map(|name| ("classifier.name".to_string(), toml::Value::String(name.clone())))
                .collect();
            let cfg = load_config_with(cli, *seed, extra)?;
            let net: Option<LscNet> = if model == "-" {
                None
            } else {
                Some(lscnet::load_model(model)?.0)
            };
            let cloud = read_ply(input)?.cloud;
            let clf = classifier_by_name(&cfg.classifier, net, rng::mix(cfg.seed, 0x9ed))?;
            let seg = segment_plant(&cloud, clf.as_ref(), &cfg.superpoint_config())?;
            let ids: Vec<i32> = seg.superpoints.partition.ids.iter().map(|&i| i as i32).collect();
            let comments = config_comments(&cfg, "predict");
            write_ply(output, &seg.cloud, &[("superpoint", &ids)], &comments, PlyFormat::BinaryLittleEndian)
        }
        Command::Evaluate {
            prediction,
            truth,
            report,
            json,
        } => {
            let cfg = load_config(cli, None)?;
            let pairs: Vec<(PathBuf, PathBuf)> = if prediction.is_dir() {
                ply_files(prediction)?
                    .into_iter()
                    .map(|p| {
                        let t = truth.join(p.file_name().expect("listed file"));
                        (p, t)
                    })
                    .collect()
            } else {
                vec![(prediction.clone(), truth.clone())]
            };
            let reports = pairs
                .iter()
                .map(|(p, t)| -> Result<SegmentationReport> {
                    let (p, t) = (read_ply(p)?.cloud, read_ply(t)?.cloud);
                    check_same_points(&p, &t)?;
                    evaluate(p.semantic(), t.semantic(), cfg.unlabeled)
                })
                .collect::<Result<Vec<_>>>()?;
            let total = aggregate(&reports, cfg.aggregation)?;
            let text = if *json {
                let mut v = total.to_json();
                v["config"] = cfg.to_json();
                serde_json::to_string_pretty(&v).expect("json") + "\n"
            } else {
                total.to_text()
            };
            print!("{text}");
            let text = if *json {
                text
            } else {
                let echo: String = cfg.to_toml().lines().map(|l| format!("# {l}\n")).collect();
                text + &echo
            };
            match report {
                Some(path) => write_text(path, &text),
                None => Ok(()),
            }
        }
        Command::Synth {
            out_dir,
            seed,
            count,
            scenes,
        } => {
            let cfg = load_config(cli, Some(*seed))?;
            let style = PlantStyle::default();
            let files = write_corpus(out_dir, cfg.seed, *count, &style)?;
            info!("wrote {} plants to {}", files.len(), out_dir.display());
            if *scenes {
                for i in 0..*count {
                    let scene = generate_scene(rng::mix(cfg.seed, 0x5c00 + i as u64), &SceneParams::default());
                    let ply = out_dir.join(format!("scene_{i:03}.ply"));
                    write_ply(&ply, &scene.raw, &[], &config_comments(&cfg, "synth"), PlyFormat::BinaryLittleEndian)?;
                    write_text(&out_dir.join(format!("scene_{i:03}.landmarks.txt")), &scene.landmarks.to_text())?;
                }
            }
            Ok(())
        }
    }
}

/// Prediction and truth files must hold the same points in the same order.
fn check_same_points(pred: &PointCloud, truth: &PointCloud) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidInput(format!(
            "prediction has {} points, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    let tol = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()));
    if let Some(i) = (0..pred.len()).find(|&i| {
        let (p, t) = (pred.positions()[i], truth.positions()[i]);
        !(0..3).all(|k| tol(p[k], t[k]))
    }) {
        return Err(Error::InvalidInput(format!("point {i} differs between prediction and truth")));
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
