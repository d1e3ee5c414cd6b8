//! The `splat-avatar` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::io::{self, load_config, load_dataset, Dataset, FrameRecord, PipelineConfig};
use crate::metrics::{psnr, ssim};
use crate::optim::{refine_pose, render_view, silhouette_iou, train_avatar, PoseObservation, TrainView};
use crate::reinit::reinitialize;
use crate::skeleton::{deform_mesh, read_asset, write_asset, Pose, ResidualNet, SkeletonAsset};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "splat-avatar", version, about = "Drivable 3D Gaussian avatars from posed images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct Model {
    /// Gaussian cloud checkpoint (.gsav).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Skeleton asset file.
    #[arg(long)]
    pub asset: PathBuf,
    /// Residual network JSON; zero offsets when absent.
    #[arg(long)]
    pub residual: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    HeldOut,
    Train,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subject {
    /// Five-joint textured capsule figure.
    Figure,
    /// Two-link arm seen from the front.
    Arm,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refine each frame's pose against its silhouette and normal map; writes one pose file per frame.
    RefinePose {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        asset: PathBuf,
    },
    /// Optimize a Gaussian avatar; writes checkpoint.gsav, residual.json, metrics.jsonl and config.toml.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        asset: PathBuf,
        /// Starting cloud; one Gaussian per asset vertex when absent.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Render a checkpoint in one pose from one camera.
    Render {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        pose: PathBuf,
    },
    /// Render a pose sequence (JSON array of poses) as numbered images.
    Drive {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        poses: PathBuf,
    },
    /// Rebuild a checkpoint's points on its reconstructed surface; writes the new checkpoint and a JSON report.
    Reinit {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// PSNR and SSIM of a checkpoint on a dataset split.
    Eval {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "held-out")]
        split: Split,
    },
    /// Write a synthetic dataset, its skeleton asset, per-frame camera files and a starting cloud.
    Synth {
        #[arg(long, value_enum, default_value = "figure")]
        subject: Subject,
        #[arg(long, default_value_t = 36)]
        frames: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Degrees added to every joint rotation angle in the written poses.
        #[arg(long, default_value_t = 0.0)]
        perturb: f64,
    },
}

/// Parses `argv` and runs it: 0 on success, 1 on bad input, 2 on a failed run.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out
        .as_deref()
        .ok_or_else(|| Error::Validation("--out is required for this command".into()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs the parsed command and returns what it prints.
pub fn execute(cli: &Cli) -> Result<String> {
    let config = load_config(cli.config.as_deref())?.resolve(cli.seed)?;
    if cli.dump_config {
        return config.to_toml();
    }
    match &cli.command {
        Command::RefinePose { dataset, asset } => cmd_refine_pose(&config, dataset, asset, require_out(cli)?),
        Command::Train { dataset, asset, init } => {
            cmd_train(&config, dataset, asset, init.as_deref(), require_out(cli)?)
        }
        Command::Render { model, camera, pose } => {
            let (asset, cloud, mut net) = load_model(&config, model)?;
            let camera = io::read_camera(camera)?;
            let pose = checked_pose(io::read_pose(pose)?, &asset)?;
            let img = render_view(&asset, &cloud, &mut net, &pose, &camera, &config.train)?;
            let out = require_out(cli)?;
            io::write_image(out, &img)?;
            Ok(format!("wrote {}\n", out.display()))
        }
        Command::Drive { model, camera, poses } => {
            let (asset, cloud, mut net) = load_model(&config, model)?;
            let camera = io::read_camera(camera)?;
            let poses = io::read_pose_sequence(poses)?;
            let out = require_out(cli)?;
            create_dir(out)?;
            let width = poses.len().saturating_sub(1).to_string().len().max(4);
            for (k, pose) in poses.into_iter().enumerate() {
                let pose = checked_pose(pose, &asset).map_err(|e| Error::Validation(format!("pose {k}: {e}")))?;
                let img = render_view(&asset, &cloud, &mut net, &pose, &camera, &config.train)?;
                io::write_image(&out.join(format!("frame_{k:0width$}.ppm")), &img)?;
            }
            Ok(format!("wrote frames to {}\n", out.display()))
        }
        Command::Reinit { checkpoint } => {
            let cloud = io::read_cloud(checkpoint)?;
            let (out_cloud, report) = reinitialize(&cloud, &config.train.reinit)?;
            let out = require_out(cli)?;
            io::write_cloud(out, &out_cloud)?;
            let report_path = out.with_extension("report.json");
            io::write_json(&report_path, &report)?;
            Ok(format!(
                "{} -> {} points, alpha {:.5}, report {}\n",
                report.old_count,
                report.new_count,
                report.alpha,
                report_path.display()
            ))
        }
        Command::Eval { model, dataset, split } => {
            let (asset, cloud, mut net) = load_model(&config, model)?;
            let ds = load_dataset(dataset)?;
            let table = eval_table(&config, &asset, &cloud, &mut net, &ds, *split)?;
            if let Some(out) = &cli.out {
                io::write_atomic(out, table.as_bytes())?;
            }
            Ok(table)
        }
        Command::Synth {
            subject,
            frames,
            size,
            perturb,
        } => cmd_synth(&config, *subject, *frames, *size, *perturb, require_out(cli)?),
    }
}

fn checked_pose(pose: Pose, asset: &SkeletonAsset) -> Result<Pose> {
    if pose.joint_count() != asset.joint_count() {
        return Err(Error::Validation(format!(
            "pose has {} joints, the asset {}",
            pose.joint_count(),
            asset.joint_count()
        )));
    }
    Ok(pose)
}

fn load_model(config: &PipelineConfig, model: &Model) -> Result<(SkeletonAsset, GaussianCloud, ResidualNet)> {
    let asset = read_asset(&model.asset)?;
    let cloud = io::read_cloud(&model.checkpoint)?;
    let net = match &model.residual {
        Some(p) => io::read_residual(p)?,
        None => ResidualNet::new(asset.joint_count(), config.seed),
    };
    if net.joints() != asset.joint_count() {
        return Err(Error::Validation(format!(
            "residual network expects {} joints, the asset has {}",
            net.joints(),
            asset.joint_count()
        )));
    }
    Ok((asset, cloud, net))
}

fn views<'a>(frames: impl Iterator<Item = &'a FrameRecord>, asset: &SkeletonAsset) -> Result<Vec<TrainView>> {
    frames
        .map(|f| {
            Ok(TrainView {
                image: f.image.clone(),
                camera: f.camera.clone(),
                pose: checked_pose(f.pose.clone(), asset).map_err(|e| Error::Validation(format!("frame {}: {e}", f.id)))?,
            })
        })
        .collect()
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

fn eval_table(
    config: &PipelineConfig,
    asset: &SkeletonAsset,
    cloud: &GaussianCloud,
    net: &mut ResidualNet,
    ds: &Dataset,
    split: Split,
) -> Result<String> {
    let picked: Vec<&FrameRecord> = match split {
        Split::HeldOut => ds.held_out_frames().collect(),
        Split::Train => ds.train_frames().collect(),
        Split::All => ds.frames.iter().collect(),
    };
    if picked.is_empty() {
        return Err(Error::Validation("the chosen split has no frames".into()));
    }
    let mut table = String::from("frame\tpsnr\tssim\n");
    let (mut p_sum, mut s_sum) = (0.0, 0.0);
    for f in &picked {
        let pose = checked_pose(f.pose.clone(), asset).map_err(|e| Error::Validation(format!("frame {}: {e}", f.id)))?;
        let img = render_view(asset, cloud, net, &pose, &f.camera, &config.train)?;
        let (p, s) = (psnr(&img, &f.image)?, ssim(&img, &f.image)?);
        p_sum += p;
        s_sum += s;
        writeln!(table, "{}\t{}\t{s:.6}", f.id, format_db(p)).unwrap();
    }
    let n = picked.len() as f64;
    writeln!(table, "mean\t{}\t{:.6}", format_db(p_sum / n), s_sum / n).unwrap();
    Ok(table)
}

fn cmd_refine_pose(config: &PipelineConfig, dataset: &Path, asset: &Path, out: &Path) -> Result<String> {
    let asset = read_asset(asset)?;
    let ds = load_dataset(dataset)?;
    let dir = out.join("poses");
    create_dir(&dir)?;
    let mut table = String::from("frame\tinitial_loss\tfinal_loss\titerations\tiou\n");
    for f in &ds.frames {
        let initial = checked_pose(f.pose.clone(), &asset).map_err(|e| Error::Validation(format!("frame {}: {e}", f.id)))?;
        let obs = PoseObservation {
            camera: f.camera.clone(),
            silhouette: f.silhouette.clone(),
            normals: f.normals.clone(),
        };
        let r = refine_pose(&asset, &initial, &obs, &config.pose).map_err(|e| e.in_stage("pose refinement"))?;
        let (_, sil) = crate::mesh::rasterize_mesh(&deform_mesh(&asset, &r.pose)?, &f.camera);
        let iou = silhouette_iou(&sil, &f.silhouette)?;
        io::write_pose(&dir.join(format!("{:04}.json", f.id)), &r.pose)?;
        writeln!(
            table,
            "{}\t{:.6}\t{:.6}\t{}\t{iou:.4}",
            f.id, r.initial_loss.total, r.best_loss.total, r.iterations
        )
        .unwrap();
    }
    io::write_atomic(&out.join("refine_report.tsv"), table.as_bytes())?;
    Ok(table)
}

fn cmd_train(config: &PipelineConfig, dataset: &Path, asset_path: &Path, init: Option<&Path>, out: &Path) -> Result<String> {
    let asset = read_asset(asset_path)?;
    let ds = load_dataset(dataset)?;
    let train = views(ds.train_frames(), &asset)?;
    if train.is_empty() {
        return Err(Error::Validation("the dataset has no training frames".into()));
    }
    let held = views(ds.held_out_frames(), &asset)?;
    let initial = match init {
        Some(p) => io::read_cloud(p)?,
        None => synth::mesh_vertex_cloud(&asset, 0, config.seed)?,
    };
    create_dir(out)?;
    let outcome = train_avatar(&train, &held, &asset, &initial, &config.train, &mut |_| Ok(()))?;
    io::write_cloud(&out.join("checkpoint.gsav"), &outcome.cloud)?;
    io::write_residual(&out.join("residual.json"), &outcome.residual)?;
    io::write_atomic(&out.join("metrics.jsonl"), io::metrics_log_text(&outcome.log)?.as_bytes())?;
    io::write_atomic(&out.join("config.toml"), config.to_toml()?.as_bytes())?;
    let last_eval = outcome.log.iter().rev().find_map(|e| match e {
        crate::optim::LogEntry::Eval { psnr, .. } => Some(*psnr),
        _ => None,
    });
    let mut msg = format!("trained {} points into {}\n", outcome.cloud.len(), out.display());
    if let Some(p) = last_eval {
        writeln!(msg, "held-out psnr {}", format_db(p)).unwrap();
    }
    Ok(msg)
}

fn cmd_synth(config: &PipelineConfig, subject: Subject, n: usize, size: usize, perturb: f64, out: &Path) -> Result<String> {
    if n == 0 || size == 0 {
        return Err(Error::Validation("--frames and --size must be positive".into()));
    }
    create_dir(out)?;
    let (asset, frames) = match subject {
        Subject::Figure => {
            let asset = synth::capsule_figure()?;
            let frames = synth::figure_frames(&asset, n, size)?;
            (asset, frames)
        }
        Subject::Arm => {
            let asset = synth::two_link_arm()?;
            let frames = (0..n)
                .map(|k| {
                    let elbow = 0.4 + 0.6 * k as f64 / n.max(2).saturating_sub(1) as f64;
                    synth::render_textured(&asset, &synth::arm_pose(elbow), &synth::arm_camera(size), 3, &synth::figure_texture)
                })
                .collect::<Result<Vec<_>>>()?;
            (asset, frames)
        }
    };
    let delta = perturb.to_radians();
    let records: Vec<FrameRecord> = frames
        .into_iter()
        .enumerate()
        .map(|(k, f)| {
            let rotations = f
                .pose
                .rotations()
                .iter()
                .map(|r| {
                    let angle = r.norm();
                    if angle > 0.0 {
                        r * ((angle + delta) / angle)
                    } else {
                        *r
                    }
                })
                .collect();
            FrameRecord {
                id: k as u64,
                image: f.image,
                silhouette: f.silhouette,
                normals: Some(f.normals),
                pose: Pose::new(rotations, f.pose.root_translation()),
                camera: f.camera,
            }
        })
        .collect();
    let manifest = io::write_dataset(out, &records, io::DEFAULT_HELD_OUT_EVERY)?;
    create_dir(&out.join("cameras"))?;
    for r in &records {
        io::write_camera(&out.join(format!("cameras/{:04}.json", r.id)), &r.camera)?;
    }
    io::write_atomic(&out.join("asset.txt"), write_asset(&asset).as_bytes())?;
    io::write_cloud(&out.join("init.gsav"), &synth::mesh_vertex_cloud(&asset, 0, config.seed)?)?;
    Ok(format!("wrote {} frames, manifest {}\n", records.len(), manifest.display()))
}
