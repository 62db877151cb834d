//! Command implementations. Each takes its parsed flags and returns the
//! manifest it wrote.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::Args;
use mosyn_core::metrics::{evaluate, MetricsConfig, MetricsReport};
use mosyn_core::model::Model;
use mosyn_core::motion::{parse_bvh_with, write_bvh, BvhOptions, Motion, Skeleton};
use mosyn_core::synthesis::{foot_ik_cleanup, generate, keyframe_edit, reconstruct, style_transfer, IkConfig};
use mosyn_core::training::{train, train_conditional, ConstraintPreset, Telemetry, TrainConfig};

use crate::manifest::{write_atomic, ManifestBuilder, RunManifest};

pub const CHECKPOINT: &str = "model.ckpt";
pub const CONDITIONAL_CHECKPOINT: &str = "model_cond.ckpt";

fn read_bvh(path: &Path, opts: &BvhOptions) -> anyhow::Result<(Skeleton, Motion)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_bvh_with(&text, opts).with_context(|| format!("parsing {}", path.display()))
}

/// Reads a BVH for use with `model`, labelling the model's feet, and
/// rejects files whose skeleton differs from the checkpoint's.
fn read_for_model(path: &Path, model: &Model) -> anyhow::Result<Motion> {
    let names = model
        .skeleton
        .foot_joints
        .iter()
        .map(|&j| model.skeleton.joints[j].name.clone())
        .collect();
    let opts = BvhOptions {
        foot_joints: Some(names),
        ..BvhOptions::default()
    };
    let (skel, motion) = read_bvh(path, &opts)?;
    if skel.fingerprint() != model.skeleton.fingerprint() {
        bail!(
            "skeleton fingerprint mismatch between {} and the checkpoint",
            path.display()
        );
    }
    Ok(motion)
}

fn load_model(path: &Path) -> anyhow::Result<Model> {
    Model::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Writes `motion` as BVH, after contact cleanup unless disabled.
fn write_motion(
    skel: &Skeleton,
    motion: Motion,
    out: &Path,
    no_ik: bool,
    manifest: &mut ManifestBuilder,
) -> anyhow::Result<()> {
    let (motion, details) = if no_ik {
        (motion, serde_json::json!({ "ik": null }))
    } else {
        let cfg = IkConfig::default();
        let (m, report) = foot_ik_cleanup(skel, &motion, &cfg)?;
        (m, serde_json::json!({ "ik": { "config": cfg, "report": report } }))
    };
    write_atomic(out, write_bvh(skel, &motion)?.as_bytes())?;
    manifest.output(out).details(details);
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Training clips (one skeleton).
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// JSON training configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also train a conditional model on this channel preset.
    #[arg(long)]
    pub conditional: Option<ConstraintPreset>,
    /// Existing unconditional checkpoint for conditional training.
    #[arg(long, requires = "conditional")]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Foot joint names; guessed from the rest pose when omitted.
    #[arg(long, value_delimiter = ',')]
    pub feet: Option<Vec<String>>,
}

fn telemetry_writer(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn log_line(w: &mut BufWriter<File>, t: &Telemetry) {
    // Flushed per line so a diverged run keeps everything up to the failure.
    let line = serde_json::to_string(t).expect("telemetry serializes");
    let _ = writeln!(w, "{line}").and_then(|_| w.flush());
}

pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<RunManifest> {
    let mut manifest = ManifestBuilder::start("train");
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => serde_json::from_slice(&std::fs::read(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(n) = args.iterations {
        cfg.iterations_per_level = n;
    }
    if let Some(s) = args.levels {
        cfg.levels = s;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    manifest.config(&cfg).seed(cfg.seed);

    let opts = BvhOptions {
        foot_joints: args.feet.clone(),
        ..BvhOptions::default()
    };
    let mut skeleton: Option<Skeleton> = None;
    let mut motions = Vec::new();
    for p in &args.input {
        let (skel, m) = read_bvh(p, &opts)?;
        if let Some(s) = &skeleton {
            if s.fingerprint() != skel.fingerprint() {
                bail!("{} uses a different skeleton from {}", p.display(), args.input[0].display());
            }
        }
        manifest.input(p, m.fingerprint());
        skeleton = Some(skel);
        motions.push(m);
    }
    let skel = skeleton.expect("at least one input");
    std::fs::create_dir_all(&args.out)?;

    let base = match (&args.conditional, &args.base) {
        (Some(_), Some(path)) => {
            let m = load_model(path)?;
            if m.skeleton.fingerprint() != skel.fingerprint() {
                bail!("base checkpoint skeleton differs from the training clips");
            }
            m
        }
        _ => {
            let tel = args.out.join("telemetry.jsonl");
            let mut w = telemetry_writer(&tel)?;
            let model = train(&cfg, &skel, &motions, &mut |t| log_line(&mut w, t))?;
            let ckpt = args.out.join(CHECKPOINT);
            model.save(&ckpt)?;
            manifest.output(&ckpt).output(&tel);
            model
        }
    };
    if let Some(preset) = args.conditional {
        let tel = args.out.join("telemetry_cond.jsonl");
        let mut w = telemetry_writer(&tel)?;
        let channels = preset.channels(&skel);
        let model = train_conditional(&cfg, &skel, &motions, &channels, &base, &mut |t| log_line(&mut w, t))?;
        let ckpt = args.out.join(CONDITIONAL_CHECKPOINT);
        model.save(&ckpt)?;
        manifest.output(&ckpt).output(&tel);
    }
    manifest.finish(&args.out.join("manifest.json"))
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output length in frames; defaults to the training length.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Reproduce the training clip from its reconstruction noise.
    #[arg(long)]
    pub reconstruction: bool,
    #[arg(long)]
    pub no_ik: bool,
}

pub fn cmd_generate(args: &GenerateArgs) -> anyhow::Result<RunManifest> {
    let mut manifest = ManifestBuilder::start("generate");
    let model = load_model(&args.checkpoint)?;
    manifest.input(&args.checkpoint, model.fingerprints.join(",")).seed(args.seed);
    let trained = *model.lengths[0].last().expect("levels");
    let length = args.length.unwrap_or(trained);
    let motion = if args.reconstruction {
        if length != trained {
            bail!("reconstruction length is fixed at the training length {trained}");
        }
        reconstruct(&model, 0)
    } else {
        generate(&model, length, args.seed)?
    };
    manifest.config(&serde_json::json!({ "length": length, "reconstruction": args.reconstruction }));
    write_motion(&model.skeleton, motion, &args.out, args.no_ik, &mut manifest)?;
    manifest.finish(&sidecar(&args.out))
}

#[derive(Debug, Clone, Args)]
pub struct StyleArgs {
    #[arg(long)]
    pub style_checkpoint: PathBuf,
    #[arg(long)]
    pub content: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_ik: bool,
}

pub fn cmd_style(args: &StyleArgs) -> anyhow::Result<RunManifest> {
    let mut manifest = ManifestBuilder::start("style");
    let model = load_model(&args.style_checkpoint)?;
    let content = read_for_model(&args.content, &model)?;
    manifest.input(&args.content, content.fingerprint()).seed(args.seed);
    let out = style_transfer(&model, &content, args.seed)?;
    write_motion(&model.skeleton, out, &args.out, args.no_ik, &mut manifest)?;
    manifest.finish(&sidecar(&args.out))
}

#[derive(Debug, Clone, Args)]
pub struct KeyframeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Edited motion at the coarsest level's rate and length.
    #[arg(long)]
    pub coarse_edit: PathBuf,
    /// Draw fresh noise instead of zero noise.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_ik: bool,
}

pub fn cmd_keyframe(args: &KeyframeArgs) -> anyhow::Result<RunManifest> {
    let mut manifest = ManifestBuilder::start("keyframe");
    let model = load_model(&args.checkpoint)?;
    let coarse = read_for_model(&args.coarse_edit, &model)?;
    manifest.input(&args.coarse_edit, coarse.fingerprint()).seed(args.seed);
    let out = keyframe_edit(&model, &coarse, !args.stochastic, args.seed)?;
    write_motion(&model.skeleton, out, &args.out, args.no_ik, &mut manifest)?;
    manifest.finish(&sidecar(&args.out))
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Draw samples from this checkpoint.
    #[arg(long, required_unless_present = "motions")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate these clips instead of checkpoint samples.
    #[arg(long, num_args = 1.., conflicts_with = "checkpoint")]
    pub motions: Vec<PathBuf>,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub samples: usize,
    /// Sample length; defaults to the reference length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Coverage threshold; defaults to 0.1 × joint count.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<MetricsReport> {
    let mut manifest = ManifestBuilder::start("eval");
    let cfg = MetricsConfig {
        epsilon: args.epsilon,
        ..MetricsConfig::default()
    };
    let (samples, reference, seed) = match &args.checkpoint {
        Some(ckpt) => {
            let model = load_model(ckpt)?;
            let reference = read_for_model(&args.reference, &model)?;
            let length = args.length.unwrap_or(reference.frames());
            let samples = (0..args.samples as u64)
                .map(|i| generate(&model, length, args.seed.wrapping_add(i)))
                .collect::<Result<Vec<_>, _>>()?;
            manifest.seed(args.seed);
            (samples, reference, Some(args.seed))
        }
        None => {
            let (skel, reference) = read_bvh(&args.reference, &BvhOptions::default())?;
            let samples = args
                .motions
                .iter()
                .map(|p| {
                    let (s, m) = read_bvh(p, &BvhOptions::default())?;
                    if s.fingerprint() != skel.fingerprint() {
                        bail!("skeleton fingerprint mismatch between {} and the reference", p.display());
                    }
                    Ok(m)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            (samples, reference, None)
        }
    };
    manifest.input(&args.reference, reference.fingerprint()).config(&cfg);
    let report = evaluate(&samples, &reference, &cfg, seed)?;
    let json = serde_json::to_vec_pretty(&report)?;
    match &args.out {
        Some(p) => {
            write_atomic(p, &json)?;
            manifest.output(p).details(serde_json::to_value(&report)?);
            manifest.finish(&sidecar(p))?;
        }
        None => println!("{}", String::from_utf8(json)?),
    }
    Ok(report)
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    /// Conditional checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

pub fn cmd_serve(args: &ServeArgs) -> anyhow::Result<()> {
    let model = Arc::new(load_model(&args.checkpoint)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        println!("listening on ws://{}", listener.local_addr()?);
        crate::server::serve(model, listener).await
    })
}
