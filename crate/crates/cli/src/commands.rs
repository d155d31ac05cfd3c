//! Subcommand implementations.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use grin_autodiff::{Array, Tape};
use grin_core::config::RunConfig;
use grin_core::data::{load_dataset, write_dataset, CameraProfile, DepthMap, GenSpec, Image, SparseDepthMap, Split};
use grin_core::geometry::Camera;
use grin_core::model::checkpoint::Checkpoint;
use grin_core::model::flops::rin_flops;
use grin_core::model::GrinModel;
use grin_core::train::ablate::{run_suite, Suite};
use grin_core::train::{
    confidence_curve, evaluate, infer_samples, load_model, reduce_samples, InferOptions, MetricsReport, Trainer,
};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::colormap::colorize;
use crate::{AblateArgs, BenchArgs, Command, EvalArgs, GenArgs, InferArgs, TrainArgs};

/// Bad flags or flag combinations detected after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Fractions reported by `eval --confidence-curve`.
const CURVE_FRACTIONS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// `git describe` of the build, or `unknown`.
pub const BUILD_ID: &str = env!("GRIN_BUILD_ID");

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Bench(a) => bench(a),
    }
}

/// `GRIN_SEED`, when set.
fn env_seed() -> Result<Option<u64>> {
    match std::env::var("GRIN_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| usage(format!("GRIN_SEED: not an integer: {s:?}"))),
        Err(_) => Ok(None),
    }
}

/// Defaults overridden by `path` and then by `GRIN_SEED`.
fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn gen(a: GenArgs) -> Result<()> {
    if a.scenes == 0 {
        bail!(usage("--scenes must be positive"));
    }
    let profile = CameraProfile::by_name(&a.camera_profile)?;
    let mut spec = GenSpec::new(a.scenes, a.seed, profile);
    spec.val_scenes = a.val_scenes;
    spec.keep = a.sparsity;
    spec.pattern = a.pattern.parse()?;
    spec.complexity = a.complexity;
    let entries = spec.generate()?;
    create_dir(&a.out)?;
    write_dataset(&a.out, &entries)?;
    println!("wrote {} scenes to {}", entries.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let entries = load_dataset(&a.data)?;
    let data: Vec<_> = entries.into_iter().filter(|e| e.split == Split::Train).collect();
    if data.is_empty() {
        bail!(grin_core::Error::Empty(format!("{}: no training scenes", a.data.display())));
    }
    let mut trainer = match &a.resume {
        Some(ckpt) => {
            if a.config.is_some() {
                bail!(usage("--config cannot be combined with --resume; the checkpoint carries its config"));
            }
            Trainer::load(ckpt)?
        }
        None => Trainer::new(load_config(a.config.as_deref())?)?,
    };
    create_dir(&a.out)?;
    let cfg = trainer.cfg.clone();
    fs::write(a.out.join("config.txt"), format!("# build {BUILD_ID}\n{}", cfg.to_text()))
        .with_context(|| format!("cannot write {}", a.out.join("config.txt").display()))?;
    let log_path = a.out.join("loss.tsv");
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("cannot open {}", log_path.display()))?;
    let remaining = cfg.train.steps.saturating_sub(trainer.step);
    let todo = a.steps.map_or(remaining, |k| k.min(remaining));
    let start = Instant::now();
    for _ in 0..todo {
        let report = trainer.train_step(&data)?;
        writeln!(log, "{}", report.log_line())?;
        if cfg.train.checkpoint_every > 0 && report.step % cfg.train.checkpoint_every == 0 {
            trainer.save(&a.out.join(format!("ckpt_{:06}.grin", report.step)))?;
        }
    }
    log.flush()?;
    trainer.save(&a.out.join("final.grin"))?;
    eprintln!(
        "trained {todo} steps to step {} in {:.1}s ({} scenes skipped)",
        trainer.step,
        start.elapsed().as_secs_f64(),
        trainer.skipped
    );
    Ok(())
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn infer(a: InferArgs) -> Result<()> {
    let image = Image::load(&a.image)?;
    let camera = match (&a.intrinsics, a.default_intrinsics) {
        (Some(_), true) => bail!(usage("--intrinsics and --default-intrinsics are exclusive")),
        (None, false) => bail!(usage("one of --intrinsics or --default-intrinsics is required")),
        (Some(p), false) => Camera::load(p)?,
        (None, true) => Camera::default_for(image.width, image.height),
    };
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let (mut cfg, model) = load_model(&ckpt, a.raw_weights)?;
    if let Some(c) = a.chunk {
        cfg.eval.chunk = c;
    }
    let seed = match a.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(cfg.train.seed),
    };
    let mut opts = InferOptions::from_config(&cfg, seed);
    if let Some(s) = a.samples {
        opts.samples = s;
    }
    if let Some(k) = a.global_keep {
        opts.global_keep = k;
    }
    let (u0, v0, u1, v1) = match a.crop.as_deref() {
        Some(&[u0, v0, u1, v1]) => (u0, v0, u1, v1),
        _ => (0, 0, camera.width, camera.height),
    };
    if u0 >= u1 || v0 >= v1 || u1 > camera.width || v1 > camera.height {
        bail!(usage(format!("crop {u0} {v0} {u1} {v1} is empty or exceeds {}×{}", camera.width, camera.height)));
    }
    let pixels: Vec<usize> = (v0..v1).flat_map(|v| (u0..u1).map(move |u| v * camera.width + u)).collect();
    let samples = infer_samples(&model, &cfg, &image, &camera, &pixels, &opts)?;
    let (depth, std) = reduce_samples(&samples);
    let (w, h) = (u1 - u0, v1 - v0);
    let depth = DepthMap::new(w, h, depth)?;
    let unc = DepthMap::new(w, h, std)?;
    depth.save(&with_ext(&a.out, "depth"))?;
    unc.save(&with_ext(&a.out, "unc"))?;
    colorize(&depth, &cfg.depth).save(&with_ext(&a.out, "ppm"))?;
    Ok(())
}

/// Dense or sparse ground truth, recognised by its header.
fn load_gt(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    if bytes.starts_with(b"SPARSE") {
        let text =
            String::from_utf8(bytes).map_err(|_| grin_core::Error::Format(format!("{}: not UTF-8", path.display())))?;
        let sparse = SparseDepthMap::from_text(&text).with_context(|| path.display().to_string())?;
        Ok(sparse.to_dense())
    } else {
        Ok(DepthMap::from_bytes(&bytes).with_context(|| path.display().to_string())?)
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    if let Some(dir) = &a.runs {
        return eval_runs(dir);
    }
    let (Some(pred_path), Some(gt_path)) = (&a.pred, &a.gt) else {
        bail!(usage("--pred and --gt are required"));
    };
    let pred = DepthMap::load(pred_path)?;
    let gt = load_gt(gt_path)?;
    if (pred.width, pred.height) != (gt.width, gt.height) {
        bail!(grin_core::Error::Format(format!(
            "prediction is {}×{} but ground truth is {}×{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let report = evaluate(&pred.data, &gt.data, a.cap, a.scale_align)?;
    println!("{}\n{}", MetricsReport::HEADER, report.tsv());
    let mut sidecar = report.sidecar();
    if a.confidence_curve {
        let unc_path = a.unc.clone().unwrap_or_else(|| pred_path.with_extension("unc"));
        let unc = DepthMap::load(&unc_path)?;
        if (unc.width, unc.height) != (pred.width, pred.height) {
            bail!(grin_core::Error::Format(format!("{}: size differs from the prediction", unc_path.display())));
        }
        let pred_data =
            if a.scale_align { grin_core::train::scale_align(&pred.data, &gt.data, a.cap)? } else { pred.data.clone() };
        let curve = confidence_curve(&pred_data, &unc.data, &gt.data, a.cap, &CURVE_FRACTIONS)?;
        println!("fraction\tRMSE");
        for (f, r) in curve {
            println!("{f:.2}\t{r:.6}");
            sidecar.push_str(&format!("curve_{f:.2}: {r:.9}\n"));
        }
    }
    let out = a.out.clone().unwrap_or_else(|| pred_path.with_extension("metrics"));
    fs::write(&out, sidecar).with_context(|| format!("cannot write {}", out.display()))?;
    Ok(())
}

/// Every `*.metrics` file below `dir`, sorted by path.
fn find_sidecars(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_sidecars(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "metrics") {
            out.push(path);
        }
    }
    Ok(())
}

/// One row per sidecar labelled by its path relative to `dir`, then the
/// mean of each parent directory's runs.
fn eval_runs(dir: &Path) -> Result<()> {
    let mut paths = Vec::new();
    find_sidecars(dir, &mut paths)?;
    paths.sort();
    if paths.is_empty() {
        bail!(grin_core::Error::Empty(format!("no .metrics files below {}", dir.display())));
    }
    let mut groups: Vec<(String, Vec<MetricsReport>)> = Vec::new();
    println!("run\t{}", MetricsReport::HEADER);
    for p in &paths {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
        let report = MetricsReport::from_sidecar(&text).with_context(|| p.display().to_string())?;
        let rel = p.strip_prefix(dir).unwrap_or(p);
        println!("{}\t{}", rel.display(), report.tsv());
        let group =
            rel.parent().map(|g| g.display().to_string()).filter(|g| !g.is_empty()).unwrap_or_else(|| ".".into());
        match groups.iter_mut().find(|(g, _)| *g == group) {
            Some((_, v)) => v.push(report),
            None => groups.push((group, vec![report])),
        }
    }
    println!("group\t{}\truns", MetricsReport::HEADER);
    for (g, reports) in &groups {
        println!("{g}\t{}\t{}", MetricsReport::mean(reports)?.tsv(), reports.len());
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let suite: Suite = a.suite.parse().map_err(|e: grin_core::Error| usage(e.to_string()))?;
    let base = load_config(a.config.as_deref())?;
    if a.seeds == 0 {
        bail!(usage("--seeds must be positive"));
    }
    let entries = load_dataset(&a.data)?;
    let (train, val): (Vec<_>, Vec<_>) = entries.into_iter().partition(|e| e.split == Split::Train);
    if train.is_empty() || val.is_empty() {
        bail!(grin_core::Error::Empty(format!(
            "{}: ablations need both training and held-out scenes",
            a.data.display()
        )));
    }
    let seeds: Vec<u64> = (0..a.seeds).map(|i| base.train.seed + i).collect();
    let report = run_suite(suite, &base, &train, &val, &seeds, |line| eprintln!("{line}"))?;
    let table = report.table();
    print!("{table}");
    if let Some(out) = &a.out {
        fs::write(out, &table).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    if a.tokens.is_empty() || a.tokens.contains(&0) {
        bail!(usage("--tokens must list positive counts"));
    }
    let model = GrinModel::new(cfg.model.clone(), cfg.train.seed)?;
    let mut rng = grin_core::rng(cfg.train.seed, 0xbe);
    println!("tokens\tread\tcompute\twrite\ttotal\tmeasured\tms");
    let mut compute = None;
    for &n in &a.tokens {
        let analytic = rin_flops(&cfg.model, n);
        let width = cfg.model.token_width;
        let tokens = Array::new([n, width], (0..n * width).map(|_| rng.sample(StandardNormal)).collect())?;
        let mut best = f64::INFINITY;
        let mut measured = 0;
        for _ in 0..a.repeats.max(1) {
            let tape = Tape::no_grad();
            let p = model.bind(&tape);
            let x = tape.constant(tokens.clone());
            let start = Instant::now();
            model.denoise(&p, &x, None, 0.5)?;
            best = best.min(start.elapsed().as_secs_f64() * 1e3);
            let f = tape.flops();
            measured = ["read", "compute", "write"].iter().map(|s| f.get(s).copied().unwrap_or(0)).sum::<u64>();
        }
        let core = analytic.read + analytic.compute + analytic.write;
        println!("{n}\t{}\t{}\t{}\t{core}\t{measured}\t{best:.3}", analytic.read, analytic.compute, analytic.write);
        if measured != core {
            bail!(grin_core::Error::InvalidArgument(format!(
                "measured FLOPs {measured} differ from the analytic {core} at {n} tokens"
            )));
        }
        match compute {
            None => compute = Some(analytic.compute),
            Some(c) if c != analytic.compute => {
                bail!(grin_core::Error::InvalidArgument(format!(
                    "compute FLOPs vary with token count: {c} vs {}",
                    analytic.compute
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}
