//! Matched train/evaluate grids over model and inference variants.

use super::{confidence_curve, evaluate, infer_depth, InferOptions, MetricsReport, Trainer};
use crate::config::RunConfig;
use crate::data::DatasetEntry;
use crate::depth::DepthMode;
use crate::model::GrinModel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Full model against removing local image features, local geometry or
    /// global tokens.
    Conditioning,
    /// Linear, natural-log and base-10 depth encodings.
    Parameterization,
    /// One sample against the median of several.
    Samples,
    /// Inference with 100, 50, 25 and 10 % of the global tokens.
    GlobalDropout,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditioning" => Ok(Suite::Conditioning),
            "parameterization" => Ok(Suite::Parameterization),
            "samples" => Ok(Suite::Samples),
            "global-dropout" => Ok(Suite::GlobalDropout),
            _ => Err(Error::Config(format!(
                "unknown suite {s:?} (conditioning, parameterization, samples, global-dropout)"
            ))),
        }
    }
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Conditioning => "conditioning",
            Suite::Parameterization => "parameterization",
            Suite::Samples => "samples",
            Suite::GlobalDropout => "global-dropout",
        }
    }
}

/// One row of a suite: a training configuration plus inference settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub cfg: RunConfig,
    pub samples: usize,
    pub global_keep: f64,
}

pub fn variants(suite: Suite, base: &RunConfig) -> Vec<Variant> {
    let row = |label: &str, edit: &dyn Fn(&mut RunConfig)| {
        let mut cfg = base.clone();
        edit(&mut cfg);
        Variant { label: label.into(), samples: cfg.eval.samples, global_keep: cfg.eval.global_keep, cfg }
    };
    match suite {
        Suite::Conditioning => vec![
            row("full", &|_| {}),
            row("w/o local image", &|c| c.model.local_image = false),
            row("w/o local geometry", &|c| c.model.local_geometry = false),
            row("w/o global", &|c| c.model.global = false),
        ],
        Suite::Parameterization => vec![
            row("linear", &|c| c.depth.mode = DepthMode::Linear),
            row("log-e", &|c| c.depth.mode = DepthMode::LogBase(std::f64::consts::E)),
            row("log-10", &|c| c.depth.mode = DepthMode::LogBase(10.0)),
        ],
        Suite::Samples => {
            let s = base.eval.samples.max(2);
            vec![
                Variant { label: "s=1".into(), cfg: base.clone(), samples: 1, global_keep: base.eval.global_keep },
                Variant { label: format!("s={s}"), cfg: base.clone(), samples: s, global_keep: base.eval.global_keep },
            ]
        }
        Suite::GlobalDropout => [1.0, 0.5, 0.25, 0.1]
            .into_iter()
            .map(|keep| Variant {
                label: format!("{}%", (keep * 100.0) as usize),
                cfg: base.clone(),
                samples: base.eval.samples,
                global_keep: keep,
            })
            .collect(),
    }
}

/// Trains a fresh model with `cfg` for `cfg.train.steps` steps.
pub fn train_run(cfg: &RunConfig, train: &[DatasetEntry]) -> Result<Trainer> {
    let mut t = Trainer::new(cfg.clone())?;
    while t.step < cfg.train.steps {
        t.train_step(train)?;
    }
    Ok(t)
}

/// Mean per-image metrics over `val` against dense ground truth. Image `i`
/// samples with seed `seed + i`.
pub fn evaluate_model(
    model: &GrinModel,
    cfg: &RunConfig,
    val: &[DatasetEntry],
    opts: &InferOptions,
) -> Result<MetricsReport> {
    let reports = val
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let o = InferOptions { seed: opts.seed.wrapping_add(i as u64), ..*opts };
            let pred = infer_depth(model, cfg, &e.scene.image, &e.scene.camera, &o)?;
            evaluate(&pred.depth.data, &e.scene.depth.data, cfg.eval.cap, cfg.eval.scale_align)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::mean(&reports)
}

/// Mean RMSE per kept fraction over `val`, ranking pixels by sample spread.
pub fn confidence_model(
    model: &GrinModel,
    cfg: &RunConfig,
    val: &[DatasetEntry],
    opts: &InferOptions,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut acc = vec![0.0; fractions.len()];
    for (i, e) in val.iter().enumerate() {
        let o = InferOptions { seed: opts.seed.wrapping_add(i as u64), ..*opts };
        let pred = infer_depth(model, cfg, &e.scene.image, &e.scene.camera, &o)?;
        let curve =
            confidence_curve(&pred.depth.data, &pred.uncertainty.data, &e.scene.depth.data, cfg.eval.cap, fractions)?;
        for (a, (_, r)) in acc.iter_mut().zip(curve) {
            *a += r;
        }
    }
    let n = val.len().max(1) as f64;
    Ok(fractions.iter().zip(acc).map(|(&f, a)| (f, a / n)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// One report per seed, in seed order.
    pub reports: Vec<MetricsReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub suite: Suite,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Seeds where `metric` of row `a` is strictly below that of row `b`.
    pub fn wins(&self, a: &str, b: &str, metric: fn(&MetricsReport) -> f64) -> Result<usize> {
        let find = |l: &str| self.row(l).ok_or_else(|| Error::InvalidArgument(format!("no row {l:?}")));
        let (ra, rb) = (find(a)?, find(b)?);
        Ok(ra.reports.iter().zip(&rb.reports).filter(|(x, y)| metric(x) < metric(y)).count())
    }

    /// Tab-separated table: one line per row and seed, then per-row means.
    pub fn table(&self) -> String {
        let mut out = format!("# suite {}\nvariant\tseed\t{}\n", self.suite.name(), MetricsReport::HEADER);
        for row in &self.rows {
            for (seed, r) in self.seeds.iter().zip(&row.reports) {
                out.push_str(&format!("{}\t{seed}\t{}\n", row.label, r.tsv()));
            }
        }
        for row in &self.rows {
            if let Ok(m) = MetricsReport::mean(&row.reports) {
                out.push_str(&format!("{}\tmean\t{}\n", row.label, m.tsv()));
            }
        }
        out
    }
}

/// Trains every distinct configuration of `suite` once per seed and
/// evaluates each variant on `val`. `progress` receives one line per run.
pub fn run_suite(
    suite: Suite,
    base: &RunConfig,
    train: &[DatasetEntry],
    val: &[DatasetEntry],
    seeds: &[u64],
    mut progress: impl FnMut(&str),
) -> Result<AblationReport> {
    let vars = variants(suite, base);
    let mut rows: Vec<AblationRow> =
        vars.iter().map(|v| AblationRow { label: v.label.clone(), reports: vec![] }).collect();
    for &seed in seeds {
        let mut trained: Vec<(RunConfig, GrinModel)> = Vec::new();
        for (v, row) in vars.iter().zip(&mut rows) {
            let mut cfg = v.cfg.clone();
            cfg.train.seed = seed;
            let model = match trained.iter().find(|(c, _)| *c == cfg) {
                Some((_, m)) => m.clone(),
                None => {
                    let t = train_run(&cfg, train)?;
                    let m = t.eval_model(cfg.eval.raw_weights)?;
                    trained.push((cfg.clone(), m.clone()));
                    m
                }
            };
            let opts = InferOptions { samples: v.samples, seed, global_keep: v.global_keep };
            let report = evaluate_model(&model, &cfg, val, &opts)?;
            progress(&format!("{}\t{seed}\t{}", v.label, report.tsv()));
            row.reports.push(report);
        }
    }
    Ok(AblationReport { suite, seeds: seeds.to_vec(), rows })
}
