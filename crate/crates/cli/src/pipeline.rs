//! `oodx pipeline`: fit, score, calibrate, fuse and evaluate every selected
//! detector on one pair, through the same file-based commands a user would
//! run by hand.
//!
//! Output layout under `--out`:
//! - `models/<detector>.oodx`
//! - `scores/<detector>_<split>.oodx` for split in val, test, ood
//! - `calib/<detector>.json`
//! - `reports/<detector>.json`
//! - `summary.txt`, one table row per detector

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use oodx_core::datastore::{validate_pair, PairConfig};
use oodx_core::detectors::{DEFAULT_K, DEFAULT_K_LOF};
use oodx_core::gaussian::DEFAULT_SHRINKAGE;
use oodx_core::{Aggregator, OodError};

use crate::commands::{
    cmd_calibrate, cmd_eval, cmd_fit, cmd_fuse, cmd_score, parse_aggregator, CalibMode,
    CalibrateArgs, Detector, EvalArgs, FitArgs, FuseArgs, ModelDetector, NormArg, ScoreArgs,
};
use crate::error::{At, CmdError, CmdResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineDetector {
    MdPre,
    MdFt,
    Gnome,
    KnnPre,
    KnnFt,
    LofPre,
    LofFt,
    Msp,
    Scaling,
    Energy,
    D2u,
    Ppl,
}

impl PipelineDetector {
    fn name(self) -> &'static str {
        match self {
            PipelineDetector::MdPre => "md_pre",
            PipelineDetector::MdFt => "md_ft",
            PipelineDetector::Gnome => "gnome",
            PipelineDetector::KnnPre => "knn_pre",
            PipelineDetector::KnnFt => "knn_ft",
            PipelineDetector::LofPre => "lof_pre",
            PipelineDetector::LofFt => "lof_ft",
            PipelineDetector::Msp => "msp",
            PipelineDetector::Scaling => "scaling",
            PipelineDetector::Energy => "energy",
            PipelineDetector::D2u => "d2u",
            PipelineDetector::Ppl => "ppl",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Pair configuration (.pair.json)
    #[arg(long)]
    pub pair: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "md-pre,md-ft,gnome"
    )]
    pub detectors: Vec<PipelineDetector>,
    #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
    pub shrinkage: f64,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_K_LOF)]
    pub k_lof: usize,
    /// L2-normalize rows before lof
    #[arg(long)]
    pub lof_normalize: bool,
    /// Softmax temperature for scaling
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub energy_logsumexp: bool,
    /// GNOME aggregator: mean, max, or weighted:w_pre,w_ft
    #[arg(long, value_parser = parse_aggregator, default_value = "mean")]
    pub agg: Aggregator,
    /// GNOME normalization
    #[arg(long, value_enum, default_value = "standardize")]
    pub norm: NormArg,
}

#[derive(Clone, Copy)]
enum Space {
    Pre,
    Ft,
}

struct Run<'a> {
    args: &'a PipelineArgs,
    cfg: PairConfig,
    rows: Vec<String>,
}

impl Run<'_> {
    fn dir(&self, sub: &str) -> PathBuf {
        self.args.out.join(sub)
    }

    fn model(&self, name: &str) -> PathBuf {
        self.dir("models").join(format!("{name}.oodx"))
    }

    fn scores(&self, name: &str, split: &str) -> PathBuf {
        self.dir("scores").join(format!("{name}_{split}.oodx"))
    }

    fn features(&self, space: Space, split: &str) -> PathBuf {
        let (refs, ood) = match space {
            Space::Pre => (&self.cfg.id.pre, &self.cfg.ood.pre),
            Space::Ft => (&self.cfg.id.ft, &self.cfg.ood.ft),
        };
        let rel = match split {
            "train" => &refs.train,
            "val" => &refs.val,
            "test" => &refs.test,
            _ => ood,
        };
        self.cfg.resolve(rel)
    }

    fn eval(&mut self, name: &str) -> CmdResult<()> {
        let row = cmd_eval(&EvalArgs {
            id: self.scores(name, "test"),
            ood: self.scores(name, "ood"),
            out: self.dir("reports").join(format!("{name}.json")),
            pair: self.cfg.name.clone(),
            label: Some(name.to_owned()),
        })?;
        self.rows.push(row);
        Ok(())
    }

    fn fit_and_score(
        &self,
        name: &str,
        detector: ModelDetector,
        space: Space,
        splits: &[&str],
    ) -> CmdResult<()> {
        let a = self.args;
        cmd_fit(&FitArgs {
            train: self.features(space, "train"),
            out: self.model(name),
            detector,
            shrinkage: a.shrinkage,
            k: a.k,
            k_lof: a.k_lof,
            normalize: a.lof_normalize,
        })?;
        for split in splits {
            cmd_score(&ScoreArgs {
                detector: match detector {
                    ModelDetector::Md => Detector::Md,
                    ModelDetector::Knn => Detector::Knn,
                    ModelDetector::Lof => Detector::Lof,
                },
                model: Some(self.model(name)),
                input: self.features(space, split),
                out: self.scores(name, split),
                temperature: None,
                energy_logsumexp: false,
            })?;
        }
        Ok(())
    }

    fn score_inputs(&self, detector: Detector, name: &str) -> CmdResult<()> {
        let (id, ood) = match detector {
            Detector::Ppl => (
                self.cfg.id.tokens.as_ref().map(|r| &r.test),
                self.cfg.ood.tokens.as_ref(),
            ),
            _ => (
                self.cfg.id.logits.as_ref().map(|r| &r.test),
                self.cfg.ood.logits.as_ref(),
            ),
        };
        let (Some(id), Some(ood)) = (id, ood) else {
            let what = if detector == Detector::Ppl {
                "token log-prob"
            } else {
                "logit"
            };
            return Err(OodError::InvalidInput(format!(
                "{name} needs {what} files for ID test and OOD in the pair config"
            )))
            .at(&self.args.pair);
        };
        for (split, rel) in [("test", id), ("ood", ood)] {
            cmd_score(&ScoreArgs {
                detector,
                model: None,
                input: self.cfg.resolve(rel),
                out: self.scores(name, split),
                temperature: (detector == Detector::Scaling)
                    .then_some(self.args.temperature)
                    .flatten(),
                energy_logsumexp: detector == Detector::Energy && self.args.energy_logsumexp,
            })?;
        }
        Ok(())
    }

    fn gnome(&mut self) -> CmdResult<()> {
        let a = self.args;
        let components = ["md_pre", "md_ft"];
        let calib: Vec<PathBuf> = components
            .iter()
            .map(|c| self.dir("calib").join(format!("{c}.json")))
            .collect();
        for (c, out) in components.iter().zip(&calib) {
            cmd_calibrate(&CalibrateArgs {
                scores: self.scores(c, "val"),
                out: out.clone(),
                mode: match a.norm {
                    NormArg::Minmax => CalibMode::Minmax,
                    _ => CalibMode::Standardize,
                },
                split: "val".into(),
            })?;
        }
        for split in ["test", "ood"] {
            cmd_fuse(&FuseArgs {
                scores: components.iter().map(|c| self.scores(c, split)).collect(),
                calib: if a.norm == NormArg::None {
                    Vec::new()
                } else {
                    calib.clone()
                },
                out: self.scores("gnome", split),
                agg: a.agg.clone(),
                norm: a.norm,
            })?;
        }
        self.eval("gnome")
    }
}

fn create_dir(path: &Path) -> CmdResult<()> {
    fs::create_dir_all(path).map_err(OodError::from).at(path)
}

/// Runs the pipeline and returns the table rows in detector order.
pub fn cmd_pipeline(a: &PipelineArgs) -> CmdResult<Vec<String>> {
    let cfg = PairConfig::load(&a.pair).at(&a.pair)?;
    if let Some(issue) = validate_pair(&cfg).into_iter().next() {
        return Err(CmdError {
            error: OodError::InvalidInput(format!("pair check failed: {}", issue.message)),
            path: Some(
                issue
                    .path
                    .map(|p| cfg.resolve(Path::new(&p)))
                    .unwrap_or(a.pair.clone()),
            ),
        });
    }
    let mut detectors = a.detectors.clone();
    detectors.dedup();
    for sub in ["models", "scores", "calib", "reports"] {
        create_dir(&a.out.join(sub))?;
    }
    let mut run = Run {
        args: a,
        cfg,
        rows: Vec::new(),
    };

    let gnome = detectors.contains(&PipelineDetector::Gnome);
    let md_splits: &[&str] = if gnome {
        &["val", "test", "ood"]
    } else {
        &["test", "ood"]
    };
    for (det, space, name) in [
        (PipelineDetector::MdPre, Space::Pre, "md_pre"),
        (PipelineDetector::MdFt, Space::Ft, "md_ft"),
    ] {
        if gnome || detectors.contains(&det) {
            run.fit_and_score(name, ModelDetector::Md, space, md_splits)?;
        }
    }

    for det in detectors {
        let name = det.name();
        match det {
            PipelineDetector::MdPre | PipelineDetector::MdFt => {}
            PipelineDetector::Gnome => {
                run.gnome()?;
                continue;
            }
            PipelineDetector::KnnPre => {
                run.fit_and_score(name, ModelDetector::Knn, Space::Pre, &["test", "ood"])?
            }
            PipelineDetector::KnnFt => {
                run.fit_and_score(name, ModelDetector::Knn, Space::Ft, &["test", "ood"])?
            }
            PipelineDetector::LofPre => {
                run.fit_and_score(name, ModelDetector::Lof, Space::Pre, &["test", "ood"])?
            }
            PipelineDetector::LofFt => {
                run.fit_and_score(name, ModelDetector::Lof, Space::Ft, &["test", "ood"])?
            }
            PipelineDetector::Msp => run.score_inputs(Detector::Msp, name)?,
            PipelineDetector::Scaling => run.score_inputs(Detector::Scaling, name)?,
            PipelineDetector::Energy => run.score_inputs(Detector::Energy, name)?,
            PipelineDetector::D2u => run.score_inputs(Detector::D2u, name)?,
            PipelineDetector::Ppl => run.score_inputs(Detector::Ppl, name)?,
        }
        run.eval(name)?;
    }

    let summary = a.out.join("summary.txt");
    let mut text = run.rows.join("\n");
    text.push('\n');
    fs::write(&summary, text)
        .map_err(OodError::from)
        .at(&summary)?;
    Ok(run.rows)
}
