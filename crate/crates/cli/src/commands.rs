use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use log::warn;
use oodx_core::datastore::{read_token_logprobs, validate_pair, PairConfig, PairIssue, Stored};
use oodx_core::detectors::{
    d2u, energy, msp, ppl_score, scaled_msp, EnergyForm, KnnIndex, LofModel, DEFAULT_K,
    DEFAULT_K_LOF, DEFAULT_TEMPERATURE,
};
use oodx_core::gaussian::DEFAULT_SHRINKAGE;
use oodx_core::synthbench::{self, OodMode, SynthSpec};
use oodx_core::{
    calibrate, fuse, Aggregator, CalibrationStats, EvalReport, FeatureSet, GaussianModel, LogitSet,
    Normalization, OodError, ScoreVector,
};
use serde::Serialize;

use crate::error::{At, CmdError, CmdResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelDetector {
    Md,
    Knn,
    Lof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Detector {
    Md,
    Knn,
    Lof,
    Msp,
    Scaling,
    Energy,
    D2u,
    Ppl,
}

impl Detector {
    fn needs_model(self) -> bool {
        matches!(self, Detector::Md | Detector::Knn | Detector::Lof)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibMode {
    Standardize,
    Minmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormArg {
    Standardize,
    Minmax,
    None,
}

impl From<NormArg> for Normalization {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Standardize => Normalization::Standardize,
            NormArg::Minmax => Normalization::Minmax,
            NormArg::None => Normalization::None,
        }
    }
}

/// Parses `mean`, `max` or `weighted:w1,w2,...`.
pub fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    match s {
        "mean" => Ok(Aggregator::Mean),
        "max" => Ok(Aggregator::Max),
        _ => {
            let Some(list) = s.strip_prefix("weighted:") else {
                return Err(format!("expected mean, max or weighted:w1,w2; got {s:?}"));
            };
            list.split(',')
                .map(|w| {
                    w.trim()
                        .parse::<f64>()
                        .map_err(|e| format!("weight {w:?}: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Aggregator::Weighted)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Training features (.oodx feature-set with labels for md)
    #[arg(long)]
    pub train: PathBuf,
    /// Output model path
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    pub detector: ModelDetector,
    /// Ridge ε added as ε·tr(Σ)/d·I (md)
    #[arg(long, default_value_t = DEFAULT_SHRINKAGE)]
    pub shrinkage: f64,
    /// Neighbors averaged by knn
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    /// Neighborhood size for lof
    #[arg(long, default_value_t = DEFAULT_K_LOF)]
    pub k_lof: usize,
    /// L2-normalize rows before lof
    #[arg(long)]
    pub normalize: bool,
}

pub fn cmd_fit(a: &FitArgs) -> CmdResult<()> {
    let train = FeatureSet::load(&a.train).at(&a.train)?;
    match a.detector {
        ModelDetector::Md => GaussianModel::fit(&train, a.shrinkage)
            .at(&a.train)?
            .save(&a.out)
            .at(&a.out),
        ModelDetector::Knn => KnnIndex::fit_features(&train, a.k)
            .at(&a.train)?
            .save(&a.out)
            .at(&a.out),
        ModelDetector::Lof => LofModel::fit_features(&train, a.k_lof, a.normalize)
            .at(&a.train)?
            .save(&a.out)
            .at(&a.out),
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub detector: Detector,
    /// Fitted model (md, knn, lof only)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Features, logits, or token log-probs (.jsonl) depending on the detector
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Softmax temperature (scaling only; default 1000)
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Use -logsumexp instead of -Σexp (energy only)
    #[arg(long)]
    pub energy_logsumexp: bool,
}

impl ScoreArgs {
    fn validate(&self) -> CmdResult<()> {
        let d = self.detector;
        if d.needs_model() != self.model.is_some() {
            return Err(CmdError::usage(if d.needs_model() {
                format!("--detector {d:?} requires --model")
            } else {
                format!("--detector {d:?} takes no --model")
            }));
        }
        if self.temperature.is_some() && d != Detector::Scaling {
            return Err(CmdError::usage(
                "--temperature applies only to --detector scaling",
            ));
        }
        if self.energy_logsumexp && d != Detector::Energy {
            return Err(CmdError::usage(
                "--energy-logsumexp applies only to --detector energy",
            ));
        }
        Ok(())
    }
}

pub fn cmd_score(a: &ScoreArgs) -> CmdResult<()> {
    a.validate()?;
    let input = &a.input;
    let scores = match a.detector {
        Detector::Md | Detector::Knn | Detector::Lof => {
            let model = a.model.as_deref().expect("validated");
            let features = FeatureSet::load(input).at(input)?;
            match a.detector {
                Detector::Md => GaussianModel::load(model).at(model)?.score_batch(&features),
                Detector::Knn => KnnIndex::load(model).at(model)?.score_batch(&features),
                _ => LofModel::load(model).at(model)?.score_batch(&features),
            }
            .at(input)?
        }
        Detector::Ppl => ppl_score(&read_token_logprobs(input).at(input)?).at(input)?,
        _ => {
            let logits = LogitSet::load(input).at(input)?;
            match a.detector {
                Detector::Msp => msp(&logits),
                Detector::Scaling => {
                    scaled_msp(&logits, a.temperature.unwrap_or(DEFAULT_TEMPERATURE)).at(input)?
                }
                Detector::D2u => d2u(&logits),
                _ => {
                    let form = if a.energy_logsumexp {
                        EnergyForm::LogSumExp
                    } else {
                        EnergyForm::Verbatim
                    };
                    let flagged = energy(&logits, form);
                    if !flagged.is_clean() {
                        warn!(
                            "{}: {} rows hit the energy exponent clamp",
                            input.display(),
                            flagged.flagged_rows.len()
                        );
                    }
                    flagged.value
                }
            }
        }
    };
    scores.save(&a.out).at(&a.out)
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    /// ID validation scores
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Normalization the stats will be used for
    #[arg(long, value_enum, default_value = "standardize")]
    pub mode: CalibMode,
    /// Split label recorded in the stats
    #[arg(long, default_value = "val")]
    pub split: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(OodError::from)
        .at(path)?;
    text.push('\n');
    fs::write(path, text).map_err(OodError::from).at(path)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path).map_err(OodError::from).at(path)?;
    serde_json::from_str(&text).map_err(OodError::from).at(path)
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> CmdResult<()> {
    let scores = ScoreVector::load(&a.scores).at(&a.scores)?;
    let stats = match calibrate(&scores, &a.split) {
        Ok(s) => s,
        Err(OodError::DegenerateCalibration { stats }) => {
            warn!(
                "{}: zero spread (mean {}); normalized values will be 0",
                a.scores.display(),
                stats.mean
            );
            stats
        }
        Err(e) => return Err(e).at(&a.scores),
    };
    let mode = match a.mode {
        CalibMode::Standardize => Normalization::Standardize,
        CalibMode::Minmax => Normalization::Minmax,
    };
    if stats.is_degenerate(mode) {
        warn!(
            "{}: stats are degenerate for {:?}",
            a.scores.display(),
            a.mode
        );
    }
    write_json(&a.out, &stats)
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    /// Component score files, e.g. pre-space then fine-tuned-space MD
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Calibration stats, one per component (not needed with --norm none)
    #[arg(long, num_args = 1..)]
    pub calib: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// mean, max, or weighted:w1,w2
    #[arg(long, value_parser = parse_aggregator, default_value = "mean")]
    pub agg: Aggregator,
    #[arg(long, value_enum, default_value = "standardize")]
    pub norm: NormArg,
}

pub fn cmd_fuse(a: &FuseArgs) -> CmdResult<()> {
    let mode = Normalization::from(a.norm);
    if mode != Normalization::None && a.calib.len() != a.scores.len() {
        return Err(CmdError::usage(format!(
            "{} score files need {} --calib files, got {}",
            a.scores.len(),
            a.scores.len(),
            a.calib.len()
        )));
    }
    let scores = a
        .scores
        .iter()
        .map(|p| ScoreVector::load(p).at(p))
        .collect::<CmdResult<Vec<_>>>()?;
    let stats = a
        .calib
        .iter()
        .map(|p| read_json::<CalibrationStats>(p))
        .collect::<CmdResult<Vec<_>>>()?;
    let score_refs: Vec<&ScoreVector> = scores.iter().collect();
    let stat_refs: Vec<&CalibrationStats> = stats.iter().collect();
    let fused = fuse(&score_refs, &stat_refs, a.agg.clone(), mode).at(&a.scores[0])?;
    fused.scores.save(&a.out).at(&a.out)
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Scores on ID test data
    #[arg(long)]
    pub id: PathBuf,
    /// Scores on OOD test data
    #[arg(long)]
    pub ood: PathBuf,
    /// Report path (JSON)
    #[arg(long)]
    pub out: PathBuf,
    /// Pair name shown in the table row
    #[arg(long, default_value = "pair")]
    pub pair: String,
    /// Detector name for the report (defaults to the scores' detector tag)
    #[arg(long)]
    pub label: Option<String>,
}

/// Writes the report and returns its table row.
pub fn cmd_eval(a: &EvalArgs) -> CmdResult<String> {
    let id = ScoreVector::load(&a.id).at(&a.id)?;
    let ood = ScoreVector::load(&a.ood).at(&a.ood)?;
    let mut report = EvalReport::evaluate(&a.pair, &id, &ood).at(&a.id)?;
    if let Some(label) = &a.label {
        report.detector = label.clone();
    }
    write_json(&a.out, &report)?;
    Ok(report.table_row())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ShiftedManifold,
    HeldOutClass,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 500)]
    pub train_per_class: usize,
    /// Validation and test samples per class
    #[arg(long, default_value_t = 100)]
    pub eval_per_class: usize,
    #[arg(long, default_value_t = 400)]
    pub ood_count: usize,
}

/// Returns the written pair config path.
pub fn cmd_synth(a: &SynthArgs) -> CmdResult<PathBuf> {
    let mode = match a.mode {
        ModeArg::ShiftedManifold => OodMode::ShiftedManifold,
        ModeArg::HeldOutClass => OodMode::HeldOutClass,
    };
    let spec = SynthSpec {
        dim: a.dim,
        classes: a.classes,
        train_per_class: a.train_per_class,
        eval_per_class: a.eval_per_class,
        ood_count: a.ood_count,
        ..SynthSpec::new(mode, a.seed)
    };
    let pair = synthbench::generate(&spec)?;
    pair.write(&a.out).at(&a.out)
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub pair: PathBuf,
}

pub fn cmd_validate(a: &ValidateArgs) -> CmdResult<Vec<PairIssue>> {
    let cfg = PairConfig::load(&a.pair).at(&a.pair)?;
    Ok(validate_pair(&cfg))
}
