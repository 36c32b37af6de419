//! Synthetic Gaussian-mixture benchmark pairs with a controllable shift type.
//!
//! Every sample has a latent class axis and a task-agnostic "style" vector.
//! Two feature spaces are rendered from the same latents:
//!
//! - `pre` (task-agnostic): task coordinates `sep·e_c + σ_pre·n`, followed by
//!   the style vector verbatim, so any style shift is fully visible.
//! - `ft` (task-specific): task coordinates `sep·e_c + σ_ft·n` with
//!   `σ_ft < σ_pre` (tight class clusters), followed by the style vector
//!   shrunk by `agnostic_shrink` plus fresh isotropic noise that does not
//!   depend on the input. The noise is what makes the shrink lossy; a pure
//!   rescaling would be invisible to a Mahalanobis detector.
//!
//! OOD modes:
//! - shifted-manifold: ID class means, style translated by `nss_offset`
//!   (in units of the ID style std) along the all-ones direction and
//!   scaled by `nss_scale`.
//! - held-out-class: ID style distribution, class axis `C`, which never
//!   appears in training.
//!
//! Randomness comes from a single `ChaCha20Rng` seeded with
//! `seed_from_u64(seed)`; normals are `rand_distr::StandardNormal`. Samples
//! are drawn in a fixed order (train, val, test, ood; class-major), so a
//! seed fully determines the output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, FeatureSet, LogitSet, SampleId, Split, TokenLogProbSet};
use crate::datastore::{
    write_token_logprobs, EvalRefs, IdRefs, OodRefs, PairConfig, ShiftType, SplitRefs, Stored,
};
use crate::error::{OodError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodMode {
    /// Non-semantic shift: same classes, shifted style.
    ShiftedManifold,
    /// Semantic shift: an unseen class.
    HeldOutClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub dim: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub ood_count: usize,
    pub mode: OodMode,
    pub class_separation: f64,
    pub pre_within_class_std: f64,
    pub ft_within_class_std: f64,
    pub nss_offset: f64,
    pub nss_scale: f64,
    pub agnostic_shrink: f64,
    pub ft_noise_std: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// d=16, C=4, 500 training samples per class.
    pub fn new(mode: OodMode, seed: u64) -> Self {
        Self {
            dim: 16,
            classes: 4,
            train_per_class: 500,
            eval_per_class: 100,
            ood_count: 400,
            mode,
            class_separation: 3.0,
            pre_within_class_std: 1.0,
            ft_within_class_std: 0.25,
            nss_offset: 10.0,
            nss_scale: 1.5,
            agnostic_shrink: 10.0,
            ft_noise_std: 1.0,
            seed,
        }
    }

    /// Task coordinates: one axis per class plus one for the held-out class.
    pub fn task_dims(&self) -> usize {
        self.classes + 1
    }

    pub fn agnostic_dims(&self) -> usize {
        self.dim - self.task_dims()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 1 {
            return Err(OodError::invalid("synthbench needs at least one class"));
        }
        if self.dim < self.classes + 2 {
            return Err(OodError::invalid(format!(
                "dim {} too small for {} classes (need classes + 2)",
                self.dim, self.classes
            )));
        }
        if self.train_per_class == 0 || self.eval_per_class == 0 || self.ood_count == 0 {
            return Err(OodError::invalid("sample counts must be positive"));
        }
        let scales = [
            ("class_separation", self.class_separation),
            ("pre_within_class_std", self.pre_within_class_std),
            ("ft_within_class_std", self.ft_within_class_std),
            ("nss_scale", self.nss_scale),
            ("agnostic_shrink", self.agnostic_shrink),
            ("ft_noise_std", self.ft_noise_std),
        ];
        for (name, v) in scales {
            if v <= 0.0 || !v.is_finite() {
                return Err(OodError::invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.nss_offset < 0.0 || !self.nss_offset.is_finite() {
            return Err(OodError::invalid("nss_offset must be non-negative"));
        }
        Ok(())
    }
}

/// Train/val/test ID sets plus the OOD test set for one feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSplits {
    pub train: FeatureSet,
    pub val: FeatureSet,
    pub test: FeatureSet,
    pub ood: FeatureSet,
}

/// Logits or token log-probs for the scored splits.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSplits<T> {
    pub val: T,
    pub test: T,
    pub ood: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub spec: SynthSpec,
    pub pre: SpaceSplits,
    pub ft: SpaceSplits,
    pub logits: EvalSplits<LogitSet>,
    pub tokens: EvalSplits<TokenLogProbSet>,
}

struct Sample {
    pre: Vec<f32>,
    ft: Vec<f32>,
    logits: Vec<f32>,
    logprobs: Vec<f64>,
}

struct Generator<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha20Rng,
}

impl Generator<'_> {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn sample(&mut self, class_axis: usize, shifted: bool) -> Sample {
        let s = self.spec;
        let t = s.task_dims();
        let m = s.agnostic_dims();

        let mut pre = Vec::with_capacity(s.dim);
        let mut ft = Vec::with_capacity(s.dim);
        let mut ft_task = Vec::with_capacity(t);
        for j in 0..t {
            let mean = if j == class_axis {
                s.class_separation
            } else {
                0.0
            };
            let n_pre = self.normal();
            let n_ft = self.normal();
            pre.push((mean + s.pre_within_class_std * n_pre) as f32);
            let v = mean + s.ft_within_class_std * n_ft;
            ft_task.push(v);
            ft.push(v as f32);
        }
        let offset = if shifted {
            s.nss_offset / (m as f64).sqrt()
        } else {
            0.0
        };
        let scale = if shifted { s.nss_scale } else { 1.0 };
        for _ in 0..m {
            let style = offset + scale * self.normal();
            let noise = self.normal();
            pre.push(style as f32);
            ft.push((style / s.agnostic_shrink + s.ft_noise_std * noise) as f32);
        }

        // Gaussian discriminant on the ft task coordinates, unit variance
        let logits = (0..s.classes)
            .map(|c| {
                let d2: f64 = ft_task
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| {
                        let mu = if j == c { s.class_separation } else { 0.0 };
                        (v - mu).powi(2)
                    })
                    .sum();
                (-0.5 * d2) as f32
            })
            .collect();

        // per-token surprisal; style shift makes text less predictable
        let base = match (shifted, class_axis == s.classes) {
            (true, _) => 3.0,
            (false, true) => 2.2,
            (false, false) => 2.0,
        };
        let len = self.rng.random_range(8..=24);
        let logprobs = (0..len)
            .map(|_| -(base + 0.5 * self.normal().abs()))
            .collect();

        Sample {
            pre,
            ft,
            logits,
            logprobs,
        }
    }

    fn split(
        &mut self,
        prefix: &str,
        labels: &[u32],
        class_axes: &[usize],
        shifted: bool,
    ) -> Result<Rendered> {
        let samples: Vec<Sample> = class_axes
            .iter()
            .map(|&c| self.sample(c, shifted))
            .collect();
        let ids: Vec<SampleId> = (0..samples.len())
            .map(|i| SampleId::Str(format!("{prefix}-{i}")))
            .collect();
        let rows = |f: fn(&Sample) -> &Vec<f32>| -> Result<Matrix> {
            let data: Vec<Vec<f32>> = samples.iter().map(|s| f(s).clone()).collect();
            Matrix::from_rows(&data)
        };
        Ok(Rendered {
            pre: rows(|s| &s.pre)?,
            ft: rows(|s| &s.ft)?,
            logits: rows(|s| &s.logits)?,
            logprobs: samples.into_iter().map(|s| s.logprobs).collect(),
            labels: labels.to_vec(),
            ids,
        })
    }
}

struct Rendered {
    pre: Matrix,
    ft: Matrix,
    logits: Matrix,
    logprobs: Vec<Vec<f64>>,
    labels: Vec<u32>,
    ids: Vec<SampleId>,
}

impl Rendered {
    fn features(&self, seed: u64, split: Split) -> Result<(FeatureSet, FeatureSet)> {
        let make = |m: &Matrix, kind: FeatureKind, name: &str| -> Result<FeatureSet> {
            FeatureSet::new(m.clone())
                .with_ids(self.ids.clone())?
                .with_labels(self.labels.clone())
                .map(|fs| {
                    fs.with_kind(kind)
                        .with_split(split)
                        .with_model_name(format!("synthbench-{name}-seed{seed}"))
                })
        };
        Ok((
            make(&self.pre, FeatureKind::LastCls, "pre")?,
            make(&self.ft, FeatureKind::FinetunedCls, "ft")?,
        ))
    }
}

fn class_major(classes: usize, per_class: usize) -> (Vec<u32>, Vec<usize>) {
    let axes: Vec<usize> = (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect();
    (axes.iter().map(|&c| c as u32).collect(), axes)
}

/// Generates a pair in memory.
pub fn generate(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let mut g = Generator {
        spec,
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
    };
    let (train_labels, train_axes) = class_major(spec.classes, spec.train_per_class);
    let (eval_labels, eval_axes) = class_major(spec.classes, spec.eval_per_class);

    let train = g.split("train", &train_labels, &train_axes, false)?;
    let val = g.split("val", &eval_labels, &eval_axes, false)?;
    let test = g.split("test", &eval_labels, &eval_axes, false)?;
    let ood = match spec.mode {
        OodMode::ShiftedManifold => {
            let axes: Vec<usize> = (0..spec.ood_count).map(|i| i % spec.classes).collect();
            let labels: Vec<u32> = axes.iter().map(|&c| c as u32).collect();
            g.split("ood", &labels, &axes, true)?
        }
        OodMode::HeldOutClass => {
            let axes = vec![spec.classes; spec.ood_count];
            let labels = vec![spec.classes as u32; spec.ood_count];
            g.split("ood", &labels, &axes, false)?
        }
    };

    let seed = spec.seed;
    let (pre_train, ft_train) = train.features(seed, Split::Train)?;
    let (pre_val, ft_val) = val.features(seed, Split::Val)?;
    let (pre_test, ft_test) = test.features(seed, Split::Test)?;
    let (pre_ood, ft_ood) = ood.features(seed, Split::Test)?;

    let logits = |r: &Rendered| LogitSet::with_ids(r.logits.clone(), r.ids.clone());
    let tokens = |r: &Rendered| TokenLogProbSet::new(r.ids.clone(), r.logprobs.clone());

    Ok(SynthPair {
        spec: spec.clone(),
        pre: SpaceSplits {
            train: pre_train,
            val: pre_val,
            test: pre_test,
            ood: pre_ood,
        },
        ft: SpaceSplits {
            train: ft_train,
            val: ft_val,
            test: ft_test,
            ood: ft_ood,
        },
        logits: EvalSplits {
            val: logits(&val)?,
            test: logits(&test)?,
            ood: logits(&ood)?,
        },
        tokens: EvalSplits {
            val: tokens(&val)?,
            test: tokens(&test)?,
            ood: tokens(&ood)?,
        },
    })
}

pub const PAIR_FILE_NAME: &str = "synth.pair.json";

impl SynthPair {
    pub fn pair_name(&self) -> String {
        let mode = match self.spec.mode {
            OodMode::ShiftedManifold => "shifted-manifold",
            OodMode::HeldOutClass => "held-out-class",
        };
        format!("synth-{mode}-seed{}", self.spec.seed)
    }

    /// Writes all files plus `spec.json` and the pair config into `dir`;
    /// returns the pair config path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        for (space, s) in [("pre", &self.pre), ("ft", &self.ft)] {
            s.train.save(&dir.join(format!("{space}_train.oodx")))?;
            s.val.save(&dir.join(format!("{space}_val.oodx")))?;
            s.test.save(&dir.join(format!("{space}_test.oodx")))?;
            s.ood.save(&dir.join(format!("{space}_ood.oodx")))?;
        }
        self.logits.val.save(&dir.join("logits_val.oodx"))?;
        self.logits.test.save(&dir.join("logits_test.oodx"))?;
        self.logits.ood.save(&dir.join("logits_ood.oodx"))?;
        write_token_logprobs(&dir.join("tokens_val.jsonl"), &self.tokens.val)?;
        write_token_logprobs(&dir.join("tokens_test.jsonl"), &self.tokens.test)?;
        write_token_logprobs(&dir.join("tokens_ood.jsonl"), &self.tokens.ood)?;

        let mut spec_json = serde_json::to_string_pretty(&self.spec)?;
        spec_json.push('\n');
        fs::write(dir.join("spec.json"), spec_json)?;

        let split = |space: &str| SplitRefs {
            train: format!("{space}_train.oodx").into(),
            val: format!("{space}_val.oodx").into(),
            test: format!("{space}_test.oodx").into(),
        };
        let cfg = PairConfig {
            name: self.pair_name(),
            shift_type: match self.spec.mode {
                OodMode::ShiftedManifold => ShiftType::NonSemantic,
                OodMode::HeldOutClass => ShiftType::Semantic,
            },
            id: IdRefs {
                pre: split("pre"),
                ft: split("ft"),
                logits: Some(EvalRefs {
                    val: Some("logits_val.oodx".into()),
                    test: "logits_test.oodx".into(),
                }),
                tokens: Some(EvalRefs {
                    val: Some("tokens_val.jsonl".into()),
                    test: "tokens_test.jsonl".into(),
                }),
            },
            ood: OodRefs {
                pre: "pre_ood.oodx".into(),
                ft: "ft_ood.oodx".into(),
                logits: Some("logits_ood.oodx".into()),
                tokens: Some("tokens_ood.jsonl".into()),
            },
            base_dir: dir.to_path_buf(),
        };
        let path = dir.join(PAIR_FILE_NAME);
        cfg.save(&path)?;
        Ok(path)
    }
}
