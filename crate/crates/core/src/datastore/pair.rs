//! Benchmark pair configuration (`.pair.json`) and its consistency checks.
//!
//! Paths inside the file are relative to the file's own directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_token_logprobs, Stored};
use crate::data::{dense_class_count, FeatureSet, LogitSet, SampleId};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ShiftType {
    #[serde(rename = "NSS")]
    NonSemantic,
    #[serde(rename = "SS")]
    Semantic,
    #[serde(rename = "cross-task")]
    CrossTask,
    #[default]
    #[serde(rename = "unknown")]
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRefs {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

/// Files only needed at scoring time (logits, token log-probs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRefs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<PathBuf>,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdRefs {
    pub pre: SplitRefs,
    pub ft: SplitRefs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<EvalRefs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<EvalRefs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRefs {
    pub pre: PathBuf,
    pub ft: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub name: String,
    pub shift_type: ShiftType,
    pub id: IdRefs,
    pub ood: OodRefs,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl PairConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: PairConfig = serde_json::from_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Resolves a path from the config against the config's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IssueCode {
    Unreadable,
    DimensionMismatch,
    Alignment,
    MissingLabels,
    LabelsNotDense,
    LabelMismatch,
    ClassCountMismatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairIssue {
    pub code: IssueCode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub message: String,
}

struct Checker<'a> {
    cfg: &'a PairConfig,
    issues: Vec<PairIssue>,
}

impl Checker<'_> {
    fn push(&mut self, code: IssueCode, path: Option<&Path>, message: String) {
        self.issues.push(PairIssue {
            code,
            path: path.map(|p| p.display().to_string()),
            message,
        });
    }

    fn load<T: Stored>(&mut self, rel: &Path) -> Option<T> {
        let path = self.cfg.resolve(rel);
        match T::load(&path) {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(IssueCode::Unreadable, Some(rel), e.to_string());
                None
            }
        }
    }

    fn aligned(&mut self, what: &str, a: &[SampleId], b: &[SampleId], rel: &Path) {
        if a.len() != b.len() {
            self.push(
                IssueCode::Alignment,
                Some(rel),
                format!("{what}: {} vs {} samples", a.len(), b.len()),
            );
        } else if let Some(i) = a.iter().zip(b).position(|(x, y)| x != y) {
            self.push(
                IssueCode::Alignment,
                Some(rel),
                format!("{what}: id {} vs {} at position {i}", a[i], b[i]),
            );
        }
    }

    /// Loads one space's files and checks dims and training labels.
    /// Returns `[train, val, test, ood]` for alignment checks.
    fn space(&mut self, name: &str, refs: &SplitRefs, ood: &Path) -> [Option<FeatureSet>; 4] {
        let paths = [&refs.train, &refs.val, &refs.test, &ood.to_path_buf()];
        let sets = paths.map(|p| self.load::<FeatureSet>(p));
        let dims: Vec<(usize, &PathBuf)> = sets
            .iter()
            .zip(paths)
            .filter_map(|(s, p)| s.as_ref().map(|s| (s.dim(), p)))
            .collect();
        if let Some(&(d0, _)) = dims.first() {
            for &(d, p) in &dims[1..] {
                if d != d0 {
                    self.push(
                        IssueCode::DimensionMismatch,
                        Some(p),
                        format!("{name} space: dimension {d}, expected {d0}"),
                    );
                }
            }
        }
        if let Some(train) = &sets[0] {
            match &train.labels {
                None => self.push(
                    IssueCode::MissingLabels,
                    Some(&refs.train),
                    format!("{name} training features have no labels"),
                ),
                Some(labels) => {
                    if let Err(e) = dense_class_count(labels) {
                        self.push(IssueCode::LabelsNotDense, Some(&refs.train), e.to_string());
                    }
                }
            }
        }
        sets
    }
}

/// Checks a pair for readability, per-space dimension consistency, dense
/// training labels and id alignment between spaces. Never fails; problems
/// come back as issues.
pub fn validate_pair(cfg: &PairConfig) -> Vec<PairIssue> {
    let mut ck = Checker {
        cfg,
        issues: Vec::new(),
    };
    let pre = ck.space("pre", &cfg.id.pre, &cfg.ood.pre);
    let ft = ck.space("ft", &cfg.id.ft, &cfg.ood.ft);

    let names = ["train", "val", "test", "ood"];
    let ft_paths = [
        &cfg.id.ft.train,
        &cfg.id.ft.val,
        &cfg.id.ft.test,
        &cfg.ood.ft,
    ];
    for i in 0..4 {
        if let (Some(a), Some(b)) = (&pre[i], &ft[i]) {
            ck.aligned(
                &format!("{} split, pre vs ft", names[i]),
                &a.ids,
                &b.ids,
                ft_paths[i],
            );
        }
    }
    if let (Some(a), Some(b)) = (&pre[0], &ft[0]) {
        if a.labels.is_some() && b.labels.is_some() && a.labels != b.labels {
            ck.push(
                IssueCode::LabelMismatch,
                Some(&cfg.id.ft.train),
                "training labels differ between spaces".into(),
            );
        }
    }
    let classes = ft[0]
        .as_ref()
        .and_then(|t| t.labels.as_deref())
        .and_then(|l| dense_class_count(l).ok());

    let reference_ids = |i: usize| ft[i].as_ref().or(pre[i].as_ref()).map(|s| s.ids.clone());

    if let Some(logits) = &cfg.id.logits {
        let mut targets = vec![(2usize, logits.test.clone())];
        if let Some(v) = &logits.val {
            targets.push((1, v.clone()));
        }
        if let Some(o) = &cfg.ood.logits {
            targets.push((3, o.clone()));
        }
        for (i, rel) in targets {
            if let Some(l) = ck.load::<LogitSet>(&rel) {
                if let Some(ids) = reference_ids(i) {
                    ck.aligned(&format!("{} logits", names[i]), &ids, &l.ids, &rel);
                }
                if let Some(c) = classes {
                    if l.classes() != c {
                        ck.push(
                            IssueCode::ClassCountMismatch,
                            Some(&rel),
                            format!("{} logit columns, {c} training classes", l.classes()),
                        );
                    }
                }
            }
        }
    }

    if let Some(tokens) = &cfg.id.tokens {
        let mut targets = vec![(2usize, tokens.test.clone())];
        if let Some(v) = &tokens.val {
            targets.push((1, v.clone()));
        }
        if let Some(o) = &cfg.ood.tokens {
            targets.push((3, o.clone()));
        }
        for (i, rel) in targets {
            match read_token_logprobs(&cfg.resolve(&rel)) {
                Ok(t) => {
                    if let Some(ids) = reference_ids(i) {
                        ck.aligned(&format!("{} tokens", names[i]), &ids, &t.ids, &rel);
                    }
                }
                Err(e) => ck.push(IssueCode::Unreadable, Some(&rel), e.to_string()),
            }
        }
    }

    ck.issues
}
