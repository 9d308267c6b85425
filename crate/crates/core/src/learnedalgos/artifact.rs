//! On-disk container for drift functions and update rules.
//!
//! The container is JSON tagged by `kind` and `variant`. Network weights go
//! to a sibling checkpoint file and the container records its file name;
//! symbolic expressions are stored as DSL text.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DriftFunction, FeatureSet, UpdateRuleKind};
use crate::error::{Error, Result};
use crate::numcore::checkpoint;
use crate::symdsl::{parse, print_expr, Signature};

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Drift(DriftFunction),
    Optimizer(UpdateRuleKind),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum DriftRecord {
    PpoClip { eps: f64 },
    Blackbox { checkpoint: String },
    Symbolic { expr: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum OptimizerRecord {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    LearnedBlackbox {
        checkpoint: String,
        feature_set: FeatureSet,
        output_scale: f64,
        noise_scale: f64,
    },
    Symbolic {
        expr: String,
        lr: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Drift(DriftRecord),
    Optimizer(OptimizerRecord),
}

fn checkpoint_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("mlpc")
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

impl Artifact {
    /// Write the container to `path`, plus `<stem>.mlpc` for network weights.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = checkpoint_path(path);
        let record = match self {
            Artifact::Drift(d) => Record::Drift(match d {
                DriftFunction::PpoClip { eps } => DriftRecord::PpoClip { eps: *eps },
                DriftFunction::Blackbox { net } => {
                    checkpoint::save(net, &ck)?;
                    DriftRecord::Blackbox {
                        checkpoint: file_name(&ck),
                    }
                }
                DriftFunction::Symbolic { expr } => DriftRecord::Symbolic {
                    expr: print_expr(expr),
                },
            }),
            Artifact::Optimizer(k) => Record::Optimizer(match k {
                UpdateRuleKind::Sgd { lr } => OptimizerRecord::Sgd { lr: *lr },
                UpdateRuleKind::Adam { lr, beta1, beta2, eps } => OptimizerRecord::Adam {
                    lr: *lr,
                    beta1: *beta1,
                    beta2: *beta2,
                    eps: *eps,
                },
                UpdateRuleKind::LearnedBlackbox {
                    net,
                    feature_set,
                    output_scale,
                    noise_scale,
                } => {
                    checkpoint::save(net, &ck)?;
                    OptimizerRecord::LearnedBlackbox {
                        checkpoint: file_name(&ck),
                        feature_set: *feature_set,
                        output_scale: *output_scale,
                        noise_scale: *noise_scale,
                    }
                }
                UpdateRuleKind::Symbolic { expr, lr } => OptimizerRecord::Symbolic {
                    expr: print_expr(expr),
                    lr: *lr,
                },
            }),
        };
        std::fs::write(path, serde_json::to_string_pretty(&record)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let record: Record = serde_json::from_str(&text)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let artifact = match record {
            Record::Drift(d) => Artifact::Drift(match d {
                DriftRecord::PpoClip { eps } => DriftFunction::PpoClip { eps },
                DriftRecord::Blackbox { checkpoint: c } => DriftFunction::Blackbox {
                    net: checkpoint::load(&dir.join(c))?,
                },
                DriftRecord::Symbolic { expr } => DriftFunction::Symbolic {
                    expr: parse(&expr, &Signature::drift())?,
                },
            }),
            Record::Optimizer(o) => Artifact::Optimizer(match o {
                OptimizerRecord::Sgd { lr } => UpdateRuleKind::Sgd { lr },
                OptimizerRecord::Adam { lr, beta1, beta2, eps } => UpdateRuleKind::Adam { lr, beta1, beta2, eps },
                OptimizerRecord::LearnedBlackbox {
                    checkpoint: c,
                    feature_set,
                    output_scale,
                    noise_scale,
                } => UpdateRuleKind::LearnedBlackbox {
                    net: checkpoint::load(&dir.join(c))?,
                    feature_set,
                    output_scale,
                    noise_scale,
                },
                OptimizerRecord::Symbolic { expr, lr } => UpdateRuleKind::Symbolic {
                    expr: parse(&expr, &Signature::optimizer())?,
                    lr,
                },
            }),
        };
        match &artifact {
            Artifact::Drift(d) => d.validate()?,
            Artifact::Optimizer(k) => k.validate()?,
        }
        Ok(artifact)
    }

    pub fn into_drift(self) -> Result<DriftFunction> {
        match self {
            Artifact::Drift(d) => Ok(d),
            Artifact::Optimizer(_) => Err(Error::Format("artifact holds an optimizer, not a drift".into())),
        }
    }

    pub fn into_optimizer(self) -> Result<UpdateRuleKind> {
        match self {
            Artifact::Optimizer(k) => Ok(k),
            Artifact::Drift(_) => Err(Error::Format("artifact holds a drift, not an optimizer".into())),
        }
    }
}
