//! Experiment configuration, read from a TOML file.
//!
//! Relative paths inside the file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use metarl::envs::{EnvDistribution, EnvKind};
use metarl::evalreport::{DistTag, Method};
use metarl::learnedalgos::{FeatureSet, UpdateRuleKind, DEFAULT_CLIP_EPS};
use metarl::metadistill::{DistillConfig, StudentSize, SymDistillConfig};
use metarl::metaes::EsConfig;
use metarl::metallm::LlmEndpoint;
use metarl::rltrain::PpoConfig;
use metarl::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Handcrafted drift and inner rule on every test set.
    Baseline,
    /// Produce a learned algorithm artifact.
    MetaTrain,
    /// Train with a stored artifact on every test set.
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    #[default]
    Lpo,
    OpenFf,
    NoFeatures,
}

impl AlgorithmKind {
    pub fn feature_set(self) -> Option<FeatureSet> {
        match self {
            AlgorithmKind::Lpo => None,
            AlgorithmKind::OpenFf => Some(FeatureSet::OpenFf),
            AlgorithmKind::NoFeatures => Some(FeatureSet::NoFeatures),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaMethod {
    BlackboxEs,
    DistillSame,
    DistillSmaller,
    DistillSymbolic,
    LlmProposal,
}

impl MetaMethod {
    pub fn method(self) -> Method {
        match self {
            MetaMethod::BlackboxEs => Method::BlackboxEs,
            MetaMethod::DistillSame => Method::DistillSame,
            MetaMethod::DistillSmaller => Method::DistillSmaller,
            MetaMethod::DistillSymbolic => Method::DistillSymbolic,
            MetaMethod::LlmProposal => Method::LlmProposal,
        }
    }
}

/// A block of evaluation environments: `n_envs` instances drawn from `dist`
/// with `RngStream::new(env_seed, i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSet {
    pub tag: DistTag,
    pub dist: EnvDistribution,
    #[serde(default = "one")]
    pub n_envs: usize,
    #[serde(default)]
    pub env_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerNetConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_scale")]
    pub output_scale: f64,
    #[serde(default = "default_scale")]
    pub noise_scale: f64,
}

impl Default for OptimizerNetConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            output_scale: default_scale(),
            noise_scale: default_scale(),
        }
    }
}

/// Candidate scoring during distillation and proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlEvalConfig {
    #[serde(default = "default_eval_seeds")]
    pub n_seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// `lr` input bound in symbolic optimizers.
    #[serde(default = "default_symbolic_lr")]
    pub symbolic_lr: f64,
}

impl Default for RlEvalConfig {
    fn default() -> Self {
        Self {
            n_seeds: default_eval_seeds(),
            base_seed: 0,
            symbolic_lr: default_symbolic_lr(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    pub budget: usize,
    pub warm_start_name: String,
    pub warm_start_code: String,
    /// Live endpoint; the key comes from the environment variable it names.
    #[serde(default)]
    pub endpoint: Option<LlmEndpoint>,
    /// JSON array of canned replies, used instead of `endpoint`.
    #[serde(default)]
    pub mock_responses: Option<PathBuf>,
    #[serde(default = "default_max_invalid")]
    pub max_consecutive_invalid: usize,
}

fn one() -> usize {
    1
}
fn default_hidden() -> usize {
    16
}
fn default_scale() -> f64 {
    1e-3
}
fn default_eval_seeds() -> usize {
    4
}
fn default_symbolic_lr() -> f64 {
    1e-3
}
fn default_max_invalid() -> usize {
    3
}
fn default_workers() -> usize {
    1
}
fn default_clip() -> f64 {
    DEFAULT_CLIP_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub stage: Stage,
    #[serde(default)]
    pub algorithm: AlgorithmKind,
    /// Required for `meta_train`; labels the records of `evaluate`.
    #[serde(default)]
    pub meta_method: Option<MetaMethod>,
    pub out_dir: PathBuf,
    /// Training seeds for evaluation runs; the first one also seeds
    /// meta-training.
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Meta-training distribution.
    #[serde(default)]
    pub train_env: Option<EnvDistribution>,
    #[serde(default)]
    pub test: Vec<TestSet>,
    /// Full inner-loop settings; defaults to the preset for the first
    /// environment kind in use.
    #[serde(default)]
    pub ppo: Option<PpoConfig>,
    #[serde(default)]
    pub total_timesteps: Option<usize>,
    /// Update rule paired with drift functions.
    #[serde(default)]
    pub inner_rule: Option<UpdateRuleKind>,
    #[serde(default = "default_clip")]
    pub clip_eps: f64,
    #[serde(default)]
    pub optimizer_net: OptimizerNetConfig,
    #[serde(default)]
    pub rl_eval: RlEvalConfig,
    /// Artifact evaluated by the `evaluate` stage.
    #[serde(default)]
    pub artifact: Option<PathBuf>,
    /// Artifact distilled by the distillation methods.
    #[serde(default)]
    pub teacher: Option<PathBuf>,
    #[serde(default)]
    pub es: Option<EsConfig>,
    #[serde(default)]
    pub distill: Option<DistillConfig>,
    #[serde(default)]
    pub symbolic: Option<SymDistillConfig>,
    #[serde(default)]
    pub llm: Option<LlmConfig>,
}

/// Fill generator parameters left out of a gridworld distribution.
pub fn resolve_dist(d: &EnvDistribution) -> EnvDistribution {
    match (&d.grid, d.kind) {
        (None, EnvKind::GridId | EnvKind::GridOod) => EnvDistribution::from_kind(d.kind),
        _ => d.clone(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse `path` and resolve relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        for p in [&mut self.artifact, &mut self.teacher].into_iter().flatten() {
            fix(p);
        }
        if let Some(m) = self.llm.as_mut().and_then(|l| l.mock_responses.as_mut()) {
            fix(m);
        }
        if let Some(d) = self.train_env.as_mut() {
            *d = resolve_dist(d);
        }
        for t in &mut self.test {
            t.dist = resolve_dist(&t.dist);
        }
    }

    /// Drift functions train with this rule; Adam at 3e-2 unless set.
    pub fn inner_rule(&self) -> UpdateRuleKind {
        self.inner_rule.clone().unwrap_or_else(|| UpdateRuleKind::adam(3e-2))
    }

    pub fn ppo_for(&self, kind: EnvKind) -> PpoConfig {
        let mut p = self.ppo.clone().unwrap_or_else(|| match kind {
            EnvKind::Cartpole => PpoConfig::cartpole(),
            EnvKind::GridId | EnvKind::GridOod => PpoConfig::gridworld(),
        });
        if let Some(t) = self.total_timesteps {
            p.total_timesteps = t;
        }
        p.clip_eps = self.clip_eps;
        p
    }

    pub fn student_size(&self) -> Option<StudentSize> {
        match self.meta_method {
            Some(MetaMethod::DistillSame) => Some(StudentSize::Same),
            Some(MetaMethod::DistillSmaller) => Some(StudentSize::Smaller),
            _ => None,
        }
    }

    fn need<T>(&self, field: &str, v: &Option<T>) -> Result<()> {
        if v.is_none() {
            return Err(Error::Config(format!("`{field}` is required for this stage")));
        }
        Ok(())
    }

    fn need_file(field: &str, p: &Option<PathBuf>) -> Result<()> {
        match p {
            None => Err(Error::Config(format!("`{field}` is required for this stage"))),
            Some(p) if !p.exists() => Err(Error::Config(format!("`{field}`: file `{}` does not exist", p.display()))),
            Some(_) => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("`workers` must be >= 1".into()));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::Config(format!("`clip_eps` must lie in (0, 1), got {}", self.clip_eps)));
        }
        self.inner_rule().validate()?;
        if let Some(p) = &self.ppo {
            p.validate()?;
        }
        match self.stage {
            Stage::Baseline | Stage::Evaluate => {
                if self.test.is_empty() {
                    return Err(Error::Config("`test` needs at least one entry".into()));
                }
                for (i, t) in self.test.iter().enumerate() {
                    if t.n_envs == 0 {
                        return Err(Error::Config(format!("`test[{i}].n_envs` must be >= 1")));
                    }
                    t.dist.validate()?;
                }
                if self.stage == Stage::Evaluate {
                    self.need("meta_method", &self.meta_method)?;
                    Self::need_file("artifact", &self.artifact)?;
                }
            }
            Stage::MetaTrain => {
                self.need("meta_method", &self.meta_method)?;
                self.need("train_env", &self.train_env)?;
                if let Some(d) = &self.train_env {
                    d.validate()?;
                }
                if self.rl_eval.n_seeds == 0 {
                    return Err(Error::Config("`rl_eval.n_seeds` must be >= 1".into()));
                }
                match self.meta_method.unwrap() {
                    MetaMethod::BlackboxEs => {
                        self.need("es", &self.es)?;
                        self.es.as_ref().unwrap().validate()?;
                    }
                    MetaMethod::DistillSame | MetaMethod::DistillSmaller => {
                        Self::need_file("teacher", &self.teacher)?;
                        if let Some(d) = &self.distill {
                            d.validate()?;
                        }
                    }
                    MetaMethod::DistillSymbolic => {
                        Self::need_file("teacher", &self.teacher)?;
                        if let Some(s) = &self.symbolic {
                            s.validate()?;
                        }
                    }
                    MetaMethod::LlmProposal => {
                        self.need("llm", &self.llm)?;
                        let l = self.llm.as_ref().unwrap();
                        match (&l.endpoint, &l.mock_responses) {
                            (Some(_), None) => {}
                            (None, Some(_)) => Self::need_file("llm.mock_responses", &l.mock_responses)?,
                            _ => {
                                return Err(Error::Config(
                                    "`llm` needs exactly one of `endpoint` and `mock_responses`".into(),
                                ))
                            }
                        }
                        if self.algorithm == AlgorithmKind::NoFeatures {
                            return Err(Error::Config("llm_proposal supports `lpo` and `open_ff` only".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
