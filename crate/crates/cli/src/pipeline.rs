//! Stage execution for `metarl run`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use metarl::envs::{sample_env, EnvDistribution, EnvInstance};
use metarl::evalreport::{write_costs_csv, write_records_csv, CostRecord, Method, Phase, RunRecord};
use metarl::learnedalgos::{init_lpo_near_ppo, lpo_spec, Artifact, DriftFunction, FeatureSet, UpdateRuleKind};
use metarl::metadistill::{
    distill_blackbox, distill_symbolic, DistillConfig, RlEvalTask, SymDistillConfig, SyntheticInputSpec, TargetKind,
    Teacher,
};
use metarl::metaes::{meta_train_es, write_history_csv, AlgorithmTemplate, RlFitness};
use metarl::metallm::{propose_loop, ChatModel, HttpChatModel, LoopConfig, MockModel, ProposalKind, ProposalRecord};
use metarl::numcore::{MlpParams, RngStream};
use metarl::rltrain::{train_agent, write_curves_csv, EnvSource, TrainResult};
use metarl::symdsl::print_expr;
use metarl::{Error, Result};

use crate::config::{AlgorithmKind, MetaMethod, RunConfig, Stage};

pub const RECORDS_FILE: &str = "records.csv";
pub const COSTS_FILE: &str = "costs.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARTIFACT_FILE: &str = "algorithm.json";

const META_STREAM: u64 = 0x6d65_7461;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub stage: Stage,
    pub algorithm: AlgorithmKind,
    pub meta_method: Option<MetaMethod>,
    pub config_sha256: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub meta_seed: u64,
    /// Environment steps spent by this invocation.
    pub env_steps: u64,
    /// Artifact produced (meta_train) or consumed (evaluate).
    pub artifact: Option<PathBuf>,
    pub files: Vec<String>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Load, validate and execute the config at `path`. `workers` overrides the
/// configured worker count.
pub fn run_config_file(path: &Path, workers: Option<usize>) -> Result<Manifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(w) = workers {
        cfg.workers = w;
    }
    run(&cfg, &sha256_hex(&bytes))
}

pub fn run(cfg: &RunConfig, config_sha256: &str) -> Result<Manifest> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    pool.install(|| {
        let out = match cfg.stage {
            Stage::Baseline => {
                let d = DriftFunction::ppo(cfg.clip_eps);
                evaluate(cfg, &d, &cfg.inner_rule(), Method::HandcraftedBaseline)?
            }
            Stage::Evaluate => {
                let path = cfg.artifact.as_ref().unwrap();
                let (d, r) = algorithm_from_artifact(cfg, Artifact::load(path)?);
                let mut o = evaluate(cfg, &d, &r, cfg.meta_method.unwrap().method())?;
                o.artifact = Some(path.clone());
                o
            }
            Stage::MetaTrain => meta_train(cfg)?,
        };
        let manifest = Manifest {
            name: cfg.name.clone(),
            stage: cfg.stage,
            algorithm: cfg.algorithm,
            meta_method: cfg.meta_method,
            config_sha256: config_sha256.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: cfg.seeds.clone(),
            meta_seed: cfg.seeds[0],
            env_steps: out.env_steps,
            artifact: out.artifact,
            files: out.files,
            config: cfg.clone(),
        };
        std::fs::write(cfg.out_dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(manifest)
    })
}

struct StageOutput {
    env_steps: u64,
    artifact: Option<PathBuf>,
    files: Vec<String>,
}

/// Drift functions pair with the configured inner rule; optimizers with the
/// clip drift.
pub fn algorithm_from_artifact(cfg: &RunConfig, a: Artifact) -> (DriftFunction, UpdateRuleKind) {
    match a {
        Artifact::Drift(d) => (d, cfg.inner_rule()),
        Artifact::Optimizer(k) => (DriftFunction::ppo(cfg.clip_eps), k),
    }
}

struct Job {
    test: usize,
    env_index: usize,
    env_id: String,
    env: EnvInstance,
    seed: u64,
}

fn jobs(cfg: &RunConfig) -> Result<Vec<Job>> {
    let mut out = Vec::new();
    for (ti, t) in cfg.test.iter().enumerate() {
        for i in 0..t.n_envs {
            let env = sample_env(&t.dist, &mut RngStream::new(t.env_seed, i as u64))?;
            let env_id = if t.n_envs == 1 {
                t.dist.kind.name().to_string()
            } else {
                format!("{}-{i}", t.dist.kind.name())
            };
            for &seed in &cfg.seeds {
                out.push(Job {
                    test: ti,
                    env_index: i,
                    env_id: env_id.clone(),
                    env: env.clone(),
                    seed,
                });
            }
        }
    }
    Ok(out)
}

/// Train once per (test environment, seed) and write records, curves and
/// the test-phase cost line.
fn evaluate(cfg: &RunConfig, drift: &DriftFunction, rule: &UpdateRuleKind, method: Method) -> Result<StageOutput> {
    let start = Instant::now();
    let jobs = jobs(cfg)?;
    let results: Vec<Result<TrainResult>> = jobs
        .par_iter()
        .map(|j| {
            let ppo = cfg.ppo_for(cfg.test[j.test].dist.kind);
            train_agent(&ppo, &EnvSource::Instance(j.env.clone()), drift, rule, j.seed)
        })
        .collect();
    let mut results_ok = Vec::with_capacity(results.len());
    for r in results {
        results_ok.push(r?);
    }
    let records: Vec<RunRecord> = jobs
        .iter()
        .zip(&results_ok)
        .map(|(j, r)| RunRecord {
            method,
            env_id: j.env_id.clone(),
            dist: cfg.test[j.test].tag,
            seed: j.seed,
            final_return: r.final_return,
            env_steps: r.env_steps as u64,
        })
        .collect();
    let mut files = vec![RECORDS_FILE.to_string()];
    write_records_csv(&cfg.out_dir.join(RECORDS_FILE), &records)?;
    let curve_dir = cfg.out_dir.join("curves");
    std::fs::create_dir_all(&curve_dir)?;
    let mut k = 0;
    while k < jobs.len() {
        let (t, e) = (jobs[k].test, jobs[k].env_index);
        let mut runs = Vec::new();
        while k < jobs.len() && jobs[k].test == t && jobs[k].env_index == e {
            runs.push((jobs[k].seed, &results_ok[k]));
            k += 1;
        }
        let name = format!("curves/{}_{}.csv", cfg.test[t].tag.name(), jobs[k - 1].env_id);
        write_curves_csv(&cfg.out_dir.join(&name), &runs)?;
        files.push(name);
    }
    let env_steps: u64 = records.iter().map(|r| r.env_steps).sum();
    write_costs_csv(
        &cfg.out_dir.join(COSTS_FILE),
        &[CostRecord {
            method,
            phase: Phase::Test,
            env_steps,
            wall_time_s: start.elapsed().as_secs_f64(),
        }],
    )?;
    files.push(COSTS_FILE.to_string());
    Ok(StageOutput {
        env_steps,
        artifact: None,
        files,
    })
}

fn load_teacher(cfg: &RunConfig) -> Result<(Teacher, Artifact)> {
    let a = Artifact::load(cfg.teacher.as_ref().unwrap())?;
    let t = match &a {
        Artifact::Drift(d) => Teacher::from_drift(d)?,
        Artifact::Optimizer(k) => Teacher::from_rule(k)?,
    };
    Ok((t, a))
}

fn eval_task(cfg: &RunConfig, train: &EnvDistribution, kind: TargetKind, teacher: Option<&Artifact>) -> RlEvalTask {
    let mut task = RlEvalTask {
        kind,
        ppo: cfg.ppo_for(train.kind),
        dist: train.clone(),
        n_seeds: cfg.rl_eval.n_seeds,
        base_seed: cfg.rl_eval.base_seed,
        drift_rule: cfg.inner_rule(),
        clip_eps: cfg.clip_eps,
        feature_set: cfg.algorithm.feature_set().unwrap_or(FeatureSet::OpenFf),
        output_scale: cfg.optimizer_net.output_scale,
        noise_scale: cfg.optimizer_net.noise_scale,
        symbolic_lr: cfg.rl_eval.symbolic_lr,
    };
    if let Some(Artifact::Optimizer(UpdateRuleKind::LearnedBlackbox {
        feature_set,
        output_scale,
        noise_scale,
        ..
    })) = teacher
    {
        task.feature_set = *feature_set;
        task.output_scale = *output_scale;
        task.noise_scale = *noise_scale;
    }
    task
}

fn save_json<T: Serialize>(cfg: &RunConfig, name: &str, v: &T, files: &mut Vec<String>) -> Result<()> {
    std::fs::write(cfg.out_dir.join(name), serde_json::to_string_pretty(v)?)?;
    files.push(name.to_string());
    Ok(())
}

fn meta_train(cfg: &RunConfig) -> Result<StageOutput> {
    let start = Instant::now();
    let method = cfg.meta_method.unwrap();
    let train = cfg.train_env.clone().unwrap();
    let rng = RngStream::new(cfg.seeds[0], META_STREAM);
    let mut files = Vec::new();
    let (artifact, env_steps) = match method {
        MetaMethod::BlackboxEs => {
            let es = cfg.es.clone().unwrap();
            let (template, init) = match cfg.algorithm.feature_set() {
                None => (
                    AlgorithmTemplate::Lpo { rule: cfg.inner_rule() },
                    init_lpo_near_ppo(&lpo_spec(), cfg.clip_eps, &rng.derive(0))?.values,
                ),
                Some(fs) => {
                    let spec = fs.default_spec(cfg.optimizer_net.hidden);
                    let init = MlpParams::init(spec.clone(), true, 1.0, &mut rng.derive(0)).values;
                    (
                        AlgorithmTemplate::Optimizer {
                            spec,
                            feature_set: fs,
                            output_scale: cfg.optimizer_net.output_scale,
                            noise_scale: cfg.optimizer_net.noise_scale,
                            clip_eps: cfg.clip_eps,
                        },
                        init,
                    )
                }
            };
            let fitness = RlFitness {
                template: template.clone(),
                ppo: cfg.ppo_for(train.kind),
                dist: train.clone(),
                seeds: es.fitness_seeds_per_member,
            };
            let out = meta_train_es(&es, &fitness, init, &rng.derive(1))?;
            write_history_csv(&cfg.out_dir.join("es_history.csv"), &out.history)?;
            files.push("es_history.csv".into());
            let (d, r) = template.build(&out.final_state.mean)?;
            let a = match cfg.algorithm {
                AlgorithmKind::Lpo => Artifact::Drift(d),
                _ => Artifact::Optimizer(r),
            };
            (a, out.env_steps)
        }
        MetaMethod::DistillSame | MetaMethod::DistillSmaller => {
            let (teacher, ta) = load_teacher(cfg)?;
            let task = eval_task(cfg, &train, teacher.kind(), Some(&ta));
            let size = cfg.student_size().unwrap();
            let dc = cfg.distill.clone().unwrap_or_else(|| match teacher.kind() {
                TargetKind::Drift => DistillConfig::drift(size),
                TargetKind::Optimizer => DistillConfig {
                    input: SyntheticInputSpec::optimizer(256, task.feature_set),
                    ..DistillConfig::drift(size)
                },
            });
            let dc = DistillConfig { student: size, ..dc };
            let out = distill_blackbox(&teacher, &dc, &task, &rng)?;
            save_json(cfg, "distill_log.json", &(&out.log, &out.abandoned, out.selected), &mut files)?;
            let a = match teacher.kind() {
                TargetKind::Drift => Artifact::Drift(DriftFunction::blackbox(out.student)?),
                TargetKind::Optimizer => Artifact::Optimizer(UpdateRuleKind::LearnedBlackbox {
                    net: out.student,
                    feature_set: task.feature_set,
                    output_scale: task.output_scale,
                    noise_scale: task.noise_scale,
                }),
            };
            (a, out.env_steps)
        }
        MetaMethod::DistillSymbolic => {
            let (teacher, ta) = load_teacher(cfg)?;
            let task = eval_task(cfg, &train, teacher.kind(), Some(&ta));
            let sc = cfg.symbolic.clone().unwrap_or_else(|| match teacher.kind() {
                TargetKind::Drift => SymDistillConfig::drift(),
                TargetKind::Optimizer => SymDistillConfig::optimizer(task.feature_set),
            });
            let out = distill_symbolic(&teacher, &sc, &task, &rng)?;
            save_json(cfg, "symbolic_rounds.json", &out.history, &mut files)?;
            let a = match teacher.kind() {
                TargetKind::Drift => Artifact::Drift(DriftFunction::symbolic(out.best)?),
                TargetKind::Optimizer => Artifact::Optimizer(UpdateRuleKind::Symbolic {
                    expr: out.best,
                    lr: task.symbolic_lr,
                }),
            };
            (a, out.env_steps)
        }
        MetaMethod::LlmProposal => {
            let l = cfg.llm.as_ref().unwrap();
            let (kind, target) = match cfg.algorithm {
                AlgorithmKind::Lpo => (ProposalKind::Drift, TargetKind::Drift),
                _ => (ProposalKind::OptimizerFf, TargetKind::Optimizer),
            };
            let task = eval_task(cfg, &train, target, None);
            let mut model: Box<dyn ChatModel> = match (&l.endpoint, &l.mock_responses) {
                (_, Some(p)) => Box::new(MockModel::from_file(p)?),
                (Some(e), None) => Box::new(HttpChatModel::new(e.clone())?),
                (None, None) => unreachable!("validated"),
            };
            let warm = ProposalRecord::new(&l.warm_start_name, "", &l.warm_start_code);
            let lc = LoopConfig {
                budget: l.budget,
                max_consecutive_invalid: l.max_consecutive_invalid,
                ..LoopConfig::new(l.budget)
            };
            let out = propose_loop(model.as_mut(), kind, warm, &task, &lc, &rng)?;
            out.conversation.save(&cfg.out_dir.join("conversation.json"))?;
            files.push("conversation.json".into());
            let expr = out.best.expr(kind)?;
            let a = match kind {
                ProposalKind::Drift => Artifact::Drift(DriftFunction::symbolic(expr)?),
                ProposalKind::OptimizerFf => Artifact::Optimizer(UpdateRuleKind::Symbolic {
                    expr,
                    lr: task.symbolic_lr,
                }),
            };
            (a, out.env_steps)
        }
    };
    let path = cfg.out_dir.join(ARTIFACT_FILE);
    artifact.save(&path)?;
    files.push(ARTIFACT_FILE.into());
    if let Artifact::Drift(DriftFunction::Symbolic { expr }) | Artifact::Optimizer(UpdateRuleKind::Symbolic { expr, .. }) =
        &artifact
    {
        std::fs::write(cfg.out_dir.join("algorithm.txt"), print_expr(expr) + "\n")?;
        files.push("algorithm.txt".into());
    }
    let env_steps = env_steps as u64;
    write_costs_csv(
        &cfg.out_dir.join(COSTS_FILE),
        &[CostRecord {
            method: method.method(),
            phase: Phase::MetaTrain,
            env_steps,
            wall_time_s: start.elapsed().as_secs_f64(),
        }],
    )?;
    files.push(COSTS_FILE.into());
    Ok(StageOutput {
        env_steps,
        artifact: Some(path),
        files,
    })
}
