//! The transfer experiment: train encoders, fit a collapse transform, train a
//! policy on one goal modality and evaluate it under every prompt set.

use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::grid::{build_dataset, generate_tasks_with, GridPairs, GridWorld, TaskSet, Trajectory};
use super::policy::{
    evaluate_policy, evaluate_random, reference_banks, train_policy, EvalConfig, GoalEncoder,
    GoalSource, PolicyConfig, PromptSet,
};
use crate::collapse::{fit_centralize, fit_delete, CollapseTransform};
use crate::contrastive::{train_encoders, EncoderArch, EncoderParams, EncoderTrainConfig};
use crate::corrupt::Noise;
use crate::diagnostics::{gap_report, matched_pair_similarity_matrix, write_csv};
use crate::embedding::{l2_norm, EmbeddingBank, Modality};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::rng::{domain, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub size: usize,
    pub distractors: usize,
    pub demos_per_task: usize,
    /// Fresh demonstrations used to fit collapse transforms and to measure
    /// alignment; never used for training.
    pub reference_demos_per_task: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 5,
            distractors: 2,
            demos_per_task: 20,
            reference_demos_per_task: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub visual_hidden: Vec<usize>,
    pub text_hidden: Vec<usize>,
    pub token_dim: usize,
    pub temperature: f64,
    pub activation: Activation,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub freeze_text_after: Option<usize>,
    pub max_grad_norm: Option<f64>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            visual_hidden: vec![64],
            text_hidden: vec![64],
            token_dim: 16,
            temperature: 0.1,
            activation: Activation::Tanh,
            steps: 4000,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            freeze_text_after: None,
            max_grad_norm: Some(5.0),
        }
    }
}

impl EncoderConfig {
    pub fn arch(&self, visual_input: usize, vocab_size: usize) -> EncoderArch {
        EncoderArch {
            visual_input,
            visual_hidden: self.visual_hidden.clone(),
            vocab_size,
            token_dim: self.token_dim,
            text_hidden: self.text_hidden.clone(),
            dim: self.dim,
            temperature: self.temperature,
            activation: self.activation,
        }
    }

    pub fn train(&self, seed: u64) -> EncoderTrainConfig {
        EncoderTrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            freeze_text_after: self.freeze_text_after,
            max_grad_norm: self.max_grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes_per_task: usize,
    pub horizon: usize,
    pub prompts: Vec<PromptSet>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            episodes_per_task: e.episodes_per_task,
            horizon: e.horizon,
            prompts: vec![PromptSet::Visual, PromptSet::Text, PromptSet::TextHeldout],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollapseKind {
    None,
    Centralize,
    Delete,
}

impl CollapseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CollapseKind::None => "none",
            CollapseKind::Centralize => "centralize",
            CollapseKind::Delete => "delete",
        }
    }
}

impl std::str::FromStr for CollapseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CollapseKind::None),
            "centralize" => Ok(CollapseKind::Centralize),
            "delete" => Ok(CollapseKind::Delete),
            other => Err(Error::Parameter(format!(
                "unknown collapse kind {other:?} (expected none, centralize or delete)"
            ))),
        }
    }
}

fn default_k() -> usize {
    1
}

/// One arm of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub collapse: CollapseKind,
    #[serde(default = "default_k")]
    pub delete_k: usize,
    /// Training-time corruption; `None` disables it.
    #[serde(default)]
    pub noise: Option<Noise>,
    pub train_modality: Modality,
    /// Norm of a constant offset added to every raw visual embedding.
    #[serde(default)]
    pub inject_gap_norm: f64,
}

impl Ablation {
    pub fn new(collapse: CollapseKind, noise: Option<Noise>, train_modality: Modality) -> Self {
        Self {
            collapse,
            delete_k: 1,
            noise,
            train_modality,
            inject_gap_norm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        if !(self.inject_gap_norm >= 0.0 && self.inject_gap_norm.is_finite()) {
            return Err(Error::Parameter(
                "inject_gap_norm must be finite and nonnegative".into(),
            ));
        }
        if self.collapse == CollapseKind::Delete && self.delete_k < 1 {
            return Err(Error::Parameter("delete_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn corrupt_kind(&self) -> &'static str {
        self.noise.as_ref().map_or("none", |n| n.kind_name())
    }

    pub fn strength(&self) -> f64 {
        self.noise.as_ref().map_or(0.0, |n| n.strength())
    }

    pub fn label(&self) -> String {
        let collapse = match self.collapse {
            CollapseKind::Delete => format!("delete{}", self.delete_k),
            c => c.as_str().to_string(),
        };
        let mut s = format!(
            "{collapse}/{}{}/{}",
            self.corrupt_kind(),
            self.noise
                .as_ref()
                .map_or(String::new(), |n| format!("={}", n.strength())),
            self.train_modality
        );
        if self.inject_gap_norm > 0.0 {
            s.push_str(&format!("/gap={}", self.inject_gap_norm));
        }
        s
    }
}

pub fn default_ablations() -> Vec<Ablation> {
    use CollapseKind::*;
    use Modality::*;
    let cos = |alpha| Some(Noise::Cosine { alpha });
    let gauss = |std| Some(Noise::Gaussian { std });
    let mut gap = Ablation::new(None, cos(0.2), Visual);
    gap.inject_gap_norm = 10.0;
    vec![
        Ablation::new(Centralize, cos(0.2), Visual),
        Ablation::new(Centralize, cos(0.2), Text),
        Ablation::new(Delete, cos(0.2), Visual),
        gap,
        Ablation::new(Centralize, cos(0.5), Visual),
        Ablation::new(Centralize, cos(0.8), Visual),
        Ablation::new(Centralize, gauss(0.01), Visual),
        Ablation::new(Centralize, gauss(0.1), Visual),
        Ablation::new(Centralize, gauss(1.0), Visual),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seeds: Vec<u64>,
    /// Worker threads for independent seeds; 0 picks one per seed.
    pub threads: usize,
    pub grid: GridConfig,
    pub encoder: EncoderConfig,
    /// `seed` is replaced by each run seed.
    pub policy: PolicyConfig,
    pub eval: EvalSection,
    /// The first ablation is the headline: its within-modality and
    /// cross-modality success populate the report summary.
    pub ablations: Vec<Ablation>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            threads: 0,
            grid: GridConfig::default(),
            encoder: EncoderConfig::default(),
            policy: PolicyConfig::default(),
            eval: EvalSection::default(),
            ablations: default_ablations(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.ablations.is_empty() {
            return Err(Error::Config("at least one ablation is required".into()));
        }
        if self.eval.prompts.is_empty() {
            return Err(Error::Config(
                "at least one evaluation prompt set is required".into(),
            ));
        }
        let g = self.grid.size;
        if g < 3 {
            return Err(Error::Config(format!(
                "grid.size must be at least 3, got {g}"
            )));
        }
        if self.grid.distractors > g * g {
            return Err(Error::Config(
                "grid.distractors exceeds the number of cells".into(),
            ));
        }
        if self.grid.demos_per_task == 0 || self.grid.reference_demos_per_task == 0 {
            return Err(Error::Config(
                "demos_per_task and reference_demos_per_task must be positive".into(),
            ));
        }
        if self.eval.horizon < 2 * (g - 1) {
            return Err(Error::Config(format!(
                "eval.horizon must be at least {} on a {g}x{g} grid",
                2 * (g - 1)
            )));
        }
        self.encoder
            .arch(2 * g * g, 1)
            .validate()
            .and_then(|_| self.encoder.train(0).validate())
            .map_err(|e| Error::Config(format!("encoder: {e}")))?;
        self.policy
            .validate()
            .map_err(|e| Error::Config(format!("policy: {e}")))?;
        for (i, a) in self.ablations.iter().enumerate() {
            a.validate()
                .map_err(|e| Error::Config(format!("ablations[{i}]: {e}")))?;
            if a.collapse == CollapseKind::Delete && a.delete_k >= self.encoder.dim {
                return Err(Error::Config(format!(
                    "ablations[{i}]: delete_k must be below encoder.dim ({})",
                    self.encoder.dim
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        if values.is_empty() {
            return Stat {
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stat { mean, std }
    }
}

/// Encoder quality on data never used for training: fresh demonstrations
/// against instructions from held-out templates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Alignment {
    pub retrieval_top1_v2t: f64,
    pub retrieval_top1_t2v: f64,
    pub matched_mean_cosine: f64,
    pub off_diagonal_mean_cosine: f64,
    pub gap_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub encoder_final_loss: f64,
    pub alignment: Alignment,
    pub chance_floor: f64,
    /// `success[ablation][prompt]`, in config order.
    pub success: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub ablation: String,
    pub collapse: CollapseKind,
    pub corrupt_kind: String,
    pub alpha_or_std: f64,
    pub train_modality: Modality,
    pub inject_gap_norm: f64,
    pub eval_modality: PromptSet,
    pub success_mean: f64,
    pub success_std: f64,
    pub per_seed: Vec<f64>,
    pub chance_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub within_modality_success: Stat,
    pub cross_modality_success: Stat,
    pub chance_floor: Stat,
    pub rows: Vec<TransferRow>,
    pub seeds: Vec<SeedSummary>,
    pub config: BenchConfig,
}

impl TransferReport {
    pub fn row(&self, ablation: usize, prompt: PromptSet) -> Option<&TransferRow> {
        let per = self.config.eval.prompts.len();
        self.rows[ablation * per..(ablation + 1) * per]
            .iter()
            .find(|r| r.eval_modality == prompt)
    }
}

/// Everything trained for one seed before the ablation arms diverge.
struct SeedSetup {
    tasks: TaskSet,
    dataset: Vec<Trajectory>,
    reference: Vec<Trajectory>,
    encoders: EncoderParams,
    final_loss: f64,
}

fn setup_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedSetup> {
    let world = GridWorld {
        size: cfg.grid.size,
        distractors: cfg.grid.distractors,
    };
    let tasks = generate_tasks_with(world, seed).map_err(|e| e.in_stage("generate tasks"))?;
    let dataset = build_dataset(&tasks, cfg.grid.demos_per_task, seed)
        .map_err(|e| e.in_stage("build dataset"))?;
    let reference = build_dataset(
        &tasks,
        cfg.grid.reference_demos_per_task,
        seed ^ 0x5EF5_7A11,
    )
    .map_err(|e| e.in_stage("build reference split"))?;
    let pairs = GridPairs::new(&tasks, &dataset).map_err(|e| e.in_stage("train encoders"))?;
    let arch = cfg.encoder.arch(world.observation_dim(), tasks.vocab.len());
    let training = train_encoders(&pairs, &arch, &cfg.encoder.train(seed))
        .map_err(|e| e.in_stage("train encoders"))?;
    Ok(SeedSetup {
        final_loss: training.loss_trace.last().copied().unwrap_or(f64::NAN),
        encoders: training.params,
        tasks,
        dataset,
        reference,
    })
}

/// Fresh visual goals against held-out-template instructions, raw encoder space.
pub fn measure_alignment(
    tasks: &TaskSet,
    demos: &[Trajectory],
    encoders: &EncoderParams,
) -> Result<Alignment> {
    let goals = GoalEncoder::new(encoders, None);
    let (bank_v, _) = reference_banks(tasks, demos, &goals)?;
    let mut bank_l = EmbeddingBank::new(Modality::Text, encoders.dim())?;
    for task in &tasks.tasks {
        for p in &task.heldout_paraphrases {
            bank_l.push(
                task.task_id.clone(),
                goals.raw(GoalSource::Tokens(p))?.values(),
            )?;
        }
    }
    let report = gap_report(&bank_v, &bank_l)?;
    let matrix = matched_pair_similarity_matrix(&bank_v, &bank_l)?;
    Ok(Alignment {
        retrieval_top1_v2t: report.retrieval_top1_v2t,
        retrieval_top1_t2v: report.retrieval_top1_t2v,
        matched_mean_cosine: matrix.diagonal_mean(),
        off_diagonal_mean_cosine: matrix.off_diagonal_mean(),
        gap_norm: report.gap_norm,
    })
}

fn injected_offset(dim: usize, norm: f64, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, &[domain::GAP_INJECT]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = l2_norm(&v);
    v.iter().map(|x| x * norm / n).collect()
}

fn run_ablation(
    cfg: &BenchConfig,
    setup: &SeedSetup,
    seed: u64,
    ablation: &Ablation,
) -> Result<Vec<f64>> {
    let offset = (ablation.inject_gap_norm > 0.0)
        .then(|| injected_offset(setup.encoders.dim(), ablation.inject_gap_norm, seed));
    let raw = GoalEncoder {
        encoders: &setup.encoders,
        transform: None,
        visual_offset: offset.as_deref(),
    };
    let transform: Option<CollapseTransform> = match ablation.collapse {
        CollapseKind::None => None,
        kind => {
            let (bank_v, bank_l) = reference_banks(&setup.tasks, &setup.reference, &raw)?;
            Some(match kind {
                CollapseKind::Centralize => fit_centralize(&bank_v, &bank_l)?,
                _ => fit_delete(&bank_v, &bank_l, ablation.delete_k)?,
            })
        }
    }
    .map(|t| t.with_fit_source("reference split"));
    let goals = GoalEncoder {
        transform: transform.as_ref(),
        ..raw
    };
    let policy_cfg = PolicyConfig {
        seed,
        ..cfg.policy.clone()
    };
    let policy = train_policy(
        &setup.tasks,
        &setup.dataset,
        &goals,
        ablation.noise.as_ref(),
        ablation.train_modality,
        &policy_cfg,
    )
    .map_err(|e| e.in_stage(format!("train policy ({})", ablation.label())))?;
    let eval_cfg = EvalConfig {
        episodes_per_task: cfg.eval.episodes_per_task,
        horizon: cfg.eval.horizon,
        seed,
    };
    cfg.eval
        .prompts
        .iter()
        .map(|&p| {
            evaluate_policy(&policy.params, &setup.tasks, p, &goals, &eval_cfg)
                .map(|r| r.success_rate)
                .map_err(|e| e.in_stage(format!("evaluate {} ({})", p.as_str(), ablation.label())))
        })
        .collect()
}

fn run_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedSummary> {
    let setup = setup_seed(cfg, seed)?;
    let alignment = measure_alignment(&setup.tasks, &setup.reference, &setup.encoders)
        .map_err(|e| e.in_stage("measure alignment"))?;
    let eval_cfg = EvalConfig {
        episodes_per_task: cfg.eval.episodes_per_task,
        horizon: cfg.eval.horizon,
        seed,
    };
    let chance_floor = evaluate_random(&setup.tasks, &eval_cfg)
        .map_err(|e| e.in_stage("chance floor"))?
        .success_rate;
    let success = cfg
        .ablations
        .iter()
        .map(|a| run_ablation(cfg, &setup, seed, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSummary {
        seed,
        encoder_final_loss: setup.final_loss,
        alignment,
        chance_floor,
        success,
    })
}

/// Runs every seed (concurrently when allowed) and aggregates in seed order.
pub fn run_transfer_experiment(cfg: &BenchConfig) -> Result<TransferReport> {
    cfg.validate()?;
    let threads = if cfg.threads == 0 {
        cfg.seeds.len()
    } else {
        cfg.threads
    };
    let mut seeds: Vec<Option<Result<SeedSummary>>> = (0..cfg.seeds.len()).map(|_| None).collect();
    for chunk in cfg
        .seeds
        .iter()
        .enumerate()
        .collect::<Vec<_>>()
        .chunks(threads.max(1))
    {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&(i, &seed)| (i, s.spawn(move || run_seed(cfg, seed))))
                .collect();
            for (i, h) in handles {
                seeds[i] = Some(h.join().expect("seed worker panicked"));
            }
        });
    }
    let seeds = seeds
        .into_iter()
        .zip(&cfg.seeds)
        .map(|(r, seed)| {
            r.expect("every seed ran")
                .map_err(|e| e.in_stage(format!("seed {seed}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(cfg, seeds))
}

fn aggregate(cfg: &BenchConfig, seeds: Vec<SeedSummary>) -> TransferReport {
    let chance: Vec<f64> = seeds.iter().map(|s| s.chance_floor).collect();
    let chance_floor = Stat::of(&chance);
    let mut rows = Vec::new();
    for (ai, a) in cfg.ablations.iter().enumerate() {
        for (pi, &p) in cfg.eval.prompts.iter().enumerate() {
            let per_seed: Vec<f64> = seeds.iter().map(|s| s.success[ai][pi]).collect();
            let stat = Stat::of(&per_seed);
            rows.push(TransferRow {
                ablation: a.label(),
                collapse: a.collapse,
                corrupt_kind: a.corrupt_kind().to_string(),
                alpha_or_std: a.strength(),
                train_modality: a.train_modality,
                inject_gap_norm: a.inject_gap_norm,
                eval_modality: p,
                success_mean: stat.mean,
                success_std: stat.std,
                per_seed,
                chance_floor: chance_floor.mean,
            });
        }
    }
    let headline = &cfg.ablations[0];
    let pick = |m: Modality| {
        cfg.eval
            .prompts
            .iter()
            .position(|&p| p == PromptSet::from(m))
            .map(|pi| Stat::of(&seeds.iter().map(|s| s.success[0][pi]).collect::<Vec<_>>()))
            .unwrap_or(Stat {
                mean: f64::NAN,
                std: f64::NAN,
            })
    };
    TransferReport {
        within_modality_success: pick(headline.train_modality),
        cross_modality_success: pick(headline.train_modality.other()),
        chance_floor,
        rows,
        seeds,
        config: cfg.clone(),
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

pub const TRANSFER_CSV_HEADER: [&str; 9] = [
    "collapse",
    "corrupt_kind",
    "alpha_or_std",
    "train_modality",
    "eval_modality",
    "success_mean",
    "success_std",
    "chance_floor",
    "inject_gap_norm",
];

/// Aggregated rows: one per ablation and evaluation prompt set.
pub fn transfer_csv(report: &TransferReport) -> Vec<Vec<String>> {
    let mut out = vec![TRANSFER_CSV_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in &report.rows {
        out.push(vec![
            r.collapse.as_str().to_string(),
            r.corrupt_kind.clone(),
            fmt(r.alpha_or_std),
            r.train_modality.to_string(),
            r.eval_modality.as_str().to_string(),
            fmt(r.success_mean),
            fmt(r.success_std),
            fmt(r.chance_floor),
            fmt(r.inject_gap_norm),
        ]);
    }
    out
}

/// Unaggregated rows: one per seed, ablation and evaluation prompt set.
pub fn transfer_by_seed_csv(report: &TransferReport) -> Vec<Vec<String>> {
    let mut out = vec![vec![
        "seed".to_string(),
        "collapse".into(),
        "corrupt_kind".into(),
        "alpha_or_std".into(),
        "train_modality".into(),
        "eval_modality".into(),
        "success".into(),
        "chance_floor".into(),
        "inject_gap_norm".into(),
    ]];
    for r in &report.rows {
        for (s, v) in report.seeds.iter().zip(&r.per_seed) {
            out.push(vec![
                s.seed.to_string(),
                r.collapse.as_str().to_string(),
                r.corrupt_kind.clone(),
                fmt(r.alpha_or_std),
                r.train_modality.to_string(),
                r.eval_modality.as_str().to_string(),
                fmt(*v),
                fmt(s.chance_floor),
                fmt(r.inject_gap_norm),
            ]);
        }
    }
    out
}

/// Writes `transfer_report.json`, `transfer.csv` and `transfer_by_seed.csv`.
pub fn write_transfer_report(report: &TransferReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let path = out_dir.join("transfer_report.json");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    write_csv(&out_dir.join("transfer.csv"), &transfer_csv(report))?;
    write_csv(
        &out_dir.join("transfer_by_seed.csv"),
        &transfer_by_seed_csv(report),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        let mut cfg = BenchConfig::default();
        cfg.seeds = vec![3];
        cfg.grid = GridConfig {
            size: 3,
            distractors: 1,
            demos_per_task: 4,
            reference_demos_per_task: 2,
        };
        cfg.encoder.dim = 4;
        cfg.encoder.visual_hidden = vec![8];
        cfg.encoder.text_hidden = vec![8];
        cfg.encoder.token_dim = 4;
        cfg.encoder.steps = 20;
        cfg.encoder.batch_size = 8;
        cfg.policy.steps = 20;
        cfg.policy.batch_size = 8;
        cfg.policy.hidden = vec![8];
        cfg.eval.episodes_per_task = 2;
        cfg.eval.horizon = 4;
        cfg.ablations.truncate(4);
        cfg
    }

    #[test]
    fn tiny_run_shapes() {
        let cfg = tiny();
        let report = run_transfer_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 4 * 3);
        assert_eq!(transfer_csv(&report).len(), 13);
        assert_eq!(transfer_by_seed_csv(&report).len(), 13);
        assert!(report
            .rows
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.success_mean)));
        assert_eq!(report, run_transfer_experiment(&cfg).unwrap());
    }

    #[test]
    fn validation() {
        let mut cfg = tiny();
        cfg.eval.horizon = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.ablations[2].delete_k = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = tiny();
        cfg.seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn sample_std() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[0.4]).std, 0.0);
    }
}
