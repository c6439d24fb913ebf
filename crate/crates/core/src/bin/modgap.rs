use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use modgap::bench::experiment::{transfer_csv, Ablation, CollapseKind};
use modgap::bench::grid::{build_dataset, generate_tasks_with, GridPairs, GridWorld};
use modgap::bench::{run_transfer_experiment, write_transfer_report, PromptSet};
use modgap::collapse::{fit_centralize, fit_delete, CollapseTransform};
use modgap::config::{NoiseKind, RunConfig};
use modgap::contrastive::{save_params, train_encoders};
use modgap::corrupt::{corrupt_bank, CorruptConfig};
use modgap::diagnostics::export_diagnostics;
use modgap::embedding::{cosine, l2_norm, EmbeddingBank, Modality};
use modgap::{load_bank, save_bank, BankFormat, Error, Noise, Result};

#[derive(Parser)]
#[command(
    name = "modgap",
    version,
    about = "Measure, close and stress-test the gap between visual and text goal embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gap statistics, similarity heatmap, per-dimension gaps and a 2-D PCA projection.
    Diagnose(DiagnoseArgs),
    /// Fit (or load) a collapse transform and apply it to a bank.
    Collapse(CollapseArgs),
    /// Augment every row of a bank with cosine or Gaussian noise.
    Corrupt(CorruptArgs),
    /// Train the toy visual/text encoders on gridworld demonstrations.
    TrainEncoder(TrainEncoderArgs),
    /// Run the cross-modal transfer benchmark.
    Bench(BenchArgs),
    /// Check bank invariants and, given the original bank, corrupt cosine bounds.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Binary,
}

impl From<FormatArg> for BankFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => BankFormat::JsonLines,
            FormatArg::Binary => BankFormat::Binary,
        }
    }
}

#[derive(Args)]
struct FormatOpt {
    /// Bank file format; inferred from the extension when omitted
    /// (.jsonl/.json/.ndjson are JSON lines, anything else binary).
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

impl FormatOpt {
    fn for_path(&self, path: &Path) -> BankFormat {
        self.format
            .map_or_else(|| BankFormat::from_path(path), Into::into)
    }
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Visual embedding bank.
    bank_v: PathBuf,
    /// Text embedding bank.
    bank_l: PathBuf,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    format: FormatOpt,
}

#[derive(Clone, Copy, ValueEnum)]
enum CollapseArg {
    Centralize,
    Delete,
}

#[derive(Args)]
struct CollapseArgs {
    /// Bank to transform.
    target: PathBuf,
    /// Output bank.
    #[arg(long, short)]
    out: PathBuf,
    /// Transform kind; defaults to the config's `collapse.kind`.
    #[arg(long, value_enum)]
    kind: Option<CollapseArg>,
    /// Visual reference bank used for fitting.
    #[arg(long = "ref-v", required_unless_present = "transform")]
    ref_v: Option<PathBuf>,
    /// Text reference bank used for fitting.
    #[arg(long = "ref-l", required_unless_present = "transform")]
    ref_l: Option<PathBuf>,
    /// Number of dimensions removed by `delete`.
    #[arg(long)]
    k: Option<usize>,
    /// Apply a saved transform instead of fitting one.
    #[arg(long, conflicts_with_all = ["ref_v", "ref_l", "kind", "k"])]
    transform: Option<PathBuf>,
    /// Where to write the transform JSON (default: `<out>.transform.json`).
    #[arg(long)]
    transform_out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    format: FormatOpt,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Cosine,
    Gaussian,
}

#[derive(Args)]
struct CorruptArgs {
    bank: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Noise kind (default cosine).
    #[arg(long, value_enum)]
    kind: Option<NoiseArg>,
    /// Lower bound of the kept cosine similarity (default 0.2).
    #[arg(long)]
    alpha: Option<f64>,
    /// Gaussian standard deviation (default 0.1).
    #[arg(long)]
    std: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    format: FormatOpt,
}

#[derive(Args)]
struct TrainEncoderArgs {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Overrides `encoder.steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Extra ablation derived from the first configured one, as
    /// comma-separated `key=value` pairs. Keys: collapse (none|centralize|delete),
    /// k, noise (cosine|gaussian|none), alpha, std, train (visual|text), gap.
    /// Repeatable.
    #[arg(long, value_name = "KEY=VALUE,...")]
    ablate: Vec<String>,
    /// Worker threads for seeds (0 = one per seed).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    bank: PathBuf,
    /// Bank the input was corrupted from; enables the cosine-bound check.
    #[arg(long)]
    original: Option<PathBuf>,
    /// Lower cosine bound to check against.
    #[arg(long, default_value_t = modgap::corrupt::DEFAULT_ALPHA)]
    alpha: f64,
    /// Slack on both bounds; files store f32, so cosines carry ~1e-7 rounding.
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[command(flatten)]
    format: FormatOpt,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Diagnose(a) => diagnose(a),
        Command::Collapse(a) => collapse(a),
        Command::Corrupt(a) => corrupt(a),
        Command::TrainEncoder(a) => train_encoder(a),
        Command::Bench(a) => bench(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load(path: &Path, format: &FormatOpt) -> Result<EmbeddingBank> {
    load_bank(path, format.for_path(path)).map_err(|e| match e {
        e @ (Error::Format { .. } | Error::Io { .. } | Error::Dimension(_)) => e,
        e => e.in_stage(format!("loading {}", path.display())),
    })
}

fn save(bank: &EmbeddingBank, path: &Path, format: &FormatOpt) -> Result<()> {
    save_bank(bank, path, format.for_path(path))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let bank_v = load(&a.bank_v, &a.format)?;
    let bank_l = load(&a.bank_l, &a.format)?;
    create_dir(&a.out)?;
    let report = export_diagnostics(&bank_v, &bank_l, &a.out)?;
    println!(
        "gap_norm {:.6}  matched cosine {:.4}  top-1 v->t {:.4}  t->v {:.4}",
        report.gap_norm,
        report.matched_pair_mean_cosine,
        report.retrieval_top1_v2t,
        report.retrieval_top1_t2v
    );
    Ok(())
}

fn collapse(a: CollapseArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let transform = match &a.transform {
        Some(path) => CollapseTransform::load(path)?,
        None => {
            let ref_v = load(a.ref_v.as_deref().expect("clap requires ref-v"), &a.format)?;
            let ref_l = load(a.ref_l.as_deref().expect("clap requires ref-l"), &a.format)?;
            let kind = match a.kind {
                Some(CollapseArg::Centralize) => CollapseKind::Centralize,
                Some(CollapseArg::Delete) => CollapseKind::Delete,
                None => cfg.collapse.kind,
            };
            let fitted = match kind {
                CollapseKind::Centralize => fit_centralize(&ref_v, &ref_l)?,
                CollapseKind::Delete => fit_delete(&ref_v, &ref_l, a.k.unwrap_or(cfg.collapse.k))?,
                CollapseKind::None => {
                    return Err(Error::Parameter(
                        "collapse kind `none` has no transform".into(),
                    ))
                }
            };
            fitted.with_fit_source(format!(
                "{} + {}",
                a.ref_v.as_ref().unwrap().display(),
                a.ref_l.as_ref().unwrap().display()
            ))
        }
    };
    let target = load(&a.target, &a.format)?;
    let out = transform.apply_bank(&target)?;
    save(&out, &a.out, &a.format)?;
    let transform_out = a.transform_out.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".transform.json");
        PathBuf::from(p)
    });
    if a.transform.is_none() || a.transform_out.is_some() {
        transform.save(&transform_out)?;
    }
    println!(
        "{}: {} rows, dim {} -> {}",
        transform.kind_name(),
        out.len(),
        transform.source_dim(),
        transform.output_dim()
    );
    Ok(())
}

fn corrupt(a: CorruptArgs) -> Result<()> {
    let mut section = load_config(a.config.as_deref())?.corrupt;
    match a.kind {
        Some(NoiseArg::Cosine) => section.kind = NoiseKind::Cosine,
        Some(NoiseArg::Gaussian) => section.kind = NoiseKind::Gaussian,
        None => {}
    }
    if let Some(alpha) = a.alpha {
        section.alpha = alpha;
    }
    if let Some(std) = a.std {
        section.std = std;
    }
    if let Some(seed) = a.seed {
        section.seed = seed;
    }
    let cfg = CorruptConfig {
        noise: section.noise(),
        seed: section.seed,
    };
    cfg.noise.validate()?;
    let bank = load(&a.bank, &a.format)?;
    let out = corrupt_bank(&bank, &cfg)?;
    save(&out, &a.out, &a.format)?;
    println!(
        "{} noise ({}) applied to {} rows",
        cfg.noise.kind_name(),
        cfg.noise.strength(),
        out.len()
    );
    Ok(())
}

fn train_encoder(a: TrainEncoderArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(steps) = a.steps {
        cfg.encoder.steps = steps;
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out_dir = a.out.unwrap_or_else(|| cfg.output.dir.clone());
    let world = GridWorld {
        size: cfg.grid.size,
        distractors: cfg.grid.distractors,
    };
    let tasks = generate_tasks_with(world, cfg.seed)?;
    let dataset = build_dataset(&tasks, cfg.grid.demos_per_task, cfg.seed)?;
    let pairs = GridPairs::new(&tasks, &dataset)?;
    let arch = cfg.encoder.arch(world.observation_dim(), tasks.vocab.len());
    let train = cfg.encoder.train(cfg.seed);
    let result = train_encoders(&pairs, &arch, &train).map_err(|e| e.in_stage("train encoders"))?;

    create_dir(&out_dir)?;
    save_params(&result.params, Some(&train), &out_dir.join("encoder.eprm"))?;
    let mut csv = String::from("step,loss\n");
    for (i, l) in result.loss_trace.iter().enumerate() {
        csv.push_str(&format!("{i},{l}\n"));
    }
    let trace = out_dir.join("loss_trace.csv");
    std::fs::write(&trace, csv).map_err(|e| Error::Io {
        path: trace.clone(),
        source: e,
    })?;
    let tail = &result.loss_trace[result.loss_trace.len().saturating_sub(100)..];
    if !tail.is_empty() {
        println!(
            "final loss (mean of last {}) {:.4}; ln B = {:.4}",
            tail.len(),
            tail.iter().sum::<f64>() / tail.len() as f64,
            (train.batch_size as f64).ln()
        );
    }
    println!("wrote {}", out_dir.join("encoder.eprm").display());
    Ok(())
}

fn parse_ablation(base: &Ablation, arg: &str) -> Result<Ablation> {
    let mut a = base.clone();
    let bad = |m: String| Error::Parameter(format!("--ablate {arg:?}: {m}"));
    let mut noise_kind: Option<String> = a.noise.as_ref().map(|n| n.kind_name().to_string());
    let (mut alpha, mut std) = match a.noise {
        Some(Noise::Cosine { alpha }) => (alpha, 0.1),
        Some(Noise::Gaussian { std }) => (modgap::corrupt::DEFAULT_ALPHA, std),
        None => (modgap::corrupt::DEFAULT_ALPHA, 0.1),
    };
    for pair in arg.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| bad(format!("expected key=value, got {pair:?}")))?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| bad(format!("{k}: not a number: {v:?}")))
        };
        match k {
            "collapse" => a.collapse = v.parse()?,
            "k" => {
                a.delete_k = v
                    .parse()
                    .map_err(|_| bad(format!("k: not an integer: {v:?}")))?
            }
            "noise" => noise_kind = (v != "none").then(|| v.to_string()),
            "alpha" => alpha = num(v)?,
            "std" => std = num(v)?,
            "train" => a.train_modality = v.parse::<Modality>()?,
            "gap" => a.inject_gap_norm = num(v)?,
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    a.noise = match noise_kind.as_deref() {
        None => None,
        Some("cosine") => Some(Noise::Cosine { alpha }),
        Some("gaussian") => Some(Noise::Gaussian { std }),
        Some(other) => return Err(bad(format!("unknown noise kind {other:?}"))),
    };
    a.validate()?;
    Ok(a)
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seeds) = a.seeds {
        cfg.seeds = seeds;
    }
    if let Some(t) = a.threads {
        cfg.threads = t;
    }
    let base = cfg.ablations.first().cloned();
    for arg in &a.ablate {
        let base = base.clone().ok_or_else(|| {
            Error::Config("--ablate needs at least one configured ablation".into())
        })?;
        cfg.ablations.push(parse_ablation(&base, arg)?);
    }
    cfg.validate()?;
    let out_dir = a.out.unwrap_or_else(|| cfg.output.dir.clone());
    let report = run_transfer_experiment(&cfg.bench())?;
    write_transfer_report(&report, &out_dir)?;

    println!(
        "chance floor {:.3} +- {:.3}",
        report.chance_floor.mean, report.chance_floor.std
    );
    for s in &report.seeds {
        println!(
            "seed {}: encoder loss {:.3}, held-out top-1 v->t {:.3} t->v {:.3}",
            s.seed,
            s.encoder_final_loss,
            s.alignment.retrieval_top1_v2t,
            s.alignment.retrieval_top1_t2v
        );
    }
    for row in transfer_csv(&report).iter().skip(1) {
        println!("{}", row.join("\t"));
    }
    let headline = &cfg.ablations[0];
    if cfg
        .eval
        .prompts
        .contains(&PromptSet::from(headline.train_modality.other()))
    {
        println!(
            "headline {}: within {:.3} +- {:.3}, cross {:.3} +- {:.3}",
            headline.label(),
            report.within_modality_success.mean,
            report.within_modality_success.std,
            report.cross_modality_success.mean,
            report.cross_modality_success.std
        );
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let bank = load(&a.bank, &a.format)?;
    let mut problems = Vec::new();
    if bank.is_empty() {
        problems.push("bank has no rows".to_string());
    }
    if let Some(orig_path) = &a.original {
        let orig = load(orig_path, &a.format)?;
        if orig.len() != bank.len() || orig.dim() != bank.dim() {
            problems.push(format!(
                "shape {}x{} does not match original {}x{}",
                bank.len(),
                bank.dim(),
                orig.len(),
                orig.dim()
            ));
        } else {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for i in 0..bank.len() {
                if bank.task_id(i) != orig.task_id(i) {
                    problems.push(format!(
                        "row {}: task_id {:?} != {:?}",
                        i + 1,
                        bank.task_id(i),
                        orig.task_id(i)
                    ));
                    continue;
                }
                let c = cosine(bank.row(i), orig.row(i))?;
                lo = lo.min(c);
                hi = hi.max(c);
                if c < a.alpha - a.tolerance || c > 1.0 + a.tolerance {
                    problems.push(format!(
                        "row {}: cosine {c} outside [{}, 1]",
                        i + 1,
                        a.alpha
                    ));
                }
                let n = l2_norm(bank.row(i));
                if (n - 1.0).abs() > a.tolerance.max(1e-6) {
                    problems.push(format!("row {}: norm {n} is not 1", i + 1));
                }
            }
            if !bank.is_empty() {
                println!("cosine range [{lo:.6}, {hi:.6}] over {} rows", bank.len());
            }
        }
    }
    if problems.is_empty() {
        println!(
            "ok: {} rows, dim {}, {} tasks",
            bank.len(),
            bank.dim(),
            bank.task_set().len()
        );
        Ok(())
    } else {
        for p in problems.iter().take(20) {
            eprintln!("{p}");
        }
        Err(Error::Parameter(format!(
            "{} violation(s) in {}",
            problems.len(),
            a.bank.display()
        )))
    }
}
