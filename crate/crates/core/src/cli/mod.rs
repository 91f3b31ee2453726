//! The `sum` command-line tool.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::blocks::DomainLabel;
use crate::data::{
    generate_dataset, load_checkpoint, load_into, read_image, resize_bilinear, save_checkpoint, write_map,
    GenerateOptions, Manifest, Sample,
};
use crate::error::{Result, SumError};
use crate::metrics::{aggregate, evaluate_sample, f_score, summary_table, MetricReport, MetricSummary};
use crate::model::{train, Conditioning, Placement, SumConfig, SumModel};
use crate::objective::KlOrientation;
use crate::scan::{bench_selective_scan, loglog_slope};
use crate::tensor::{OpTag, Tensor};
use crate::verify::{grad_suite, run_suite, SuiteModule};

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Training and evaluation settings. Relative paths resolve against the
/// directory holding the config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub model: SumConfig,
    #[serde(default)]
    pub train_manifest: Option<PathBuf>,
    #[serde(default)]
    pub val_manifest: Option<PathBuf>,
    #[serde(default)]
    pub test_manifest: Option<PathBuf>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: CliConfig = serde_json::from_str(text).map_err(|e| SumError::Config(e.to_string()))?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| SumError::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            SumError::Config(d) => SumError::Config(format!("{}: {d}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.train_manifest,
            &mut cfg.val_manifest,
            &mut cfg.test_manifest,
            &mut cfg.checkpoint,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "sum", version, about = "Conditional Mamba U-Net saliency prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-domain dataset with manifests.
    GenerateData(GenerateArgs),
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Score checkpoints (or the ground truth itself) on a manifest.
    Eval(EvalArgs),
    /// Predict a saliency map for one image.
    Infer(InferArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Time the selective scan at several sequence lengths.
    BenchScan(BenchArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub per_domain: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image pairs with domain-dependent targets, written to
    /// conflict_train.tsv and conflict_val.tsv.
    #[arg(long, default_value_t = 0)]
    pub conflict_pairs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    Bottleneck,
    Decoder,
    AllBlocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConditioningArg {
    Prompt,
    OneHot,
    None,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum)]
    pub placement: Option<PlacementArg>,
    #[arg(long, value_enum)]
    pub conditioning: Option<ConditioningArg>,
    /// Use KL(s || g) in the loss instead of KL(g || s).
    #[arg(long)]
    pub kl_literal: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to the config's out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeat to compare several checkpoints by F-score.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score each ground-truth map against itself.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_parser = parse_domain)]
    pub domain: DomainLabel,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_domain(s: &str) -> std::result::Result<DomainLabel, String> {
    DomainLabel::from_name(s).map_err(|_| {
        let names: Vec<_> = DomainLabel::ALL.iter().map(|d| d.name()).collect();
        format!("expected one of {}", names.join(", "))
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModuleArg {
    All,
    Tensor,
    Scan,
    Blocks,
    Objective,
    Model,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = ModuleArg::All)]
    pub module: ModuleArg,
    /// Negate one backward rule to prove the suite notices.
    #[arg(long, hide = true, value_parser = parse_op)]
    pub inject_fault: Option<OpTag>,
}

fn parse_op(s: &str) -> std::result::Result<OpTag, String> {
    OpTag::from_name(s).ok_or_else(|| format!("unknown op {s:?}"))
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![1024, 2048, 4096, 8192])]
    pub lengths: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    #[arg(long, default_value_t = 8)]
    pub state: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
}

/// Caps the rayon pool at `SUM_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("SUM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| SumError::Config(format!("SUM_THREADS must be a positive integer, got {v:?}")))?;
    // a second initialization (tests calling run twice) is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one parsed command and writes human-readable output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::GenerateData(a) => generate(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::BenchScan(a) => bench(a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| SumError::io("<stdout>", e))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| SumError::io(p, e))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(p, contents).map_err(|e| SumError::io(p, e))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let g = generate_dataset(
        &a.out,
        &GenerateOptions {
            per_domain: a.per_domain,
            size: a.size,
            seed: a.seed,
            conflict_pairs: a.conflict_pairs,
        },
    )?;
    let mut msg = format!(
        "wrote {} samples to {}: train {}, val {}, test {}\n",
        g.train.entries.len() + g.val.entries.len() + g.test.entries.len(),
        a.out.display(),
        g.train.entries.len(),
        g.val.entries.len(),
        g.test.entries.len()
    );
    if let (Some(ct), Some(cv)) = (&g.conflict_train, &g.conflict_val) {
        let _ = writeln!(msg, "conflict pairs: train {} rows, val {} rows", ct.entries.len(), cv.entries.len());
    }
    say(out, &msg)
}

fn load_set(path: &Path, size: usize) -> Result<Vec<Sample>> {
    Manifest::read(path)?.load_samples(size)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = CliConfig::load(&a.config)?;
    if let Some(p) = a.placement {
        cfg.model.placement = match p {
            PlacementArg::Bottleneck => Placement::Bottleneck,
            PlacementArg::Decoder => Placement::Decoder,
            PlacementArg::AllBlocks => Placement::AllBlocks,
        };
    }
    if let Some(c) = a.conditioning {
        cfg.model.conditioning = match c {
            ConditioningArg::Prompt => Conditioning::Prompt,
            ConditioningArg::OneHot => Conditioning::OneHot,
            ConditioningArg::None => Conditioning::None,
        };
    }
    if a.kl_literal {
        cfg.model.kl_orientation = KlOrientation::Literal;
    }
    if let Some(s) = a.seed {
        cfg.model.seed = s;
    }
    cfg.model.validate()?;
    let out_dir = a
        .out
        .or(cfg.out_dir.clone())
        .ok_or_else(|| SumError::Config("out_dir: required (config or --out)".into()))?;
    let train_path = cfg
        .train_manifest
        .clone()
        .ok_or_else(|| SumError::Config("train_manifest: required".into()))?;
    let s = cfg.model.input_size;
    let train_set = load_set(&train_path, s)?;
    let val_set = match &cfg.val_manifest {
        Some(p) => load_set(p, s)?,
        None => Vec::new(),
    };
    create_dir(&out_dir)?;
    let mut model = SumModel::new(&cfg.model)?;
    say(
        out,
        &format!(
            "training {} parameters on {} samples ({} validation)\n",
            model.num_parameters(),
            train_set.len(),
            val_set.len()
        ),
    )?;

    let epochs_path = out_dir.join(EPOCHS_FILE);
    let mut epochs = BufWriter::new(File::create(&epochs_path).map_err(|e| SumError::io(&epochs_path, e))?);
    let mut io_err = None;
    let mut lines = String::new();
    let result = train(&mut model, &train_set, &val_set, |r| {
        let json = serde_json::to_string(r).expect("epoch record serializes");
        if let Err(e) = writeln!(epochs, "{json}").and_then(|_| epochs.flush()) {
            io_err.get_or_insert(e);
        }
        let val = r
            .val
            .as_ref()
            .map(|v| format!(" val cc {:.4} kld {:.4}", v.cc.mean, v.kld.mean))
            .unwrap_or_default();
        let _ = writeln!(
            lines,
            "epoch {:>3} lr {:.1e} loss {:.4}{val}{}",
            r.epoch,
            r.lr,
            r.train.total,
            if r.improved { " *" } else { "" }
        );
    });
    drop(epochs);
    say(out, &lines)?;
    if let Some(e) = io_err {
        return Err(SumError::io(&epochs_path, e));
    }
    let report = result?;
    save_checkpoint(&model, &out_dir.join(CHECKPOINT_FILE))?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&out_dir.join(REPORT_FILE), json + "\n")?;
    say(
        out,
        &format!(
            "kept epoch {} after {} steps{}; wrote {}\n",
            report.best_epoch,
            report.steps(),
            if report.stopped_early { " (early stop)" } else { "" },
            out_dir.join(CHECKPOINT_FILE).display()
        ),
    )
}

fn write_reports(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut text = String::new();
    for r in reports {
        text.push_str(&r.to_json_line());
        text.push('\n');
    }
    write_file(path, text)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = a.config.as_deref().map(CliConfig::load).transpose()?;
    let manifest_path = a
        .manifest
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.test_manifest.clone()))
        .ok_or_else(|| SumError::Config("manifest: required (--manifest or test_manifest)".into()))?;
    let out_dir = a
        .out
        .clone()
        .or_else(|| cfg.as_ref().and_then(|c| c.out_dir.clone()))
        .ok_or_else(|| SumError::Config("out_dir: required (config or --out)".into()))?;
    let manifest = Manifest::read(&manifest_path)?;
    create_dir(&out_dir)?;

    if a.oracle {
        let size = match &cfg {
            Some(c) => c.model.input_size,
            None => {
                let first = manifest
                    .entries
                    .first()
                    .ok_or_else(|| SumError::Config("manifest is empty".into()))?;
                read_image(&manifest.resolve(&first.image))?.shape()[0]
            }
        };
        let samples = manifest.load_samples(size)?;
        let reports = samples
            .iter()
            .map(|s| evaluate_sample(&s.id, &s.map, &s.map, &s.fixations))
            .collect::<Result<Vec<_>>>()?;
        write_reports(&out_dir.join("eval.jsonl"), &reports)?;
        let table = format!("oracle on {}\n{}", manifest_path.display(), summary_table(&aggregate(&reports)));
        write_file(&out_dir.join(SUMMARY_FILE), &table)?;
        return say(out, &table);
    }

    let mut ckpts = a.checkpoint.clone();
    if ckpts.is_empty() {
        ckpts.extend(cfg.as_ref().and_then(|c| c.checkpoint.clone()));
    }
    if ckpts.is_empty() {
        return Err(SumError::Config("checkpoint: required (--checkpoint or config)".into()));
    }
    let mut summaries: Vec<MetricSummary> = Vec::new();
    let mut table = String::new();
    for (k, ck) in ckpts.iter().enumerate() {
        let model = match &cfg {
            Some(c) => {
                let mut m = SumModel::new(&c.model)?;
                load_into(&mut m, ck)?;
                m
            }
            None => load_checkpoint(ck)?,
        };
        let samples = manifest.load_samples(model.config.input_size)?;
        let images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
        let labels: Vec<DomainLabel> = samples.iter().map(|s| s.label).collect();
        let preds = model.predict_batch(&images, &labels)?;
        let reports = samples
            .iter()
            .zip(&preds)
            .map(|(s, p)| evaluate_sample(&s.id, p.data(), &s.map, &s.fixations))
            .collect::<Result<Vec<_>>>()?;
        let name = if ckpts.len() == 1 {
            "eval.jsonl".to_string()
        } else {
            format!("eval-{k}.jsonl")
        };
        write_reports(&out_dir.join(name), &reports)?;
        let summary = aggregate(&reports);
        let _ = write!(table, "checkpoint {k}: {}\n{}", ck.display(), summary_table(&summary));
        summaries.push(summary);
    }
    if summaries.len() > 1 {
        let runs: Vec<_> = summaries.iter().map(|s| s.run_metrics()).collect();
        table.push_str("checkpoint  cc'    sim'   nss'   kl'    F\n");
        for (k, s) in f_score(&runs).iter().enumerate() {
            let _ = writeln!(
                table,
                "{k:<10} {:.3}  {:.3}  {:.3}  {:.3}  {:.3}",
                s.cc_scaled, s.sim_scaled, s.nss_scaled, s.kl_scaled, s.f_score
            );
        }
    }
    write_file(&out_dir.join(SUMMARY_FILE), &table)?;
    say(out, &table)
}

/// Min-max scaled to 0..1; a constant map becomes all zeros.
fn min_max_unit(t: &Tensor) -> Result<Tensor> {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    Tensor::new(
        t.shape(),
        t.data()
            .iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
            .collect(),
    )
}

fn infer(a: InferArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let image = read_image(&a.image)?;
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let s = model.config.input_size;
    let input = if (h, w) == (s, s) { image } else { resize_bilinear(&image, s, s)? };
    let pred = model.predict(&input, a.domain)?;
    let pred = if (h, w) == (s, s) { pred } else { resize_bilinear(&pred, h, w)? };
    write_map(&a.out, &min_max_unit(&pred)?)?;
    say(out, &format!("wrote {}x{} map to {}\n", w, h, a.out.display()))
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let module = match a.module {
        ModuleArg::All => None,
        ModuleArg::Tensor => Some(SuiteModule::Tensor),
        ModuleArg::Scan => Some(SuiteModule::Scan),
        ModuleArg::Blocks => Some(SuiteModule::Blocks),
        ModuleArg::Objective => Some(SuiteModule::Objective),
        ModuleArg::Model => Some(SuiteModule::Model),
    };
    let results = run_suite(&grad_suite(module), a.inject_fault);
    let mut text = String::from("module     case                         worst rel-err  tolerance  status\n");
    let mut first_fail = None;
    for r in &results {
        let status = if r.passed() { "ok" } else { "FAIL" };
        let worst = match &r.outcome {
            Ok(rep) => format!("{:.3e}", rep.worst_rel_err),
            Err(e) => format!("error: {e}"),
        };
        let _ = writeln!(
            text,
            "{:<10} {:<28} {:>13}  {:>9.0e}  {status}",
            r.module.name(),
            r.name,
            worst,
            r.tolerance
        );
        if !r.passed() && first_fail.is_none() {
            first_fail = Some(r);
        }
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    let _ = writeln!(text, "{} checks, {failed} failed", results.len());
    say(out, &text)?;
    match first_fail {
        None => Ok(()),
        Some(r) => Err(SumError::Verification {
            op: format!("{}/{}", r.module.name(), r.name),
            rel_err: r.worst(),
            tolerance: r.tolerance,
        }),
    }
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    if a.lengths.len() < 2 || a.lengths.contains(&0) {
        return Err(SumError::Config("lengths: need at least two positive values".into()));
    }
    let rows = bench_selective_scan(&a.lengths, a.channels, a.state, a.repeats, 0)?;
    let mut text = String::from("L,seconds\n");
    for r in &rows {
        let _ = writeln!(text, "{},{:.9}", r.len, r.seconds);
    }
    let _ = writeln!(text, "slope,{:.4}", loglog_slope(&rows));
    let ratios: Vec<f64> = rows
        .windows(2)
        .filter(|w| w[1].len == 2 * w[0].len)
        .map(|w| w[1].seconds / w[0].seconds)
        .collect();
    if let Some(m) = ratios.iter().copied().reduce(f64::max) {
        let _ = writeln!(text, "max_doubling_ratio,{m:.4}");
    }
    say(out, &text)
}
