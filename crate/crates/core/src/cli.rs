//! Command-line surface: `gen-data`, `train`, `prune`, `eval`, `intervene`
//! and `explain`.
//!
//! Every tunable flag can also come from a flat `key = value` file passed
//! with `--config`; flags win over the file. Keys use the flag names
//! (`batch-size` or `batch_size`). Unknown keys are rejected. The seed falls
//! back to `SPARSECBM_SEED` when neither a flag nor the file sets it.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::data::{generate_dataset, tokenize, Dataset, Split};
use crate::error::{Error, Result};
use crate::evaluation::evaluate_split;
use crate::explain::{explain, render_report};
use crate::intervention::{
    evaluate_intervention, oracle_intervene, sparsity_intervene, InterventionConfig,
    InterventionMode, SwapRule,
};
use crate::model::{
    load_checkpoint, predict, save_checkpoint, Checkpoint, MaskSet, ModelConfig, ModelParams,
};
use crate::pruning::{prune_to_sparsity, Compensation, PruneConfig};
use crate::training::{train, Strategy, TaskTerm, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "sparsecbm", version, about = "Sparse concept bottleneck models")]
pub struct Cli {
    /// Flat key=value file with defaults for any flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic restaurant-review dataset directory.
    GenData(GenDataArgs),
    /// Train a dense model and write a checkpoint.
    Train(TrainArgs),
    /// Mine one sparse subnetwork per concept.
    Prune(PruneArgs),
    /// Accuracy and macro-F1 on a split.
    Eval(EvalArgs),
    /// Test-time intervention (NI/SI table, or interactive corrections).
    Intervene(InterveneArgs),
    /// Decision-pathway report for one input.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_dev: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub concepts: Option<usize>,
    #[arg(long)]
    pub concept_classes: Option<usize>,
    #[arg(long)]
    pub task_classes: Option<usize>,
    /// Build the test split from unseen phrasings.
    #[arg(long)]
    pub shift: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `single` or `per_concept`.
    #[arg(long)]
    pub task_term: Option<String>,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    /// Comma-separated hidden widths, e.g. `64,64`.
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Training log (JSONL); defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub block_size: Option<usize>,
    #[arg(long)]
    pub zeta: Option<f64>,
    #[arg(long)]
    pub fisher_samples: Option<usize>,
    #[arg(long)]
    pub group_size: Option<usize>,
    /// `none` or `per_concept_delta`.
    #[arg(long)]
    pub compensation: Option<String>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pruning report (JSON); defaults to `<out>.prune.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InterveneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated values of r.
    #[arg(long)]
    pub r_grid: Option<String>,
    /// `sparsity` or `oracle`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// `magnitude` or `signed` ranking of drop/grow candidates.
    #[arg(long)]
    pub rule: Option<String>,
    /// Undo edits that do not lower the concept loss on the example.
    #[arg(long)]
    pub accept_if_improved: bool,
    /// Directory for `table.json`, `table.txt` and `log.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Prompt for per-concept corrections on stdin.
    #[arg(long)]
    pub interactive: bool,
    /// With --interactive, only this example.
    #[arg(long)]
    pub example_id: Option<usize>,
    /// With --interactive, write the edited masks to this checkpoint.
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory (vocabulary and, for --example-id, the split).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, conflicts_with = "example_id")]
    pub input: Option<String>,
    #[arg(long)]
    pub example_id: Option<usize>,
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Values from the `--config` file, tracking which keys were consumed.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
    used: BTreeSet<String>,
    source: Option<PathBuf>,
}

impl Settings {
    pub fn parse(text: &str, source: Option<&Path>) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("config line {}: expected key=value", i + 1))
            })?;
            let key = k.trim().replace('-', "_");
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::config(format!("config key {key:?} set twice")));
            }
        }
        Ok(Self {
            values,
            used: BTreeSet::new(),
            source: source.map(Path::to_path_buf),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::parse(&text, Some(p))
            }
        }
    }

    /// Flag value, else the file value, else `default`.
    pub fn get<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        Ok(self.get_opt(key, flag)?.unwrap_or(default))
    }

    pub fn get_opt<T: FromStr>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }

    /// Seed from flag, file, then `SPARSECBM_SEED`, then 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.get_opt("seed", flag)? {
            return Ok(s);
        }
        match std::env::var("SPARSECBM_SEED") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("SPARSECBM_SEED: cannot parse {v:?}"))),
            Err(_) => Ok(0),
        }
    }

    /// Fails on any file key the command did not ask for.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            let src = self
                .source
                .as_ref()
                .map_or(String::new(), |p| format!(" in {}", p.display()));
            Err(Error::config(format!("unknown config keys{src}: {}", unknown.join(", "))))
        }
    }
}

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::config(format!("{what}: cannot parse {t:?}"))))
        .collect()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run_from<I, T>(args: I, input: &mut dyn BufRead, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, input, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write) -> Result<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    let s = &mut settings;
    match cli.command {
        Command::GenData(a) => gen_data(a, s, out),
        Command::Train(a) => cmd_train(a, s, out),
        Command::Prune(a) => cmd_prune(a, s, out),
        Command::Eval(a) => cmd_eval(a, s, out),
        Command::Intervene(a) => cmd_intervene(a, s, input, out),
        Command::Explain(a) => cmd_explain(a, s, out),
    }
}

fn say(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn gen_data(a: GenDataArgs, s: &mut Settings, out: &mut dyn Write) -> Result<()> {
    let seed = s.seed(a.seed)?;
    let n_train = s.get("n_train", a.n_train, 2000)?;
    let n_dev = s.get("n_dev", a.n_dev, 500)?;
    let n_test = s.get("n_test", a.n_test, 500)?;
    let k = s.get("concepts", a.concepts, 4)?;
    let v = s.get("concept_classes", a.concept_classes, 3)?;
    let c = s.get("task_classes", a.task_classes, 5)?;
    let shift = s.get("shift", a.shift.then_some(true), false)?;
    s.finish()?;
    if n_train == 0 || n_dev == 0 || n_test == 0 {
        return Err(Error::config("every split needs at least one example"));
    }
    let ds = generate_dataset(seed, [n_train, n_dev, n_test], k, v, c, shift)?;
    ds.write_dir(&a.out)?;
    say(
        out,
        &format!(
            "wrote {} ({} / {} / {} examples, vocabulary {})\n",
            a.out.display(),
            n_train,
            n_dev,
            n_test,
            ds.vocab.len()
        ),
    )
}

fn train_config(
    s: &mut Settings,
    strategy: Option<String>,
    gamma: Option<f64>,
    lr: Option<f64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    seed: u64,
) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let strategy: Strategy = s.get::<String>("strategy", strategy, "joint".into())?.parse()?;
    Ok(TrainConfig {
        strategy,
        gamma: s.get("gamma", gamma, d.gamma)?,
        lr: s.get("lr", lr, d.lr)?,
        epochs: s.get("epochs", epochs, d.epochs)?,
        batch_size: s.get("batch_size", batch_size, d.batch_size)?,
        seed,
        task_term: TaskTerm::Single,
        trainable: None,
    })
}

fn cmd_train(a: TrainArgs, s: &mut Settings, out: &mut dyn Write) -> Result<()> {
    let seed = s.seed(a.seed)?;
    let mut tcfg = train_config(s, a.strategy, a.gamma, a.lr, a.epochs, a.batch_size, seed)?;
    tcfg.task_term = s
        .get::<String>("task_term", a.task_term, "single".into())?
        .parse()?;
    let emb_dim = s.get_opt("emb_dim", a.emb_dim)?;
    let hidden = s.get_opt::<String>("hidden", a.hidden)?;
    let latent = s.get_opt("latent_dim", a.latent_dim)?;
    let log_path = s
        .get_opt("log", a.log)?
        .unwrap_or_else(|| with_suffix(&a.out, ".log.jsonl"));
    s.finish()?;
    tcfg.validate()?;

    let ds = Dataset::load_dir(&a.data)?;
    let mut mcfg = ModelConfig::for_schema(&ds.schema, ds.vocab.len(), seed);
    if let Some(e) = emb_dim {
        mcfg.emb_dim = e;
    }
    if let Some(h) = hidden {
        mcfg.hidden_dims = parse_list(&h, "hidden")?;
    }
    if let Some(l) = latent {
        mcfg.latent_dim = l;
    }
    let mut params = ModelParams::init(&mcfg)?;
    let masks = MaskSet::all_ones(mcfg.num_concepts, params.prunable_len());
    let report = train(
        &ds.train.examples,
        Some(&ds.dev.examples),
        &tcfg,
        &mut params,
        &masks,
    )?;
    write_text(&log_path, &report.to_jsonl())?;
    save_checkpoint(
        &Checkpoint {
            config: mcfg,
            schema: ds.schema.clone(),
            params,
            masks,
        },
        &a.out,
    )?;
    let last = report.epochs.last();
    say(
        out,
        &format!(
            "trained {:?} for {} epochs; final train loss {:.4}; checkpoint {}\n",
            tcfg.strategy,
            tcfg.epochs,
            last.map_or(f64::NAN, |e| e.train_loss),
            a.out.display()
        ),
    )
}

fn cmd_prune(a: PruneArgs, s: &mut Settings, out: &mut dyn Write) -> Result<()> {
    let seed = s.seed(a.seed)?;
    let mut ckpt = load_checkpoint(&a.ckpt)?;
    let k = ckpt.params.num_concepts();
    let mut pcfg = PruneConfig::for_concepts(k);
    pcfg.seed = seed;
    pcfg.target_sparsity = s.get("sparsity", a.sparsity, pcfg.target_sparsity)?;
    pcfg.steps = s.get("steps", a.steps, pcfg.steps)?;
    pcfg.block_size = s.get("block_size", a.block_size, pcfg.block_size)?;
    pcfg.zeta = s.get("zeta", a.zeta, pcfg.zeta)?;
    pcfg.fisher_samples = s.get("fisher_samples", a.fisher_samples, pcfg.fisher_samples)?;
    pcfg.group_size = s.get("group_size", a.group_size, pcfg.group_size)?;
    pcfg.compensation = s
        .get::<String>("compensation", a.compensation, "none".into())?
        .parse::<Compensation>()?;
    pcfg.finetune_epochs_per_step =
        s.get("finetune_epochs", a.finetune_epochs, pcfg.finetune_epochs_per_step)?;
    let tcfg = train_config(s, None, a.gamma, a.lr, None, a.batch_size, seed)?;
    let report_path = s
        .get_opt("report", a.report)?
        .unwrap_or_else(|| with_suffix(&a.out, ".prune.json"));
    s.finish()?;
    pcfg.validate()?;
    tcfg.validate()?;

    let ds = Dataset::load_dir(&a.data)?;
    check_compatible(&ckpt, &ds)?;
    let report = prune_to_sparsity(
        &ds.train.examples,
        &mut ckpt.params,
        &mut ckpt.masks,
        &pcfg,
        &tcfg,
    )?;
    write_text(&report_path, &report.to_json())?;
    save_checkpoint(&ckpt, &a.out)?;
    let sp: Vec<String> = report
        .final_sparsity
        .iter()
        .map(|v| format!("{:.4}", v))
        .collect();
    say(
        out,
        &format!(
            "pruned to sparsity [{}] over {} steps; checkpoint {}\n",
            sp.join(", "),
            pcfg.steps,
            a.out.display()
        ),
    )
}

fn check_compatible(ckpt: &Checkpoint, ds: &Dataset) -> Result<()> {
    if ckpt.schema != ds.schema {
        return Err(Error::data("dataset schema differs from the checkpoint's"));
    }
    if ckpt.config.vocab_size != ds.vocab.len() {
        return Err(Error::Data {
            path: None,
            line: None,
            message: format!(
                "vocabulary has {} entries, checkpoint expects {}",
                ds.vocab.len(),
                ckpt.config.vocab_size
            ),
        });
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs, s: &mut Settings, out: &mut dyn Write) -> Result<()> {
    let split = s.get::<String>("split", a.split, "test".into())?;
    let json = s.get_opt("json", a.json)?;
    s.finish()?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let ds = Dataset::load_dir(&a.data)?;
    check_compatible(&ckpt, &ds)?;
    let examples = &ds.split(&split)?.examples;
    if examples.is_empty() {
        return Err(Error::data(format!("split {split} is empty")));
    }
    let report = evaluate_split(examples, &ckpt.params, &ckpt.masks, &ds.schema.concept_names)?;
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_text(&path, &text)?;
    }
    say(out, &report.to_table())
}

fn cmd_intervene(
    a: InterveneArgs,
    s: &mut Settings,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let split = s.get::<String>("split", a.split, "test".into())?;
    let grid = s.get::<String>("r_grid", a.r_grid, "0.005,0.01,0.05".into())?;
    let mode: InterventionMode = s.get::<String>("mode", a.mode, "sparsity".into())?.parse()?;
    let rounds = s.get("rounds", a.rounds, 1)?;
    let rule: SwapRule = s.get::<String>("rule", a.rule, "magnitude".into())?.parse()?;
    let accept_if_improved = s.get(
        "accept_if_improved",
        a.accept_if_improved.then_some(true),
        false,
    )?;
    let out_dir = s.get_opt("out", a.out)?;
    s.finish()?;
    let r_grid: Vec<f64> = parse_list(&grid, "r-grid")?;
    let cfg = InterventionConfig {
        r: r_grid.first().copied().unwrap_or(0.01),
        mode,
        rounds,
        rule,
        accept_if_improved,
    };
    cfg.validate()?;
    let mut ckpt = load_checkpoint(&a.ckpt)?;
    let ds = Dataset::load_dir(&a.data)?;
    check_compatible(&ckpt, &ds)?;
    let examples = &ds.split(&split)?.examples;
    if examples.is_empty() {
        return Err(Error::data(format!("split {split} is empty")));
    }
    if a.interactive {
        interactive(&ds, ds.split(&split)?, a.example_id, &mut ckpt, &cfg, input, out)?;
        if let Some(path) = a.save {
            save_checkpoint(&ckpt, &path)?;
        }
        return Ok(());
    }
    let (table, log) = evaluate_intervention(examples, &ckpt.params, &ckpt.masks, &r_grid, &cfg)?;
    if let Some(dir) = out_dir {
        write_text(&dir.join("table.json"), &table.to_json())?;
        write_text(&dir.join("table.txt"), &table.to_text())?;
        write_text(&dir.join("log.jsonl"), &log.to_jsonl())?;
    }
    say(out, &table.to_text())
}

/// Parses `Food=Positive, Service=1` into concept -> class indices.
pub fn parse_corrections(
    line: &str,
    schema: &crate::data::DatasetSchema,
) -> Result<BTreeMap<usize, usize>> {
    let mut map = BTreeMap::new();
    for part in line.split([',', ' ']).map(str::trim).filter(|p| !p.is_empty()) {
        let (c, v) = part
            .split_once('=')
            .ok_or_else(|| Error::config(format!("expected concept=class, got {part:?}")))?;
        let k = schema
            .concept_index(c.trim())
            .or_else(|| c.trim().parse().ok().filter(|&i| i < schema.num_concepts()))
            .ok_or_else(|| Error::config(format!("unknown concept {c:?}")))?;
        let class = schema
            .class_index(v.trim())
            .or_else(|| v.trim().parse().ok().filter(|&i| i < schema.concept_classes()))
            .ok_or_else(|| Error::config(format!("unknown class {v:?}")))?;
        map.insert(k, class);
    }
    Ok(map)
}

fn interactive(
    ds: &Dataset,
    split: &Split,
    only: Option<usize>,
    ckpt: &mut Checkpoint,
    cfg: &InterventionConfig,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
) -> Result<()> {
    let schema = &ds.schema;
    for (ex, rec) in split.examples.iter().zip(&split.records) {
        if only.is_some_and(|id| id != ex.id) {
            continue;
        }
        let pred = predict(ex, &ckpt.params, &ckpt.masks)?;
        say(out, &format!("example {}: {}\n", ex.id, rec.text))?;
        say(out, &describe(schema, &pred.concepts, pred.task))?;
        say(out, "corrections (e.g. Food=Positive; empty skips, q quits)> ")?;
        out.flush().map_err(|e| Error::io("<stdout>", e))?;
        let mut line = String::new();
        let n = input.read_line(&mut line).map_err(|e| Error::io("<stdin>", e))?;
        let line = line.trim();
        if n == 0 || line == "q" {
            break;
        }
        if line.is_empty() {
            continue;
        }
        let corrections = parse_corrections(line, schema)?;
        match cfg.mode {
            InterventionMode::Oracle => {
                let compiled = crate::diffcore::CompiledPathway::new(&ckpt.params, &ckpt.masks)?;
                let trace = compiled.forward(&ex.token_ids)?;
                let res = oracle_intervene(&trace, &corrections, &ckpt.params)?;
                let mut concepts = pred.concepts.clone();
                for (&k, &c) in &corrections {
                    concepts[k] = c;
                }
                say(out, &describe(schema, &concepts, res.task))?;
            }
            InterventionMode::Sparsity => {
                let events =
                    sparsity_intervene(ex, &corrections, &ckpt.params, &mut ckpt.masks, cfg)?;
                let post = predict(ex, &ckpt.params, &ckpt.masks)?;
                say(
                    out,
                    &format!("{} drop/grow edits\n", events.len()),
                )?;
                say(out, &describe(schema, &post.concepts, post.task))?;
            }
        }
    }
    Ok(())
}

fn describe(schema: &crate::data::DatasetSchema, concepts: &[usize], task: usize) -> String {
    let parts: Vec<String> = concepts
        .iter()
        .enumerate()
        .map(|(k, &c)| format!("{}={}", schema.concept_names[k], schema.concept_class_names[c]))
        .collect();
    format!("  concepts: {}  task: {}\n", parts.join(" "), task)
}

fn cmd_explain(a: ExplainArgs, s: &mut Settings, out: &mut dyn Write) -> Result<()> {
    let split = s.get::<String>("split", a.split, "test".into())?;
    s.finish()?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let ds = Dataset::load_dir(&a.data)?;
    check_compatible(&ckpt, &ds)?;
    let tokens = match (&a.input, a.example_id) {
        (Some(text), _) => tokenize(text, &ds.vocab, ds.schema.max_len),
        (None, Some(id)) => ds
            .split(&split)?
            .examples
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::data(format!("no example {id} in split {split}")))?
            .token_ids
            .clone(),
        (None, None) => return Err(Error::config("explain needs --input or --example-id")),
    };
    let trace = explain(&tokens, &ds.vocab, &ds.schema, &ckpt.params, &ckpt.masks)?;
    let files = render_report(&trace, &trace.mask_stats, &a.out)?;
    let mut text = format!("task class {} (logits", trace.task);
    for l in &trace.task_logits {
        text += &format!(" {l:.3}");
    }
    text += ")\n";
    for &k in &trace.ranking {
        let c = &trace.concepts[k];
        text += &format!(
            "  {:<10} {:<9} contribution to class {}: {:+.4}\n",
            c.name, c.class_name, trace.task, c.contribution[trace.task]
        );
    }
    text += &format!("wrote {} files to {}\n", files.len(), a.out.display());
    say(out, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_precedence_and_unknown_keys() {
        let mut s = Settings::parse("# defaults\nbatch-size = 16\nlr=0.01\n", None).unwrap();
        assert_eq!(s.get("batch_size", Some(4usize), 8).unwrap(), 4);
        assert_eq!(s.get("lr", None, 1e-3).unwrap(), 0.01);
        assert_eq!(s.get("epochs", None, 20usize).unwrap(), 20);
        assert!(s.finish().is_ok());

        let mut s = Settings::parse("lr = 0.1\ngamma = 2\n", None).unwrap();
        s.get("lr", None, 0.0).unwrap();
        let err = s.finish().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("gamma"));

        assert!(Settings::parse("lr = 1\nlr = 2\n", None).is_err());
        assert!(Settings::parse("just words\n", None).is_err());
        let mut s = Settings::parse("epochs = many\n", None).unwrap();
        assert!(s.get("epochs", None, 1usize).is_err());
    }

    #[test]
    fn seed_comes_from_the_file_before_the_default() {
        let mut s = Settings::parse("seed = 42\n", None).unwrap();
        assert_eq!(s.seed(None).unwrap(), 42);
        let mut s = Settings::parse("seed = 42\n", None).unwrap();
        assert_eq!(s.seed(Some(3)).unwrap(), 3);
    }

    #[test]
    fn corrections_accept_names_and_indices() {
        let schema = crate::data::DatasetSchema::cebab_like();
        let m = parse_corrections("Food=Positive, 2=0", &schema).unwrap();
        assert_eq!(m, BTreeMap::from([(0, schema.class_index("Positive").unwrap()), (2, 0)]));
        assert!(parse_corrections("Decor=Positive", &schema).is_err());
        assert!(parse_corrections("Food", &schema).is_err());
        assert!(parse_corrections("Food=7", &schema).is_err());
    }

    #[test]
    fn usage_errors_exit_one() {
        let mut input = std::io::empty();
        let mut sink = Vec::new();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let out = out.to_str().unwrap();
        assert_eq!(run_from(["sparsecbm", "frobnicate"], &mut input, &mut sink), 1);
        assert_eq!(run_from(["sparsecbm", "gen-data", "--out", out, "--n-train", "0"], &mut input, &mut sink), 1);
        assert_eq!(run_from(["sparsecbm", "--help"], &mut input, &mut sink), 0);
        assert_eq!(
            run_from(["sparsecbm", "eval", "--ckpt", "/nonexistent/m.json", "--data", out], &mut input, &mut sink),
            2
        );
    }
}
