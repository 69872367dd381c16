//! `hjnt`: synthetic data generation, training, evaluation, prediction,
//! gradient checking and corpus statistics for the H-Joint-2 model.

mod config;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use hjnt_core::corpus::{corpus_stats, generate_synthetic, load_corpus, save_corpus, split, Corpus, SynthSpec};
use hjnt_core::embeddings::{EmbeddingStack, TableDescriptor};
use hjnt_core::eval::{
    evaluate, modality_tags, report_csv, report_text, run_experiment, Evaluation, Protocol, ReportRow,
};
use hjnt_core::fusion::{load_feature_store, FeatureStore, FusionError, FusionPolicy, Modality};
use hjnt_core::models::{
    check_level1, check_level2, init_pipeline, load_pipeline, save_pipeline, train_pipeline, GradCheckCase,
    HJoint2Pipeline, ModelError,
};
use hjnt_core::neural::GradCheckOptions;
use serde::{Deserialize, Serialize};

use config::{CliConfig, CorpusSection, EmbeddingsSection, EvalSection, LoadedConfig, ModelSection, TrainSection};

/// Failure with its exit code: 1 for verification or metric failures, 2 for
/// usage, input and IO errors.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }

    pub fn check(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            msg: msg.into(),
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        let mut msg = e.to_string();
        let mut src = e.source();
        while let Some(s) = src {
            let s_msg = s.to_string();
            if !msg.contains(&s_msg) {
                msg.push_str(": ");
                msg.push_str(&s_msg);
            }
            src = s.source();
        }
        Self::usage(msg)
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "hjnt",
    version,
    about = "Hierarchical joint intent/slot models with multimodal fusion"
)]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic corpus, feature store, embedding tables and a
    /// text-only config into a directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
        /// Synthesis spec (JSON); built-in defaults otherwise.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Comma-separated feature modalities, or `none`.
        #[arg(long, value_delimiter = ',')]
        modalities: Option<Vec<String>>,
    },
    /// Trains Level-1 then Level-2 and writes the model, its sidecar and a
    /// training log.
    Train {
        /// Model path; the sidecar goes to `<out>.json`.
        #[arg(long)]
        out: PathBuf,
        /// Validates the config, builds the models and runs one forward pass.
        #[arg(long)]
        dry_run: bool,
    },
    /// Scores a model on a corpus, or runs the configured experiment when
    /// `--model` is absent.
    Eval {
        #[arg(long, requires = "corpus")]
        model: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, action = ArgAction::Set)]
        include_none: Option<bool>,
        /// Writes `<prefix>.csv`, `<prefix>.json` and `<prefix>.txt`.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Exit 1 unless intent and slot weighted-F1 reach this value.
        #[arg(long)]
        min_f1: Option<f64>,
    },
    /// Predicts intents and slots for JSON-lines or raw-text utterances.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Input file; stdin when absent or `-`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// One whitespace-tokenized utterance per line.
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Finite-difference gradient check of both architectures in float64.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Arch::All)]
        arch: Arch,
        /// Fused modalities for the Level-2 check.
        #[arg(long, value_delimiter = ',')]
        fusion: Option<Vec<String>>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Intent and slot count tables.
    Stats {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Arch {
    Level1,
    Level2,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_env("HJNT_LOG")
        .init();
    if let Some(n) = std::env::var("HJNT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("cannot size thread pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate {
            ref out,
            ref spec,
            n,
            ref modalities,
        } => cmd_generate(out, spec.as_deref(), n, modalities.as_deref(), cli.seed),
        Command::Train { ref out, dry_run } => cmd_train(&load_config(&cli)?, out, dry_run),
        Command::Eval {
            ref model,
            ref corpus,
            ref features,
            include_none,
            ref report,
            min_f1,
        } => match model {
            Some(m) => cmd_eval_model(
                m,
                corpus.as_deref().expect("clap enforces --corpus"),
                features.as_deref(),
                include_none.unwrap_or(true),
                report.as_deref(),
                min_f1,
            ),
            None => cmd_eval_experiment(&load_config(&cli)?, include_none, report.as_deref(), min_f1),
        },
        Command::Predict {
            ref model,
            ref input,
            raw,
            ref features,
        } => cmd_predict(model, input.as_deref(), raw, features.as_deref()),
        Command::Gradcheck { arch, ref fusion, tol } => cmd_gradcheck(arch, fusion.as_deref(), tol, cli.seed),
        Command::Stats { ref corpus, format } => {
            let path = match corpus {
                Some(p) => p.clone(),
                None => {
                    let l = load_config(&cli)?;
                    l.resolve(&l.cfg.corpus.path)
                }
            };
            cmd_stats(&path, format)
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<LoadedConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::usage("this command needs --config"))?;
    let mut l = LoadedConfig::read(path)?;
    if let Some(s) = cli.seed {
        l.cfg.train.seed = s;
    }
    Ok(l)
}

fn parse_modalities(items: &[String]) -> CliResult<Vec<Modality>> {
    if items.len() == 1 && items[0] == "none" {
        return Ok(Vec::new());
    }
    items
        .iter()
        .map(|s| s.trim().parse::<Modality>().map_err(CliError::usage))
        .collect()
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::usage(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_generate(
    out: &Path,
    spec_path: Option<&Path>,
    n: Option<usize>,
    modalities: Option<&[String]>,
    seed: Option<u64>,
) -> CliResult<()> {
    let mut spec = match spec_path {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| CliError::usage(format!("invalid spec {}: {e}", p.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(n) = n {
        spec.n_utterances = n;
    }
    if let Some(m) = modalities {
        spec.features.modalities = parse_modalities(m)?;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let data = generate_synthetic(&spec)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::usage(format!("cannot create {}: {e}", out.display())))?;

    save_corpus(out.join("corpus.jsonl"), &data.corpus)?;
    data.store.save(out.join("features.jsonl"))?;
    write_json(&out.join("features.schema.json"), &spec.features.schema)?;
    let mut tables = Vec::new();
    for t in &data.tables {
        let file = format!("{}.txt", t.name());
        t.save(out.join(&file))?;
        tables.push(TableDescriptor {
            name: t.name().to_string(),
            dim: t.dim(),
            path: Some(file),
            oov: Default::default(),
        });
    }
    let cfg = CliConfig {
        corpus: CorpusSection {
            path: "corpus.jsonl".into(),
            dev: None,
            features: Some("features.jsonl".into()),
            schema: Some("features.schema.json".into()),
        },
        embeddings: EmbeddingsSection {
            tables: tables.into_iter().take(1).collect(),
        },
        fusion: FusionPolicy::none(),
        model: ModelSection::default(),
        train: TrainSection::with_seed(spec.seed),
        eval: EvalSection::default(),
    };
    write_json(&out.join("config.json"), &cfg)?;
    write_json(&out.join("spec.json"), &spec)?;
    print!("{}", corpus_stats(&data.corpus).to_text());
    Ok(())
}

struct Inputs {
    corpus: Corpus,
    dev: Option<Corpus>,
    stack: EmbeddingStack,
    store: Option<FeatureStore>,
}

fn load_inputs(l: &LoadedConfig) -> CliResult<Inputs> {
    let c = &l.cfg.corpus;
    let corpus = load_corpus(l.resolve(&c.path))?;
    let dev = c.dev.as_ref().map(|p| load_corpus(l.resolve(p))).transpose()?;
    let stack = EmbeddingStack::load(&l.tables())?;
    let store = match &c.features {
        Some(p) => Some(load_feature_store(l.resolve(p), l.schema()?)?),
        None => None,
    };
    if l.cfg.fusion.is_enabled() && store.is_none() {
        return Err(FusionError::MissingStore.into());
    }
    Ok(Inputs {
        corpus,
        dev,
        stack,
        store,
    })
}

fn cmd_train(l: &LoadedConfig, out: &Path, dry_run: bool) -> CliResult<()> {
    let cfg = l.train_config();
    cfg.validate()?;
    if l.cfg.embeddings.tables.is_empty() {
        return Err(CliError::usage("config lists no embedding tables"));
    }
    let inputs = load_inputs(l)?;
    let (train, dev, test) = match inputs.dev {
        Some(d) => (inputs.corpus, d, None),
        None => {
            let ratios = match l.cfg.eval.protocol {
                Protocol::Split { ratios } => ratios,
                Protocol::Kfold { .. } => (0.8, 0.1, 0.1),
            };
            let (tr, dv, te) = split(&inputs.corpus, ratios, cfg.seed)?;
            (tr, dv, Some(te))
        }
    };
    let store = inputs.store.as_ref();
    let schema = l.schema()?;

    if dry_run {
        let p = init_pipeline(&train, inputs.stack, store, l.cfg.fusion.clone(), schema, &cfg)?;
        let r = p.predict(&train.utterances[0], store)?;
        println!(
            "dry run ok: {} train / {} dev utterances, input width {}, intent head reads {} values, first prediction {}",
            train.len(),
            dev.len(),
            p.stack.total_dim(),
            p.level2.intent_input_width(),
            r.intent
        );
        return Ok(());
    }

    let (p, report) = train_pipeline(
        &train,
        Some(&dev),
        inputs.stack,
        store,
        l.cfg.fusion.clone(),
        schema,
        &cfg,
    )?;
    save_pipeline(&p, out)?;
    let mut log = create(&with_suffix(out, ".log.jsonl"))?;
    for rec in report.level1.iter().chain(&report.level2) {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    if let Some(te) = &test {
        save_corpus(with_suffix(out, ".test.jsonl"), te)?;
    }
    let e = evaluate(&p, &dev, store, l.cfg.eval.include_none)?;
    println!(
        "trained {} level-1 and {} level-2 epochs on {} utterances; dev metrics:",
        report.level1.len(),
        report.level2.len(),
        train.len()
    );
    print!("{}", report_text(&[row_for(&p, &e)]));
    Ok(())
}

fn features_label(p: &HJoint2Pipeline) -> String {
    let names: Vec<String> = p.stack.tables().iter().map(|t| t.name().to_string()).collect();
    let mut s = format!("Embeddings ({})", names.join("+"));
    for m in p.fusion.modalities() {
        s.push_str(&format!(" + {m}"));
    }
    s
}

fn row_for(p: &HJoint2Pipeline, e: &Evaluation) -> ReportRow {
    ReportRow {
        modalities: modality_tags(&p.stack.describe(), &p.fusion),
        features: features_label(p),
        intent: e.intent.weighted.into(),
        slot: Some(e.slots().weighted.into()),
    }
}

fn load_store(p: &HJoint2Pipeline, features: Option<&Path>) -> CliResult<Option<FeatureStore>> {
    match features {
        Some(f) => Ok(Some(load_feature_store(f, p.schema)?)),
        None if p.fusion.is_enabled() => Err(CliError::usage(format!(
            "MissingFeatureStore: the model fuses {:?}; pass --features",
            p.fusion.modalities().iter().map(|m| m.as_str()).collect::<Vec<_>>()
        ))),
        None => Ok(None),
    }
}

fn write_report<T: Serialize>(prefix: &Path, rows: &[ReportRow], json: &T) -> CliResult<()> {
    write_text(&with_suffix(prefix, ".csv"), &report_csv(rows))?;
    write_text(&with_suffix(prefix, ".txt"), &report_text(rows))?;
    write_json(&with_suffix(prefix, ".json"), json)
}

fn check_min_f1(rows: &[ReportRow], min: Option<f64>) -> CliResult<()> {
    let Some(min) = min else { return Ok(()) };
    for r in rows {
        let slot = r.slot.map_or(f64::INFINITY, |s| s.f1);
        if r.intent.f1 < min || slot < min {
            return Err(CliError::check(format!(
                "{}: intent F1 {:.4}, slot F1 {:.4} below {min}",
                r.features, r.intent.f1, slot
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct ModelEvalReport<'a> {
    model: String,
    corpus: String,
    include_none: bool,
    rows: &'a [ReportRow],
    evaluation: &'a Evaluation,
}

fn cmd_eval_model(
    model: &Path,
    corpus: &Path,
    features: Option<&Path>,
    include_none: bool,
    report: Option<&Path>,
    min_f1: Option<f64>,
) -> CliResult<()> {
    let p = load_pipeline(model)?;
    let c = load_corpus(corpus)?;
    let store = load_store(&p, features)?;
    let e = evaluate(&p, &c, store.as_ref(), include_none)?;
    let rows = [row_for(&p, &e)];
    print!("{}", report_text(&rows));
    if let Some(prefix) = report {
        let json = ModelEvalReport {
            model: model.display().to_string(),
            corpus: corpus.display().to_string(),
            include_none,
            rows: &rows,
            evaluation: &e,
        };
        write_report(prefix, &rows, &json)?;
    }
    check_min_f1(&rows, min_f1)
}

fn cmd_eval_experiment(
    l: &LoadedConfig,
    include_none: Option<bool>,
    report: Option<&Path>,
    min_f1: Option<f64>,
) -> CliResult<()> {
    let mut cfg = l.experiment()?;
    if let Some(b) = include_none {
        cfg.include_none = b;
    }
    let r = run_experiment(&cfg)?;
    print!("{}", report_text(&r.rows));
    println!("config {} seed {}", r.config_hash, r.seed);
    if let Some(prefix) = report {
        write_report(prefix, &r.rows, &r)?;
    }
    check_min_f1(&r.rows, min_f1)
}

#[derive(Deserialize)]
struct PredictInput {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    text: Option<String>,
}

fn cmd_predict(model: &Path, input: Option<&Path>, raw: bool, features: Option<&Path>) -> CliResult<()> {
    let p = load_pipeline(model)?;
    let store = load_store(&p, features)?;
    let reader: Box<dyn BufRead> = match input {
        Some(path) if path != Path::new("-") => {
            Box::new(BufReader::new(File::open(path).map_err(|e| {
                CliError::usage(format!("cannot open {}: {e}", path.display()))
            })?))
        }
        _ => Box::new(BufReader::new(io::stdin())),
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let (id, tokens) = if raw {
            (
                format!("line-{lineno}"),
                line.split_whitespace().map(str::to_string).collect(),
            )
        } else {
            if line.trim().is_empty() {
                continue;
            }
            let v: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| CliError::usage(format!("input line {lineno}: {e}")))?;
            if v.get("slot_inventory").is_some() {
                continue;
            }
            let u: PredictInput =
                serde_json::from_value(v).map_err(|e| CliError::usage(format!("input line {lineno}: {e}")))?;
            let tokens = match (u.tokens, u.text) {
                (Some(t), _) => t,
                (None, Some(text)) => text.split_whitespace().map(str::to_string).collect(),
                (None, None) => Vec::new(),
            };
            (u.id.unwrap_or_else(|| format!("line-{lineno}")), tokens)
        };
        let r = p.predict_tokens(&id, &tokens, store.as_ref()).map_err(|e| match e {
            ModelError::EmptyUtterance(_) => CliError::usage(format!("input line {lineno}: EmptyUtterance: {e}")),
            other => other.into(),
        })?;
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_gradcheck(arch: Arch, fusion: Option<&[String]>, tol: f64, seed: Option<u64>) -> CliResult<()> {
    let opts = GradCheckOptions {
        tol,
        ..GradCheckOptions::default()
    };
    let base = GradCheckCase {
        seed: seed.unwrap_or(0),
        ..GradCheckCase::default()
    };
    let mut cases: Vec<(String, bool, GradCheckCase)> = Vec::new();
    if arch != Arch::Level2 {
        cases.push(("level1".into(), false, base.clone()));
    }
    if arch != Arch::Level1 {
        match fusion {
            Some(f) => {
                let mods = parse_modalities(f)?;
                let name = if mods.is_empty() {
                    "level2".to_string()
                } else {
                    format!(
                        "level2+{}",
                        mods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
                    )
                };
                cases.push((
                    name,
                    true,
                    GradCheckCase {
                        fusion: mods,
                        ..base.clone()
                    },
                ));
            }
            None => {
                cases.push(("level2".into(), true, base.clone()));
                cases.push((
                    "level2+audio".into(),
                    true,
                    GradCheckCase {
                        fusion: vec![Modality::Audio],
                        ..base.clone()
                    },
                ));
            }
        }
    }
    let mut all = true;
    for (name, level2, case) in &cases {
        let r = if *level2 {
            check_level2(case, &opts)
        } else {
            check_level1(case, &opts)
        };
        all &= r.passed;
        println!(
            "{:<14} {} max_rel_err={:.3e} checked={} tol={:e}",
            name,
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_err,
            r.checked,
            tol
        );
    }
    if all {
        Ok(())
    } else {
        Err(CliError::check("gradient check failed"))
    }
}

fn cmd_stats(path: &Path, format: Format) -> CliResult<()> {
    let c = load_corpus(path)?;
    let s = corpus_stats(&c);
    match format {
        Format::Text => print!("{}", s.to_text()),
        Format::Csv => print!("{}", s.to_csv()),
    }
    Ok(())
}
