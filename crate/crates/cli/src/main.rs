use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use argmine::ensemble::LinkRule;
use argmine::{CorpusSchema, Variant};
use argmine_cli::commands::{self, Context};
use argmine_cli::config::{parse_seeds, CorpusFormat, RunConfig};
use argmine_cli::{code, StageError};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "argmine", version, about = "Multi-task residual networks for argument mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus schema (JSON with component_classes and forward_relations);
    /// replaces the schema of --config.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Artifact root; same as out_dir in the config or OUT_DIR.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Resarg,
    Resattarg,
}

impl From<Arch> for Variant {
    fn from(a: Arch) -> Self {
        match a {
            Arch::Resarg => Variant::ResArg,
            Arch::Resattarg => Variant::ResAttArg,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    RelationArgmax,
    Threshold,
}

#[derive(Subcommand)]
enum Command {
    /// Read an annotated corpus, validate it, assign splits and write the normalized corpus.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        format: Option<CorpusFormat>,
        /// Corpus directory (standoff, cdcp) or file (normalized).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Normalized corpus to write [default: <out_dir>/corpus.jsonl].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every document invariant of a normalized corpus file.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Enumerate the candidate pairs of each split.
    Pairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory for train/valid/test.jsonl [default: <out_dir>/pairs].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model and write its checkpoint directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        seed: Option<u64>,
        /// Checkpoint directory [default: <out_dir>/models/seed-<seed>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per seed, several at once.
    TrainEnsemble {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Seeds as `1..10`, `1..=10` or `1,4,9` [default: config seeds].
        #[arg(long)]
        seeds: Option<String>,
        /// Members trained in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Ensemble predictions for a pair file.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Pairs to predict [default: <out_dir>/pairs/test.jsonl].
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Checkpoint directories [default: <out_dir>/models/seed-<s> for the config seeds].
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long, value_enum)]
        link_rule: Option<Rule>,
        /// [default: <out_dir>/predictions]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score predictions against gold labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// [default: <out_dir>/reports]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient block.
    Gradcheck {
        #[arg(long, value_enum, default_value = "resattarg")]
        arch: Arch,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Perturb the analytic gradients (negative control).
        #[arg(long)]
        corrupt: bool,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check provenance of every artifact and print the summary.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Run every stage from the config.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

#[derive(Args, Clone)]
struct ModelFlags {
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Training pairs [default: <out_dir>/pairs/train.jsonl].
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Validation pairs [default: <out_dir>/pairs/valid.jsonl].
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

fn load_schema(path: &PathBuf) -> Result<CorpusSchema, StageError> {
    CorpusSchema::from_json_file(path).map_err(|e| StageError::config("config", e))
}

fn build_config(common: &Common) -> Result<RunConfig, StageError> {
    let mut cfg = match (&common.config, &common.schema) {
        (Some(path), _) => RunConfig::load(path).map_err(|e| StageError::config("config", format!("{e:#}")))?,
        (None, Some(schema)) => {
            let mut c = RunConfig::with_schema(load_schema(schema)?);
            c.apply_env(|k| std::env::var_os(k));
            c
        }
        (None, None) => return Err(StageError::config("config", "either --config or --schema is required")),
    };
    if let (Some(_), Some(schema)) = (&common.config, &common.schema) {
        cfg.schema = load_schema(schema)?;
    }
    if let Some(out) = &common.out_dir {
        cfg.out_dir.clone_from(out);
    }
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut RunConfig, m: &ModelFlags) {
    if let Some(a) = m.arch {
        cfg.arch.variant = a.into();
    }
    if let Some(n) = m.max_epochs {
        cfg.train.max_epochs = n;
    }
    if let Some(n) = m.patience {
        cfg.train.patience = n;
    }
}

fn static_check(cfg: &RunConfig) -> Result<(), StageError> {
    // input paths are checked by the stage that reads them
    let mut probe = cfg.clone();
    probe.corpus.format = CorpusFormat::Synthetic;
    probe.corpus.synthetic.get_or_insert(argmine_cli::config::SyntheticSpec { seed: 0, n_docs: 0 });
    probe.check().map_err(|(stage, msg)| StageError::config(stage, msg))
}

fn run(cli: Cli) -> Result<(), StageError> {
    match cli.command {
        Command::Ingest {
            common,
            format,
            input,
            out,
        } => {
            let mut cfg = build_config(&common)?;
            if let Some(f) = format {
                cfg.corpus.format = f;
            }
            if let Some(i) = input {
                cfg.corpus.path = Some(i);
            }
            cfg.check().map_err(|(stage, msg)| StageError::config(stage, msg))?;
            let ctx = Context::new(cfg);
            let out = out.unwrap_or_else(|| ctx.layout.corpus());
            let docs = commands::ingest(&ctx, &out)?;
            println!("wrote {} documents to {}", docs.len(), out.display());
        }
        Command::Validate { input, schema } => {
            let schema = schema.as_ref().map(load_schema).transpose()?;
            let (n, problems) = commands::validate_file(&input, schema.as_ref())?;
            for p in &problems {
                println!("{p}");
            }
            if !problems.is_empty() {
                return Err(StageError::data("validate", format!("{} violations in {n} documents", problems.len())));
            }
            println!("ok: {n} documents");
        }
        Command::Pairs { common, corpus, out } => {
            let cfg = build_config(&common)?;
            static_check(&cfg)?;
            let ctx = Context::new(cfg);
            let corpus = corpus.unwrap_or_else(|| ctx.layout.corpus());
            let out = out.unwrap_or_else(|| ctx.layout.root.join("pairs"));
            for (split, c) in commands::pairs(&ctx, &corpus, &out)? {
                println!("{split}: {} pairs, {} links", c.pairs, c.links);
            }
        }
        Command::Train {
            common,
            model,
            seed,
            out,
        } => {
            let mut cfg = build_config(&common)?;
            apply_model_flags(&mut cfg, &model);
            let seed = seed.unwrap_or(cfg.train.seed);
            static_check(&cfg)?;
            let ctx = Context::new(cfg);
            let dir = out.unwrap_or_else(|| ctx.layout.model(seed));
            let (corpus, pairs, valid) = model_inputs(&ctx, &model);
            let n = commands::train(&ctx, &corpus, &pairs, &valid, &[(seed, dir.clone())], 1)?;
            println!("trained {} ({} trainable parameters) -> {}", ctx.cfg.arch.variant, n.trainable, dir.display());
        }
        Command::TrainEnsemble {
            common,
            model,
            seeds,
            jobs,
        } => {
            let mut cfg = build_config(&common)?;
            apply_model_flags(&mut cfg, &model);
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s).map_err(|e| StageError::config("config", e))?;
            }
            static_check(&cfg)?;
            let ctx = Context::new(cfg);
            let targets: Vec<_> = ctx.cfg.seeds.iter().map(|&s| (s, ctx.layout.model(s))).collect();
            let (corpus, pairs, valid) = model_inputs(&ctx, &model);
            commands::train(&ctx, &corpus, &pairs, &valid, &targets, jobs)?;
            println!("trained {} models under {}", targets.len(), ctx.layout.models().display());
        }
        Command::Predict {
            common,
            corpus,
            pairs,
            models,
            link_rule,
            out,
        } => {
            let mut cfg = build_config(&common)?;
            if let Some(r) = link_rule {
                cfg.link_rule = match r {
                    Rule::RelationArgmax => LinkRule::RelationArgmax,
                    Rule::Threshold => LinkRule::Threshold,
                };
            }
            static_check(&cfg)?;
            let ctx = Context::new(cfg);
            let l = &ctx.layout;
            let models = if models.is_empty() {
                ctx.cfg.seeds.iter().map(|&s| l.model(s)).collect()
            } else {
                models
            };
            let out = out.unwrap_or_else(|| l.predictions());
            commands::predict(
                &ctx,
                &corpus.unwrap_or_else(|| l.corpus()),
                &pairs.unwrap_or_else(|| l.pairs("test")),
                &models,
                &out,
                &l.reports(),
            )?;
            println!("wrote predictions to {}", out.display());
        }
        Command::Evaluate {
            common,
            corpus,
            pairs,
            predictions,
            out,
        } => {
            let cfg = build_config(&common)?;
            static_check(&cfg)?;
            let ctx = Context::new(cfg);
            let l = &ctx.layout;
            let report = commands::evaluate(
                &ctx,
                &corpus.unwrap_or_else(|| l.corpus()),
                &pairs.unwrap_or_else(|| l.pairs("test")),
                &predictions.unwrap_or_else(|| l.predictions()),
                &out.unwrap_or_else(|| l.reports()),
            )?;
            print!("{}", argmine::metrics::render_text(&report));
        }
        Command::Gradcheck {
            arch,
            seed,
            corrupt,
            json,
        } => {
            let report = commands::gradcheck(arch.into(), seed, corrupt)?;
            if json {
                let s = serde_json::to_string_pretty(&report)
                    .context("serializing report")
                    .map_err(|e| StageError::new("gradcheck", code::DATA, e))?;
                println!("{s}");
            } else {
                print!("{}", commands::render_gradcheck(&report));
            }
            if !report.passed() {
                return Err(StageError::check(
                    "gradcheck",
                    format!("max relative error {:.3e} exceeds {:.0e}", report.max_error(), report.threshold),
                ));
            }
        }
        Command::Report { common } => {
            let cfg = build_config(&common)?;
            let ctx = Context::new(cfg);
            print!("{}", commands::report(&ctx)?);
        }
        Command::Pipeline { common, jobs } => {
            let cfg = build_config(&common)?;
            let ctx = Context::new(cfg);
            commands::pipeline(&ctx, jobs)?;
            print!("{}", std::fs::read_to_string(ctx.layout.reports().join("summary.txt")).unwrap_or_default());
        }
    }
    Ok(())
}

fn model_inputs(ctx: &Context, m: &ModelFlags) -> (PathBuf, PathBuf, PathBuf) {
    let l = &ctx.layout;
    (
        m.corpus.clone().unwrap_or_else(|| l.corpus()),
        m.pairs.clone().unwrap_or_else(|| l.pairs("train")),
        m.valid.clone().unwrap_or_else(|| l.pairs("valid")),
    )
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(code::OK),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code)
        }
    }
}
