//! Command-line surface: `synth`, `train`, `generate`, `evaluate`, `gradcheck`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use storyplan_core::corpus::{generate_story_world, ingest_text};
use storyplan_core::evaluation::{format_key_values, format_table};
use storyplan_core::generation::{format_trace, GenerationMode};
use storyplan_core::gradcheck::GradcheckOptions;
use storyplan_core::gradsuite::run_gradcheck_suite;
use storyplan_core::noise::derive_seed;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::corpus_io::{format_corpus, parse_corpus, read_corpus, write_corpus};
use crate::error::{AppError, AppResult};
use crate::workflow::{self, ScorerChoice};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Seed tag for the fresh corpus `evaluate` synthesizes when none is given.
pub const EVAL_CORPUS_TAG: u64 = 0xe7a1;

#[derive(Debug, Parser)]
#[command(name = "storyplan", version, about = "Latent story planning: train, generate and evaluate story models")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// key=value configuration file; unset keys keep their defaults
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the seed the command draws from
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic story-world corpus (or convert plain text with --ingest)
    Synth {
        #[command(flatten)]
        common: Common,
        /// Corpus file to write
        #[arg(long, value_name = "PATH", required_unless_present = "print_config")]
        out: Option<PathBuf>,
        /// Print every configuration key with its default and exit
        #[arg(long)]
        print_config: bool,
        /// Plain prose to split into sentences instead of synthesizing
        #[arg(long, value_name = "PATH")]
        ingest: Option<PathBuf>,
    },
    /// Train on a corpus and write a checkpoint plus a key=value log
    Train {
        #[command(flatten)]
        common: Common,
        /// Corpus file; a synthetic corpus is generated from the config when absent
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// Checkpoint to write
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Continue from the existing checkpoint at --checkpoint
        #[arg(long)]
        resume: bool,
        /// Training log (default: the checkpoint path with a .log extension)
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Continue prompt stories and write the continuations plus a trace
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Prompt stories in corpus format
        #[arg(long, value_name = "PATH", alias = "prompt")]
        corpus: PathBuf,
        #[arg(long, value_name = "MODE", default_value = "rerank")]
        mode: String,
        #[arg(long, value_name = "NAME", default_value = "tdvae")]
        scorer: String,
        /// Continuations file; the trace goes next to it with a .trace extension
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Run the swap/mutation tasks and text statistics
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Required for every scorer except random
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Evaluation corpus; a fresh synthetic corpus is generated when absent
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        /// One scorer; all available ones when absent
        #[arg(long, value_name = "NAME", alias = "model")]
        scorer: Option<String>,
        /// Report file (default: standard output)
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every training objective
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Entries checked per parameter tensor
        #[arg(long, value_name = "N")]
        max_entries: Option<usize>,
    },
}

fn load_config(common: &Common) -> AppResult<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_file(path: &Path, text: &str) -> AppResult<()> {
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn execute(command: Command, stdout: &mut dyn Write) -> AppResult<()> {
    let out_err = |e| AppError::io(Path::new("<stdout>"), e);
    match command {
        Command::Synth { common, out, print_config, ingest } => {
            let mut config = load_config(&common)?;
            if print_config {
                return write!(stdout, "{}", config.to_text()).map_err(out_err);
            }
            let out = out.expect("clap enforces --out");
            let corpus = match ingest {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?;
                    let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("ingested");
                    ingest_text(&text, name, Some(config.lm.vocab_size))?
                }
                None => {
                    if let Some(s) = common.seed {
                        config.corpus.seed = s;
                    }
                    workflow::synthesize(&config)?
                }
            };
            write_corpus(&corpus, &out)?;
            writeln!(stdout, "event=synth stories={} vocab={} out={}", corpus.len(), corpus.vocabulary.len(), out.display())
                .map_err(out_err)
        }
        Command::Train { common, corpus, checkpoint, resume, out } => {
            let mut config = load_config(&common)?;
            if let Some(s) = common.seed {
                config.model_seed = s;
                config.train.seed = s;
            }
            let resume_from = if resume { Some(load_checkpoint(&checkpoint)?) } else { None };
            let vocab = resume_from.as_ref().map(|c| &c.bundle.vocabulary);
            let corpus = match &corpus {
                Some(p) => read_corpus(p, vocab)?,
                None => workflow::synthesize(&config)?,
            };
            let log_path = out.unwrap_or_else(|| with_extension(&checkpoint, "log"));
            let file = std::fs::File::create(&log_path).map_err(|e| AppError::io(&log_path, e))?;
            let mut log = std::io::BufWriter::new(file);
            let ck = workflow::train(&config, &corpus, resume_from, &mut log)?;
            log.flush().map_err(|e| AppError::io(&log_path, e))?;
            save_checkpoint(&ck, &checkpoint)?;
            let t = ck.trainer.as_ref().expect("training returns trainer state");
            writeln!(
                stdout,
                "event=train steps={} epochs={} best_valid={} checkpoint={} log={}",
                t.state.step,
                t.state.epoch,
                t.state.best_valid.map_or("none".into(), |v| format!("{v:.6}")),
                checkpoint.display(),
                log_path.display()
            )
            .map_err(out_err)
        }
        Command::Generate { common, checkpoint, corpus, mode, scorer, out } => {
            let ck = load_checkpoint(&checkpoint)?;
            let mut config = ck.config.clone();
            if let Some(p) = &common.config {
                let over = RunConfig::load(p)?;
                config.generation = over.generation;
                config.generation_seed = over.generation_seed;
            }
            if let Some(s) = common.seed {
                config.generation_seed = s;
            }
            let mode = GenerationMode::parse(&mode).map_err(|e| AppError::Usage(e.to_string()))?;
            let scorer = ScorerChoice::parse(&scorer)?;
            let prompts = read_corpus(&corpus, Some(&ck.bundle.vocabulary))?;
            let gens = workflow::generate(&config, &ck.bundle, &prompts.stories, mode, scorer)?;
            let mut text = String::new();
            let mut trace = String::new();
            for (g, p) in gens.iter().zip(&prompts.stories) {
                for s in &g.story.sentences[p.len()..] {
                    text.push_str(&ck.bundle.vocabulary.decode(s));
                    text.push('\n');
                }
                text.push('\n');
                trace.push_str(&format!("prompt={} score={:.6}\n", p.id, g.score));
                trace.push_str(&format_trace(&g.trace, &ck.bundle.vocabulary));
            }
            write_file(&out, &text)?;
            let trace_path = with_extension(&out, "trace");
            write_file(&trace_path, &trace)?;
            writeln!(stdout, "event=generate prompts={} out={} trace={}", gens.len(), out.display(), trace_path.display())
                .map_err(out_err)
        }
        Command::Evaluate { common, checkpoint, corpus, scorer, out } => {
            let scorer = scorer.as_deref().map(ScorerChoice::parse).transpose()?;
            let (mut config, bundle) = match &checkpoint {
                Some(p) => {
                    let ck = load_checkpoint(p)?;
                    (ck.config, ck.bundle)
                }
                None if scorer == Some(ScorerChoice::Random) => {
                    let config = load_config(&common)?;
                    let world = storyplan_core::corpus::World::new(&config.world)?;
                    let bundle =
                        storyplan_core::bundle::ModelBundle::new(config.model_config(), world.vocabulary, config.model_seed)?;
                    (config, bundle)
                }
                None => return Err(AppError::Usage("--checkpoint is required unless --scorer random".into())),
            };
            if checkpoint.is_some() {
                if let Some(p) = &common.config {
                    config.eval = RunConfig::load(p)?.eval;
                }
            }
            if let Some(s) = common.seed {
                config.eval.seed = s;
            }
            let corpus = match &corpus {
                Some(p) => read_corpus(p, Some(&bundle.vocabulary))?,
                None => {
                    let c = generate_story_world(&config.world, derive_seed(config.corpus.seed, EVAL_CORPUS_TAG), config.eval.stories)?;
                    parse_corpus(&format_corpus(&c), "eval", Some(&bundle.vocabulary))?
                }
            };
            let scorers: Vec<ScorerChoice> = match scorer {
                Some(s) if !s.available(&bundle) => {
                    return Err(AppError::Usage(format!("the checkpoint has no {} component", s.as_str())))
                }
                Some(s) => vec![s],
                None => ScorerChoice::ALL.into_iter().filter(|s| s.available(&bundle)).collect(),
            };
            let rows = workflow::evaluate_tasks(&config, &bundle, &corpus, &scorers)?;
            let mut report = format_table(&rows);
            report.push('\n');
            report.push_str(&format_key_values(&rows));
            if checkpoint.is_some() && config.eval.stats_stories > 0 {
                let mut modes = vec![(GenerationMode::Sample, ScorerChoice::Random)];
                for s in [ScorerChoice::TdVae, ScorerChoice::Lstm, ScorerChoice::Transformer] {
                    if s.available(&bundle) && scorers.contains(&s) {
                        modes.push((GenerationMode::Rerank, s));
                    }
                }
                report.push_str(&workflow::format_stats(&workflow::text_stats(&config, &bundle, &corpus, &modes)?));
            }
            match &out {
                Some(p) => write_file(p, &report),
                None => write!(stdout, "{report}").map_err(out_err),
            }
        }
        Command::Gradcheck { common, max_entries } => {
            let options = GradcheckOptions { max_entries_per_param: max_entries.unwrap_or(usize::MAX) };
            let entries = run_gradcheck_suite(common.seed.unwrap_or(1), options)?;
            let mut failed = Vec::new();
            for e in &entries {
                writeln!(
                    stdout,
                    "gradcheck objective={} max_rel_error={:.3e} entries={} tolerance={:e} passed={}",
                    e.name,
                    e.report.worst(),
                    e.report.entries_checked,
                    e.report.tolerance,
                    e.report.passed()
                )
                .map_err(out_err)?;
                if !e.report.passed() {
                    failed.push(e.name.clone());
                }
            }
            if failed.is_empty() {
                Ok(())
            } else {
                Err(AppError::Config(format!("gradient check failed for {}", failed.join(", "))))
            }
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match execute(cli.command, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                AppError::Usage(_) => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            }
        }
    }
}

/// Corpus text for a fixed story world, for tests and examples.
pub fn sample_corpus_text(config: &RunConfig, seed: u64, n: usize) -> AppResult<String> {
    Ok(format_corpus(&generate_story_world(&config.world, seed, n)?))
}
