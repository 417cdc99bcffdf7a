use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use reftrack::corpus::{compute_corpus_stats, load_corpus};
use reftrack::orchestrator::{
    analyze, cell_from_scores, load_source, prepare, run_grid, train_one, Analysis, CorpusSource, GridSpec, Job,
    Profile,
};
use reftrack::report::write_report;
use reftrack::{selftest, Checkpoint, Error, Result};

#[derive(Parser)]
#[command(name = "reftrack", version, about = "Mutual-exclusivity probes for small language models")]
struct Cli {
    /// TOML config overlaid on the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (default: runs/<profile>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Models trained concurrently by `grid`.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Corpus seed for `synth`; model seed for `train` and `battery`;
    /// restricts `grid` to this one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus into <out>/corpus.txt.
    Synth {
        #[arg(long)]
        sentences: Option<usize>,
    },
    /// Discourse statistics of the battery nouns.
    Stats {
        /// Corpus file (default: the configured source).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train a single model.
    Train {
        #[arg(long)]
        size: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train and score the whole grid, resuming finished models.
    Grid,
    /// Score the battery on one checkpoint.
    Battery {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cell statistics, hypothesis verdicts and correlations.
    Analyze,
    /// Tables and figures from analysis.json.
    Report,
    /// Statistical and architectural oracle checks.
    Selftest,
}

fn load_spec(cli: &Cli) -> Result<GridSpec> {
    let profile: Option<Profile> = cli.profile.as_deref().map(str::parse).transpose()?;
    let mut spec = match &cli.config {
        Some(p) => GridSpec::load(p, profile)?,
        None => GridSpec::preset(profile.unwrap_or(Profile::Desk)),
    };
    if let (Some(seed), Command::Grid) = (cli.seed, &cli.command) {
        spec.seeds = vec![seed];
    }
    spec.validate()?;
    Ok(spec)
}

fn out_dir(cli: &Cli, spec: &GridSpec) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| {
        let name = match spec.profile {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        };
        Path::new("runs").join(name)
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn verdict_summary(a: &Analysis) -> Value {
    let v = &a.verdicts;
    json!({
        "cells": a.cells.len(),
        "complete": a.cells.iter().all(|c| c.complete()),
        "h1": v.h1.outcome, "h2": v.h2.outcome, "h3": v.h3.outcome, "h4": v.h4.outcome,
    })
}

fn run(cli: &Cli) -> Result<Value> {
    if let Command::Selftest = cli.command {
        let report = selftest::run();
        if !report.passed() {
            let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
            return Err(Error::InvalidArgument(format!("selftest failed: {}", failed.join("; "))));
        }
        return Ok(serde_json::to_value(report)?);
    }
    let mut spec = load_spec(cli)?;
    let out = out_dir(cli, &spec);
    match &cli.command {
        Command::Synth { sentences } => {
            let CorpusSource::Synthetic { sentences: n, seed, .. } = &mut spec.corpus else {
                return Err(Error::InvalidArgument("configured corpus is not synthetic".into()));
            };
            if let Some(s) = sentences {
                *n = *s;
            }
            if let Some(s) = cli.seed {
                *seed = s;
            }
            let corpus = load_source(&spec.corpus)?;
            let path = out.join("corpus.txt");
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            std::fs::write(&path, corpus.to_text()).map_err(|e| Error::io(&path, e))?;
            Ok(json!({ "corpus": path, "sentences": corpus.len(), "word_tokens": corpus.word_tokens() }))
        }
        Command::Stats { corpus } => {
            let c = match corpus {
                Some(p) => load_corpus(p)?,
                None => load_source(&spec.corpus)?,
            };
            let stats = compute_corpus_stats(&c, &spec.battery.nouns)?;
            let path = out.join("corpus_stats.json");
            write_json(&path, &stats)?;
            Ok(json!({ "stats": path, "mean_repetition_within_3": stats.mean_repetition(),
                       "multi_target_sentences": stats.multi_target_sentence_count }))
        }
        Command::Train { size, epochs } => {
            let prep = prepare(&spec, &out)?;
            let job = Job {
                size: size.clone().unwrap_or_else(|| spec.sizes[0].clone()),
                epochs: epochs.unwrap_or(spec.epochs[0]),
                seed: cli.seed.unwrap_or(spec.seeds[0]),
            };
            let t = train_one(&spec, &prep, &job, &out)?;
            let ppl = reftrack::model::perplexity(&t.checkpoint, &prep.heldout, &prep.vocab)?;
            Ok(json!({ "job": job, "checkpoint": t.path, "hash": t.checkpoint.hash()?,
                       "final_loss": t.final_loss, "perplexity": ppl }))
        }
        Command::Grid => {
            let records = run_grid(&spec, &out, cli.workers)?;
            let failed: Vec<_> = records.iter().filter(|r| !r.ok).collect();
            if !failed.is_empty() {
                let tags: Vec<String> = failed.iter().map(|r| r.job.tag()).collect();
                return Err(Error::InvalidArgument(format!(
                    "{} of {} models failed: {}",
                    failed.len(),
                    records.len(),
                    tags.join(", ")
                )));
            }
            Ok(json!({ "models": records.len(), "results": out.join("results.jsonl") }))
        }
        Command::Battery { checkpoint } => {
            let prep = prepare(&spec, &out)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let ppl = reftrack::model::perplexity(&ckpt, &prep.heldout, &prep.vocab)?;
            let records = prep.battery.run(&ckpt, &prep.vocab)?;
            let stem = checkpoint.file_stem().and_then(|s| s.to_str()).unwrap_or("checkpoint");
            let path = out.join("scores").join(format!("{stem}.jsonl"));
            std::fs::create_dir_all(out.join("scores")).map_err(|e| Error::io(&out, e))?;
            let mut text = String::new();
            for r in &records {
                text += &serde_json::to_string(r)?;
                text.push('\n');
            }
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            let job = Job {
                size: "checkpoint".into(),
                epochs: ckpt.provenance.epochs,
                seed: ckpt.provenance.seed,
            };
            let cell = cell_from_scores(&job, Some(ppl), &records, spec.battery.h2_items, &spec.analysis)?;
            Ok(json!({
                "scores": path,
                "perplexity": ppl,
                "h1": cell.h1.as_ref().map(|h| json!({ "summary": h.summary, "sign_test": h.sign_test })),
                "h2": cell.h2.as_ref().map(|h| &h.means),
                "h3": cell.h3.as_ref().map(|h| json!({ "monotone": h.monotone, "units": h.units.len(),
                                                      "slope": h.slope, "kendall": h.kendall })),
            }))
        }
        Command::Analyze => {
            let a = analyze(&out)?;
            Ok(verdict_summary(&a))
        }
        Command::Report => {
            let path = out.join("analysis.json");
            let a: Analysis = if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)?
            } else {
                analyze(&out)?
            };
            let rep = write_report(&a, &out)?;
            Ok(json!({ "files": rep.files, "notices": rep.notices, "verdicts": verdict_summary(&a) }))
        }
        Command::Selftest => unreachable!("handled above"),
    }
}

/// Prints one document to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn error_record(kind: &str, message: &str) -> String {
    json!({ "status": "error", "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit(&error_record("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(v) => {
            let ok = json!({ "status": "ok", "result": v });
            emit(&serde_json::to_string_pretty(&ok).expect("json value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            emit(&error_record(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
