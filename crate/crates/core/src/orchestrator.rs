//! Grid runs: corpus and vocabulary preparation, cached training, battery
//! scoring into per-model score logs, analysis into per-cell results, and
//! hypothesis verdicts.
//!
//! A run directory holds:
//!
//! ```text
//! spec.json           resolved grid spec
//! corpus.txt          generated corpus (synthetic sources only)
//! corpus_stats.json   discourse statistics of the battery nouns
//! vocab.json          tokenizer with nonce tokens
//! checkpoints/        <key>.ckpt, key = content hash of all training inputs
//! scores/             one score log per model
//! results.jsonl       append-only run log, one record per finished model
//! analysis.json       cells, verdicts and exploratory correlations
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::battery::{
    h1_results, h2_condition_means, h2_outcomes, h3_units, summarize_h1, Battery, BatteryConfig, Condition,
    H1Result, H1Summary, H3Unit, NounPair, ScoreRecord,
};
use crate::corpus::{compute_corpus_stats, generate_synthetic, load_corpus, Corpus, CorpusStats, SynthParams};
use crate::error::{invalid, Error, Result};
use crate::model::{perplexity, size_preset, train_with_history, Checkpoint, ModelConfig, TrainConfig};
use crate::stats::{
    bootstrap_slope_ci, kendall_tau_trend, mean, ols_fit, sem, sign_test_one_tailed, spearman_rho,
    strict_monotone_fraction, wilcoxon_signed_rank, Alternative, OlsFit, TestResult, Transform,
};
use crate::tokenizer::{train_bpe_to_size, Vocab};
use crate::util::{append_jsonl, create_dir, read_json, read_jsonl, sha256_hex, write_bytes, write_json, write_jsonl};

/// Bumped whenever training semantics change, so stale checkpoints miss.
const CACHE_VERSION: &str = "reftrack-train/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Paper,
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(invalid(format!("unknown profile {other:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    File {
        path: PathBuf,
    },
    Synthetic {
        sentences: usize,
        seed: u64,
        episode_continue_prob: f64,
        two_referent_prob: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub alpha: f64,
    pub bootstrap_replicates: usize,
    pub ci_level: f64,
    pub bootstrap_seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            alpha: 0.05,
            bootstrap_replicates: 10_000,
            ci_level: 0.95,
            bootstrap_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub profile: Profile,
    /// Size preset names: small, medium, large or desk.
    pub sizes: Vec<String>,
    pub epochs: Vec<usize>,
    pub seeds: Vec<u64>,
    pub corpus: CorpusSource,
    pub heldout_fraction: f64,
    /// Base alphabet plus merges, before nonce tokens are added.
    pub bpe_vocab_size: usize,
    pub context_length: usize,
    pub train: TrainSettings,
    pub battery: BatteryConfig,
    pub analysis: AnalysisConfig,
}

impl GridSpec {
    /// The 3 x 3 x 5 reference grid on a sentence-per-line corpus file.
    pub fn paper() -> Self {
        GridSpec {
            profile: Profile::Paper,
            sizes: vec!["small".into(), "medium".into(), "large".into()],
            epochs: vec![5, 10, 20],
            seeds: (0..5).collect(),
            corpus: CorpusSource::File {
                path: PathBuf::from("aochildes.txt"),
            },
            heldout_fraction: 0.02,
            bpe_vocab_size: 8000,
            context_length: 128,
            train: TrainSettings {
                learning_rate: 5e-4,
                batch_size: 32,
                weight_decay: 0.01,
                warmup_steps: None,
            },
            battery: BatteryConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    /// A 2-layer / 64-dim model over 1 and 3 epochs and two seeds, on a
    /// synthetic corpus of roughly 200k tokens.
    pub fn desk() -> Self {
        GridSpec {
            profile: Profile::Desk,
            sizes: vec!["desk".into()],
            epochs: vec![1, 3],
            seeds: vec![0, 1],
            corpus: CorpusSource::Synthetic {
                sentences: 38_000,
                seed: 0,
                episode_continue_prob: 0.65,
                two_referent_prob: 0.15,
            },
            train: TrainSettings {
                learning_rate: 2e-3,
                batch_size: 4,
                weight_decay: 0.01,
                warmup_steps: None,
            },
            ..GridSpec::paper()
        }
    }

    pub fn preset(profile: Profile) -> Self {
        match profile {
            Profile::Paper => GridSpec::paper(),
            Profile::Desk => GridSpec::desk(),
        }
    }

    /// Overlays a TOML document on a profile preset. The profile comes from
    /// `profile` if given, else the document's `profile` key, else desk.
    /// Tables merge key by key, except that a table carrying `kind`
    /// replaces the preset's table outright.
    pub fn from_toml(text: &str, profile: Option<Profile>) -> Result<Self> {
        let bad = |detail: String| Error::Format { what: "config", detail };
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let profile = match (profile, user.get("profile")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(_)) => return Err(bad("profile must be a string".into())),
            (None, None) => Profile::Desk,
        };
        let mut base = toml::Table::try_from(GridSpec::preset(profile)).map_err(|e| bad(e.to_string()))?;
        merge_tables(&mut base, user);
        base.insert("profile".into(), toml::Value::String(format!("{profile:?}").to_lowercase()));
        let spec: GridSpec = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a config file; a relative corpus path resolves against the
    /// file's directory.
    pub fn load(path: &Path, profile: Option<Profile>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = GridSpec::from_toml(&text, profile)?;
        if let CorpusSource::File { path: p } = &mut spec.corpus {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.epochs.is_empty() || self.seeds.is_empty() {
            return Err(invalid("sizes, epochs and seeds must be non-empty"));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(invalid("seeds must be distinct"));
        }
        if self.epochs.contains(&0) {
            return Err(invalid("epoch counts must be positive"));
        }
        let sizes: BTreeSet<&String> = self.sizes.iter().collect();
        let epochs: BTreeSet<usize> = self.epochs.iter().copied().collect();
        if sizes.len() != self.sizes.len() || epochs.len() != self.epochs.len() {
            return Err(invalid("sizes and epochs must be distinct"));
        }
        for s in &self.sizes {
            size_preset(s, 1, 1).ok_or_else(|| invalid(format!("unknown size preset {s:?}")))?;
        }
        if !(self.heldout_fraction > 0.0 && self.heldout_fraction < 0.5) {
            return Err(invalid("heldout_fraction must lie in (0, 0.5)"));
        }
        if self.context_length < 2 {
            return Err(invalid("context_length must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.analysis.alpha) {
            return Err(invalid("alpha must lie in [0, 1]"));
        }
        self.train_config(0, 1).validate()
    }

    pub fn train_config(&self, seed: u64, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            batch_size: self.train.batch_size,
            epochs,
            seed,
            weight_decay: self.train.weight_decay,
            warmup_steps: self.train.warmup_steps,
            ..TrainConfig::default()
        }
    }

    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::new();
        for size in &self.sizes {
            for &epochs in &self.epochs {
                for &seed in &self.seeds {
                    out.push(Job {
                        size: size.clone(),
                        epochs,
                        seed,
                    });
                }
            }
        }
        out
    }
}

fn merge_tables(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("kind") => merge_tables(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// One model of the grid.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Job {
    pub size: String,
    pub epochs: usize,
    pub seed: u64,
}

impl Job {
    pub fn tag(&self) -> String {
        format!("{}_e{}_s{}", self.size, self.epochs, self.seed)
    }
}

/// Loads or generates the corpus described by `source`.
pub fn load_source(source: &CorpusSource) -> Result<Corpus> {
    match source {
        CorpusSource::File { path } => load_corpus(path),
        CorpusSource::Synthetic {
            sentences,
            seed,
            episode_continue_prob,
            two_referent_prob,
        } => {
            let params = SynthParams {
                episode_continue_prob: *episode_continue_prob,
                two_referent_prob: *two_referent_prob,
                ..SynthParams::cds_default(*sentences)
            };
            generate_synthetic(&params, *seed)
        }
    }
}

/// Everything shared by the models of a grid.
pub struct Prepared {
    pub train: Corpus,
    pub heldout: Corpus,
    pub vocab: Vocab,
    pub battery: Battery,
    pub corpus_hash: String,
    pub vocab_hash: String,
}

#[derive(Serialize, Deserialize)]
struct VocabKey {
    corpus_hash: String,
    bpe_vocab_size: usize,
    nonce_words: Vec<String>,
}

/// Loads the corpus, splits off the held-out tail, trains (or reloads) the
/// tokenizer and builds the battery. Writes corpus, statistics and
/// vocabulary into `out`.
pub fn prepare(spec: &GridSpec, out: &Path) -> Result<Prepared> {
    create_dir(out)?;
    let corpus = load_source(&spec.corpus)?;
    let text = corpus.to_text();
    let corpus_hash = sha256_hex(text.as_bytes());
    if matches!(spec.corpus, CorpusSource::Synthetic { .. }) {
        write_bytes(&out.join("corpus.txt"), text.as_bytes())?;
    }
    let (train, heldout) = corpus.split_tail(spec.heldout_fraction);
    write_json(&out.join("corpus_stats.json"), &compute_corpus_stats(&train, &spec.battery.nouns)?)?;

    let key = VocabKey {
        corpus_hash: sha256_hex(train.to_text().as_bytes()),
        bpe_vocab_size: spec.bpe_vocab_size,
        nonce_words: spec.battery.nonce_words.clone(),
    };
    let key_hash = sha256_hex(&serde_json::to_vec(&key)?);
    let vocab_path = out.join("vocab.json");
    let key_path = out.join("vocab.key");
    let cached = std::fs::read_to_string(&key_path).ok().filter(|k| k.trim() == key_hash);
    let vocab = match cached {
        Some(_) if vocab_path.exists() => Vocab::load(&vocab_path)?,
        _ => {
            let t = Instant::now();
            let v = train_bpe_to_size(&train, spec.bpe_vocab_size)?.add_nonce_tokens(&spec.battery.nonce_words)?;
            log::info!("tokenizer: {} tokens ({} merges) in {:.1?}", v.len(), v.merges().len(), t.elapsed());
            v.save(&vocab_path)?;
            write_bytes(&key_path, key_hash.as_bytes())?;
            v
        }
    };
    let vocab_hash = sha256_hex(vocab.to_json()?.as_bytes());
    let battery = Battery::build(&spec.battery, &vocab, &train, spec.context_length)?;
    Ok(Prepared {
        train,
        heldout,
        vocab,
        battery,
        corpus_hash,
        vocab_hash,
    })
}

/// Content hash of every input that determines a trained checkpoint.
pub fn cache_key(prep: &Prepared, model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let doc = serde_json::json!({
        "version": CACHE_VERSION,
        "corpus": prep.corpus_hash,
        "vocab": prep.vocab_hash,
        "model": model,
        "train": train,
    });
    Ok(sha256_hex(&serde_json::to_vec(&doc)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        ErrorRecord {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(flatten)]
    pub job: Job,
    pub key: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perplexity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    /// Score log path relative to the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

/// A trained (or cache-loaded) model of the grid.
pub struct Trained {
    pub key: String,
    pub path: PathBuf,
    pub checkpoint: Checkpoint,
    /// Last training loss; `None` on a cache hit.
    pub final_loss: Option<f64>,
}

/// Trains one model, or loads it from `checkpoints/<key>.ckpt` when the
/// same inputs were trained before.
pub fn train_one(spec: &GridSpec, prep: &Prepared, job: &Job, out: &Path) -> Result<Trained> {
    let model = size_preset(&job.size, prep.vocab.len(), spec.context_length)
        .ok_or_else(|| invalid(format!("unknown size preset {:?}", job.size)))?;
    let tc = spec.train_config(job.seed, job.epochs);
    let key = cache_key(prep, &model, &tc)?;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let path = ckpt_dir.join(format!("{key}.ckpt"));
    if let Ok(c) = Checkpoint::load(&path) {
        if c.config == model {
            log::info!("{}: checkpoint cache hit", job.tag());
            return Ok(Trained {
                key,
                path,
                checkpoint: c,
                final_loss: None,
            });
        }
    }
    let t = Instant::now();
    let outcome = train_with_history(&model, &tc, &prep.train, &prep.vocab)?;
    outcome.checkpoint.save(&path)?;
    log::info!("{}: trained {} steps in {:.1?}", job.tag(), outcome.losses.len(), t.elapsed());
    Ok(Trained {
        key,
        path,
        final_loss: outcome.losses.last().copied(),
        checkpoint: outcome.checkpoint,
    })
}

/// Trains (or loads from cache) one model and scores the battery on it.
pub fn run_job(spec: &GridSpec, prep: &Prepared, job: &Job, out: &Path) -> Result<RunRecord> {
    let trained = train_one(spec, prep, job, out)?;
    let ckpt = &trained.checkpoint;
    let ppl = perplexity(ckpt, &prep.heldout, &prep.vocab)?;
    let records = prep.battery.run(ckpt, &prep.vocab)?;
    let rel = format!("scores/{}.jsonl", job.tag());
    write_jsonl(&out.join(&rel), &records)?;
    Ok(RunRecord {
        job: job.clone(),
        key: trained.key,
        ok: true,
        checkpoint_hash: Some(ckpt.hash()?),
        perplexity: Some(ppl),
        final_loss: trained.final_loss,
        scores: Some(rel),
        error: None,
    })
}

/// Latest record per job, in first-seen order.
pub fn latest_records(out: &Path) -> Result<Vec<RunRecord>> {
    let all: Vec<RunRecord> = read_jsonl(&out.join("results.jsonl"))?;
    let mut latest: BTreeMap<Job, RunRecord> = BTreeMap::new();
    for r in all {
        latest.insert(r.job.clone(), r);
    }
    Ok(latest.into_values().collect())
}

/// Runs every job of the grid that has no successful record for the same
/// cache key yet. Jobs run on up to `workers` threads; each finished job is
/// appended to `results.jsonl` at once, so an interrupted grid resumes where
/// it stopped. A failing job is recorded and the rest continue.
pub fn run_grid(spec: &GridSpec, out: &Path, workers: usize) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let prep = prepare(spec, out)?;
    write_json(&out.join("spec.json"), spec)?;
    let done: BTreeMap<Job, RunRecord> = latest_records(out)?
        .into_iter()
        .filter(|r| r.ok && r.scores.as_ref().is_some_and(|s| out.join(s).exists()))
        .map(|r| (r.job.clone(), r))
        .collect();
    let jobs = spec.jobs();
    let mut todo = Vec::new();
    for job in &jobs {
        let model = size_preset(&job.size, prep.vocab.len(), spec.context_length).expect("validated size");
        let key = cache_key(&prep, &model, &spec.train_config(job.seed, job.epochs))?;
        match done.get(job) {
            Some(r) if r.key == key => log::info!("{}: already done", job.tag()),
            _ => todo.push(job.clone()),
        }
    }
    let log_path = out.join("results.jsonl");
    let writer = Mutex::new(());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))?;
    let failures: Vec<Error> = pool.install(|| {
        todo.par_iter()
            .filter_map(|job| {
                let rec = run_job(spec, &prep, job, out).unwrap_or_else(|e| {
                    log::error!("{}: {e}", job.tag());
                    RunRecord {
                        job: job.clone(),
                        key: String::new(),
                        ok: false,
                        checkpoint_hash: None,
                        perplexity: None,
                        final_loss: None,
                        scores: None,
                        error: Some(ErrorRecord::from(&e)),
                    }
                });
                let _guard = writer.lock().expect("result log lock");
                append_jsonl(&log_path, &rec).err()
            })
            .collect()
    });
    if let Some(e) = failures.into_iter().next() {
        return Err(e);
    }
    let latest: BTreeMap<Job, RunRecord> = latest_records(out)?.into_iter().map(|r| (r.job.clone(), r)).collect();
    Ok(jobs.iter().filter_map(|j| latest.get(j).cloned()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Cell {
    pub results: Vec<H1Result>,
    pub summary: H1Summary,
    pub sign_test: TestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Cell {
    /// Items per condition; chance is half of this.
    pub items: usize,
    /// Per model seed (aligned with the cell's seeds): mean ME-consistent
    /// count out of the item total, per condition.
    pub per_seed: BTreeMap<Condition, Vec<f64>>,
    pub means: BTreeMap<Condition, f64>,
    /// nonce_only minus full_context per seed, one-sided; `None` when every
    /// difference is zero.
    pub wilcoxon: Option<TestResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Cell {
    pub units: Vec<H3Unit>,
    pub monotone: usize,
    pub slope: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_ci: Option<(f64, f64)>,
    /// Pooled (dose, advantage) trend, one-sided.
    pub kendall: Option<TestResult>,
    pub mean_by_dose: [f64; 4],
    pub sem_by_dose: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub size: String,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub expected_seeds: usize,
    pub perplexity: Vec<f64>,
    pub h1: Option<H1Cell>,
    pub h2: Option<H2Cell>,
    pub h3: Option<H3Cell>,
    pub failures: Vec<String>,
}

impl CellResult {
    pub fn label(&self) -> String {
        format!("{}/{}ep", self.size, self.epochs)
    }

    pub fn complete(&self) -> bool {
        self.seeds.len() == self.expected_seeds && self.failures.is_empty()
    }
}

fn h1_cell(results: Vec<H1Result>) -> Result<Option<H1Cell>> {
    if results.is_empty() {
        return Ok(None);
    }
    let summary = summarize_h1(&results);
    let sign_test = sign_test_one_tailed(summary.anti_me, summary.n)?;
    Ok(Some(H1Cell {
        results,
        summary,
        sign_test,
    }))
}

fn h2_cell(per_seed: BTreeMap<Condition, Vec<f64>>, items: usize) -> Result<Option<H2Cell>> {
    let (Some(nonce), Some(full)) = (per_seed.get(&Condition::NonceOnly), per_seed.get(&Condition::FullContext)) else {
        return Ok(None);
    };
    let diffs: Vec<f64> = nonce.iter().zip(full).map(|(a, b)| a - b).collect();
    let wilcoxon = match wilcoxon_signed_rank(&diffs, Alternative::Greater) {
        Ok(t) => Some(t),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let means = per_seed.iter().map(|(c, v)| (*c, mean(v))).collect();
    Ok(Some(H2Cell {
        items,
        per_seed,
        means,
        wilcoxon,
    }))
}

fn h3_cell(units: Vec<H3Unit>, cfg: &AnalysisConfig) -> Result<Option<H3Cell>> {
    if units.is_empty() {
        return Ok(None);
    }
    let seqs: Vec<Vec<f64>> = units.iter().map(|u| u.advantages.to_vec()).collect();
    let monotone = (strict_monotone_fraction(&seqs)? * units.len() as f64).round() as usize;
    let points: Vec<Vec<(f64, f64)>> = units.iter().map(H3Unit::points).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().flatten().copied().unzip();
    let slope = ols_fit(&x, &y, Transform::Identity)?.slope;
    let kendall = match kendall_tau_trend(&x, &y) {
        Ok(t) => Some(t),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let slope_ci = bootstrap_slope_ci(&points, cfg.bootstrap_replicates, cfg.ci_level, cfg.bootstrap_seed).ok();
    let mut mean_by_dose = [0.0; 4];
    let mut sem_by_dose = [0.0; 4];
    for d in 0..4 {
        let col: Vec<f64> = units.iter().map(|u| u.advantages[d]).collect();
        mean_by_dose[d] = mean(&col);
        sem_by_dose[d] = sem(&col);
    }
    Ok(Some(H3Cell {
        units,
        monotone,
        slope,
        slope_ci,
        kendall,
        mean_by_dose,
        sem_by_dose,
    }))
}

/// Summarises the score log of a single model as a one-seed cell.
pub fn cell_from_scores(
    job: &Job,
    perplexity: Option<f64>,
    scores: &[ScoreRecord],
    h2_items: usize,
    cfg: &AnalysisConfig,
) -> Result<CellResult> {
    let h2: BTreeMap<Condition, Vec<f64>> =
        h2_condition_means(&h2_outcomes(scores)?).into_iter().map(|(c, m)| (c, vec![m])).collect();
    Ok(CellResult {
        size: job.size.clone(),
        epochs: job.epochs,
        seeds: vec![job.seed],
        expected_seeds: 1,
        perplexity: perplexity.into_iter().collect(),
        h1: h1_cell(h1_results(scores)?)?,
        h2: if h2.is_empty() { None } else { h2_cell(h2, h2_items)? },
        h3: h3_cell(h3_units(scores)?, cfg)?,
        failures: Vec::new(),
    })
}

/// Groups run records into cells (spec order) and computes every per-cell
/// statistic from the score logs.
pub fn build_cells(spec: &GridSpec, records: &[RunRecord], out: &Path) -> Result<Vec<CellResult>> {
    let mut cells = Vec::new();
    for size in &spec.sizes {
        for &epochs in &spec.epochs {
            let mut seeds = Vec::new();
            let mut ppl = Vec::new();
            let mut failures = Vec::new();
            let mut scores: Vec<ScoreRecord> = Vec::new();
            let mut h2_per_seed: BTreeMap<Condition, Vec<f64>> = BTreeMap::new();
            for &seed in &spec.seeds {
                let rec = records
                    .iter()
                    .find(|r| r.job.size == *size && r.job.epochs == epochs && r.job.seed == seed);
                match rec {
                    Some(r) if r.ok => {
                        let path = out.join(r.scores.as_deref().ok_or_else(|| invalid("ok record without scores"))?);
                        let s: Vec<ScoreRecord> = read_jsonl(&path)?;
                        for (c, m) in h2_condition_means(&h2_outcomes(&s)?) {
                            h2_per_seed.entry(c).or_default().push(m);
                        }
                        seeds.push(seed);
                        ppl.push(r.perplexity.unwrap_or(f64::NAN));
                        scores.extend(s);
                    }
                    Some(r) => failures.push(format!(
                        "seed {seed}: {}",
                        r.error.as_ref().map_or("failed", |e| e.message.as_str())
                    )),
                    None => failures.push(format!("seed {seed}: not run")),
                }
            }
            cells.push(CellResult {
                size: size.clone(),
                epochs,
                expected_seeds: spec.seeds.len(),
                perplexity: ppl,
                h1: h1_cell(h1_results(&scores)?)?,
                h2: h2_cell(h2_per_seed, spec.battery.h2_items)?,
                h3: h3_cell(h3_units(&scores)?, &spec.analysis)?,
                seeds,
                failures,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Partial,
    Fail,
    Undetermined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCheck {
    pub cell: String,
    /// The tested quantity: anti-ME rate, nonce_only minus full_context,
    /// strict-monotone fraction, or suppressed fraction.
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub outcome: Outcome,
    pub cells: Vec<CellCheck>,
    pub failing_cells: Vec<String>,
}

impl Verdict {
    fn undetermined() -> Self {
        Verdict {
            outcome: Outcome::Undetermined,
            cells: Vec::new(),
            failing_cells: Vec::new(),
        }
    }

    fn from_checks(cells: Vec<CellCheck>) -> Self {
        let failing_cells: Vec<String> = cells.iter().filter(|c| !c.pass).map(|c| c.cell.clone()).collect();
        Verdict {
            outcome: if failing_cells.is_empty() { Outcome::Pass } else { Outcome::Fail },
            cells,
            failing_cells,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisVerdicts {
    pub alpha: f64,
    pub h1: Verdict,
    pub h2: Verdict,
    pub h3: Verdict,
    pub h4: Verdict,
}

/// Pre-registered verdicts. Every cell must pass for a hypothesis to pass;
/// a cell without the needed data makes the hypothesis undetermined.
///
/// - H1: one-tailed sign test p < alpha and anti-ME rate > 1/2.
/// - H2: one-sided signed-rank test of nonce_only over full_context (per
///   seed means) p < alpha.
/// - H3: pooled Kendall trend p < alpha in every cell; pass if every cell's
///   strict-monotone fraction also exceeds 1/2, partial otherwise.
/// - H4: H1 holds and no cell has a majority of suppressed items, counted
///   from the raw log-probabilities.
pub fn evaluate_hypotheses(cells: &[CellResult], alpha: f64) -> HypothesisVerdicts {
    let all_have = |f: &dyn Fn(&CellResult) -> bool| !cells.is_empty() && cells.iter().all(f);

    let h1 = if all_have(&|c| c.h1.is_some()) {
        Verdict::from_checks(
            cells
                .iter()
                .map(|c| {
                    let h = c.h1.as_ref().expect("checked");
                    let rate = h.summary.anti_me as f64 / h.summary.n as f64;
                    CellCheck {
                        cell: c.label(),
                        value: rate,
                        p_value: Some(h.sign_test.p_value),
                        pass: h.sign_test.p_value < alpha && rate > 0.5,
                    }
                })
                .collect(),
        )
    } else {
        Verdict::undetermined()
    };

    let h2 = if all_have(&|c| c.h2.is_some()) {
        Verdict::from_checks(
            cells
                .iter()
                .map(|c| {
                    let h = c.h2.as_ref().expect("checked");
                    let gap = h.means.get(&Condition::NonceOnly).copied().unwrap_or(f64::NAN)
                        - h.means.get(&Condition::FullContext).copied().unwrap_or(f64::NAN);
                    let p = h.wilcoxon.as_ref().map(|t| t.p_value);
                    CellCheck {
                        cell: c.label(),
                        value: gap,
                        p_value: p,
                        pass: p.is_some_and(|p| p < alpha),
                    }
                })
                .collect(),
        )
    } else {
        Verdict::undetermined()
    };

    let h3 = if all_have(&|c| c.h3.is_some()) {
        let checks: Vec<(CellCheck, bool)> = cells
            .iter()
            .map(|c| {
                let h = c.h3.as_ref().expect("checked");
                let frac = h.units.iter().filter(|u| u.strictly_monotone()).count() as f64 / h.units.len() as f64;
                let p = h.kendall.as_ref().map(|t| t.p_value);
                let trend = p.is_some_and(|p| p < alpha) && h.kendall.as_ref().is_some_and(|t| t.statistic > 0.0);
                (
                    CellCheck {
                        cell: c.label(),
                        value: frac,
                        p_value: p,
                        pass: trend && frac > 0.5,
                    },
                    trend,
                )
            })
            .collect();
        let all_trends = checks.iter().all(|(_, t)| *t);
        let mut v = Verdict::from_checks(checks.into_iter().map(|(c, _)| c).collect());
        if v.outcome == Outcome::Fail && all_trends {
            v.outcome = Outcome::Partial;
        }
        v
    } else {
        Verdict::undetermined()
    };

    let h4 = if all_have(&|c| c.h1.is_some()) {
        let mut v = Verdict::from_checks(
            cells
                .iter()
                .map(|c| {
                    let r = &c.h1.as_ref().expect("checked").results;
                    let suppressed = r.iter().filter(|x| x.suppressed()).count() as f64 / r.len() as f64;
                    CellCheck {
                        cell: c.label(),
                        value: suppressed,
                        p_value: None,
                        pass: suppressed <= 0.5,
                    }
                })
                .collect(),
        );
        if h1.outcome != Outcome::Pass {
            v.outcome = Outcome::Fail;
        }
        v
    } else {
        Verdict::undetermined()
    };

    HypothesisVerdicts { alpha, h1, h2, h3, h4 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPoint {
    pub size: String,
    pub epochs: usize,
    pub seed: u64,
    pub perplexity: f64,
    pub mean_priming: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPriming {
    pub pair: NounPair,
    pub mean_priming: f64,
    pub anti_me_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NounPriming {
    pub noun: String,
    pub mean_priming: f64,
    pub frequency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetition_within_3: Option<f64>,
}

/// Correlational analyses across models and items.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Exploratory {
    pub models: Vec<ModelPoint>,
    pub ppl_priming: Option<TestResult>,
    pub size_priming: Option<TestResult>,
    pub epochs_priming: Option<TestResult>,
    pub fit_linear: Option<OlsFit>,
    pub fit_log: Option<OlsFit>,
    pub h2_overall: BTreeMap<Condition, f64>,
    pub pairs: Vec<PairPriming>,
    pub nouns: Vec<NounPriming>,
    pub frequency_priming: Option<TestResult>,
    pub repetition_priming: Option<TestResult>,
}

pub fn exploratory(cells: &[CellResult], sizes: &[String], corpus_stats: Option<&CorpusStats>) -> Exploratory {
    let mut ex = Exploratory::default();
    for c in cells {
        let (Some(h1), false) = (&c.h1, c.seeds.is_empty()) else { continue };
        for (i, &seed) in c.seeds.iter().enumerate() {
            let prim: Vec<f64> = h1.results.iter().filter(|r| r.model_seed == seed).map(H1Result::priming).collect();
            if prim.is_empty() {
                continue;
            }
            ex.models.push(ModelPoint {
                size: c.size.clone(),
                epochs: c.epochs,
                seed,
                perplexity: c.perplexity[i],
                mean_priming: mean(&prim),
            });
        }
    }
    let ppl: Vec<f64> = ex.models.iter().map(|m| m.perplexity).collect();
    let prim: Vec<f64> = ex.models.iter().map(|m| m.mean_priming).collect();
    let size_rank: Vec<f64> = ex
        .models
        .iter()
        .map(|m| sizes.iter().position(|s| *s == m.size).unwrap_or(0) as f64)
        .collect();
    let epochs: Vec<f64> = ex.models.iter().map(|m| m.epochs as f64).collect();
    ex.ppl_priming = spearman_rho(&ppl, &prim).ok();
    ex.size_priming = spearman_rho(&size_rank, &prim).ok();
    ex.epochs_priming = spearman_rho(&epochs, &prim).ok();
    ex.fit_linear = ols_fit(&ppl, &prim, Transform::Identity).ok();
    ex.fit_log = ols_fit(&ppl, &prim, Transform::LogX).ok();

    let mut h2_sum: BTreeMap<Condition, (f64, usize)> = BTreeMap::new();
    for c in cells {
        if let Some(h2) = &c.h2 {
            for (cond, vals) in &h2.per_seed {
                let e = h2_sum.entry(*cond).or_default();
                e.0 += vals.iter().sum::<f64>();
                e.1 += vals.len();
            }
        }
    }
    ex.h2_overall = h2_sum.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect();

    let all: Vec<&H1Result> = cells.iter().filter_map(|c| c.h1.as_ref()).flat_map(|h| &h.results).collect();
    let mut pairs: Vec<NounPair> = Vec::new();
    for r in &all {
        if !pairs.contains(&r.pair) {
            pairs.push(r.pair.clone());
        }
    }
    for p in pairs {
        let rs: Vec<&&H1Result> = all.iter().filter(|r| r.pair == p).collect();
        let prim: Vec<f64> = rs.iter().map(|r| r.priming()).collect();
        ex.pairs.push(PairPriming {
            mean_priming: mean(&prim),
            anti_me_rate: rs.iter().filter(|r| r.anti_me()).count() as f64 / rs.len() as f64,
            pair: p,
        });
    }
    if let Some(stats) = corpus_stats {
        for (noun, ns) in &stats.nouns {
            let prim: Vec<f64> = all.iter().filter(|r| r.pair.fam1 == *noun).map(|r| r.priming()).collect();
            if prim.is_empty() {
                continue;
            }
            ex.nouns.push(NounPriming {
                noun: noun.clone(),
                mean_priming: mean(&prim),
                frequency: ns.frequency,
                repetition_within_3: ns.repetition_within_3,
            });
        }
        let np: Vec<f64> = ex.nouns.iter().map(|n| n.mean_priming).collect();
        let freq: Vec<f64> = ex.nouns.iter().map(|n| n.frequency as f64).collect();
        ex.frequency_priming = spearman_rho(&freq, &np).ok();
        let (rep, rp): (Vec<f64>, Vec<f64>) = ex
            .nouns
            .iter()
            .filter_map(|n| n.repetition_within_3.map(|r| (r, n.mean_priming)))
            .unzip();
        ex.repetition_priming = spearman_rho(&rep, &rp).ok();
    }
    ex
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub cells: Vec<CellResult>,
    pub verdicts: HypothesisVerdicts,
    pub exploratory: Exploratory,
}

/// Reads a run directory, computes cells, verdicts and exploratory
/// analyses, and writes `analysis.json`.
pub fn analyze(out: &Path) -> Result<Analysis> {
    let spec: GridSpec = read_json(&out.join("spec.json"))?;
    let records = latest_records(out)?;
    let cells = build_cells(&spec, &records, out)?;
    let stats: Option<CorpusStats> = read_json(&out.join("corpus_stats.json")).ok();
    let analysis = Analysis {
        verdicts: evaluate_hypotheses(&cells, spec.analysis.alpha),
        exploratory: exploratory(&cells, &spec.sizes, stats.as_ref()),
        cells,
    };
    write_json(&out.join("analysis.json"), &analysis)?;
    Ok(analysis)
}

/// Per-cell values transcribed from the reference results: perplexity
/// (mean and SD), H1 anti-ME count and mean priming, H2 nonce_only and
/// full_context means, H3 monotone count, slope, Kendall tau and p.
pub const REFERENCE_TABLE: [(&str, usize, f64, f64, usize, f64, f64, f64, usize, f64, f64, f64); 9] = [
    ("small", 5, 57.8, 0.1, 100, -1.14, 5.0, 2.2, 25, 0.576, 0.391, 2.07e-7),
    ("small", 10, 48.5, 0.1, 100, -1.47, 5.7, 2.7, 25, 0.847, 0.480, 1.98e-10),
    ("small", 20, 42.0, 0.1, 99, -1.49, 5.3, 2.8, 22, 0.965, 0.421, 2.39e-8),
    ("medium", 5, 46.3, 0.1, 100, -1.46, 6.7, 2.4, 25, 1.080, 0.497, 4.19e-11),
    ("medium", 10, 36.6, 0.1, 100, -1.43, 6.9, 3.3, 24, 1.138, 0.451, 2.13e-9),
    ("medium", 20, 28.9, 0.0, 98, -0.81, 6.4, 3.2, 15, 0.896, 0.241, 1.36e-3),
    ("large", 5, 39.3, 0.1, 100, -1.20, 6.0, 2.0, 20, 1.159, 0.477, 2.51e-10),
    ("large", 10, 27.0, 0.1, 98, -1.06, 6.2, 2.9, 15, 0.976, 0.391, 2.14e-7),
    ("large", 20, 15.2, 0.1, 85, -0.58, 5.7, 2.6, 12, 1.067, 0.317, 2.66e-5),
];

/// Cell results rebuilt from [`REFERENCE_TABLE`] with 5 seeds, 20 H1 items
/// and 5 H3 pairs per seed. Per-item values are synthesised to reproduce
/// the transcribed aggregates: suppressed H1 items carry +0.1 nats of
/// priming and the rest share the remainder; per-seed H2 means spread
/// +-0.2 around the cell mean; swap_context, fam_only and no_preamble use
/// the grid-wide means 2.3, 0.7 and 3.1. The Kendall result is stored as
/// reported.
pub fn reference_cells() -> Vec<CellResult> {
    let nouns = crate::battery::DEFAULT_NOUNS;
    let pairs = crate::battery::both_directions(&crate::battery::default_pairs(&nouns, 10).expect("9 nouns"));
    let h3_pairs = crate::battery::default_pairs(&nouns, 5).expect("9 nouns");
    let seeds: Vec<u64> = (0..5).collect();
    let spread = [-1.2649110640673518, -0.6324555320336759, 0.0, 0.6324555320336759, 1.2649110640673518];
    REFERENCE_TABLE
        .iter()
        .map(|&(size, epochs, ppl, ppl_sd, anti, priming, nonce, full, mono, slope, tau, p)| {
            let n = 100;
            let anti_priming = (n as f64 * priming - (n - anti) as f64 * 0.1) / anti as f64;
            let results: Vec<H1Result> = (0..n)
                .map(|i| {
                    let base = -4.0 - 0.01 * (i % 7) as f64;
                    let shift = if i < anti { -anti_priming } else { -0.1 };
                    H1Result {
                        item: i % 20,
                        model_seed: (i / 20) as u64,
                        pair: pairs[i % 20].clone(),
                        logp_fam1_baseline: base,
                        logp_fam1_me: base + shift,
                        logp_fam2_baseline: -4.5,
                        logp_fam2_me: -4.5 - shift,
                    }
                })
                .collect();
            let summary = summarize_h1(&results);
            let h1 = H1Cell {
                sign_test: sign_test_one_tailed(summary.anti_me, summary.n).expect("valid counts"),
                results,
                summary,
            };

            let jitter = [-0.2, -0.1, 0.0, 0.1, 0.2];
            let mut per_seed = BTreeMap::new();
            for (cond, m) in [
                (Condition::NonceOnly, nonce),
                (Condition::FullContext, full),
                (Condition::SwapContext, 2.3),
                (Condition::FamOnly, 0.7),
                (Condition::NoPreamble, 3.1),
            ] {
                let v: Vec<f64> = jitter.iter().map(|j| m + j).collect();
                per_seed.insert(cond, v);
            }
            let h2 = h2_cell(per_seed, 8).expect("valid").expect("both conditions");

            let units: Vec<H3Unit> = (0..25)
                .map(|i| {
                    let s = slope * (0.9 + 0.01 * i as f64);
                    let advantages = if i < mono {
                        [0.0, s, 2.0 * s, 3.0 * s]
                    } else {
                        [0.0, 2.0 * s, s, 3.0 * s]
                    };
                    H3Unit {
                        item: i % 5,
                        model_seed: (i / 5) as u64,
                        pair: h3_pairs[i % 5].clone(),
                        advantages,
                    }
                })
                .collect();
            let mut mean_by_dose = [0.0; 4];
            let mut sem_by_dose = [0.0; 4];
            for d in 0..4 {
                let col: Vec<f64> = units.iter().map(|u| u.advantages[d]).collect();
                mean_by_dose[d] = mean(&col);
                sem_by_dose[d] = sem(&col);
            }
            let h3 = H3Cell {
                monotone: mono,
                units,
                slope,
                slope_ci: None,
                kendall: Some(TestResult {
                    statistic: tau,
                    p_value: p,
                    method: crate::stats::Method::KendallNormal,
                    alternative: Alternative::TwoSided,
                    n: 100,
                    ci: None,
                }),
                mean_by_dose,
                sem_by_dose,
            };
            CellResult {
                size: size.to_string(),
                epochs,
                seeds: seeds.clone(),
                expected_seeds: 5,
                perplexity: spread.iter().map(|z| ppl + ppl_sd * z).collect(),
                h1: Some(h1),
                h2: Some(h2),
                h3: Some(h3),
                failures: Vec::new(),
            }
        })
        .collect()
}
