//! The three evaluation tracks: familiar-familiar suppression (H1), the
//! five-condition context-dependence diagnostic (H2) and dose-response (H3).
//!
//! Every track is split into item construction (pure), scoring (one
//! [`ScoreRecord`] per item, condition and seed) and interpretation of the
//! records, so the analysis can run from a score log alone.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::model::{init_nonce_embeddings, score_completion, Checkpoint, NoiseScale};
use crate::tokenizer::{TokenId, Vocab, DEFAULT_NONCE_WORDS};

pub const DEFAULT_NOUNS: [&str; 9] = ["ball", "book", "car", "cup", "hat", "dog", "cat", "fish", "bird"];

/// Concrete nouns frequent in caregiver speech. Rare-noun anchors for nonce
/// initialisation are drawn from the least frequent of these.
pub const CLOSED_NOUN_LIST: [&str; 40] = [
    "ball", "book", "car", "cup", "hat", "dog", "cat", "fish", "bird", "duck", "spoon", "shoe", "sock", "truck",
    "boat", "doll", "bear", "train", "baby", "horse", "cow", "pig", "bed", "box", "bottle", "block", "chair",
    "table", "door", "bus", "plane", "apple", "banana", "cookie", "juice", "milk", "bath", "coat", "sheep", "frog",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Track {
    H1,
    H2,
    H3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Condition {
    Baseline,
    Me,
    FullContext,
    SwapContext,
    NonceOnly,
    FamOnly,
    NoPreamble,
    Dose(u8),
}

impl Condition {
    pub const H2: [Condition; 5] = [
        Condition::FullContext,
        Condition::SwapContext,
        Condition::NonceOnly,
        Condition::FamOnly,
        Condition::NoPreamble,
    ];
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Baseline => f.write_str("baseline"),
            Condition::Me => f.write_str("me"),
            Condition::FullContext => f.write_str("full_context"),
            Condition::SwapContext => f.write_str("swap_context"),
            Condition::NonceOnly => f.write_str("nonce_only"),
            Condition::FamOnly => f.write_str("fam_only"),
            Condition::NoPreamble => f.write_str("no_preamble"),
            Condition::Dose(d) => write!(f, "dose_{d}"),
        }
    }
}

impl From<Condition> for String {
    fn from(c: Condition) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Condition {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        Ok(match s.as_str() {
            "baseline" => Condition::Baseline,
            "me" => Condition::Me,
            "full_context" => Condition::FullContext,
            "swap_context" => Condition::SwapContext,
            "nonce_only" => Condition::NonceOnly,
            "fam_only" => Condition::FamOnly,
            "no_preamble" => Condition::NoPreamble,
            other => match other.strip_prefix("dose_").and_then(|d| d.parse().ok()) {
                Some(d) if d <= 3 => Condition::Dose(d),
                _ => return Err(format!("unknown condition {other:?}")),
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounPair {
    pub fam1: String,
    pub fam2: String,
}

impl NounPair {
    pub fn new(fam1: impl Into<String>, fam2: impl Into<String>) -> Result<Self> {
        let (fam1, fam2) = (fam1.into(), fam2.into());
        if fam1 == fam2 {
            return Err(invalid(format!("noun pair repeats {fam1:?}")));
        }
        Ok(NounPair { fam1, fam2 })
    }

    pub fn reversed(&self) -> NounPair {
        NounPair {
            fam1: self.fam2.clone(),
            fam2: self.fam1.clone(),
        }
    }
}

/// The first `count` unordered pairs of the alphabetically sorted nouns, in
/// lexicographic (i, j) order with i < j.
pub fn default_pairs<S: AsRef<str>>(nouns: &[S], count: usize) -> Result<Vec<NounPair>> {
    let mut sorted: Vec<&str> = nouns.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let mut out = Vec::with_capacity(count);
    'outer: for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if out.len() == count {
                break 'outer;
            }
            out.push(NounPair::new(sorted[i], sorted[j])?);
        }
    }
    if out.len() < count {
        return Err(invalid(format!("{} nouns give fewer than {count} pairs", sorted.len())));
    }
    Ok(out)
}

/// Each unordered pair followed by its reverse.
pub fn both_directions(pairs: &[NounPair]) -> Vec<NounPair> {
    pairs.iter().flat_map(|p| [p.clone(), p.reversed()]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct H2Triple {
    pub fam: String,
    pub nonce1: String,
    pub nonce2: String,
}

/// `count` familiar nouns drawn without replacement (seeded), each paired
/// with nonce wordforms `2i` and `2i + 1`.
pub fn h2_triples<S: AsRef<str>, N: AsRef<str>>(
    nouns: &[S],
    nonce_words: &[N],
    count: usize,
    seed: u64,
) -> Result<Vec<H2Triple>> {
    if nouns.len() < count {
        return Err(invalid(format!("need {count} nouns for H2, have {}", nouns.len())));
    }
    if nonce_words.len() < 2 * count {
        return Err(invalid(format!("need {} nonce words for H2, have {}", 2 * count, nonce_words.len())));
    }
    let mut fams: Vec<&str> = nouns.iter().map(AsRef::as_ref).collect();
    fams.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..count)
        .map(|i| H2Triple {
            fam: fams[i].to_string(),
            nonce1: nonce_words[2 * i].as_ref().to_string(),
            nonce2: nonce_words[2 * i + 1].as_ref().to_string(),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemMeta {
    /// Index of the item within its track (shared by all its conditions).
    pub item: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<NounPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<H2Triple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dose: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub track: Track,
    pub condition: Condition,
    pub prompt: String,
    pub prompt_ids: Vec<TokenId>,
    pub targets: Vec<String>,
    pub target_ids: Vec<TokenId>,
    pub meta: ItemMeta,
}

fn make_item(
    vocab: &Vocab,
    track: Track,
    condition: Condition,
    prompt: String,
    targets: [&str; 2],
    meta: ItemMeta,
) -> Result<EvalItem> {
    let target_ids = targets
        .iter()
        .map(|w| vocab.require_single_token(w))
        .collect::<Result<Vec<_>>>()?;
    let prompt_ids = vocab.encode(&prompt)?;
    Ok(EvalItem {
        track,
        condition,
        prompt,
        prompt_ids,
        targets: targets.iter().map(|s| s.to_string()).collect(),
        target_ids,
        meta,
    })
}

pub fn h1_baseline_prompt(p: &NounPair) -> String {
    format!("there is a {} and a {} . this is a", p.fam1, p.fam2)
}

pub fn h1_me_prompt(p: &NounPair) -> String {
    format!("there is a {} and a {} . that is a {} . this is a", p.fam1, p.fam2, p.fam1)
}

/// Baseline and ME items for every ordered pair; both score fam1 then fam2.
pub fn build_h1_items(pairs: &[NounPair], vocab: &Vocab) -> Result<Vec<EvalItem>> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        let meta = ItemMeta {
            item: i,
            pair: Some(p.clone()),
            ..ItemMeta::default()
        };
        let targets = [p.fam1.as_str(), p.fam2.as_str()];
        out.push(make_item(vocab, Track::H1, Condition::Baseline, h1_baseline_prompt(p), targets, meta.clone())?);
        out.push(make_item(vocab, Track::H1, Condition::Me, h1_me_prompt(p), targets, meta)?);
    }
    Ok(out)
}

pub fn h2_prompt(t: &H2Triple, condition: Condition) -> Result<String> {
    let probe = format!("the {} is the", t.nonce2);
    Ok(match condition {
        Condition::FullContext => format!("there is a {} and a {} . {probe}", t.fam, t.nonce1),
        Condition::SwapContext => format!("there is a {} and a {} . {probe}", t.nonce1, t.fam),
        Condition::NonceOnly => format!("there is a {} . {probe}", t.nonce1),
        Condition::FamOnly => format!("there is a {} . {probe}", t.fam),
        Condition::NoPreamble => probe,
        other => return Err(invalid(format!("{other} is not an H2 condition"))),
    })
}

/// Five conditions per triple; targets are nonce2 then fam.
pub fn build_h2_items(triples: &[H2Triple], vocab: &Vocab) -> Result<Vec<EvalItem>> {
    let mut out = Vec::with_capacity(5 * triples.len());
    for (i, t) in triples.iter().enumerate() {
        if t.nonce1 == t.nonce2 {
            return Err(invalid(format!("triple {i} repeats nonce {:?}", t.nonce1)));
        }
        vocab.require_single_token(&t.nonce1)?;
        let meta = ItemMeta {
            item: i,
            triple: Some(t.clone()),
            ..ItemMeta::default()
        };
        for c in Condition::H2 {
            out.push(make_item(
                vocab,
                Track::H2,
                c,
                h2_prompt(t, c)?,
                [t.nonce2.as_str(), t.fam.as_str()],
                meta.clone(),
            )?);
        }
    }
    Ok(out)
}

pub fn h3_prompt(p: &NounPair, dose: u8) -> String {
    let mut s = format!("there is a {} and a {} .", p.fam1, p.fam2);
    for _ in 0..dose {
        s.push_str(&format!(" that is a {} .", p.fam1));
    }
    s.push_str(" this is a");
    s
}

/// Doses 0 to 3 per pair; targets are fam1 (labelled) then fam2.
pub fn build_h3_items(pairs: &[NounPair], vocab: &Vocab, context_length: usize) -> Result<Vec<EvalItem>> {
    let mut out = Vec::with_capacity(4 * pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        for dose in 0..=3u8 {
            let meta = ItemMeta {
                item: i,
                pair: Some(p.clone()),
                dose: Some(dose),
                ..ItemMeta::default()
            };
            let item = make_item(
                vocab,
                Track::H3,
                Condition::Dose(dose),
                h3_prompt(p, dose),
                [p.fam1.as_str(), p.fam2.as_str()],
                meta,
            )?;
            if item.prompt_ids.len() > context_length {
                return Err(Error::SequenceTooLong {
                    len: item.prompt_ids.len(),
                    max: context_length,
                });
            }
            out.push(item);
        }
    }
    Ok(out)
}

/// One scored prompt: the line format of the score log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub track: Track,
    pub condition: Condition,
    pub prompt: String,
    pub prompt_ids: Vec<TokenId>,
    pub targets: Vec<String>,
    pub target_ids: Vec<TokenId>,
    /// Natural-log probabilities aligned with `target_ids`.
    pub log_probs: Vec<f64>,
    pub meta: ItemMeta,
    pub model_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonce_seed: Option<u64>,
}

/// Scores every item against `ckpt`, in item order.
pub fn score_items(ckpt: &Checkpoint, items: &[EvalItem], nonce_seed: Option<u64>) -> Result<Vec<ScoreRecord>> {
    items
        .par_iter()
        .map(|it| {
            let log_probs = score_completion(ckpt, &it.prompt_ids, &it.target_ids)?;
            Ok(ScoreRecord {
                track: it.track,
                condition: it.condition,
                prompt: it.prompt.clone(),
                prompt_ids: it.prompt_ids.clone(),
                targets: it.targets.clone(),
                target_ids: it.target_ids.clone(),
                log_probs,
                meta: it.meta.clone(),
                model_seed: ckpt.provenance.seed,
                nonce_seed,
            })
        })
        .collect()
}

fn two_logps(r: &ScoreRecord) -> Result<(f64, f64)> {
    match r.log_probs.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Format {
            what: "score record",
            detail: format!("{:?} {} has {} log-probs, expected 2", r.track, r.condition, r.log_probs.len()),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H1Result {
    pub item: usize,
    pub model_seed: u64,
    pub pair: NounPair,
    pub logp_fam1_baseline: f64,
    pub logp_fam1_me: f64,
    pub logp_fam2_baseline: f64,
    pub logp_fam2_me: f64,
}

impl H1Result {
    /// Labelling FAM1 raised its probability.
    pub fn anti_me(&self) -> bool {
        self.logp_fam1_me > self.logp_fam1_baseline
    }

    /// Labelling FAM1 lowered its probability (ME-consistent suppression).
    pub fn suppressed(&self) -> bool {
        self.logp_fam1_me < self.logp_fam1_baseline
    }

    /// Negative in the anti-ME direction.
    pub fn priming(&self) -> f64 {
        -(self.logp_fam1_me - self.logp_fam1_baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H1Summary {
    pub anti_me: usize,
    pub n: usize,
    pub mean_priming: f64,
}

pub fn summarize_h1(results: &[H1Result]) -> H1Summary {
    let n = results.len();
    let mean_priming = if n == 0 {
        f64::NAN
    } else {
        results.iter().map(H1Result::priming).sum::<f64>() / n as f64
    };
    H1Summary {
        anti_me: results.iter().filter(|r| r.anti_me()).count(),
        n,
        mean_priming,
    }
}

/// Pairs baseline and ME records by (model seed, item).
pub fn h1_results(records: &[ScoreRecord]) -> Result<Vec<H1Result>> {
    let mut halves: BTreeMap<(u64, usize), (Option<&ScoreRecord>, Option<&ScoreRecord>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.track == Track::H1) {
        let slot = halves.entry((r.model_seed, r.meta.item)).or_default();
        match r.condition {
            Condition::Baseline => slot.0 = Some(r),
            Condition::Me => slot.1 = Some(r),
            other => return Err(invalid(format!("H1 record with condition {other}"))),
        }
    }
    halves
        .into_iter()
        .map(|((seed, item), pair)| {
            let (Some(b), Some(m)) = pair else {
                return Err(Error::Format {
                    what: "score log",
                    detail: format!("H1 item {item} seed {seed} lacks a baseline or ME record"),
                });
            };
            let (f1b, f2b) = two_logps(b)?;
            let (f1m, f2m) = two_logps(m)?;
            Ok(H1Result {
                item,
                model_seed: seed,
                pair: b.meta.pair.clone().ok_or_else(|| invalid("H1 record without pair"))?,
                logp_fam1_baseline: f1b,
                logp_fam1_me: f1m,
                logp_fam2_baseline: f2b,
                logp_fam2_me: f2m,
            })
        })
        .collect()
}

pub fn run_h1(ckpt: &Checkpoint, items: &[EvalItem]) -> Result<(Vec<H1Result>, H1Summary)> {
    let results = h1_results(&score_items(ckpt, items, None)?)?;
    let summary = summarize_h1(&results);
    Ok((results, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H2Outcome {
    pub item: usize,
    pub model_seed: u64,
    pub nonce_seed: u64,
    pub condition: Condition,
    pub logp_nonce2: f64,
    pub logp_fam: f64,
}

impl H2Outcome {
    pub fn me_consistent(&self) -> bool {
        self.logp_nonce2 > self.logp_fam
    }
}

pub fn h2_outcomes(records: &[ScoreRecord]) -> Result<Vec<H2Outcome>> {
    records
        .iter()
        .filter(|r| r.track == Track::H2)
        .map(|r| {
            let (n2, fam) = two_logps(r)?;
            Ok(H2Outcome {
                item: r.meta.item,
                model_seed: r.model_seed,
                nonce_seed: r.nonce_seed.ok_or_else(|| invalid("H2 record without nonce seed"))?,
                condition: r.condition,
                logp_nonce2: n2,
                logp_fam: fam,
            })
        })
        .collect()
}

/// Mean number of ME-consistent items per (model seed, nonce seed), for each
/// condition. With 8 items the values lie in [0, 8].
pub fn h2_condition_means(outcomes: &[H2Outcome]) -> BTreeMap<Condition, f64> {
    let mut counts: BTreeMap<Condition, BTreeMap<(u64, u64), usize>> = BTreeMap::new();
    for o in outcomes {
        *counts
            .entry(o.condition)
            .or_default()
            .entry((o.model_seed, o.nonce_seed))
            .or_default() += o.me_consistent() as usize;
    }
    counts
        .into_iter()
        .map(|(c, per)| (c, per.values().sum::<usize>() as f64 / per.len() as f64))
        .collect()
}

/// Re-initialises the nonce rows once per nonce seed and scores all items.
pub fn run_h2(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    items: &[EvalItem],
    nonce_seeds: &[u64],
    rare_nouns: &[TokenId],
    noise: NoiseScale,
) -> Result<Vec<ScoreRecord>> {
    let mut out = Vec::with_capacity(items.len() * nonce_seeds.len());
    for &s in nonce_seeds {
        let seeded = init_nonce_embeddings(ckpt, vocab, rare_nouns, s, noise)?;
        out.extend(score_items(&seeded, items, Some(s))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct H3Unit {
    pub item: usize,
    pub model_seed: u64,
    pub pair: NounPair,
    /// logp(labelled) - logp(unlabelled) at doses 0..=3.
    pub advantages: [f64; 4],
}

impl H3Unit {
    pub fn strictly_monotone(&self) -> bool {
        crate::stats::is_strictly_increasing(&self.advantages)
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.advantages.iter().enumerate().map(|(d, &a)| (d as f64, a)).collect()
    }
}

pub fn h3_units(records: &[ScoreRecord]) -> Result<Vec<H3Unit>> {
    let mut units: BTreeMap<(u64, usize), (Option<NounPair>, [Option<f64>; 4])> = BTreeMap::new();
    for r in records.iter().filter(|r| r.track == Track::H3) {
        let Condition::Dose(d) = r.condition else {
            return Err(invalid(format!("H3 record with condition {}", r.condition)));
        };
        let (lab, unlab) = two_logps(r)?;
        let slot = units.entry((r.model_seed, r.meta.item)).or_default();
        slot.0 = r.meta.pair.clone();
        slot.1[d as usize] = Some(lab - unlab);
    }
    units
        .into_iter()
        .map(|((seed, item), (pair, adv))| {
            let missing = || Error::Format {
                what: "score log",
                detail: format!("H3 item {item} seed {seed} lacks a dose"),
            };
            let mut advantages = [0.0; 4];
            for (a, v) in advantages.iter_mut().zip(adv) {
                *a = v.ok_or_else(missing)?;
            }
            Ok(H3Unit {
                item,
                model_seed: seed,
                pair: pair.ok_or_else(|| invalid("H3 record without pair"))?,
                advantages,
            })
        })
        .collect()
}

pub fn run_h3(ckpt: &Checkpoint, items: &[EvalItem]) -> Result<Vec<H3Unit>> {
    h3_units(&score_items(ckpt, items, None)?)
}

/// Least frequent quarter (at least one) of the closed-list nouns that are
/// attested in the corpus, single tokens, and not in `exclude`. Ties in
/// frequency break alphabetically.
pub fn select_rare_nouns<S: AsRef<str>, E: AsRef<str>>(
    corpus: &Corpus,
    closed_list: &[S],
    exclude: &[E],
    vocab: &Vocab,
) -> Result<Vec<TokenId>> {
    let mut freq: BTreeMap<&str, usize> = closed_list
        .iter()
        .map(AsRef::as_ref)
        .filter(|w| !exclude.iter().any(|e| e.as_ref() == *w))
        .map(|w| (w, 0))
        .collect();
    for s in &corpus.sentences {
        for t in s.tokens() {
            if let Some(c) = freq.get_mut(t.as_str()) {
                *c += 1;
            }
        }
    }
    let mut ranked: Vec<(usize, &str)> = freq
        .into_iter()
        .filter(|&(w, c)| c > 0 && vocab.require_single_token(w).is_ok())
        .map(|(w, c)| (c, w))
        .collect();
    if ranked.is_empty() {
        return Err(invalid("no attested single-token nouns available as rare-noun anchors"));
    }
    ranked.sort();
    let keep = ranked.len().div_ceil(4);
    ranked[..keep]
        .iter()
        .map(|(_, w)| vocab.require_single_token(w))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub nouns: Vec<String>,
    pub h1_pairs: usize,
    pub h3_pairs: usize,
    pub h2_items: usize,
    pub h2_seed: u64,
    pub nonce_words: Vec<String>,
    pub nonce_seeds: usize,
    pub closed_noun_list: Vec<String>,
    pub noise_scale: NoiseScale,
}

impl Default for BatteryConfig {
    fn default() -> Self {
        BatteryConfig {
            nouns: DEFAULT_NOUNS.iter().map(|s| s.to_string()).collect(),
            h1_pairs: 10,
            h3_pairs: 5,
            h2_items: 8,
            h2_seed: 0,
            nonce_words: DEFAULT_NONCE_WORDS.iter().map(|s| s.to_string()).collect(),
            nonce_seeds: 10,
            closed_noun_list: CLOSED_NOUN_LIST.iter().map(|s| s.to_string()).collect(),
            noise_scale: NoiseScale::default(),
        }
    }
}

/// All items of the three tracks plus the rare-noun anchors, built once per
/// vocabulary.
#[derive(Debug, Clone)]
pub struct Battery {
    pub config: BatteryConfig,
    pub h1: Vec<EvalItem>,
    pub h2: Vec<EvalItem>,
    pub h3: Vec<EvalItem>,
    pub rare_nouns: Vec<TokenId>,
}

impl Battery {
    pub fn build(config: &BatteryConfig, vocab: &Vocab, corpus: &Corpus, context_length: usize) -> Result<Self> {
        let h1_pairs = both_directions(&default_pairs(&config.nouns, config.h1_pairs)?);
        let h3_pairs = default_pairs(&config.nouns, config.h3_pairs)?;
        let triples = h2_triples(&config.nouns, &config.nonce_words, config.h2_items, config.h2_seed)?;
        Ok(Battery {
            config: config.clone(),
            h1: build_h1_items(&h1_pairs, vocab)?,
            h2: build_h2_items(&triples, vocab)?,
            h3: build_h3_items(&h3_pairs, vocab, context_length)?,
            rare_nouns: select_rare_nouns(corpus, &config.closed_noun_list, &config.nouns, vocab)?,
        })
    }

    /// Every score record for one checkpoint: H1, then H2 per nonce seed,
    /// then H3.
    pub fn run(&self, ckpt: &Checkpoint, vocab: &Vocab) -> Result<Vec<ScoreRecord>> {
        let nonce_seeds: Vec<u64> = (0..self.config.nonce_seeds as u64).collect();
        let mut out = score_items(ckpt, &self.h1, None)?;
        out.extend(run_h2(ckpt, vocab, &self.h2, &nonce_seeds, &self.rare_nouns, self.config.noise_scale)?);
        out.extend(score_items(ckpt, &self.h3, None)?);
        Ok(out)
    }
}
