//! Sentence-per-line corpora, a synthetic naming-episode generator, and the
//! discourse statistics (repetition, mention windows, multi-target sentences).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Successor horizon used by [`compute_corpus_stats`].
pub const DEFAULT_REPETITION_K: usize = 3;
/// Window length used by [`compute_corpus_stats`].
pub const DEFAULT_WINDOW: usize = 10;
/// Minimum mentions per window used by [`compute_corpus_stats`].
pub const DEFAULT_MIN_MENTIONS: usize = 3;

/// One lowercase sentence as whitespace-free word and punctuation tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    tokens: Vec<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(invalid("sentence has no tokens"));
        }
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(invalid(format!("bad sentence token {bad:?}")));
        }
        Ok(Sentence { tokens })
    }

    /// Splits on whitespace after lowercasing. Returns `None` for blank input.
    pub fn parse(line: &str) -> Option<Self> {
        let tokens: Vec<String> = line
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        if tokens.is_empty() {
            None
        } else {
            Some(Sentence { tokens })
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.tokens.iter().any(|t| t == word)
    }

    pub fn count(&self, word: &str) -> usize {
        self.tokens.iter().filter(|t| *t == word).count()
    }

    /// Tokens joined by single spaces.
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Ordered sentences; order is significant for every window statistic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub source: String,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, source: impl Into<String>) -> Self {
        Corpus {
            sentences,
            source: source.into(),
        }
    }

    /// Builds a corpus from in-memory lines; blank lines are dropped.
    pub fn from_lines<'a>(lines: impl IntoIterator<Item = &'a str>, source: &str) -> Self {
        Corpus::new(lines.into_iter().filter_map(Sentence::parse).collect(), source)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn word_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    /// One sentence per line, newline-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.text());
            out.push('\n');
        }
        out
    }

    /// Splits off the last `fraction` of sentences (by index) as a held-out set.
    pub fn split_tail(&self, fraction: f64) -> (Corpus, Corpus) {
        let n = self.sentences.len();
        let held = ((n as f64) * fraction).round() as usize;
        let held = held.min(n.saturating_sub(1));
        let cut = n - held;
        (
            Corpus::new(self.sentences[..cut].to_vec(), format!("{} [train]", self.source)),
            Corpus::new(self.sentences[cut..].to_vec(), format!("{} [held-out]", self.source)),
        )
    }

    /// Indices of sentences containing `noun`.
    fn hits(&self, noun: &str) -> Vec<usize> {
        self.sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.contains(noun))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Parses sentence-per-line text. Returns the corpus and the number of
/// whitespace-only lines that were skipped.
pub fn parse_corpus(text: &str, source: &str) -> Result<(Corpus, usize)> {
    let mut sentences = Vec::new();
    let mut skipped = 0;
    for line in text.lines() {
        match Sentence::parse(line) {
            Some(s) => sentences.push(s),
            None if !line.is_empty() => skipped += 1,
            None => {}
        }
    }
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((Corpus::new(sentences, source), skipped))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (corpus, skipped) = parse_corpus(&text, &path.display().to_string())?;
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} whitespace-only lines", path.display());
    }
    Ok(corpus)
}

/// Knobs for the naming-episode generator.
///
/// Templates are sentence skeletons with exactly one `{noun}` slot and
/// optionally one `{word}` slot filled from `vocabulary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub nouns: Vec<String>,
    pub vocabulary: Vec<String>,
    pub episode_continue_prob: f64,
    pub two_referent_prob: f64,
    pub num_sentences: usize,
    pub templates: Vec<String>,
}

impl SynthParams {
    /// A CDS-flavoured parameter set over the nine battery nouns plus a
    /// dozen extra concrete nouns.
    pub fn cds_default(num_sentences: usize) -> Self {
        let nouns = [
            "ball", "book", "car", "cup", "hat", "dog", "cat", "fish", "bird", "duck", "spoon",
            "shoe", "sock", "truck", "boat", "doll", "bear", "train", "baby", "horse", "cow",
            "pig", "bed",
        ];
        let vocabulary = [
            "big", "red", "blue", "little", "nice", "soft", "here", "there", "new", "funny",
            "yellow", "green",
        ];
        let templates = [
            "that is a {noun} .",
            "this is a {noun} .",
            "see the {noun} ?",
            "look at the {noun} .",
            "can you get the {noun} ?",
            "where is the {noun} ?",
            "the {noun} is {word} .",
            "do you want the {noun} ?",
            "is that a {noun} ?",
            "it is a {word} {noun} .",
            "give me the {noun} .",
            "you have a {noun} .",
        ];
        SynthParams {
            nouns: nouns.iter().map(|s| s.to_string()).collect(),
            vocabulary: vocabulary.iter().map(|s| s.to_string()).collect(),
            episode_continue_prob: 0.65,
            two_referent_prob: 0.15,
            num_sentences,
            templates: templates.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("episode_continue_prob", self.episode_continue_prob),
            ("two_referent_prob", self.two_referent_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.nouns.is_empty() {
            return Err(invalid("synthetic generator needs at least one noun"));
        }
        if self.num_sentences == 0 {
            return Err(invalid("num_sentences must be positive"));
        }
        let fillers: BTreeSet<&str> = self.vocabulary.iter().map(String::as_str).collect();
        if let Some(n) = self.nouns.iter().find(|n| fillers.contains(n.as_str())) {
            return Err(invalid(format!("noun {n:?} also appears in filler vocabulary")));
        }
        if self.templates.is_empty() {
            return Err(invalid("synthetic generator needs at least one template"));
        }
        for t in &self.templates {
            if t.matches("{noun}").count() != 1 {
                return Err(invalid(format!("template {t:?} needs exactly one {{noun}} slot")));
            }
            if t.contains("{word}") && self.vocabulary.is_empty() {
                return Err(invalid(format!("template {t:?} has a {{word}} slot but no vocabulary")));
            }
        }
        Ok(())
    }
}

fn render(template: &str, noun: &str, filler: Option<&str>) -> Sentence {
    let mut text = template.replace("{noun}", noun);
    if let Some(w) = filler {
        text = text.replace("{word}", w);
    }
    Sentence::parse(&text).expect("validated template renders non-empty")
}

/// Generates `num_sentences` sentences from geometric naming episodes.
///
/// Each episode draws a topic noun uniformly. With `two_referent_prob` it
/// opens with "there is a X and a Y ." where the topic takes either slot
/// with equal probability. It then emits one template sentence about the
/// topic and keeps going with `episode_continue_prob`.
pub fn generate_synthetic(params: &SynthParams, seed: u64) -> Result<Corpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.num_sentences;
    let mut sentences = Vec::with_capacity(n + 16);
    while sentences.len() < n {
        let topic_idx = rng.random_range(0..params.nouns.len());
        let topic = params.nouns[topic_idx].as_str();
        if params.nouns.len() >= 2 && rng.random::<f64>() < params.two_referent_prob {
            let mut other_idx = rng.random_range(0..params.nouns.len() - 1);
            if other_idx >= topic_idx {
                other_idx += 1;
            }
            let other = params.nouns[other_idx].as_str();
            let (first, second) = if rng.random_bool(0.5) {
                (topic, other)
            } else {
                (other, topic)
            };
            sentences.push(
                Sentence::parse(&format!("there is a {first} and a {second} ."))
                    .expect("non-empty"),
            );
        }
        loop {
            let template = params.templates.choose(&mut rng).expect("validated");
            let filler = if template.contains("{word}") {
                params.vocabulary.choose(&mut rng).map(String::as_str)
            } else {
                None
            };
            sentences.push(render(template, topic, filler));
            if rng.random::<f64>() >= params.episode_continue_prob {
                break;
            }
        }
    }
    sentences.truncate(n);
    Ok(Corpus::new(sentences, format!("synthetic(seed={seed})")))
}

/// Fraction of sentences mentioning `noun` for which at least one of the
/// next `k` sentences also mentions it. Sentences with fewer than `k`
/// successors stay in the denominator.
pub fn repetition_within_k(corpus: &Corpus, noun: &str, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let hits = corpus.hits(noun);
    if hits.is_empty() {
        return Err(Error::NounNotAttested(noun.to_string()));
    }
    let repeated = hits.windows(2).filter(|w| w[1] - w[0] <= k).count();
    Ok(repeated as f64 / hits.len() as f64)
}

/// Number of stride-1 windows of `window` sentences in which `noun` occurs
/// in at least `min_mentions` distinct sentences. A corpus shorter than the
/// window is treated as one truncated window.
pub fn mention_windows(corpus: &Corpus, noun: &str, window: usize, min_mentions: usize) -> Result<usize> {
    if window == 0 || min_mentions == 0 {
        return Err(invalid("window and min_mentions must be at least 1"));
    }
    let n = corpus.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0usize);
    for s in &corpus.sentences {
        let last = *prefix.last().unwrap();
        prefix.push(last + usize::from(s.contains(noun)));
    }
    if n <= window {
        return Ok(usize::from(n > 0 && prefix[n] >= min_mentions));
    }
    Ok((0..=n - window)
        .filter(|&start| prefix[start + window] - prefix[start] >= min_mentions)
        .count())
}

/// Sentences containing two or more distinct nouns from `nouns`.
pub fn multi_target_sentence_count(corpus: &Corpus, nouns: &[String]) -> usize {
    let targets: BTreeSet<&str> = nouns.iter().map(String::as_str).collect();
    corpus
        .sentences
        .iter()
        .filter(|s| {
            let present: BTreeSet<&str> = s
                .tokens()
                .iter()
                .map(String::as_str)
                .filter(|t| targets.contains(t))
                .collect();
            present.len() >= 2
        })
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NounStats {
    /// Token occurrences.
    pub frequency: usize,
    /// `None` when the noun never occurs.
    pub repetition_within_3: Option<f64>,
    pub mention_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub nouns: BTreeMap<String, NounStats>,
    pub multi_target_sentence_count: usize,
    pub total_sentences: usize,
    pub total_word_tokens: usize,
}

impl CorpusStats {
    /// Mean repetition over attested nouns.
    pub fn mean_repetition(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .nouns
            .values()
            .filter_map(|s| s.repetition_within_3)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

pub fn compute_corpus_stats(corpus: &Corpus, nouns: &[String]) -> Result<CorpusStats> {
    if nouns.is_empty() {
        return Err(invalid("noun list is empty"));
    }
    let mut per_noun = BTreeMap::new();
    for noun in nouns {
        let frequency = corpus.sentences.iter().map(|s| s.count(noun)).sum();
        let repetition = match repetition_within_k(corpus, noun, DEFAULT_REPETITION_K) {
            Ok(p) => Some(p),
            Err(Error::NounNotAttested(_)) => None,
            Err(e) => return Err(e),
        };
        let windows = mention_windows(corpus, noun, DEFAULT_WINDOW, DEFAULT_MIN_MENTIONS)?;
        per_noun.insert(
            noun.clone(),
            NounStats {
                frequency,
                repetition_within_3: repetition,
                mention_windows: windows,
            },
        );
    }
    Ok(CorpusStats {
        nouns: per_noun,
        multi_target_sentence_count: multi_target_sentence_count(corpus, nouns),
        total_sentences: corpus.len(),
        total_word_tokens: corpus.word_tokens(),
    })
}
