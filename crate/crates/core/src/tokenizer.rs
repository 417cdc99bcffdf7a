//! Character-level byte-pair encoding with word-initial space marking and
//! atomic nonce tokens.
//!
//! Every whitespace-separated word is encoded independently as
//! `MARKER + word`, so encodings of word-aligned prefixes never change when
//! text is appended.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};

/// Word-initial marker (the GPT-2 convention).
pub const SPACE_MARKER: char = '\u{0120}';

/// Default pseudowords used as nonce tokens.
pub const DEFAULT_NONCE_WORDS: [&str; 20] = [
    "dax", "blick", "toma", "wug", "fep", "gorp", "zav", "kiv", "lorp", "pid", "tupa", "modi",
    "riff", "sib", "nelk", "vash", "jop", "quib", "yeck", "mib",
];

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeRule {
    pub left: String,
    pub right: String,
    pub rank: usize,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, TokenId>,
    merges: Vec<MergeRule>,
    /// (left id, right id) -> rank
    merge_index: HashMap<(TokenId, TokenId), usize>,
    /// rank -> (left id, right id, merged id)
    merge_ids: Vec<(TokenId, TokenId, TokenId)>,
    base_size: usize,
    nonce_ids: Vec<TokenId>,
    /// marked wordform -> nonce id
    atomic: HashMap<String, TokenId>,
    marker: char,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.id_to_token == other.id_to_token
            && self.merges == other.merges
            && self.nonce_ids == other.nonce_ids
            && self.base_size == other.base_size
            && self.marker == other.marker
    }
}

/// On-disk layout of a vocabulary.
#[derive(Debug, Serialize, Deserialize)]
struct VocabFile {
    format: String,
    marker: char,
    base_size: usize,
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    nonce_ids: Vec<TokenId>,
}

const VOCAB_FORMAT: &str = "reftrack-vocab/1";

impl Vocab {
    fn from_parts(
        id_to_token: Vec<String>,
        merge_pairs: Vec<(String, String)>,
        base_size: usize,
        nonce_ids: Vec<TokenId>,
        marker: char,
    ) -> Result<Self> {
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if token_to_id.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Format {
                    what: "vocabulary",
                    detail: format!("duplicate token {t:?}"),
                });
            }
        }
        let lookup = |s: &str| {
            token_to_id.get(s).copied().ok_or_else(|| Error::Format {
                what: "vocabulary",
                detail: format!("merge references unknown token {s:?}"),
            })
        };
        let mut merges = Vec::with_capacity(merge_pairs.len());
        let mut merge_index = HashMap::with_capacity(merge_pairs.len());
        let mut merge_ids = Vec::with_capacity(merge_pairs.len());
        for (rank, (l, r)) in merge_pairs.into_iter().enumerate() {
            let ids = (lookup(&l)?, lookup(&r)?, lookup(&format!("{l}{r}"))?);
            merge_index.insert((ids.0, ids.1), rank);
            merge_ids.push(ids);
            merges.push(MergeRule {
                left: l,
                right: r,
                rank,
            });
        }
        let mut atomic = HashMap::new();
        for &id in &nonce_ids {
            let tok = id_to_token.get(id as usize).ok_or_else(|| Error::Format {
                what: "vocabulary",
                detail: format!("nonce id {id} out of range"),
            })?;
            atomic.insert(tok.clone(), id);
        }
        Ok(Vocab {
            id_to_token,
            token_to_id,
            merges,
            merge_index,
            merge_ids,
            base_size,
            nonce_ids,
            atomic,
            marker,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    /// Number of base (single-character) symbols.
    pub fn base_size(&self) -> usize {
        self.base_size
    }

    pub fn merges(&self) -> &[MergeRule] {
        &self.merges
    }

    pub fn nonce_ids(&self) -> &[TokenId] {
        &self.nonce_ids
    }

    pub fn marker(&self) -> char {
        self.marker
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    fn mark(&self, word: &str) -> String {
        let mut s = String::with_capacity(word.len() + 2);
        s.push(self.marker);
        s.push_str(word);
        s
    }

    fn encode_word(&self, word: &str, out: &mut Vec<TokenId>, unknown: &mut BTreeSet<char>) {
        let marked = self.mark(word);
        if let Some(&id) = self.atomic.get(&marked) {
            out.push(id);
            return;
        }
        let mut symbols = Vec::with_capacity(marked.chars().count());
        let mut buf = [0u8; 4];
        for c in marked.chars() {
            match self.token_to_id.get(c.encode_utf8(&mut buf) as &str) {
                Some(&id) if (id as usize) < self.base_size => symbols.push(id),
                _ => {
                    unknown.insert(c);
                }
            }
        }
        if !unknown.is_empty() {
            return;
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.merge_index.get(&(w[0], w[1])).copied())
                .min();
            let Some(rank) = best else { break };
            let (l, r, merged) = self.merge_ids[rank];
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        out.extend(symbols);
    }

    /// Encodes whitespace-separated text.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut unknown = BTreeSet::new();
        for word in text.split_whitespace() {
            self.encode_word(word, &mut out, &mut unknown);
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownCharacters(unknown.into_iter().collect()));
        }
        if out.is_empty() {
            return Err(invalid("cannot encode empty text"));
        }
        Ok(out)
    }

    /// Encodes a corpus as one concatenated token stream.
    pub fn encode_corpus(&self, corpus: &Corpus) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut unknown = BTreeSet::new();
        for s in &corpus.sentences {
            for w in s.tokens() {
                self.encode_word(w, &mut out, &mut unknown);
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownCharacters(unknown.into_iter().collect()));
        }
        Ok(out)
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(Error::TokenOutOfRange {
                id,
                vocab_size: self.len(),
            })?;
            s.push_str(tok);
        }
        let s = s.replace(self.marker, " ");
        Ok(s.strip_prefix(' ').map(str::to_string).unwrap_or(s))
    }

    /// Returns the id of `word` if its marked form is exactly one token.
    pub fn require_single_token(&self, word: &str) -> Result<TokenId> {
        let ids = self.encode(word)?;
        if ids.len() == 1 {
            Ok(ids[0])
        } else {
            Err(Error::MultiToken {
                word: word.to_string(),
                fragments: ids.len(),
            })
        }
    }

    /// Appends each wordform as one atomic marked token.
    pub fn add_nonce_tokens<S: AsRef<str>>(&self, wordforms: &[S]) -> Result<Vocab> {
        let mut v = self.clone();
        for w in wordforms {
            let w = w.as_ref();
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(invalid(format!("bad nonce wordform {w:?}")));
            }
            let marked = v.mark(w);
            if v.token_to_id.contains_key(&marked) || matches!(v.encode(w), Ok(ids) if ids.len() == 1) {
                return Err(Error::NonceCollision(w.to_string()));
            }
            let id = v.id_to_token.len() as TokenId;
            v.id_to_token.push(marked.clone());
            v.token_to_id.insert(marked.clone(), id);
            v.atomic.insert(marked, id);
            v.nonce_ids.push(id);
        }
        Ok(v)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = VocabFile {
            format: VOCAB_FORMAT.to_string(),
            marker: self.marker,
            base_size: self.base_size,
            tokens: self.id_to_token.clone(),
            merges: self
                .merges
                .iter()
                .map(|m| (m.left.clone(), m.right.clone()))
                .collect(),
            nonce_ids: self.nonce_ids.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text)?;
        if f.format != VOCAB_FORMAT {
            return Err(Error::Format {
                what: "vocabulary",
                detail: format!("unsupported format tag {:?}", f.format),
            });
        }
        if f.tokens.len() != f.base_size + f.merges.len() + f.nonce_ids.len() {
            return Err(Error::Format {
                what: "vocabulary",
                detail: "token count does not equal base + merges + nonces".into(),
            });
        }
        Vocab::from_parts(f.tokens, f.merges, f.base_size, f.nonce_ids, f.marker)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_json(&text)
    }
}

#[derive(PartialEq, Eq)]
struct Candidate {
    count: i64,
    pair: (TokenId, TokenId),
    key: Reverse<(String, String)>,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Trains up to `num_merges` merges. Highest pair frequency wins; ties go to
/// the lexicographically smallest (left, right). Training stops early when
/// no pair is left. A merge whose product string already exists as a token
/// is never applied, so every merge adds exactly one token.
pub fn train_bpe(corpus: &Corpus, num_merges: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let marker = SPACE_MARKER;
    let mut word_freq: BTreeMap<String, i64> = BTreeMap::new();
    for s in &corpus.sentences {
        for w in s.tokens() {
            let mut m = String::with_capacity(w.len() + 2);
            m.push(marker);
            m.push_str(w);
            *word_freq.entry(m).or_default() += 1;
        }
    }
    let alphabet: BTreeSet<char> = word_freq.keys().flat_map(|w| w.chars()).collect();
    let mut tokens: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    let base_size = tokens.len();
    let mut ids: HashMap<String, TokenId> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as TokenId))
        .collect();

    let mut words: Vec<(Vec<TokenId>, i64)> = word_freq
        .iter()
        .map(|(w, &f)| {
            let mut b = [0u8; 4];
            (w.chars().map(|c| ids[c.encode_utf8(&mut b) as &str]).collect(), f)
        })
        .collect();

    let mut counts: HashMap<(TokenId, TokenId), i64> = HashMap::new();
    let mut where_: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            *counts.entry(pair).or_default() += f;
            where_.entry(pair).or_default().insert(wi);
        }
    }
    let candidate = |pair: (TokenId, TokenId), count: i64, tokens: &[String]| Candidate {
        count,
        pair,
        key: Reverse((tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone())),
    };
    let mut heap: BinaryHeap<Candidate> = counts
        .iter()
        .map(|(&p, &c)| candidate(p, c, &tokens))
        .collect();
    let mut banned: HashSet<(TokenId, TokenId)> = HashSet::new();
    let mut merges: Vec<(String, String)> = Vec::new();

    while merges.len() < num_merges {
        let Some(top) = heap.pop() else { break };
        let current = counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count || current <= 0 || banned.contains(&top.pair) {
            continue;
        }
        let (l, r) = top.pair;
        let merged_str = format!("{}{}", tokens[l as usize], tokens[r as usize]);
        if ids.contains_key(&merged_str) {
            banned.insert(top.pair);
            continue;
        }
        let new_id = tokens.len() as TokenId;
        tokens.push(merged_str.clone());
        ids.insert(merged_str, new_id);
        merges.push((tokens[l as usize].clone(), tokens[r as usize].clone()));

        let mut affected: Vec<usize> = where_.remove(&top.pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(TokenId, TokenId)> = HashSet::new();
        for wi in affected {
            let (syms, f) = &mut words[wi];
            if !syms.windows(2).any(|p| p[0] == l && p[1] == r) {
                continue;
            }
            for p in syms.windows(2) {
                let pair = (p[0], p[1]);
                *counts.get_mut(&pair).expect("counted") -= *f;
                touched.insert(pair);
            }
            let mut next = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(syms[i]);
                    i += 1;
                }
            }
            *syms = next;
            for p in syms.windows(2) {
                let pair = (p[0], p[1]);
                *counts.entry(pair).or_default() += *f;
                where_.entry(pair).or_default().insert(wi);
                touched.insert(pair);
            }
        }
        counts.remove(&top.pair);
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for pair in touched {
            if let Some(&c) = counts.get(&pair) {
                if c > 0 && pair != top.pair {
                    heap.push(candidate(pair, c, &tokens));
                }
            }
        }
    }
    if merges.len() < num_merges {
        log::info!(
            "bpe: corpus supports only {} of {num_merges} requested merges",
            merges.len()
        );
    }
    Vocab::from_parts(tokens, merges, base_size, Vec::new(), marker)
}

/// Trains until base symbols plus merges reach `vocab_size` tokens (or the
/// corpus runs out of pairs).
pub fn train_bpe_to_size(corpus: &Corpus, vocab_size: usize) -> Result<Vocab> {
    let probe = train_bpe(corpus, 0)?;
    train_bpe(corpus, vocab_size.saturating_sub(probe.base_size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus(lines: &[&str]) -> Corpus {
        Corpus::from_lines(lines.iter().copied(), "test")
    }

    #[test]
    fn zero_merges_is_base_alphabet() {
        let v = train_bpe(&corpus(&["ab ba", "cab"]), 0).unwrap();
        assert_eq!(v.len(), 4); // marker, a, b, c
        assert_eq!(v.base_size(), 4);
        assert!(v.merges().is_empty());
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let v = train_bpe(&corpus(&["aaab aaab"]), 1).unwrap();
        assert_eq!(v.merges()[0].left, "a");
        assert_eq!(v.merges()[0].right, "a");
        assert_eq!(v.merges()[0].rank, 0);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (Ġ,x) and (Ġ,y) both occur once, as do (x,q) and (y,q)
        let v = train_bpe(&corpus(&["xq yq"]), 1).unwrap();
        let m = &v.merges()[0];
        assert_eq!((m.left.as_str(), m.right.as_str()), ("x", "q"));
    }

    #[test]
    fn training_is_deterministic_and_stops_early() {
        let c = corpus(&["there is a ball .", "see the ball ?"]);
        let a = train_bpe(&c, 1000).unwrap();
        let b = train_bpe(&c, 1000).unwrap();
        assert_eq!(a, b);
        assert!(a.merges().len() < 1000);
        assert_eq!(a.len(), a.base_size() + a.merges().len());
        // everything collapses to whole words
        assert_eq!(a.encode("there is a ball .").unwrap().len(), 5);
    }

    #[test]
    fn roundtrip_and_unknown_characters() {
        let c = corpus(&["there is a ball .", "see the ball ?"]);
        let v = train_bpe(&c, 5).unwrap();
        let ids = v.encode("there is a ball .").unwrap();
        assert_eq!(v.decode(&ids).unwrap(), "there is a ball .");
        assert_eq!(v.encode(&v.decode(&ids).unwrap()).unwrap(), ids);
        match v.encode("zebra jazz") {
            Err(Error::UnknownCharacters(cs)) => assert_eq!(cs, vec!['j', 'z']),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonce_tokens_are_atomic() {
        let c = corpus(&["this is a ball .", "a dog is a dog ."]);
        let v = train_bpe(&c, 50).unwrap();
        let n = v.add_nonce_tokens(&["dax"]).unwrap();
        assert_eq!(n.len(), v.len() + 1);
        let ids = n.encode("this is a dax").unwrap();
        assert_eq!(*ids.last().unwrap(), n.nonce_ids()[0]);
        assert_eq!(n.require_single_token("dax").unwrap(), n.nonce_ids()[0]);
        assert_eq!(n.decode(&ids).unwrap(), "this is a dax");
        assert!(matches!(n.add_nonce_tokens(&["dax"]), Err(Error::NonceCollision(_))));
        // a word that already encodes to one token collides too
        assert!(matches!(v.add_nonce_tokens(&["ball"]), Err(Error::NonceCollision(_))));
    }

    #[test]
    fn require_single_token_reports_fragments() {
        let v = train_bpe(&corpus(&["ball ball ball", "abcd"]), 20).unwrap();
        assert!(v.require_single_token("ball").is_ok());
        let v0 = train_bpe(&corpus(&["ball", "abcd"]), 0).unwrap();
        match v0.require_single_token("ab") {
            Err(Error::MultiToken { fragments, .. }) => assert_eq!(fragments, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vocab_file_reload_is_bit_exact() {
        let c = corpus(&["there is a ball .", "see the ball ?", "a cup and a hat ."]);
        let v = train_bpe(&c, 20).unwrap().add_nonce_tokens(&DEFAULT_NONCE_WORDS).unwrap();
        let text = v.to_json().unwrap();
        let back = Vocab::from_json(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.encode("the dax is a ball").unwrap(), v.encode("the dax is a ball").unwrap());
    }

    #[test]
    fn train_to_size_counts_base_symbols() {
        let c = corpus(&["there is a ball .", "see the ball ?", "a cup and a hat ."]);
        let v = train_bpe_to_size(&c, 25).unwrap();
        assert_eq!(v.len(), 25);
    }

    proptest! {
        #[test]
        fn roundtrip_and_prefix_stability(
            words in prop::collection::vec("[a-e]{1,6}", 1..12),
            split in 0usize..12,
        ) {
            let text = words.join(" ");
            let c = corpus(&["abc de ab", "bad cab ace", "ed ea"]);
            let v = train_bpe(&c, 12).unwrap();
            let ids = v.encode(&text).unwrap();
            prop_assert_eq!(v.decode(&ids).unwrap(), text.clone());
            prop_assert_eq!(v.encode(&v.decode(&ids).unwrap()).unwrap(), ids.clone());
            let k = split.min(words.len() - 1);
            if k > 0 {
                let head = v.encode(&words[..k].join(" ")).unwrap();
                prop_assert_eq!(&ids[..head.len()], &head[..]);
            }
        }
    }
}
