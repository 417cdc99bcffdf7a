//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reftrack::battery::{Condition, DEFAULT_NOUNS};
use reftrack::corpus::{
    generate_synthetic, mention_windows, multi_target_sentence_count, repetition_within_k, SynthParams,
};
use reftrack::model::{completion_log_probs, forward, init_model, loss, loss_and_grads, param_count, perplexity, size_preset};
use reftrack::orchestrator::{analyze, evaluate_hypotheses, reference_cells, run_grid, Analysis, GridSpec, Outcome};
use reftrack::report::write_report;
use reftrack::tokenizer::{train_bpe, train_bpe_to_size, DEFAULT_NONCE_WORDS};
use reftrack::{selftest, Corpus, ModelConfig};

type Outcome_ = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn c1_statistics() -> Outcome_ {
    let r = selftest::run();
    let failed: Vec<String> = r.checks.iter().filter(|c| !c.pass).map(|c| format!("{} ({})", c.name, c.detail)).collect();
    ensure(failed.is_empty(), failed.join("; "))?;
    ensure(r.seconds < 10.0, format!("took {:.1}s", r.seconds))?;
    Ok(format!("{} oracle checks in {:.2}s", r.checks.len(), r.seconds))
}

fn c2_architecture() -> Outcome_ {
    let mut got = Vec::new();
    for (name, want) in [("small", 2_862_848), ("medium", 8_878_080), ("large", 33_498_112)] {
        let n = param_count(&size_preset(name, 8020, 128).ok_or("missing preset")?);
        ensure(n == want, format!("{name}: {n} != {want}"))?;
        got.push(n.to_string());
    }
    Ok(format!("parameter counts {}", got.join(" / ")))
}

fn random_rows(seed: u64, n: usize, len: usize, vocab: usize) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()).collect()
}

fn c3_numerics() -> Outcome_ {
    let cfg = ModelConfig::new(2, 16, 2, 20, 8);
    let mut ck = init_model(&cfg, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for p in &mut ck.params {
        *p += rng.random_range(-0.1..0.1);
    }
    let batch = random_rows(1, 3, 8, 20);
    let (_, grads) = loss_and_grads(&ck, &batch).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for spec in ck.layout().specs().to_vec() {
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for _ in 0..10 {
            let i = rng.random_range(spec.range());
            let orig = ck.params[i];
            ck.params[i] = orig + h;
            let up = loss(&ck, &batch).map_err(|e| e.to_string())?;
            ck.params[i] = orig - h;
            let down = loss(&ck, &batch).map_err(|e| e.to_string())?;
            ck.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (numeric - grads[i]).powi(2);
            norm += (numeric.abs() + grads[i].abs()).powi(2);
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(1e-12));
    }
    ensure(worst < 1e-4, format!("gradient relative error {worst:e}"))?;

    let corpus = Corpus::from_lines(["the ball is red .", "a cup is on the bed .", "see the dog ?"], "u");
    let vocab = train_bpe(&corpus, 6).map_err(|e| e.to_string())?;
    let mut flat = init_model(&ModelConfig::new(2, 16, 2, vocab.len(), 16), 0).map_err(|e| e.to_string())?;
    flat.tensor_mut("head").ok_or("no head")?.fill(0.0);
    let ppl = perplexity(&flat, &corpus, &vocab).map_err(|e| e.to_string())?;
    let v = vocab.len() as f64;
    ensure((ppl - v).abs() / v < 1e-3, format!("uniform perplexity {ppl} vs {v}"))?;

    let mut worst_sum = 0.0f64;
    for ids in random_rows(5, 6, 6, 20) {
        let lp = completion_log_probs(&ck, &ids).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((lp.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs());
    }
    ensure(worst_sum < 1e-6, format!("softmax sum off by {worst_sum:e}"))?;

    let a = random_rows(6, 1, 8, 20).remove(0);
    let la = forward(&ck, &a).map_err(|e| e.to_string())?;
    for cut in 1..8 {
        let mut b = a.clone();
        for t in b.iter_mut().skip(cut) {
            *t = (*t + 7) % 20;
        }
        let lb = forward(&ck, &b).map_err(|e| e.to_string())?;
        ensure(la[..cut * 20] == lb[..cut * 20], format!("prefix {cut} changed"))?;
    }
    Ok(format!("grad rel err {worst:.1e}, uniform ppl {ppl:.4} (V={v}), softmax err {worst_sum:.1e}, causal"))
}

/// Consonant-vowel pseudowords, none starting with a nonce wordform.
fn pseudowords(n: usize, seed: u64) -> Vec<String> {
    let cons: Vec<char> = "bdfgklmnprstvz".chars().collect();
    let vows: Vec<char> = "aeiou".chars().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = std::collections::BTreeSet::new();
    while out.len() < n {
        let syl = rng.random_range(3..=5);
        let w: String = (0..syl)
            .flat_map(|_| [cons[rng.random_range(0..cons.len())], vows[rng.random_range(0..vows.len())]])
            .collect();
        if DEFAULT_NONCE_WORDS.iter().any(|nw| w.starts_with(nw)) {
            continue;
        }
        out.insert(w);
    }
    out.into_iter().collect()
}

fn c4_tokenizer() -> Outcome_ {
    let mut params = SynthParams::cds_default(10_000);
    params.vocabulary = pseudowords(6000, 1);
    params.templates = ["the {word} {noun} .", "{word} is a {noun} .", "look at the {noun} , {word} !", "a {noun} ?"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let corpus = generate_synthetic(&params, 2).map_err(|e| e.to_string())?;
    let base = train_bpe_to_size(&corpus, 8000).map_err(|e| e.to_string())?;
    let vocab = base.add_nonce_tokens(&DEFAULT_NONCE_WORDS).map_err(|e| e.to_string())?;
    ensure(vocab.len() == 8020, format!("vocabulary has {} tokens", vocab.len()))?;
    for s in &corpus.sentences {
        let text = s.text();
        let ids = vocab.encode(&text).map_err(|e| e.to_string())?;
        let back = vocab.decode(&ids).map_err(|e| e.to_string())?;
        ensure(back == text, format!("roundtrip {text:?} -> {back:?}"))?;
    }
    for w in DEFAULT_NOUNS.iter().chain(DEFAULT_NONCE_WORDS.iter()) {
        vocab.require_single_token(w).map_err(|e| e.to_string())?;
    }
    Ok(format!(
        "{} sentences round-trip, {} base + {} merges + 20 nonces = {} tokens, 29 single-token words",
        corpus.len(),
        base.base_size(),
        base.merges().len(),
        vocab.len()
    ))
}

fn desk_run(out: &Path) -> Result<(Analysis, f64), String> {
    let t = Instant::now();
    let spec = GridSpec::desk();
    let records = run_grid(&spec, out, 1).map_err(|e| e.to_string())?;
    ensure(records.iter().all(|r| r.ok), "a desk model failed")?;
    let analysis = analyze(out).map_err(|e| e.to_string())?;
    write_report(&analysis, out).map_err(|e| e.to_string())?;
    Ok((analysis, t.elapsed().as_secs_f64()))
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| {
            let p = e.map_err(|e| e.to_string())?.path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            Ok((name, std::fs::read(&p).map_err(|e| e.to_string())?))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn c5_determinism(a: &Path, b: &Path) -> Outcome_ {
    let ra = std::fs::read_to_string(a.join("results.jsonl")).map_err(|e| e.to_string())?;
    let rb = std::fs::read_to_string(b.join("results.jsonl")).map_err(|e| e.to_string())?;
    let hashes = |s: &str| -> Vec<String> {
        let mut v: Vec<String> = s
            .lines()
            .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
            .map(|v| format!("{}:{}", v["size"], v["checkpoint_hash"]))
            .collect();
        v.sort();
        v
    };
    let (ha, hb) = (hashes(&ra), hashes(&rb));
    ensure(!ha.is_empty() && ha == hb, "checkpoint hashes differ")?;
    for sub in ["checkpoints", "scores", "figures"] {
        let (fa, fb) = (dir_bytes(&a.join(sub))?, dir_bytes(&b.join(sub))?);
        ensure(!fa.is_empty() && fa == fb, format!("{sub} differ"))?;
    }
    Ok(format!("{} checkpoint hashes, score logs and SVG bytes identical", ha.len()))
}

fn c6_mechanism(analysis: &Analysis, seconds: f64) -> Outcome_ {
    let cell = analysis.cells.iter().filter(|c| c.epochs >= 3).max_by_key(|c| c.epochs).ok_or("no 3-epoch cell")?;
    let h1 = cell.h1.as_ref().ok_or("no H1")?;
    let rate = h1.summary.anti_me as f64 / h1.summary.n as f64;
    let h2 = cell.h2.as_ref().ok_or("no H2")?;
    let h3 = cell.h3.as_ref().ok_or("no H3")?;
    let k = h3.kendall.as_ref().ok_or("degenerate H3 trend")?;
    let (nonce, full) = (h2.means[&Condition::NonceOnly], h2.means[&Condition::FullContext]);
    let detail = format!(
        "{}: anti-ME {}/{} p={:.2e}; tau={:+.3} p={:.2e} slope={:+.3}; nonce_only {nonce:.2} vs full_context {full:.2}; grid {seconds:.0}s",
        cell.label(),
        h1.summary.anti_me,
        h1.summary.n,
        h1.sign_test.p_value,
        k.statistic,
        k.p_value,
        h3.slope
    );
    ensure(rate > 0.5 && h1.sign_test.p_value < 0.05, format!("H1 direction not met: {detail}"))?;
    ensure(k.statistic > 0.0 && k.p_value < 0.05 && h3.slope > 0.0, format!("H3 direction not met: {detail}"))?;
    ensure(nonce >= full, format!("H2 direction not met: {detail}"))?;
    ensure(seconds < 1800.0, format!("too slow: {detail}"))?;
    Ok(detail)
}

fn c7_hypotheses() -> Outcome_ {
    let v = evaluate_hypotheses(&reference_cells(), 0.05);
    let got = [v.h1.outcome, v.h2.outcome, v.h3.outcome, v.h4.outcome];
    ensure(got == [Outcome::Pass, Outcome::Pass, Outcome::Partial, Outcome::Pass], format!("verdicts {got:?}"))?;
    ensure(v.h3.failing_cells == ["large/20ep"], format!("H3 failing cells {:?}", v.h3.failing_cells))?;
    let frac = v.h3.cells.iter().find(|c| c.cell == "large/20ep").map(|c| c.value).unwrap_or(f64::NAN);
    ensure((frac - 0.48).abs() < 1e-12, format!("large/20ep monotone fraction {frac}"))?;
    Ok(format!("H1 pass, H2 pass, H3 partial (large/20ep at {:.0}%), H4 pass", 100.0 * frac))
}

const FIXTURE: [&str; 12] = [
    "look at the ball .",
    "the ball is red .",
    "where is the dog ?",
    "the dog and the ball .",
    "see the cup .",
    "a big truck .",
    "the ball .",
    "cup and dog .",
    "no .",
    "the ball and the ball .",
    "dog .",
    "bye .",
];

fn c8_corpus_stats() -> Outcome_ {
    let c = Corpus::from_lines(FIXTURE, "fixture");
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let e = |r: reftrack::Result<f64>| r.map_err(|e| e.to_string());
    let w = |r: reftrack::Result<usize>| r.map_err(|e| e.to_string());
    // ball in sentences 1 2 4 7 10, dog in 3 4 8 11, cup in 5 8
    let rep = [
        (e(repetition_within_k(&c, "ball", 1))?, 0.2),
        (e(repetition_within_k(&c, "ball", 2))?, 0.4),
        (e(repetition_within_k(&c, "ball", 3))?, 0.8),
        (e(repetition_within_k(&c, "dog", 1))?, 0.25),
        (e(repetition_within_k(&c, "dog", 3))?, 0.5),
        (e(repetition_within_k(&c, "cup", 2))?, 0.0),
        (e(repetition_within_k(&c, "cup", 3))?, 0.5),
    ];
    for (i, (got, want)) in rep.iter().enumerate() {
        ensure(got == want, format!("repetition case {i}: {got} != {want}"))?;
    }
    ensure(repetition_within_k(&c, "car", 3).is_err(), "unattested noun accepted")?;
    let windows = [
        (w(mention_windows(&c, "ball", 3, 2))?, 2),
        (w(mention_windows(&c, "ball", 5, 2))?, 6),
        (w(mention_windows(&c, "dog", 5, 2))?, 6),
        (w(mention_windows(&c, "dog", 12, 4))?, 1),
        (w(mention_windows(&c, "dog", 20, 5))?, 0),
    ];
    for (i, (got, want)) in windows.iter().enumerate() {
        ensure(got == want, format!("window case {i}: {got} != {want}"))?;
    }
    let multi = [
        (multi_target_sentence_count(&c, &s(&["ball", "dog", "cup"])), 2),
        (multi_target_sentence_count(&c, &s(&["ball", "truck"])), 0),
        (multi_target_sentence_count(&c, &s(&["dog", "cup", "truck"])), 1),
    ];
    for (i, (got, want)) in multi.iter().enumerate() {
        ensure(got == want, format!("multi-target case {i}: {got} != {want}"))?;
    }

    // Monte-Carlo oracle: simulate only which nouns each sentence mentions.
    let params = SynthParams::cds_default(60_000);
    let corpus = generate_synthetic(&params, 5).map_err(|e| e.to_string())?;
    let n_nouns = params.nouns.len();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seq: Vec<Vec<usize>> = Vec::new();
    while seq.len() < 400_000 {
        let topic = rng.random_range(0..n_nouns);
        if rng.random::<f64>() < params.two_referent_prob {
            let mut other = rng.random_range(0..n_nouns - 1);
            if other >= topic {
                other += 1;
            }
            seq.push(vec![topic, other]);
        }
        loop {
            seq.push(vec![topic]);
            if rng.random::<f64>() >= params.episode_continue_prob {
                break;
            }
        }
    }
    let mut worst = 0.0f64;
    for (idx, noun) in params.nouns.iter().enumerate() {
        let hits: Vec<usize> = seq.iter().enumerate().filter(|(_, s)| s.contains(&idx)).map(|(i, _)| i).collect();
        let oracle = hits.windows(2).filter(|w| w[1] - w[0] <= 3).count() as f64 / hits.len() as f64;
        let got = e(repetition_within_k(&corpus, noun, 3))?;
        worst = worst.max((got - oracle).abs());
    }
    ensure(worst <= 0.05, format!("repetition_within_3 off the Monte-Carlo oracle by {worst:.3}"))?;
    Ok(format!("12-sentence fixture exact (15 cases); synthetic repetition_within_3 within {worst:.3} of Monte-Carlo over {n_nouns} nouns"))
}

fn report(n: usize, name: &str, r: &Outcome_) -> bool {
    match r {
        Ok(d) => println!("criterion {n} PASS {name}: {d}"),
        Err(e) => println!("criterion {n} FAIL {name}: {e}"),
    }
    r.is_ok()
}

fn main() {
    let mut ok = true;
    ok &= report(1, "statistics oracles", &c1_statistics());
    ok &= report(2, "architecture", &c2_architecture());
    ok &= report(3, "numerical core", &c3_numerics());
    ok &= report(4, "tokenizer", &c4_tokenizer());

    let tmp = tempfile::tempdir().expect("temp dir");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let first = desk_run(&a);
    let second = desk_run(&b);
    let c5 = match (&first, &second) {
        (Ok(_), Ok(_)) => c5_determinism(&a, &b),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    ok &= report(5, "determinism", &c5);
    let c6 = first.as_ref().map_err(|e| e.clone()).and_then(|(an, secs)| c6_mechanism(an, *secs));
    ok &= report(6, "desk mechanism", &c6);
    ok &= report(7, "hypothesis engine", &c7_hypotheses());
    ok &= report(8, "corpus statistics", &c8_corpus_stats());
    if !ok {
        std::process::exit(1);
    }
}
