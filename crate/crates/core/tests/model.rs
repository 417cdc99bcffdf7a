use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reftrack::corpus::{generate_synthetic, SynthParams};
use reftrack::model::{
    completion_log_probs, forward, init_model, init_nonce_embeddings, loss, loss_and_grads, perplexity,
    train_with_history, NoiseScale,
};
use reftrack::tokenizer::{train_bpe, DEFAULT_NONCE_WORDS};
use reftrack::{Checkpoint, Corpus, ModelConfig, TrainConfig, Vocab};

fn tiny(vocab: usize, ctx: usize) -> ModelConfig {
    ModelConfig::new(2, 16, 2, vocab, ctx)
}

fn rows(seed: u64, n: usize, len: usize, vocab: usize) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.random_range(0..vocab as u32)).collect())
        .collect()
}

/// Init, then jitter every parameter so gains, biases and the head are all
/// away from their special starting values.
fn jittered(cfg: &ModelConfig, seed: u64) -> Checkpoint {
    let mut ck = init_model(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for p in &mut ck.params {
        *p += rng.random_range(-0.1..0.1);
    }
    ck
}

#[test]
fn gradients_match_central_differences() {
    let cfg = tiny(20, 8);
    let mut ck = jittered(&cfg, 3);
    let batch = rows(1, 3, 8, 20);
    let (_, analytic) = loss_and_grads(&ck, &batch).unwrap();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for spec in ck.layout().specs().to_vec() {
        let r = spec.range();
        let picks: Vec<usize> = (0..12).map(|_| rng.random_range(r.clone())).collect();
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for &i in &picks {
            let orig = ck.params[i];
            ck.params[i] = orig + h;
            let up = loss(&ck, &batch).unwrap();
            ck.params[i] = orig - h;
            let down = loss(&ck, &batch).unwrap();
            ck.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            diff += (numeric - analytic[i]).powi(2);
            norm += (numeric.abs() + analytic[i].abs()).powi(2);
        }
        let rel = diff.sqrt() / norm.sqrt().max(1e-12);
        assert!(rel < 1e-4, "{}: relative error {rel:e}", spec.name);
    }
}

#[test]
fn zero_head_gives_uniform_predictions() {
    let cfg = tiny(17, 8);
    let mut ck = init_model(&cfg, 0).unwrap();
    ck.tensor_mut("head").unwrap().fill(0.0);
    let l = loss(&ck, &rows(2, 2, 8, 17)).unwrap();
    assert!((l - 17f64.ln()).abs() < 1e-12);

    let corpus = Corpus::from_lines(["the ball is red .", "a cup is on the bed ."], "t");
    let vocab = train_bpe(&corpus, 4).unwrap();
    let cfg = tiny(vocab.len(), 8);
    let mut ck = init_model(&cfg, 0).unwrap();
    ck.tensor_mut("head").unwrap().fill(0.0);
    let ppl = perplexity(&ck, &corpus, &vocab).unwrap();
    let v = vocab.len() as f64;
    assert!((ppl - v).abs() / v < 1e-3, "{ppl} vs {v}");
}

#[test]
fn completion_distribution_normalises() {
    let ck = jittered(&tiny(30, 10), 1);
    for ids in rows(5, 4, 6, 30) {
        let lp = completion_log_probs(&ck, &ids).unwrap();
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn forward_is_causal() {
    let ck = jittered(&tiny(25, 10), 4);
    let v = 25;
    let a = rows(6, 1, 10, v).remove(0);
    for cut in 1..10 {
        let mut b = a.clone();
        for t in b.iter_mut().skip(cut) {
            *t = (*t + 7) % v as u32;
        }
        let la = forward(&ck, &a).unwrap();
        let lb = forward(&ck, &b).unwrap();
        assert_eq!(la[..cut * v], lb[..cut * v], "prefix {cut}");
    }
}

#[test]
fn duplicated_rows_do_not_change_the_mean_loss() {
    let ck = jittered(&tiny(20, 8), 2);
    let r = rows(3, 1, 8, 20);
    let once = loss(&ck, &r).unwrap();
    let twice = loss(&ck, &[r[0].clone(), r[0].clone()]).unwrap();
    assert!((once - twice).abs() < 1e-12);
    let (_, g1) = loss_and_grads(&ck, &r).unwrap();
    let (_, g2) = loss_and_grads(&ck, &[r[0].clone(), r[0].clone()]).unwrap();
    let worst = g1.iter().zip(&g2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
}

#[test]
fn invalid_inputs_are_rejected() {
    let ck = init_model(&tiny(10, 4), 0).unwrap();
    assert!(forward(&ck, &[]).is_err());
    assert!(forward(&ck, &[1, 2, 3, 4, 5]).is_err());
    assert!(forward(&ck, &[10]).is_err());
    assert!(loss(&ck, &[vec![1]]).is_err());
}

fn small_world() -> (Corpus, Vocab) {
    let corpus = generate_synthetic(&SynthParams::cds_default(1500), 11).unwrap();
    let vocab = train_bpe(&corpus, 200).unwrap();
    (corpus, vocab)
}

fn rare_anchor_ids(vocab: &Vocab) -> Vec<u32> {
    ["duck", "spoon", "sock", "boat"]
        .iter()
        .filter_map(|w| vocab.require_single_token(w).ok())
        .collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn nonce_rows_sit_near_an_anchor_and_nothing_else_moves() {
    let (_, base) = small_world();
    let vocab = base.add_nonce_tokens(&DEFAULT_NONCE_WORDS[..4]).unwrap();
    let anchors = rare_anchor_ids(&vocab);
    assert!(!anchors.is_empty());
    let cfg = tiny(vocab.len(), 16);
    let ck = init_model(&cfg, 0).unwrap();
    let c = cfg.model_dim;
    let nonces: Vec<usize> = vocab.nonce_ids().iter().map(|&i| i as usize).collect();
    for seed in 0..10 {
        let out = init_nonce_embeddings(&ck, &vocab, &anchors, seed, NoiseScale::AnchorRms).unwrap();
        for name in ["wte", "head"] {
            let before = ck.tensor(name).unwrap();
            let after = out.tensor(name).unwrap();
            for row in 0..vocab.len() {
                let r = &after[row * c..(row + 1) * c];
                if nonces.contains(&row) {
                    let best = anchors
                        .iter()
                        .map(|&a| cosine(r, &before[a as usize * c..(a as usize + 1) * c]))
                        .fold(f64::MIN, f64::max);
                    assert!(best > 0.9, "seed {seed} {name} row {row}: {best}");
                } else {
                    assert_eq!(r, &before[row * c..(row + 1) * c]);
                }
            }
        }
        let wpe_same = ck.tensor("wpe").unwrap() == out.tensor("wpe").unwrap();
        assert!(wpe_same);
    }
    let a = init_nonce_embeddings(&ck, &vocab, &anchors, 1, NoiseScale::AnchorRms).unwrap();
    let b = init_nonce_embeddings(&ck, &vocab, &anchors, 2, NoiseScale::AnchorRms).unwrap();
    assert_ne!(a.params, b.params);
    assert_eq!(a, init_nonce_embeddings(&ck, &vocab, &anchors, 1, NoiseScale::AnchorRms).unwrap());
    assert!(init_nonce_embeddings(&ck, &vocab, &[], 1, NoiseScale::AnchorRms).is_err());
    assert!(init_nonce_embeddings(&ck, &base, &anchors, 1, NoiseScale::AnchorRms).is_err());
}

fn quick_train() -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        batch_size: 8,
        epochs: 2,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn training_reduces_loss_and_is_thread_count_invariant() {
    let (corpus, vocab) = small_world();
    let cfg = tiny(vocab.len(), 32);
    let tc = quick_train();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let multi = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = single.install(|| train_with_history(&cfg, &tc, &corpus, &vocab)).unwrap();
    let b = multi.install(|| train_with_history(&cfg, &tc, &corpus, &vocab)).unwrap();
    assert_eq!(a.checkpoint.hash().unwrap(), b.checkpoint.hash().unwrap());
    assert_eq!(a.checkpoint.provenance.step, a.losses.len());

    let first = a.losses[..3].iter().sum::<f64>() / 3.0;
    let n = a.losses.len();
    let last = a.losses[n - 3..].iter().sum::<f64>() / 3.0;
    assert!(last < 0.7 * first, "loss {first} -> {last}");
    assert!(first > 0.8 * (vocab.len() as f64).ln());

    let other = train_with_history(&cfg, &TrainConfig { seed: 5, ..tc }, &corpus, &vocab).unwrap();
    assert_ne!(other.checkpoint.params, a.checkpoint.params);
}

#[test]
fn training_rejects_mismatched_or_tiny_inputs() {
    let (corpus, vocab) = small_world();
    let tc = quick_train();
    assert!(train_with_history(&tiny(vocab.len() + 1, 32), &tc, &corpus, &vocab).is_err());
    let short = Corpus::from_lines(["the ball ."], "s");
    assert!(train_with_history(&tiny(vocab.len(), 32), &tc, &short, &vocab).is_err());
}
