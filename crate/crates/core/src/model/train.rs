use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layout::Layout;
use super::transformer::{batch_loss_grads, row_nll};
use super::{init_model, Checkpoint, ModelConfig, Provenance};
use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::tokenizer::{TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// `None` means 1% of the total step count.
    pub warmup_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            batch_size: 32,
            epochs: 1,
            seed: 0,
            weight_decay: 0.01,
            warmup_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr` over `warmup_steps`, then cosine decay to zero
/// at `total_steps`. Zero past the end.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_steps: usize) -> f64 {
    if step > total_steps || total_steps == 0 {
        return 0.0;
    }
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// Decoupled-weight-decay Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    decay_mask: Vec<bool>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(layout: &Layout, cfg: &TrainConfig) -> Self {
        let mut decay_mask = vec![false; layout.total()];
        for s in layout.specs() {
            decay_mask[s.range()].fill(s.decay);
        }
        AdamW {
            m: vec![0.0; layout.total()],
            v: vec![0.0; layout.total()],
            decay_mask,
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if self.decay_mask[i] {
                params[i] -= lr * self.weight_decay * params[i];
            }
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Mean training loss per optimizer step.
    pub losses: Vec<f64>,
}

fn blocks(stream: &[TokenId], len: usize) -> Vec<Vec<TokenId>> {
    stream.chunks_exact(len).map(<[TokenId]>::to_vec).collect()
}

pub fn train(config: &ModelConfig, train_cfg: &TrainConfig, corpus: &Corpus, vocab: &Vocab) -> Result<Checkpoint> {
    train_with_history(config, train_cfg, corpus, vocab).map(|o| o.checkpoint)
}

/// Encodes and concatenates the corpus, cuts it into `context_length`
/// blocks, and runs AdamW under [`cosine_lr`] with a per-epoch seeded
/// shuffle. An incomplete final batch is dropped.
pub fn train_with_history(
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    corpus: &Corpus,
    vocab: &Vocab,
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    config.validate()?;
    if config.vocab_size != vocab.len() {
        return Err(invalid(format!(
            "model vocab_size {} does not match vocabulary of {}",
            config.vocab_size,
            vocab.len()
        )));
    }
    let stream = vocab.encode_corpus(corpus)?;
    let data = blocks(&stream, config.context_length);
    if data.len() < train_cfg.batch_size {
        return Err(invalid(format!(
            "corpus yields {} tokens; need at least batch_size x context_length = {}",
            stream.len(),
            train_cfg.batch_size * config.context_length
        )));
    }
    let steps_per_epoch = data.len() / train_cfg.batch_size;
    let total = steps_per_epoch * train_cfg.epochs;
    let warmup = train_cfg
        .warmup_steps
        .unwrap_or_else(|| ((total as f64) * 0.01).round() as usize);

    let mut ckpt = init_model(config, train_cfg.seed)?;
    let layout = ckpt.layout();
    let mut opt = AdamW::new(&layout, train_cfg);
    let mut losses = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..train_cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(train_cfg.batch_size) {
            step += 1;
            let lr = cosine_lr(step, total, train_cfg.learning_rate, warmup);
            let batch: Vec<Vec<TokenId>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (loss, grads) = batch_loss_grads(config, &layout, &ckpt.params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, lr });
            }
            log::debug!("epoch {epoch} step {step}/{total} lr {lr:.3e} loss {loss:.4}");
            losses.push(loss);
            opt.step(&mut ckpt.params, &grads, lr);
        }
        log::info!(
            "epoch {} done: last loss {:.4}",
            epoch + 1,
            losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    ckpt.round_to_storage();
    ckpt.provenance = Provenance {
        seed: train_cfg.seed,
        epochs: train_cfg.epochs,
        step,
    };
    Ok(TrainOutcome {
        checkpoint: ckpt,
        losses,
    })
}

/// exp(mean next-token NLL) over the encoded corpus, chunked into
/// `context_length` blocks; a trailing partial block counts if it has at
/// least two tokens.
pub fn perplexity(ckpt: &Checkpoint, corpus: &Corpus, vocab: &Vocab) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let stream = vocab.encode_corpus(corpus)?;
    let layout = ckpt.layout();
    let mut nll = 0.0;
    let mut count = 0;
    for block in stream.chunks(ckpt.config.context_length) {
        if block.len() < 2 {
            continue;
        }
        super::transformer::check_tokens(&ckpt.config, block)?;
        let (s, n) = row_nll(&ckpt.config, &layout, &ckpt.params, block);
        nll += s;
        count += n;
    }
    if count == 0 {
        return Err(invalid("corpus too short to score"));
    }
    Ok((nll / count as f64).exp())
}
