use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::log_softmax;
use super::transformer::{check_tokens, forward_logits};
use super::Checkpoint;
use crate::error::{invalid, Error, Result};
use crate::tokenizer::{TokenId, Vocab};

/// Log-probabilities over the whole vocabulary at the position right after
/// `prompt`.
pub fn completion_log_probs(ckpt: &Checkpoint, prompt: &[TokenId]) -> Result<Vec<f64>> {
    check_tokens(&ckpt.config, prompt)?;
    let v = ckpt.config.vocab_size;
    let logits = forward_logits(&ckpt.config, &ckpt.layout(), &ckpt.params, prompt);
    let mut row = logits[(prompt.len() - 1) * v..].to_vec();
    log_softmax(&mut row);
    Ok(row)
}

/// Teacher-forced log-probability (nats) of each target at the completion
/// position. All targets are read from the same position.
pub fn score_completion(ckpt: &Checkpoint, prompt: &[TokenId], targets: &[TokenId]) -> Result<Vec<f64>> {
    let row = completion_log_probs(ckpt, prompt)?;
    targets
        .iter()
        .map(|&t| {
            row.get(t as usize).copied().ok_or(Error::TokenOutOfRange {
                id: t,
                vocab_size: row.len(),
            })
        })
        .collect()
}

/// Scale of the Gaussian noise added to a nonce's anchor rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// Per-dimension std = 0.1 x RMS of the anchor row.
    #[default]
    AnchorRms,
    /// Per-dimension std = 0.1 x std of the whole matrix.
    MatrixStd,
    /// Per-dimension std = 0.1.
    Absolute,
}

fn rms(row: &[f64]) -> f64 {
    (row.iter().map(|x| x * x).sum::<f64>() / row.len() as f64).sqrt()
}

fn matrix_std(m: &[f64]) -> f64 {
    let mean = m.iter().sum::<f64>() / m.len() as f64;
    (m.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m.len() as f64).sqrt()
}

/// Re-initialises every nonce row of the token embedding and the output
/// head as a randomly drawn rare-noun anchor plus 10% Gaussian noise. The
/// anchor is shared by the two rows; their noise is independent.
pub fn init_nonce_embeddings(
    ckpt: &Checkpoint,
    vocab: &Vocab,
    rare_nouns: &[TokenId],
    seed: u64,
    scale: NoiseScale,
) -> Result<Checkpoint> {
    if rare_nouns.is_empty() {
        return Err(invalid("rare-noun anchor list is empty"));
    }
    if vocab.nonce_ids().is_empty() {
        return Err(invalid("vocabulary has no nonce tokens"));
    }
    let v = ckpt.config.vocab_size;
    let c = ckpt.config.model_dim;
    for &id in rare_nouns.iter().chain(vocab.nonce_ids()) {
        if id as usize >= v {
            return Err(Error::TokenOutOfRange { id, vocab_size: v });
        }
    }
    let layout = ckpt.layout();
    let mut out = ckpt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wte_std = matrix_std(&ckpt.params[layout.token_embedding()]);
    let head_std = matrix_std(&ckpt.params[layout.output_head()]);
    for &nonce in vocab.nonce_ids() {
        let anchor = rare_nouns[rng.random_range(0..rare_nouns.len())] as usize;
        for (range, mstd) in [(layout.token_embedding(), wte_std), (layout.output_head(), head_std)] {
            let matrix = &ckpt.params[range.clone()];
            let src = &matrix[anchor * c..(anchor + 1) * c];
            let sd = 0.1
                * match scale {
                    NoiseScale::AnchorRms => rms(src),
                    NoiseScale::MatrixStd => mstd,
                    NoiseScale::Absolute => 1.0,
                };
            let start = range.start + nonce as usize * c;
            if sd > 0.0 {
                let noise = Normal::new(0.0, sd).expect("finite std");
                for i in 0..c {
                    out.params[start + i] = (src[i] + noise.sample(&mut rng)) as f32 as f64;
                }
            } else {
                out.params[start..start + c].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}
