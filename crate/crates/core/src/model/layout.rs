use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub offset: usize,
    /// Subject to weight decay.
    #[serde(skip)]
    pub decay: bool,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BlockRanges {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub qkv_w: Range<usize>,
    pub qkv_b: Range<usize>,
    pub proj_w: Range<usize>,
    pub proj_b: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub fc_w: Range<usize>,
    pub fc_b: Range<usize>,
    pub fcproj_w: Range<usize>,
    pub fcproj_b: Range<usize>,
}

/// Placement of every named tensor inside one flat parameter vector.
/// Matrices are row-major `[out, in]`.
#[derive(Debug, Clone)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    total: usize,
    pub(crate) wte: Range<usize>,
    pub(crate) wpe: Range<usize>,
    pub(crate) blocks: Vec<BlockRanges>,
    pub(crate) lnf_g: Range<usize>,
    pub(crate) lnf_b: Range<usize>,
    pub(crate) head: Range<usize>,
}

struct Builder {
    specs: Vec<TensorSpec>,
    offset: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], decay: bool) -> Range<usize> {
        let spec = TensorSpec {
            name,
            shape: shape.to_vec(),
            offset: self.offset,
            decay,
        };
        let r = spec.range();
        self.offset = r.end;
        self.specs.push(spec);
        r
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (v, c, h, t) = (cfg.vocab_size, cfg.model_dim, cfg.hidden_dim(), cfg.context_length);
        let mut b = Builder {
            specs: Vec::new(),
            offset: 0,
        };
        let wte = b.push("wte".into(), &[v, c], true);
        let wpe = b.push("wpe".into(), &[t, c], true);
        let blocks = (0..cfg.num_layers)
            .map(|l| BlockRanges {
                ln1_g: b.push(format!("h{l}.ln1.g"), &[c], false),
                ln1_b: b.push(format!("h{l}.ln1.b"), &[c], false),
                qkv_w: b.push(format!("h{l}.attn.qkv.w"), &[3 * c, c], true),
                qkv_b: b.push(format!("h{l}.attn.qkv.b"), &[3 * c], false),
                proj_w: b.push(format!("h{l}.attn.proj.w"), &[c, c], true),
                proj_b: b.push(format!("h{l}.attn.proj.b"), &[c], false),
                ln2_g: b.push(format!("h{l}.ln2.g"), &[c], false),
                ln2_b: b.push(format!("h{l}.ln2.b"), &[c], false),
                fc_w: b.push(format!("h{l}.mlp.fc.w"), &[h, c], true),
                fc_b: b.push(format!("h{l}.mlp.fc.b"), &[h], false),
                fcproj_w: b.push(format!("h{l}.mlp.proj.w"), &[c, h], true),
                fcproj_b: b.push(format!("h{l}.mlp.proj.b"), &[c], false),
            })
            .collect();
        let lnf_g = b.push("lnf.g".into(), &[c], false);
        let lnf_b = b.push("lnf.b".into(), &[c], false);
        let head = b.push("head".into(), &[v, c], true);
        Layout {
            total: b.offset,
            specs: b.specs,
            wte,
            wpe,
            blocks,
            lnf_g,
            lnf_b,
            head,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn token_embedding(&self) -> Range<usize> {
        self.wte.clone()
    }

    pub fn output_head(&self) -> Range<usize> {
        self.head.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::param_count;

    #[test]
    fn layout_is_contiguous_and_matches_param_count() {
        let cfg = ModelConfig::new(3, 24, 3, 57, 11);
        let l = Layout::new(&cfg);
        assert_eq!(l.total(), param_count(&cfg));
        let mut end = 0;
        for s in l.specs() {
            assert_eq!(s.offset, end);
            end += s.numel();
        }
        assert_eq!(end, l.total());
        assert_eq!(l.get("head").unwrap().shape, vec![57, 24]);
    }
}
