use rand::Rng;

use super::layers::{mask_tensor, Dropout, EncoderLayerIds, NormIds};
use super::{check_tokens, LanguageTag, ModelConfig, PAD};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Graph, Real, Tensor};

/// Token + position embeddings followed by self-attention layers. The target
/// language tag is prepended to the source tokens.
#[derive(Clone, Debug)]
pub(crate) struct Encoder {
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<EncoderLayerIds>,
    ln: NormIds,
}

impl Encoder {
    pub fn register<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let std = 1.0 / (d as Real).sqrt();
        let tok_emb = store.add_normal("enc.tok_emb", &[cfg.vocab_size, d], std, rng);
        let pos_emb = store.add_normal("enc.pos_emb", &[cfg.max_positions, d], std, rng);
        let layers = (0..cfg.n_enc_layers)
            .map(|l| EncoderLayerIds::register(store, &format!("enc.{l}"), d, cfg.ffn_width, rng))
            .collect();
        let ln = NormIds::register(store, "enc.ln", d);
        Encoder {
            tok_emb,
            pos_emb,
            layers,
            ln,
        }
    }

    /// Encode several sources at once. Shorter sources are padded and their
    /// padding keys masked out. Returns one `len×d` tensor per source; the
    /// tag position takes part in attention but is not returned.
    pub fn encode_batch<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParamStore,
        cfg: &ModelConfig,
        batch: &[(&[usize], LanguageTag)],
        drop: &mut Dropout<'_>,
    ) -> Result<Vec<Tensor>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        for (x, tag) in batch {
            if x.is_empty() {
                return Err(Error::Empty("source sentence"));
            }
            check_tokens(x, cfg)?;
            check_tokens(&[tag.token_id()], cfg)?;
            if x.len() + 1 > cfg.max_positions {
                return Err(Error::TooLong {
                    len: x.len() + 1,
                    max: cfg.max_positions,
                });
            }
        }
        let width = batch.iter().map(|(x, _)| x.len() + 1).max().unwrap_or(1);
        let mut ids = Vec::with_capacity(batch.len() * width);
        let mut positions = Vec::with_capacity(batch.len() * width);
        for (x, tag) in batch {
            ids.push(tag.token_id());
            ids.extend_from_slice(x);
            ids.resize(ids.len() + width - x.len() - 1, PAD);
            positions.extend(0..width);
        }
        let tok = g.param(store, self.tok_emb);
        let pos = g.param(store, self.pos_emb);
        let e = g.gather_rows(tok, &ids)?;
        let p = g.gather_rows(pos, &positions)?;
        let mut h = g.add(e, p)?;
        h = drop.apply(g, h);

        let masks = batch
            .iter()
            .map(|(x, _)| {
                let len = x.len() + 1;
                if len == width {
                    Ok(None)
                } else {
                    mask_tensor(g, width, width, |_, j| j < len).map(Some)
                }
            })
            .collect::<crate::tensor::Result<Vec<_>>>()?;
        for layer in &self.layers {
            h = layer.forward(g, store, h, batch.len(), cfg.n_heads, &masks, drop)?;
        }
        let h = self.ln.forward(g, store, h)?;
        batch
            .iter()
            .enumerate()
            .map(|(b, (x, _))| Ok(g.slice(h, 0, b * width + 1, x.len())?))
            .collect()
    }
}
