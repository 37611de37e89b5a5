use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::Encoder;
use super::layers::{mask_tensor, DecoderLayerIds, Dropout, LinearIds, NormIds};
use super::{check_tokens, LanguageTag, ModelConfig, BOS, EOS};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Graph, Real, Tensor};

#[derive(Clone, Debug)]
struct AtIds {
    encoder: Encoder,
    tok_emb: ParamId,
    pos_emb: ParamId,
    layers: Vec<DecoderLayerIds>,
    ln: NormIds,
    out: LinearIds,
}

/// Autoregressive baseline: causal decoder over previously emitted tokens.
#[derive(Clone, Debug)]
pub struct AtModel {
    config: ModelConfig,
    params: ParamStore,
    ids: AtIds,
}

impl AtModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let std = 1.0 / (d as Real).sqrt();
        let encoder = Encoder::register(&mut store, &config, &mut rng);
        let tok_emb = store.add_normal("ar.tok_emb", &[config.vocab_size, d], std, &mut rng);
        let pos_emb = store.add_normal("ar.pos_emb", &[config.max_positions, d], std, &mut rng);
        let layers = (0..config.n_dec_layers)
            .map(|l| DecoderLayerIds::register(&mut store, &format!("ar.{l}"), d, config.ffn_width, &mut rng))
            .collect();
        let ln = NormIds::register(&mut store, "ar.ln", d);
        let out = LinearIds::register(&mut store, "ar.out", d, config.vocab_size, &mut rng);
        Ok(AtModel {
            config,
            params: store,
            ids: AtIds {
                encoder,
                tok_emb,
                pos_emb,
                layers,
                ln,
                out,
            },
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let reference = AtModel::new(config.clone())?;
        if !reference.params.same_layout(&params) {
            return Err(Error::Format(
                "parameter layout does not match the configuration".into(),
            ));
        }
        Ok(AtModel {
            config,
            params,
            ids: reference.ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn encode<'p>(&'p self, g: &mut Graph<'p>, x: &[usize], tag: LanguageTag) -> Result<Tensor> {
        Ok(self
            .ids
            .encoder
            .encode_batch(g, &self.params, &self.config, &[(x, tag)], &mut Dropout::off())?
            .remove(0))
    }

    fn memory<'p>(&'p self, g: &mut Graph<'p>, enc: Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        self.ids
            .layers
            .iter()
            .map(|l| Ok(l.memory(g, &self.params, enc)?))
            .collect()
    }

    /// Log-probabilities (prefix length × V) of the token following each
    /// prefix position, under a causal mask.
    fn decode_prefix<'p>(
        &'p self,
        g: &mut Graph<'p>,
        memory: &[(Tensor, Tensor)],
        prefix: &[usize],
        drop: &mut Dropout<'_>,
    ) -> Result<Tensor> {
        if prefix.first() != Some(&BOS) {
            return Err(Error::Config("decoder prefix must start with BOS".into()));
        }
        if prefix.len() > self.config.max_positions {
            return Err(Error::TooLong {
                len: prefix.len(),
                max: self.config.max_positions,
            });
        }
        check_tokens(prefix, &self.config)?;
        let store = &self.params;
        let n = prefix.len();
        let tok = g.param(store, self.ids.tok_emb);
        let pos = g.param(store, self.ids.pos_emb);
        let e = g.gather_rows(tok, prefix)?;
        let positions: Vec<usize> = (0..n).collect();
        let p = g.gather_rows(pos, &positions)?;
        let mut h = g.add(e, p)?;
        h = drop.apply(g, h);
        let causal = if n > 1 {
            Some(mask_tensor(g, n, n, |i, j| j <= i)?)
        } else {
            None
        };
        for (layer, mem) in self.ids.layers.iter().zip(memory) {
            h = layer.forward(g, store, h, *mem, self.config.n_heads, causal, drop)?;
        }
        let h = self.ids.ln.forward(g, store, h)?;
        let logits = self.ids.out.forward(g, store, h)?;
        Ok(g.log_softmax(logits, 1)?)
    }

    /// Distribution over the next token given `prefix` (which starts with BOS).
    pub fn decode_ar_step<'p>(&'p self, g: &mut Graph<'p>, enc: Tensor, prefix: &[usize]) -> Result<Tensor> {
        let memory = self.memory(g, enc)?;
        let all = self.decode_prefix(g, &memory, prefix, &mut Dropout::off())?;
        Ok(g.slice(all, 0, prefix.len() - 1, 1)?)
    }

    /// Teacher-forced log-likelihood of `y` (which should end with EOS).
    pub fn teacher_forced_log_likelihood<'p>(&'p self, g: &mut Graph<'p>, enc: Tensor, y: &[usize]) -> Result<Tensor> {
        self.teacher_forced(g, enc, y, &mut Dropout::off())
    }

    pub(crate) fn teacher_forced_train<'p>(
        &'p self,
        g: &mut Graph<'p>,
        x: &[usize],
        tag: LanguageTag,
        y: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let mut drop = Dropout {
            rng: Some(rng),
            rate: self.config.dropout,
        };
        let enc = self
            .ids
            .encoder
            .encode_batch(g, &self.params, &self.config, &[(x, tag)], &mut drop)?
            .remove(0);
        self.teacher_forced(g, enc, y, &mut drop)
    }

    fn teacher_forced<'p>(
        &'p self,
        g: &mut Graph<'p>,
        enc: Tensor,
        y: &[usize],
        drop: &mut Dropout<'_>,
    ) -> Result<Tensor> {
        if y.is_empty() {
            return Err(Error::Empty("target sentence"));
        }
        check_tokens(y, &self.config)?;
        let mut prefix = Vec::with_capacity(y.len());
        prefix.push(BOS);
        prefix.extend_from_slice(&y[..y.len() - 1]);
        let memory = self.memory(g, enc)?;
        let logp = self.decode_prefix(g, &memory, &prefix, drop)?;
        let v = self.config.vocab_size;
        let idx: Vec<usize> = y.iter().enumerate().map(|(t, &w)| t * v + w).collect();
        let picked = g.select(logp, &idx)?;
        Ok(g.sum(picked))
    }

    /// Greedy left-to-right decoding. Without `stop_at_eos` exactly `max_len`
    /// tokens are produced, which is how latency is measured.
    pub fn greedy(&self, x: &[usize], tag: LanguageTag, max_len: usize, stop_at_eos: bool) -> Result<Vec<usize>> {
        let mut g = Graph::inference();
        let enc = self.encode(&mut g, x, tag)?;
        let memory = self.memory(&mut g, enc)?;
        let mut prefix = vec![BOS];
        let max_len = max_len.min(self.config.max_positions - 1);
        for _ in 0..max_len {
            let logp = self.decode_prefix(&mut g, &memory, &prefix, &mut Dropout::off())?;
            let v = self.config.vocab_size;
            let last = &g.value(logp)[(prefix.len() - 1) * v..prefix.len() * v];
            let next = argmax(last);
            prefix.push(next);
            if stop_at_eos && next == EOS {
                break;
            }
        }
        prefix.remove(0);
        Ok(prefix)
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(xs: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}
