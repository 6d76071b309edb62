use cifm_autograd::Graph;
use ndarray::Array2;
use rand::Rng;

use super::{bind, embedding_input, linear, pool, Dropout, EmbeddingInput, EncoderConfig, ForwardVars, Model, XProxy};
use crate::data::EncodedBatch;
use crate::params::{gaussian, glorot, ParamStore};

pub(super) fn init(cfg: &EncoderConfig, outputs: usize, rng: &mut impl Rng) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert("embedding.token", gaussian(rng, cfg.vocab_size, cfg.dim, 0.1));
    p.insert("layer.0.w", glorot(rng, cfg.dim, cfg.hidden));
    p.insert("layer.0.b", Array2::zeros((1, cfg.hidden)));
    p.insert("layer.1.w", glorot(rng, cfg.hidden, cfg.hidden));
    p.insert("layer.1.b", Array2::zeros((1, cfg.hidden)));
    p.insert("head.w", glorot(rng, cfg.hidden, outputs));
    p.insert("head.b", Array2::zeros((1, outputs)));
    p
}

/// embedding → pool → ReLU layer → tanh layer (`Z`) → linear head.
pub(super) fn forward<'a>(
    model: &'a Model,
    g: &mut Graph<'a>,
    batch: &EncodedBatch,
    input: EmbeddingInput<'_>,
    drop: &mut Dropout,
) -> ForwardVars {
    let emb = embedding_input(
        g,
        |g| {
            let table = bind(model, g, "embedding.token");
            g.rows(table, &batch.token_ids)
        },
        input,
    );
    let pooled_emb = pool(g, emb, batch, model.config.pooling());
    let h0 = linear(model, g, pooled_emb, "layer.0");
    let h0 = g.relu(h0);
    let h0 = drop.apply(g, h0);
    let h1 = linear(model, g, h0, "layer.1");
    let h1 = g.tanh(h1);
    let z = drop.apply(g, h1);
    let output = linear(model, g, z, "head");
    let proxy = match model.config.x_proxy {
        XProxy::EmbeddingMean => g.segment_mean(emb, &batch.mask),
        XProxy::HiddenMean => h0,
    };
    let x_proxy = g.detach(proxy);
    ForwardVars { embeddings: emb, tokens: emb, pooled: z, output, x_proxy }
}
