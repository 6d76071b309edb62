use cifm_autograd::{Graph, Var};
use ndarray::Array2;
use rand::Rng;

use super::{bind, embedding_input, linear, pool, Dropout, EmbeddingInput, EncoderConfig, ForwardVars, Model, XProxy};
use crate::data::EncodedBatch;
use crate::params::{gaussian, ParamStore};

const LN_EPS: f64 = 1e-12;
const INIT_STD: f64 = 0.02;

fn dense(p: &mut ParamStore, rng: &mut impl Rng, name: &str, rows: usize, cols: usize) {
    p.insert(format!("{name}.w"), gaussian(rng, rows, cols, INIT_STD));
    p.insert(format!("{name}.b"), Array2::zeros((1, cols)));
}

fn norm(p: &mut ParamStore, name: &str, d: usize) {
    p.insert(format!("{name}.gain"), Array2::ones((1, d)));
    p.insert(format!("{name}.bias"), Array2::zeros((1, d)));
}

pub(super) fn init(cfg: &EncoderConfig, outputs: usize, rng: &mut impl Rng) -> ParamStore {
    let d = cfg.dim;
    let mut p = ParamStore::new();
    p.insert("embedding.token", gaussian(rng, cfg.vocab_size, d, INIT_STD));
    p.insert("embedding.position", gaussian(rng, cfg.max_positions, d, INIT_STD));
    norm(&mut p, "embedding.norm", d);
    for k in 0..cfg.blocks {
        for proj in ["q", "k", "v", "o"] {
            dense(&mut p, rng, &format!("layer.{k}.attn.{proj}"), d, d);
        }
        norm(&mut p, &format!("layer.{k}.attn_norm"), d);
        dense(&mut p, rng, &format!("layer.{k}.ffn.in"), d, cfg.ffn);
        dense(&mut p, rng, &format!("layer.{k}.ffn.out"), cfg.ffn, d);
        norm(&mut p, &format!("layer.{k}.ffn_norm"), d);
    }
    dense(&mut p, rng, "head", d, outputs);
    p
}

fn layer_norm<'a>(model: &'a Model, g: &mut Graph<'a>, x: Var, name: &str) -> Var {
    let gain = bind(model, g, &format!("{name}.gain"));
    let bias = bind(model, g, &format!("{name}.bias"));
    g.layer_norm(x, gain, bias, LN_EPS)
}

pub(super) fn forward<'a>(
    model: &'a Model,
    g: &mut Graph<'a>,
    batch: &EncodedBatch,
    input: EmbeddingInput<'_>,
    drop: &mut Dropout,
) -> ForwardVars {
    let cfg = &model.config;
    let l = batch.seq_len;
    let emb = embedding_input(
        g,
        |g| {
            let table = bind(model, g, "embedding.token");
            let tok = g.rows(table, &batch.token_ids);
            let pos_table = bind(model, g, "embedding.position");
            let positions: Vec<usize> = (0..batch.n() * l).map(|i| i % l).collect();
            let pos = g.rows(pos_table, &positions);
            let sum = g.add(tok, pos);
            layer_norm(model, g, sum, "embedding.norm")
        },
        input,
    );
    let key_mask = batch.flat_mask();
    let mut x = drop.apply(g, emb);
    for k in 0..cfg.blocks {
        let q = linear(model, g, x, &format!("layer.{k}.attn.q"));
        let kk = linear(model, g, x, &format!("layer.{k}.attn.k"));
        let v = linear(model, g, x, &format!("layer.{k}.attn.v"));
        let a = g.attention(q, kk, v, &key_mask, cfg.heads, l);
        let a = linear(model, g, a, &format!("layer.{k}.attn.o"));
        let a = drop.apply(g, a);
        let r = g.add(x, a);
        x = layer_norm(model, g, r, &format!("layer.{k}.attn_norm"));
        let f = linear(model, g, x, &format!("layer.{k}.ffn.in"));
        let f = g.gelu(f);
        let f = linear(model, g, f, &format!("layer.{k}.ffn.out"));
        let f = drop.apply(g, f);
        let r = g.add(x, f);
        x = layer_norm(model, g, r, &format!("layer.{k}.ffn_norm"));
    }
    let z = pool(g, x, batch, cfg.pooling());
    let output = linear(model, g, z, "head");
    let proxy_src = match cfg.x_proxy {
        XProxy::EmbeddingMean => emb,
        XProxy::HiddenMean => x,
    };
    let proxy = g.segment_mean(proxy_src, &batch.mask);
    let x_proxy = g.detach(proxy);
    ForwardVars { embeddings: emb, tokens: x, pooled: z, output, x_proxy }
}
