//! Reference encoders: a bag-of-embeddings MLP and a tiny post-LN transformer.
//!
//! Both expose named parameter groups (`embedding`, `layer.k`, `head`) and
//! stateless dropout: masks are derived from a per-call seed, so the same
//! seed reproduces the same pass exactly.

mod mlp;
mod transformer;

use std::collections::BTreeMap;

use cifm_autograd::{Graph, Matrix, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedBatch, HashTokenizer};
use crate::error::{CifmError, Result};
use crate::estimators::{MineConfig, MineCritic, ViewPair};
use crate::params::{group_of, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Mlp,
    Transformer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    First,
}

/// What the MINE critic sees as `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default, JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum XProxy {
    /// Masked mean of the embedding-layer output.
    EmbeddingMean,
    /// Pooled hidden states below `Z` (first MLP layer, last transformer block).
    #[default]
    HiddenMean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub backbone: Backbone,
    #[serde(default = "d_vocab")]
    pub vocab_size: usize,
    /// Seed of the hashed vocabulary.
    #[serde(default)]
    pub hash_seed: u64,
    #[serde(default = "d_dim")]
    pub dim: usize,
    /// Width of the MLP hidden layers.
    #[serde(default = "d_dim")]
    pub hidden: usize,
    #[serde(default = "d_heads")]
    pub heads: usize,
    #[serde(default = "d_blocks")]
    pub blocks: usize,
    #[serde(default = "d_ffn")]
    pub ffn: usize,
    /// Size of the position table (transformer).
    #[serde(default = "d_positions")]
    pub max_positions: usize,
    #[serde(default = "d_dropout")]
    pub dropout: f64,
    /// Defaults to mean pooling for the MLP and first-token pooling for the transformer.
    #[serde(default)]
    pub pooling: Option<Pooling>,
    #[serde(default)]
    pub x_proxy: XProxy,
}

fn d_vocab() -> usize {
    30_000
}
fn d_dim() -> usize {
    64
}
fn d_heads() -> usize {
    2
}
fn d_blocks() -> usize {
    2
}
fn d_ffn() -> usize {
    128
}
fn d_positions() -> usize {
    129
}
fn d_dropout() -> f64 {
    0.2
}

impl EncoderConfig {
    pub fn new(backbone: Backbone) -> Self {
        EncoderConfig {
            backbone,
            vocab_size: d_vocab(),
            hash_seed: 0,
            dim: d_dim(),
            hidden: d_dim(),
            heads: d_heads(),
            blocks: d_blocks(),
            ffn: d_ffn(),
            max_positions: d_positions(),
            dropout: d_dropout(),
            pooling: None,
            x_proxy: XProxy::default(),
        }
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling.unwrap_or(match self.backbone {
            Backbone::Mlp => Pooling::Mean,
            Backbone::Transformer => Pooling::First,
        })
    }

    /// Whether sequences should start with the `[CLS]` id.
    pub fn wants_cls(&self) -> bool {
        self.pooling() == Pooling::First
    }

    pub fn tokenizer(&self, max_length: usize) -> HashTokenizer {
        HashTokenizer { vocab_size: self.vocab_size, hash_seed: self.hash_seed, max_length, cls: self.wants_cls() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 || self.dim == 0 || self.hidden == 0 {
            return Err(CifmError::Config("vocab_size ≥ 3 and positive dims required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(CifmError::Config(format!("dropout must be in [0,1), got {}", self.dropout)));
        }
        if self.backbone == Backbone::Transformer {
            if self.heads == 0 || self.dim % self.heads != 0 {
                return Err(CifmError::Config(format!("dim {} not divisible by {} heads", self.dim, self.heads)));
            }
            if self.blocks == 0 || self.ffn == 0 || self.max_positions == 0 {
                return Err(CifmError::Config("transformer needs blocks, ffn and max_positions > 0".into()));
            }
        }
        Ok(())
    }
}

/// How the embedding-layer output is formed for one pass.
#[derive(Clone, Copy, Debug, Default)]
pub enum EmbeddingInput<'o> {
    #[default]
    Lookup,
    /// Use this `(N·L)×d` matrix as the embedding-layer output.
    Replace(&'o Matrix),
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'o> {
    /// `None` disables dropout.
    pub dropout_seed: Option<u64>,
    pub embedding: EmbeddingInput<'o>,
}

impl ForwardOptions<'_> {
    pub fn train(seed: u64) -> Self {
        ForwardOptions { dropout_seed: Some(seed), embedding: EmbeddingInput::Lookup }
    }

    pub fn eval() -> Self {
        ForwardOptions::default()
    }
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Embedding-layer output, `(N·L)×d`.
    pub embeddings: Var,
    /// Last per-token hidden states, `(N·L)×d`.
    pub tokens: Var,
    /// Representation `Z`, `N×d`.
    pub pooled: Var,
    /// Logits or predictions.
    pub output: Var,
    /// Detached input proxy for the MINE critic.
    pub x_proxy: Var,
}

/// Plain values of one pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub pooled: Matrix,
    pub output: Matrix,
    pub hidden_prepool: Matrix,
}

pub(crate) struct Dropout {
    seed: Option<u64>,
    rate: f64,
    site: u64,
}

impl Dropout {
    pub(crate) fn new(seed: Option<u64>, rate: f64) -> Self {
        Dropout { seed, rate, site: 0 }
    }

    pub(crate) fn apply(&mut self, g: &mut Graph<'_>, x: Var) -> Var {
        let Some(seed) = self.seed else { return x };
        if self.rate == 0.0 {
            return x;
        }
        self.site += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ self.site.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let keep = 1.0 - self.rate;
        let mask = Array2::from_shape_fn(g.shape(x), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        let m = g.constant(mask);
        g.mul(x, m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: EncoderConfig,
    pub num_outputs: usize,
    pub params: ParamStore,
    /// Present when the objective uses the MINE estimator.
    pub critic: Option<MineCritic>,
}

impl Model {
    pub fn new(config: EncoderConfig, num_outputs: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_outputs == 0 {
            return Err(CifmError::Config("model needs at least one output".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = match config.backbone {
            Backbone::Mlp => mlp::init(&config, num_outputs, &mut rng),
            Backbone::Transformer => transformer::init(&config, num_outputs, &mut rng),
        };
        Ok(Model { config, num_outputs, params, critic: None })
    }

    /// Width of `Z`.
    pub fn z_dim(&self) -> usize {
        match self.config.backbone {
            Backbone::Mlp => self.config.hidden,
            Backbone::Transformer => self.config.dim,
        }
    }

    pub fn attach_critic(&mut self, mine: &MineConfig, seed: u64) -> Result<()> {
        let x_dim = match (self.config.backbone, self.config.x_proxy) {
            (Backbone::Mlp, XProxy::HiddenMean) => self.config.hidden,
            _ => self.config.dim,
        };
        self.critic = Some(MineCritic::new(x_dim, self.z_dim(), mine.hidden, mine.ema_rate, seed ^ 0xc417)?);
        Ok(())
    }

    /// Group name → tensor names.
    pub fn parameter_groups(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for n in self.params.names() {
            out.entry(group_of(n).to_string()).or_default().push(n.clone());
        }
        out
    }

    fn check(&self, batch: &EncodedBatch) -> Result<()> {
        batch.validate(self.config.vocab_size)?;
        if self.config.backbone == Backbone::Transformer && batch.seq_len > self.config.max_positions {
            return Err(CifmError::Data(format!(
                "sequence length {} exceeds the {} positions of the model",
                batch.seq_len, self.config.max_positions
            )));
        }
        Ok(())
    }

    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, batch: &EncodedBatch, opts: ForwardOptions<'_>) -> Result<ForwardVars> {
        self.check(batch)?;
        if let EmbeddingInput::Replace(m) = opts.embedding {
            if m.dim() != (batch.n() * batch.seq_len, self.config.dim) {
                return Err(CifmError::Data(format!("embedding override has shape {:?}", m.dim())));
            }
        }
        let mut drop = Dropout::new(opts.dropout_seed, self.config.dropout);
        Ok(match self.config.backbone {
            Backbone::Mlp => mlp::forward(self, g, batch, opts.embedding, &mut drop),
            Backbone::Transformer => transformer::forward(self, g, batch, opts.embedding, &mut drop),
        })
    }

    /// One pass; `dropout_active = false` ignores the seed.
    pub fn encode(&self, batch: &EncodedBatch, dropout_active: bool, seed: u64) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let opts = if dropout_active { ForwardOptions::train(seed) } else { ForwardOptions::eval() };
        let fv = self.forward(&mut g, batch, opts)?;
        Ok(EncoderOutput {
            pooled: g.value(fv.pooled).clone(),
            output: g.value(fv.output).clone(),
            hidden_prepool: g.value(fv.x_proxy).clone(),
        })
    }

    pub fn make_view_pair(&self, batch: &EncodedBatch, seed_a: u64, seed_b: u64) -> Result<ViewPair> {
        let a = self.encode(batch, true, seed_a)?;
        let b = self.encode(batch, true, seed_b)?;
        ViewPair::new(a.pooled, b.pooled)
    }

    /// Clean embedding-layer output, `(N·L)×d`.
    pub fn embed(&self, batch: &EncodedBatch) -> Result<Matrix> {
        let mut g = Graph::new();
        let fv = self.forward(&mut g, batch, ForwardOptions::eval())?;
        Ok(g.value(fv.embeddings).clone())
    }
}

pub(crate) fn bind<'a>(model: &'a Model, g: &mut Graph<'a>, name: &str) -> Var {
    let idx = model.params.index_of(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    model.params.bind(g, idx)
}

pub(crate) fn linear<'a>(model: &'a Model, g: &mut Graph<'a>, x: Var, prefix: &str) -> Var {
    let w = bind(model, g, &format!("{prefix}.w"));
    let b = bind(model, g, &format!("{prefix}.b"));
    let h = g.matmul(x, w);
    g.add_row(h, b)
}

pub(crate) fn embedding_input<'a>(g: &mut Graph<'a>, lookup: impl FnOnce(&mut Graph<'a>) -> Var, input: EmbeddingInput<'_>) -> Var {
    match input {
        EmbeddingInput::Lookup => lookup(g),
        EmbeddingInput::Replace(m) => g.constant(m.clone()),
    }
}

pub(crate) fn pool(g: &mut Graph<'_>, x: Var, batch: &EncodedBatch, pooling: Pooling) -> Var {
    match pooling {
        Pooling::Mean => g.segment_mean(x, &batch.mask),
        Pooling::First => {
            let idx: Vec<usize> = (0..batch.n()).map(|i| i * batch.seq_len).collect();
            g.rows(x, &idx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BatchTargets;

    fn small(backbone: Backbone) -> Model {
        let cfg = EncoderConfig { vocab_size: 50, dim: 8, hidden: 8, ffn: 16, max_positions: 12, ..EncoderConfig::new(backbone) };
        Model::new(cfg, 3, 1).unwrap()
    }

    fn batch(model: &Model) -> EncodedBatch {
        let tok = model.config.tokenizer(10);
        let seqs: Vec<Vec<usize>> = ["a b c", "d e", "f g h i j", "k"].iter().map(|t| tok.encode(t)).collect();
        let split = crate::data::EncodedSplit {
            sequences: seqs,
            targets: (0..4).map(|i| crate::data::Target::Class(i % 3)).collect(),
        };
        let b = split.batch(&[0, 1, 2, 3], 1);
        assert!(matches!(b.targets, BatchTargets::Classes(_)));
        b
    }

    #[test]
    fn group_names_are_stable() {
        let m = small(Backbone::Mlp);
        let groups: Vec<String> = m.parameter_groups().into_keys().collect();
        assert_eq!(groups, ["embedding", "head", "layer.0", "layer.1"]);
        let t = small(Backbone::Transformer);
        let groups: Vec<String> = t.parameter_groups().into_keys().collect();
        assert_eq!(groups, ["embedding", "head", "layer.0", "layer.1"]);
        assert!(m.params.resolve_groups(&["layer.9".into()]).is_err());
    }

    #[test]
    fn dropout_determinism() {
        for backbone in [Backbone::Mlp, Backbone::Transformer] {
            let m = small(backbone);
            let b = batch(&m);
            assert_eq!(m.encode(&b, true, 5).unwrap(), m.encode(&b, true, 5).unwrap());
            assert_eq!(m.encode(&b, false, 5).unwrap(), m.encode(&b, false, 6).unwrap());
            let a = m.encode(&b, true, 5).unwrap().pooled;
            let c = m.encode(&b, true, 6).unwrap().pooled;
            assert!((&a - &c).mapv(|v| v * v).sum() > 0.0);
            let pair = m.make_view_pair(&b, 3, 3).unwrap();
            assert_eq!(pair.anchor, pair.positive);
        }
    }

    #[test]
    fn head_changes_leave_z_alone() {
        for backbone in [Backbone::Mlp, Backbone::Transformer] {
            let mut m = small(backbone);
            let b = batch(&m);
            let before = m.encode(&b, false, 0).unwrap();
            let idx = m.params.resolve_groups(&["head".into()]).unwrap();
            for i in idx {
                m.params.get_mut(i).mapv_inplace(|v| v + 0.3);
            }
            let after = m.encode(&b, false, 0).unwrap();
            assert_eq!(before.pooled, after.pooled);
            assert_ne!(before.output, after.output);
        }
    }

    #[test]
    fn replacing_embeddings_with_clean_values_is_exact() {
        for backbone in [Backbone::Mlp, Backbone::Transformer] {
            let m = small(backbone);
            let b = batch(&m);
            let e = m.embed(&b).unwrap();
            let mut g = Graph::new();
            let opts = ForwardOptions { dropout_seed: None, embedding: EmbeddingInput::Replace(&e) };
            let fv = m.forward(&mut g, &b, opts).unwrap();
            assert_eq!(g.value(fv.output), &m.encode(&b, false, 0).unwrap().output);
        }
    }

    #[test]
    fn rejects_bad_batches() {
        let m = small(Backbone::Transformer);
        let mut b = batch(&m);
        b.token_ids[0] = 99;
        assert!(matches!(m.encode(&b, false, 0), Err(CifmError::Data(_))));
        let long = crate::data::EncodedSplit {
            sequences: vec![(2..20).collect()],
            targets: vec![crate::data::Target::Class(0)],
        };
        assert!(m.encode(&long.batch(&[0], 1), false, 0).is_err());
    }
}
