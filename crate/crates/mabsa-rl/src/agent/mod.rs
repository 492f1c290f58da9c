//! The multimodal aspect-prediction and sentiment-analysis policy network.
//!
//! The forward path is: subword text encoding into per-token hidden states,
//! patch-based visual encoding projected to the text width and resampled to
//! the text length, scaled-dot-product cross-attention fusion, and two
//! per-token softmax heads (aspect tags B/I/O and sentiment tags
//! POS/NEU/NEG/O). All math is f64 with hand-written backward passes; the
//! `toy` profile is small enough to verify against finite differences and to
//! overfit synthetic data on a CPU in seconds.

mod net;
mod vision;

pub use net::{ForwardCache, ForwardMode};
pub use vision::{image_to_patches, patch_dim};

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{xavier, Mat};
use crate::tokenizer::{Tokenizer, TokenizerConfig};

/// Which embedding supplies the attention values in the fusion layer.
///
/// `Text` is the default wiring of the fusion equation; `Vision` gives
/// standard cross-attention and is exposed for ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValuesFrom {
    Text,
    Vision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum Profile {
    /// Small fully-trainable encoders for desk-scale property tests.
    Toy,
    /// Full-width configuration (d=768). Reaching published-benchmark quality
    /// additionally requires importing pretrained encoder weights via a
    /// checkpoint; randomly initialized paper-profile runs are mechanical
    /// only.
    Paper,
}

/// Architecture hyperparameters shared by both encoder profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: Profile,
    /// Hidden dimension d of text, vision projection, fusion, and heads.
    pub d: usize,
    pub text_layers: usize,
    pub ff_dim: usize,
    pub tokenizer: TokenizerConfig,
    /// Images are resized to `image_size` x `image_size` before patching.
    pub image_size: u32,
    pub patch_size: u32,
    /// Width of the patch-embedding features (the visual encoder output).
    pub vision_dim: usize,
    /// Hidden width of the projection MLP from `vision_dim` to `d`.
    pub vision_hidden: usize,
    pub values_from: ValuesFrom,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig {
            profile: Profile::Toy,
            d: 32,
            text_layers: 1,
            ff_dim: 64,
            tokenizer: TokenizerConfig::default(),
            image_size: 32,
            patch_size: 8,
            vision_dim: 32,
            vision_hidden: 64,
            values_from: ValuesFrom::Text,
            dropout: 0.0,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            profile: Profile::Paper,
            d: 768,
            text_layers: 12,
            ff_dim: 3072,
            tokenizer: TokenizerConfig {
                vocab_size: 50_000,
                max_subtoken_len: 6,
                max_len: 512,
                lowercase: true,
            },
            image_size: 224,
            patch_size: 16,
            vision_dim: 768,
            vision_hidden: 3072,
            values_from: ValuesFrom::Text,
            dropout: 0.1,
        }
    }

    pub fn patches_per_image(&self) -> usize {
        let per_side = (self.image_size / self.patch_size) as usize;
        per_side * per_side
    }

    /// Identifier recorded in checkpoint manifests for the text encoder.
    pub fn text_encoder_id(&self) -> String {
        format!(
            "chunked-hash-transformer/L{}-d{}",
            self.text_layers, self.d
        )
    }

    /// Identifier recorded in checkpoint manifests for the vision encoder.
    pub fn vision_encoder_id(&self) -> String {
        format!(
            "patch-linear/{}px-p{}-v{}",
            self.image_size, self.patch_size, self.vision_dim
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.ff_dim == 0 || self.vision_dim == 0 || self.vision_hidden == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.text_layers == 0 {
            return Err(Error::Config("at least one text layer required".into()));
        }
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::Config(
                "image_size must be a positive multiple of patch_size".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-token categorical distributions emitted by the two prediction heads.
///
/// Both matrices have one row per subtoken of the encoded state; rows are
/// non-negative and sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TagDistributions {
    /// `n_t x 3` rows over (B, I, O).
    pub aspect: Mat,
    /// `n_t x 4` rows over (POS, NEU, NEG, O).
    pub sentiment: Mat,
}

impl TagDistributions {
    pub fn len(&self) -> usize {
        self.aspect.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.aspect.nrows() == 0
    }
}

/// One self-attention + feed-forward block of the text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextLayerParams {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
    pub ff_w1: Mat,
    pub ff_b1: Mat,
    pub ff_w2: Mat,
    pub ff_b2: Mat,
}

/// All trainable tensors of the policy network.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub layers: Vec<TextLayerParams>,
    pub vis_patch_w: Mat,
    pub vis_patch_b: Mat,
    pub vis_w1: Mat,
    pub vis_b1: Mat,
    pub vis_w2: Mat,
    pub vis_b2: Mat,
    pub fus_wq: Mat,
    pub fus_wk: Mat,
    pub fus_wv: Mat,
    pub head_a_w: Mat,
    pub head_a_b: Mat,
    pub head_s_w: Mat,
    pub head_s_b: Mat,
}

impl AgentParams {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> AgentParams {
        let d = cfg.d;
        let emb_scale = 0.05;
        let tok_emb = Mat::from_shape_fn((cfg.tokenizer.vocab_size, d), |_| {
            rng.random_range(-emb_scale..emb_scale)
        });
        let pos_emb = Mat::from_shape_fn((cfg.tokenizer.max_len, d), |_| {
            rng.random_range(-emb_scale..emb_scale)
        });
        let layers = (0..cfg.text_layers)
            .map(|_| TextLayerParams {
                wq: xavier(d, d, rng),
                wk: xavier(d, d, rng),
                wv: xavier(d, d, rng),
                wo: xavier(d, d, rng),
                ff_w1: xavier(d, cfg.ff_dim, rng),
                ff_b1: Mat::zeros((1, cfg.ff_dim)),
                ff_w2: xavier(cfg.ff_dim, d, rng),
                ff_b2: Mat::zeros((1, d)),
            })
            .collect();
        let pdim = patch_dim(cfg);
        AgentParams {
            tok_emb,
            pos_emb,
            layers,
            vis_patch_w: xavier(pdim, cfg.vision_dim, rng),
            vis_patch_b: Mat::zeros((1, cfg.vision_dim)),
            vis_w1: xavier(cfg.vision_dim, cfg.vision_hidden, rng),
            vis_b1: Mat::zeros((1, cfg.vision_hidden)),
            vis_w2: xavier(cfg.vision_hidden, d, rng),
            vis_b2: Mat::zeros((1, d)),
            fus_wq: xavier(d, d, rng),
            fus_wk: xavier(d, d, rng),
            fus_wv: xavier(d, d, rng),
            head_a_w: xavier(d, 3, rng),
            head_a_b: Mat::zeros((1, 3)),
            head_s_w: xavier(d, 4, rng),
            head_s_b: Mat::zeros((1, 4)),
        }
    }

    pub fn zeros_like(&self) -> AgentParams {
        let mut out = self.clone();
        out.for_each_mut(|_, m| m.fill(0.0));
        out
    }

    /// Stable (name, tensor) listing; the order defines optimizer-state and
    /// checkpoint layout.
    pub fn named(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = vec![
            ("text.tok_emb".into(), &self.tok_emb),
            ("text.pos_emb".into(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("text.layer{i}.wq"), &l.wq));
            out.push((format!("text.layer{i}.wk"), &l.wk));
            out.push((format!("text.layer{i}.wv"), &l.wv));
            out.push((format!("text.layer{i}.wo"), &l.wo));
            out.push((format!("text.layer{i}.ff_w1"), &l.ff_w1));
            out.push((format!("text.layer{i}.ff_b1"), &l.ff_b1));
            out.push((format!("text.layer{i}.ff_w2"), &l.ff_w2));
            out.push((format!("text.layer{i}.ff_b2"), &l.ff_b2));
        }
        out.extend([
            ("vision.patch_w".to_string(), &self.vis_patch_w),
            ("vision.patch_b".to_string(), &self.vis_patch_b),
            ("vision.mlp_w1".to_string(), &self.vis_w1),
            ("vision.mlp_b1".to_string(), &self.vis_b1),
            ("vision.mlp_w2".to_string(), &self.vis_w2),
            ("vision.mlp_b2".to_string(), &self.vis_b2),
            ("fusion.wq".to_string(), &self.fus_wq),
            ("fusion.wk".to_string(), &self.fus_wk),
            ("fusion.wv".to_string(), &self.fus_wv),
            ("head.aspect_w".to_string(), &self.head_a_w),
            ("head.aspect_b".to_string(), &self.head_a_b),
            ("head.sentiment_w".to_string(), &self.head_s_w),
            ("head.sentiment_b".to_string(), &self.head_s_b),
        ]);
        out
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut Mat)) {
        f("text.tok_emb", &mut self.tok_emb);
        f("text.pos_emb", &mut self.pos_emb);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let base = format!("text.layer{i}");
            f(&format!("{base}.wq"), &mut l.wq);
            f(&format!("{base}.wk"), &mut l.wk);
            f(&format!("{base}.wv"), &mut l.wv);
            f(&format!("{base}.wo"), &mut l.wo);
            f(&format!("{base}.ff_w1"), &mut l.ff_w1);
            f(&format!("{base}.ff_b1"), &mut l.ff_b1);
            f(&format!("{base}.ff_w2"), &mut l.ff_w2);
            f(&format!("{base}.ff_b2"), &mut l.ff_b2);
        }
        f("vision.patch_w", &mut self.vis_patch_w);
        f("vision.patch_b", &mut self.vis_patch_b);
        f("vision.mlp_w1", &mut self.vis_w1);
        f("vision.mlp_b1", &mut self.vis_b1);
        f("vision.mlp_w2", &mut self.vis_w2);
        f("vision.mlp_b2", &mut self.vis_b2);
        f("fusion.wq", &mut self.fus_wq);
        f("fusion.wk", &mut self.fus_wk);
        f("fusion.wv", &mut self.fus_wv);
        f("head.aspect_w", &mut self.head_a_w);
        f("head.aspect_b", &mut self.head_a_b);
        f("head.sentiment_w", &mut self.head_s_w);
        f("head.sentiment_b", &mut self.head_s_b);
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        out.push(&mut self.tok_emb);
        out.push(&mut self.pos_emb);
        for l in self.layers.iter_mut() {
            out.push(&mut l.wq);
            out.push(&mut l.wk);
            out.push(&mut l.wv);
            out.push(&mut l.wo);
            out.push(&mut l.ff_w1);
            out.push(&mut l.ff_b1);
            out.push(&mut l.ff_w2);
            out.push(&mut l.ff_b2);
        }
        out.push(&mut self.vis_patch_w);
        out.push(&mut self.vis_patch_b);
        out.push(&mut self.vis_w1);
        out.push(&mut self.vis_b1);
        out.push(&mut self.vis_w2);
        out.push(&mut self.vis_b2);
        out.push(&mut self.fus_wq);
        out.push(&mut self.fus_wk);
        out.push(&mut self.fus_wv);
        out.push(&mut self.head_a_w);
        out.push(&mut self.head_a_b);
        out.push(&mut self.head_s_w);
        out.push(&mut self.head_s_b);
        out
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &AgentParams, scale: f64) {
        let theirs = other.named();
        let mut i = 0;
        self.for_each_mut(|name, m| {
            debug_assert_eq!(name, theirs[i].0);
            m.zip_mut_with(theirs[i].1, |a, b| *a += b * scale);
            i += 1;
        });
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }
}

/// The policy: parameters plus the tokenizer and architecture config.
#[derive(Debug, Clone)]
pub struct Agent {
    pub cfg: ModelConfig,
    pub params: AgentParams,
    pub tokenizer: Tokenizer,
    /// Incremented on every optimizer step; used to enforce on-policy
    /// updates.
    pub version: u64,
}

impl Agent {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Agent> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = AgentParams::init(&cfg, &mut rng);
        let tokenizer = Tokenizer::new(cfg.tokenizer.clone());
        Ok(Agent {
            cfg,
            params,
            tokenizer,
            version: 0,
        })
    }

    pub fn from_parts(cfg: ModelConfig, params: AgentParams) -> Result<Agent> {
        cfg.validate()?;
        let tokenizer = Tokenizer::new(cfg.tokenizer.clone());
        Ok(Agent {
            cfg,
            params,
            tokenizer,
            version: 0,
        })
    }
}

/// Borrowed view of a state's text: the word sequence and how much of its
/// prefix is original (un-augmented) content.
#[derive(Debug, Clone, Copy)]
pub struct StateText<'a> {
    pub words: &'a [String],
    pub n_original: usize,
}

impl<'a> StateText<'a> {
    pub fn original(words: &'a [String]) -> Self {
        StateText {
            words,
            n_original: words.len(),
        }
    }
}

pub(crate) fn zeros(rows: usize, cols: usize) -> Mat {
    Array2::zeros((rows, cols))
}
