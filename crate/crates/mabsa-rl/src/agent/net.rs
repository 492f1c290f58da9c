//! Forward and backward passes of the policy network.
//!
//! Every forward stage returns a cache carrying the activations its backward
//! pass needs. `Agent::backward` consumes gradients w.r.t. the two head
//! logit matrices, which is the common interface for both the supervised
//! clone loss and the policy-gradient objective (both reduce to
//! `coeff * (p - onehot)` rows).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{
    adaptive_mean_pool, adaptive_mean_pool_grad, colsum, softmax_rows, softmax_rows_grad, Mat,
};
use crate::tokenizer::Tokenization;

use super::{patch_dim, zeros, Agent, AgentParams, StateText, TagDistributions, ValuesFrom};

/// Inference is deterministic; training threads an RNG through for dropout.
pub enum ForwardMode<'r> {
    Inference,
    Train(&'r mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
pub struct TextLayerCache {
    pub x_in: Mat,
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub p: Mat,
    pub c: Mat,
    pub x_mid: Mat,
    pub u: Mat,
}

#[derive(Debug, Clone)]
pub struct TextCache {
    pub tok: Tokenization,
    pub layers: Vec<TextLayerCache>,
    pub h_t: Mat,
}

#[derive(Debug, Clone)]
pub struct VisionCache {
    pub patches: Mat,
    pub pe: Mat,
    pub u: Mat,
    pub m: Mat,
    pub h_v: Mat,
}

#[derive(Debug, Clone)]
pub struct FuseCache {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    /// Row-stochastic attention weights.
    pub p: Mat,
    pub dropout_mask: Option<Mat>,
    pub h_f: Mat,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub text: TextCache,
    pub vision: VisionCache,
    pub fuse: FuseCache,
    pub dists: TagDistributions,
}

impl Agent {
    /// Embed and contextualize a tokenized state. One hidden vector per
    /// subtoken, special tokens included.
    pub fn encode_text(&self, tok: &Tokenization) -> Result<TextCache> {
        let n = tok.len();
        if n < 2 {
            return Err(Error::Shape("encode_text: empty input".into()));
        }
        let d = self.cfg.d;
        let p = &self.params;
        let mut x = zeros(n, d);
        for (i, &id) in tok.ids.iter().enumerate() {
            for c in 0..d {
                x[[i, c]] = p.tok_emb[[id, c]] + p.pos_emb[[i, c]];
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut layers = Vec::with_capacity(p.layers.len());
        for lp in &p.layers {
            let q = x.dot(&lp.wq);
            let k = x.dot(&lp.wk);
            let v = x.dot(&lp.wv);
            let s = q.dot(&k.t()) * scale;
            let attn = softmax_rows(&s);
            let c = attn.dot(&v);
            let o = c.dot(&lp.wo);
            let x_mid = &x + &o;
            let u = (x_mid.dot(&lp.ff_w1) + &lp.ff_b1).mapv(f64::tanh);
            let f = u.dot(&lp.ff_w2) + &lp.ff_b2;
            let x_out = &x_mid + &f;
            layers.push(TextLayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                q,
                k,
                v,
                p: attn,
                c,
                x_mid,
                u,
            });
        }
        Ok(TextCache {
            tok: tok.clone(),
            layers,
            h_t: x,
        })
    }

    /// Project patch features to the hidden width and resample the patch
    /// axis to exactly `n_t` rows by adaptive mean pooling.
    pub fn encode_image(&self, patches: &Mat, n_t: usize) -> Result<VisionCache> {
        if patches.ncols() != patch_dim(&self.cfg) {
            return Err(Error::Shape(format!(
                "encode_image: expected patch width {}, got {}",
                patch_dim(&self.cfg),
                patches.ncols()
            )));
        }
        if patches.nrows() == 0 || n_t == 0 {
            return Err(Error::Shape("encode_image: empty input".into()));
        }
        let p = &self.params;
        let pe = patches.dot(&p.vis_patch_w) + &p.vis_patch_b;
        let u = (pe.dot(&p.vis_w1) + &p.vis_b1).mapv(f64::tanh);
        let m = u.dot(&p.vis_w2) + &p.vis_b2;
        let h_v = adaptive_mean_pool(&m, n_t);
        Ok(VisionCache {
            patches: patches.clone(),
            pe,
            u,
            m,
            h_v,
        })
    }

    /// Scaled-dot-product fusion: queries from text, keys from vision, and
    /// values from text or vision per `values_from`. Softmax is row-wise
    /// over the key axis; dropout (train mode only) applies to the output.
    pub fn fuse(&self, h_t: &Mat, h_v: &Mat, mode: &mut ForwardMode) -> Result<FuseCache> {
        if h_t.dim() != h_v.dim() {
            return Err(Error::Shape(format!(
                "fuse: text {:?} and vision {:?} shapes differ",
                h_t.dim(),
                h_v.dim()
            )));
        }
        let p = &self.params;
        let d = self.cfg.d;
        let q = h_t.dot(&p.fus_wq);
        let k = h_v.dot(&p.fus_wk);
        let values_src = match self.cfg.values_from {
            ValuesFrom::Text => h_t,
            ValuesFrom::Vision => h_v,
        };
        let v = values_src.dot(&p.fus_wv);
        let s = q.dot(&k.t()) * (1.0 / (d as f64).sqrt());
        let attn = softmax_rows(&s);
        let h_f0 = attn.dot(&v);
        let (h_f, dropout_mask) = match mode {
            ForwardMode::Train(rng) if self.cfg.dropout > 0.0 => {
                let keep = 1.0 - self.cfg.dropout;
                let mask = Mat::from_shape_fn(h_f0.raw_dim(), |_| {
                    if rng.random::<f64>() < self.cfg.dropout {
                        0.0
                    } else {
                        1.0 / keep
                    }
                });
                (&h_f0 * &mask, Some(mask))
            }
            _ => (h_f0, None),
        };
        Ok(FuseCache {
            q,
            k,
            v,
            p: attn,
            dropout_mask,
            h_f,
        })
    }

    /// Affine map plus softmax per head.
    pub fn predict(&self, h_f: &Mat) -> TagDistributions {
        let p = &self.params;
        let la = h_f.dot(&p.head_a_w) + &p.head_a_b;
        let ls = h_f.dot(&p.head_s_w) + &p.head_s_b;
        TagDistributions {
            aspect: softmax_rows(&la),
            sentiment: softmax_rows(&ls),
        }
    }

    /// Full pipeline over a state text and its image patches.
    pub fn forward(
        &self,
        text: StateText<'_>,
        patches: &Mat,
        mode: &mut ForwardMode,
    ) -> Result<(TagDistributions, ForwardCache)> {
        let tok = self.tokenizer.tokenize_state(text.words, text.n_original)?;
        let text_cache = self.encode_text(&tok)?;
        let n_t = text_cache.h_t.nrows();
        let vision = self.encode_image(patches, n_t)?;
        let fuse = self.fuse(&text_cache.h_t, &vision.h_v, mode)?;
        let dists = self.predict(&fuse.h_f);
        let cache = ForwardCache {
            text: text_cache,
            vision,
            fuse,
            dists: dists.clone(),
        };
        Ok((dists, cache))
    }

    /// Inference-mode forward returning only the distributions.
    pub fn forward_dists(&self, text: StateText<'_>, patches: &Mat) -> Result<TagDistributions> {
        Ok(self.forward(text, patches, &mut ForwardMode::Inference)?.0)
    }

    /// Backpropagate `dL/d logits` of both heads through the whole network.
    /// Returns gradients in the same layout as the parameters.
    pub fn backward(&self, cache: &ForwardCache, d_la: &Mat, d_ls: &Mat) -> AgentParams {
        let p = &self.params;
        let d = self.cfg.d;
        let scale = 1.0 / (d as f64).sqrt();
        let mut g = p.zeros_like();

        // Heads.
        let h_f = &cache.fuse.h_f;
        g.head_a_w = h_f.t().dot(d_la);
        g.head_a_b = colsum(d_la);
        g.head_s_w = h_f.t().dot(d_ls);
        g.head_s_b = colsum(d_ls);
        let mut d_hf = d_la.dot(&p.head_a_w.t()) + d_ls.dot(&p.head_s_w.t());
        if let Some(mask) = &cache.fuse.dropout_mask {
            d_hf = &d_hf * mask;
        }

        // Fusion.
        let fc = &cache.fuse;
        let d_attn = d_hf.dot(&fc.v.t());
        let d_v = fc.p.t().dot(&d_hf);
        let d_s = softmax_rows_grad(&fc.p, &d_attn);
        let d_q = d_s.dot(&fc.k) * scale;
        let d_k = d_s.t().dot(&fc.q) * scale;
        let h_t = &cache.text.h_t;
        let h_v = &cache.vision.h_v;
        g.fus_wq = h_t.t().dot(&d_q);
        g.fus_wk = h_v.t().dot(&d_k);
        let mut d_ht = d_q.dot(&p.fus_wq.t());
        let mut d_hv = d_k.dot(&p.fus_wk.t());
        match self.cfg.values_from {
            ValuesFrom::Text => {
                g.fus_wv = h_t.t().dot(&d_v);
                d_ht = d_ht + d_v.dot(&p.fus_wv.t());
            }
            ValuesFrom::Vision => {
                g.fus_wv = h_v.t().dot(&d_v);
                d_hv = d_hv + d_v.dot(&p.fus_wv.t());
            }
        }

        // Vision pathway.
        let vc = &cache.vision;
        let d_m = adaptive_mean_pool_grad(vc.m.nrows(), &d_hv);
        g.vis_w2 = vc.u.t().dot(&d_m);
        g.vis_b2 = colsum(&d_m);
        let d_u = d_m.dot(&p.vis_w2.t());
        let d_z = &d_u * &vc.u.mapv(|x| 1.0 - x * x);
        g.vis_w1 = vc.pe.t().dot(&d_z);
        g.vis_b1 = colsum(&d_z);
        let d_pe = d_z.dot(&p.vis_w1.t());
        g.vis_patch_w = vc.patches.t().dot(&d_pe);
        g.vis_patch_b = colsum(&d_pe);

        // Text pathway, layers in reverse.
        let mut d_x = d_ht;
        for (li, lc) in cache.text.layers.iter().enumerate().rev() {
            let lp = &p.layers[li];
            let d_u2 = d_x.dot(&lp.ff_w2.t());
            let d_z2 = &d_u2 * &lc.u.mapv(|x| 1.0 - x * x);
            let d_xmid = &d_x + &d_z2.dot(&lp.ff_w1.t());
            let d_c = d_xmid.dot(&lp.wo.t());
            let d_attn2 = d_c.dot(&lc.v.t());
            let d_v2 = lc.p.t().dot(&d_c);
            let d_s2 = softmax_rows_grad(&lc.p, &d_attn2);
            let d_q2 = d_s2.dot(&lc.k) * scale;
            let d_k2 = d_s2.t().dot(&lc.q) * scale;
            {
                let gl = &mut g.layers[li];
                gl.ff_w2 = lc.u.t().dot(&d_x);
                gl.ff_b2 = colsum(&d_x);
                gl.ff_w1 = lc.x_mid.t().dot(&d_z2);
                gl.ff_b1 = colsum(&d_z2);
                gl.wo = lc.c.t().dot(&d_xmid);
                gl.wq = lc.x_in.t().dot(&d_q2);
                gl.wk = lc.x_in.t().dot(&d_k2);
                gl.wv = lc.x_in.t().dot(&d_v2);
            }
            let mut d_xin = d_xmid;
            d_xin = d_xin + d_q2.dot(&lp.wq.t());
            d_xin = d_xin + d_k2.dot(&lp.wk.t());
            d_xin = d_xin + d_v2.dot(&lp.wv.t());
            d_x = d_xin;
        }

        // Embedding scatter.
        for (i, &id) in cache.text.tok.ids.iter().enumerate() {
            for c in 0..d {
                g.tok_emb[[id, c]] += d_x[[i, c]];
                g.pos_emb[[i, c]] += d_x[[i, c]];
            }
        }
        g
    }
}
