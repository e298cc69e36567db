//! The masked encoder-decoder model.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::{
    masked_mse, patchify, DecoderConfig, EncoderConfig, EncoderStack, MaskPlan, Pooling,
    TokenSequence,
};
use crate::error::{Error, Result};
use crate::nn::{sincos_2d, trunc_normal, BlockCache, Linear, Params, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct MaeModel<F> {
    pub enc_cfg: EncoderConfig,
    pub dec_cfg: DecoderConfig,
    pub patch_proj: Linear<F>,
    /// Learned class token, used only under [`Pooling::Cls`].
    pub cls_token: Array1<F>,
    pub encoder: EncoderStack<F>,
    pub dec_embed: Linear<F>,
    pub mask_token: Array1<F>,
    pub decoder: EncoderStack<F>,
    pub pred: Linear<F>,
    /// Fixed positional tables, recomputed from the config on load.
    enc_pos: Array2<F>,
    dec_pos: Array2<F>,
}

/// Caches from a masked pretraining forward pass.
pub struct PretrainCache<F> {
    grids: Vec<super::PatchGrid<F>>,
    plans: Vec<MaskPlan>,
    visible_patches: Array2<F>,
    enc_caches: Vec<BlockCache<F>>,
    enc_out: Array2<F>,
    dec_caches: Vec<BlockCache<F>>,
    dec_out: Array2<F>,
    preds: Array2<F>,
    batch: usize,
    visible_per_sample: usize,
}

impl<F> PretrainCache<F> {
    /// Tokens per sample that actually entered the encoder.
    pub fn encoded_tokens_per_sample(&self) -> usize {
        self.visible_per_sample
    }
}

/// Caches from a full-sequence (unmasked) encoding pass.
pub struct PooledCache<F> {
    patches: Array2<F>,
    enc_caches: Vec<BlockCache<F>>,
    batch: usize,
    seq: usize,
    pooling: Pooling,
}

impl<F> PooledCache<F> {
    pub fn encoded_tokens_per_sample(&self) -> usize {
        self.seq
    }
}

impl<F: Scalar> MaeModel<F> {
    pub fn new(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, rng: &mut impl Rng) -> Result<Self> {
        enc_cfg.validate()?;
        dec_cfg.validate()?;
        let side = enc_cfg.grid_side();

        let e = enc_cfg.embed_dim;
        let d = dec_cfg.embed_dim;
        Ok(Self {
            patch_proj: Linear::new(enc_cfg.patch_dim(), e, rng),
            cls_token: Array1::from_shape_simple_fn(e, || trunc_normal(rng, 0.02)),
            encoder: EncoderStack::new(e, enc_cfg.n_layers, enc_cfg.n_heads, enc_cfg.mlp_ratio, rng),
            dec_embed: Linear::new(e, d, rng),
            mask_token: Array1::from_shape_simple_fn(d, || trunc_normal(rng, 0.02)),
            decoder: EncoderStack::new(d, dec_cfg.n_layers, dec_cfg.n_heads, enc_cfg.mlp_ratio, rng),
            pred: Linear::new(d, enc_cfg.patch_dim(), rng),
            enc_pos: sincos_2d(side, side, e),
            dec_pos: sincos_2d(side, side, d),
            enc_cfg,
            dec_cfg,
        })
    }

    /// All-zero weights with the right shapes; used when loading
    /// checkpoints.
    pub fn zeros(enc_cfg: EncoderConfig, dec_cfg: DecoderConfig) -> Result<Self> {
        enc_cfg.validate()?;
        dec_cfg.validate()?;
        let side = enc_cfg.grid_side();
        let e = enc_cfg.embed_dim;
        let d = dec_cfg.embed_dim;
        Ok(Self {
            patch_proj: Linear::zeros(enc_cfg.patch_dim(), e),
            cls_token: Array1::zeros(e),
            encoder: EncoderStack::zeros(e, enc_cfg.n_layers, enc_cfg.n_heads, enc_cfg.mlp_ratio),
            dec_embed: Linear::zeros(e, d),
            mask_token: Array1::zeros(d),
            decoder: EncoderStack::zeros(d, dec_cfg.n_layers, dec_cfg.n_heads, enc_cfg.mlp_ratio),
            pred: Linear::zeros(d, enc_cfg.patch_dim()),
            enc_pos: sincos_2d(side, side, e),
            dec_pos: sincos_2d(side, side, d),
            enc_cfg,
            dec_cfg,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.enc_cfg.n_patches()
    }

    /// Project visible patches and attach their positional encodings.
    pub fn embed_visible(&self, grid: &super::PatchGrid<F>, plan: &MaskPlan) -> Result<TokenSequence<F>> {
        if plan.n_patches() != grid.n_patches() {
            return Err(Error::Shape("mask plan does not match patch grid".into()));
        }
        let mut vis = Array2::zeros((plan.visible_idx.len(), grid.patches.ncols()));
        for (r, &i) in plan.visible_idx.iter().enumerate() {
            vis.row_mut(r).assign(&grid.patches.row(i));
        }
        let mut tokens = self.patch_proj.forward(&vis);
        for (r, &i) in plan.visible_idx.iter().enumerate() {
            let mut row = tokens.row_mut(r);
            row += &self.enc_pos.row(i);
        }
        Ok(TokenSequence {
            tokens,
            positions: plan.visible_idx.clone(),
        })
    }

    /// Decode masked-patch predictions from the encoded visible tokens.
    /// Output rows align with `plan.masked_idx` order.
    pub fn decode(&self, latent: &TokenSequence<F>, plan: &MaskPlan) -> Result<Array2<F>> {
        if latent.positions != plan.visible_idx {
            return Err(Error::Shape(
                "latent positions do not match the plan's visible indices".into(),
            ));
        }
        let n = plan.n_patches();
        if n != self.n_patches() {
            return Err(Error::Shape(format!(
                "plan covers {n} patches, model expects {}",
                self.n_patches()
            )));
        }
        let emb = self.dec_embed.forward(&latent.tokens);
        let mut full = Array2::zeros((n, self.dec_cfg.embed_dim));
        for &i in &plan.masked_idx {
            full.row_mut(i).assign(&self.mask_token);
        }
        for (r, &i) in plan.visible_idx.iter().enumerate() {
            full.row_mut(i).assign(&emb.row(r));
        }
        full += &self.dec_pos;
        let out = self.decoder.forward(&full, 1, n);
        let preds = self.pred.forward(&out);
        let mut masked = Array2::zeros((plan.masked_idx.len(), preds.ncols()));
        for (r, &i) in plan.masked_idx.iter().enumerate() {
            masked.row_mut(r).assign(&preds.row(i));
        }
        Ok(masked)
    }

    /// Masked-reconstruction loss over a batch. All plans must mask the
    /// same number of patches (true for a fixed ratio).
    pub fn pretrain_forward(
        &self,
        images: &[Array2<F>],
        plans: &[MaskPlan],
    ) -> Result<(F, PretrainCache<F>)> {
        if images.is_empty() || images.len() != plans.len() {
            return Err(Error::Shape("empty batch or images/plans mismatch".into()));
        }
        let batch = images.len();
        let n = self.n_patches();
        let p = self.enc_cfg.patch_size;
        let mv = plans[0].visible_idx.len();
        if mv == 0 {
            return Err(Error::Data("no visible patches to encode".into()));
        }

        let mut grids = Vec::with_capacity(batch);
        let mut visible_patches = Array2::zeros((batch * mv, self.enc_cfg.patch_dim()));
        for (s, (img, plan)) in images.iter().zip(plans.iter()).enumerate() {
            if plan.visible_idx.len() != mv || plan.n_patches() != n {
                return Err(Error::Shape("mask plans disagree across the batch".into()));
            }
            let grid = patchify(img, p)?;
            for (r, &i) in plan.visible_idx.iter().enumerate() {
                visible_patches.row_mut(s * mv + r).assign(&grid.patches.row(i));
            }
            grids.push(grid);
        }

        let mut tokens = self.patch_proj.forward(&visible_patches);
        for (s, plan) in plans.iter().enumerate() {
            for (r, &i) in plan.visible_idx.iter().enumerate() {
                let mut row = tokens.row_mut(s * mv + r);
                row += &self.enc_pos.row(i);
            }
        }

        // The encoder sees exactly the visible tokens, nothing else.
        assert_eq!(tokens.nrows(), batch * mv);
        let (enc_out, enc_caches) = self.encoder.forward_train(&tokens, batch, mv);

        let emb = self.dec_embed.forward(&enc_out);
        let mut full = Array2::zeros((batch * n, self.dec_cfg.embed_dim));
        for (s, plan) in plans.iter().enumerate() {
            for &i in &plan.masked_idx {
                full.row_mut(s * n + i).assign(&self.mask_token);
            }
            for (r, &i) in plan.visible_idx.iter().enumerate() {
                full.row_mut(s * n + i).assign(&emb.row(s * mv + r));
            }
            for i in 0..n {
                let mut row = full.row_mut(s * n + i);
                row += &self.dec_pos.row(i);
            }
        }
        let (dec_out, dec_caches) = self.decoder.forward_train(&full, batch, n);
        let preds = self.pred.forward(&dec_out);

        let mut loss = F::zero();
        for (s, plan) in plans.iter().enumerate() {
            let mut masked = Array2::zeros((plan.masked_idx.len(), preds.ncols()));
            for (r, &i) in plan.masked_idx.iter().enumerate() {
                masked.row_mut(r).assign(&preds.row(s * n + i));
            }
            loss = loss + masked_mse(&masked, &grids[s], plan)?;
        }
        loss = loss / F::from_f(batch as f64);

        Ok((
            loss,
            PretrainCache {
                grids,
                plans: plans.to_vec(),
                visible_patches,
                enc_caches,
                enc_out,
                dec_caches,
                dec_out,
                preds,
                batch,
                visible_per_sample: mv,
            },
        ))
    }

    /// Gradients of the batch loss with respect to every parameter.
    pub fn pretrain_backward(&self, cache: &PretrainCache<F>) -> MaeModel<F> {
        let batch = cache.batch;
        let n = self.n_patches();
        let mv = cache.visible_per_sample;
        let d_patch = self.enc_cfg.patch_dim();

        // d(loss)/d(preds): nonzero only on masked rows.
        let mut dpreds = Array2::zeros(cache.preds.dim());
        for (s, plan) in cache.plans.iter().enumerate() {
            let denom = F::from_f((batch * plan.masked_idx.len() * d_patch) as f64);
            let two = F::from_f(2.0);
            for &i in &plan.masked_idx {
                for c in 0..d_patch {
                    let diff = cache.preds[[s * n + i, c]] - cache.grids[s].patches[[i, c]];
                    dpreds[[s * n + i, c]] = two * diff / denom;
                }
            }
        }

        let (ddec_out, dpred_lin) = self.pred.backward(&cache.dec_out, &dpreds);
        let (dfull, dec_grads) = self.decoder.backward(&cache.dec_caches, &ddec_out);

        let mut dmask_token = Array1::zeros(self.dec_cfg.embed_dim);
        let mut demb = Array2::zeros((batch * mv, self.dec_cfg.embed_dim));
        for (s, plan) in cache.plans.iter().enumerate() {
            for &i in &plan.masked_idx {
                dmask_token += &dfull.row(s * n + i);
            }
            for (r, &i) in plan.visible_idx.iter().enumerate() {
                demb.row_mut(s * mv + r).assign(&dfull.row(s * n + i));
            }
        }

        let (denc_out, ddec_embed) = self.dec_embed.backward(&cache.enc_out, &demb);
        let (dtokens, enc_grads) = self.encoder.backward(&cache.enc_caches, &denc_out);
        let (_, dpatch_proj) = self.patch_proj.backward(&cache.visible_patches, &dtokens);

        MaeModel {
            enc_cfg: self.enc_cfg.clone(),
            dec_cfg: self.dec_cfg.clone(),
            patch_proj: dpatch_proj,
            cls_token: Array1::zeros(self.cls_token.len()),
            encoder: enc_grads,
            dec_embed: ddec_embed,
            mask_token: dmask_token,
            decoder: dec_grads,
            pred: dpred_lin,
            enc_pos: Array2::zeros((0, 0)),
            dec_pos: Array2::zeros((0, 0)),
        }
    }

    fn seq_len(&self) -> usize {
        match self.enc_cfg.pooling {
            Pooling::Mean => self.n_patches(),
            Pooling::Cls => self.n_patches() + 1,
        }
    }

    fn full_tokens_batch(&self, images: &[Array2<F>]) -> Result<(Array2<F>, Array2<F>)> {
        let batch = images.len();
        let n = self.n_patches();
        let seq = self.seq_len();
        let with_cls = matches!(self.enc_cfg.pooling, Pooling::Cls);
        let mut patches = Array2::zeros((batch * n, self.enc_cfg.patch_dim()));
        for (s, img) in images.iter().enumerate() {
            let grid = patchify(img, self.enc_cfg.patch_size)?;
            patches
                .slice_mut(ndarray::s![s * n..(s + 1) * n, ..])
                .assign(&grid.patches);
        }
        let projected = self.patch_proj.forward(&patches);
        let mut tokens = Array2::zeros((batch * seq, self.enc_cfg.embed_dim));
        for s in 0..batch {
            let base = s * seq;
            let mut row0 = base;
            if with_cls {
                tokens.row_mut(base).assign(&self.cls_token);
                row0 += 1;
            }
            for i in 0..n {
                let mut row = tokens.row_mut(row0 + i);
                row.assign(&projected.row(s * n + i));
                row += &self.enc_pos.row(i);
            }
        }
        Ok((patches, tokens))
    }

    /// Encode full (unmasked) images and pool a descriptor per image.
    pub fn describe_batch(&self, images: &[Array2<F>]) -> Result<Array2<F>> {
        let (_, tokens) = self.full_tokens_batch(images)?;
        let seq = self.seq_len();
        let out = self.encoder.forward(&tokens, images.len(), seq);
        Ok(self.pool(&out, images.len(), seq))
    }

    /// One image's pooled descriptor.
    pub fn describe(&self, image: &Array2<F>) -> Result<Array1<F>> {
        let pooled = self.describe_batch(std::slice::from_ref(image))?;
        Ok(pooled.row(0).to_owned())
    }

    /// Training version of [`describe_batch`], with caches.
    pub fn describe_batch_train(&self, images: &[Array2<F>]) -> Result<(Array2<F>, PooledCache<F>)> {
        let (patches, tokens) = self.full_tokens_batch(images)?;
        let seq = self.seq_len();
        let (out, enc_caches) = self.encoder.forward_train(&tokens, images.len(), seq);
        let pooled = self.pool(&out, images.len(), seq);
        Ok((
            pooled,
            PooledCache {
                patches,
                enc_caches,
                batch: images.len(),
                seq,
                pooling: self.enc_cfg.pooling,
            },
        ))
    }

    fn pool(&self, out: &Array2<F>, batch: usize, seq: usize) -> Array2<F> {
        let e = self.enc_cfg.embed_dim;
        let mut pooled = Array2::zeros((batch, e));
        match self.enc_cfg.pooling {
            Pooling::Mean => {
                let inv = F::one() / F::from_f(seq as f64);
                for s in 0..batch {
                    let chunk = out.slice(ndarray::s![s * seq..(s + 1) * seq, ..]);
                    let mean = chunk.sum_axis(Axis(0)).mapv(|v| v * inv);
                    pooled.row_mut(s).assign(&mean);
                }
            }
            Pooling::Cls => {
                for s in 0..batch {
                    pooled.row_mut(s).assign(&out.row(s * seq));
                }
            }
        }
        pooled
    }

    /// Backpropagate descriptor gradients into model gradients.
    pub fn describe_backward(&self, cache: &PooledCache<F>, dpooled: &Array2<F>) -> MaeModel<F> {
        let (batch, seq) = (cache.batch, cache.seq);
        let e = self.enc_cfg.embed_dim;
        let n = self.n_patches();
        let with_cls = matches!(cache.pooling, Pooling::Cls);

        let mut dout = Array2::zeros((batch * seq, e));
        match cache.pooling {
            Pooling::Mean => {
                let inv = F::one() / F::from_f(seq as f64);
                for s in 0..batch {
                    for t in 0..seq {
                        let mut row = dout.row_mut(s * seq + t);
                        row.assign(&dpooled.row(s).mapv(|v| v * inv));
                    }
                }
            }
            Pooling::Cls => {
                for s in 0..batch {
                    dout.row_mut(s * seq).assign(&dpooled.row(s));
                }
            }
        }

        let (dtokens, enc_grads) = self.encoder.backward(&cache.enc_caches, &dout);

        let mut dcls = Array1::zeros(self.cls_token.len());
        let mut dproj_out = Array2::zeros((batch * n, e));
        for s in 0..batch {
            let base = s * seq;
            let mut row0 = base;
            if with_cls {
                dcls += &dtokens.row(base);
                row0 += 1;
            }
            for i in 0..n {
                dproj_out.row_mut(s * n + i).assign(&dtokens.row(row0 + i));
            }
        }
        let (_, dpatch_proj) = self.patch_proj.backward(&cache.patches, &dproj_out);

        MaeModel {
            enc_cfg: self.enc_cfg.clone(),
            dec_cfg: self.dec_cfg.clone(),
            patch_proj: dpatch_proj,
            cls_token: dcls,
            encoder: enc_grads,
            dec_embed: self.dec_embed.zeros_like(),
            mask_token: Array1::zeros(self.mask_token.len()),
            decoder: self.decoder.zeros_like(),
            pred: self.pred.zeros_like(),
            enc_pos: Array2::zeros((0, 0)),
            dec_pos: Array2::zeros((0, 0)),
        }
    }

    /// Rebuild the positional tables after loading raw weights.
    pub(crate) fn rebuild_positional_tables(&mut self) {
        let side = self.enc_cfg.grid_side();
        self.enc_pos = sincos_2d(side, side, self.enc_cfg.embed_dim);
        self.dec_pos = sincos_2d(side, side, self.dec_cfg.embed_dim);
    }

    /// Convert every weight to another element type.
    pub fn cast<G: Scalar>(&self) -> MaeModel<G> {
        let conv2 = |a: &Array2<F>| a.mapv(|v| G::from_f(v.to_f64().unwrap()));
        let conv1 = |a: &Array1<F>| a.mapv(|v| G::from_f(v.to_f64().unwrap()));
        let mut out = MaeModel {
            enc_cfg: self.enc_cfg.clone(),
            dec_cfg: self.dec_cfg.clone(),
            patch_proj: Linear {
                w: conv2(&self.patch_proj.w),
                b: conv1(&self.patch_proj.b),
            },
            cls_token: conv1(&self.cls_token),
            encoder: cast_stack(&self.encoder),
            dec_embed: Linear {
                w: conv2(&self.dec_embed.w),
                b: conv1(&self.dec_embed.b),
            },
            mask_token: conv1(&self.mask_token),
            decoder: cast_stack(&self.decoder),
            pred: Linear {
                w: conv2(&self.pred.w),
                b: conv1(&self.pred.b),
            },
            enc_pos: Array2::zeros((0, 0)),
            dec_pos: Array2::zeros((0, 0)),
        };
        out.rebuild_positional_tables();
        out
    }
}

fn cast_stack<F: Scalar, G: Scalar>(stack: &EncoderStack<F>) -> EncoderStack<G> {
    use crate::nn::{LayerNorm, Mlp, MultiHeadAttention, TransformerBlock};
    let conv2 = |a: &Array2<F>| a.mapv(|v| G::from_f(v.to_f64().unwrap()));
    let conv1 = |a: &Array1<F>| a.mapv(|v| G::from_f(v.to_f64().unwrap()));
    let conv_lin = |l: &Linear<F>| Linear {
        w: conv2(&l.w),
        b: conv1(&l.b),
    };
    let conv_ln = |l: &LayerNorm<F>| LayerNorm {
        gamma: conv1(&l.gamma),
        beta: conv1(&l.beta),
        eps: G::from_f(l.eps.to_f64().unwrap()),
    };
    EncoderStack {
        blocks: stack
            .blocks
            .iter()
            .map(|b| TransformerBlock {
                ln1: conv_ln(&b.ln1),
                attn: MultiHeadAttention {
                    wq: conv_lin(&b.attn.wq),
                    wk: conv_lin(&b.attn.wk),
                    wv: conv_lin(&b.attn.wv),
                    wo: conv_lin(&b.attn.wo),
                    n_heads: b.attn.n_heads,
                },
                ln2: conv_ln(&b.ln2),
                mlp: Mlp {
                    fc1: conv_lin(&b.mlp.fc1),
                    fc2: conv_lin(&b.mlp.fc2),
                },
            })
            .collect(),
    }
}

impl<F: Scalar> Params<F> for MaeModel<F> {
    fn zeros_like(&self) -> Self {
        MaeModel {
            enc_cfg: self.enc_cfg.clone(),
            dec_cfg: self.dec_cfg.clone(),
            patch_proj: self.patch_proj.zeros_like(),
            cls_token: Array1::zeros(self.cls_token.len()),
            encoder: self.encoder.zeros_like(),
            dec_embed: self.dec_embed.zeros_like(),
            mask_token: Array1::zeros(self.mask_token.len()),
            decoder: self.decoder.zeros_like(),
            pred: self.pred.zeros_like(),
            enc_pos: Array2::zeros((0, 0)),
            dec_pos: Array2::zeros((0, 0)),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        self.patch_proj.visit(&mut |n, s, d| f(&format!("patch_proj.{n}"), s, d));
        f("cls_token", &[self.cls_token.len()], self.cls_token.as_slice().unwrap());
        self.encoder.visit(&mut |n, s, d| f(&format!("encoder.{n}"), s, d));
        self.dec_embed.visit(&mut |n, s, d| f(&format!("dec_embed.{n}"), s, d));
        f("mask_token", &[self.mask_token.len()], self.mask_token.as_slice().unwrap());
        self.decoder.visit(&mut |n, s, d| f(&format!("decoder.{n}"), s, d));
        self.pred.visit(&mut |n, s, d| f(&format!("pred.{n}"), s, d));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        self.patch_proj.visit_mut(&mut |n, s, d| f(&format!("patch_proj.{n}"), s, d));
        let cl = [self.cls_token.len()];
        f("cls_token", &cl, self.cls_token.as_slice_mut().unwrap());
        self.encoder.visit_mut(&mut |n, s, d| f(&format!("encoder.{n}"), s, d));
        self.dec_embed.visit_mut(&mut |n, s, d| f(&format!("dec_embed.{n}"), s, d));
        let ml = [self.mask_token.len()];
        f("mask_token", &ml, self.mask_token.as_slice_mut().unwrap());
        self.decoder.visit_mut(&mut |n, s, d| f(&format!("decoder.{n}"), s, d));
        self.pred.visit_mut(&mut |n, s, d| f(&format!("pred.{n}"), s, d));
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        self.patch_proj.zip_mut(&other.patch_proj, f);
        let cl = [self.cls_token.len()];
        f(&cl, self.cls_token.as_slice_mut().unwrap(), other.cls_token.as_slice().unwrap());
        self.encoder.zip_mut(&other.encoder, f);
        self.dec_embed.zip_mut(&other.dec_embed, f);
        let ml = [self.mask_token.len()];
        f(&ml, self.mask_token.as_slice_mut().unwrap(), other.mask_token.as_slice().unwrap());
        self.decoder.zip_mut(&other.decoder, f);
        self.pred.zip_mut(&other.pred, f);
    }
}

/// Spec-shaped wrapper around [`MaeModel::decode`].
pub fn decode<F: Scalar>(
    model: &MaeModel<F>,
    latent: &TokenSequence<F>,
    plan: &MaskPlan,
) -> Result<Array2<F>> {
    model.decode(latent, plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vitmae::{encode, sample_mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> (EncoderConfig, DecoderConfig) {
        (
            EncoderConfig {
                embed_dim: 16,
                n_layers: 1,
                n_heads: 2,
                mlp_ratio: 2.0,
                patch_size: 32,
                pooling: Pooling::Mean,
            },
            DecoderConfig {
                embed_dim: 8,
                n_layers: 1,
                n_heads: 2,
            },
        )
    }

    fn random_image(rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((224, 224), || rng.gen::<f64>())
    }

    #[test]
    fn encode_preserves_count_and_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let img = random_image(&mut rng);
        let grid = patchify(&img, 32).unwrap();
        let plan = sample_mask(49, 0.75, &mut rng).unwrap();
        let seq = model.embed_visible(&grid, &plan).unwrap();
        assert_eq!(seq.len(), 12); // round(0.75*49)=37 masked, 12 visible
        let out = encode(&seq, &model.encoder).unwrap();
        assert_eq!(out.len(), seq.len());
        assert_eq!(out.positions, seq.positions);
        assert_eq!(out.tokens.ncols(), 16);
    }

    #[test]
    fn zero_layer_encoder_is_identity() {
        let seq = TokenSequence {
            tokens: Array2::from_shape_fn((5, 8), |(r, c)| (r * 8 + c) as f64),
            positions: (0..5).collect(),
        };
        let stack: EncoderStack<f64> = EncoderStack { blocks: vec![] };
        let out = encode(&seq, &stack).unwrap();
        assert_eq!(out.tokens, seq.tokens);
    }

    #[test]
    fn encode_is_permutation_equivariant() {
        // Permuting tokens together with their positions permutes the
        // output rows identically (checked in f64 to tight tolerance).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let img = random_image(&mut rng);
        let grid = patchify(&img, 32).unwrap();
        let plan = sample_mask(49, 0.6, &mut rng).unwrap();
        let seq = model.embed_visible(&grid, &plan).unwrap();

        let m = seq.len();
        let perm: Vec<usize> = (0..m).rev().collect();
        let mut tokens_p = Array2::zeros(seq.tokens.dim());
        for (r, &src) in perm.iter().enumerate() {
            tokens_p.row_mut(r).assign(&seq.tokens.row(src));
        }
        let seq_p = TokenSequence {
            tokens: tokens_p,
            positions: perm.iter().map(|&i| seq.positions[i]).collect(),
        };

        let out = encode(&seq, &model.encoder).unwrap();
        let out_p = encode(&seq_p, &model.encoder).unwrap();
        for (r, &src) in perm.iter().enumerate() {
            let diff: f64 = out_p
                .tokens
                .row(r)
                .iter()
                .zip(out.tokens.row(src).iter())
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(diff < 1e-9, "row {r} diff {diff}");
        }
    }

    #[test]
    fn decode_shapes_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let img = random_image(&mut rng);
        let grid = patchify(&img, 32).unwrap();
        let plan = sample_mask(49, 0.75, &mut rng).unwrap();
        let latent = encode(&model.embed_visible(&grid, &plan).unwrap(), &model.encoder).unwrap();
        let preds = model.decode(&latent, &plan).unwrap();
        assert_eq!(preds.dim(), (37, 1024));

        // Mismatched plan.
        let other = sample_mask(49, 0.5, &mut rng).unwrap();
        assert!(model.decode(&latent, &other).is_err());
    }

    #[test]
    fn decode_empty_mask_gives_empty_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let img = random_image(&mut rng);
        let grid = patchify(&img, 32).unwrap();
        let plan = sample_mask(49, 0.0, &mut rng).unwrap();
        let latent = encode(&model.embed_visible(&grid, &plan).unwrap(), &model.encoder).unwrap();
        let preds = model.decode(&latent, &plan).unwrap();
        assert_eq!(preds.nrows(), 0);
    }

    #[test]
    fn pretrain_forward_counts_visible_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let images = vec![random_image(&mut rng), random_image(&mut rng)];
        let plans: Vec<_> = (0..2).map(|_| sample_mask(49, 0.75, &mut rng).unwrap()).collect();
        let (loss, cache) = model.pretrain_forward(&images, &plans).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(cache.encoded_tokens_per_sample(), plans[0].visible_idx.len());
    }

    #[test]
    fn describe_is_deterministic_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let img = random_image(&mut rng);
        let d1 = model.describe(&img).unwrap();
        let d2 = model.describe(&img).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 16);
    }

    #[test]
    fn gradient_check_patch_projection() {
        // Analytic gradient of the masked loss vs central differences on
        // randomly sampled patch-projection coordinates, in f64.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let images = vec![random_image(&mut rng)];
        let plans = vec![sample_mask(49, 0.75, &mut rng).unwrap()];

        let (_, cache) = model.pretrain_forward(&images, &plans).unwrap();
        let grads = model.pretrain_backward(&cache);

        // Sample coordinates whose gradient is large enough that the finite
        // difference is signal rather than truncation noise.
        let mut coords = Vec::new();
        for r in 0..model.patch_proj.w.nrows() {
            for c in 0..model.patch_proj.w.ncols() {
                if grads.patch_proj.w[[r, c]].abs() >= 1e-6 {
                    coords.push((r, c));
                }
            }
        }
        assert!(coords.len() >= 10, "only {} usable coordinates", coords.len());

        let eps = 1e-5;
        for _ in 0..10 {
            let (r, c) = coords[rng.gen_range(0..coords.len())];
            let mut mp = model.clone();
            mp.patch_proj.w[[r, c]] += eps;
            let mut mm = model.clone();
            mm.patch_proj.w[[r, c]] -= eps;
            let lp = mp.pretrain_forward(&images, &plans).unwrap().0;
            let lm = mm.pretrain_forward(&images, &plans).unwrap().0;
            let num = (lp - lm) / (2.0 * eps);
            let ana = grads.patch_proj.w[[r, c]];
            let denom = num.abs().max(ana.abs());
            assert!(
                ((num - ana) / denom).abs() < 1e-3,
                "({r},{c}): numeric {num} vs analytic {ana}"
            );
        }
    }

    #[test]
    fn describe_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f64> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let images = vec![random_image(&mut rng)];
        let (pooled, cache) = model.describe_batch_train(&images).unwrap();
        let wts = Array2::from_shape_simple_fn(pooled.dim(), || rng.gen::<f64>() - 0.5);
        let grads = model.describe_backward(&cache, &wts);

        let obj = |m: &MaeModel<f64>| (m.describe_batch(&images).unwrap() * &wts).sum();
        let eps = 1e-5;
        for _ in 0..5 {
            let r = rng.gen_range(0..model.patch_proj.w.nrows());
            let c = rng.gen_range(0..model.patch_proj.w.ncols());
            let mut mp = model.clone();
            mp.patch_proj.w[[r, c]] += eps;
            let mut mm = model.clone();
            mm.patch_proj.w[[r, c]] -= eps;
            let num = (obj(&mp) - obj(&mm)) / (2.0 * eps);
            let ana = grads.patch_proj.w[[r, c]];
            let denom = num.abs().max(ana.abs()).max(1e-8);
            assert!(((num - ana) / denom).abs() < 1e-3, "numeric {num} vs analytic {ana}");
        }
    }

    #[test]
    fn param_walk_is_stable_and_complete() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (ec, dc) = tiny_cfg();
        let model: MaeModel<f32> = MaeModel::new(ec, dc, &mut rng).unwrap();
        let mut names = Vec::new();
        model.visit(&mut |n, _, _| names.push(n.to_string()));
        assert_eq!(names.first().map(|s| s.as_str()), Some("patch_proj.w"));
        assert!(names.contains(&"encoder.0.attn.wq.w".to_string()));
        assert!(names.contains(&"mask_token".to_string()));
        assert!(names.contains(&"pred.b".to_string()));
        // visit and visit_mut agree on order.
        let mut names2 = Vec::new();
        let mut m2 = model.clone();
        m2.visit_mut(&mut |n, _, _| names2.push(n.to_string()));
        assert_eq!(names, names2);
    }
}
