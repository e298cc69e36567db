//! Masked-autoencoder pretraining of a vision-transformer encoder.
//!
//! An image is cut into non-overlapping patches; a uniform 75% of them are
//! masked out. The encoder runs only on the visible patches (plus their
//! positional encodings); a lighter decoder sees the encoded visible tokens
//! and a shared mask token at every masked position and predicts the masked
//! pixels. The loss is the mean squared error over masked patches only. The
//! decoder exists solely for this stage and is flagged discardable in the
//! checkpoint.

mod model;
mod train;

pub use model::{decode, MaeModel, PooledCache, PretrainCache};
pub use train::{
    adapt_pretrain, evaluate_masked_loss, pretrain, write_loss_csv, EpochLog, PretrainHyperparams,
};

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, TransformerBlock};

/// Image patches in row-major grid order; patch `(r, c)` is row `r*cols + c`
/// and holds its pixel block flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<F> {
    pub patches: Array2<F>,
    pub rows: usize,
    pub cols: usize,
    pub patch_size: usize,
}

impl<F> PatchGrid<F> {
    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }
}

/// Split an image into `p x p` patches. Both sides must be divisible by `p`.
pub fn patchify<F: Scalar>(image: &Array2<F>, p: usize) -> Result<PatchGrid<F>> {
    let (h, w) = image.dim();
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::Shape(format!(
            "patch size {p} does not divide image {h}x{w}"
        )));
    }
    let (rows, cols) = (h / p, w / p);
    let mut patches = Array2::zeros((rows * cols, p * p));
    for r in 0..rows {
        for c in 0..cols {
            let idx = r * cols + c;
            for py in 0..p {
                for px in 0..p {
                    patches[[idx, py * p + px]] = image[[r * p + py, c * p + px]];
                }
            }
        }
    }
    Ok(PatchGrid {
        patches,
        rows,
        cols,
        patch_size: p,
    })
}

/// Exact inverse of [`patchify`].
pub fn unpatchify<F: Scalar>(grid: &PatchGrid<F>) -> Result<Array2<F>> {
    let p = grid.patch_size;
    if grid.patches.nrows() != grid.rows * grid.cols || grid.patches.ncols() != p * p {
        return Err(Error::Shape(format!(
            "inconsistent patch grid: {}x{} patches for {}x{} grid of size {p}",
            grid.patches.nrows(),
            grid.patches.ncols(),
            grid.rows,
            grid.cols
        )));
    }
    let mut image = Array2::zeros((grid.rows * p, grid.cols * p));
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let idx = r * grid.cols + c;
            for py in 0..p {
                for px in 0..p {
                    image[[r * p + py, c * p + px]] = grid.patches[[idx, py * p + px]];
                }
            }
        }
    }
    Ok(image)
}

/// Complementary visible/masked index partition of `n` patches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    pub visible_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
    pub ratio: f64,
}

impl MaskPlan {
    pub fn n_patches(&self) -> usize {
        self.visible_idx.len() + self.masked_idx.len()
    }
}

/// Uniform sample (without replacement) of `round(ratio * n)` masked
/// indices; rounding is half-up. Both index lists come back sorted.
pub fn sample_mask(n: usize, ratio: f64, rng: &mut impl Rng) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0,1)")));
    }
    let n_masked = (ratio * n as f64 + 0.5).floor() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..n_masked {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    let mut masked: Vec<usize> = idx[..n_masked].to_vec();
    let mut visible: Vec<usize> = idx[n_masked..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPlan {
        visible_idx: visible,
        masked_idx: masked,
        ratio,
    })
}

/// Tokens paired with the grid positions they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence<F> {
    pub tokens: Array2<F>,
    pub positions: Vec<usize>,
}

impl<F> TokenSequence<F> {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// How a word descriptor is pooled from the output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub patch_size: usize,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::base16()
    }
}

impl EncoderConfig {
    pub fn base16() -> Self {
        Self {
            embed_dim: 768,
            n_layers: 12,
            n_heads: 12,
            mlp_ratio: 4.0,
            patch_size: 16,
            pooling: Pooling::Mean,
        }
    }

    pub fn base32() -> Self {
        Self {
            patch_size: 32,
            ..Self::base16()
        }
    }

    /// Reduced variant for tests and desk-scale runs: 6 layers, 3 heads.
    pub fn small16() -> Self {
        Self {
            embed_dim: 96,
            n_layers: 6,
            n_heads: 3,
            mlp_ratio: 4.0,
            patch_size: 16,
            pooling: Pooling::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.n_heads.max(1) != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.embed_dim % 4 != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be divisible by 4 for the positional table",
                self.embed_dim
            )));
        }
        if self.n_heads == 0 {
            return Err(Error::Config("n_heads must be >= 1".into()));
        }
        if self.patch_size == 0 || crate::corpus::IMAGE_SIZE % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "patch size {} does not divide {}",
                self.patch_size,
                crate::corpus::IMAGE_SIZE
            )));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        crate::corpus::IMAGE_SIZE / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 384,
            n_layers: 4,
            n_heads: 6,
        }
    }
}

impl DecoderConfig {
    /// Companion to [`EncoderConfig::small16`].
    pub fn small() -> Self {
        Self {
            embed_dim: 48,
            n_layers: 4,
            n_heads: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.n_heads.max(1) != 0 {
            return Err(Error::Config(format!(
                "decoder embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.embed_dim % 4 != 0 {
            return Err(Error::Config(format!(
                "decoder embed_dim {} must be divisible by 4",
                self.embed_dim
            )));
        }
        Ok(())
    }
}

/// A stack of pre-norm transformer blocks. Zero blocks is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStack<F> {
    pub blocks: Vec<TransformerBlock<F>>,
}

impl<F: Scalar> EncoderStack<F> {
    pub fn new(dim: usize, n_layers: usize, n_heads: usize, mlp_ratio: f64, rng: &mut impl Rng) -> Self {
        Self {
            blocks: (0..n_layers)
                .map(|_| TransformerBlock::new(dim, n_heads, mlp_ratio, rng))
                .collect(),
        }
    }

    pub fn zeros(dim: usize, n_layers: usize, n_heads: usize, mlp_ratio: f64) -> Self {
        Self {
            blocks: (0..n_layers)
                .map(|_| TransformerBlock::zeros(dim, n_heads, mlp_ratio))
                .collect(),
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.ln1.gamma.len())
    }

    pub fn forward(&self, tokens: &Array2<F>, batch: usize, seq: usize) -> Array2<F> {
        let mut x = tokens.clone();
        for b in &self.blocks {
            x = b.forward(&x, batch, seq).0;
        }
        x
    }

    pub fn forward_train(
        &self,
        tokens: &Array2<F>,
        batch: usize,
        seq: usize,
    ) -> (Array2<F>, Vec<crate::nn::BlockCache<F>>) {
        let mut x = tokens.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward(&x, batch, seq);
            x = y;
            caches.push(c);
        }
        (x, caches)
    }

    pub fn backward(
        &self,
        caches: &[crate::nn::BlockCache<F>],
        dy: &Array2<F>,
    ) -> (Array2<F>, EncoderStack<F>) {
        let mut dx = dy.clone();
        let mut grads = vec![];
        for (b, c) in self.blocks.iter().zip(caches.iter()).rev() {
            let (d, g) = b.backward(c, &dx);
            dx = d;
            grads.push(g);
        }
        grads.reverse();
        (dx, EncoderStack { blocks: grads })
    }
}

impl<F: Scalar> crate::nn::Params<F> for EncoderStack<F> {
    fn zeros_like(&self) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[F])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&mut |n, s, d| f(&format!("{i}.{n}"), s, d));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [F])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&mut |n, s, d| f(&format!("{i}.{n}"), s, d));
        }
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [F], &[F])) {
        for (a, b) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            a.zip_mut(b, f);
        }
    }
}

/// Run already projected, position-encoded tokens through the block stack.
/// Token count and positions are preserved.
pub fn encode<F: Scalar>(visible: &TokenSequence<F>, stack: &EncoderStack<F>) -> Result<TokenSequence<F>> {
    if visible.is_empty() {
        return Err(Error::Shape("cannot encode an empty token sequence".into()));
    }
    if let Some(dim) = stack.dim() {
        if visible.tokens.ncols() != dim {
            return Err(Error::Shape(format!(
                "token width {} does not match encoder width {dim}",
                visible.tokens.ncols()
            )));
        }
    }
    Ok(TokenSequence {
        tokens: stack.forward(&visible.tokens, 1, visible.len()),
        positions: visible.positions.clone(),
    })
}

/// Mean squared error over masked patches only. `pred` rows align with
/// `plan.masked_idx` order.
pub fn masked_mse<F: Scalar>(pred: &Array2<F>, target: &PatchGrid<F>, plan: &MaskPlan) -> Result<F> {
    if plan.masked_idx.is_empty() {
        return Err(Error::Data("masked set is empty; loss undefined".into()));
    }
    if pred.nrows() != plan.masked_idx.len() || pred.ncols() != target.patches.ncols() {
        return Err(Error::Shape(format!(
            "prediction {}x{} does not match {} masked patches of width {}",
            pred.nrows(),
            pred.ncols(),
            plan.masked_idx.len(),
            target.patches.ncols()
        )));
    }
    if plan.n_patches() != target.n_patches() {
        return Err(Error::Shape("mask plan does not cover the patch grid".into()));
    }
    let mut sum = F::zero();
    for (row, &idx) in plan.masked_idx.iter().enumerate() {
        for c in 0..pred.ncols() {
            let d = pred[[row, c]] - target.patches[[idx, c]];
            sum = sum + d * d;
        }
    }
    Ok(sum / F::from_f((plan.masked_idx.len() * pred.ncols()) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((224, 224), || rng.gen::<f32>())
    }

    use rand::Rng;

    #[test]
    fn patchify_shapes() {
        let img = random_image(0);
        let g16 = patchify(&img, 16).unwrap();
        assert_eq!(g16.patches.dim(), (196, 256));
        let g32 = patchify(&img, 32).unwrap();
        assert_eq!(g32.patches.dim(), (49, 1024));
        assert!(patchify(&img, 15).is_err());
    }

    #[test]
    fn patchify_round_trip_is_exact() {
        for p in [16, 32] {
            let img = random_image(p as u64);
            let back = unpatchify(&patchify(&img, p).unwrap()).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn patchify_block_layout() {
        let img = Array2::from_shape_fn((224, 224), |(y, x)| (y * 224 + x) as f32);
        let g = patchify(&img, 16).unwrap();
        // Patch (1, 2) starts at pixel (16, 32); flattened row-major.
        let idx = 1 * 14 + 2;
        assert_eq!(g.patches[[idx, 0]], (16 * 224 + 32) as f32);
        assert_eq!(g.patches[[idx, 1]], (16 * 224 + 33) as f32);
        assert_eq!(g.patches[[idx, 16]], (17 * 224 + 32) as f32);
    }

    #[test]
    fn unpatchify_degenerate_cases() {
        let zero = PatchGrid::<f32> {
            patches: Array2::zeros((196, 256)),
            rows: 14,
            cols: 14,
            patch_size: 16,
        };
        assert!(unpatchify(&zero).unwrap().iter().all(|&v| v == 0.0));

        let mut one = zero.clone();
        one.patches[[17, 5]] = 1.0;
        let img = unpatchify(&one).unwrap();
        assert_eq!(img.iter().filter(|&&v| v != 0.0).count(), 1);
        // Patch 17 = grid (1, 3); offset 5 = pixel (0, 5) inside the block.
        assert_eq!(img[[16, 3 * 16 + 5]], 1.0);

        let bad = PatchGrid::<f32> {
            patches: Array2::zeros((100, 256)),
            rows: 14,
            cols: 14,
            patch_size: 16,
        };
        assert!(unpatchify(&bad).is_err());
    }

    #[test]
    fn mask_counts_at_defaults() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let plan = sample_mask(196, 0.75, &mut rng).unwrap();
        assert_eq!(plan.masked_idx.len(), 147);
        assert_eq!(plan.visible_idx.len(), 49);
        // Disjoint, sorted, covering.
        let mut all: Vec<usize> = plan.visible_idx.iter().chain(&plan.masked_idx).cloned().collect();
        all.sort_unstable();
        assert_eq!(all, (0..196).collect::<Vec<_>>());
    }

    #[test]
    fn mask_ratio_zero_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let plan = sample_mask(10, 0.0, &mut rng).unwrap();
        assert!(plan.masked_idx.is_empty());
        assert_eq!(plan.visible_idx.len(), 10);
        assert!(sample_mask(10, 1.0, &mut rng).is_err());
        assert!(sample_mask(10, -0.1, &mut rng).is_err());
    }

    #[test]
    fn mask_sampling_is_uniform() {
        // Monte-Carlo: per-index mask frequency within 0.75 +/- 0.02.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut counts = vec![0u32; 196];
        for _ in 0..draws {
            let plan = sample_mask(196, 0.75, &mut rng).unwrap();
            for &i in &plan.masked_idx {
                counts[i] += 1;
            }
        }
        for (i, &c) in counts.iter().enumerate() {
            let f = c as f64 / draws as f64;
            assert!((0.73..=0.77).contains(&f), "index {i} frequency {f}");
        }
    }

    #[test]
    fn mask_is_deterministic_per_seed() {
        let a = sample_mask(196, 0.75, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_mask(196, 0.75, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masked_mse_cases() {
        let img = random_image(4);
        let grid = patchify(&img, 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let plan = sample_mask(196, 0.75, &mut rng).unwrap();

        // Perfect prediction.
        let mut pred = Array2::zeros((147, 256));
        for (r, &i) in plan.masked_idx.iter().enumerate() {
            pred.row_mut(r).assign(&grid.patches.row(i));
        }
        assert_eq!(masked_mse(&pred, &grid, &plan).unwrap(), 0.0);

        // Constant offset of 0.1 -> loss 0.01.
        let off = pred.mapv(|v| v + 0.1);
        let loss = masked_mse(&off, &grid, &plan).unwrap();
        assert!((loss - 0.01).abs() < 1e-4, "loss {loss}");

        // Perturbing a visible patch of the target changes nothing.
        let mut grid2 = grid.clone();
        let vis = plan.visible_idx[0];
        grid2.patches.row_mut(vis).fill(9.0);
        assert_eq!(
            masked_mse(&off, &grid, &plan).unwrap(),
            masked_mse(&off, &grid2, &plan).unwrap()
        );

        // Empty masked set is an error.
        let empty = MaskPlan {
            visible_idx: (0..196).collect(),
            masked_idx: vec![],
            ratio: 0.0,
        };
        assert!(masked_mse(&Array2::zeros((0, 256)), &grid, &empty).is_err());
    }

    #[test]
    fn masked_mse_nonnegative_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let img = Array2::from_shape_simple_fn((224, 224), || rng.gen::<f32>());
            let grid = patchify(&img, 32).unwrap();
            let plan = sample_mask(49, rng.gen_range(0.1..0.9), &mut rng).unwrap();
            let pred = Array2::from_shape_simple_fn((plan.masked_idx.len(), 1024), || rng.gen::<f32>());
            assert!(masked_mse(&pred, &grid, &plan).unwrap() >= 0.0);
        }
    }

    #[test]
    fn configs_validate() {
        assert!(EncoderConfig::base16().validate().is_ok());
        assert!(EncoderConfig::base32().validate().is_ok());
        assert!(EncoderConfig::small16().validate().is_ok());
        assert!(DecoderConfig::default().validate().is_ok());
        assert!(DecoderConfig::small().validate().is_ok());
        let mut bad = EncoderConfig::base16();
        bad.embed_dim = 770; // not divisible by 12
        assert!(bad.validate().is_err());
        let mut bad = EncoderConfig::base16();
        bad.patch_size = 13;
        assert!(bad.validate().is_err());
    }
}
