//! Self-supervised pretraining loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sample_mask, DecoderConfig, EncoderConfig, MaeModel};
use crate::checkpoint::{EncoderCheckpoint, Provenance, Stage, StageRecord};
use crate::corpus::{augment_image, AugmentationSpec, WordSample};
use crate::error::{Error, Result};
use crate::nn::{warmup_cosine_lr, AdamW};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainHyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub mask_ratio: f64,
    /// Fraction of total steps spent in linear warmup before cosine decay.
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: Option<AugmentationSpec>,
}

impl Default for PretrainHyperparams {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 20,
            lr: 1.5e-4,
            mask_ratio: 0.75,
            warmup_frac: 0.05,
            weight_decay: 0.05,
            seed: 42,
            augment: Some(AugmentationSpec::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

/// Write the per-epoch loss log as `epoch,loss` CSV.
pub fn write_loss_csv(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for l in logs {
        out.push_str(&format!("{},{}\n", l.epoch, l.loss));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Pretrain a fresh masked autoencoder on unlabeled images. Transcripts in
/// `samples` are ignored. One seed drives init, shuffling, masking and
/// augmentation, so equal inputs give identical loss curves.
pub fn pretrain(
    samples: &[WordSample],
    enc_cfg: EncoderConfig,
    dec_cfg: DecoderConfig,
    hp: &PretrainHyperparams,
    dataset_name: &str,
) -> Result<(EncoderCheckpoint, Vec<EpochLog>)> {
    if samples.is_empty() {
        return Err(Error::Data("pretraining corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let model = MaeModel::new(enc_cfg, dec_cfg, &mut rng)?;
    let provenance = Provenance {
        stage: Stage::Pretrained,
        datasets: vec![dataset_name.to_string()],
        seed: hp.seed,
        history: vec![],
        parent_checksum: None,
        corpus_checksum: None,
    };
    let mut ckpt = EncoderCheckpoint::new(model, provenance);
    let logs = train_mae(&mut ckpt.model, samples, hp, &mut rng)?;
    ckpt.provenance.history.push(StageRecord {
        stage: Stage::Pretrained,
        dataset: dataset_name.to_string(),
        epochs: hp.epochs,
        seed: hp.seed,
    });
    Ok((ckpt, logs))
}

/// Continue masked pretraining of an already pretrained encoder on a new
/// unlabeled corpus (domain adaptation). Weights with `epochs == 0` come
/// back bit-identical.
pub fn adapt_pretrain(
    ckpt: &EncoderCheckpoint,
    target_samples: &[WordSample],
    hp: &PretrainHyperparams,
    dataset_name: &str,
) -> Result<(EncoderCheckpoint, Vec<EpochLog>)> {
    crate::checkpoint::require_stage(ckpt, &[Stage::Pretrained])?;
    if target_samples.is_empty() {
        return Err(Error::Data("adaptation corpus is empty".into()));
    }
    let mut out = ckpt.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let logs = train_mae(&mut out.model, target_samples, hp, &mut rng)?;
    out.provenance.stage = Stage::Adapted;
    out.provenance.parent_checksum = Some(ckpt.weights_checksum());
    if !out.provenance.datasets.iter().any(|d| d == dataset_name) {
        out.provenance.datasets.push(dataset_name.to_string());
    }
    out.provenance.history.push(StageRecord {
        stage: Stage::Adapted,
        dataset: dataset_name.to_string(),
        epochs: hp.epochs,
        seed: hp.seed,
    });
    Ok((out, logs))
}

fn train_mae(
    model: &mut MaeModel<f32>,
    samples: &[WordSample],
    hp: &PretrainHyperparams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochLog>> {
    if hp.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let n_patches = model.n_patches();
    let steps_per_epoch = samples.len().div_ceil(hp.batch_size);
    let total_steps = hp.epochs * steps_per_epoch;
    let mut opt = AdamW::new(hp.weight_decay);
    let mut logs = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0usize;

    for epoch in 0..hp.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(hp.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut plans = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let img = match &hp.augment {
                    Some(spec) => augment_image(&samples[i].image, spec, rng),
                    None => samples[i].image.clone(),
                };
                images.push(img);
                plans.push(sample_mask(n_patches, hp.mask_ratio, rng)?);
            }
            let (loss, cache) = model.pretrain_forward(&images, &plans)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite masked MSE at epoch {epoch}, step {step}"
                )));
            }
            let grads = model.pretrain_backward(&cache);
            let lr = warmup_cosine_lr(step, total_steps, hp.warmup_frac, hp.lr);
            opt.step(model, &grads, lr);
            step += 1;
            epoch_loss += loss as f64 * chunk.len() as f64;
        }
        logs.push(EpochLog {
            epoch,
            loss: epoch_loss / samples.len() as f64,
        });
    }
    Ok(logs)
}

/// Mean masked-reconstruction loss of a frozen model over a corpus,
/// deterministic per seed. Used to compare checkpoints on held-out data.
pub fn evaluate_masked_loss(
    model: &MaeModel<f32>,
    samples: &[WordSample],
    mask_ratio: f64,
    seed: u64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation corpus is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_patches = model.n_patches();
    let mut total = 0.0f64;
    for s in samples {
        let plan = sample_mask(n_patches, mask_ratio, &mut rng)?;
        let (loss, _) = model.pretrain_forward(std::slice::from_ref(&s.image), std::slice::from_ref(&plan))?;
        total += loss as f64;
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::vitmae::Pooling;
    use ndarray::Array2;
    use rand::Rng;

    fn tiny_hp(epochs: usize, seed: u64) -> PretrainHyperparams {
        PretrainHyperparams {
            epochs,
            batch_size: 4,
            lr: 1e-3,
            mask_ratio: 0.75,
            warmup_frac: 0.1,
            weight_decay: 0.0,
            seed,
            augment: None,
        }
    }

    fn tiny_cfgs() -> (EncoderConfig, DecoderConfig) {
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

    fn toy_samples(n: usize, seed: u64) -> Vec<WordSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let cy = rng.gen_range(40..180) as f32;
                let cx = rng.gen_range(40..180) as f32;
                WordSample {
                    image: Array2::from_shape_fn((224, 224), |(y, x)| {
                        let d = ((y as f32 - cy).powi(2) + (x as f32 - cx).powi(2)).sqrt();
                        if d < 30.0 {
                            0.1
                        } else {
                            0.9
                        }
                    }),
                    transcript: "blob".into(),
                    class_id: 0,
                    split: Split::Train,
                    source_id: format!("toy{i}"),
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_keeps_initial_weights() {
        let samples = toy_samples(3, 1);
        let (enc, dec) = tiny_cfgs();
        let (ckpt, logs) = pretrain(&samples, enc.clone(), dec.clone(), &tiny_hp(0, 7), "toy").unwrap();
        assert!(logs.is_empty());
        assert_eq!(ckpt.provenance.history[0].epochs, 0);
        // Same seed, fresh init: identical weights.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let fresh = MaeModel::new(enc, dec, &mut rng).unwrap();
        assert_eq!(ckpt.model, fresh);
    }

    #[test]
    fn identical_seeds_give_identical_loss_curves() {
        let samples = toy_samples(6, 2);
        let (enc, dec) = tiny_cfgs();
        let (c1, l1) = pretrain(&samples, enc.clone(), dec.clone(), &tiny_hp(3, 5), "toy").unwrap();
        let (c2, l2) = pretrain(&samples, enc, dec, &tiny_hp(3, 5), "toy").unwrap();
        assert_eq!(l1, l2);
        assert_eq!(c1.model, c2.model);
    }

    #[test]
    fn loss_decreases_on_a_tiny_corpus() {
        let samples = toy_samples(8, 3);
        let (enc, dec) = tiny_cfgs();
        let mut hp = tiny_hp(40, 11);
        hp.lr = 3e-3;
        let (_, logs) = pretrain(&samples, enc, dec, &hp, "toy").unwrap();
        let first = logs.first().unwrap().loss;
        let last = logs.last().unwrap().loss;
        assert!(last < first * 0.5, "first {first}, last {last}");
    }

    #[test]
    fn adapt_zero_epochs_is_bit_equal_and_tracks_datasets() {
        let samples = toy_samples(4, 4);
        let (enc, dec) = tiny_cfgs();
        let (ckpt, _) = pretrain(&samples, enc, dec, &tiny_hp(1, 13), "source").unwrap();
        let (adapted, logs) = adapt_pretrain(&ckpt, &samples, &tiny_hp(0, 14), "target").unwrap();
        assert!(logs.is_empty());
        assert_eq!(adapted.model, ckpt.model);
        assert_eq!(adapted.provenance.stage, Stage::Adapted);
        assert_eq!(adapted.provenance.datasets, vec!["source".to_string(), "target".to_string()]);
        assert_eq!(adapted.provenance.parent_checksum, Some(ckpt.weights_checksum()));

        // Adapting anything but a pretrained checkpoint is rejected.
        assert!(adapt_pretrain(&adapted, &samples, &tiny_hp(0, 15), "t2").is_err());
    }

    #[test]
    fn loss_csv_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_csv(
            &path,
            &[
                EpochLog { epoch: 0, loss: 0.5 },
                EpochLog { epoch: 1, loss: 0.25 },
            ],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "epoch,loss\n0,0.5\n1,0.25\n");
    }
}
