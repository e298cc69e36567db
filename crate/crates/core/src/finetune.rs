//! Supervised adaptation of the pretrained encoder.
//!
//! Two stages, run in either order:
//!
//! * **Siamese**: twin towers with one shared parameter set score labeled
//!   image pairs. The descriptors' absolute difference feeds a
//!   dropout+linear+sigmoid head; the loss is binary cross-entropy on the
//!   same/different label.
//! * **Attribute alignment**: a dropout+linear+sigmoid head maps the pooled
//!   descriptor to the 604-bit character-attribute vector of the
//!   transcript, trained with element-wise binary cross-entropy.
//!
//! Throughout fine-tuning the encoder consumes the full, unmasked token
//! sequence. Retrieval features are taken from the layer feeding the final
//! dense head.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{require_stage, EncoderCheckpoint, Stage, StageRecord};
use crate::corpus::{augment_image, AugmentationSpec, WordSample};
use crate::error::{Error, Result};
use crate::nn::{dropout_mask, step_decay_lr, Linear, Params, Scalar, Sgd};
use crate::phoc::{build_phoc, Alphabet, PHOC_BITS};
use crate::vitmae::MaeModel;

/// A labeled pair, stored as indices into a sample slice. `label` is 1 when
/// both samples share a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub label: u8,
}

/// Similarity head: `sigmoid(dense(|h1 - h2|))`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseHead<F> {
    pub dense: Linear<F>,
    pub dropout: f64,
}

/// Attribute head: element-wise `sigmoid(dense(h))` over 604 outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PhocHead<F> {
    pub dense: Linear<F>,
    pub dropout: f64,
}

/// Fine-tuning head attached to a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Siamese(SiameseHead<f32>),
    Phoc(PhocHead<f32>),
}

impl Head {
    pub fn kind(&self) -> &'static str {
        match self {
            Head::Siamese(_) => "siamese",
            Head::Phoc(_) => "phoc",
        }
    }

    pub fn new_siamese(embed_dim: usize, dropout: f64, rng: &mut impl Rng) -> Head {
        Head::Siamese(SiameseHead {
            dense: Linear::new(embed_dim, 1, rng),
            dropout,
        })
    }

    pub fn new_phoc(embed_dim: usize, dropout: f64, rng: &mut impl Rng) -> Head {
        Head::Phoc(PhocHead {
            dense: Linear::new(embed_dim, PHOC_BITS, rng),
            dropout,
        })
    }

    pub fn zeros(kind: &str, embed_dim: usize) -> Result<Head> {
        match kind {
            "siamese" => Ok(Head::Siamese(SiameseHead {
                dense: Linear::zeros(embed_dim, 1),
                dropout: 0.5,
            })),
            "phoc" => Ok(Head::Phoc(PhocHead {
                dense: Linear::zeros(embed_dim, PHOC_BITS),
                dropout: 0.5,
            })),
            other => Err(Error::Data(format!("unknown head kind {other:?}"))),
        }
    }
}

impl Params<f32> for Head {
    fn zeros_like(&self) -> Self {
        match self {
            Head::Siamese(h) => Head::Siamese(SiameseHead {
                dense: h.dense.zeros_like(),
                dropout: h.dropout,
            }),
            Head::Phoc(h) => Head::Phoc(PhocHead {
                dense: h.dense.zeros_like(),
                dropout: h.dropout,
            }),
        }
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f32])) {
        match self {
            Head::Siamese(h) => h.dense.visit(&mut |n, s, d| f(&format!("head.{n}"), s, d)),
            Head::Phoc(h) => h.dense.visit(&mut |n, s, d| f(&format!("head.{n}"), s, d)),
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &[usize], &mut [f32])) {
        match self {
            Head::Siamese(h) => h.dense.visit_mut(&mut |n, s, d| f(&format!("head.{n}"), s, d)),
            Head::Phoc(h) => h.dense.visit_mut(&mut |n, s, d| f(&format!("head.{n}"), s, d)),
        }
    }

    fn zip_mut(&mut self, other: &Self, f: &mut dyn FnMut(&[usize], &mut [f32], &[f32])) {
        match (self, other) {
            (Head::Siamese(a), Head::Siamese(b)) => a.dense.zip_mut(&b.dense, f),
            (Head::Phoc(a), Head::Phoc(b)) => a.dense.zip_mut(&b.dense, f),
            _ => panic!("mismatched head kinds"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FinetuneHyperparams {
    pub epochs: usize,
    pub batch_size: usize,
    /// SGD initial learning rate.
    pub lr0: f64,
    /// Learning-rate multiplier applied every `decay_every` epochs.
    pub gamma: f64,
    pub decay_every: usize,
    pub dropout: f64,
    /// Share of the labeled training data actually used, in (0, 1].
    pub labeled_fraction: f64,
    pub seed: u64,
    pub augment: Option<AugmentationSpec>,
}

impl Default for FinetuneHyperparams {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 20,
            lr0: 0.01,
            gamma: 0.5,
            decay_every: 3,
            dropout: 0.5,
            labeled_fraction: 1.0,
            seed: 42,
            augment: None,
        }
    }
}

impl FinetuneHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config("lr0 must be > 0".into()));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must be in (0,1]".into()));
        }
        if !(0.0 < self.labeled_fraction && self.labeled_fraction <= 1.0) {
            return Err(Error::Config("labeled_fraction must be in (0,1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneEpochLog {
    pub epoch: usize,
    pub loss: f64,
    /// Pair accuracy for the siamese stage, mean per-bit accuracy for the
    /// attribute stage.
    pub accuracy: f64,
}

pub fn write_finetune_csv(path: &std::path::Path, logs: &[FinetuneEpochLog]) -> Result<()> {
    let mut out = String::from("epoch,loss,accuracy\n");
    for l in logs {
        out.push_str(&format!("{},{},{}\n", l.epoch, l.loss, l.accuracy));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Choose exactly `floor(fraction * n)` sample indices, stratified by class
/// where possible (largest-remainder quotas, seeded shuffle within class).
pub fn labeled_subset(samples: &[WordSample], fraction: f64, seed: u64) -> Vec<usize> {
    let n = samples.len();
    let target = ((fraction * n as f64).floor() as usize).min(n);
    if target == n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(i);
    }
    for idxs in by_class.values_mut() {
        idxs.shuffle(&mut rng);
    }
    // Largest-remainder apportionment of the target across classes.
    let mut quotas: Vec<(u32, usize, f64)> = by_class
        .iter()
        .map(|(&c, idxs)| {
            let exact = fraction * idxs.len() as f64;
            (c, (exact.floor() as usize).min(idxs.len()), exact - exact.floor())
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        quotas[b]
            .2
            .partial_cmp(&quotas[a].2)
            .unwrap()
            .then(quotas[a].0.cmp(&quotas[b].0))
    });
    let mut cursor = 0;
    while assigned < target {
        let qi = order[cursor % order.len()];
        let cap = by_class[&quotas[qi].0].len();
        if quotas[qi].1 < cap {
            quotas[qi].1 += 1;
            assigned += 1;
        }
        cursor += 1;
    }
    while assigned > target {
        let qi = order[(cursor.wrapping_sub(1)) % order.len()];
        if quotas[qi].1 > 0 {
            quotas[qi].1 -= 1;
            assigned -= 1;
        }
        cursor = cursor.wrapping_sub(1);
    }
    let mut out = Vec::with_capacity(target);
    for (c, take, _) in quotas {
        out.extend(by_class[&c].iter().take(take));
    }
    out.sort_unstable();
    out
}

/// Draw balanced labeled pairs: half positives (two instances of one
/// class), half negatives (instances of two classes). Positives sample
/// uniformly over classes with at least two instances.
pub fn sample_pairs(samples: &[WordSample], n_pairs: usize, rng: &mut impl Rng) -> Result<Vec<PairSample>> {
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for (i, s) in samples.iter().enumerate() {
        by_class.entry(s.class_id).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::Data("pair sampling needs at least 2 classes".into()));
    }
    let eligible: Vec<&Vec<usize>> = by_class.values().filter(|v| v.len() >= 2).collect();
    if eligible.is_empty() {
        return Err(Error::Data("no class has >= 2 instances for positive pairs".into()));
    }

    let n_pos = n_pairs / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pos {
        let class = eligible[rng.gen_range(0..eligible.len())];
        let a = class[rng.gen_range(0..class.len())];
        let b = loop {
            let b = class[rng.gen_range(0..class.len())];
            if b != a {
                break b;
            }
        };
        pairs.push(PairSample { a, b, label: 1 });
    }
    for _ in n_pos..n_pairs {
        let a = rng.gen_range(0..samples.len());
        let b = loop {
            let b = rng.gen_range(0..samples.len());
            if samples[b].class_id != samples[a].class_id {
                break b;
            }
        };
        pairs.push(PairSample { a, b, label: 0 });
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

/// Pooled full-sequence descriptor of one image (inference mode).
pub fn describe(ckpt: &EncoderCheckpoint, image: &Array2<f32>) -> Result<Array1<f32>> {
    ckpt.model.describe(image)
}

/// Similarity in (0,1) for an image pair; exactly symmetric in its
/// arguments.
pub fn siamese_similarity(
    model: &MaeModel<f32>,
    head: &SiameseHead<f32>,
    img1: &Array2<f32>,
    img2: &Array2<f32>,
) -> Result<f32> {
    let h1 = model.describe(img1)?;
    let h2 = model.describe(img2)?;
    let diff = (&h1 - &h2).mapv(f32::abs);
    let logit = diff.dot(&head.dense.w.column(0)) + head.dense.b[0];
    Ok(sigmoid(logit))
}

fn sigmoid<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// Numerically stable BCE from a logit: `-y*log(s) - (1-y)*log(1-s)`.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln()
}

/// Fine-tune encoder + similarity head on labeled pairs. The two towers are
/// one parameter set; each update folds both towers' gradients into it.
pub fn train_siamese(
    ckpt: &EncoderCheckpoint,
    samples: &[WordSample],
    pairs: &[PairSample],
    hp: &FinetuneHyperparams,
) -> Result<(EncoderCheckpoint, Vec<FinetuneEpochLog>)> {
    require_stage(ckpt, &[Stage::Pretrained, Stage::Adapted, Stage::Phoc])?;
    hp.validate()?;
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    for p in pairs {
        let consistent = (samples[p.a].class_id == samples[p.b].class_id) == (p.label == 1);
        if !consistent {
            return Err(Error::Data(format!("pair ({}, {}) label disagrees with class ids", p.a, p.b)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut out = ckpt.clone();
    let embed = out.model.enc_cfg.embed_dim;
    let mut head = match Head::new_siamese(embed, hp.dropout, &mut rng) {
        Head::Siamese(h) => h,
        _ => unreachable!(),
    };

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut logs = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let lr = step_decay_lr(epoch, hp.lr0, hp.gamma, hp.decay_every);
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let b = chunk.len();
            // Towers share weights: run both sides as one stacked batch.
            let mut images = Vec::with_capacity(2 * b);
            for &pi in chunk {
                images.push(prep_image(&samples[pairs[pi].a].image, &hp.augment, &mut rng));
            }
            for &pi in chunk {
                images.push(prep_image(&samples[pairs[pi].b].image, &hp.augment, &mut rng));
            }
            let (pooled, cache) = out.model.describe_batch_train(&images)?;

            let mut diff = Array2::zeros((b, embed));
            let mut sign = Array2::zeros((b, embed));
            for i in 0..b {
                for c in 0..embed {
                    let d = pooled[[i, c]] - pooled[[b + i, c]];
                    diff[[i, c]] = d.abs();
                    sign[[i, c]] = if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            let mask = dropout_mask::<f32>(&mut rng, (b, embed), hp.dropout);
            let dropped = &diff * &mask;
            let logits = head.dense.forward(&dropped);

            let mut dlogits = Array2::zeros((b, 1));
            let mut batch_loss = 0.0;
            for (i, &pi) in chunk.iter().enumerate() {
                let y = pairs[pi].label as f64;
                let z = logits[[i, 0]] as f64;
                batch_loss += bce_from_logit(z, y);
                let s = 1.0 / (1.0 + (-z).exp());
                dlogits[[i, 0]] = ((s - y) / b as f64) as f32;
                if (s >= 0.5) == (pairs[pi].label == 1) {
                    correct += 1;
                }
            }
            batch_loss /= b as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite pair loss at epoch {epoch}")));
            }
            epoch_loss += batch_loss * b as f64;

            let (ddropped, dhead) = head.dense.backward(&dropped, &dlogits);
            let ddiff = ddropped * &mask;
            // d|h1-h2| -> both towers, with opposite signs.
            let mut dpooled = Array2::zeros((2 * b, embed));
            for i in 0..b {
                for c in 0..embed {
                    let g = ddiff[[i, c]] * sign[[i, c]];
                    dpooled[[i, c]] = g;
                    dpooled[[b + i, c]] = -g;
                }
            }
            let grads = out.model.describe_backward(&cache, &dpooled);
            Sgd::step(&mut out.model, &grads, lr);
            Sgd::step(&mut head.dense, &dhead, lr);
        }
        logs.push(FinetuneEpochLog {
            epoch,
            loss: epoch_loss / pairs.len() as f64,
            accuracy: correct as f64 / pairs.len() as f64,
        });
    }

    out.provenance.parent_checksum = Some(ckpt.weights_checksum());
    out.provenance.stage = Stage::Snn;
    out.provenance.history.push(StageRecord {
        stage: Stage::Snn,
        dataset: out.provenance.datasets.last().cloned().unwrap_or_default(),
        epochs: hp.epochs,
        seed: hp.seed,
    });
    out.head = Some(Head::Siamese(head));
    Ok((out, logs))
}

fn prep_image(img: &Array2<f32>, augment: &Option<AugmentationSpec>, rng: &mut ChaCha8Rng) -> Array2<f32> {
    match augment {
        Some(spec) => augment_image(img, spec, rng),
        None => img.clone(),
    }
}

/// Fine-tune encoder + attribute head against the transcripts' 604-bit
/// vectors.
pub fn train_phoc_head(
    ckpt: &EncoderCheckpoint,
    samples: &[WordSample],
    alphabet: &Alphabet,
    hp: &FinetuneHyperparams,
) -> Result<(EncoderCheckpoint, Vec<FinetuneEpochLog>)> {
    require_stage(ckpt, &[Stage::Snn, Stage::Pretrained, Stage::Adapted])?;
    hp.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("no labeled samples".into()));
    }
    // Targets are exactly the attribute vectors of the transcripts.
    let targets: Vec<Vec<f32>> = samples
        .iter()
        .map(|s| build_phoc(&s.transcript, alphabet).map(|v| v.to_f32()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut out = ckpt.clone();
    let embed = out.model.enc_cfg.embed_dim;
    let mut head = match Head::new_phoc(embed, hp.dropout, &mut rng) {
        Head::Phoc(h) => h,
        _ => unreachable!(),
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut logs = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let lr = step_decay_lr(epoch, hp.lr0, hp.gamma, hp.decay_every);
        let mut epoch_loss = 0.0;
        let mut bit_hits = 0usize;
        for chunk in order.chunks(hp.batch_size) {
            let b = chunk.len();
            let images: Vec<Array2<f32>> = chunk
                .iter()
                .map(|&i| prep_image(&samples[i].image, &hp.augment, &mut rng))
                .collect();
            let (pooled, cache) = out.model.describe_batch_train(&images)?;
            let mask = dropout_mask::<f32>(&mut rng, (b, embed), hp.dropout);
            let dropped = &pooled * &mask;
            let logits = head.dense.forward(&dropped);

            // Loss: per-sample sum of bit-wise BCE, averaged over the
            // batch. Summing keeps per-logit gradients at a scale SGD can
            // move in tens of epochs.
            let mut dlogits = Array2::zeros((b, PHOC_BITS));
            let mut batch_loss = 0.0;
            for (i, &si) in chunk.iter().enumerate() {
                for c in 0..PHOC_BITS {
                    let y = targets[si][c] as f64;
                    let z = logits[[i, c]] as f64;
                    batch_loss += bce_from_logit(z, y);
                    let s = 1.0 / (1.0 + (-z).exp());
                    dlogits[[i, c]] = ((s - y) / b as f64) as f32;
                    if (s >= 0.5) == (y == 1.0) {
                        bit_hits += 1;
                    }
                }
            }
            batch_loss /= b as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite attribute loss at epoch {epoch}")));
            }
            epoch_loss += batch_loss * b as f64;

            let (ddropped, dhead) = head.dense.backward(&dropped, &dlogits);
            let dpooled = ddropped * &mask;
            let grads = out.model.describe_backward(&cache, &dpooled);
            Sgd::step(&mut out.model, &grads, lr);
            Sgd::step(&mut head.dense, &dhead, lr);
        }
        logs.push(FinetuneEpochLog {
            epoch,
            loss: epoch_loss / samples.len() as f64,
            accuracy: bit_hits as f64 / (samples.len() * PHOC_BITS) as f64,
        });
    }

    out.provenance.parent_checksum = Some(ckpt.weights_checksum());
    out.provenance.stage = Stage::Phoc;
    out.provenance.history.push(StageRecord {
        stage: Stage::Phoc,
        dataset: out.provenance.datasets.last().cloned().unwrap_or_default(),
        epochs: hp.epochs,
        seed: hp.seed,
    });
    out.head = Some(Head::Phoc(head));
    out.bigrams = Some(alphabet.clone());
    Ok((out, logs))
}

/// Retrieval feature: the pooled encoder output feeding the attribute
/// head's dense layer (not the 604-dim sigmoid output). Requires an
/// attribute-aligned checkpoint.
pub fn extract_feature(ckpt: &EncoderCheckpoint, image: &Array2<f32>) -> Result<Array1<f32>> {
    require_stage(ckpt, &[Stage::Phoc])?;
    match &ckpt.head {
        Some(Head::Phoc(_)) => ckpt.model.describe(image),
        _ => Err(Error::Stage {
            expected: "phoc head attached".into(),
            got: "no attribute head".into(),
        }),
    }
}

/// Stage-appropriate retrieval feature: attribute-aligned checkpoints use
/// [`extract_feature`]'s contract, everything else the pooled descriptor.
pub fn retrieval_feature(ckpt: &EncoderCheckpoint, image: &Array2<f32>) -> Result<Array1<f32>> {
    match ckpt.stage() {
        Stage::Phoc => extract_feature(ckpt, image),
        _ => describe(ckpt, image),
    }
}
