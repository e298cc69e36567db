//! Encoder checkpoints: weights, configuration and training provenance.
//!
//! On-disk layout, one directory per checkpoint:
//!
//! * `config.json` — encoder/decoder configuration and provenance
//! * `weights.bin` — little-endian f32 tensors, concatenated
//! * `weights_manifest.json` — `{name, offset, shape}` per tensor, in file order
//! * `head_weights.bin` + `head_weights_manifest.json` — fine-tuning head, if any
//! * `bigrams.txt` — the attribute alphabet's bigram list, if attached
//!
//! Offsets are byte offsets into the `.bin` file. Loading then saving is
//! lossless: every weight round-trips bit-identically.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::finetune::Head;
use crate::nn::Params;
use crate::phoc::Alphabet;
use crate::vitmae::{DecoderConfig, EncoderConfig, MaeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrained,
    Adapted,
    Snn,
    Phoc,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Pretrained => "pretrained",
            Stage::Adapted => "adapted",
            Stage::Snn => "snn",
            Stage::Phoc => "phoc",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One completed training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub dataset: String,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: Stage,
    /// Every dataset this encoder has seen, in order.
    pub datasets: Vec<String>,
    pub seed: u64,
    pub history: Vec<StageRecord>,
    /// Checksum of the checkpoint this one was trained from.
    pub parent_checksum: Option<String>,
    /// Checksum of the manifest the training corpus came from.
    pub corpus_checksum: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EncoderCheckpoint {
    pub model: MaeModel<f32>,
    pub provenance: Provenance,
    pub head: Option<Head>,
    pub bigrams: Option<Alphabet>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigFile {
    encoder: EncoderConfig,
    decoder: DecoderConfig,
    provenance: Provenance,
    /// The decoder is only needed to continue masked pretraining.
    decoder_discardable: bool,
    head: Option<String>,
    bigram_file: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightEntry {
    name: String,
    /// Byte offset into the weights file.
    offset: u64,
    shape: Vec<usize>,
}

fn dump_params<F, P>(params: &P) -> (Vec<u8>, Vec<WeightEntry>)
where
    F: crate::nn::Scalar,
    P: Params<F>,
{
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    params.visit(&mut |name, shape, data| {
        entries.push(WeightEntry {
            name: name.to_string(),
            offset: bytes.len() as u64,
            shape: shape.to_vec(),
        });
        for v in data {
            bytes.extend_from_slice(&(v.to_f64().unwrap() as f32).to_le_bytes());
        }
    });
    (bytes, entries)
}

fn load_params<P: Params<f32>>(params: &mut P, bytes: &[u8], entries: &[WeightEntry]) -> Result<()> {
    let mut idx = 0;
    let mut err = None;
    params.visit_mut(&mut |name, shape, data| {
        if err.is_some() {
            return;
        }
        let Some(entry) = entries.get(idx) else {
            err = Some(format!("weights manifest too short at {name}"));
            return;
        };
        if entry.name != name || entry.shape != shape {
            err = Some(format!(
                "weights manifest mismatch: expected {name} {shape:?}, found {} {:?}",
                entry.name, entry.shape
            ));
            return;
        }
        let count: usize = shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 4 * count;
        if end > bytes.len() {
            err = Some(format!("weights file truncated at {name}"));
            return;
        }
        for (i, chunk) in bytes[start..end].chunks_exact(4).enumerate() {
            data[i] = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        idx += 1;
    });
    if let Some(msg) = err {
        return Err(Error::Data(msg));
    }
    if idx != entries.len() {
        return Err(Error::Data(format!(
            "weights manifest has {} extra tensors",
            entries.len() - idx
        )));
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

impl EncoderCheckpoint {
    pub fn new(model: MaeModel<f32>, provenance: Provenance) -> Self {
        Self {
            model,
            provenance,
            head: None,
            bigrams: None,
        }
    }

    pub fn stage(&self) -> Stage {
        self.provenance.stage
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let (bytes, entries) = dump_params(&self.model);
        write(&dir.join("weights.bin"), &bytes)?;
        write(
            &dir.join("weights_manifest.json"),
            serde_json::to_string_pretty(&entries)?.as_bytes(),
        )?;

        if let Some(head) = &self.head {
            let (hb, he) = dump_params(head);
            write(&dir.join("head_weights.bin"), &hb)?;
            write(
                &dir.join("head_weights_manifest.json"),
                serde_json::to_string_pretty(&he)?.as_bytes(),
            )?;
        }

        if let Some(bigrams) = &self.bigrams {
            bigrams.to_file(&dir.join("bigrams.txt"))?;
        }

        let cfg = ConfigFile {
            encoder: self.model.enc_cfg.clone(),
            decoder: self.model.dec_cfg.clone(),
            provenance: self.provenance.clone(),
            decoder_discardable: true,
            head: self.head.as_ref().map(|h| h.kind().to_string()),
            bigram_file: self.bigrams.as_ref().map(|_| "bigrams.txt".to_string()),
        };
        write(&dir.join("config.json"), serde_json::to_string_pretty(&cfg)?.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join("config.json");
        if !cfg_path.exists() {
            return Err(Error::MissingArtifact {
                what: "checkpoint".into(),
                stage: "pretrain".into(),
                path: dir.to_path_buf(),
            });
        }
        let cfg: ConfigFile = serde_json::from_slice(&read(&cfg_path)?)?;

        let mut model = MaeModel::zeros(cfg.encoder.clone(), cfg.decoder.clone())?;
        let entries: Vec<WeightEntry> =
            serde_json::from_slice(&read(&dir.join("weights_manifest.json"))?)?;
        load_params(&mut model, &read(&dir.join("weights.bin"))?, &entries)?;
        model.rebuild_positional_tables();

        let head = match cfg.head.as_deref() {
            None => None,
            Some(kind) => {
                let entries: Vec<WeightEntry> =
                    serde_json::from_slice(&read(&dir.join("head_weights_manifest.json"))?)?;
                let mut head = Head::zeros(kind, cfg.encoder.embed_dim)?;
                load_params(&mut head, &read(&dir.join("head_weights.bin"))?, &entries)?;
                Some(head)
            }
        };

        let bigrams = match cfg.bigram_file.as_deref() {
            None => None,
            Some(name) => Some(Alphabet::from_file(&dir.join(name))?),
        };

        Ok(Self {
            model,
            provenance: cfg.provenance,
            head,
            bigrams,
        })
    }

    /// Content checksum: weights, head weights and configuration.
    pub fn checksum_dir(dir: &Path) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(read(&dir.join("weights.bin"))?);
        let head = dir.join("head_weights.bin");
        if head.exists() {
            hasher.update(read(&head)?);
        }
        hasher.update(read(&dir.join("config.json"))?);
        Ok(hex_digest(hasher))
    }

    /// Checksum of the in-memory checkpoint, matching what
    /// [`EncoderCheckpoint::checksum_dir`] would report after a save.
    pub fn weights_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(dump_params(&self.model).0);
        if let Some(head) = &self.head {
            hasher.update(dump_params(head).0);
        }
        hex_digest(hasher)
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Checksum of an arbitrary artifact file.
pub fn file_checksum(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(read(path)?);
    Ok(hex_digest(hasher))
}

/// Expect a checkpoint in one of `stages`.
pub fn require_stage(ckpt: &EncoderCheckpoint, stages: &[Stage]) -> Result<()> {
    if stages.contains(&ckpt.provenance.stage) {
        return Ok(());
    }
    Err(Error::Stage {
        expected: stages.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("|"),
        got: ckpt.provenance.stage.as_str().into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vitmae::{DecoderConfig, EncoderConfig, Pooling};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_ckpt(seed: u64) -> EncoderCheckpoint {
        let enc = EncoderConfig {
            embed_dim: 16,
            n_layers: 1,
            n_heads: 2,
            mlp_ratio: 2.0,
            patch_size: 32,
            pooling: Pooling::Mean,
        };
        let dec = DecoderConfig {
            embed_dim: 8,
            n_layers: 1,
            n_heads: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = MaeModel::new(enc, dec, &mut rng).unwrap();
        EncoderCheckpoint::new(
            model,
            Provenance {
                stage: Stage::Pretrained,
                datasets: vec!["synthetic".into()],
                seed,
                history: vec![StageRecord {
                    stage: Stage::Pretrained,
                    dataset: "synthetic".into(),
                    epochs: 0,
                    seed,
                }],
                parent_checksum: None,
                corpus_checksum: None,
            },
        )
    }

    #[test]
    fn save_load_round_trip_is_bit_stable() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = tiny_ckpt(3);
        ckpt.save(dir.path()).unwrap();
        let loaded = EncoderCheckpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.model, ckpt.model);
        assert_eq!(loaded.provenance, ckpt.provenance);

        // Saving the loaded checkpoint reproduces the files byte for byte.
        let dir2 = tempfile::tempdir().unwrap();
        loaded.save(dir2.path()).unwrap();
        for f in ["weights.bin", "weights_manifest.json", "config.json"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn head_and_bigrams_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut ckpt = tiny_ckpt(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        ckpt.head = Some(Head::new_phoc(16, 0.5, &mut rng));
        ckpt.provenance.stage = Stage::Phoc;
        let bigrams =
            crate::phoc::top_bigrams(&["the".into(), "quick".into(), "brown".into(), "fox".into(), "jumps".into()], 50).unwrap();
        ckpt.bigrams = Some(Alphabet::new(bigrams).unwrap());
        ckpt.save(dir.path()).unwrap();

        let loaded = EncoderCheckpoint::load(dir.path()).unwrap();
        assert_eq!(loaded.head.as_ref().map(|h| h.kind()), Some("phoc"));
        match (&loaded.head, &ckpt.head) {
            (Some(Head::Phoc(a)), Some(Head::Phoc(b))) => assert_eq!(a.dense, b.dense),
            other => panic!("unexpected heads {other:?}"),
        }
        assert_eq!(loaded.bigrams, ckpt.bigrams);
    }

    #[test]
    fn checksum_tracks_content() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        tiny_ckpt(1).save(d1.path()).unwrap();
        tiny_ckpt(1).save(d2.path()).unwrap();
        assert_eq!(
            EncoderCheckpoint::checksum_dir(d1.path()).unwrap(),
            EncoderCheckpoint::checksum_dir(d2.path()).unwrap()
        );
        let d3 = tempfile::tempdir().unwrap();
        tiny_ckpt(2).save(d3.path()).unwrap();
        assert_ne!(
            EncoderCheckpoint::checksum_dir(d1.path()).unwrap(),
            EncoderCheckpoint::checksum_dir(d3.path()).unwrap()
        );
    }

    #[test]
    fn missing_checkpoint_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let err = EncoderCheckpoint::load(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn stage_gate() {
        let ckpt = tiny_ckpt(5);
        assert!(require_stage(&ckpt, &[Stage::Pretrained, Stage::Adapted]).is_ok());
        let err = require_stage(&ckpt, &[Stage::Phoc]).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }
}
