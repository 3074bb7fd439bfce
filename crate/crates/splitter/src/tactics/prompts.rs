//! Versioned prompt assets. The builtin texts ship with the binary;
//! config can point any of them at an override file. Their hashes are
//! recorded in every run log so results can be tied to exact prompt
//! wording.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::config::PromptsConfig;

const CLASSIFIER: &str = include_str!("../../assets/prompts/classifier.txt");
const COMPRESSOR: &str = include_str!("../../assets/prompts/compressor.txt");
const REVIEWER: &str = include_str!("../../assets/prompts/reviewer.txt");
const INTENT: &str = include_str!("../../assets/prompts/intent.txt");
const BATCH: &str = include_str!("../../assets/prompts/batch.txt");
const HUNKS: &str = include_str!("../../assets/prompts/hunks.txt");

#[derive(Debug, Clone)]
pub struct PromptAssets {
    pub classifier: String,
    pub compressor: String,
    pub reviewer: String,
    pub intent: String,
    pub batch: String,
    pub hunks: String,
}

impl Default for PromptAssets {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptAssets {
    pub fn builtin() -> Self {
        Self {
            classifier: CLASSIFIER.to_string(),
            compressor: COMPRESSOR.to_string(),
            reviewer: REVIEWER.to_string(),
            intent: INTENT.to_string(),
            batch: BATCH.to_string(),
            hunks: HUNKS.to_string(),
        }
    }

    /// Builtin assets with per-file config overrides applied.
    pub fn load(config: &PromptsConfig) -> std::io::Result<Self> {
        let mut assets = Self::builtin();
        for (slot, path) in [
            (&mut assets.classifier, &config.classifier),
            (&mut assets.compressor, &config.compressor),
            (&mut assets.reviewer, &config.reviewer),
            (&mut assets.intent, &config.intent),
            (&mut assets.batch, &config.batch),
            (&mut assets.hunks, &config.hunks),
        ] {
            if let Some(path) = path {
                *slot = std::fs::read_to_string(path)?;
            }
        }
        Ok(assets)
    }

    /// SHA-256 of each asset, keyed by asset name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        let mut map = BTreeMap::new();
        for (name, text) in [
            ("classifier", &self.classifier),
            ("compressor", &self.compressor),
            ("reviewer", &self.reviewer),
            ("intent", &self.intent),
            ("batch", &self.batch),
            ("hunks", &self.hunks),
        ] {
            map.insert(name.to_string(), hex::encode(Sha256::digest(text.as_bytes())));
        }
        map
    }
}

/// First line of an asset — the stable marker scripted mocks key on.
pub fn marker(asset: &str) -> &str {
    asset.lines().next().unwrap_or("")
}
