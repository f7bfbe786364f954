//! In-process entry points for embedding the toolkit in training code.
//!
//! A [`Session`] holds an immutable configuration and produces exactly the
//! bytes the CLI would for the same record, seed and parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{augment, AugmentPolicy};
use crate::error::{Error, Result};
use crate::ingest::{layout_from_json, layout_to_json};
use crate::layout::{GeometricLayout, GridSpec};
use crate::mask::{build_mask, MaskParams};
use crate::prompt::{build_prompt, PromptOptions, PromptRecord};
use crate::token::TokenVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub seed: u64,
    pub w_bins: u32,
    pub h_bins: u32,
    pub prompt: PromptOptions,
    pub mask: MaskParams,
    pub augment: AugmentPolicy,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            w_bins: GridSpec::DEFAULT.w_bins,
            h_bins: GridSpec::DEFAULT.h_bins,
            prompt: PromptOptions::default(),
            mask: MaskParams::default(),
            augment: AugmentPolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
}

impl Session {
    pub fn new(config: SessionConfig) -> Result<Self> {
        GridSpec::new(config.w_bins, config.h_bins, 1, 1)?;
        config.mask.check()?;
        config.augment.check()?;
        Ok(Self { config })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut config: SessionConfig = toml::from_str(text).map_err(|e| Error::Decode(e.to_string()))?;
        // Re-run the policy loader so one-directional view swaps are completed.
        let policy_text = toml::to_string(&config.augment).map_err(|e| Error::Decode(e.to_string()))?;
        config.augment = AugmentPolicy::from_toml(&policy_text)?;
        Self::new(config)
    }

    pub fn from_config(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn vocabulary_for(&self, layout: &GeometricLayout) -> Result<TokenVocabulary> {
        Ok(TokenVocabulary::new(GridSpec::new(self.config.w_bins, self.config.h_bins, layout.width, layout.height)?))
    }

    pub fn encode_layout(&self, layout: &GeometricLayout) -> Result<PromptRecord> {
        build_prompt(layout, &self.vocabulary_for(layout)?, self.config.seed, &self.config.prompt)
    }

    /// Prompt text for one manifest-format layout record.
    pub fn encode(&self, record: &str) -> Result<String> {
        Ok(self.encode_layout(&layout_from_json(record)?)?.prompt)
    }

    /// Row-major f32 mask for one layout record, identical to the GEOM payload.
    pub fn mask(&self, record: &str, latent_w: u32, latent_h: u32) -> Result<Vec<f32>> {
        let layout = layout_from_json(record)?;
        crate::layout::ensure_valid(&layout)?;
        Ok(build_mask(&layout, latent_w, latent_h, self.config.mask)?.to_f32())
    }

    /// Runs the augmentation pipeline and returns the canonical layout record.
    pub fn augment(&self, record: &str) -> Result<String> {
        let layout = layout_from_json(record)?;
        crate::layout::ensure_valid(&layout)?;
        Ok(layout_to_json(&augment(&layout, &self.config.augment, self.config.seed)?))
    }
}
