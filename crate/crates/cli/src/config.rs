use std::path::Path;

use serde::{Deserialize, Serialize};

use kvmem_core::model::ModelConfig;
use kvmem_core::training::TrainConfig;
use kvmem_core::{Error, Result};

/// Architecture of a freshly initialized model. The vocabulary size comes
/// from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub prefix_len: usize,
    pub key_layer: usize,
    pub concat_layer: usize,
    pub value_layer: usize,
    pub top_k: usize,
    pub max_input_len: usize,
    pub max_target_len: usize,
    /// Most frequent tokens kept when building the vocabulary.
    pub max_vocab: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape {
            encoder_layers: 4,
            decoder_layers: 1,
            hidden: 32,
            heads: 2,
            ff_hidden: 64,
            prefix_len: 2,
            key_layer: 2,
            concat_layer: 2,
            value_layer: 4,
            top_k: 8,
            max_input_len: 24,
            max_target_len: 8,
            max_vocab: 50_000,
        }
    }
}

impl ModelShape {
    pub fn config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            hidden: self.hidden,
            heads: self.heads,
            ff_hidden: self.ff_hidden,
            vocab_size,
            prefix_len: self.prefix_len,
            key_layer: self.key_layer,
            concat_layer: self.concat_layer,
            value_layer: self.value_layer,
            top_k: self.top_k,
            max_input_len: self.max_input_len,
            max_target_len: self.max_target_len,
        }
    }
}

/// Contents of a `--config` TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelShape,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
    }
}
