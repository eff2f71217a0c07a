use serde::{Deserialize, Serialize};

use crate::data::PREFIX_BASE;
use crate::error::{Error, Result};

/// Architecture and memory hyperparameters.
///
/// Layer taps are 1-based: `key_layer = 3` means the output of the third
/// encoder layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_hidden: usize,
    pub vocab_size: usize,
    pub prefix_len: usize,
    pub key_layer: usize,
    pub concat_layer: usize,
    pub value_layer: usize,
    /// Maximum number of retrieved pairs (number of slot rank embeddings).
    pub top_k: usize,
    /// Encoder positions, counting the prefix.
    pub max_input_len: usize,
    /// Decoder positions, counting the trailing EOS.
    pub max_target_len: usize,
}

/// The three encoder taps used by one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerTaps {
    pub key: usize,
    pub concat: usize,
    pub value: usize,
}

impl LayerTaps {
    /// Fast key, slow value.
    pub const FKSV: LayerTaps = LayerTaps {
        key: 3,
        concat: 3,
        value: 7,
    };
    /// Slow key, slow value.
    pub const SKSV: LayerTaps = LayerTaps {
        key: 3,
        concat: 10,
        value: 11,
    };

    pub fn validate(&self, encoder_layers: usize) -> Result<()> {
        if !(1 <= self.key && self.key <= self.concat && self.concat <= self.value && self.value <= encoder_layers) {
            return Err(Error::input(format!(
                "layer taps must satisfy 1 <= key ({}) <= concat ({}) <= value ({}) <= layers ({})",
                self.key, self.concat, self.value, encoder_layers
            )));
        }
        Ok(())
    }
}

impl ModelConfig {
    /// A 12-layer configuration with the given taps, sized for desk-scale runs.
    pub fn twelve_layer(vocab_size: usize, taps: LayerTaps) -> Self {
        ModelConfig {
            encoder_layers: 12,
            decoder_layers: 2,
            hidden: 64,
            heads: 4,
            ff_hidden: 128,
            vocab_size,
            prefix_len: 2,
            key_layer: taps.key,
            concat_layer: taps.concat,
            value_layer: taps.value,
            top_k: 4,
            max_input_len: 24,
            max_target_len: 8,
        }
    }

    /// A tiny two-layer model for gradient checks and unit tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            encoder_layers: 2,
            decoder_layers: 1,
            hidden: 16,
            heads: 2,
            ff_hidden: 32,
            vocab_size,
            prefix_len: 2,
            key_layer: 1,
            concat_layer: 1,
            value_layer: 2,
            top_k: 2,
            max_input_len: 12,
            max_target_len: 6,
        }
    }

    pub fn taps(&self) -> LayerTaps {
        LayerTaps {
            key: self.key_layer,
            concat: self.concat_layer,
            value: self.value_layer,
        }
    }

    pub fn with_taps(mut self, taps: LayerTaps) -> Self {
        self.key_layer = taps.key;
        self.concat_layer = taps.concat;
        self.value_layer = taps.value;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.taps().validate(self.encoder_layers)?;
        if self.prefix_len == 0 {
            return Err(Error::input("prefix length must be at least 1"));
        }
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::input(format!(
                "hidden size {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.decoder_layers == 0 || self.ff_hidden == 0 {
            return Err(Error::input("decoder layers and feed-forward size must be positive"));
        }
        if self.vocab_size < PREFIX_BASE + self.prefix_len + 1 {
            return Err(Error::input("vocabulary too small for the reserved ids"));
        }
        if self.max_input_len <= self.prefix_len || self.max_target_len == 0 {
            return Err(Error::input("maximum lengths too small"));
        }
        Ok(())
    }

    /// Named integer fields, in checkpoint order.
    pub(crate) fn fields(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("encoder_layers", self.encoder_layers as u64),
            ("decoder_layers", self.decoder_layers as u64),
            ("hidden", self.hidden as u64),
            ("heads", self.heads as u64),
            ("ff_hidden", self.ff_hidden as u64),
            ("vocab_size", self.vocab_size as u64),
            ("prefix_len", self.prefix_len as u64),
            ("key_layer", self.key_layer as u64),
            ("concat_layer", self.concat_layer as u64),
            ("value_layer", self.value_layer as u64),
            ("top_k", self.top_k as u64),
            ("max_input_len", self.max_input_len as u64),
            ("max_target_len", self.max_target_len as u64),
        ]
    }

    pub(crate) fn from_fields(fields: &[(String, u64)]) -> Result<Self> {
        let get = |name: &str| -> Result<usize> {
            fields
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v as usize)
                .ok_or_else(|| Error::format(format!("checkpoint config lacks {name}")))
        };
        let cfg = ModelConfig {
            encoder_layers: get("encoder_layers")?,
            decoder_layers: get("decoder_layers")?,
            hidden: get("hidden")?,
            heads: get("heads")?,
            ff_hidden: get("ff_hidden")?,
            vocab_size: get("vocab_size")?,
            prefix_len: get("prefix_len")?,
            key_layer: get("key_layer")?,
            concat_layer: get("concat_layer")?,
            value_layer: get("value_layer")?,
            top_k: get("top_k")?,
            max_input_len: get("max_input_len")?,
            max_target_len: get("max_target_len")?,
        };
        cfg.validate().map_err(|e| Error::format(e.to_string()))?;
        Ok(cfg)
    }
}
