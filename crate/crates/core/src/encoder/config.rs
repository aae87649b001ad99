use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How deep prompts enter layers after the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeepPromptMode {
    /// Overwrite the prompt rows produced by the previous layer.
    Replace,
    /// Insert fresh prompt rows next to the previous ones.
    Append,
}

/// Shape of the dual encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub image_width: usize,
    pub text_width: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub vocab_size: usize,
    pub max_text_len: usize,
    pub temperature: f64,
    /// Prompt rows `m` per depth.
    pub prompt_len: usize,
    /// Number of leading layers that receive prompts.
    pub prompt_depth: usize,
    pub deep_mode: DeepPromptMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 64,
            patch_size: 8,
            image_width: 64,
            text_width: 64,
            embed_dim: 32,
            layers: 4,
            heads: 4,
            mlp_ratio: 4,
            vocab_size: 52,
            max_text_len: 8,
            temperature: 0.07,
            prompt_len: 2,
            prompt_depth: 3,
            deep_mode: DeepPromptMode::Replace,
        }
    }
}

impl EncoderConfig {
    /// A smaller encoder for experiments on a single core.
    pub fn compact() -> Self {
        EncoderConfig {
            image_size: 32,
            patch_size: 8,
            image_width: 32,
            text_width: 32,
            embed_dim: 512,
            layers: 3,
            heads: 2,
            mlp_ratio: 2,
            prompt_depth: 2,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Image sequence length once prompts are present: CLS, prompts, patches.
    pub fn image_seq_len(&self, prompted: bool) -> usize {
        let extra = match (prompted, self.deep_mode) {
            (false, _) => 0,
            (true, DeepPromptMode::Replace) => self.prompt_len,
            (true, DeepPromptMode::Append) => self.prompt_len * self.prompt_depth,
        };
        1 + extra + self.num_patches()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_dim == 0 {
            return fail("embed_dim must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return fail(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.heads == 0 || self.image_width % self.heads != 0 || self.text_width % self.heads != 0 {
            return fail(format!("{} heads do not divide the channel widths", self.heads));
        }
        if self.layers == 0 || self.mlp_ratio == 0 || self.vocab_size == 0 || self.max_text_len == 0 {
            return fail("layers, mlp_ratio, vocab_size and max_text_len must be positive".into());
        }
        if self.prompt_len == 0 || self.prompt_depth == 0 || self.prompt_depth > self.layers {
            return fail(format!(
                "prompt_len must be positive and prompt_depth in 1..={}",
                self.layers
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sequence_length() {
        let c = EncoderConfig::default();
        c.validate().unwrap();
        assert_eq!(c.num_patches(), 64);
        assert_eq!(c.image_seq_len(true), 67);
        assert_eq!(c.image_seq_len(false), 65);
        EncoderConfig::compact().validate().unwrap();
    }

    #[test]
    fn invalid_configs() {
        let bad = EncoderConfig { patch_size: 7, ..EncoderConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { embed_dim: 0, ..EncoderConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { temperature: 0.0, ..EncoderConfig::default() };
        assert!(bad.validate().is_err());
    }
}
