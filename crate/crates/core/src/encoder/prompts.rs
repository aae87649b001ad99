use rand::Rng;

use super::EncoderConfig;
use crate::autograd::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Learnable textual prompts per depth and the linear coupling that derives
/// the visual prompts from them.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    /// `depth` matrices of shape `[m, c_T]`.
    pub text: Vec<Tensor>,
    /// `[c_T, c_I]`; visual prompts are `p_T · coupling`.
    pub coupling: Tensor,
}

impl PromptSet {
    pub fn init<R: Rng>(config: &EncoderConfig, rng: &mut R) -> Self {
        let text = (0..config.prompt_depth)
            .map(|_| Tensor::randn(&[config.prompt_len, config.text_width], 0.02, rng))
            .collect();
        let coupling = Tensor::randn(
            &[config.text_width, config.image_width],
            1.0 / (config.text_width as f64).sqrt(),
            rng,
        );
        PromptSet { text, coupling }
    }

    /// Starting prompts for `backbone`: its pretrained context prompts when
    /// it has them, otherwise random prompts scaled to its token streams
    /// (textual prompts match the spread of the token embeddings and the
    /// coupling maps them to rows of unit RMS).
    pub fn init_for<R: Rng>(backbone: &super::Backbone, rng: &mut R) -> Self {
        if let Some(p) = backbone.context_prompts() {
            return p.clone();
        }
        let config = backbone.config();
        let tokens = &backbone.weights()["text.token"];
        let rms = (tokens.data().iter().map(|v| v * v).sum::<f64>() / tokens.numel() as f64)
            .sqrt()
            .max(1e-3);
        let text = (0..config.prompt_depth)
            .map(|_| Tensor::randn(&[config.prompt_len, config.text_width], rms, rng))
            .collect();
        let coupling = Tensor::randn(
            &[config.text_width, config.image_width],
            1.0 / (rms * (config.text_width as f64).sqrt()),
            rng,
        );
        PromptSet { text, coupling }
    }

    pub fn depth(&self) -> usize {
        self.text.len()
    }

    pub fn len(&self) -> usize {
        self.text.first().map_or(0, Tensor::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `p_V = φ(p_T)` for one depth.
    pub fn couple_prompts(&self, text_prompt: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = tape.constant(text_prompt.clone());
        if p.value().cols() != self.coupling.rows() {
            return Err(Error::Shape(format!(
                "prompt width {} does not match coupling input {}",
                p.value().cols(),
                self.coupling.rows()
            )));
        }
        let v = p.matmul(tape.constant(self.coupling.clone())).value();
        Ok((*v).clone())
    }

    pub fn check(&self, config: &EncoderConfig) -> Result<()> {
        if self.text.len() != config.prompt_depth {
            return Err(Error::Shape(format!(
                "{} prompt depths, encoder expects {}",
                self.text.len(),
                config.prompt_depth
            )));
        }
        for t in &self.text {
            if t.shape() != [config.prompt_len, config.text_width] {
                return Err(Error::Shape(format!(
                    "text prompt {:?}, expected [{}, {}]",
                    t.shape(),
                    config.prompt_len,
                    config.text_width
                )));
            }
        }
        if self.coupling.shape() != [config.text_width, config.image_width] {
            return Err(Error::Shape(format!(
                "coupling {:?}, expected [{}, {}]",
                self.coupling.shape(),
                config.text_width,
                config.image_width
            )));
        }
        Ok(())
    }

    /// Every trainable tensor in a fixed order: text prompts, then coupling.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.text.iter().chain(std::iter::once(&self.coupling)).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.text.iter_mut().chain(std::iter::once(&mut self.coupling)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} prompt parameters",
                values.len(),
                self.num_params()
            )));
        }
        let mut k = 0;
        for t in self.tensors_mut() {
            let n = t.numel();
            t.data_mut().copy_from_slice(&values[k..k + n]);
            k += n;
        }
        Ok(())
    }

    /// Puts the prompts on `tape`; `trainable` makes them gradient leaves.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> PromptVars<'t> {
        let leaf = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let text: Vec<Var<'t>> = self.text.iter().map(leaf).collect();
        let coupling = leaf(&self.coupling);
        let visual = text.iter().map(|p| p.matmul(coupling)).collect();
        PromptVars { text, coupling, visual }
    }
}

/// Prompt leaves on a tape together with the derived visual prompts.
#[derive(Clone, Debug)]
pub struct PromptVars<'t> {
    pub text: Vec<Var<'t>>,
    pub coupling: Var<'t>,
    pub visual: Vec<Var<'t>>,
}

impl<'t> PromptVars<'t> {
    pub fn leaves(&self) -> Vec<Var<'t>> {
        self.text.iter().copied().chain(std::iter::once(self.coupling)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_and_identity_coupling() {
        let cfg = EncoderConfig::compact();
        let mut p = PromptSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        let pt = p.text[0].clone();
        p.coupling = Tensor::zeros(&[cfg.text_width, cfg.image_width]);
        assert!(p.couple_prompts(&pt).unwrap().data().iter().all(|&v| v == 0.0));
        let c = cfg.text_width;
        let mut eye = Tensor::zeros(&[c, c]);
        for i in 0..c {
            eye.data_mut()[i * c + i] = 1.0;
        }
        p.coupling = eye;
        assert_eq!(p.couple_prompts(&pt).unwrap(), pt);
    }

    #[test]
    fn flat_round_trip() {
        let cfg = EncoderConfig::compact();
        let p = PromptSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let mut q = PromptSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(2));
        q.set_flat(&p.flat()).unwrap();
        assert_eq!(p, q);
        assert!(q.set_flat(&[0.0]).is_err());
    }
}
