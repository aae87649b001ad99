use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DeepPromptMode, EncoderConfig, PromptSet, PromptVars};
use crate::autograd::{concat_rows, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::instrument;
use crate::scenedata::TokenId;

/// Weights of both encoders, keyed by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    config: EncoderConfig,
    weights: BTreeMap<String, Tensor>,
    /// Prompts learned together with the weights, the starting point for tuning.
    context: Option<PromptSet>,
}

fn block_shapes(prefix: &str, c: usize, ratio: usize, out: &mut Vec<(String, Vec<usize>)>) {
    let mut add = |name: &str, shape: Vec<usize>| out.push((format!("{prefix}.{name}"), shape));
    add("ln1.g", vec![c]);
    add("ln1.b", vec![c]);
    add("attn.qkv.w", vec![c, 3 * c]);
    add("attn.qkv.b", vec![3 * c]);
    add("attn.out.w", vec![c, c]);
    add("attn.out.b", vec![c]);
    add("ln2.g", vec![c]);
    add("ln2.b", vec![c]);
    add("mlp.fc.w", vec![c, ratio * c]);
    add("mlp.fc.b", vec![ratio * c]);
    add("mlp.proj.w", vec![ratio * c, c]);
    add("mlp.proj.b", vec![c]);
}

/// Names and shapes of every backbone weight, in initialization order.
pub fn weight_shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (ci, ct, d) = (config.image_width, config.text_width, config.embed_dim);
    let p = config.patch_size;
    let mut out = vec![
        ("visual.patch.w".to_string(), vec![3 * p * p, ci]),
        ("visual.patch.b".to_string(), vec![ci]),
        ("visual.cls".to_string(), vec![1, ci]),
        ("visual.pos".to_string(), vec![config.num_patches() + 1, ci]),
        ("visual.ln_pre.g".to_string(), vec![ci]),
        ("visual.ln_pre.b".to_string(), vec![ci]),
    ];
    for l in 0..config.layers {
        block_shapes(&format!("visual.block{l}"), ci, config.mlp_ratio, &mut out);
    }
    out.push(("visual.ln_post.g".into(), vec![ci]));
    out.push(("visual.ln_post.b".into(), vec![ci]));
    out.push(("visual.proj".into(), vec![ci, d]));
    out.push(("text.token".into(), vec![config.vocab_size, ct]));
    out.push(("text.pos".into(), vec![config.max_text_len, ct]));
    for l in 0..config.layers {
        block_shapes(&format!("text.block{l}"), ct, config.mlp_ratio, &mut out);
    }
    out.push(("text.ln_final.g".into(), vec![ct]));
    out.push(("text.ln_final.b".into(), vec![ct]));
    out.push(("text.proj".into(), vec![ct, d]));
    out
}

impl Backbone {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = BTreeMap::new();
        for (name, shape) in weight_shapes(config) {
            let t = if name.ends_with(".g") {
                Tensor::ones(&shape)
            } else if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else if name.ends_with(".pos") {
                Tensor::randn(&shape, 0.01, &mut rng)
            } else if name.ends_with(".cls") || name.ends_with(".token") {
                Tensor::randn(&shape, 0.02, &mut rng)
            } else {
                Tensor::randn(&shape, 1.0 / (shape[0] as f64).sqrt(), &mut rng)
            };
            weights.insert(name, t);
        }
        Ok(Backbone {
            config: config.clone(),
            weights,
            context: None,
        })
    }

    /// Rebuilds a backbone from named weights, checking names and shapes.
    pub fn from_weights(config: EncoderConfig, weights: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let expected = weight_shapes(&config);
        if expected.len() != weights.len() {
            return Err(Error::Shape(format!(
                "{} weights, encoder config expects {}",
                weights.len(),
                expected.len()
            )));
        }
        for (name, shape) in &expected {
            let w = weights
                .get(name)
                .ok_or_else(|| Error::Lookup(format!("missing weight `{name}`")))?;
            if w.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "weight `{name}` is {:?}, expected {shape:?}",
                    w.shape()
                )));
            }
        }
        Ok(Backbone {
            config,
            weights,
            context: None,
        })
    }

    pub fn context_prompts(&self) -> Option<&PromptSet> {
        self.context.as_ref()
    }

    pub fn set_context_prompts(&mut self, prompts: Option<PromptSet>) -> Result<()> {
        if let Some(p) = &prompts {
            p.check(&self.config)?;
        }
        self.context = prompts;
        Ok(())
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &BTreeMap<String, Tensor> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.values().map(Tensor::numel).sum()
    }

    /// Places every weight on `tape`, as gradient leaves when `trainable`.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> BackboneVars<'t> {
        let vars = self
            .weights
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        BackboneVars {
            config: self.config.clone(),
            vars,
            context: self.context.as_ref().map(|p| p.on_tape(tape, false)),
        }
    }

    /// Unit feature of one image plus its final-block patch activation
    /// `A` (`[n, c_I]`, one row per patch).
    pub fn encode_image(&self, image: &Tensor, prompts: Option<&PromptSet>) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let w = self.on_tape(&tape, false);
        let pv = prompts.map(|p| p.on_tape(&tape, false));
        let enc = w.encode_images(std::slice::from_ref(image), pv.as_ref())?;
        let tap = enc.patch_rows(&enc.tap.value(), 0);
        Ok((Tensor::vector(enc.features.value().data().to_vec()), tap))
    }

    /// `[b, d]` unit features of a batch of images.
    pub fn encode_images(&self, images: &[Tensor], prompts: Option<&PromptSet>) -> Result<Tensor> {
        let tape = Tape::new();
        let w = self.on_tape(&tape, false);
        let pv = prompts.map(|p| p.on_tape(&tape, false));
        let enc = w.encode_images(images, pv.as_ref())?;
        let out = (*enc.features.value()).clone();
        Ok(out)
    }

    pub fn encode_text(&self, tokens: &[TokenId], prompts: Option<&PromptSet>) -> Result<Tensor> {
        let t = self.encode_texts(&[tokens.to_vec()], prompts)?;
        Ok(Tensor::vector(t.into_data()))
    }

    /// `[k, d]` unit features of token sequences.
    pub fn encode_texts(&self, tokens: &[Vec<TokenId>], prompts: Option<&PromptSet>) -> Result<Tensor> {
        let tape = Tape::new();
        let w = self.on_tape(&tape, false);
        let pv = prompts.map(|p| p.on_tape(&tape, false));
        let out = (*w.encode_texts(tokens, pv.as_ref())?.value()).clone();
        Ok(out)
    }
}

/// Backbone weights placed on a tape.
pub struct BackboneVars<'t> {
    config: EncoderConfig,
    vars: BTreeMap<String, Var<'t>>,
    /// Context prompts used when a pass is given no prompts.
    context: Option<PromptVars<'t>>,
}

/// Output of a batched image pass.
#[derive(Clone, Debug)]
pub struct ImageEncoding<'t> {
    /// `[b, d]`, unit rows.
    pub features: Var<'t>,
    /// Layer-normalized input of the final block's attention, `[b·seq, c_I]`.
    pub tap: Var<'t>,
    pub batch: usize,
    pub seq_len: usize,
    pub num_patches: usize,
}

impl ImageEncoding<'_> {
    /// Patch rows of sample `b` from a `[b·seq, c]` tensor shaped like the tap.
    pub fn patch_rows(&self, t: &Tensor, b: usize) -> Tensor {
        let c = t.cols();
        let start = (b * self.seq_len + self.seq_len - self.num_patches) * c;
        Tensor::from_parts(
            vec![self.num_patches, c],
            t.data()[start..start + self.num_patches * c].to_vec(),
        )
    }
}

/// Rearranges `[3, h, w]` into `[n, 3·p·p]` rows in raster patch order.
pub fn patchify(image: &Tensor, config: &EncoderConfig) -> Result<Tensor> {
    let s = config.image_size;
    if image.shape() != [3, s, s] {
        return Err(Error::Shape(format!(
            "image {:?}, encoder expects [3, {s}, {s}]",
            image.shape()
        )));
    }
    if !image.all_finite() {
        return Err(Error::Numeric("image holds non-finite values".into()));
    }
    let (p, g) = (config.patch_size, config.grid());
    let mut out = Vec::with_capacity(3 * s * s);
    for gy in 0..g {
        for gx in 0..g {
            for ch in 0..3 {
                for py in 0..p {
                    let row = ch * s * s + (gy * p + py) * s + gx * p;
                    out.extend_from_slice(&image.data()[row..row + p]);
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![g * g, 3 * p * p], out))
}

impl<'t> BackboneVars<'t> {
    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn var(&self, name: &str) -> Var<'t> {
        self.vars[name]
    }

    /// Every weight leaf in name order.
    pub fn leaves(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }

    fn linear(&self, x: Var<'t>, prefix: &str) -> Var<'t> {
        x.matmul(self.var(&format!("{prefix}.w")))
            .add_broadcast(self.var(&format!("{prefix}.b")))
    }

    fn ln(&self, x: Var<'t>, prefix: &str) -> Var<'t> {
        x.layer_norm(self.var(&format!("{prefix}.g")), self.var(&format!("{prefix}.b")))
    }

    /// Pre-norm transformer block; also returns the attention input.
    fn block(&self, x: Var<'t>, prefix: &str, batch: usize, seq: usize) -> (Var<'t>, Var<'t>) {
        let h = self.ln(x, &format!("{prefix}.ln1"));
        let qkv = self.linear(h, &format!("{prefix}.attn.qkv"));
        let a = self.linear(qkv.attention(batch, seq, self.config.heads), &format!("{prefix}.attn.out"));
        let x = x.add(a);
        let h2 = self.ln(x, &format!("{prefix}.ln2"));
        let m = self.linear(self.linear(h2, &format!("{prefix}.mlp.fc")).gelu(), &format!("{prefix}.mlp.proj"));
        (x.add(m), h)
    }

    fn check_prompts(&self, prompts: Option<&PromptVars<'t>>) -> Result<()> {
        if let Some(p) = prompts {
            let cfg = &self.config;
            if p.text.len() != cfg.prompt_depth {
                return Err(Error::Shape(format!(
                    "{} prompt depths, encoder expects {}",
                    p.text.len(),
                    cfg.prompt_depth
                )));
            }
            for (t, v) in p.text.iter().zip(&p.visual) {
                if t.shape() != [cfg.prompt_len, cfg.text_width] || v.shape() != [cfg.prompt_len, cfg.image_width] {
                    return Err(Error::Shape(format!(
                        "prompt shapes {:?} / {:?} do not match the encoder",
                        t.shape(),
                        v.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Runs the transformer stack, injecting `prompts` (one per depth) at
    /// `offset` within every sequence.
    fn stack(
        &self,
        mut x: Var<'t>,
        tower: &str,
        batch: usize,
        mut seq: usize,
        offset: usize,
        prompts: Option<&[Var<'t>]>,
    ) -> (Var<'t>, Var<'t>, usize) {
        let mut tap = x;
        for l in 0..self.config.layers {
            if let Some(p) = prompts.and_then(|p| p.get(l)) {
                let append = l == 0 || self.config.deep_mode == DeepPromptMode::Append;
                x = x.insert_rows(*p, batch, seq, offset, !append);
                if append {
                    seq += self.config.prompt_len;
                }
            }
            let (next, ln1) = self.block(x, &format!("{tower}.block{l}"), batch, seq);
            x = next;
            tap = ln1;
        }
        (x, tap, seq)
    }

    /// Image tower over a batch: `{CLS, p_V, e_1..e_n}`, CLS pooled.
    pub fn encode_images(&self, images: &[Tensor], prompts: Option<&PromptVars<'t>>) -> Result<ImageEncoding<'t>> {
        if images.is_empty() {
            return Err(Error::Shape("empty image batch".into()));
        }
        let prompts = prompts.or(self.context.as_ref());
        self.check_prompts(prompts)?;
        let cfg = &self.config;
        let n = cfg.num_patches();
        let b = images.len();
        let mut flat = Vec::with_capacity(b * n * 3 * cfg.patch_size * cfg.patch_size);
        for im in images {
            flat.extend(patchify(im, cfg)?.into_data());
        }
        let tape = self.var("visual.cls").tape();
        let patches = tape.constant(Tensor::from_parts(vec![b * n, 3 * cfg.patch_size * cfg.patch_size], flat));
        let e = self.linear(patches, "visual.patch");
        let x = e
            .insert_rows(self.var("visual.cls"), b, n, 0, false)
            .add_broadcast(self.var("visual.pos"));
        let x = self.ln(x, "visual.ln_pre");
        let visual = prompts.map(|p| p.visual.as_slice());
        let (x, tap, seq) = self.stack(x, "visual", b, n + 1, 1, visual);
        let cls: Vec<usize> = (0..b).map(|i| i * seq).collect();
        let z = self
            .ln(x.gather_rows(&cls), "visual.ln_post")
            .matmul(self.var("visual.proj"))
            .normalize_rows();
        instrument::image_passes(b);
        Ok(ImageEncoding {
            features: z,
            tap,
            batch: b,
            seq_len: seq,
            num_patches: n,
        })
    }

    /// Text tower: `{p_T, t_1..t_l}`, pooled at the final (end) token.
    pub fn encode_texts(&self, tokens: &[Vec<TokenId>], prompts: Option<&PromptVars<'t>>) -> Result<Var<'t>> {
        if tokens.is_empty() {
            return Err(Error::Shape("no texts to encode".into()));
        }
        let prompts = prompts.or(self.context.as_ref());
        self.check_prompts(prompts)?;
        let cfg = &self.config;
        for t in tokens {
            if t.is_empty() || t.len() > cfg.max_text_len {
                return Err(Error::Shape(format!(
                    "text of {} tokens, allowed 1..={}",
                    t.len(),
                    cfg.max_text_len
                )));
            }
            if let Some(&bad) = t.iter().find(|&&id| id >= cfg.vocab_size) {
                return Err(Error::Vocabulary(format!("id {bad}")));
            }
        }
        // group equal lengths so each group is one packed batch
        let mut lengths: Vec<usize> = tokens.iter().map(Vec::len).collect();
        lengths.sort_unstable();
        lengths.dedup();
        let mut parts = Vec::new();
        let mut order = Vec::with_capacity(tokens.len());
        for &len in &lengths {
            let members: Vec<usize> = (0..tokens.len()).filter(|&i| tokens[i].len() == len).collect();
            let ids: Vec<usize> = members.iter().flat_map(|&i| tokens[i].iter().copied()).collect();
            let b = members.len();
            let x = self
                .var("text.token")
                .gather_rows(&ids)
                .add_broadcast(self.var("text.pos").slice_rows(0, len));
            let text = prompts.map(|p| p.text.as_slice());
            let (x, _, seq) = self.stack(x, "text", b, len, 0, text);
            let last: Vec<usize> = (0..b).map(|i| i * seq + seq - 1).collect();
            parts.push(x.gather_rows(&last));
            order.extend(members);
        }
        let pooled = if parts.len() == 1 { parts[0] } else { concat_rows(&parts) };
        let pooled = if order.iter().enumerate().all(|(k, &i)| k == i) {
            pooled
        } else {
            let mut inverse = vec![0; order.len()];
            for (k, &i) in order.iter().enumerate() {
                inverse[i] = k;
            }
            pooled.gather_rows(&inverse)
        };
        instrument::text_passes(tokens.len());
        Ok(self
            .ln(pooled, "text.ln_final")
            .matmul(self.var("text.proj"))
            .normalize_rows())
    }
}
