//! A small vision-transformer encoder with shallow prompt insertion.
//!
//! Token layout is fixed as `[class, prompts..., patches...]`. Prompts are
//! inserted once, before the first block, and take part in self-attention of
//! every block. Only the patch tokens carry positional encodings. The
//! classification head (`LayerNorm` followed by a linear map) reads the class
//! token alone, so `logits = head(cls_feature)` where `cls_feature` is the raw
//! class token after the last block.

mod layers;
pub mod params;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{PldgError, Result};
use crate::util::{self, Rng};
use layers::{block_backward, block_forward, layer_norm, layer_norm_backward, BlockCache, LnCache};
pub use params::{BlockParams, EncoderParams, ParamSet};

/// Checkpoint format version written by this crate.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    4
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Desk-scale preset: 32×32 images, 4×4 patches, width 128, six blocks.
    pub fn desk() -> Self {
        EncoderConfig {
            image_size: 32,
            patch_size: 4,
            embed_dim: 128,
            depth: 6,
            num_heads: 4,
            num_classes: 2,
            drop_rate: 0.0,
            mlp_ratio: 4,
        }
    }

    /// ViT-Base/16 geometry at 224×224. Only useful with externally supplied weights.
    pub fn vitb16() -> Self {
        EncoderConfig {
            image_size: 224,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            num_classes: 2,
            drop_rate: 0.1,
            mlp_ratio: 4,
        }
    }

    /// Minimal geometry used by gradient checks and unit tests.
    pub fn tiny() -> Self {
        EncoderConfig {
            image_size: 8,
            patch_size: 4,
            embed_dim: 16,
            depth: 2,
            num_heads: 2,
            num_classes: 2,
            drop_rate: 0.0,
            mlp_ratio: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(PldgError::Config(msg));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image_size and patch_size must be positive".into());
        }
        if self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} is not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.depth < 1 {
            return fail("depth must be at least 1".into());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return fail(format!("drop_rate {} outside [0, 1)", self.drop_rate));
        }
        if self.mlp_ratio == 0 {
            return fail("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn pixels_per_image(&self) -> usize {
        self.image_size * self.image_size * 3
    }

    pub fn mlp_hidden(&self) -> usize {
        self.embed_dim * self.mlp_ratio
    }

    /// Total sequence length for `s` prompt tokens.
    pub fn seq_len(&self, prompt_len: usize) -> usize {
        1 + prompt_len + self.num_patches()
    }
}

/// Cached activations of one sample's forward pass, consumed by [`Encoder::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    patches: Array2<f64>,
    prompt_len: usize,
    blocks: Vec<BlockCache>,
    head_ln: LnCache,
    head_in: Array1<f64>,
    /// Class token after the last block.
    pub cls_feature: Array1<f64>,
    pub logits: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(seed);
        let params = EncoderParams::init(&config, &mut rng);
        Ok(Encoder { config, params })
    }

    pub fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_image(&self, image: &[f32]) -> Result<()> {
        let want = self.config.pixels_per_image();
        if image.len() != want {
            return Err(PldgError::Config(format!(
                "image length {} does not match image_size {} (expected {} values for {}x{}x3)",
                image.len(),
                self.config.image_size,
                want,
                self.config.image_size,
                self.config.image_size
            )));
        }
        Ok(())
    }

    fn check_prompt(&self, prompt: Option<ArrayView2<f64>>) -> Result<()> {
        if let Some(p) = prompt {
            if p.ncols() != self.config.embed_dim {
                return Err(PldgError::Argument(format!(
                    "prompt width {} does not match embed_dim {}",
                    p.ncols(),
                    self.config.embed_dim
                )));
            }
        }
        Ok(())
    }

    /// Cuts an interleaved `H × W × 3` image into row-major patch vectors.
    fn patchify(&self, image: &[f32]) -> Array2<f64> {
        let c = &self.config;
        let (g, ps, size) = (c.grid(), c.patch_size, c.image_size);
        let mut out = Array2::zeros((c.num_patches(), c.patch_dim()));
        for gy in 0..g {
            for gx in 0..g {
                let mut row = out.row_mut(gy * g + gx);
                let mut k = 0;
                for dy in 0..ps {
                    for dx in 0..ps {
                        let base = ((gy * ps + dy) * size + gx * ps + dx) * 3;
                        for ch in 0..3 {
                            row[k] = image[base + ch] as f64;
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }

    fn input_tokens(&self, patches: &Array2<f64>, prompt: Option<ArrayView2<f64>>) -> Array2<f64> {
        let p = &self.params;
        let s_len = prompt.map_or(0, |x| x.nrows());
        let n = patches.nrows();
        let d = self.config.embed_dim;
        let mut x = Array2::zeros((1 + s_len + n, d));
        x.row_mut(0).assign(&p.cls);
        if let Some(pr) = prompt {
            x.slice_mut(s![1..1 + s_len, ..]).assign(&pr);
        }
        let embedded = patches.dot(&p.patch_w) + &p.patch_b + &p.pos;
        x.slice_mut(s![1 + s_len.., ..]).assign(&embedded);
        x
    }

    fn head(&self, cls: &Array1<f64>) -> (Array1<f64>, LnCache, Array1<f64>) {
        let p = &self.params;
        let row = cls.view().insert_axis(Axis(0));
        let (z, cache) = layer_norm(row, &p.head_ln_gain, &p.head_ln_bias);
        let z = z.row(0).to_owned();
        let logits = z.dot(&p.head_w) + &p.head_b;
        (logits, cache, z)
    }

    /// Applies the classification head to a class-token feature.
    pub fn classify(&self, cls_feature: &Array1<f64>) -> Array1<f64> {
        self.head(cls_feature).0
    }

    /// Forward pass for one image, keeping everything needed for backprop.
    ///
    /// `dropout` enables training-mode dropout using the given generator.
    pub fn trace(
        &self,
        image: &[f32],
        prompt: Option<ArrayView2<f64>>,
        dropout: Option<&mut Rng>,
    ) -> Result<Trace> {
        self.check_image(image)?;
        self.check_prompt(prompt)?;
        let patches = self.patchify(image);
        let mut x = self.input_tokens(&patches, prompt);
        let mut caches = Vec::with_capacity(self.config.depth);
        let rate = self.config.drop_rate;
        let mut rng = dropout;
        for bp in &self.params.blocks {
            let drop = rng.as_deref_mut().map(|r| (rate, r));
            let (next, cache) = block_forward(bp, &x, self.config.num_heads, drop);
            x = next;
            caches.push(cache);
        }
        let cls_feature = x.row(0).to_owned();
        let (logits, head_ln, head_in) = self.head(&cls_feature);
        Ok(Trace {
            patches,
            prompt_len: prompt.map_or(0, |p| p.nrows()),
            blocks: caches,
            head_ln,
            head_in,
            cls_feature,
            logits,
        })
    }

    /// Backpropagates `d_logits` (and optionally an extra gradient on the
    /// final class token) through a trace, accumulating into `grads`.
    ///
    /// Returns the gradient with respect to the prompt rows, if any.
    pub fn backward(
        &self,
        trace: &Trace,
        d_logits: &Array1<f64>,
        d_cls_extra: Option<&Array1<f64>>,
        grads: &mut EncoderParams,
    ) -> Option<Array2<f64>> {
        let p = &self.params;
        let d = self.config.embed_dim;
        grads.head_w += &trace
            .head_in
            .view()
            .insert_axis(Axis(1))
            .dot(&d_logits.view().insert_axis(Axis(0)));
        grads.head_b += d_logits;
        let d_z = p.head_w.dot(d_logits).insert_axis(Axis(0));
        let d_cls = layer_norm_backward(
            &d_z,
            &trace.head_ln,
            &p.head_ln_gain,
            &mut grads.head_ln_gain,
            &mut grads.head_ln_bias,
        );
        let t = self.config.seq_len(trace.prompt_len);
        let mut dx = Array2::zeros((t, d));
        dx.row_mut(0).assign(&d_cls.row(0));
        if let Some(extra) = d_cls_extra {
            let mut r = dx.row_mut(0);
            r += extra;
        }
        for (i, bp) in p.blocks.iter().enumerate().rev() {
            dx = block_backward(
                bp,
                &trace.blocks[i],
                &dx,
                self.config.num_heads,
                &mut grads.blocks[i],
            );
        }
        let s_len = trace.prompt_len;
        grads.cls += &dx.row(0);
        let d_embed = dx.slice(s![1 + s_len.., ..]);
        grads.pos += &d_embed;
        grads.patch_b += &d_embed.sum_axis(Axis(0));
        grads.patch_w += &trace.patches.t().dot(&d_embed);
        (s_len > 0).then(|| dx.slice(s![1..1 + s_len, ..]).to_owned())
    }

    fn run_blocks(&self, image: &[f32], prompt: Option<ArrayView2<f64>>, upto: usize) -> Array1<f64> {
        let patches = self.patchify(image);
        let mut x = self.input_tokens(&patches, prompt);
        for bp in &self.params.blocks[..upto] {
            x = block_forward(bp, &x, self.config.num_heads, None).0;
        }
        x.row(0).to_owned()
    }

    fn batch_forward(
        &self,
        images: &[&[f32]],
        prompt: Option<ArrayView2<f64>>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if images.is_empty() {
            return Err(PldgError::Argument("batch must contain at least one image".into()));
        }
        for img in images {
            self.check_image(img)?;
        }
        self.check_prompt(prompt)?;
        let depth = self.config.depth;
        let rows = util::map_chunks(images, 16, |_, chunk| {
            chunk
                .iter()
                .map(|img| {
                    let cls = self.run_blocks(img, prompt, depth);
                    let logits = self.classify(&cls);
                    (cls, logits)
                })
                .collect::<Vec<_>>()
        });
        let b = images.len();
        let mut cls = Array2::zeros((b, self.config.embed_dim));
        let mut logits = Array2::zeros((b, self.config.num_classes));
        for (i, (c, l)) in rows.into_iter().flatten().enumerate() {
            cls.row_mut(i).assign(&c);
            logits.row_mut(i).assign(&l);
        }
        Ok((cls, logits))
    }

    /// Eval-mode forward without prompts: `(cls_feature B×d, logits B×C)`.
    pub fn forward_plain(&self, images: &[&[f32]]) -> Result<(Array2<f64>, Array2<f64>)> {
        self.batch_forward(images, None)
    }

    /// Eval-mode forward with the same prompt rows prepended for every image.
    /// An empty prompt reproduces [`Encoder::forward_plain`] exactly.
    pub fn forward_prompted(
        &self,
        images: &[&[f32]],
        prompt: ArrayView2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if prompt.ncols() != self.config.embed_dim && prompt.nrows() > 0 {
            return Err(PldgError::Argument(format!(
                "prompt width {} does not match embed_dim {}",
                prompt.ncols(),
                self.config.embed_dim
            )));
        }
        if prompt.nrows() == 0 {
            return self.batch_forward(images, None);
        }
        self.batch_forward(images, Some(prompt))
    }

    /// Eval-mode forward where every image has its own prompt.
    pub fn forward_per_sample(
        &self,
        images: &[&[f32]],
        prompts: &[Array2<f64>],
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        if images.len() != prompts.len() {
            return Err(PldgError::Argument(format!(
                "{} images but {} prompts",
                images.len(),
                prompts.len()
            )));
        }
        for img in images {
            self.check_image(img)?;
        }
        for p in prompts {
            self.check_prompt(Some(p.view()))?;
        }
        let pairs: Vec<(&[f32], &Array2<f64>)> =
            images.iter().copied().zip(prompts.iter()).collect();
        let depth = self.config.depth;
        let rows = util::map_chunks(&pairs, 16, |_, chunk| {
            chunk
                .iter()
                .map(|(img, pr)| {
                    let view = (pr.nrows() > 0).then(|| pr.view());
                    let cls = self.run_blocks(img, view, depth);
                    let logits = self.classify(&cls);
                    (cls, logits)
                })
                .collect::<Vec<_>>()
        });
        let mut cls = Array2::zeros((images.len(), self.config.embed_dim));
        let mut logits = Array2::zeros((images.len(), self.config.num_classes));
        for (i, (c, l)) in rows.into_iter().flatten().enumerate() {
            cls.row_mut(i).assign(&c);
            logits.row_mut(i).assign(&l);
        }
        Ok((cls, logits))
    }

    /// Class token after block `layer` (1-based) of a prompt-free eval forward.
    pub fn extract_cls(&self, images: &[&[f32]], layer: usize) -> Result<Array2<f64>> {
        if layer < 1 || layer > self.config.depth {
            return Err(PldgError::Argument(format!(
                "layer {} outside 1..={}",
                layer, self.config.depth
            )));
        }
        if images.is_empty() {
            return Err(PldgError::Argument("batch must contain at least one image".into()));
        }
        for img in images {
            self.check_image(img)?;
        }
        let rows = util::map_chunks(images, 16, |_, chunk| {
            chunk
                .iter()
                .map(|img| self.run_blocks(img, None, layer))
                .collect::<Vec<_>>()
        });
        let mut out = Array2::zeros((images.len(), self.config.embed_dim));
        for (i, r) in rows.into_iter().flatten().enumerate() {
            out.row_mut(i).assign(&r);
        }
        Ok(out)
    }
}

/// Serialized encoder: configuration, parameters, format version and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format_version: u32,
    pub seed: u64,
    pub encoder: Encoder,
}

impl EncoderCheckpoint {
    pub fn new(encoder: Encoder, seed: u64) -> Self {
        EncoderCheckpoint {
            format_version: FORMAT_VERSION,
            seed,
            encoder,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| PldgError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: EncoderCheckpoint =
            serde_json::from_str(text).map_err(|e| PldgError::Checkpoint(e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(PldgError::Checkpoint(format!(
                "unsupported format version {} (expected {})",
                ck.format_version, FORMAT_VERSION
            )));
        }
        ck.encoder.config.validate()?;
        Ok(ck)
    }
}
