//! The assembled TeleViT network: tokenization, embedding, encoder and
//! per-token decoder, with a full backward pass.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datacube::{CubeStore, Sample, SampleLayout};
use crate::decoder::{DecoderParams, PredictionMap};
use crate::encoder::{AttentionRecord, EncoderConfig, EncoderParams, EncoderTrace, Mode};
use crate::error::{Error, Result};
use crate::nn::{join, zero_params, Parameters};
use crate::tokenizer::{
    token_counts, tokenize_global, tokenize_indices, tokenize_local, untokenize_indices,
    untokenize_spatial, EmbeddingParams, SampleTokens, SegmentCounts, TokenSequence,
    TokenizationSpec,
};

/// Architecture and input geometry of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub tokenizer: TokenizationSpec,
    pub encoder: EncoderConfig,
    pub use_global: bool,
    pub use_indices: bool,
    pub shared_decoder: bool,
    /// `[C, H, W]` of the local input.
    pub local_shape: [usize; 3],
    /// `[C, H, W]` of the global input.
    pub global_shape: [usize; 3],
    /// `[series, T]` of the index input.
    pub index_shape: [usize; 2],
}

impl ModelConfig {
    /// The full configuration: 14 × 80 × 80 local, 14 × 360 × 180 global,
    /// 10 × 10 indices, K = 8, A = 8, D = 768, MLP 1536.
    pub fn paper() -> Self {
        ModelConfig {
            tokenizer: TokenizationSpec::default(),
            encoder: EncoderConfig::default(),
            use_global: true,
            use_indices: true,
            shared_decoder: true,
            local_shape: [14, 80, 80],
            global_shape: [14, 360, 180],
            index_shape: [10, 10],
        }
    }

    /// Derives input shapes from a cube and its sample layout.
    pub fn for_cube(
        cube: &CubeStore,
        layout: &SampleLayout,
        tokenizer: TokenizationSpec,
        encoder: EncoderConfig,
        use_global: bool,
        use_indices: bool,
    ) -> Self {
        let c = layout.n_channels(cube);
        let (h, w) = cube.grid().shape();
        let f = layout.coarsen_factor.max(1);
        ModelConfig {
            tokenizer,
            encoder,
            use_global,
            use_indices,
            shared_decoder: true,
            local_shape: [c, layout.patch_size, layout.patch_size],
            global_shape: [c, w / f, h / f],
            index_shape: [cube.indices().len(), layout.index_steps],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let t = &self.tokenizer;
        if t.dim != self.encoder.dim {
            return Err(Error::config(format!(
                "tokenizer dim {} differs from encoder dim {}",
                t.dim, self.encoder.dim
            )));
        }
        let div = |what: &str, n: usize, p: usize| -> Result<()> {
            if p == 0 || !n.is_multiple_of(p) {
                Err(Error::config(format!(
                    "{what} {n} is not divisible by patch {p}"
                )))
            } else {
                Ok(())
            }
        };
        div("local height", self.local_shape[1], t.local_patch)?;
        div("local width", self.local_shape[2], t.local_patch)?;
        if self.use_global {
            div("global height", self.global_shape[1], t.global_patch)?;
            div("global width", self.global_shape[2], t.global_patch)?;
        }
        if self.use_indices {
            div("index length", self.index_shape[1], t.index_patch)?;
            if self.index_shape[0] == 0 {
                return Err(Error::config(
                    "index input enabled but there are no index series",
                ));
            }
        }
        Ok(())
    }

    pub fn counts(&self) -> SegmentCounts {
        token_counts(
            &self.tokenizer,
            (self.local_shape[1], self.local_shape[2]),
            self.use_global
                .then_some((self.global_shape[1], self.global_shape[2])),
            self.use_indices
                .then_some((self.index_shape[0], self.index_shape[1])),
        )
    }

    pub fn local_grid(&self) -> (usize, usize) {
        let p = self.tokenizer.local_patch;
        (self.local_shape[1] / p, self.local_shape[2] / p)
    }

    /// Name of the variant: ViT, TeleViT_i, TeleViT_g or TeleViT_ig.
    pub fn variant_name(&self) -> &'static str {
        match (self.use_global, self.use_indices) {
            (false, false) => "vit",
            (false, true) => "televit_i",
            (true, false) => "televit_g",
            (true, true) => "televit_ig",
        }
    }
}

/// Borrowed model inputs. Sources disabled in the config are ignored.
#[derive(Debug, Clone, Copy)]
pub struct InputView<'a> {
    pub local: ArrayView3<'a, f64>,
    pub global: ArrayView3<'a, f64>,
    pub indices: ArrayView2<'a, f64>,
}

/// Owned model inputs; also the shape of input gradients and attributions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub local: Array3<f64>,
    pub global: Array3<f64>,
    pub indices: Array2<f64>,
}

impl ModelInput {
    pub fn view(&self) -> InputView<'_> {
        InputView {
            local: self.local.view(),
            global: self.global.view(),
            indices: self.indices.view(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelInput {
            local: Array3::zeros(self.local.raw_dim()),
            global: Array3::zeros(self.global.raw_dim()),
            indices: Array2::zeros(self.indices.raw_dim()),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        ModelInput {
            local: &self.local * alpha,
            global: &self.global * alpha,
            indices: &self.indices * alpha,
        }
    }

    pub fn sum(&self) -> f64 {
        self.local.sum() + self.global.sum() + self.indices.sum()
    }

    pub fn is_finite(&self) -> bool {
        self.local.iter().all(|v| v.is_finite())
            && self.global.iter().all(|v| v.is_finite())
            && self.indices.iter().all(|v| v.is_finite())
    }
}

impl From<&Sample> for ModelInput {
    fn from(s: &Sample) -> Self {
        ModelInput {
            local: s.x_l.clone(),
            global: (*s.x_g).clone(),
            indices: s.x_i.clone(),
        }
    }
}

impl Sample {
    pub fn input(&self) -> InputView<'_> {
        InputView {
            local: self.x_l.view(),
            global: self.x_g.view(),
            indices: self.x_i.view(),
        }
    }
}

/// A forward pass with everything the backward pass and inspection need.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub tokens: SampleTokens,
    pub sequence: TokenSequence,
    pub trace: EncoderTrace,
    /// `2 × H × W`.
    pub logits: Array3<f64>,
}

impl ForwardPass {
    pub fn attention_record(&self) -> AttentionRecord {
        self.trace.attention_record(self.sequence.counts())
    }

    /// Encoder output as a token sequence.
    pub fn encoded(&self) -> TokenSequence {
        self.sequence.with_embeddings(self.trace.output.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleVit {
    pub config: ModelConfig,
    pub embedding: EmbeddingParams,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl TeleVit {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = &config.tokenizer;
        let lens = (
            config.local_shape[0] * t.local_patch * t.local_patch,
            config
                .use_global
                .then(|| config.global_shape[0] * t.global_patch * t.global_patch),
            config.use_indices.then_some(t.index_patch),
        );
        let counts = config.counts();
        let embedding = EmbeddingParams::init(lens, counts, t.dim, &mut rng);
        let encoder = EncoderParams::init(&config.encoder, &mut rng);
        let decoder = DecoderParams::init(
            t.dim,
            t.local_patch,
            counts.local,
            config.shared_decoder,
            &mut rng,
        );
        Ok(TeleVit {
            config,
            embedding,
            encoder,
            decoder,
        })
    }

    /// Same architecture with every parameter zero; used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        zero_params(&mut z);
        z
    }

    fn check_input(&self, input: &InputView<'_>) -> Result<()> {
        let c = &self.config;
        let shape3 = |a: &ArrayView3<'_, f64>| [a.shape()[0], a.shape()[1], a.shape()[2]];
        if shape3(&input.local) != c.local_shape {
            return Err(Error::config(format!(
                "local input shape {:?}, model expects {:?}",
                input.local.shape(),
                c.local_shape
            )));
        }
        if c.use_global && shape3(&input.global) != c.global_shape {
            return Err(Error::config(format!(
                "global input shape {:?}, model expects {:?}",
                input.global.shape(),
                c.global_shape
            )));
        }
        if c.use_indices && input.indices.shape() != c.index_shape {
            return Err(Error::config(format!(
                "index input shape {:?}, model expects {:?}",
                input.indices.shape(),
                c.index_shape
            )));
        }
        Ok(())
    }

    pub fn tokenize(&self, input: InputView<'_>) -> Result<SampleTokens> {
        self.check_input(&input)?;
        let t = &self.config.tokenizer;
        Ok(SampleTokens {
            local: tokenize_local(input.local, t)?,
            global: if self.config.use_global {
                Some(tokenize_global(input.global, t)?)
            } else {
                None
            },
            indices: if self.config.use_indices {
                Some(tokenize_indices(input.indices, t)?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, input: InputView<'_>, mode: Mode<'_>) -> Result<ForwardPass> {
        let tokens = self.tokenize(input)?;
        let sequence = self.embedding.embed(&tokens)?;
        let trace = self
            .encoder
            .forward(sequence.embeddings.view(), &self.config.encoder, mode)?;
        let n_local = tokens.local.tokens.nrows();
        let logits = self.decoder.decode_logits(
            trace.output.slice(s![..n_local, ..]),
            self.config.local_grid(),
            self.config.tokenizer.local_patch,
        )?;
        Ok(ForwardPass {
            tokens,
            sequence,
            trace,
            logits,
        })
    }

    pub fn predict(&self, input: InputView<'_>) -> Result<PredictionMap> {
        let pass = self.forward(input, Mode::Eval)?;
        Ok(PredictionMap::from_logits(pass.logits, None))
    }

    /// Backpropagates `d_logits` through the whole network, accumulating
    /// parameter gradients into `grads`. With `want_input`, also returns
    /// the gradient with respect to each input tensor (zero for disabled
    /// sources).
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_logits: ArrayView3<'_, f64>,
        grads: &mut TeleVit,
        want_input: bool,
    ) -> Option<ModelInput> {
        let n_local = pass.tokens.local.tokens.nrows();
        let z = pass.trace.output.slice(s![..n_local, ..]);
        let dz_local = self.decoder.backward(
            z,
            d_logits,
            self.config.local_grid(),
            self.config.tokenizer.local_patch,
            &mut grads.decoder,
        );
        let mut d_out = Array2::zeros(pass.trace.output.raw_dim());
        d_out.slice_mut(s![..n_local, ..]).assign(&dz_local);
        let d_embed = self.encoder.backward(
            &pass.trace,
            d_out.view(),
            &self.config.encoder,
            &mut grads.encoder,
        );
        let token_grads = self.embedding.backward(
            &pass.tokens,
            d_embed.view(),
            &mut grads.embedding,
            want_input,
        )?;
        let c = &self.config;
        let t = &c.tokenizer;
        let to3 = |s: [usize; 3]| (s[0], s[1], s[2]);
        let (dl, dg, di) = token_grads;
        Some(ModelInput {
            local: untokenize_spatial(dl.view(), to3(c.local_shape), t.local_patch),
            global: match dg {
                Some(g) => untokenize_spatial(g.view(), to3(c.global_shape), t.global_patch),
                None => Array3::zeros(to3(c.global_shape)),
            },
            indices: match di {
                Some(i) => untokenize_indices(i.view(), (c.index_shape[0], c.index_shape[1])),
                None => Array2::zeros((c.index_shape[0], c.index_shape[1])),
            },
        })
    }
}

impl Parameters for TeleVit {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewD<'a, f64>)) {
        self.embedding.visit(&join(prefix, "embed"), f);
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, ArrayViewMutD<'_, f64>)) {
        self.embedding.visit_mut(&join(prefix, "embed"), f);
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}
