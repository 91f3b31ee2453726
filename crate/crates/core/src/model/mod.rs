//! The conditional U-Net: patch embedding, four encoder stages with patch
//! merging, four decoder stages with patch expanding and additive skips, and
//! a 4x expanding output head with a sigmoid.

mod optim;
mod train;

pub use optim::{adam_step, lr_at_epoch, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{sample_loss, train, validate, EarlyStopping, EpochRecord, StopDecision, TrainingReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{
    Conditioner, ConditioningMode, DomainLabel, Downsample, Linear, ModulationVars, PatchEmbed, PatchExpand,
    VssBlock, VssConfig, PATCH,
};
use crate::error::{Result, SumError};
use crate::objective::{KlOrientation, LossWeights};
use crate::scan::default_rank;
use crate::tensor::{Binder, ParamStore, Tensor, Var};

/// Which blocks receive label modulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// The deepest decoder stage only.
    Bottleneck,
    /// Every decoder block.
    #[default]
    Decoder,
    /// Every encoder and decoder block.
    AllBlocks,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    #[default]
    Prompt,
    OneHot,
    /// No conditioner; every block is a plain VSS block.
    None,
}

pub const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SumConfig {
    pub base_channels: usize,
    pub encoder_depths: [usize; STAGES],
    pub decoder_depths: [usize; STAGES],
    pub state_size: usize,
    pub input_size: usize,
    /// Number of domain classes `T`.
    pub classes: usize,
    /// Prompt token width `D`.
    pub token_dim: usize,
    pub placement: Placement,
    pub conditioning: Conditioning,
    /// One set of scan parameters for all four directions.
    pub share_scan_params: bool,
    pub loss_weights: LossWeights,
    pub kl_orientation: KlOrientation,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Initial bias of the output projection (pre-sigmoid).
    pub head_bias: f64,
    pub seed: u64,
}

impl Default for SumConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            encoder_depths: [2, 2, 2, 2],
            decoder_depths: [2, 2, 2, 1],
            state_size: 8,
            input_size: 64,
            classes: 4,
            token_dim: 128,
            placement: Placement::Decoder,
            conditioning: Conditioning::Prompt,
            share_scan_params: false,
            loss_weights: LossWeights::PAPER,
            kl_orientation: KlOrientation::Standard,
            lr: 1e-4,
            batch_size: 16,
            epochs: 15,
            patience: 4,
            decay_every: 4,
            decay_factor: 0.1,
            head_bias: 0.0,
            seed: 0,
        }
    }
}

impl SumConfig {
    /// Check every invariant; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(SumError::Config(format!("{field}: {msg}")));
        if self.base_channels == 0 || !self.base_channels.is_multiple_of(PATCH) {
            return fail(
                "base_channels",
                format!("must be a positive multiple of {PATCH}, got {}", self.base_channels),
            );
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(32) {
            return fail(
                "input_size",
                format!("must be a positive multiple of 32, got {}", self.input_size),
            );
        }
        if self.encoder_depths.contains(&0) {
            return fail("encoder_depths", "every stage needs at least one block".into());
        }
        if self.decoder_depths.contains(&0) {
            return fail("decoder_depths", "every stage needs at least one block".into());
        }
        if self.decoder_depths[STAGES - 1] != 1 {
            return fail(
                "decoder_depths",
                format!("the last stage must hold a single block, got {}", self.decoder_depths[STAGES - 1]),
            );
        }
        if self.state_size == 0 {
            return fail("state_size", "must be positive".into());
        }
        if self.classes == 0 {
            return fail("classes", "must be positive".into());
        }
        if self.token_dim == 0 {
            return fail("token_dim", "must be positive".into());
        }
        if self.conditioning == Conditioning::OneHot && self.token_dim < self.classes {
            return fail(
                "token_dim",
                format!("one-hot conditioning needs token_dim >= classes ({})", self.classes),
            );
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", format!("must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs", "must be positive".into());
        }
        if self.decay_every == 0 {
            return fail("decay_every", "must be positive".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return fail("decay_factor", format!("must lie in (0, 1], got {}", self.decay_factor));
        }
        if !self.head_bias.is_finite() {
            return fail("head_bias", "must be finite".into());
        }
        self.loss_weights
            .validate()
            .map_err(|e| SumError::Config(format!("loss_weights: {e}")))
    }

    /// Channels at encoder stage `k`.
    pub fn stage_channels(&self, k: usize) -> usize {
        self.base_channels << k
    }

    /// Spatial size at encoder stage `k`.
    pub fn stage_size(&self, k: usize) -> usize {
        (self.input_size / PATCH) >> k
    }

    fn block_config(&self, k: usize) -> VssConfig {
        let c = self.stage_channels(k);
        VssConfig {
            channels: c,
            state: self.state_size,
            rank: default_rank(c),
            shared_ssm: self.share_scan_params,
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    blocks: Vec<VssBlock>,
    conditioned: bool,
}

impl Stage {
    fn forward(&self, b: &mut Binder, mut x: Var, m: Option<&ModulationVars>) -> Result<Var> {
        let m = if self.conditioned { m } else { None };
        for blk in &self.blocks {
            x = blk.forward(b, x, m)?;
        }
        Ok(x)
    }
}

#[derive(Clone, Debug)]
struct Arch {
    embed: PatchEmbed,
    encoder: Vec<Stage>,
    downs: Vec<Downsample>,
    decoder: Vec<Stage>,
    ups: Vec<PatchExpand>,
    skips: Vec<Linear>,
    head_expand: PatchExpand,
    head_proj: Linear,
    conditioner: Option<Conditioner>,
}

/// Model parameters plus the configuration they were built from.
#[derive(Clone, Debug)]
pub struct SumModel {
    pub config: SumConfig,
    pub store: ParamStore,
    arch: Arch,
}

impl SumModel {
    /// Deterministic construction from `cfg.seed`.
    pub fn new(cfg: &SumConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let mut s = ParamStore::new();
        let embed = PatchEmbed::init(&mut s, "embed", cfg.base_channels, seed)?;

        let enc_cond = cfg.conditioning != Conditioning::None && cfg.placement == Placement::AllBlocks;
        let mut encoder = Vec::with_capacity(STAGES);
        let mut downs = Vec::with_capacity(STAGES - 1);
        for k in 0..STAGES {
            let blocks = (0..cfg.encoder_depths[k])
                .map(|i| VssBlock::init(&mut s, &format!("enc{k}.blk{i}"), cfg.block_config(k), seed))
                .collect::<Result<_>>()?;
            encoder.push(Stage {
                blocks,
                conditioned: enc_cond,
            });
            if k + 1 < STAGES {
                downs.push(Downsample::init(&mut s, &format!("down{k}"), cfg.stage_channels(k), seed)?);
            }
        }

        let mut decoder = Vec::with_capacity(STAGES);
        let mut ups = Vec::with_capacity(STAGES - 1);
        let mut skips = Vec::with_capacity(STAGES - 1);
        for j in 0..STAGES {
            let level = STAGES - 1 - j;
            let conditioned = match (cfg.conditioning, cfg.placement) {
                (Conditioning::None, _) => false,
                (_, Placement::Bottleneck) => j == 0,
                _ => true,
            };
            let blocks = (0..cfg.decoder_depths[j])
                .map(|i| VssBlock::init(&mut s, &format!("dec{j}.blk{i}"), cfg.block_config(level), seed))
                .collect::<Result<_>>()?;
            decoder.push(Stage { blocks, conditioned });
            if j + 1 < STAGES {
                let c = cfg.stage_channels(level);
                ups.push(PatchExpand::init(&mut s, &format!("up{j}"), c, 2, seed)?);
                skips.push(Linear::init(&mut s, &format!("skip{j}"), c / 2, c / 2, seed)?);
            }
        }

        let c = cfg.base_channels;
        let head_expand = PatchExpand::init(&mut s, "head.expand", c, PATCH, seed)?;
        let head_proj = Linear::init(&mut s, "head.proj", c / PATCH, 1, seed)?;
        s.get_mut(head_proj.bias).data_mut().fill(cfg.head_bias);

        let conditioner = match cfg.conditioning {
            Conditioning::None => None,
            Conditioning::Prompt => Some(Conditioner::init(
                &mut s,
                "cond",
                ConditioningMode::Prompt,
                cfg.classes,
                cfg.token_dim,
                seed,
            )?),
            Conditioning::OneHot => Some(Conditioner::init(
                &mut s,
                "cond",
                ConditioningMode::OneHot,
                cfg.classes,
                cfg.token_dim,
                seed,
            )?),
        };

        Ok(Self {
            config: cfg.clone(),
            store: s,
            arch: Arch {
                embed,
                encoder,
                downs,
                decoder,
                ups,
                skips,
                head_expand,
                head_proj,
                conditioner,
            },
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn conditioner(&self) -> Option<&Conditioner> {
        self.arch.conditioner.as_ref()
    }

    /// Whether decoder stage `j` (0 = deepest) uses modulated blocks.
    pub fn decoder_stage_conditioned(&self, j: usize) -> bool {
        self.arch.decoder[j].conditioned
    }

    pub fn encoder_stage_conditioned(&self, k: usize) -> bool {
        self.arch.encoder[k].conditioned
    }

    fn check_label(&self, label: DomainLabel) -> Result<()> {
        if label.code() >= self.config.classes {
            return Err(SumError::Label {
                code: label.code(),
                classes: self.config.classes,
            });
        }
        Ok(())
    }

    /// `[S, S, 3]` image to an `[S, S]` map in `(0, 1)`.
    pub fn forward(&self, b: &mut Binder, image: Var, label: DomainLabel) -> Result<Var> {
        self.check_label(label)?;
        let s = self.config.input_size;
        if b.tape.shape(image) != [s, s, 3] {
            return Err(SumError::shape(format!(
                "model expects a [{s}, {s}, 3] image, got {:?}",
                b.tape.shape(image)
            )));
        }
        let a = &self.arch;
        let m = match &a.conditioner {
            Some(c) => Some(c.modulation(b, label)?),
            None => None,
        };
        let m = m.as_ref();

        let mut x = a.embed.forward(b, image)?;
        let mut skips = Vec::with_capacity(STAGES);
        for k in 0..STAGES {
            x = a.encoder[k].forward(b, x, m)?;
            skips.push(x);
            if k + 1 < STAGES {
                x = a.downs[k].forward(b, x)?;
            }
        }

        for j in 0..STAGES {
            x = a.decoder[j].forward(b, x, m)?;
            if j + 1 < STAGES {
                let up = a.ups[j].forward(b, x)?;
                let skip = a.skips[j].forward(b, skips[STAGES - 2 - j])?;
                x = b.tape.add(up, skip)?;
            }
        }

        let y = a.head_expand.forward(b, x)?;
        let y = a.head_proj.forward(b, y)?;
        let y = b.tape.reshape(y, &[s, s])?;
        b.tape.sigmoid(y)
    }

    /// Inference on one image.
    pub fn predict(&self, image: &Tensor, label: DomainLabel) -> Result<Tensor> {
        let mut b = Binder::frozen(&self.store);
        let x = b.tape.leaf(image);
        let y = self.forward(&mut b, x, label)?;
        Ok(b.tape.tensor(y))
    }

    /// Batch inference; samples run in parallel, results keep input order.
    pub fn predict_batch(&self, images: &[Tensor], labels: &[DomainLabel]) -> Result<Vec<Tensor>> {
        if images.len() != labels.len() {
            return Err(SumError::shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        images
            .par_iter()
            .zip(labels.par_iter())
            .map(|(img, &l)| self.predict(img, l))
            .collect()
    }
}

pub(crate) fn grad_cases() -> Vec<crate::verify::GradCase> {
    use crate::verify::{case, check_params_step, Coords, SuiteModule, MODEL_STEP, MODEL_TOLERANCE};
    vec![case(SuiteModule::Model, "end_to_end_micro", MODEL_TOLERANCE, |fault| {
        let cfg = SumConfig {
            base_channels: 4,
            state_size: 2,
            input_size: 32,
            token_dim: 8,
            ..SumConfig::default()
        };
        let mut model = SumModel::new(&cfg)?;
        // move off the structured init (zero biases, zero conditioner output,
        // step sizes near 0.01)
        let (amp, shift) = (0.2, 3.0);
        let ids: Vec<_> = model.store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let lift = if model.store.name(id).ends_with("b_dt") { shift } else { 0.0 };
            let t = model.store.get_mut(id);
            let noise = crate::verify::uniform(&[t.numel()], -amp, amp, 0x5eed ^ ((k as u64) << 12));
            for (v, e) in t.data_mut().iter_mut().zip(noise.data()) {
                *v += e + lift;
            }
        }
        let sample = crate::data::synthetic_sample(DomainLabel::NaturalEye, 32, 11, "micro")?;
        check_params_step(
            &model.store,
            |b| {
                let (loss, _) = sample_loss(&model, b, &sample)?;
                Ok(loss)
            },
            Coords::Sample { count: 240, seed: 99 },
            MODEL_STEP,
            fault,
        )
    })]
}
