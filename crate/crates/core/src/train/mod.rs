//! Two-phase and joint training: patch sampling, losses, Adam with a cosine
//! schedule, and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::Networks;
use crate::autograd::{Graph, Var};
use crate::data::ImagePair;
use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::{Shape, Tensor};

pub use adam::Adam;
pub use checkpoint::{apply_freeze_mask, Checkpoint};
pub use config::{apply_config_text, cosine_lr, Mode, Phase, TrainConfig};

/// Draws training patches. The batch for a step depends only on
/// `(seed, step)`.
#[derive(Clone, Copy, Debug)]
pub struct PatchSampler {
    pub seed: u64,
    pub patch: usize,
    pub batch: usize,
}

/// `1xCxpxp` window of `img` at `(y, x)`, mirrored left-right when `flip`.
pub fn crop(img: &Tensor, y: usize, x: usize, p: usize, flip: bool) -> Result<Tensor> {
    let s = img.shape();
    if s.n != 1 || y + p > s.h || x + p > s.w {
        return Err(Error::InvalidArgument(format!("cannot crop {p}x{p} at ({y}, {x}) from {s}")));
    }
    let mut data = Vec::with_capacity(s.c * p * p);
    for c in 0..s.c {
        let plane = img.plane(0, c);
        for row in y..y + p {
            let line = &plane[row * s.w + x..row * s.w + x + p];
            if flip {
                data.extend(line.iter().rev());
            } else {
                data.extend_from_slice(line);
            }
        }
    }
    Tensor::new(Shape::new(1, s.c, p, p), data)
}

impl PatchSampler {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            seed: cfg.seed,
            patch: cfg.patch_size,
            batch: cfg.batch_size,
        }
    }

    /// Rainy and clean batches for `step`: uniformly chosen pair, uniformly
    /// placed crop, horizontal flip with probability one half.
    pub fn sample(&self, data: &[ImagePair], step: u64) -> Result<(Tensor, Tensor)> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        let p = self.patch;
        let mut rainy = Vec::with_capacity(self.batch);
        let mut clean = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            let pair = &data[rng.random_range(0..data.len())];
            let s = pair.rainy.shape();
            if s.h < p || s.w < p {
                return Err(Error::InvalidArgument(format!("image {}x{} is smaller than the {p}x{p} patch", s.h, s.w)));
            }
            let y = rng.random_range(0..=s.h - p);
            let x = rng.random_range(0..=s.w - p);
            let flip = rng.random::<bool>();
            rainy.push(crop(&pair.rainy, y, x, p, flip)?);
            clean.push(crop(&pair.clean, y, x, p, flip)?);
        }
        Ok((Tensor::stack_batch(&rainy)?, Tensor::stack_batch(&clean)?))
    }
}

/// Loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    /// `mse(D(R, E(R)), B)`.
    pub derain: Option<Var>,
    /// `mse(C(B, E(R)), R)`.
    pub constraint: Option<Var>,
}

/// Scalar losses of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub total: f64,
    pub derain: Option<f64>,
    pub constraint: Option<f64>,
}

/// Builds the objective of `phase` on `g`.
pub fn build_losses(nets: &Networks, g: &mut Graph, rainy: Var, clean: Var, phase: Phase, cfg: &TrainConfig) -> Result<LossVars> {
    match phase {
        Phase::Constraint => {
            let deg = nets
                .encode(g, rainy)?
                .ok_or_else(|| Error::Config(format!("variant {} has no encoder to pretrain", nets.config.ablation)))?;
            let rhat = nets.reconstruct_rainy(g, clean, &deg)?;
            let lc = g.mse_loss(rhat, rainy)?;
            Ok(LossVars {
                total: lc,
                derain: None,
                constraint: Some(lc),
            })
        }
        Phase::Derain => {
            let bhat = nets.derain(g, rainy)?;
            let ld = g.mse_loss(bhat, clean)?;
            Ok(LossVars {
                total: ld,
                derain: Some(ld),
                constraint: None,
            })
        }
        Phase::Joint => {
            let deg = nets.encode(g, rainy)?;
            let bhat = nets.restorer.forward(g, &nets.store, rainy, deg.as_ref())?;
            let ld = g.mse_loss(bhat, clean)?;
            let lc = match (&deg, &nets.constraint) {
                (Some(deg), Some(_)) => {
                    let rhat = nets.reconstruct_rainy(g, clean, deg)?;
                    Some(g.mse_loss(rhat, rainy)?)
                }
                _ => None,
            };
            let mut total = g.scale(ld, cfg.lambda1 as f32)?;
            if let Some(lc) = lc {
                let weighted = g.scale(lc, cfg.lambda2 as f32)?;
                total = g.add(total, weighted)?;
            }
            Ok(LossVars {
                total,
                derain: Some(ld),
                constraint: lc,
            })
        }
    }
}

/// One optimizer update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Zero-based index of the update.
    pub step: u64,
    /// Objective before the update.
    pub loss: f32,
    pub lr: f64,
}

impl StepRecord {
    /// `step\tloss\tlr`.
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{:e}", self.step, self.loss, self.lr)
    }
}

pub const LOG_HEADER: &str = "step\tloss\tlr";

pub struct Trainer {
    pub nets: Networks,
    pub cfg: TrainConfig,
    pub adam: Adam,
    phase: Phase,
    step: u64,
    sampler: PatchSampler,
}

impl Trainer {
    /// Fresh training of `phase` from the given networks. A derain phase of a
    /// variant with a constraint network must start from a constraint-phase
    /// checkpoint instead (see [`Trainer::from_checkpoint`]).
    pub fn new(mut nets: Networks, cfg: TrainConfig, phase: Phase) -> Result<Self> {
        cfg.validate()?;
        match phase {
            Phase::Constraint if nets.constraint.is_none() => {
                return Err(Error::Config(format!(
                    "variant {} has no constraint network; it trains the derain phase directly",
                    nets.config.ablation
                )));
            }
            Phase::Derain if nets.constraint.is_some() => {
                return Err(Error::Config(
                    "the derain phase needs a constraint-phase checkpoint: the encoder is first pretrained \
                     with the constraint network, then frozen while the deraining network trains"
                        .into(),
                ));
            }
            _ => {}
        }
        apply_freeze_mask(&mut nets, phase);
        let sampler = PatchSampler::new(&cfg);
        Ok(Self {
            nets,
            cfg,
            adam: Adam::new(),
            phase,
            step: 0,
            sampler,
        })
    }

    /// Resumes `phase` from a checkpoint of the same phase, or starts it
    /// from a constraint-phase checkpoint.
    pub fn from_checkpoint(ckpt: &Checkpoint, cfg: TrainConfig, phase: Phase) -> Result<Self> {
        cfg.validate()?;
        let (mut nets, adam) = ckpt.restore()?;
        let (adam, step) = match (ckpt.phase, phase) {
            (a, b) if a == b => (adam, ckpt.step),
            (Phase::Constraint, Phase::Derain | Phase::Joint) => (Adam::new(), 0),
            (a, b) => {
                return Err(Error::Config(format!("cannot train the {b} phase from a {a}-phase checkpoint")));
            }
        };
        if step > cfg.total_steps {
            return Err(Error::Config(format!(
                "checkpoint is at step {step}, past the configured {} steps",
                cfg.total_steps
            )));
        }
        apply_freeze_mask(&mut nets, phase);
        let sampler = PatchSampler::new(&cfg);
        Ok(Self {
            nets,
            cfg,
            adam,
            phase,
            step,
            sampler,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Updates applied so far in this phase.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    pub fn sampler(&self) -> &PatchSampler {
        &self.sampler
    }

    /// Samples a batch, back-propagates the phase objective and applies Adam.
    pub fn step(&mut self, data: &[ImagePair]) -> Result<StepRecord> {
        if self.is_finished() {
            return Err(Error::Config(format!("training already ran all {} steps", self.cfg.total_steps)));
        }
        let lr = cosine_lr(self.step, &self.cfg)?;
        let (rainy, clean) = self.sampler.sample(data, self.step)?;
        self.nets.store.zero_grad();
        let mut g = Graph::new();
        let r = g.constant(rainy)?;
        let c = g.constant(clean)?;
        let losses = build_losses(&self.nets, &mut g, r, c, self.phase, &self.cfg)?;
        let loss = g.value(losses.total).item_value()?;
        g.backward_into(losses.total, &mut self.nets.store)?;
        self.adam.step(&mut self.nets.store, lr)?;
        let record = StepRecord { step: self.step, loss, lr };
        self.step += 1;
        Ok(record)
    }

    /// Steps until the schedule ends or `on_step` returns `false`. Returns
    /// the number of updates applied.
    pub fn run(&mut self, data: &[ImagePair], mut on_step: impl FnMut(&Trainer, &StepRecord) -> Result<bool>) -> Result<u64> {
        let start = self.step;
        while !self.is_finished() {
            let record = self.step(data)?;
            if !on_step(self, &record)? {
                break;
            }
        }
        Ok(self.step - start)
    }

    /// Gradient-free losses of the current phase on a given batch.
    pub fn losses(&self, rainy: &Tensor, clean: &Tensor) -> Result<Losses> {
        compute_losses(&self.nets, rainy, clean, self.phase, &self.cfg)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.nets, &self.adam, self.phase, self.step)
    }
}

pub fn compute_losses(nets: &Networks, rainy: &Tensor, clean: &Tensor, phase: Phase, cfg: &TrainConfig) -> Result<Losses> {
    let mut g = Graph::inference();
    let r = g.constant(rainy.clone())?;
    let c = g.constant(clean.clone())?;
    let v = build_losses(nets, &mut g, r, c, phase, cfg)?;
    let read = |g: &Graph, v: Var| g.value(v).item_value().map(f64::from);
    Ok(Losses {
        total: read(&g, v.total)?,
        derain: v.derain.map(|d| read(&g, d)).transpose()?,
        constraint: v.constraint.map(|d| read(&g, d)).transpose()?,
    })
}

/// Mean PSNR of the restored images and of the rainy inputs against the
/// clean targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitReport {
    pub restored_psnr: f64,
    pub input_psnr: f64,
}

impl FitReport {
    pub fn gain(&self) -> f64 {
        self.restored_psnr - self.input_psnr
    }
}

pub fn evaluate_fit(nets: &Networks, data: &[ImagePair]) -> Result<FitReport> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no pairs to evaluate".into()));
    }
    let mut restored = 0.0;
    let mut input = 0.0;
    for pair in data {
        let out = nets.infer_padded(&pair.rainy)?.clamp(0.0, 1.0);
        restored += metrics::psnr(&out, &pair.clean, 1.0)?;
        input += metrics::psnr(&pair.rainy, &pair.clean, 1.0)?;
    }
    let n = data.len() as f64;
    Ok(FitReport {
        restored_psnr: restored / n,
        input_psnr: input / n,
    })
}
