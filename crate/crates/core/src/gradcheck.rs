//! Central finite-difference checks of every differentiable operation.
//!
//! Each [`GradCase`] places its inputs in a [`ParamStore`] (frozen entries
//! are held constant) and builds a graph from them. The checker contracts
//! the output with a fixed random projection `r`, so the loss
//! `L = sum(r * y)` is accumulated in f64 on the numeric side and seeded
//! as `r` on the analytic side.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ModelConfig, Networks};
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, UpsampleMode};
use crate::nn::{ChannelAttention, Mpb, MsiBlock, ParamBuilder, Rdb};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_SEEDS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GradModule {
    Tensor,
    Deform,
    Arch,
}

impl GradModule {
    pub fn name(self) -> &'static str {
        match self {
            Self::Tensor => "tensor",
            Self::Deform => "deform",
            Self::Arch => "arch",
        }
    }
}

impl fmt::Display for GradModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Tensor, Self::Deform, Self::Arch]
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown gradcheck module `{s}` (expected tensor, deform or arch)")))
    }
}

/// Which scalars of the unfrozen inputs are perturbed.
#[derive(Clone, Copy, Debug)]
pub enum Sampling {
    /// Up to this many elements of every unfrozen tensor.
    PerTensor(usize),
    /// This many elements drawn across all unfrozen tensors together.
    Total(usize),
}

type Forward = Box<dyn Fn(&mut Graph, &ParamStore) -> Result<Var>>;

/// One problem instance: inputs plus the function under test.
pub struct Setup {
    pub store: ParamStore,
    pub forward: Forward,
    pub sampling: Sampling,
}

impl Setup {
    fn new(store: ParamStore, forward: impl Fn(&mut Graph, &ParamStore) -> Result<Var> + 'static) -> Self {
        Self {
            store,
            forward: Box::new(forward),
            sampling: Sampling::PerTensor(12),
        }
    }
}

pub trait GradCase: Send + Sync {
    fn name(&self) -> &'static str;

    fn module(&self) -> GradModule;

    fn tolerance(&self) -> f64 {
        DEFAULT_TOLERANCE
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup>;
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub step: f64,
    pub seeds: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            seeds: DEFAULT_SEEDS,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: &'static str,
    pub module: GradModule,
    pub seeds: usize,
    /// Number of perturbed scalars over all seeds.
    pub checked: usize,
    /// Perturbations discarded for crossing a ReLU kink.
    pub skipped: usize,
    /// Largest `|analytic - numeric| / max(1, |numeric|)`.
    pub worst: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn projected(y: &Tensor, r: &Tensor) -> f64 {
    y.data().iter().zip(r.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Projected loss and ReLU activation pattern.
fn evaluate(setup: &Setup, r: &Tensor) -> Result<(f64, u64)> {
    let mut g = Graph::inference();
    let y = (setup.forward)(&mut g, &setup.store)?;
    Ok((projected(g.value(y), r), g.activation_pattern()))
}

/// Outcome of one seeded instance.
#[derive(Clone, Copy, Debug, Default)]
pub struct InstanceResult {
    pub worst: f64,
    pub checked: usize,
    /// Perturbations that flipped a ReLU, where the difference quotient is
    /// not a derivative; these are left out of `worst`.
    pub skipped: usize,
}

fn targets(store: &ParamStore, sampling: Sampling, rng: &mut ChaCha8Rng) -> Vec<(ParamId, usize)> {
    let free: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, _, p)| !p.frozen)
        .map(|(id, _, p)| (id, p.value.numel()))
        .collect();
    match sampling {
        Sampling::PerTensor(k) => free
            .iter()
            .flat_map(|&(id, n)| {
                let mut idx = sample(rng, n, k.min(n)).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(move |i| (id, i))
            })
            .collect(),
        Sampling::Total(k) => {
            let total: usize = free.iter().map(|f| f.1).sum();
            let mut picks = sample(rng, total, k.min(total)).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .map(|mut i| {
                    let mut it = free.iter();
                    loop {
                        let &(id, n) = it.next().expect("index below total");
                        if i < n {
                            break (id, i);
                        }
                        i -= n;
                    }
                })
                .collect()
        }
    }
}

pub fn check_instance(case: &dyn GradCase, seed: u64, step: f64) -> Result<InstanceResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut setup = case.setup(&mut rng)?;

    let mut g = Graph::new();
    let y = (setup.forward)(&mut g, &setup.store)?;
    let r = Tensor::uniform(g.shape(y), -1.0, 1.0, &mut rng);
    let grads = g.backward_with(y, r.clone())?;
    let mut analytic = setup.store.clone();
    analytic.zero_grad();
    g.accumulate(&grads, &mut analytic)?;

    let picks = targets(&setup.store, setup.sampling, &mut rng);
    let mut res = InstanceResult::default();
    for &(id, i) in &picks {
        let x = setup.store.get(id).value.data()[i];
        let plus = (x as f64 + step) as f32;
        let minus = (x as f64 - step) as f32;
        setup.store.get_mut(id).value.data_mut()[i] = plus;
        let (lp, pattern_p) = evaluate(&setup, &r)?;
        setup.store.get_mut(id).value.data_mut()[i] = minus;
        let (lm, pattern_m) = evaluate(&setup, &r)?;
        setup.store.get_mut(id).value.data_mut()[i] = x;
        if pattern_p != pattern_m {
            res.skipped += 1;
            continue;
        }
        let numeric = (lp - lm) / (plus as f64 - minus as f64);
        let a = analytic.get(id).grad.data()[i] as f64;
        res.worst = res.worst.max(relative_error(a, numeric));
        res.checked += 1;
    }
    Ok(res)
}

pub fn run_case(case: &dyn GradCase, opts: &CheckOptions) -> Result<CaseReport> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..opts.seeds as u64 {
        let r = check_instance(case, seed, opts.step)?;
        worst = worst.max(r.worst);
        checked += r.checked;
        skipped += r.skipped;
    }
    Ok(CaseReport {
        name: case.name(),
        module: case.module(),
        seeds: opts.seeds,
        checked,
        skipped,
        worst,
        tolerance: case.tolerance(),
        elapsed: start.elapsed(),
    })
}

/// Named gradient cases, selectable by module.
pub struct GradCheckRegistry {
    cases: IndexMap<&'static str, Box<dyn GradCase>>,
}

impl Default for GradCheckRegistry {
    fn default() -> Self {
        let mut r = Self { cases: IndexMap::new() };
        let conv = |name, stride, padding, dilation| ConvCase {
            name,
            geom: ConvGeom::new(stride, padding, dilation),
        };
        r.register(Box::new(conv("conv2d", 1, 1, 1)));
        r.register(Box::new(conv("conv2d_dilated", 1, 2, 2)));
        r.register(Box::new(conv("conv2d_strided", 2, 1, 1)));
        r.register(Box::new(PoolCase { name: "avgpool2d", kernel: 3, stride: 1, padding: 1 }));
        r.register(Box::new(PoolCase { name: "avgpool2d_strided", kernel: 2, stride: 2, padding: 0 }));
        r.register(Box::new(UnaryCase::GlobalAvgPool));
        r.register(Box::new(UnaryCase::Upsample(UpsampleMode::Nearest)));
        r.register(Box::new(UnaryCase::Upsample(UpsampleMode::Bilinear)));
        r.register(Box::new(UnaryCase::Relu));
        r.register(Box::new(UnaryCase::Sigmoid));
        r.register(Box::new(UnaryCase::Scale));
        r.register(Box::new(BinaryCase::Add));
        r.register(Box::new(BinaryCase::Sub));
        r.register(Box::new(BinaryCase::Mul));
        r.register(Box::new(BinaryCase::ScaleChannels));
        r.register(Box::new(BinaryCase::Concat));
        r.register(Box::new(BinaryCase::Mse));
        r.register(Box::new(BilinearCase));
        r.register(Box::new(DeformCase(DeformWrt::Input)));
        r.register(Box::new(DeformCase(DeformWrt::Weight)));
        r.register(Box::new(DeformCase(DeformWrt::Offsets)));
        r.register(Box::new(BlockCase::ChannelAttention));
        r.register(Box::new(BlockCase::Mpb));
        r.register(Box::new(BlockCase::Rdb));
        r.register(Box::new(BlockCase::MsiBlock));
        r.register(Box::new(ModelCase));
        r
    }
}

impl GradCheckRegistry {
    pub fn register(&mut self, case: Box<dyn GradCase>) {
        self.cases.insert(case.name(), case);
    }

    pub fn get(&self, name: &str) -> Option<&dyn GradCase> {
        self.cases.get(name).map(|c| c.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.cases.keys().copied().collect()
    }

    /// Cases of `module`, or all cases for `None`.
    pub fn select(&self, module: Option<GradModule>) -> impl Iterator<Item = &dyn GradCase> {
        self.cases
            .values()
            .map(|c| c.as_ref())
            .filter(move |c| module.is_none_or(|m| c.module() == m))
    }

    pub fn run(&self, module: Option<GradModule>, opts: &CheckOptions) -> Result<Vec<CaseReport>> {
        self.select(module).map(|c| run_case(c, opts)).collect()
    }
}

fn input(store: &mut ParamStore, name: &str, t: Tensor, frozen: bool) -> Result<ParamId> {
    let id = store.insert(name, t)?;
    store.get_mut(id).frozen = frozen;
    Ok(id)
}

fn rand_input(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, shape: Shape) -> Result<ParamId> {
    input(store, name, Tensor::uniform(shape, -1.0, 1.0, rng), false)
}

/// Uniform values whose magnitude is at least `gap`, keeping kinks out of reach
/// of the finite-difference step.
fn away_from_zero(shape: Shape, gap: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let t = Tensor::uniform(shape, gap, 1.0, rng);
    let signs: Vec<f32> = (0..t.numel()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    Tensor::new(shape, t.data().iter().zip(signs).map(|(a, s)| a * s).collect()).expect("same shape")
}

/// Offsets with integer parts in `[-2, 2]` and fractional parts in `[0.15, 0.85]`.
fn fractional_offsets(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..shape.numel())
        .map(|_| rng.random_range(-2i32..=2) as f32 + rng.random_range(0.15f32..0.85))
        .collect();
    Tensor::new(shape, data).expect("length matches")
}

struct ConvCase {
    name: &'static str,
    geom: ConvGeom,
}

impl GradCase for ConvCase {
    fn name(&self) -> &'static str {
        self.name
    }

    fn module(&self) -> GradModule {
        GradModule::Tensor
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut s = ParamStore::new();
        let x = rand_input(&mut s, rng, "x", Shape::new(2, 3, 7, 6))?;
        let w = rand_input(&mut s, rng, "w", Shape::new(4, 3, 3, 3))?;
        let b = rand_input(&mut s, rng, "b", Shape::new(1, 4, 1, 1))?;
        let geom = self.geom;
        Ok(Setup::new(s, move |g, ps| {
            let (x, w, b) = (g.param(ps, x)?, g.param(ps, w)?, g.param(ps, b)?);
            g.conv2d(x, w, Some(b), geom)
        }))
    }
}

struct PoolCase {
    name: &'static str,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl GradCase for PoolCase {
    fn name(&self) -> &'static str {
        self.name
    }

    fn module(&self) -> GradModule {
        GradModule::Tensor
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut s = ParamStore::new();
        let x = rand_input(&mut s, rng, "x", Shape::new(2, 2, 6, 6))?;
        let (k, st, p) = (self.kernel, self.stride, self.padding);
        Ok(Setup::new(s, move |g, ps| {
            let x = g.param(ps, x)?;
            g.avgpool2d(x, k, st, p)
        }))
    }
}

#[derive(Clone, Copy)]
enum UnaryCase {
    GlobalAvgPool,
    Upsample(UpsampleMode),
    Relu,
    Sigmoid,
    Scale,
}

impl GradCase for UnaryCase {
    fn name(&self) -> &'static str {
        match self {
            Self::GlobalAvgPool => "global_avgpool",
            Self::Upsample(UpsampleMode::Nearest) => "upsample_nearest",
            Self::Upsample(UpsampleMode::Bilinear) => "upsample_bilinear",
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Scale => "scale",
        }
    }

    fn module(&self) -> GradModule {
        GradModule::Tensor
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut s = ParamStore::new();
        let shape = Shape::new(2, 3, 5, 4);
        let x = match self {
            Self::Relu => input(&mut s, "x", away_from_zero(shape, 0.05, rng), false)?,
            _ => input(&mut s, "x", Tensor::uniform(shape, -2.0, 2.0, rng), false)?,
        };
        let op = *self;
        Ok(Setup::new(s, move |g, ps| {
            let x = g.param(ps, x)?;
            match op {
                Self::GlobalAvgPool => g.global_avgpool(x),
                Self::Upsample(mode) => g.upsample2x(x, mode),
                Self::Relu => g.relu(x),
                Self::Sigmoid => g.sigmoid(x),
                Self::Scale => g.scale(x, -1.75),
            }
        }))
    }
}

#[derive(Clone, Copy)]
enum BinaryCase {
    Add,
    Sub,
    Mul,
    ScaleChannels,
    Concat,
    Mse,
}

impl GradCase for BinaryCase {
    fn name(&self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::ScaleChannels => "scale_channels",
            Self::Concat => "concat",
            Self::Mse => "mse",
        }
    }

    fn module(&self) -> GradModule {
        GradModule::Tensor
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut s = ParamStore::new();
        let shape = Shape::new(2, 3, 4, 5);
        let second = match self {
            Self::ScaleChannels => Shape::new(2, 3, 1, 1),
            Self::Concat => shape.with_channels(2),
            _ => shape,
        };
        let a = rand_input(&mut s, rng, "a", shape)?;
        let b = rand_input(&mut s, rng, "b", second)?;
        let op = *self;
        Ok(Setup::new(s, move |g, ps| {
            let (a, b) = (g.param(ps, a)?, g.param(ps, b)?);
            match op {
                Self::Add => g.add(a, b),
                Self::Sub => g.sub(a, b),
                Self::Mul => g.mul(a, b),
                Self::ScaleChannels => g.scale_channels(a, b),
                Self::Concat => g.concat_channels(&[a, b]),
                Self::Mse => g.mse_loss(a, b),
            }
        }))
    }
}

/// Bilinear sampling in isolation: a 1x1 deformable convolution with a unit
/// weight reads every pixel at its position plus a fractional offset.
struct BilinearCase;

impl GradCase for BilinearCase {
    fn name(&self) -> &'static str {
        "bilinear_sample"
    }

    fn module(&self) -> GradModule {
        GradModule::Deform
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut s = ParamStore::new();
        let x = rand_input(&mut s, rng, "x", Shape::new(1, 1, 6, 6))?;
        let off = input(&mut s, "offsets", fractional_offsets(Shape::new(1, 2, 6, 6), rng), false)?;
        let w = input(&mut s, "w", Tensor::full(Shape::new(1, 1, 1, 1), 1.0), true)?;
        Ok(Setup::new(s, move |g, ps| {
            let (x, off, w) = (g.param(ps, x)?, g.param(ps, off)?, g.param(ps, w)?);
            g.deform_conv2d(x, off, w, None, ConvGeom::default())
        }))
    }
}

#[derive(Clone, Copy)]
enum DeformWrt {
    Input,
    Weight,
    Offsets,
}

struct DeformCase(DeformWrt);

impl GradCase for DeformCase {
    fn name(&self) -> &'static str {
        match self.0 {
            DeformWrt::Input => "deform_conv2d_input",
            DeformWrt::Weight => "deform_conv2d_weight",
            DeformWrt::Offsets => "deform_conv2d_offsets",
        }
    }

    fn module(&self) -> GradModule {
        GradModule::Deform
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut s = ParamStore::new();
        let wrt = self.0;
        let x = input(&mut s, "x", Tensor::uniform(Shape::new(2, 3, 6, 5), -1.0, 1.0, rng), !matches!(wrt, DeformWrt::Input))?;
        let off = input(
            &mut s,
            "offsets",
            fractional_offsets(Shape::new(2, 18, 6, 5), rng),
            !matches!(wrt, DeformWrt::Offsets),
        )?;
        let weight_frozen = !matches!(wrt, DeformWrt::Weight);
        let w = input(&mut s, "w", Tensor::uniform(Shape::new(4, 3, 3, 3), -1.0, 1.0, rng), weight_frozen)?;
        let b = input(&mut s, "b", Tensor::uniform(Shape::new(1, 4, 1, 1), -1.0, 1.0, rng), weight_frozen)?;
        Ok(Setup::new(s, move |g, ps| {
            let (x, off) = (g.param(ps, x)?, g.param(ps, off)?);
            let (w, b) = (g.param(ps, w)?, g.param(ps, b)?);
            g.deform_conv2d(x, off, w, Some(b), ConvGeom::same(3, 1))
        }))
    }
}

/// Builds a block under a fresh store and perturbs every parameter so that
/// zero-initialised layers carry gradient.
fn block_store<B>(rng: &mut ChaCha8Rng, build: impl FnOnce(&mut ParamBuilder<'_>) -> Result<B>) -> Result<(ParamStore, B)> {
    let mut store = ParamStore::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let block = build(&mut ParamBuilder::new(&mut store, &mut init_rng, ""))?;
    jitter(&mut store, rng);
    Ok((store, block))
}

fn jitter(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for (_, p) in store.iter_mut() {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.1f32..0.1);
        }
    }
}

#[derive(Clone, Copy)]
enum BlockCase {
    ChannelAttention,
    Mpb,
    Rdb,
    MsiBlock,
}

impl GradCase for BlockCase {
    fn name(&self) -> &'static str {
        match self {
            Self::ChannelAttention => "channel_attention",
            Self::Mpb => "mpb",
            Self::Rdb => "rdb",
            Self::MsiBlock => "msiblock",
        }
    }

    fn module(&self) -> GradModule {
        GradModule::Arch
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let c = 4;
        let shape = Shape::new(1, c, 6, 6);
        let setup = match self {
            Self::ChannelAttention => {
                let (mut s, block) = block_store(rng, |b| ChannelAttention::new(b, "ca", c, 2))?;
                let x = rand_input(&mut s, rng, "x", shape)?;
                Setup::new(s, move |g, ps| {
                    let x = g.param(ps, x)?;
                    block.forward(g, ps, x)
                })
            }
            Self::Mpb => {
                let (mut s, block) = block_store(rng, |b| Mpb::new(b, "mpb", c, &[1, 2], 2))?;
                let x = rand_input(&mut s, rng, "x", shape)?;
                Setup::new(s, move |g, ps| {
                    let x = g.param(ps, x)?;
                    block.forward(g, ps, x)
                })
            }
            Self::Rdb => {
                let (mut s, block) = block_store(rng, |b| Rdb::new(b, "rdb", c, 2))?;
                let x = rand_input(&mut s, rng, "x", shape)?;
                Setup::new(s, move |g, ps| {
                    let x = g.param(ps, x)?;
                    block.forward(g, ps, x)
                })
            }
            Self::MsiBlock => {
                let (mut s, block) = block_store(rng, |b| MsiBlock::new(b, "msib", c, 2 * c, &[1, 2], 2))?;
                let x = rand_input(&mut s, rng, "x", shape)?;
                let d = rand_input(&mut s, rng, "deg", shape.with_channels(2 * c))?;
                Setup::new(s, move |g, ps| {
                    use crate::nn::DegFusion;
                    let (x, d) = (g.param(ps, x)?, g.param(ps, d)?);
                    block.forward(g, ps, x, d)
                })
            }
        };
        Ok(Setup {
            sampling: Sampling::Total(24),
            ..setup
        })
    }
}

/// The full encoder + deraining network on a 16x16 input, 20 parameters per seed.
struct ModelCase;

impl GradCase for ModelCase {
    fn name(&self) -> &'static str {
        "model"
    }

    fn module(&self) -> GradModule {
        GradModule::Arch
    }

    fn tolerance(&self) -> f64 {
        1e-2
    }

    fn setup(&self, rng: &mut ChaCha8Rng) -> Result<Setup> {
        let mut cfg = ModelConfig::with_base(4);
        cfg.ca_reduction = 2;
        let mut nets = Networks::build(&cfg, rng.random())?;
        let mut store = std::mem::take(&mut nets.store);
        jitter(&mut store, rng);
        let rainy = Tensor::uniform(Shape::new(1, 3, 16, 16), 0.0, 1.0, rng);
        Ok(Setup {
            store,
            forward: Box::new(move |g, ps| {
                let r = g.constant(rainy.clone())?;
                let deg = nets.encoder.as_ref().map(|e| e.forward(g, ps, r)).transpose()?;
                nets.restorer.forward(g, ps, r, deg.as_ref())
            }),
            sampling: Sampling::Total(20),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floors_denominator_at_one() {
        assert_eq!(relative_error(0.5, 0.0), 0.5);
        assert!((relative_error(2.2, 2.0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn registry_covers_every_module() {
        let r = GradCheckRegistry::default();
        for m in [GradModule::Tensor, GradModule::Deform, GradModule::Arch] {
            assert!(r.select(Some(m)).count() > 0, "{m}");
        }
        assert_eq!(r.select(None).count(), r.names().len());
    }

    #[test]
    fn total_sampling_stays_in_bounds() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(Shape::new(1, 1, 1, 3))).unwrap();
        s.insert("b", Tensor::zeros(Shape::new(1, 1, 1, 2))).unwrap();
        let picks = targets(&s, Sampling::Total(5), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(picks.len(), 5);
        for (id, i) in picks {
            assert!(i < s.get(id).value.numel());
        }
    }
}
