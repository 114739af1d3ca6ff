use std::time::Instant;

use ldrcnet::deform::deform_conv2d;
use ldrcnet::kernels::reference::conv2d_direct;
use ldrcnet::kernels::{conv2d, ConvGeom};
use ldrcnet::{Result, Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{BenchArgs, CliError, CliResult};

/// Largest accepted deviation from the oracle.
pub const GATE_TOLERANCE: f32 = 1e-5;

/// Inputs of one benchmark size.
pub struct Workload {
    pub x: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
    pub geom: ConvGeom,
}

impl Workload {
    pub fn new(size: usize, channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ size as u64);
        Self {
            x: Tensor::uniform(Shape::new(1, channels, size, size), -1.0, 1.0, &mut rng),
            weight: Tensor::uniform(Shape::new(channels, channels, 3, 3), -0.3, 0.3, &mut rng),
            bias: Tensor::uniform(Shape::new(1, channels, 1, 1), -0.1, 0.1, &mut rng),
            geom: ConvGeom::same(3, 1),
        }
    }

    fn zero_offsets(&self) -> Tensor {
        let s = self.x.shape();
        Tensor::zeros(Shape::new(s.n, 18, s.h, s.w))
    }
}

pub trait BenchKernel {
    fn name(&self) -> &'static str;

    /// The timed computation.
    fn run(&self, w: &Workload) -> Result<Tensor>;

    /// What the kernel must reproduce.
    fn oracle(&self, w: &Workload) -> Result<Tensor>;
}

pub struct Conv;

impl BenchKernel for Conv {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn run(&self, w: &Workload) -> Result<Tensor> {
        conv2d(&w.x, &w.weight, Some(&w.bias), w.geom)
    }

    fn oracle(&self, w: &Workload) -> Result<Tensor> {
        conv2d_direct(&w.x, &w.weight, Some(&w.bias), w.geom)
    }
}

/// Deformable convolution at zero offsets, gated against the dense conv path.
pub struct Deform;

impl BenchKernel for Deform {
    fn name(&self) -> &'static str {
        "deform"
    }

    fn run(&self, w: &Workload) -> Result<Tensor> {
        deform_conv2d(&w.x, &w.zero_offsets(), &w.weight, Some(&w.bias), w.geom)
    }

    fn oracle(&self, w: &Workload) -> Result<Tensor> {
        conv2d(&w.x, &w.weight, Some(&w.bias), w.geom)
    }
}

pub struct BenchRegistry {
    kernels: Vec<Box<dyn BenchKernel>>,
}

impl Default for BenchRegistry {
    fn default() -> Self {
        let mut r = Self { kernels: Vec::new() };
        r.register(Box::new(Conv));
        r.register(Box::new(Deform));
        r
    }
}

impl BenchRegistry {
    pub fn register(&mut self, k: Box<dyn BenchKernel>) {
        self.kernels.push(k);
    }

    pub fn get(&self, name: &str) -> Option<&dyn BenchKernel> {
        self.kernels.iter().find(|k| k.name() == name).map(|k| k.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.kernels.iter().map(|k| k.name()).collect()
    }
}

pub fn run(a: BenchArgs) -> CliResult {
    let registry = BenchRegistry::default();
    let kernel = registry
        .get(&a.op)
        .ok_or_else(|| CliError::Usage(format!("unknown op `{}`; available: {}", a.op, registry.names().join(", "))))?;
    if a.sizes.is_empty() || a.sizes.contains(&0) || a.reps == 0 || a.channels == 0 {
        return Err(CliError::Usage("--sizes, --channels and --reps must be positive".into()));
    }
    let loads: Vec<Workload> = a.sizes.iter().map(|&s| Workload::new(s, a.channels, a.seed)).collect();
    for (size, w) in a.sizes.iter().zip(&loads) {
        let mut got = kernel.run(w)?;
        if a.inject_fault {
            got = got.map(|v| v + 1e-3);
        }
        let err = got.max_abs_diff(&kernel.oracle(w)?)?;
        if !(err <= GATE_TOLERANCE) {
            return Err(CliError::Check(format!(
                "{} at size {size} deviates from its oracle by {err:.3e} (tolerance {GATE_TOLERANCE:.0e}); timing aborted",
                kernel.name()
            )));
        }
    }
    eprintln!("op\tsize\tchannels\tseconds_per_call\tmelem_per_s");
    for (size, w) in a.sizes.iter().zip(&loads) {
        kernel.run(w)?;
        let start = Instant::now();
        let mut elems = 0usize;
        for _ in 0..a.reps {
            elems += kernel.run(w)?.numel();
        }
        let secs = start.elapsed().as_secs_f64();
        println!(
            "{}\t{size}\t{}\t{:.6}\t{:.2}",
            kernel.name(),
            a.channels,
            secs / a.reps as f64,
            elems as f64 / secs / 1e6
        );
    }
    Ok(())
}
