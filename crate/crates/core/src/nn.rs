//! Parameterised building blocks shared by the encoder, the constraint
//! network and the deraining U-Net.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::ConvGeom;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform in `±sqrt(3 / fan_in)`; biases start at zero.
    FanIn,
    Zeros,
}

/// Creates parameters under a dotted name prefix from a seeded generator.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng, prefix: impl Into<String>) -> Self {
        Self {
            store,
            rng,
            prefix: prefix.into(),
        }
    }

    pub fn scope(&mut self, name: impl std::fmt::Display) -> ParamBuilder<'_> {
        ParamBuilder {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}{}.", self.prefix, name),
        }
    }

    fn tensor(&mut self, name: &str, shape: Shape, fan_in: usize, init: Init) -> Result<ParamId> {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::FanIn => {
                let bound = (3.0 / fan_in as f32).sqrt();
                let data = (0..shape.numel()).map(|_| self.rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, data)?
            }
        };
        self.store.insert(format!("{}{}", self.prefix, name), t)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, geom: ConvGeom, init: Init) -> Result<Conv2d> {
        let mut s = self.scope(name);
        let weight = s.tensor("weight", Shape::new(cout, cin, kernel, kernel), cin * kernel * kernel, init)?;
        let bias = s.tensor("bias", Shape::new(1, cout, 1, 1), 1, Init::Zeros)?;
        Ok(Conv2d {
            weight,
            bias: Some(bias),
            geom,
            cin,
            cout,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub cin: usize,
    pub cout: usize,
}

impl Conv2d {
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight)?;
        let b = self.bias.map(|b| g.param(ps, b)).transpose()?;
        g.conv2d(x, w, b, self.geom)
    }

    pub fn params(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

fn relu_conv(conv: &Conv2d, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
    let y = conv.forward(g, ps, x)?;
    g.relu(y)
}

/// 3x3 deformable convolution whose offsets come from a zero-initialised
/// 3x3 predictor, so a fresh layer behaves exactly like a plain convolution.
#[derive(Clone, Debug)]
pub struct DeformLayer {
    pub offset_predictor: Conv2d,
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl DeformLayer {
    pub const KERNEL: usize = 3;

    pub fn new(b: &mut ParamBuilder<'_>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let k = Self::KERNEL;
        let geom = ConvGeom::same(k, 1);
        let offset_predictor = b
            .scope(name)
            .conv("offset", cin, 2 * k * k, k, ConvGeom::same(k, 1), Init::Zeros)?;
        let mut s = b.scope(name);
        let weight = s.tensor("weight", Shape::new(cout, cin, k, k), cin * k * k, Init::FanIn)?;
        let bias = s.tensor("bias", Shape::new(1, cout, 1, 1), 1, Init::Zeros)?;
        Ok(Self {
            offset_predictor,
            weight,
            bias,
            geom,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let offsets = self.offset_predictor.forward(g, ps, x)?;
        let w = g.param(ps, self.weight)?;
        let b = g.param(ps, self.bias)?;
        g.deform_conv2d(x, offsets, w, Some(b), self.geom)
    }
}

/// Squeeze-and-excitation gate: `x * sigmoid(W2 relu(W1 gap(x)))`.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub squeeze: Conv2d,
    pub excite: Conv2d,
}

impl ChannelAttention {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "channel attention width {channels} is not divisible by reduction {reduction}"
            )));
        }
        let mut s = b.scope(name);
        let hidden = channels / reduction;
        Ok(Self {
            squeeze: s.conv("squeeze", channels, hidden, 1, ConvGeom::default(), Init::FanIn)?,
            excite: s.conv("excite", hidden, channels, 1, ConvGeom::default(), Init::FanIn)?,
        })
    }

    pub fn gates(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let pooled = g.global_avgpool(x)?;
        let h = relu_conv(&self.squeeze, g, ps, pooled)?;
        let e = self.excite.forward(g, ps, h)?;
        g.sigmoid(e)
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let s = self.gates(g, ps, x)?;
        g.scale_channels(x, s)
    }
}

/// `x + conv(relu(conv(x)))`, second convolution zero-initialised.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub first: Conv2d,
    pub second: Conv2d,
}

impl ResBlock {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, channels: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let geom = ConvGeom::same(3, 1);
        Ok(Self {
            first: s.conv("conv1", channels, channels, 3, geom, Init::FanIn)?,
            second: s.conv("conv2", channels, channels, 3, geom, Init::Zeros)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let h = relu_conv(&self.first, g, ps, x)?;
        let h = self.second.forward(g, ps, h)?;
        g.add(x, h)
    }
}

/// Residual dense block: three densely connected 3x3 conv + ReLU layers,
/// a 1x1 local fusion back to the input width and a residual add.
#[derive(Clone, Debug)]
pub struct Rdb {
    pub layers: Vec<Conv2d>,
    pub fusion: Conv2d,
}

impl Rdb {
    pub const LAYERS: usize = 3;

    pub fn new(b: &mut ParamBuilder<'_>, name: &str, channels: usize, growth: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let layers = (0..Self::LAYERS)
            .map(|i| s.conv(&format!("dense{i}"), channels + i * growth, growth, 3, ConvGeom::same(3, 1), Init::FanIn))
            .collect::<Result<Vec<_>>>()?;
        let fusion = s.conv("fusion", Self::fused_width(channels, growth), channels, 1, ConvGeom::default(), Init::Zeros)?;
        Ok(Self { layers, fusion })
    }

    /// Width of the concatenation that feeds the local fusion.
    pub fn fused_width(channels: usize, growth: usize) -> usize {
        channels + Self::LAYERS * growth
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let mut feats = vec![x];
        for layer in &self.layers {
            let input = if feats.len() == 1 { x } else { g.concat_channels(&feats)? };
            feats.push(relu_conv(layer, g, ps, input)?);
        }
        let dense = g.concat_channels(&feats)?;
        let fused = self.fusion.forward(g, ps, dense)?;
        g.add(x, fused)
    }
}

/// Multi-path block: 1x1, avgpool+1x1 and dilated 3x3 branches, concatenated,
/// channel-attended, fused back by a zero-initialised 1x1 and added to the input.
#[derive(Clone, Debug)]
pub struct Mpb {
    pub pointwise: Conv2d,
    pub pooled: Conv2d,
    pub dilated: Vec<Conv2d>,
    pub attention: ChannelAttention,
    pub fusion: Conv2d,
}

impl Mpb {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, channels: usize, dilations: &[usize], reduction: usize) -> Result<Self> {
        let mut s = b.scope(name);
        let pointwise = s.conv("pointwise", channels, channels, 1, ConvGeom::default(), Init::FanIn)?;
        let pooled = s.conv("pooled", channels, channels, 1, ConvGeom::default(), Init::FanIn)?;
        let dilated = dilations
            .iter()
            .map(|&d| s.conv(&format!("dilated{d}"), channels, channels, 3, ConvGeom::same(3, d), Init::FanIn))
            .collect::<Result<Vec<_>>>()?;
        let width = channels * (2 + dilations.len());
        let attention = ChannelAttention::new(&mut s, "attention", width, reduction)?;
        let fusion = s.conv("fusion", width, channels, 1, ConvGeom::default(), Init::Zeros)?;
        Ok(Self {
            pointwise,
            pooled,
            dilated,
            attention,
            fusion,
        })
    }

    pub fn branch_count(&self) -> usize {
        2 + self.dilated.len()
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let mut branches = Vec::with_capacity(self.branch_count());
        branches.push(relu_conv(&self.pointwise, g, ps, x)?);
        let avg = g.avgpool2d(x, 3, 1, 1)?;
        branches.push(relu_conv(&self.pooled, g, ps, avg)?);
        for conv in &self.dilated {
            branches.push(relu_conv(conv, g, ps, x)?);
        }
        let cat = g.concat_channels(&branches)?;
        let att = self.attention.forward(g, ps, cat)?;
        let fused = self.fusion.forward(g, ps, att)?;
        g.add(x, fused)
    }
}

/// How decoder features are combined with a degradation map of the same
/// resolution.
pub trait DegFusion: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> &'static str;

    fn forward(&self, g: &mut Graph, ps: &ParamStore, features: Var, deg: Var) -> Result<Var>;
}

/// Multi-scale interaction block: both inputs aligned by 1x1 convolutions,
/// concatenated and channel-attended, then fed through parallel residual
/// chains whose outputs are concatenated and projected back to the feature width.
#[derive(Clone, Debug)]
pub struct MsiBlock {
    pub align_features: Conv2d,
    pub align_deg: Conv2d,
    pub attention: ChannelAttention,
    pub chains: Vec<Vec<ResBlock>>,
    pub output: Conv2d,
}

impl MsiBlock {
    pub fn new(
        b: &mut ParamBuilder<'_>,
        name: &str,
        channels: usize,
        deg_channels: usize,
        depths: &[usize],
        reduction: usize,
    ) -> Result<Self> {
        let mut s = b.scope(name);
        let pw = ConvGeom::default();
        let align_features = s.conv("align_features", channels, channels, 1, pw, Init::FanIn)?;
        let align_deg = s.conv("align_deg", deg_channels, channels, 1, pw, Init::FanIn)?;
        let attention = ChannelAttention::new(&mut s, "attention", 2 * channels, reduction)?;
        let chains = depths
            .iter()
            .enumerate()
            .map(|(i, &depth)| {
                (0..depth)
                    .map(|j| ResBlock::new(&mut s, &format!("chain{i}.rb{j}"), 2 * channels))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let output = s.conv("output", 2 * channels * depths.len(), channels, 1, pw, Init::FanIn)?;
        Ok(Self {
            align_features,
            align_deg,
            attention,
            chains,
            output,
        })
    }

    /// The attended concatenation before the residual chains.
    pub fn interact(&self, g: &mut Graph, ps: &ParamStore, features: Var, deg: Var) -> Result<Var> {
        let (fs, ds) = (g.shape(features), g.shape(deg));
        if (fs.n, fs.h, fs.w) != (ds.n, ds.h, ds.w) {
            return Err(Error::ShapeMismatch {
                op: "msiblock",
                left: fs,
                right: ds,
            });
        }
        let a = self.align_features.forward(g, ps, features)?;
        let d = self.align_deg.forward(g, ps, deg)?;
        let cat = g.concat_channels(&[a, d])?;
        self.attention.forward(g, ps, cat)
    }
}

impl DegFusion for MsiBlock {
    fn kind(&self) -> &'static str {
        "msiblock"
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, features: Var, deg: Var) -> Result<Var> {
        let fc = self.interact(g, ps, features, deg)?;
        let mut outs = Vec::with_capacity(self.chains.len());
        for chain in &self.chains {
            let mut h = fc;
            for rb in chain {
                h = rb.forward(g, ps, h)?;
            }
            outs.push(h);
        }
        let cat = g.concat_channels(&outs)?;
        self.output.forward(g, ps, cat)
    }
}

/// Plain concatenation followed by a 1x1 projection back to the feature width.
#[derive(Clone, Debug)]
pub struct ConcatFusion {
    pub projection: Conv2d,
}

impl ConcatFusion {
    pub fn new(b: &mut ParamBuilder<'_>, name: &str, channels: usize, deg_channels: usize) -> Result<Self> {
        Ok(Self {
            projection: b
                .scope(name)
                .conv("projection", channels + deg_channels, channels, 1, ConvGeom::default(), Init::FanIn)?,
        })
    }
}

impl DegFusion for ConcatFusion {
    fn kind(&self) -> &'static str {
        "concat"
    }

    fn forward(&self, g: &mut Graph, ps: &ParamStore, features: Var, deg: Var) -> Result<Var> {
        let cat = g.concat_channels(&[features, deg])?;
        self.projection.forward(g, ps, cat)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn input(g: &mut Graph, shape: Shape) -> (Var, Tensor) {
        let t = Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        (g.constant(t.clone()).unwrap(), t)
    }

    #[test]
    fn fan_in_bound_holds() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        let conv = ParamBuilder::new(&mut store, &mut r, "")
            .conv("c", 8, 4, 3, ConvGeom::same(3, 1), Init::FanIn)
            .unwrap();
        let bound = (3.0f32 / 72.0).sqrt();
        let w = store.value(conv.weight);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound / 2.0));
        assert_eq!(store.value(conv.bias.unwrap()).sum(), 0.0);
        assert_eq!(store.name(conv.weight), "c.weight");
    }

    #[test]
    fn saturated_half_gate_halves_input() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        let ca = ChannelAttention::new(&mut ParamBuilder::new(&mut store, &mut r, ""), "ca", 4, 2).unwrap();
        // Zero excitation weights and bias: every gate is sigmoid(0) = 0.5.
        store.get_mut(ca.excite.weight).value.data_mut().fill(0.0);
        let mut g = Graph::new();
        let (x, t) = input(&mut g, Shape::new(2, 4, 3, 5));
        let y = ca.forward(&mut g, &store, x).unwrap();
        assert_eq!(g.shape(y), t.shape());
        assert_eq!(g.value(y).max_abs_diff(&t.scale(0.5)).unwrap(), 0.0);
    }

    #[test]
    fn attention_rejects_indivisible_width() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        assert!(ChannelAttention::new(&mut ParamBuilder::new(&mut store, &mut r, ""), "ca", 6, 4).is_err());
    }

    #[test]
    fn fresh_residual_blocks_are_identity() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        let mut b = ParamBuilder::new(&mut store, &mut r, "");
        let rb = ResBlock::new(&mut b, "rb", 4).unwrap();
        let rdb = Rdb::new(&mut b, "rdb", 4, 2).unwrap();
        let mpb = Mpb::new(&mut b, "mpb", 4, &[1, 2], 2).unwrap();
        assert_eq!(mpb.branch_count(), 4);
        assert_eq!(Rdb::fused_width(4, 2), 10);
        assert_eq!(store.value(rdb.fusion.weight).shape(), Shape::new(4, 10, 1, 1));
        let mut g = Graph::new();
        let (x, t) = input(&mut g, Shape::new(1, 4, 6, 6));
        for y in [
            rb.forward(&mut g, &store, x).unwrap(),
            rdb.forward(&mut g, &store, x).unwrap(),
            mpb.forward(&mut g, &store, x).unwrap(),
        ] {
            assert_eq!(g.value(y).data(), t.data());
        }
    }

    #[test]
    fn fresh_deform_layer_is_plain_conv() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        let layer = DeformLayer::new(&mut ParamBuilder::new(&mut store, &mut r, ""), "d", 3, 5).unwrap();
        let mut g = Graph::new();
        let (x, _) = input(&mut g, Shape::new(1, 3, 7, 6));
        let y = layer.forward(&mut g, &store, x).unwrap();
        let w = g.param(&store, layer.weight).unwrap();
        let b = g.param(&store, layer.bias).unwrap();
        let z = g.conv2d(x, w, Some(b), layer.geom).unwrap();
        assert!(g.value(y).max_abs_diff(g.value(z)).unwrap() < 1e-5);
    }

    #[test]
    fn msiblock_composes_its_parts() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        let m = MsiBlock::new(&mut ParamBuilder::new(&mut store, &mut r, ""), "m", 4, 8, &[1, 2], 2).unwrap();
        let mut g = Graph::new();
        let (f, _) = input(&mut g, Shape::new(1, 4, 4, 4));
        let d = g.constant(Tensor::full(Shape::new(1, 8, 4, 4), 0.25)).unwrap();
        let y = m.forward(&mut g, &store, f, d).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 4, 4, 4));

        // Fresh residual blocks are identities, so each chain passes the
        // attended concatenation through unchanged.
        let fc = m.interact(&mut g, &store, f, d).unwrap();
        let cat = g.concat_channels(&[fc, fc]).unwrap();
        let expect = m.output.forward(&mut g, &store, cat).unwrap();
        assert_eq!(g.value(y).data(), g.value(expect).data());

        let wrong = g.constant(Tensor::zeros(Shape::new(1, 8, 2, 2))).unwrap();
        assert!(m.forward(&mut g, &store, f, wrong).is_err());
    }

    #[test]
    fn concat_fusion_projects_to_feature_width() {
        let (mut store, mut r) = (ParamStore::new(), rng());
        let c = ConcatFusion::new(&mut ParamBuilder::new(&mut store, &mut r, ""), "c", 4, 6).unwrap();
        let mut g = Graph::new();
        let (f, _) = input(&mut g, Shape::new(1, 4, 4, 4));
        let d = g.constant(Tensor::zeros(Shape::new(1, 6, 4, 4))).unwrap();
        let y = c.forward(&mut g, &store, f, d).unwrap();
        assert_eq!(g.shape(y), Shape::new(1, 4, 4, 4));
        assert_eq!(c.kind(), "concat");
    }
}
