//! Named architecture variants, selected at runtime by their ablation name.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::config::{Ablation, ModelConfig};
use crate::arch::constraint::ConstraintNet;
use crate::arch::derain::{DerainNet, ResidualHead, Restorer};
use crate::arch::encoder::{deformable_layer, plain_layer, DaEncoder, LayerFactory};
use crate::arch::{concat_fusion, msi_fusion, FusionFactory, Networks, CONSTRAINT_PREFIX, ENCODER_PREFIX, RESTORER_PREFIX};
use crate::error::{Error, Result};
use crate::nn::ParamBuilder;
use crate::params::ParamStore;

/// What the deraining network is built from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RestorerKind {
    UNet,
    ResidualHead,
}

/// One buildable architecture. The defaults describe the full model;
/// ablations override the pieces they remove or replace.
pub trait Variant: Send + Sync {
    fn ablation(&self) -> Ablation;

    fn summary(&self) -> &'static str;

    /// Layer used inside the encoder, or `None` when there is no encoder.
    fn encoder_layer(&self) -> Option<LayerFactory> {
        Some(deformable_layer)
    }

    /// Block fusing degradation maps into features, or `None` for no fusion.
    fn fusion(&self) -> Option<FusionFactory> {
        Some(msi_fusion)
    }

    fn restorer(&self) -> RestorerKind {
        RestorerKind::UNet
    }

    /// Whether the constraint network exists, i.e. the encoder is pretrained
    /// before the deraining network is trained.
    fn has_constraint(&self) -> bool {
        true
    }

    fn build(&self, cfg: &ModelConfig, seed: u64) -> Result<Networks> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = match self.encoder_layer() {
            Some(layer) => Some(DaEncoder::new(&mut ParamBuilder::new(&mut store, &mut rng, ENCODER_PREFIX), cfg, layer)?),
            None => None,
        };
        let constraint = match (self.has_constraint(), &encoder) {
            (true, Some(_)) => {
                let fusion = self.fusion().unwrap_or(msi_fusion);
                Some(ConstraintNet::new(&mut ParamBuilder::new(&mut store, &mut rng, CONSTRAINT_PREFIX), cfg, fusion)?)
            }
            (true, None) => return Err(Error::Config("a constraint network needs an encoder".into())),
            _ => None,
        };
        let mut b = ParamBuilder::new(&mut store, &mut rng, RESTORER_PREFIX);
        let restorer: Box<dyn Restorer> = match self.restorer() {
            RestorerKind::UNet => {
                let fusion = if encoder.is_some() { self.fusion() } else { None };
                Box::new(DerainNet::new(&mut b, cfg, fusion)?)
            }
            RestorerKind::ResidualHead => Box::new(ResidualHead::new(&mut b, cfg)?),
        };
        let mut config = cfg.clone();
        config.ablation = self.ablation();
        Ok(Networks {
            config,
            store,
            encoder,
            constraint,
            restorer,
        })
    }
}

pub struct FullModel;

impl Variant for FullModel {
    fn ablation(&self) -> Ablation {
        Ablation::Full
    }

    fn summary(&self) -> &'static str {
        "deformable encoder + constraint network + U-Net with interaction blocks"
    }
}

pub struct ConvHead;

impl Variant for ConvHead {
    fn ablation(&self) -> Ablation {
        Ablation::S1
    }

    fn summary(&self) -> &'static str {
        "no deraining network; convolutions map the degradation maps to a rain residual"
    }

    fn restorer(&self) -> RestorerKind {
        RestorerKind::ResidualHead
    }
}

pub struct NoEncoder;

impl Variant for NoEncoder {
    fn ablation(&self) -> Ablation {
        Ablation::S2
    }

    fn summary(&self) -> &'static str {
        "no encoder and no constraint network"
    }

    fn encoder_layer(&self) -> Option<LayerFactory> {
        None
    }

    fn fusion(&self) -> Option<FusionFactory> {
        None
    }

    fn has_constraint(&self) -> bool {
        false
    }
}

pub struct Unconstrained;

impl Variant for Unconstrained {
    fn ablation(&self) -> Ablation {
        Ablation::S3
    }

    fn summary(&self) -> &'static str {
        "no constraint network; the encoder stays at its random initialisation"
    }

    fn has_constraint(&self) -> bool {
        false
    }
}

pub struct VanillaEncoder;

impl Variant for VanillaEncoder {
    fn ablation(&self) -> Ablation {
        Ablation::S4
    }

    fn summary(&self) -> &'static str {
        "plain convolutions replace the deformable ones"
    }

    fn encoder_layer(&self) -> Option<LayerFactory> {
        Some(plain_layer)
    }
}

pub struct ConcatInjection;

impl Variant for ConcatInjection {
    fn ablation(&self) -> Ablation {
        Ablation::S5
    }

    fn summary(&self) -> &'static str {
        "concatenation replaces the interaction blocks"
    }

    fn fusion(&self) -> Option<FusionFactory> {
        Some(concat_fusion)
    }
}

pub struct VariantRegistry {
    variants: IndexMap<&'static str, Box<dyn Variant>>,
}

impl Default for VariantRegistry {
    fn default() -> Self {
        let mut r = Self {
            variants: IndexMap::new(),
        };
        r.register(Box::new(FullModel));
        r.register(Box::new(ConvHead));
        r.register(Box::new(NoEncoder));
        r.register(Box::new(Unconstrained));
        r.register(Box::new(VanillaEncoder));
        r.register(Box::new(ConcatInjection));
        r
    }
}

impl VariantRegistry {
    /// Replaces any variant registered under the same name.
    pub fn register(&mut self, v: Box<dyn Variant>) {
        self.variants.insert(v.ablation().name(), v);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Variant> {
        self.variants
            .get(name.to_ascii_lowercase().as_str())
            .map(|v| v.as_ref())
            .ok_or_else(|| Error::Config(format!("no variant named `{name}`; known: {}", self.names().join(", "))))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.variants.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Variant> {
        self.variants.values().map(|v| v.as_ref())
    }
}
