//! Training-only network reconstructing the rainy image from the clean one
//! and the degradation maps.

use crate::arch::config::ModelConfig;
use crate::arch::encoder::DegradationRep;
use crate::arch::FusionFactory;
use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels::{ConvGeom, UpsampleMode};
use crate::nn::{Conv2d, DegFusion, Init, ParamBuilder, Rdb};
use crate::params::ParamStore;

#[derive(Debug)]
pub struct ConstraintNet {
    pub stem: Conv2d,
    pub rdbs: Vec<Rdb>,
    /// Fusion blocks at full, half and quarter resolution.
    pub fusions: Vec<Box<dyn DegFusion>>,
    pub downs: Vec<Conv2d>,
    pub ups: Vec<Conv2d>,
    pub tail: Conv2d,
}

impl ConstraintNet {
    pub fn new(b: &mut ParamBuilder<'_>, cfg: &ModelConfig, fusion: FusionFactory) -> Result<Self> {
        let same = ConvGeom::same(3, 1);
        let stem = b.conv("stem", 3, cfg.width(0), 3, same, Init::FanIn)?;
        let rdbs = (0..cfg.rdb_count)
            .map(|i| Rdb::new(b, &format!("rdb{i}"), cfg.width(0), cfg.rdb_growth))
            .collect::<Result<Vec<_>>>()?;
        let fusions = (0..cfg.num_scales)
            .map(|l| fusion(b, &format!("fusion{l}"), cfg.width(l), cfg.width(l), cfg))
            .collect::<Result<Vec<_>>>()?;
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        for l in 0..cfg.num_scales - 1 {
            downs.push(b.conv(&format!("down{l}"), cfg.width(l), cfg.width(l + 1), 3, ConvGeom::new(2, 1, 1), Init::FanIn)?);
            ups.push(b.conv(&format!("up{l}"), cfg.width(l + 1), cfg.width(l), 3, same, Init::FanIn)?);
        }
        let tail = b.conv("tail", cfg.width(0), 3, 3, same, Init::FanIn)?;
        Ok(Self {
            stem,
            rdbs,
            fusions,
            downs,
            ups,
            tail,
        })
    }

    /// `R_hat = C(B, deg)`.
    ///
    /// Layout: stem, first RDB, fusion with `deg1`; a side branch descends to
    /// half and quarter resolution fusing `deg2` and `deg3` and returns
    /// through upsampling with additive skips; then the remaining RDBs and a
    /// 3x3 tail.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, clean: Var, deg: &DegradationRep) -> Result<Var> {
        let (cs, ds) = (g.shape(clean), g.shape(deg.level(0)));
        if cs.c != 3 || (cs.n, cs.h, cs.w) != (ds.n, ds.h, ds.w) {
            return Err(Error::ShapeMismatch {
                op: "constraint_forward",
                left: cs,
                right: ds,
            });
        }
        let x = self.stem.forward(g, ps, clean)?;
        let mut f = g.relu(x)?;
        f = self.rdbs[0].forward(g, ps, f)?;
        f = self.fusions[0].forward(g, ps, f, deg.level(0))?;

        let mut path = vec![f];
        for (l, down) in self.downs.iter().enumerate() {
            let y = down.forward(g, ps, *path.last().expect("non-empty"))?;
            let y = g.relu(y)?;
            path.push(self.fusions[l + 1].forward(g, ps, y, deg.level(l + 1))?);
        }
        let mut up = path.pop().expect("deepest level");
        for (l, conv) in self.ups.iter().enumerate().rev() {
            let u = g.upsample2x(up, UpsampleMode::Nearest)?;
            let u = conv.forward(g, ps, u)?;
            up = g.add(u, path[l])?;
        }
        f = up;
        for rdb in &self.rdbs[1..] {
            f = rdb.forward(g, ps, f)?;
        }
        let out = self.tail.forward(g, ps, f)?;
        g.tag("rhat", out);
        Ok(out)
    }
}
