use super::{DwConv, LayerNorm, Linear, ModulationVars};
use crate::error::Result;
use crate::scan::{ss2d, Ss2dParams};
use crate::tensor::{Binder, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VssConfig {
    pub channels: usize,
    pub state: usize,
    pub rank: usize,
    pub shared_ssm: bool,
}

/// Visual state-space block:
///
/// ```text
/// X      = LN1(F)
/// attn   = LN2(SS2D(SiLU(DWConv(Linear_a(X)))))
/// output = Linear_out(SiLU(Linear_g(X)) * attn) + F
/// ```
#[derive(Clone, Debug)]
pub struct VssBlock {
    pub ln1: LayerNorm,
    pub lin_a: Linear,
    pub lin_g: Linear,
    pub dwconv: DwConv,
    pub ssm: Ss2dParams,
    pub ln2: LayerNorm,
    pub lin_out: Linear,
    pub channels: usize,
}

impl VssBlock {
    pub fn init(store: &mut ParamStore, prefix: &str, cfg: VssConfig, seed: u64) -> Result<Self> {
        let c = cfg.channels;
        let p = |s: &str| format!("{prefix}.{s}");
        Ok(Self {
            ln1: LayerNorm::init(store, &p("ln1"), c)?,
            lin_a: Linear::init(store, &p("lin_a"), c, c, seed)?,
            lin_g: Linear::init(store, &p("lin_g"), c, c, seed)?,
            dwconv: DwConv::init(store, &p("dwconv"), c, seed)?,
            ssm: Ss2dParams::init(store, &p("ssm"), c, cfg.state, cfg.rank, cfg.shared_ssm, seed)?,
            ln2: LayerNorm::init(store, &p("ln2"), c)?,
            lin_out: Linear::init(store, &p("lin_out"), c, c, seed)?,
            channels: c,
        })
    }

    /// Plain block when `modulation` is `None`. With modulation:
    /// `X = a1 * LN1(F) + b1` and
    /// `attn = a2 * (a3 * LNcore2(SS2D(..)) * gamma2 + beta2_ln) + b2`,
    /// i.e. `a3` scales the normalized SS2D features before LN2's affine.
    pub fn forward(&self, b: &mut Binder, f: Var, modulation: Option<&ModulationVars>) -> Result<Var> {
        let mut x = self.ln1.forward(b, f)?;
        if let Some(m) = modulation {
            x = b.tape.mul(x, m.alpha1)?;
            x = b.tape.add(x, m.beta1)?;
        }

        let gate = self.lin_g.forward(b, x)?;
        let gate = b.tape.silu(gate)?;

        let a = self.lin_a.forward(b, x)?;
        let a = self.dwconv.forward(b, a)?;
        let a = b.tape.silu(a)?;
        let a = ss2d(b, a, &self.ssm)?;
        let mut a = self.ln2.forward_scaled(b, a, modulation.map(|m| m.alpha3))?;
        if let Some(m) = modulation {
            a = b.tape.mul(a, m.alpha2)?;
            a = b.tape.add(a, m.beta2)?;
        }

        let y = b.tape.mul(gate, a)?;
        let y = self.lin_out.forward(b, y)?;
        b.tape.add(y, f)
    }
}

pub fn vss_forward(b: &mut Binder, f: Var, block: &VssBlock) -> Result<Var> {
    block.forward(b, f, None)
}

pub fn cvss_forward(b: &mut Binder, f: Var, block: &VssBlock, m: &ModulationVars) -> Result<Var> {
    block.forward(b, f, Some(m))
}
