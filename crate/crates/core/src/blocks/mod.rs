//! Network building blocks: norms, convolutions, patch layers, the VSS block
//! and its label-conditioned variant, and the prompt conditioner.

mod conditioner;
mod layers;
mod vss;

pub use conditioner::{Conditioner, ConditioningMode, MLP_WIDTHS};
pub use layers::{
    patch_index, pixel_shuffle_index, Downsample, DwConv, LayerNorm, Linear, PatchEmbed, PatchExpand, LN_EPS,
    PATCH,
};
pub use vss::{cvss_forward, vss_forward, VssBlock, VssConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SumError};
use crate::tensor::{Tape, Var};

/// Data-type condition selecting a row of the conditioner output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DomainLabel {
    NaturalMouse,
    NaturalEye,
    ECommerce,
    Ui,
}

impl DomainLabel {
    pub const ALL: [DomainLabel; 4] = [
        DomainLabel::NaturalMouse,
        DomainLabel::NaturalEye,
        DomainLabel::ECommerce,
        DomainLabel::Ui,
    ];

    pub fn code(self) -> usize {
        match self {
            DomainLabel::NaturalMouse => 0,
            DomainLabel::NaturalEye => 1,
            DomainLabel::ECommerce => 2,
            DomainLabel::Ui => 3,
        }
    }

    pub fn from_code(code: usize) -> Result<Self> {
        Self::ALL
            .get(code)
            .copied()
            .ok_or(SumError::Label { code, classes: 4 })
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainLabel::NaturalMouse => "natural-mouse",
            DomainLabel::NaturalEye => "natural-eye",
            DomainLabel::ECommerce => "ecommerce",
            DomainLabel::Ui => "ui",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name() == name)
            .ok_or_else(|| SumError::Config(format!("unknown domain {name:?}")))
    }
}

/// The five modulation scalars in conditioner output order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulationParams {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
    pub alpha3: f64,
}

impl ModulationParams {
    pub const IDENTITY: ModulationParams = ModulationParams {
        alpha1: 1.0,
        beta1: 0.0,
        alpha2: 1.0,
        beta2: 0.0,
        alpha3: 1.0,
    };

    pub fn to_array(self) -> [f64; 5] {
        [self.alpha1, self.beta1, self.alpha2, self.beta2, self.alpha3]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            alpha1: v[0],
            beta1: v[1],
            alpha2: v[2],
            beta2: v[3],
            alpha3: v[4],
        }
    }

    /// Record as tape constants.
    pub fn constants(self, tape: &mut Tape) -> ModulationVars {
        let [a1, b1, a2, b2, a3] = self.to_array().map(|v| tape.scalar(v));
        ModulationVars {
            alpha1: a1,
            beta1: b1,
            alpha2: a2,
            beta2: b2,
            alpha3: a3,
        }
    }
}

/// Modulation scalars as one-element tape nodes, so gradients reach the
/// conditioner.
#[derive(Clone, Copy, Debug)]
pub struct ModulationVars {
    pub alpha1: Var,
    pub beta1: Var,
    pub alpha2: Var,
    pub beta2: Var,
    pub alpha3: Var,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_codes_and_names() {
        for d in DomainLabel::ALL {
            assert_eq!(DomainLabel::from_code(d.code()).unwrap(), d);
            assert_eq!(DomainLabel::from_name(d.name()).unwrap(), d);
        }
        assert!(matches!(
            DomainLabel::from_code(4),
            Err(SumError::Label { code: 4, .. })
        ));
        assert!(DomainLabel::from_name("movie").is_err());
    }
}
