use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DomainLabel, Linear, ModulationParams, ModulationVars};
use crate::error::{Result, SumError};
use crate::tensor::{derive_seed, Binder, Fill, ParamId, ParamStore, Tensor, Var};

/// Output widths of the three conditioner layers.
pub const MLP_WIDTHS: [usize; 3] = [128, 64, 5];

// alpha slots are parameterized as 1 + raw
const SLOT_OFFSET: [f64; 5] = [1.0, 0.0, 1.0, 0.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditioningMode {
    /// Learnable token per class.
    Prompt,
    /// Fixed one-hot class vector zero-padded to the token width.
    OneHot,
}

/// Token table plus the MLP that maps every token to five modulation scalars.
#[derive(Clone, Debug)]
pub struct Conditioner {
    pub mode: ConditioningMode,
    pub tokens: Option<ParamId>,
    pub layers: [Linear; 3],
    pub classes: usize,
    pub token_dim: usize,
}

impl Conditioner {
    /// The final layer starts at zero, so every label initially maps to
    /// [`ModulationParams::IDENTITY`].
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        mode: ConditioningMode,
        classes: usize,
        token_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if classes == 0 || token_dim == 0 {
            return Err(SumError::Config("conditioner needs T >= 1 and D >= 1".into()));
        }
        if mode == ConditioningMode::OneHot && token_dim < classes {
            return Err(SumError::Config(format!(
                "one-hot conditioning needs D >= T (D={token_dim}, T={classes})"
            )));
        }
        let tokens = match mode {
            ConditioningMode::Prompt => {
                let name = format!("{prefix}.tokens");
                let t = Tensor::create(
                    &[classes, token_dim],
                    Fill::SeededUniform {
                        lo: -1.0,
                        hi: 1.0,
                        seed: derive_seed(seed, &name),
                    },
                )?;
                Some(store.add(name, t)?)
            }
            ConditioningMode::OneHot => None,
        };
        let [w0, w1, w2] = MLP_WIDTHS;
        let layers = [
            Linear::init(store, &format!("{prefix}.mlp0"), token_dim, w0, seed)?,
            Linear::init(store, &format!("{prefix}.mlp1"), w0, w1, seed)?,
            Linear::zeroed(store, &format!("{prefix}.mlp2"), w1, w2)?,
        ];
        Ok(Self {
            mode,
            tokens,
            layers,
            classes,
            token_dim,
        })
    }

    fn token_table(&self, b: &mut Binder) -> Result<Var> {
        match self.tokens {
            Some(id) => Ok(b.param(id)),
            None => {
                let mut data = vec![0.0; self.classes * self.token_dim];
                for k in 0..self.classes {
                    data[k * self.token_dim + k] = 1.0;
                }
                b.tape.constant(&[self.classes, self.token_dim], data)
            }
        }
    }

    /// `Y: [T, 5]`, one row of modulation scalars per class.
    pub fn table(&self, b: &mut Binder) -> Result<Var> {
        let z = self.token_table(b)?;
        let h = self.layers[0].forward(b, z)?;
        let h = b.tape.gelu(h)?;
        let h = self.layers[1].forward(b, h)?;
        let h = b.tape.gelu(h)?;
        let raw = self.layers[2].forward(b, h)?;
        let offset = b.tape.constant(&[5], SLOT_OFFSET.to_vec())?;
        b.tape.add(raw, offset)
    }

    pub fn modulation(&self, b: &mut Binder, label: DomainLabel) -> Result<ModulationVars> {
        let code = label.code();
        if code >= self.classes {
            return Err(SumError::Label {
                code,
                classes: self.classes,
            });
        }
        let y = self.table(b)?;
        let mut pick = |k: usize| -> Result<Var> {
            let idx: Arc<[usize]> = vec![code * 5 + k].into();
            b.tape.gather(y, idx, &[1])
        };
        Ok(ModulationVars {
            alpha1: pick(0)?,
            beta1: pick(1)?,
            alpha2: pick(2)?,
            beta2: pick(3)?,
            alpha3: pick(4)?,
        })
    }

    pub fn modulation_values(&self, store: &ParamStore, label: DomainLabel) -> Result<ModulationParams> {
        let mut b = Binder::frozen(store);
        let m = self.modulation(&mut b, label)?;
        let v = [m.alpha1, m.beta1, m.alpha2, m.beta2, m.alpha3].map(|v| b.tape.item(v));
        Ok(ModulationParams::from_slice(&v))
    }

    pub fn num_params(&self) -> usize {
        let tokens = if self.tokens.is_some() {
            self.classes * self.token_dim
        } else {
            0
        };
        tokens + self.layers.iter().map(Linear::num_params).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_at_init_for_every_label() {
        for mode in [ConditioningMode::Prompt, ConditioningMode::OneHot] {
            let mut s = ParamStore::new();
            let c = Conditioner::init(&mut s, "cond", mode, 4, 128, 3).unwrap();
            for d in DomainLabel::ALL {
                assert_eq!(c.modulation_values(&s, d).unwrap(), ModulationParams::IDENTITY);
            }
        }
    }

    #[test]
    fn paper_scale_parameter_count() {
        let mut s = ParamStore::new();
        let c = Conditioner::init(&mut s, "cond", ConditioningMode::Prompt, 4, 128, 3).unwrap();
        let want = 4 * 128 + (128 * 128 + 128) + (128 * 64 + 64) + (64 * 5 + 5);
        assert_eq!(want, 25605);
        assert_eq!(c.num_params(), want);
        assert_eq!(s.num_scalars(), want);

        let mut s = ParamStore::new();
        let c = Conditioner::init(&mut s, "cond", ConditioningMode::OneHot, 4, 128, 3).unwrap();
        assert_eq!(c.num_params(), 25605 - 512);
    }

    fn perturb_last(s: &mut ParamStore, c: &Conditioner, seed: u64) {
        let w = s.get_mut(c.layers[2].weight);
        let n = w.numel();
        let r = Tensor::create(
            &[n],
            Fill::SeededUniform {
                lo: -0.5,
                hi: 0.5,
                seed,
            },
        )
        .unwrap();
        w.data_mut().copy_from_slice(r.data());
    }

    #[test]
    fn distinct_tokens_give_distinct_rows() {
        let mut s = ParamStore::new();
        let c = Conditioner::init(&mut s, "cond", ConditioningMode::Prompt, 4, 128, 3).unwrap();
        perturb_last(&mut s, &c, 17);
        let rows: Vec<[f64; 5]> = DomainLabel::ALL
            .iter()
            .map(|&d| c.modulation_values(&s, d).unwrap().to_array())
            .collect();
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(rows[i], rows[j]);
            }
        }
    }

    #[test]
    fn one_hot_tokens_and_difference_from_prompt() {
        let mut s = ParamStore::new();
        let oh = Conditioner::init(&mut s, "oh", ConditioningMode::OneHot, 4, 128, 3).unwrap();
        let mut b = Binder::frozen(&s);
        let z = oh.token_table(&mut b).unwrap();
        let row0 = &b.tape.value(z)[..128];
        assert_eq!(row0[0], 1.0);
        assert!(row0[1..].iter().all(|&v| v == 0.0));

        let mut s = ParamStore::new();
        let oh = Conditioner::init(&mut s, "c", ConditioningMode::OneHot, 4, 128, 3).unwrap();
        let mut s2 = ParamStore::new();
        let pr = Conditioner::init(&mut s2, "c", ConditioningMode::Prompt, 4, 128, 3).unwrap();
        perturb_last(&mut s, &oh, 5);
        perturb_last(&mut s2, &pr, 5);
        let a = oh.modulation_values(&s, DomainLabel::Ui).unwrap();
        let p = pr.modulation_values(&s2, DomainLabel::Ui).unwrap();
        assert_ne!(a, p);
    }

    #[test]
    fn label_out_of_range() {
        let mut s = ParamStore::new();
        let c = Conditioner::init(&mut s, "cond", ConditioningMode::Prompt, 2, 8, 3).unwrap();
        assert!(matches!(
            c.modulation_values(&s, DomainLabel::Ui),
            Err(SumError::Label { code: 3, classes: 2 })
        ));
    }
}
