//! Training losses on the tape: KL, CC, SIM, NSS, MSE and their weighted sum.
//!
//! KL and SIM normalize both maps to sum 1 internally. CC, NSS and MSE use the
//! raw maps. Standard deviations are clamped from below so a flat prediction
//! never divides by zero during training (the metrics module errors instead).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SumError};
use crate::tensor::{Tape, Var};
use crate::verify::{case, project, uniform, GradCase, SuiteModule, OP_TOLERANCE};

/// Regularization constant inside the KL logarithm.
pub const KL_EPS: f64 = 2.2e-16;
/// Lower clamp for standard deviations in loss mode.
pub const SIGMA_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub mse: f64,
}

impl LossWeights {
    pub const PAPER: LossWeights = LossWeights {
        kl: 10.0,
        cc: -2.0,
        sim: -1.0,
        nss: -1.0,
        mse: 5.0,
    };

    pub fn to_array(self) -> [f64; 5] {
        [self.kl, self.cc, self.sim, self.nss, self.mse]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(SumError::Config("loss weights must be finite".into()))
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::PAPER
    }
}

/// Argument order inside the KL logarithm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlOrientation {
    /// `sum g * log(eps + g / (s + eps))`, the usual forward KL.
    #[default]
    Standard,
    /// `sum g * log(eps + s / (g + eps))`, the swapped form; debugging only.
    Literal,
}

fn normalize(t: &mut Tape, x: Var, what: &str) -> Result<Var> {
    let total = t.sum_all(x)?;
    let v = t.item(total);
    if !(v > 0.0) {
        return Err(SumError::Normalization(format!("{what} map sums to {v}, cannot normalize")));
    }
    t.div(x, total)
}

fn centered(t: &mut Tape, x: Var) -> Result<Var> {
    let m = t.mean_all(x)?;
    t.sub(x, m)
}

/// `max(sigma, guard)` for an already centered `c`. The clamp is applied to
/// the variance so the square root is never taken at zero.
fn guarded_std(t: &mut Tape, c: Var) -> Result<Var> {
    let sq = t.mul(c, c)?;
    let var = t.mean_all(sq)?;
    let floor = t.scalar(SIGMA_GUARD * SIGMA_GUARD);
    let var = t.maximum(var, floor)?;
    t.sqrt(var)
}

pub fn kl_var(t: &mut Tape, gt: Var, s: Var, orientation: KlOrientation) -> Result<Var> {
    let g = normalize(t, gt, "ground-truth")?;
    let p = normalize(t, s, "predicted")?;
    let ratio = match orientation {
        KlOrientation::Standard => {
            let den = t.add_scalar(p, KL_EPS)?;
            t.div(g, den)?
        }
        KlOrientation::Literal => {
            let den = t.add_scalar(g, KL_EPS)?;
            t.div(p, den)?
        }
    };
    let inner = t.add_scalar(ratio, KL_EPS)?;
    let lg = t.log(inner)?;
    let terms = t.mul(g, lg)?;
    t.sum_all(terms)
}

pub fn cc_var(t: &mut Tape, gt: Var, s: Var) -> Result<Var> {
    let gc = centered(t, gt)?;
    let sc = centered(t, s)?;
    let prod = t.mul(gc, sc)?;
    let cov = t.mean_all(prod)?;
    let sg = guarded_std(t, gc)?;
    let ss = guarded_std(t, sc)?;
    let den = t.mul(sg, ss)?;
    t.div(cov, den)
}

pub fn sim_var(t: &mut Tape, gt: Var, s: Var) -> Result<Var> {
    let g = normalize(t, gt, "ground-truth")?;
    let p = normalize(t, s, "predicted")?;
    let m = t.minimum(g, p)?;
    t.sum_all(m)
}

/// `fix` must be a 0/1 map with at least one fixation.
pub fn nss_var(t: &mut Tape, fix: Var, s: Var) -> Result<Var> {
    let count: f64 = t.value(fix).iter().sum();
    if !(count >= 1.0) {
        return Err(SumError::Normalization("NSS needs at least one fixation".into()));
    }
    let sc = centered(t, s)?;
    let sd = guarded_std(t, sc)?;
    let z = t.div(sc, sd)?;
    let hits = t.mul(z, fix)?;
    let total = t.sum_all(hits)?;
    t.scale(total, 1.0 / count)
}

pub fn mse_var(t: &mut Tape, gt: Var, s: Var) -> Result<Var> {
    let d = t.sub(gt, s)?;
    let sq = t.mul(d, d)?;
    t.mean_all(sq)
}

/// Component values of one composite evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub cc: f64,
    pub sim: f64,
    pub nss: f64,
    pub mse: f64,
    pub total: f64,
}

/// `w.kl*KL + w.cc*CC + w.sim*SIM + w.nss*NSS + w.mse*MSE`. Components with a
/// zero weight are still evaluated for the breakdown but do not enter the
/// tape sum.
pub fn composite_var(
    t: &mut Tape,
    gt: Var,
    fix: Var,
    s: Var,
    w: &LossWeights,
    orientation: KlOrientation,
) -> Result<(Var, LossBreakdown)> {
    if t.shape(gt) != t.shape(s) || t.shape(fix) != t.shape(s) {
        return Err(SumError::shape(format!(
            "loss maps {:?} / {:?} / {:?}",
            t.shape(gt),
            t.shape(fix),
            t.shape(s)
        )));
    }
    let parts = [
        kl_var(t, gt, s, orientation)?,
        cc_var(t, gt, s)?,
        sim_var(t, gt, s)?,
        nss_var(t, fix, s)?,
        mse_var(t, gt, s)?,
    ];
    let mut total: Option<Var> = None;
    for (&p, &wk) in parts.iter().zip(&w.to_array()) {
        if wk == 0.0 {
            continue;
        }
        let term = t.scale(p, wk)?;
        total = Some(match total {
            Some(acc) => t.add(acc, term)?,
            None => term,
        });
    }
    let total = match total {
        Some(v) => v,
        None => t.scalar(0.0),
    };
    let v = parts.map(|p| t.item(p));
    let breakdown = LossBreakdown {
        kl: v[0],
        cc: v[1],
        sim: v[2],
        nss: v[3],
        mse: v[4],
        total: t.item(total),
    };
    Ok((total, breakdown))
}

fn on_values<F>(a: &[f64], b: &[f64], f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, Var, Var) -> Result<Var>,
{
    if a.len() != b.len() {
        return Err(SumError::shape(format!("maps of {} and {} values", a.len(), b.len())));
    }
    let mut t = Tape::new();
    let x = t.constant(&[a.len()], a.to_vec())?;
    let y = t.constant(&[b.len()], b.to_vec())?;
    let r = f(&mut t, x, y)?;
    Ok(t.item(r))
}

pub fn kl_loss(gt: &[f64], s: &[f64], orientation: KlOrientation) -> Result<f64> {
    on_values(gt, s, |t, g, p| kl_var(t, g, p, orientation))
}

pub fn cc_loss(gt: &[f64], s: &[f64]) -> Result<f64> {
    on_values(gt, s, cc_var)
}

pub fn sim_loss(gt: &[f64], s: &[f64]) -> Result<f64> {
    on_values(gt, s, sim_var)
}

pub fn nss_loss(fix: &[f64], s: &[f64]) -> Result<f64> {
    on_values(fix, s, nss_var)
}

pub fn mse_loss(gt: &[f64], s: &[f64]) -> Result<f64> {
    on_values(gt, s, mse_var)
}

pub fn composite_loss(
    gt: &[f64],
    fix: &[f64],
    s: &[f64],
    w: &LossWeights,
    orientation: KlOrientation,
) -> Result<LossBreakdown> {
    if gt.len() != s.len() || fix.len() != s.len() {
        return Err(SumError::shape("loss maps differ in length".to_string()));
    }
    let mut t = Tape::new();
    let n = s.len();
    let g = t.constant(&[n], gt.to_vec())?;
    let f = t.constant(&[n], fix.to_vec())?;
    let p = t.constant(&[n], s.to_vec())?;
    Ok(composite_var(&mut t, g, f, p, w, orientation)?.1)
}

pub(crate) fn grad_cases() -> Vec<GradCase> {
    use SuiteModule::Objective as O;

    fn maps() -> (Vec<f64>, Vec<f64>) {
        let g = uniform(&[5, 5], 0.05, 1.0, 90).into_data();
        let mut fix = vec![0.0; 25];
        for i in [3, 7, 12, 20] {
            fix[i] = 1.0;
        }
        (g, fix)
    }

    fn check(fault: Option<crate::tensor::OpTag>, which: usize) -> Result<crate::tensor::GradCheckReport> {
        let (g, fix) = maps();
        let s = uniform(&[5, 5], 0.05, 1.0, 91);
        crate::tensor::check_gradients(
            move |t, v| {
                let gv = t.constant(&[5, 5], g.clone())?;
                let fv = t.constant(&[5, 5], fix.clone())?;
                let out = match which {
                    0 => kl_var(t, gv, v[0], KlOrientation::Standard)?,
                    1 => cc_var(t, gv, v[0])?,
                    2 => sim_var(t, gv, v[0])?,
                    3 => nss_var(t, fv, v[0])?,
                    4 => mse_var(t, gv, v[0])?,
                    _ => composite_var(t, gv, fv, v[0], &LossWeights::PAPER, KlOrientation::Standard)?.0,
                };
                // a tiny projection term keeps flat directions from reading as 0/0
                let extra = project(t, v[0], 92)?;
                let extra = t.scale(extra, 1e-3)?;
                t.add(out, extra)
            },
            &[s],
            crate::tensor::DEFAULT_STEP,
            fault,
        )
    }

    vec![
        case(O, "kl", OP_TOLERANCE, |f| check(f, 0)),
        case(O, "cc", OP_TOLERANCE, |f| check(f, 1)),
        case(O, "sim", OP_TOLERANCE, |f| check(f, 2)),
        case(O, "nss", OP_TOLERANCE, |f| check(f, 3)),
        case(O, "mse", OP_TOLERANCE, |f| check(f, 4)),
        case(O, "composite", OP_TOLERANCE, |f| check(f, 5)),
    ]
}
