//! Finite-difference gradient suite shared by the `gradcheck` command, the
//! acceptance tests and the unit tests.

use std::fmt;
use std::str::FromStr;

use crate::blocks::{
    Conditioner, ConditioningMode, DomainLabel, Downsample, DwConv, LayerNorm, Linear, PatchEmbed, PatchExpand,
    VssBlock, VssConfig,
};
use crate::error::{Result, SumError};
use crate::scan::{cross_merge_vars, cross_scan_vars, selective_scan, ss2d, Ss2dParams, SsmDirection};
use crate::tensor::{
    check_gradients, Binder, Fill, GradCheckReport, OpTag, ParamId, ParamStore, ScanInputs, SplitMix64, Tape,
    Tensor, Var, DEFAULT_STEP,
};

/// Tolerance for single operations and blocks.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Finite-difference step for the end-to-end check. The loss sits near 50,
/// so round-off at 1e-4 swamps coordinates with gradients below 1e-7.
pub const MODEL_STEP: f64 = 1e-3;
/// Tolerance for the end-to-end model check.
pub const MODEL_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SuiteModule {
    Tensor,
    Scan,
    Blocks,
    Objective,
    Model,
}

impl SuiteModule {
    pub const ALL: [SuiteModule; 5] = [
        SuiteModule::Tensor,
        SuiteModule::Scan,
        SuiteModule::Blocks,
        SuiteModule::Objective,
        SuiteModule::Model,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteModule::Tensor => "tensor",
            SuiteModule::Scan => "scan",
            SuiteModule::Blocks => "blocks",
            SuiteModule::Objective => "objective",
            SuiteModule::Model => "model",
        }
    }
}

impl fmt::Display for SuiteModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SuiteModule {
    type Err = SumError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SumError::Config(format!("unknown gradcheck module {s:?}")))
    }
}

type CaseFn = fn(Option<OpTag>) -> Result<GradCheckReport>;

#[derive(Clone, Copy)]
pub struct GradCase {
    pub module: SuiteModule,
    pub name: &'static str,
    pub tolerance: f64,
    run: CaseFn,
}

impl fmt::Debug for GradCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "GradCase({}/{})", self.module, self.name)
    }
}

impl GradCase {
    /// Run with an optional sign-flip fault in the backward rule of `fault`.
    pub fn run(&self, fault: Option<OpTag>) -> Result<GradCheckReport> {
        (self.run)(fault)
    }
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub module: SuiteModule,
    pub name: &'static str,
    pub tolerance: f64,
    /// `Err` holds the message when the case itself failed to evaluate.
    pub outcome: std::result::Result<GradCheckReport, String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        matches!(&self.outcome, Ok(r) if r.worst_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        match &self.outcome {
            Ok(r) => r.worst_rel_err,
            Err(_) => f64::INFINITY,
        }
    }
}

/// All cases, or those of one module.
pub fn grad_suite(module: Option<SuiteModule>) -> Vec<GradCase> {
    let mut all = Vec::new();
    all.extend(tensor_cases());
    all.extend(scan_cases());
    all.extend(block_cases());
    all.extend(crate::objective::grad_cases());
    all.extend(crate::model::grad_cases());
    all.retain(|c| module.is_none_or(|m| c.module == m));
    all
}

pub fn run_suite(cases: &[GradCase], fault: Option<OpTag>) -> Vec<CaseResult> {
    cases
        .iter()
        .map(|c| CaseResult {
            module: c.module,
            name: c.name,
            tolerance: c.tolerance,
            outcome: c.run(fault).map_err(|e| e.to_string()),
        })
        .collect()
}

pub(crate) fn case(module: SuiteModule, name: &'static str, tolerance: f64, run: CaseFn) -> GradCase {
    GradCase {
        module,
        name,
        tolerance,
        run,
    }
}

// ── helpers ────────────────────────────────────────────────────────────

pub(crate) fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::create(shape, Fill::SeededUniform { lo, hi, seed }).expect("valid shape")
}

/// `sum(w * y)` with fixed random weights, so every output coordinate feeds
/// the loss with a generic coefficient.
pub(crate) fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(tape.shape(y), -1.0, 1.0, seed);
    let shape = w.shape().to_vec();
    let w = tape.constant(&shape, w.into_data())?;
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

/// Which parameter coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// `count` coordinates drawn uniformly over all stored scalars.
    Sample { count: usize, seed: u64 },
}

/// Gradient check over stored parameters: the tape gradient from a
/// trainable [`Binder`] against central differences of a frozen forward.
pub fn check_params<F>(store: &ParamStore, build: F, coords: Coords, fault: Option<OpTag>) -> Result<GradCheckReport>
where
    F: Fn(&mut Binder) -> Result<Var>,
{
    check_params_step(store, build, coords, DEFAULT_STEP, fault)
}

/// [`check_params`] with an explicit finite-difference step.
pub fn check_params_step<F>(
    store: &ParamStore,
    build: F,
    coords: Coords,
    h: f64,
    fault: Option<OpTag>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Binder) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let mut b = Binder::with_tape(store, tape, true);
    let loss = build(&mut b)?;
    let grads = b.param_grads(loss)?;

    let ids: Vec<ParamId> = store.ids().collect();
    let picks: Vec<(ParamId, usize)> = match coords {
        Coords::All => ids
            .iter()
            .flat_map(|&id| (0..store.get(id).numel()).map(move |i| (id, i)))
            .collect(),
        Coords::Sample { count, seed } => {
            let total = store.num_scalars();
            let mut rng = SplitMix64::new(seed);
            let mut flat: Vec<usize> = Vec::with_capacity(count);
            while flat.len() < count.min(total) {
                let k = rng.below(total);
                if !flat.contains(&k) {
                    flat.push(k);
                }
            }
            flat.sort_unstable();
            flat.into_iter()
                .map(|mut k| {
                    for &id in &ids {
                        let n = store.get(id).numel();
                        if k < n {
                            return (id, k);
                        }
                        k -= n;
                    }
                    unreachable!("index below total")
                })
                .collect()
        }
    };

    let mut probe = store.clone();
    let eval = |probe: &ParamStore| -> Result<f64> {
        let mut b = Binder::frozen(probe);
        let l = build(&mut b)?;
        Ok(b.tape.item(l))
    };
    let mut report = GradCheckReport {
        worst_rel_err: 0.0,
        worst_at: (0, 0),
        coords_checked: 0,
    };
    for (id, i) in picks {
        let orig = probe.get(id).data()[i];
        probe.get_mut(id).data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.get_mut(id).data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(SumError::Gradient(format!(
                "loss is non-finite when perturbing {}[{i}]",
                store.name(id)
            )));
        }
        let fd = (fp - fm) / (2.0 * h);
        let auto = grads[id.index()].as_ref().map_or(0.0, |g| g[i]);
        let e = (auto - fd).abs() / (1e-8 + fd.abs());
        if e > report.worst_rel_err {
            report.worst_rel_err = e;
            report.worst_at = (id.index(), i);
        }
        report.coords_checked += 1;
    }
    Ok(report)
}

fn op_check<F>(inputs: &[Tensor], fault: Option<OpTag>, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    check_gradients(
        |t, v| {
            let y = f(t, v)?;
            project(t, y, 0xfeed)
        },
        inputs,
        DEFAULT_STEP,
        fault,
    )
}

fn rand(shape: &[usize], seed: u64) -> Tensor {
    uniform(shape, -1.0, 1.0, seed)
}

// ── tensor ops ─────────────────────────────────────────────────────────

fn tensor_cases() -> Vec<GradCase> {
    use SuiteModule::Tensor as T;
    vec![
        case(T, "add", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 1), rand(&[3, 4], 2)], f, |t, v| t.add(v[0], v[1]))
        }),
        case(T, "add_channel_broadcast", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 1), rand(&[4], 2)], f, |t, v| t.add(v[0], v[1]))
        }),
        case(T, "sub", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 3), rand(&[3, 4], 4)], f, |t, v| t.sub(v[0], v[1]))
        }),
        case(T, "mul", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 5), rand(&[3, 4], 6)], f, |t, v| t.mul(v[0], v[1]))
        }),
        case(T, "mul_scalar_broadcast", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 5), rand(&[1], 6)], f, |t, v| t.mul(v[0], v[1]))
        }),
        case(T, "div", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 7), uniform(&[3, 4], 0.5, 1.5, 8)], f, |t, v| t.div(v[0], v[1]))
        }),
        case(T, "min", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 9), rand(&[3, 4], 10)], f, |t, v| t.minimum(v[0], v[1]))
        }),
        case(T, "max", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 11), rand(&[3, 4], 12)], f, |t, v| t.maximum(v[0], v[1]))
        }),
        case(T, "exp", OP_TOLERANCE, |f| op_check(&[rand(&[3, 4], 13)], f, |t, v| t.exp(v[0]))),
        case(T, "log", OP_TOLERANCE, |f| {
            op_check(&[uniform(&[3, 4], 0.5, 1.5, 14)], f, |t, v| t.log(v[0]))
        }),
        case(T, "sqrt", OP_TOLERANCE, |f| {
            op_check(&[uniform(&[3, 4], 0.5, 1.5, 15)], f, |t, v| t.sqrt(v[0]))
        }),
        case(T, "silu", OP_TOLERANCE, |f| op_check(&[rand(&[3, 4], 16)], f, |t, v| t.silu(v[0]))),
        case(T, "gelu", OP_TOLERANCE, |f| op_check(&[rand(&[3, 4], 17)], f, |t, v| t.gelu(v[0]))),
        case(T, "sigmoid", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 18)], f, |t, v| t.sigmoid(v[0]))
        }),
        case(T, "softplus", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 19)], f, |t, v| t.softplus(v[0]))
        }),
        case(T, "neg", OP_TOLERANCE, |f| op_check(&[rand(&[3, 4], 20)], f, |t, v| t.neg(v[0]))),
        case(T, "affine", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 4], 21)], f, |t, v| t.affine(v[0], -1.7, 0.3))
        }),
        case(T, "matmul", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 5], 22), rand(&[5, 2], 23)], f, |t, v| t.matmul(v[0], v[1]))
        }),
        case(T, "sum", OP_TOLERANCE, |f| {
            op_check(&[rand(&[2, 3, 4], 24)], f, |t, v| t.sum(v[0], &[1]))
        }),
        case(T, "mean", OP_TOLERANCE, |f| {
            op_check(&[rand(&[2, 3, 4], 25)], f, |t, v| t.mean(v[0], &[0, 2]))
        }),
        case(T, "var", OP_TOLERANCE, |f| {
            op_check(&[rand(&[2, 3, 4], 26)], f, |t, v| t.var(v[0], &[2]))
        }),
        case(T, "reshape", OP_TOLERANCE, |f| {
            op_check(&[rand(&[2, 6], 27)], f, |t, v| t.reshape(v[0], &[3, 4]))
        }),
        case(T, "gather", OP_TOLERANCE, |f| {
            op_check(&[rand(&[6], 28)], f, |t, v| t.gather(v[0], vec![5, 0, 0, 3, 2, 5, 1, 1].into(), &[2, 4]))
        }),
        case(T, "layer_norm", OP_TOLERANCE, |f| {
            op_check(&[rand(&[3, 5], 29)], f, |t, v| t.layer_norm_core(v[0], 1e-6))
        }),
        case(T, "dwconv3x3", OP_TOLERANCE, |f| {
            op_check(
                &[rand(&[4, 3, 2], 30), rand(&[2, 3, 3], 31), rand(&[2], 32)],
                f,
                |t, v| t.dwconv3x3(v[0], v[1], v[2]),
            )
        }),
        case(T, "selective_scan", OP_TOLERANCE, |f| {
            let (l, c, n) = (5, 3, 2);
            op_check(
                &[
                    rand(&[l, c], 33),
                    uniform(&[l, c], 0.1, 1.0, 34),
                    uniform(&[c, n], -1.5, -0.2, 35),
                    rand(&[l, n], 36),
                    rand(&[l, n], 37),
                    rand(&[c], 38),
                ],
                f,
                |t, v| {
                    t.selective_scan(ScanInputs {
                        x: v[0],
                        delta: v[1],
                        a: v[2],
                        b: v[3],
                        c: v[4],
                        d: v[5],
                    })
                },
            )
        }),
    ]
}

// ── scan ───────────────────────────────────────────────────────────────

fn store_with_input(shape: &[usize], seed: u64) -> (ParamStore, ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("input", rand(shape, seed)).expect("fresh store");
    (s, id)
}

/// Nudge every parameter away from its structured initial value so no
/// gradient is exactly zero by symmetry.
fn jitter(store: &mut ParamStore, amount: f64, seed: u64) {
    for (k, t) in store.tensors_mut().enumerate() {
        let n = t.numel();
        let noise = uniform(&[n], -amount, amount, seed ^ ((k as u64) << 8));
        for (v, e) in t.data_mut().iter_mut().zip(noise.data()) {
            *v += e;
        }
    }
}

fn scan_cases() -> Vec<GradCase> {
    use SuiteModule::Scan as S;
    vec![
        case(S, "cross_scan_merge", OP_TOLERANCE, |f| {
            let (s, x) = store_with_input(&[3, 2, 2], 40);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let seqs = cross_scan_vars(b, v)?;
                    let mut scaled = seqs;
                    for (k, q) in scaled.iter_mut().enumerate() {
                        *q = b.tape.scale(seqs[k], 1.0 + k as f64)?;
                    }
                    let m = cross_merge_vars(b, scaled, 3, 2)?;
                    project(&mut b.tape, m, 41)
                },
                Coords::All,
                f,
            )
        }),
        case(S, "selective_scan_params", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[6, 4], 42);
            let p = SsmDirection::init(&mut s, "ssm", 4, 2, 1, 43)?;
            jitter(&mut s, 0.2, 44);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = selective_scan(b, v, &p)?;
                    project(&mut b.tape, y, 45)
                },
                Coords::All,
                f,
            )
        }),
        case(S, "ss2d", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[2, 3, 4], 46);
            let p = Ss2dParams::init(&mut s, "ss2d", 4, 2, 1, false, 47)?;
            jitter(&mut s, 0.2, 48);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = ss2d(b, v, &p)?;
                    project(&mut b.tape, y, 49)
                },
                Coords::All,
                f,
            )
        }),
    ]
}

// ── blocks ─────────────────────────────────────────────────────────────

fn block_cases() -> Vec<GradCase> {
    use SuiteModule::Blocks as B;
    vec![
        case(B, "linear", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[2, 2, 3], 50);
            let l = Linear::init(&mut s, "lin", 3, 5, 51)?;
            jitter(&mut s, 0.1, 52);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = l.forward(b, v)?;
                    project(&mut b.tape, y, 53)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "layer_norm", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[2, 3, 4], 54);
            let l = LayerNorm::init(&mut s, "ln", 4)?;
            jitter(&mut s, 0.3, 55);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = l.forward(b, v)?;
                    project(&mut b.tape, y, 56)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "dwconv", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[3, 4, 2], 57);
            let l = DwConv::init(&mut s, "dw", 2, 58)?;
            jitter(&mut s, 0.1, 59);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = l.forward(b, v)?;
                    project(&mut b.tape, y, 60)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "patch_embed", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[8, 4, 3], 61);
            let l = PatchEmbed::init(&mut s, "embed", 4, 62)?;
            jitter(&mut s, 0.1, 63);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = l.forward(b, v)?;
                    project(&mut b.tape, y, 64)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "downsample", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[4, 2, 2], 65);
            let l = Downsample::init(&mut s, "down", 2, 66)?;
            jitter(&mut s, 0.1, 67);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = l.forward(b, v)?;
                    project(&mut b.tape, y, 68)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "patch_expand", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[2, 2, 4], 69);
            let l = PatchExpand::init(&mut s, "up", 4, 2, 70)?;
            jitter(&mut s, 0.1, 71);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = l.forward(b, v)?;
                    project(&mut b.tape, y, 72)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "vss", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[3, 2, 4], 73);
            let blk = VssBlock::init(&mut s, "vss", small_vss(), 74)?;
            jitter(&mut s, 0.1, 75);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let y = blk.forward(b, v, None)?;
                    project(&mut b.tape, y, 76)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "conditioner", OP_TOLERANCE, |f| {
            let mut s = ParamStore::new();
            let c = Conditioner::init(&mut s, "cond", ConditioningMode::Prompt, 4, 6, 77)?;
            jitter(&mut s, 0.2, 78);
            check_params(
                &s,
                |b| {
                    let y = c.table(b)?;
                    project(&mut b.tape, y, 79)
                },
                Coords::All,
                f,
            )
        }),
        case(B, "cvss_with_prompt_tokens", OP_TOLERANCE, |f| {
            let (mut s, x) = store_with_input(&[2, 2, 4], 80);
            let blk = VssBlock::init(&mut s, "vss", small_vss(), 81)?;
            let c = Conditioner::init(&mut s, "cond", ConditioningMode::Prompt, 4, 6, 82)?;
            jitter(&mut s, 0.2, 83);
            check_params(
                &s,
                |b| {
                    let v = b.param(x);
                    let m = c.modulation(b, DomainLabel::ECommerce)?;
                    let y = blk.forward(b, v, Some(&m))?;
                    project(&mut b.tape, y, 84)
                },
                Coords::All,
                f,
            )
        }),
    ]
}

fn small_vss() -> VssConfig {
    VssConfig {
        channels: 4,
        state: 2,
        rank: 1,
        shared_ssm: false,
    }
}
