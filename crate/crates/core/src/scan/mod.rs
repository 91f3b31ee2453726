//! 2D selective scan: unroll a feature map into four directional sequences,
//! run a selective state-space recurrence over each, and merge back.

mod bench;

pub use bench::{bench_selective_scan, loglog_slope, BenchRow};

use std::sync::Arc;

use crate::error::{Result, SumError};
use crate::tensor::{derive_seed, glorot_uniform, Binder, ParamId, ParamStore, ScanInputs, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    RowForward,
    RowBackward,
    ColForward,
    ColBackward,
}

pub const DIRECTIONS: [Direction; 4] = [
    Direction::RowForward,
    Direction::RowBackward,
    Direction::ColForward,
    Direction::ColBackward,
];

impl Direction {
    pub fn index(self) -> usize {
        match self {
            Direction::RowForward => 0,
            Direction::RowBackward => 1,
            Direction::ColForward => 2,
            Direction::ColBackward => 3,
        }
    }
}

/// Spatial index (`i * w + j`) visited at each sequence step.
pub fn traversal(h: usize, w: usize, dir: Direction) -> Vec<usize> {
    let row_major = || 0..h * w;
    let col_major = || (0..w).flat_map(move |j| (0..h).map(move |i| i * w + j));
    match dir {
        Direction::RowForward => row_major().collect(),
        Direction::RowBackward => row_major().rev().collect(),
        Direction::ColForward => col_major().collect(),
        Direction::ColBackward => {
            let mut v: Vec<usize> = col_major().collect();
            v.reverse();
            v
        }
    }
}

/// Inverse permutation: sequence step at which each spatial index is visited.
pub fn inverse_traversal(h: usize, w: usize, dir: Direction) -> Vec<usize> {
    let fwd = traversal(h, w, dir);
    let mut inv = vec![0; fwd.len()];
    for (t, &p) in fwd.iter().enumerate() {
        inv[p] = t;
    }
    inv
}

fn channel_index(order: &[usize], c: usize) -> Arc<[usize]> {
    order
        .iter()
        .flat_map(|&p| (0..c).map(move |k| p * c + k))
        .collect()
}

fn grid_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(SumError::shape(format!("feature map {shape:?}, want [H, W, C]"))),
    }
}

/// The four `[L, C]` sequences of one feature map, in [`DIRECTIONS`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalSequences {
    pub height: usize,
    pub width: usize,
    pub seqs: [Tensor; 4],
}

pub fn cross_scan(f: &Tensor) -> Result<DirectionalSequences> {
    let (h, w, c) = grid_dims(f.shape())?;
    let src = f.data();
    let seqs = DIRECTIONS.map(|dir| {
        let data = traversal(h, w, dir)
            .iter()
            .flat_map(|&p| src[p * c..(p + 1) * c].iter().copied())
            .collect();
        Tensor::new(&[h * w, c], data).expect("sequence shape matches its data")
    });
    Ok(DirectionalSequences {
        height: h,
        width: w,
        seqs,
    })
}

/// Scatter each sequence back through its traversal and sum the four grids.
pub fn cross_merge(seqs: &DirectionalSequences) -> Result<Tensor> {
    let (h, w) = (seqs.height, seqs.width);
    let shape0 = seqs.seqs[0].shape().to_vec();
    if shape0.len() != 2 || seqs.seqs.iter().any(|s| s.shape() != shape0.as_slice()) {
        return Err(SumError::shape("directional sequences differ in shape"));
    }
    if shape0[0] != h * w {
        return Err(SumError::shape(format!(
            "sequence length {} does not match a {h}x{w} grid",
            shape0[0]
        )));
    }
    let c = shape0[1];
    let mut out = vec![0.0; h * w * c];
    for dir in DIRECTIONS {
        let s = seqs.seqs[dir.index()].data();
        for (t, &p) in traversal(h, w, dir).iter().enumerate() {
            for k in 0..c {
                out[p * c + k] += s[t * c + k];
            }
        }
    }
    Tensor::new(&[h, w, c], out)
}

/// Tape version of [`cross_scan`].
pub fn cross_scan_vars(b: &mut Binder, f: Var) -> Result<[Var; 4]> {
    let (h, w, c) = grid_dims(b.tape.shape(f))?;
    let mut out = [f; 4];
    for dir in DIRECTIONS {
        let idx = channel_index(&traversal(h, w, dir), c);
        out[dir.index()] = b.tape.gather(f, idx, &[h * w, c])?;
    }
    Ok(out)
}

/// Tape version of [`cross_merge`]; sums in direction order.
pub fn cross_merge_vars(b: &mut Binder, seqs: [Var; 4], h: usize, w: usize) -> Result<Var> {
    let shape = b.tape.shape(seqs[0]).to_vec();
    if shape.len() != 2 || shape[0] != h * w {
        return Err(SumError::shape(format!(
            "sequence {shape:?} does not match a {h}x{w} grid"
        )));
    }
    let c = shape[1];
    let mut acc: Option<Var> = None;
    for dir in DIRECTIONS {
        let idx = channel_index(&inverse_traversal(h, w, dir), c);
        let grid = b.tape.gather(seqs[dir.index()], idx, &[h, w, c])?;
        acc = Some(match acc {
            None => grid,
            Some(a) => b.tape.add(a, grid)?,
        });
    }
    Ok(acc.expect("four directions"))
}

/// Parameters of one scan direction.
#[derive(Clone, Debug)]
pub struct SsmDirection {
    /// `[C, N]`; effective transition rates are `-exp(a_log)`.
    pub a_log: ParamId,
    /// `[C]`
    pub d_skip: ParamId,
    /// `[C, N]`
    pub w_b: ParamId,
    /// `[C, N]`
    pub w_c: ParamId,
    /// `[C, R]`
    pub w_dt: ParamId,
    /// `[R, C]`
    pub v_dt: ParamId,
    /// `[C]`
    pub b_dt: ParamId,
    pub channels: usize,
    pub state: usize,
    pub rank: usize,
}

/// Initial step size: `softplus(b_dt) = 0.01`.
pub const INIT_DELTA: f64 = 0.01;

/// Default low-rank width of the step-size projection.
pub fn default_rank(channels: usize) -> usize {
    (channels / 8).max(1)
}

impl SsmDirection {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        state: usize,
        rank: usize,
        seed: u64,
    ) -> Result<Self> {
        if channels == 0 || state == 0 || rank == 0 {
            return Err(SumError::Config(format!(
                "SSM sizes must be positive (C={channels}, N={state}, R={rank})"
            )));
        }
        let name = |s: &str| format!("{prefix}.{s}");
        let a_log: Vec<f64> = (0..channels)
            .flat_map(|_| (1..=state).map(|n| (n as f64).ln()))
            .collect();
        let b_dt = INIT_DELTA.exp_m1().ln();
        Ok(Self {
            a_log: store.add(name("a_log"), Tensor::new(&[channels, state], a_log)?)?,
            d_skip: store.add(name("d_skip"), Tensor::new(&[channels], vec![1.0; channels])?)?,
            w_b: store.add(
                name("w_b"),
                glorot_uniform(&[channels, state], channels, state, derive_seed(seed, &name("w_b")))?,
            )?,
            w_c: store.add(
                name("w_c"),
                glorot_uniform(&[channels, state], channels, state, derive_seed(seed, &name("w_c")))?,
            )?,
            w_dt: store.add(
                name("w_dt"),
                glorot_uniform(&[channels, rank], channels, rank, derive_seed(seed, &name("w_dt")))?,
            )?,
            v_dt: store.add(
                name("v_dt"),
                glorot_uniform(&[rank, channels], rank, channels, derive_seed(seed, &name("v_dt")))?,
            )?,
            b_dt: store.add(name("b_dt"), Tensor::new(&[channels], vec![b_dt; channels])?)?,
            channels,
            state,
            rank,
        })
    }
}

/// Parameters of all four directions (one shared set when `shared`).
#[derive(Clone, Debug)]
pub struct Ss2dParams {
    dirs: Vec<SsmDirection>,
}

impl Ss2dParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        channels: usize,
        state: usize,
        rank: usize,
        shared: bool,
        seed: u64,
    ) -> Result<Self> {
        let count = if shared { 1 } else { 4 };
        let dirs = (0..count)
            .map(|k| SsmDirection::init(store, &format!("{prefix}.dir{k}"), channels, state, rank, seed))
            .collect::<Result<_>>()?;
        Ok(Self { dirs })
    }

    pub fn direction(&self, dir: Direction) -> &SsmDirection {
        if self.dirs.len() == 1 {
            &self.dirs[0]
        } else {
            &self.dirs[dir.index()]
        }
    }

    pub fn is_shared(&self) -> bool {
        self.dirs.len() == 1
    }
}

/// Selective scan of one `[L, C]` sequence: data-dependent `B_t = x_t W_B`,
/// `C_t = x_t W_C`, `delta_t = softplus(x_t W_dt V_dt + b_dt)`, and
/// `A = -exp(A_log)`, fed to the fused recurrence on the tape.
pub fn selective_scan(b: &mut Binder, seq: Var, p: &SsmDirection) -> Result<Var> {
    let shape = b.tape.shape(seq).to_vec();
    if shape.len() != 2 || shape[1] != p.channels {
        return Err(SumError::shape(format!(
            "scan sequence {shape:?} for {} channels",
            p.channels
        )));
    }
    let w_b = b.param(p.w_b);
    let w_c = b.param(p.w_c);
    let w_dt = b.param(p.w_dt);
    let v_dt = b.param(p.v_dt);
    let b_dt = b.param(p.b_dt);
    let a_log = b.param(p.a_log);
    let d = b.param(p.d_skip);

    let t = &mut b.tape;
    let bm = t.matmul(seq, w_b)?;
    let cm = t.matmul(seq, w_c)?;
    let low = t.matmul(seq, w_dt)?;
    let dt_raw = t.matmul(low, v_dt)?;
    let dt_raw = t.add(dt_raw, b_dt)?;
    let delta = t.softplus(dt_raw)?;
    let a = t.exp(a_log)?;
    let a = t.neg(a)?;
    t.selective_scan(ScanInputs {
        x: seq,
        delta,
        a,
        b: bm,
        c: cm,
        d,
    })
}

/// SS2D: cross-scan, one selective scan per direction, cross-merge.
pub fn ss2d(b: &mut Binder, f: Var, p: &Ss2dParams) -> Result<Var> {
    let (h, w, _) = grid_dims(b.tape.shape(f))?;
    let seqs = cross_scan_vars(b, f)?;
    let mut outs = seqs;
    for dir in DIRECTIONS {
        outs[dir.index()] = selective_scan(b, seqs[dir.index()], p.direction(dir))?;
    }
    cross_merge_vars(b, outs, h, w)
}

/// Forward-only convenience: scan a plain tensor with stored parameters.
pub fn selective_scan_tensor(store: &ParamStore, p: &SsmDirection, seq: &Tensor) -> Result<Tensor> {
    let mut b = Binder::frozen(store);
    let x = b.tape.leaf(seq);
    let y = selective_scan(&mut b, x, p)?;
    Ok(b.tape.tensor(y))
}

/// Forward-only convenience for [`ss2d`].
pub fn ss2d_tensor(store: &ParamStore, p: &Ss2dParams, f: &Tensor) -> Result<Tensor> {
    let mut b = Binder::frozen(store);
    let x = b.tape.leaf(f);
    let y = ss2d(&mut b, x, p)?;
    Ok(b.tape.tensor(y))
}
