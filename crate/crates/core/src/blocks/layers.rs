use std::sync::Arc;

use crate::error::{Result, SumError};
use crate::tensor::{derive_seed, glorot_uniform, Binder, ParamId, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

/// Affine map over the last axis: `x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn init(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize, seed: u64) -> Result<Self> {
        let wname = format!("{prefix}.weight");
        let weight = glorot_uniform(&[fan_in, fan_out], fan_in, fan_out, derive_seed(seed, &wname))?;
        Ok(Self {
            weight: store.add(wname, weight)?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[fan_out])?)?,
            fan_in,
            fan_out,
        })
    }

    pub fn zeroed(store: &mut ParamStore, prefix: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{prefix}.weight"), Tensor::zeros(&[fan_in, fan_out])?)?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[fan_out])?)?,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let shape = b.tape.shape(x).to_vec();
        if shape.last() != Some(&self.fan_in) {
            return Err(SumError::shape(format!(
                "linear expects last axis {}, got {shape:?}",
                self.fan_in
            )));
        }
        let rows = shape.iter().product::<usize>() / self.fan_in;
        let w = b.param(self.weight);
        let bias = b.param(self.bias);
        let flat = if shape.len() == 2 {
            x
        } else {
            b.tape.reshape(x, &[rows, self.fan_in])?
        };
        let y = b.tape.matmul(flat, w)?;
        let y = b.tape.add(y, bias)?;
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = self.fan_out;
        b.tape.reshape(y, &out_shape)
    }

    pub fn num_params(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
    pub channels: usize,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::new(&[channels], vec![1.0; channels])?)?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels])?)?,
            eps: LN_EPS,
            channels,
        })
    }

    /// Normalize over the last axis, then `* gamma + beta`.
    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        self.forward_scaled(b, x, None)
    }

    /// As [`forward`](Self::forward) but with an optional scalar applied to the
    /// normalized values before the affine part.
    pub fn forward_scaled(&self, b: &mut Binder, x: Var, scale: Option<Var>) -> Result<Var> {
        if b.tape.shape(x).last() != Some(&self.channels) {
            return Err(SumError::shape(format!(
                "layer norm over {} channels got {:?}",
                self.channels,
                b.tape.shape(x)
            )));
        }
        let gamma = b.param(self.gamma);
        let beta = b.param(self.beta);
        let mut y = b.tape.layer_norm_core(x, self.eps)?;
        if let Some(s) = scale {
            y = b.tape.mul(y, s)?;
        }
        let y = b.tape.mul(y, gamma)?;
        b.tape.add(y, beta)
    }
}

/// Depthwise 3x3 convolution with per-channel bias.
#[derive(Clone, Debug)]
pub struct DwConv {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub channels: usize,
}

impl DwConv {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize, seed: u64) -> Result<Self> {
        let kname = format!("{prefix}.kernel");
        let kernel = glorot_uniform(&[channels, 3, 3], 9, 9, derive_seed(seed, &kname))?;
        Ok(Self {
            kernel: store.add(kname, kernel)?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels])?)?,
            channels,
        })
    }

    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let k = b.param(self.kernel);
        let bias = b.param(self.bias);
        b.tape.dwconv3x3(x, k, bias)
    }
}

fn dims3(b: &Binder, x: Var) -> Result<(usize, usize, usize)> {
    match *b.tape.shape(x) {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(SumError::shape(format!("expected [H, W, C], got {s:?}"))),
    }
}

/// Gather index flattening non-overlapping `p x p` patches of an `[H, W, C]`
/// map into rows of `p*p*C` values ordered (dy, dx, channel). Patches are
/// emitted row-major.
pub fn patch_index(h: usize, w: usize, c: usize, p: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(h * w * c);
    for pi in 0..h / p {
        for pj in 0..w / p {
            for dy in 0..p {
                for dx in 0..p {
                    let base = ((pi * p + dy) * w + pj * p + dx) * c;
                    idx.extend(base..base + c);
                }
            }
        }
    }
    idx.into()
}

/// Gather index for pixel shuffle: `[H, W, f*f*C]` to `[fH, fW, C]`, where
/// channel group `dy * f + dx` lands at spatial offset `(dy, dx)`.
pub fn pixel_shuffle_index(h: usize, w: usize, c: usize, f: usize) -> Arc<[usize]> {
    let in_c = f * f * c;
    let mut idx = Vec::with_capacity(h * w * in_c);
    for y in 0..h * f {
        for x in 0..w * f {
            let (i, dy) = (y / f, y % f);
            let (j, dx) = (x / f, x % f);
            let base = (i * w + j) * in_c + (dy * f + dx) * c;
            idx.extend(base..base + c);
        }
    }
    idx.into()
}

/// 4x4 patchify, affine to `C` channels, LayerNorm.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub proj: Linear,
    pub norm: LayerNorm,
}

pub const PATCH: usize = 4;

impl PatchEmbed {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            proj: Linear::init(store, &format!("{prefix}.proj"), PATCH * PATCH * 3, channels, seed)?,
            norm: LayerNorm::init(store, &format!("{prefix}.norm"), channels)?,
        })
    }

    /// `[H, W, 3] -> [H/4, W/4, C]`.
    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let y = self.project(b, x)?;
        self.norm.forward(b, y)
    }

    /// Patchify and affine only (no LayerNorm).
    pub fn project(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let (h, w, c) = dims3(b, x)?;
        if c != 3 {
            return Err(SumError::shape(format!("patch embed expects 3 channels, got {c}")));
        }
        if h % PATCH != 0 || w % PATCH != 0 {
            return Err(SumError::shape(format!(
                "image {h}x{w} is not divisible by {PATCH}; resize first"
            )));
        }
        let (ph, pw) = (h / PATCH, w / PATCH);
        let rows = b.tape.gather(x, patch_index(h, w, 3, PATCH), &[ph * pw, PATCH * PATCH * 3])?;
        let y = self.proj.forward(b, rows)?;
        b.tape.reshape(y, &[ph, pw, self.proj.fan_out])
    }
}

/// 2x2 patch merging: concatenate the (top-left, top-right, bottom-left,
/// bottom-right) neighbors, LayerNorm, affine `4C -> 2C`.
#[derive(Clone, Debug)]
pub struct Downsample {
    pub norm: LayerNorm,
    pub proj: Linear,
}

impl Downsample {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::init(store, &format!("{prefix}.norm"), 4 * channels)?,
            proj: Linear::init(store, &format!("{prefix}.proj"), 4 * channels, 2 * channels, seed)?,
        })
    }

    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let (h, w, c) = dims3(b, x)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(SumError::shape(format!("cannot halve odd grid {h}x{w}")));
        }
        let merged = b.tape.gather(x, patch_index(h, w, c, 2), &[h / 2, w / 2, 4 * c])?;
        let n = self.norm.forward(b, merged)?;
        self.proj.forward(b, n)
    }
}

/// Affine `C -> f*f*(C/f)` then pixel shuffle to `[fH, fW, C/f]`.
#[derive(Clone, Debug)]
pub struct PatchExpand {
    pub proj: Linear,
    pub factor: usize,
    pub out_channels: usize,
}

impl PatchExpand {
    pub fn init(store: &mut ParamStore, prefix: &str, channels: usize, factor: usize, seed: u64) -> Result<Self> {
        if factor == 0 || !channels.is_multiple_of(factor) {
            return Err(SumError::shape(format!(
                "{channels} channels are not divisible by expand factor {factor}"
            )));
        }
        let out_channels = channels / factor;
        Ok(Self {
            proj: Linear::init(store, &format!("{prefix}.proj"), channels, factor * factor * out_channels, seed)?,
            factor,
            out_channels,
        })
    }

    pub fn forward(&self, b: &mut Binder, x: Var) -> Result<Var> {
        let (h, w, _) = dims3(b, x)?;
        let y = self.proj.forward(b, x)?;
        let f = self.factor;
        b.tape.gather(
            y,
            pixel_shuffle_index(h, w, self.out_channels, f),
            &[h * f, w * f, self.out_channels],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Fill;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::create(
            shape,
            Fill::SeededUniform {
                lo: -1.0,
                hi: 1.0,
                seed,
            },
        )
        .unwrap()
    }

    fn run<F>(store: &ParamStore, x: &Tensor, f: F) -> Tensor
    where
        F: FnOnce(&mut Binder, Var) -> Result<Var>,
    {
        let mut b = Binder::frozen(store);
        let v = b.tape.leaf(x);
        let y = f(&mut b, v).unwrap();
        b.tape.tensor(y)
    }

    #[test]
    fn layer_norm_constant_and_pair() {
        let mut s = ParamStore::new();
        let ln = LayerNorm::init(&mut s, "ln", 2).unwrap();
        let x = Tensor::new(&[1, 1, 2], vec![1.0, 3.0]).unwrap();
        let y = run(&s, &x, |b, v| ln.forward(b, v));
        assert!((y.data()[0] + 1.0).abs() < 1e-5 && (y.data()[1] - 1.0).abs() < 1e-5);
        let x = Tensor::new(&[1, 1, 2], vec![4.0, 4.0]).unwrap();
        let y = run(&s, &x, |b, v| ln.forward(b, v));
        assert!(y.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn layer_norm_moments() {
        let mut s = ParamStore::new();
        let ln = LayerNorm::init(&mut s, "ln", 8).unwrap();
        let x = rand(&[3, 3, 8], 4);
        let y = run(&s, &x, |b, v| ln.forward(b, v));
        for row in y.data().chunks(8) {
            let m = row.iter().sum::<f64>() / 8.0;
            let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn dwconv_identity_and_sums() {
        let mut s = ParamStore::new();
        let dw = DwConv::init(&mut s, "dw", 2, 1).unwrap();
        {
            let k = s.get_mut(dw.kernel).data_mut();
            k.fill(0.0);
            k[4] = 1.0;
            k[9 + 4] = 1.0;
        }
        let x = rand(&[4, 5, 2], 9);
        let y = run(&s, &x, |b, v| dw.forward(b, v));
        assert_eq!(y.data(), x.data());

        s.get_mut(dw.kernel).data_mut().fill(1.0);
        let c = 0.75;
        let x = Tensor::create(&[4, 4, 2], Fill::Constant(c)).unwrap();
        let y = run(&s, &x, |b, v| dw.forward(b, v));
        let at = |i: usize, j: usize| y.data()[(i * 4 + j) * 2];
        assert!((at(1, 2) - 9.0 * c).abs() < 1e-12);
        assert!((at(0, 0) - 4.0 * c).abs() < 1e-12);
        assert!((at(0, 2) - 6.0 * c).abs() < 1e-12);
    }

    #[test]
    fn patch_embed_shapes() {
        let mut s = ParamStore::new();
        let pe = PatchEmbed::init(&mut s, "pe", 32, 1).unwrap();
        let x = Tensor::zeros(&[256, 256, 3]).unwrap();
        let y = run(&s, &x, |b, v| pe.forward(b, v));
        assert_eq!(y.shape(), &[64, 64, 32]);
        let y = run(&s, &Tensor::zeros(&[8, 8, 3]).unwrap(), |b, v| pe.project(b, v));
        assert_eq!(y.shape(), &[2, 2, 32]);
        assert!(y.data().iter().all(|&v| v == 0.0));

        let mut b = Binder::frozen(&s);
        let v = b.tape.leaf(&Tensor::zeros(&[6, 8, 3]).unwrap());
        assert!(pe.forward(&mut b, v).is_err());
    }

    #[test]
    fn patch_index_order() {
        // 4x4 single channel, 2x2 patches: first patch is (0,0),(0,1),(1,0),(1,1)
        let idx = patch_index(4, 4, 1, 2);
        assert_eq!(&idx[..4], &[0, 1, 4, 5]);
        assert_eq!(&idx[4..8], &[2, 3, 6, 7]);
    }

    #[test]
    fn downsample_shapes_and_zero() {
        let mut s = ParamStore::new();
        let ds = Downsample::init(&mut s, "ds", 8, 1).unwrap();
        let y = run(&s, &Tensor::zeros(&[4, 4, 8]).unwrap(), |b, v| ds.forward(b, v));
        assert_eq!(y.shape(), &[2, 2, 16]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        let mut b = Binder::frozen(&s);
        let v = b.tape.leaf(&Tensor::zeros(&[3, 4, 8]).unwrap());
        assert!(ds.forward(&mut b, v).is_err());
    }

    #[test]
    fn downsample_constant_with_identity_like_affine() {
        // 2x2x1 constant map; LN gamma=0, beta=1 gives ones; weight sums rows.
        let mut s = ParamStore::new();
        let ds = Downsample::init(&mut s, "ds", 1, 1).unwrap();
        s.get_mut(ds.norm.gamma).data_mut().fill(0.0);
        s.get_mut(ds.norm.beta).data_mut().fill(1.0);
        s.get_mut(ds.proj.weight).data_mut().fill(0.25);
        let x = Tensor::create(&[4, 4, 1], Fill::Constant(3.0)).unwrap();
        let y = run(&s, &x, |b, v| ds.forward(b, v));
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn pixel_shuffle_places_channel_groups() {
        // one pixel, f=2, C=1: channel k goes to offset (k/2, k%2)
        let idx = pixel_shuffle_index(1, 1, 1, 2);
        assert_eq!(&idx[..], &[0, 1, 2, 3]);
        // 1x2 grid, f=2, C=1, input channels 4 per pixel
        let idx = pixel_shuffle_index(1, 2, 1, 2);
        assert_eq!(&idx[..], &[0, 1, 4, 5, 2, 3, 6, 7]);
    }

    #[test]
    fn patch_expand_shapes() {
        let mut s = ParamStore::new();
        let pe = PatchExpand::init(&mut s, "pe", 16, 2, 1).unwrap();
        let y = run(&s, &rand(&[2, 2, 16], 3), |b, v| pe.forward(b, v));
        assert_eq!(y.shape(), &[4, 4, 8]);
        let head = PatchExpand::init(&mut s, "head", 8, 4, 1).unwrap();
        let y = run(&s, &rand(&[2, 2, 8], 3), |b, v| head.forward(b, v));
        assert_eq!(y.shape(), &[8, 8, 2]);
        assert!(PatchExpand::init(&mut s, "bad", 6, 4, 1).is_err());
    }

    #[test]
    fn expand_after_merge_keeps_constant_maps_constant() {
        let mut s = ParamStore::new();
        let ds = Downsample::init(&mut s, "ds", 2, 5).unwrap();
        let pe = PatchExpand::init(&mut s, "pe", 4, 2, 6).unwrap();
        let x = Tensor::create(&[4, 4, 2], Fill::Constant(0.4)).unwrap();
        let y = run(&s, &x, |b, v| {
            let d = ds.forward(b, v)?;
            pe.forward(b, d)
        });
        assert_eq!(y.shape(), &[4, 4, 2]);
        // every output pixel within the same channel and sub-position class
        // comes from an identical merged token, so rows of 2x2 blocks repeat
        let d = y.data();
        for i in 0..4 {
            for j in 0..4 {
                let (si, sj) = (i % 2, j % 2);
                for k in 0..2 {
                    assert_eq!(d[(i * 4 + j) * 2 + k], d[(si * 4 + sj) * 2 + k]);
                }
            }
        }
        // group-replicated expand weights make the result fully constant
        s.get_mut(pe.proj.weight).data_mut().fill(0.3);
        let y = run(&s, &x, |b, v| {
            let d = ds.forward(b, v)?;
            pe.forward(b, d)
        });
        assert!(y.data().iter().all(|&v| v == y.data()[0]));
    }
}
