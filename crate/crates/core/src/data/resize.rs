use crate::error::{Result, SumError};
use crate::tensor::Tensor;

/// Source coordinate and the two taps for output index `dst`
/// (half-pixel centers, edge clamped).
fn taps(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear resize of `[H, W]` or `[H, W, C]` with half-pixel alignment.
pub fn resize_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = match *t.shape() {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        ref s => return Err(SumError::shape(format!("resize expects [H, W] or [H, W, C], got {s:?}"))),
    };
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(SumError::shape(format!("resize {h}x{w} -> {out_h}x{out_w}")));
    }
    let x = t.data();
    let cols: Vec<_> = (0..out_w).map(|j| taps(j, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for i in 0..out_h {
        let (r0, r1, fy) = taps(i, h, out_h);
        for &(c0, c1, fx) in &cols {
            for k in 0..c {
                let at = |r: usize, q: usize| x[(r * w + q) * c + k];
                let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
                let bot = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    let mut shape = vec![out_h, out_w];
    if t.shape().len() == 3 {
        shape.push(c);
    }
    Tensor::new(&shape, out)
}

/// Moves each nonzero cell of a fixation map to the output cell containing
/// its center.
pub fn resize_fixations(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [h, w] = *t.shape() else {
        return Err(SumError::shape(format!("fixation map must be [H, W], got {:?}", t.shape())));
    };
    let mut out = vec![0.0; out_h * out_w];
    for (idx, &v) in t.data().iter().enumerate() {
        if v != 0.0 {
            let (r, q) = (idx / w, idx % w);
            let i = (((r as f64 + 0.5) * out_h as f64 / h as f64) as usize).min(out_h - 1);
            let j = (((q as f64 + 0.5) * out_w as f64 / w as f64) as usize).min(out_w - 1);
            out[i * out_w + j] = 1.0;
        }
    }
    Tensor::new(&[out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_doubles_with_quarter_weights() {
        let t = Tensor::new(&[2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_bilinear(&t, 4, 4).unwrap();
        for row in r.data().chunks(4) {
            assert_eq!(row, [0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn identity_size_is_exact() {
        let t = Tensor::new(&[3, 2, 3], (0..18).map(|v| v as f64 * 0.1).collect()).unwrap();
        assert!(resize_bilinear(&t, 3, 2).unwrap().bit_eq(&t));
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        let t = Tensor::new(&[1, 4], vec![0.0, 2.0, 4.0, 6.0]).unwrap();
        assert_eq!(resize_bilinear(&t, 1, 2).unwrap().data(), [1.0, 5.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let t = Tensor::new(&[5, 7], vec![0.3; 35]).unwrap();
        let r = resize_bilinear(&t, 16, 3).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn fixations_follow_cells() {
        let mut d = vec![0.0; 16];
        d[0] = 1.0;
        d[15] = 1.0;
        let t = Tensor::new(&[4, 4], d).unwrap();
        let r = resize_fixations(&t, 2, 2).unwrap();
        assert_eq!(r.data(), [1.0, 0.0, 0.0, 1.0]);
        let up = resize_fixations(&t, 8, 8).unwrap();
        assert_eq!(up.data().iter().sum::<f64>(), 2.0);
        assert_eq!(up.data()[8 + 1], 1.0);
    }
}
