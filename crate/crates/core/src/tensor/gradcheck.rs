//! Central finite differences: the reference every backward rule is checked
//! against. Only forward values are used here, never the tape's backward.

use super::{OpTag, Tape, Tensor, Var};
use crate::error::{Result, SumError};

pub const DEFAULT_STEP: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    let g = finite_diff_coords(f, x, &coords, h)?;
    Tensor::new(x.shape(), g)
}

/// Central differences restricted to `coords`; result is in `coords` order.
pub fn finite_diff_coords<F>(mut f: F, x: &Tensor, coords: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(SumError::Gradient(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(SumError::Gradient(format!(
                "function is non-finite when perturbing coordinate {i}"
            )));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// `max_i |auto_i - fd_i| / (1e-8 + |fd_i|)`.
pub fn relative_error(auto: &[f64], fd: &[f64]) -> f64 {
    auto.iter()
        .zip(fd)
        .map(|(a, f)| (a - f).abs() / (1e-8 + f.abs()))
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub worst_rel_err: f64,
    /// (input index, coordinate) of the worst entry.
    pub worst_at: (usize, usize),
    pub coords_checked: usize,
}

/// Compare tape gradients of `build` against central differences for every
/// coordinate of every input. `build` receives the inputs bound as
/// gradient-tracking leaves and must return a scalar.
pub fn check_gradients<F>(build: F, inputs: &[Tensor], h: f64, fault: Option<OpTag>) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.input(t.shape(), t.data().to_vec(), true))
        .collect::<Result<_>>()?;
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        worst_rel_err: 0.0,
        worst_at: (0, 0),
        coords_checked: 0,
    };
    for (k, input) in inputs.iter().enumerate() {
        let auto = grads.wrt(vars[k]);
        let eval = |probe: &Tensor| -> Result<f64> {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, orig)| {
                    let src = if j == k { probe } else { orig };
                    t.constant(src.shape(), src.data().to_vec())
                })
                .collect::<Result<_>>()?;
            let l = build(&mut t, &vs)?;
            Ok(t.item(l))
        };
        let fd = finite_diff_grad(eval, input, h)?;
        for (i, (a, f)) in auto.iter().zip(fd.data()).enumerate() {
            let e = (a - f).abs() / (1e-8 + f.abs());
            if e > report.worst_rel_err {
                report.worst_rel_err = e;
                report.worst_at = (k, i);
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::UnaryKind;

    #[test]
    fn square_derivative() {
        let x = Tensor::new(&[1], vec![3.0]).unwrap();
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn silu_derivative_at_zero() {
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let f = |t: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(&[1], t.data().to_vec())?;
            let s = tape.silu(v)?;
            let l = tape.sum_all(s)?;
            Ok(tape.item(l))
        };
        let g = finite_diff_grad(f, &x, DEFAULT_STEP).unwrap();
        assert!((g.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_is_error() {
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        let r = finite_diff_grad(|t| Ok(1.0 / (t.data()[0] - 1e-4)), &x, 1e-4);
        assert!(r.is_err());
        assert!(finite_diff_grad(|_| Ok(0.0), &x, 0.0).is_err());
    }

    #[test]
    fn fault_injection_is_caught() {
        let x = Tensor::new(&[3], vec![0.3, -0.2, 0.9]).unwrap();
        let build = |t: &mut Tape, v: &[Var]| {
            let s = t.silu(v[0])?;
            t.sum_all(s)
        };
        let ok = check_gradients(build, std::slice::from_ref(&x), DEFAULT_STEP, None).unwrap();
        assert!(ok.worst_rel_err < 1e-6);
        let bad = check_gradients(build, &[x], DEFAULT_STEP, Some(OpTag::Unary(UnaryKind::Silu)))
            .unwrap();
        assert!(bad.worst_rel_err > 1.0);
    }
}
