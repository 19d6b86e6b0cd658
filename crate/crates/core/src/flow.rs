//! Horn–Schunck dense optical flow, the conventional-flow baseline.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LAMBDA: f32 = 0.01;
pub const DEFAULT_ITERS: usize = 100;

/// Per-pixel displacement in pixels per frame, each `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Tensor<f32>,
    pub v: Tensor<f32>,
}

/// `0.299 R + 0.587 G + 0.114 B` of a `[3, H, W]` frame.
pub fn luminance<T: Scalar>(frame: &Tensor<T>) -> Result<Tensor<f32>> {
    if frame.rank() != 3 || frame.shape()[0] != 3 {
        return Err(invalid("luminance", alloc::format!("expected [3, H, W], got {:?}", frame.shape())));
    }
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let d = frame.data();
    let n = h * w;
    Tensor::new(
        &[h, w],
        (0..n)
            .map(|i| (0.299 * d[i].to_f64() + 0.587 * d[n + i].to_f64() + 0.114 * d[2 * n + i].to_f64()) as f32)
            .collect(),
    )
}

/// Flow after `iters` Jacobi sweeps, plus the RMS flow update of every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct HsTrace {
    pub flow: FlowField,
    pub residuals: Vec<f32>,
}

pub fn horn_schunck(f1: &Tensor<f32>, f2: &Tensor<f32>, lambda: f32, iters: usize) -> Result<FlowField> {
    hs_impl(f1, f2, lambda, iters, false).map(|t| t.flow)
}

pub fn horn_schunck_traced(f1: &Tensor<f32>, f2: &Tensor<f32>, lambda: f32, iters: usize) -> Result<HsTrace> {
    hs_impl(f1, f2, lambda, iters, true)
}

fn hs_impl(f1: &Tensor<f32>, f2: &Tensor<f32>, lambda: f32, iters: usize, trace: bool) -> Result<HsTrace> {
    if f1.rank() != 2 || f1.shape() != f2.shape() {
        return Err(Error::ShapeMismatch {
            op: "horn_schunck",
            left: f1.shape().to_vec(),
            right: f2.shape().to_vec(),
        });
    }
    if iters == 0 || !(lambda > 0.0) {
        return Err(invalid("horn_schunck", "need iters >= 1 and lambda > 0"));
    }
    let (h, w) = (f1.shape()[0], f1.shape()[1]);
    let n = h * w;
    let (a, b) = (f1.data(), f2.data());
    let mean: Vec<f32> = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
    let at = |y: usize, x: usize| mean[y * w + x];
    let mut ix = vec![0.0f32; n];
    let mut iy = vec![0.0f32; n];
    let mut it = vec![0.0f32; n];
    let mut inv = vec![0.0f32; n];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let i = y * w + x;
            ix[i] = 0.5 * (at(y, xp) - at(y, xm));
            iy[i] = 0.5 * (at(yp, x) - at(ym, x));
            it[i] = b[i] - a[i];
            inv[i] = 1.0 / (lambda + ix[i] * ix[i] + iy[i] * iy[i]);
        }
    }

    let mut u = vec![0.0f32; n];
    let mut v = vec![0.0f32; n];
    let mut u_next = vec![0.0f32; n];
    let mut v_next = vec![0.0f32; n];
    let mut ubar = vec![0.0f32; w];
    let mut vbar = vec![0.0f32; w];
    let mut residuals = Vec::with_capacity(if trace { iters } else { 0 });
    for _ in 0..iters {
        let mut change = 0.0f64;
        for y in 0..h {
            let up = y.saturating_sub(1) * w;
            let down = (y + 1).min(h - 1) * w;
            let row = y * w;
            neighbour_mean(&u[row..row + w], &u[up..up + w], &u[down..down + w], &mut ubar);
            neighbour_mean(&v[row..row + w], &v[up..up + w], &v[down..down + w], &mut vbar);
            let r = row..row + w;
            for (x, (((((un, vn), &gx), &gy), &gt), &k)) in u_next[r.clone()]
                .iter_mut()
                .zip(&mut v_next[r.clone()])
                .zip(&ix[r.clone()])
                .zip(&iy[r.clone()])
                .zip(&it[r.clone()])
                .zip(&inv[r.clone()])
                .enumerate()
            {
                let t = (gx * ubar[x] + gy * vbar[x] + gt) * k;
                *un = ubar[x] - gx * t;
                *vn = vbar[x] - gy * t;
            }
            if trace {
                for i in r {
                    let du = (u_next[i] - u[i]) as f64;
                    let dv = (v_next[i] - v[i]) as f64;
                    change += du * du + dv * dv;
                }
            }
        }
        core::mem::swap(&mut u, &mut u_next);
        core::mem::swap(&mut v, &mut v_next);
        if trace {
            residuals.push(libm::sqrt(change / n as f64) as f32);
        }
    }
    Ok(HsTrace {
        flow: FlowField {
            u: Tensor::new(&[h, w], u)?,
            v: Tensor::new(&[h, w], v)?,
        },
        residuals,
    })
}

/// 4-neighbour mean of one row with replicated borders.
fn neighbour_mean(row: &[f32], up: &[f32], down: &[f32], out: &mut [f32]) {
    let w = row.len();
    if w == 1 {
        out[0] = 0.25 * (2.0 * row[0] + up[0] + down[0]);
        return;
    }
    out[0] = 0.25 * (row[0] + row[1] + up[0] + down[0]);
    for x in 1..w - 1 {
        out[x] = 0.25 * (row[x - 1] + row[x + 1] + up[x] + down[x]);
    }
    out[w - 1] = 0.25 * (row[w - 2] + row[w - 1] + up[w - 1] + down[w - 1]);
}

/// `sqrt(u² + v²)` as a `[1, H, W]` map.
pub fn flow_magnitude(flow: &FlowField) -> Result<Tensor<f32>> {
    flow.u.check_same("flow_magnitude", &flow.v)?;
    let s = flow.u.shape();
    Tensor::new(
        &[1, s[0], s[1]],
        flow.u
            .data()
            .iter()
            .zip(flow.v.data())
            .map(|(&a, &b)| Scalar::sqrt(a * a + b * b))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize, shift: f64) -> Tensor<f32> {
        let tau = core::f64::consts::TAU;
        Tensor::from_fn(&[h, w], |i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64 - shift);
            (0.5 + 0.25 * (libm::sin(tau * x / 16.0) + libm::sin(tau * y / 16.0))) as f32
        })
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = pattern(20, 24, 0.0);
        let flow = horn_schunck(&f, &f, 0.01, 50).unwrap();
        assert!(flow.u.data().iter().chain(flow.v.data()).all(|&x| x == 0.0));
    }

    #[test]
    fn recovers_unit_translation() {
        let (h, w) = (48, 48);
        let tr = horn_schunck_traced(&pattern(h, w, 0.0), &pattern(h, w, 1.0), 0.01, 200).unwrap();
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
        for y in 8..h - 8 {
            for x in 8..w - 8 {
                su += tr.flow.u.data()[y * w + x] as f64;
                sv += tr.flow.v.data()[y * w + x] as f64;
                n += 1.0;
            }
        }
        let (mu, mv) = (su / n, sv / n);
        assert!((0.7..=1.2).contains(&mu), "mean u = {mu}");
        assert!(mv.abs() < 0.15, "mean v = {mv}");
        assert!(tr.residuals.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-6)), "{:?}", tr.residuals);
    }

    #[test]
    fn magnitude_cases() {
        let flow = FlowField {
            u: Tensor::full(&[2, 3], 3.0),
            v: Tensor::full(&[2, 3], -4.0),
        };
        let m = flow_magnitude(&flow).unwrap();
        assert_eq!(m.shape(), &[1, 2, 3]);
        assert!(m.data().iter().all(|&x| x == 5.0));
        let neg = FlowField {
            u: flow.u.map(|x| -x),
            v: flow.v.map(|x| -x),
        };
        assert_eq!(flow_magnitude(&neg).unwrap(), m);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(horn_schunck(&Tensor::zeros(&[4, 4]), &Tensor::zeros(&[4, 5]), 0.01, 1).is_err());
    }

    #[test]
    fn luminance_weights() {
        let f = Tensor::<f32>::from_fn(&[3, 1, 1], |i| [1.0, 0.0, 0.0][i]);
        assert!((luminance(&f).unwrap().data()[0] - 0.299).abs() < 1e-7);
    }
}
