use pan_core::ops::{conv2d, conv2d_backward};
use pan_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn naive(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b.data()[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let (iy, ix) = ((oy * stride + ky) as isize - pad as isize, (ox * stride + kx) as isize - pad as isize);
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += w.at(&[o, c, ky, kx]) * x.at(&[c, iy as usize, ix as usize]);
                            }
                        }
                    }
                }
                out.set(&[o, oy, ox], s);
            }
        }
    }
    out
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Sizes large enough that the unfolded input spans several row blocks.
#[test]
fn matches_direct_loops_on_large_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(ci, co, h, w, k, stride) in &[(3, 8, 64, 64, 7, 1), (7, 8, 64, 48, 3, 1), (8, 16, 33, 65, 3, 2), (16, 4, 40, 40, 5, 1)] {
        let pad = k / 2;
        let x = rand_t(&mut rng, &[ci, h, w]);
        let wt = rand_t(&mut rng, &[co, ci, k, k]);
        let b = rand_t(&mut rng, &[co]);
        let y = conv2d(&x, &wt, Some(&b), stride, pad).unwrap();
        let r = naive(&x, &wt, &b, stride, pad);
        assert!(max_diff(&y, &r) < 1e-10, "forward {ci}x{h}x{w} k{k} s{stride}");

        // Adjoint identity: <dy, conv(x)> derivatives against direct sums.
        let dy = rand_t(&mut rng, y.shape());
        let g = conv2d_backward(&x, &wt, &dy, stride, pad, true).unwrap();
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| a.data().iter().zip(b.data()).map(|(p, q)| p * q).sum::<f64>();
        // d<dy, conv(x)>/dx · v = <dy, conv_nobias(v)>
        let v = rand_t(&mut rng, x.shape());
        let zero = Tensor::zeros(&[co]);
        let lhs = dot(g.input.as_ref().unwrap(), &v);
        let rhs = dot(&dy, &naive(&v, &wt, &zero, stride, pad));
        assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0), "input grad {lhs} vs {rhs}");
        let u = rand_t(&mut rng, wt.shape());
        let lhs = dot(&g.weight, &u);
        let rhs = dot(&dy, &naive(&x, &u, &zero, stride, pad));
        assert!((lhs - rhs).abs() < 1e-8 * rhs.abs().max(1.0), "weight grad {lhs} vs {rhs}");
        let bias_sum: Vec<f64> = (0..co).map(|o| dy.slab(o).iter().sum()).collect();
        assert!(g.bias.data().iter().zip(&bias_sum).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
