//! Oracle checks for the tensor engine: nested-loop convolution, blockwise
//! max, inner-product adjointness and finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulw::diffcore::{grad_check, Conv2dSpec, GradCheckOptions, Graph, Padding, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so relu kinks and maxpool ties are not probed.
fn random_off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Zero-padded "same" convolution by direct summation.
fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (n, cin, h, wd) = (s[0], s[1], s[2], s[3]);
    let ws = w.shape();
    let (cout, k) = (ws[0], ws[2]);
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(&[n, cout, h, wd]);
    for b in 0..n {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + ky as isize - p;
                                let ix = xx as isize + kx as isize - p;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * cin + ci) * h + iy as usize) * wd + ix as usize;
                                let wi = ((co * cin + ci) * k + ky) * k + kx;
                                acc += x.data()[xi] * w.data()[wi];
                            }
                        }
                    }
                    out.data_mut()[((b * cout + co) * h + y) * wd + xx] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv_box_filter_center_is_neighborhood_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Tensor<f64> = Tensor::from_fn(&[1, 1, 5, 5], |_| rng.gen_range(0.0..1.0));
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0));
    let y = g.conv2d(xv, w, None, Conv2dSpec::same()).unwrap();
    let mut mean = 0.0;
    for dy in 1..4 {
        for dx in 1..4 {
            mean += x.data()[dy * 5 + dx];
        }
    }
    mean /= 9.0;
    assert!((g.value(y).data()[12] - mean).abs() < 1e-12);
}

#[test]
fn conv_matches_nested_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let x = random(&[2, 3, 6, 7], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x.clone()), g.constant(w.clone()));
        let y = g.conv2d(xv, wv, None, Conv2dSpec::same()).unwrap();
        let expect = conv_oracle(&x, &w);
        for (a, b) in g.value(y).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[1, 2, 8, 8], &mut rng);
    let y = random(&[1, 2, 8, 8], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let (a, b) = (0.7, -1.3);
    let mut g = Graph::new();
    let (xv, yv, wv) = (g.constant(x), g.constant(y), g.constant(w));
    let ax = g.mul_scalar(xv, a).unwrap();
    let by = g.mul_scalar(yv, b).unwrap();
    let comb = g.add(ax, by).unwrap();
    let lhs = g.conv2d(comb, wv, None, Conv2dSpec::same()).unwrap();
    let cx = g.conv2d(xv, wv, None, Conv2dSpec::same()).unwrap();
    let cy = g.conv2d(yv, wv, None, Conv2dSpec::same()).unwrap();
    let cx = g.mul_scalar(cx, a).unwrap();
    let cy = g.mul_scalar(cy, b).unwrap();
    let rhs = g.add(cx, cy).unwrap();
    for (l, r) in g.value(lhs).data().iter().zip(g.value(rhs).data()) {
        assert!((l - r).abs() <= 1e-6);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // stride 1, k = 3, same padding; stride 2, k = 2, valid padding.
    for (stride, k, padding, h) in [(1, 3, Padding::Zero, 6), (2, 2, Padding::Valid, 8), (1, 5, Padding::Zero, 7)] {
        for _ in 0..4 {
            let x = random(&[2, 3, h, h], &mut rng);
            let kernel = random(&[4, 3, k, k], &mut rng);
            let mut g = Graph::new();
            let (xv, kv) = (g.constant(x.clone()), g.constant(kernel));
            let cx = g.conv2d(xv, kv, None, Conv2dSpec::same().padding(padding).stride(stride)).unwrap();
            let y = random(g.value(cx).shape(), &mut rng);
            let yv = g.constant(y.clone());
            let ty = g.conv_transpose2d(yv, kv, None, stride).unwrap();
            assert_eq!(g.value(ty).shape(), x.shape());
            let lhs = dot(g.value(cx), &y);
            let rhs = dot(&x, g.value(ty));
            assert!((lhs - rhs).abs() / lhs.abs().max(1e-12) <= 1e-6, "stride {stride}: {lhs} vs {rhs}");
        }
    }
}

#[test]
fn shape_laws_for_even_sizes() {
    for size in (2..=32).step_by(2) {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros(&[1, 2, size, size]));
        let w = g.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let y = g.conv2d(x, w, None, Conv2dSpec::same()).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, size, size]);
        let p = g.max_pool2d(x).unwrap();
        assert_eq!(g.value(p).shape(), &[1, 2, size / 2, size / 2]);
        let wt = g.constant(Tensor::zeros(&[2, 5, 2, 2]));
        let u = g.conv_transpose2d(x, wt, None, 2).unwrap();
        assert_eq!(g.value(u).shape(), &[1, 5, 2 * size, 2 * size]);
    }
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros(&[1, 8, 8, 8]));
    let wt = g.constant(Tensor::zeros(&[8, 8, 2, 2]));
    let u = g.conv_transpose2d(x, wt, None, 2).unwrap();
    assert_eq!(&g.value(u).shape()[2..], &[16, 16]);
}

#[test]
fn max_pool_matches_blockwise_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random(&[1, 2, 6, 6], &mut rng);
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let y = g.max_pool2d(xv).unwrap();
    for c in 0..2 {
        for by in 0..3 {
            for bx in 0..3 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[c * 36 + (2 * by + dy) * 6 + 2 * bx + dx]);
                    }
                }
                assert_eq!(g.value(y).data()[c * 9 + by * 3 + bx], m);
            }
        }
    }
}

#[test]
fn relu_identity_on_positive_input() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_fn(&[5], |i| 0.1 + i as f64));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

// ---------------------------------------------------------- gradient suite

fn opts(tol: f64) -> GradCheckOptions {
    GradCheckOptions { tol, ..GradCheckOptions::default() }
}

#[test]
fn gradients_of_every_op_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);

        let x = random(&[2, 2, 6, 6], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = random(&[3], &mut rng);
        let r = random(&[2, 3, 6, 6], &mut rng);
        let rep = grad_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec::same())?;
                let y = g.mul(y, v[3])?;
                g.mean(y)
            },
            &[x.clone(), w, b, r],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "conv2d seed {seed}: {rep:?}");

        // stride 2, replicate padding, grouped
        let w = random(&[4, 1, 3, 3], &mut rng);
        let rep = grad_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], None, Conv2dSpec::same().stride(2).groups(2).padding(Padding::Replicate))?;
                let y = g.square(y)?;
                g.mean(y)
            },
            &[x.clone(), w],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "strided grouped conv2d seed {seed}: {rep:?}");

        let wt = random(&[2, 3, 2, 2], &mut rng);
        let bt = random(&[3], &mut rng);
        let rt = random(&[2, 3, 12, 12], &mut rng);
        let rep = grad_check(
            |g, v| {
                let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), 2)?;
                let y = g.mul(y, v[3])?;
                g.mean(y)
            },
            &[x.clone(), wt, bt, rt],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "conv_transpose2d seed {seed}: {rep:?}");

        let xp = random(&[1, 2, 6, 6], &mut rng);
        let rp = random(&[1, 2, 3, 3], &mut rng);
        let rep = grad_check(
            |g, v| {
                let y = g.max_pool2d(v[0])?;
                let y = g.mul(y, v[1])?;
                g.mean(y)
            },
            &[xp, rp],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "max_pool2d seed {seed}: {rep:?}");

        let xr = random_off_kink(&[3, 4], &mut rng);
        let rr = random(&[3, 4], &mut rng);
        for which in 0..4 {
            let rep = grad_check(
                |g, v| {
                    let y = match which {
                        0 => g.relu(v[0])?,
                        1 => g.sigmoid(v[0])?,
                        2 => g.softplus(v[0])?,
                        _ => g.square(v[0])?,
                    };
                    let y = g.mul(y, v[1])?;
                    g.mean(y)
                },
                &[xr.clone(), rr.clone()],
                opts(1e-4),
            )
            .unwrap();
            assert!(rep.passed(), "unary op {which} seed {seed}: {rep:?}");
        }

        let a = random(&[2, 5], &mut rng);
        let d = random_off_kink(&[2, 5], &mut rng);
        let s = Tensor::new(&[1], vec![rng.gen_range(0.5..2.0)]).unwrap();
        let rep = grad_check(
            |g, v| {
                let q = g.div(v[0], v[1])?;
                let m = g.mul(q, v[0])?;
                let ad = g.add(m, v[1])?;
                let sb = g.sub(ad, v[2])?;
                let sc = g.div(sb, v[2])?;
                let sc = g.add_scalar(sc, 0.3)?;
                let sc = g.mul_scalar(sc, -1.7)?;
                g.mean(sc)
            },
            &[a, d, s],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "elementwise seed {seed}: {rep:?}");

        let ca = random(&[2, 2, 3, 3], &mut rng);
        let cb = random(&[2, 1, 3, 3], &mut rng);
        let cv = random(&[3], &mut rng);
        let rep = grad_check(
            |g, v| {
                let c = g.concat_channels(v[0], v[1])?;
                let c = g.add_channel(c, v[2])?;
                let c = g.square(c)?;
                g.mean(c)
            },
            &[ca, cb, cv],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "concat/add_channel seed {seed}: {rep:?}");
    }
}

#[test]
fn composite_graph_gradients_match_finite_differences() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = random(&[1, 2, 8, 8], &mut rng);
        let w1 = random(&[3, 2, 3, 3], &mut rng);
        let w2 = random(&[3, 2, 2, 2], &mut rng);
        let rep = grad_check(
            |g, v| {
                let h = g.conv2d(v[0], v[1], None, Conv2dSpec::same())?;
                let h = g.sigmoid(h)?;
                let p = g.max_pool2d(h)?;
                let u = g.conv_transpose2d(p, v[2], None, 2)?;
                let sq = g.square(u)?;
                g.mean(sq)
            },
            &[x, w1, w2],
            opts(1e-4),
        )
        .unwrap();
        assert!(rep.passed(), "seed {seed}: {rep:?}");
    }
}

#[test]
fn forward_and_backward_are_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Tensor::<f32>::from_fn(&[2, 3, 16, 16], |_| rng.gen_range(0.0..1.0));
        let w = Tensor::<f32>::from_fn(&[8, 3, 3, 3], |_| rng.gen_range(-0.5..0.5));
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x), g.param(w));
        let y = g.conv2d(xv, wv, None, Conv2dSpec::same()).unwrap();
        let y = g.relu(y).unwrap();
        let p = g.max_pool2d(y).unwrap();
        let m = g.mean(p).unwrap();
        g.backward(m).unwrap();
        (g.value(p).clone(), g.grad(wv).unwrap())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(ga.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), gb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}
