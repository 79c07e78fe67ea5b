//! Central finite-difference checks for every differentiable operator.
//!
//! Each check contracts the operator output with a fixed random tensor `R`,
//! `L(x) = sum(op(x) * R)`, so the analytic input gradient is the operator's
//! backward applied to `R`, and compares it against
//! `(L(x + h e_i) - L(x - h e_i)) / 2h` for every coordinate `i`.

use ckm_nn::{
    avg_pool2, avg_pool2_backward, concat_channels, concat_channels_backward, conv2d,
    conv2d_backward, max_pool2, max_pool2_backward, mse_loss, relu, relu_backward,
    upsample_nearest2, upsample_nearest2_backward, Shape4, Tensor4, UNet, UNetConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub op: &'static str,
    pub shape: Shape4,
    /// Largest elementwise relative error over all checked coordinates.
    pub max_rel_err: f64,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    let v = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor4::from_vec(shape, v).unwrap()
}

/// Values bounded away from zero so a step of `STEP` never crosses a kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    let v = (0..shape.len())
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor4::from_vec(shape, v).unwrap()
}

/// Distinct values with gaps far larger than `STEP`, so pooling argmaxes
/// never flip under perturbation.
fn well_separated(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    let mut v: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01 - 0.5).collect();
    for i in (1..v.len()).rev() {
        let j = rng.gen_range(0..=i);
        v.swap(i, j);
    }
    Tensor4::from_vec(shape, v).unwrap()
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Max relative error between `analytic` and central differences of `loss`
/// with respect to every element of `x`.
pub fn compare(x: &Tensor4<f64>, analytic: &[f64], loss: impl Fn(&Tensor4<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + STEP;
        let up = loss(&probe);
        probe.data_mut()[i] = orig - STEP;
        let down = loss(&probe);
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

fn small_shape(rng: &mut ChaCha8Rng, even: bool) -> Shape4 {
    let mut dim = |lo: usize, hi: usize| rng.gen_range(lo..=hi);
    let (b, c) = (dim(1, 2), dim(1, 3));
    let (mut h, mut w) = (dim(2, 7), dim(2, 7));
    if even {
        h = 2 * (h / 2).max(1);
        w = 2 * (w / 2).max(1);
    }
    Shape4::new(b, c, h, w)
}

fn check_conv(rng: &mut ChaCha8Rng) -> Vec<GradReport> {
    let k = [1usize, 3, 5][rng.gen_range(0..3)];
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=k / 2);
    let mut s = small_shape(rng, false);
    s.height = s.height.max(k);
    s.width = s.width.max(k);
    let co = rng.gen_range(1..=3);
    let x = random_tensor(rng, s);
    let w = random_tensor(rng, Shape4::new(co, s.channels, k, k));
    let bias: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y = conv2d(&x, &w, &bias, stride, pad).unwrap();
    let r = random_tensor(rng, y.shape());
    let g = conv2d_backward(&x, &w, &r, stride, pad).unwrap();

    let bias_t = Tensor4::from_vec(Shape4::new(co, 1, 1, 1), bias.clone()).unwrap();
    vec![
        GradReport {
            op: "conv2d/input",
            shape: s,
            max_rel_err: compare(&x, g.input.data(), |xp| {
                dot(&conv2d(xp, &w, &bias, stride, pad).unwrap(), &r)
            }),
        },
        GradReport {
            op: "conv2d/weight",
            shape: w.shape(),
            max_rel_err: compare(&w, g.weight.data(), |wp| {
                dot(&conv2d(&x, wp, &bias, stride, pad).unwrap(), &r)
            }),
        },
        GradReport {
            op: "conv2d/bias",
            shape: bias_t.shape(),
            max_rel_err: compare(&bias_t, &g.bias, |bp| {
                dot(&conv2d(&x, &w, bp.data(), stride, pad).unwrap(), &r)
            }),
        },
    ]
}

fn check_relu(rng: &mut ChaCha8Rng) -> GradReport {
    let s = small_shape(rng, false);
    let x = away_from_zero(rng, s);
    let y = relu(&x);
    let r = random_tensor(rng, s);
    let g = relu_backward(&y, &r).unwrap();
    GradReport {
        op: "relu",
        shape: s,
        max_rel_err: compare(&x, g.data(), |xp| dot(&relu(xp), &r)),
    }
}

fn check_upsample(rng: &mut ChaCha8Rng) -> GradReport {
    let s = small_shape(rng, false);
    let x = random_tensor(rng, s);
    let r = random_tensor(rng, upsample_nearest2(&x).shape());
    let g = upsample_nearest2_backward(&r).unwrap();
    GradReport {
        op: "upsample_nearest2",
        shape: s,
        max_rel_err: compare(&x, g.data(), |xp| dot(&upsample_nearest2(xp), &r)),
    }
}

fn check_concat(rng: &mut ChaCha8Rng) -> Vec<GradReport> {
    let sa = small_shape(rng, false);
    let sb = Shape4::new(sa.batch, rng.gen_range(1..=4), sa.height, sa.width);
    let a = random_tensor(rng, sa);
    let b = random_tensor(rng, sb);
    let r = random_tensor(rng, concat_channels(&a, &b).unwrap().shape());
    let (ga, gb) = concat_channels_backward(&r, sa.channels).unwrap();
    vec![
        GradReport {
            op: "concat_channels/a",
            shape: sa,
            max_rel_err: compare(&a, ga.data(), |ap| dot(&concat_channels(ap, &b).unwrap(), &r)),
        },
        GradReport {
            op: "concat_channels/b",
            shape: sb,
            max_rel_err: compare(&b, gb.data(), |bp| dot(&concat_channels(&a, bp).unwrap(), &r)),
        },
    ]
}

fn check_pools(rng: &mut ChaCha8Rng) -> Vec<GradReport> {
    let s = small_shape(rng, true);
    let x = well_separated(rng, s);
    let r = random_tensor(rng, avg_pool2(&x).unwrap().shape());
    let ga = avg_pool2_backward(&r);
    let gm = max_pool2_backward(&x, &r).unwrap();
    vec![
        GradReport {
            op: "avg_pool2",
            shape: s,
            max_rel_err: compare(&x, ga.data(), |xp| dot(&avg_pool2(xp).unwrap(), &r)),
        },
        GradReport {
            op: "max_pool2",
            shape: s,
            max_rel_err: compare(&x, gm.data(), |xp| dot(&max_pool2(xp).unwrap(), &r)),
        },
    ]
}

fn check_mse(rng: &mut ChaCha8Rng) -> GradReport {
    let s = small_shape(rng, false);
    let p = random_tensor(rng, s);
    let t = random_tensor(rng, s);
    let l = mse_loss(&p, &t).unwrap();
    GradReport {
        op: "mse_loss",
        shape: s,
        max_rel_err: compare(&p, l.grad.data(), |pp| mse_loss(pp, &t).unwrap().value),
    }
}

/// Runs `cases` randomized checks of every operator.
pub fn check_all_ops(seed: u64, cases: usize) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        out.extend(check_conv(&mut rng));
        out.push(check_relu(&mut rng));
        out.push(check_upsample(&mut rng));
        out.extend(check_concat(&mut rng));
        out.extend(check_pools(&mut rng));
        out.push(check_mse(&mut rng));
    }
    out
}

/// Checks the hand-wired UNet backward against finite differences of the
/// full forward pass, for the input and for every parameter tensor.
pub fn check_unet(seed: u64, config: UNetConfig, grid: usize, batch: usize) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = UNet::<f64>::build(config.clone(), seed).unwrap();
    // Nonzero biases so that no layer sits exactly at the rectifier kink.
    for p in net.params_mut() {
        if p.name.ends_with(".bias") {
            for v in p.value.data_mut() {
                *v = rng.gen_range(0.01..0.1);
            }
        }
    }
    let x = random_tensor(&mut rng, Shape4::new(batch, config.in_channels, grid, grid));
    let (y, trace) = net.forward_traced(&x).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    net.zero_grad();
    let gx = net.backward(&trace, &r).unwrap();

    let mut reports = vec![GradReport {
        op: "unet/input",
        shape: x.shape(),
        max_rel_err: compare(&x, gx.data(), |xp| dot(&net.forward(xp).unwrap(), &r)),
    }];
    let count = net.params().count();
    for idx in 0..count {
        let p = net.params().nth(idx).unwrap();
        let (value, grad) = (p.value.clone(), p.grad.clone());
        let err = compare(&value, grad.data(), |vp| {
            let mut probe = net.clone();
            probe.params_mut().nth(idx).unwrap().value = vp.clone();
            dot(&probe.forward(&x).unwrap(), &r)
        });
        reports.push(GradReport {
            op: "unet/param",
            shape: value.shape(),
            max_rel_err: err,
        });
    }
    reports
}
