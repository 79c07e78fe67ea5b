use ckm_nn::{conv2d, Shape4, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Direct-loop zero-padded cross-correlation.
///
/// Loops over batch, output channel, output row, output column, input
/// channel and the two kernel taps.
pub fn naive_conv2d(
    input: &Tensor4<f64>,
    weight: &Tensor4<f64>,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor4<f64> {
    let s = input.shape();
    let ws = weight.shape();
    let oh = (s.height + 2 * pad - ws.height) / stride + 1;
    let ow = (s.width + 2 * pad - ws.width) / stride + 1;
    let mut out = Tensor4::zeros(Shape4::new(s.batch, ws.batch, oh, ow));
    for b in 0..s.batch {
        for co in 0..ws.batch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..s.channels {
                        for ki in 0..ws.height {
                            for kj in 0..ws.width {
                                let iy = (oy * stride + ki) as isize - pad as isize;
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= s.height as isize || ix >= s.width as isize {
                                    continue;
                                }
                                acc += input.get(b, ci, iy as usize, ix as usize)
                                    * weight.get(co, ci, ki, kj);
                            }
                        }
                    }
                    out.set(b, co, oy, ox, acc);
                }
            }
        }
    }
    out
}

/// Largest absolute difference between [`conv2d`] and [`naive_conv2d`] on
/// each of `cases` random problems (kernels 1/3/5, stride 1-2, any padding).
pub fn conv_oracle_errors(seed: u64, cases: usize) -> Vec<(Shape4, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rand_t = |rng: &mut ChaCha8Rng, s: Shape4| {
        Tensor4::from_vec(s, (0..s.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized")
    };
    (0..cases)
        .map(|_| {
            let k = [1usize, 3, 5][rng.gen_range(0..3)];
            let stride = rng.gen_range(1..=2);
            let pad = rng.gen_range(0..=k / 2);
            let s = Shape4::new(
                rng.gen_range(1..=3),
                rng.gen_range(1..=4),
                rng.gen_range(k..=12),
                rng.gen_range(k..=12),
            );
            let co = rng.gen_range(1..=4);
            let x = rand_t(&mut rng, s);
            let w = rand_t(&mut rng, Shape4::new(co, s.channels, k, k));
            let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d(&x, &w, &b, stride, pad).expect("valid case");
            let slow = naive_conv2d(&x, &w, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            let worst = fast
                .data()
                .iter()
                .zip(slow.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            (s, worst)
        })
        .collect()
}
