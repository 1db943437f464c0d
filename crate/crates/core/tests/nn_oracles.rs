use ctl_core::nn::{BatchNorm2d, Conv2d, Dense, GlobalAvgPool, Mode, Module, Relu};
use ctl_core::rng::stream;
use ctl_core::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn naive_conv(x: &[f64], n: usize, cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], cout: usize, k: usize, stride: usize, pad: usize) -> (Vec<f64>, usize, usize) {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for s in 0..n {
        for o in 0..cout {
            for r in 0..ho {
                for c in 0..wo {
                    let mut acc = bias[o];
                    for i in 0..cin {
                        for a in 0..k {
                            for b in 0..k {
                                let y = (r * stride + a) as isize - pad as isize;
                                let xx = (c * stride + b) as isize - pad as isize;
                                if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                    acc += weight[((o * cin + i) * k + a) * k + b] * x[((s * cin + i) * h + y as usize) * w + xx as usize];
                                }
                            }
                        }
                    }
                    out[((s * cout + o) * ho + r) * wo + c] = acc;
                }
            }
        }
    }
    (out, ho, wo)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loops(seed in any::<u64>(), n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
                                 h in 3usize..9, w in 3usize..9, k in prop::sample::select(vec![1usize, 3]), stride in 1usize..3, pad in 0usize..2) {
        prop_assume!(h + 2 * pad >= k && w + 2 * pad >= k);
        let mut rng = stream(seed, "conv-oracle", &[]);
        let mut conv = Conv2d::<f64>::new(cin, cout, k, stride, pad, &mut rng);
        conv.bias = Tensor::from_fn(&[cout], |_| rng.random_range(-1.0..1.0));
        let x = Tensor::from_fn(&[n, cin, h, w], |_| rng.random_range(-1.0..1.0));
        let y = conv.forward(&x, Mode::Train).unwrap();
        let (want, ho, wo) = naive_conv(x.data(), n, cin, h, w, conv.weight.data(), conv.bias.data(), cout, k, stride, pad);
        prop_assert_eq!(y.shape(), &[n, cout, ho, wo][..]);
        for (a, b) in y.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn batchnorm_train_matches_two_pass_statistics(seed in any::<u64>(), n in 2usize..5, c in 1usize..4, hw in 1usize..5) {
        let mut rng = stream(seed, "bn-oracle", &[]);
        let mut bn = BatchNorm2d::<f64>::new(c);
        bn.gamma = Tensor::from_fn(&[c], |_| rng.random_range(0.5..2.0));
        bn.beta = Tensor::from_fn(&[c], |_| rng.random_range(-1.0..1.0));
        let x = Tensor::from_fn(&[n, c, hw, hw], |_| rng.random_range(-3.0..3.0));
        let y = bn.forward(&x, Mode::Train).unwrap();
        let plane = hw * hw;
        for ch in 0..c {
            let vals: Vec<f64> = (0..n).flat_map(|s| x.data()[(s * c + ch) * plane..(s * c + ch + 1) * plane].to_vec()).collect();
            let m = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let unbiased = var * m / (m - 1.0).max(1.0);
            for s in 0..n {
                for p in 0..plane {
                    let i = (s * c + ch) * plane + p;
                    let want = bn.gamma.data()[ch] * (x.data()[i] - mean) / (var + 1e-5).sqrt() + bn.beta.data()[ch];
                    prop_assert!((y.data()[i] - want).abs() < 1e-10);
                }
            }
            prop_assert!((bn.running_mean.data()[ch] - 0.1 * mean).abs() < 1e-12);
            let expect_var = if m > 1.0 { unbiased } else { var };
            prop_assert!((bn.running_var.data()[ch] - (0.9 + 0.1 * expect_var)).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_matches_matrix_product(seed in any::<u64>(), n in 1usize..4, i in 1usize..6, o in 1usize..6) {
        let mut rng = stream(seed, "dense-oracle", &[]);
        let mut fc = Dense::<f64>::new(i, o, &mut rng);
        fc.bias = Tensor::from_fn(&[o], |_| rng.random_range(-1.0..1.0));
        let x = Tensor::from_fn(&[n, i], |_| rng.random_range(-1.0..1.0));
        let y = fc.forward(&x, Mode::Eval).unwrap();
        for s in 0..n {
            for j in 0..o {
                let want: f64 = fc.bias.data()[j] + (0..i).map(|q| fc.weight.data()[j * i + q] * x.data()[s * i + q]).sum::<f64>();
                prop_assert!((y.data()[s * o + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn relu_and_pool_elementwise(seed in any::<u64>(), n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5) {
        let mut rng = stream(seed, "relu-pool", &[]);
        let x = Tensor::from_fn(&[n, c, h, w], |_| rng.random_range(-1.0..1.0f64));
        let r = Relu::new().forward(&x, Mode::Eval).unwrap();
        prop_assert!(r.data().iter().zip(x.data()).all(|(a, b)| *a == b.max(0.0)));
        let g = GlobalAvgPool::new().forward(&x, Mode::Eval).unwrap();
        prop_assert_eq!(g.shape(), &[n, c][..]);
        for k in 0..n * c {
            let mean = x.data()[k * h * w..(k + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
            prop_assert!((g.data()[k] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn eval_batchnorm_uses_running_statistics() {
    let mut bn = BatchNorm2d::<f64>::new(1);
    bn.running_mean = Tensor::new(&[1], vec![2.0]).unwrap();
    bn.running_var = Tensor::new(&[1], vec![4.0 - 1e-5]).unwrap();
    let x = Tensor::new(&[1, 1], vec![6.0]).unwrap();
    let y = bn.forward(&x, Mode::Eval).unwrap();
    assert!((y.data()[0] - 2.0).abs() < 1e-12);
}
