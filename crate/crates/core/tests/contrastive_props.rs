use ctl_core::contrastive::{augment, augmented_pair, batch_loss, batch_loss_and_grad, contrastive_pair_loss, partner, AugmentConfig, Embeddings};
use ctl_core::image::GrayImage;
use ctl_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn embeddings(seed: u64, n: usize, dim: usize) -> Embeddings {
    let mut rng = stream(seed, "embeddings", &[]);
    Embeddings::new(n, dim, (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn direct_loss(z: &Embeddings, i: usize, j: usize, tau: f64) -> f64 {
    let unit = |r: &[f64]| {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter().map(|v| v / n).collect::<Vec<_>>()
    };
    let rows: Vec<Vec<f64>> = (0..z.n).map(|k| unit(z.row(k))).collect();
    let sim = |a: usize, b: usize| rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum::<f64>() / tau;
    let denom: f64 = (0..z.n).filter(|&k| k != i).map(|k| sim(i, k).exp()).sum();
    -(sim(i, j).exp() / denom).ln()
}

fn sorted_pixels(img: &GrayImage) -> Vec<u32> {
    let mut v: Vec<u32> = img.pixels().iter().map(|p| p.to_bits()).collect();
    v.sort_unstable();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_loss_is_nonnegative_and_matches_direct_form(seed in any::<u64>(), b in 1usize..6, dim in 1usize..5, tau in 0.1f64..2.0) {
        let z = embeddings(seed, 2 * b, dim);
        for i in 0..2 * b {
            let l = contrastive_pair_loss(&z, i, partner(i), tau).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert!((l - direct_loss(&z, i, partner(i), tau)).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_ignores_row_scale(seed in any::<u64>(), b in 1usize..5, dim in 2usize..5, scale_seed in any::<u64>()) {
        let z = embeddings(seed, 2 * b, dim);
        let mut rng = stream(scale_seed, "scales", &[]);
        let scales: Vec<f64> = (0..2 * b).map(|_| rng.random_range(0.1..10.0)).collect();
        let scaled = Embeddings::new(2 * b, dim, z.values.iter().enumerate().map(|(k, v)| v * scales[k / dim]).collect()).unwrap();
        let (a, ga) = batch_loss_and_grad(&z, 0.5).unwrap();
        let s = batch_loss(&scaled, 0.5).unwrap();
        prop_assert!((a - s).abs() < 1e-9);
        prop_assert!((a - batch_loss(&z, 0.5).unwrap()).abs() < 1e-12);
        // The gradient is orthogonal to each row, since the loss is scale invariant per row.
        for k in 0..2 * b {
            let dot: f64 = z.row(k).iter().zip(&ga[k * dim..(k + 1) * dim]).map(|(x, g)| x * g).sum();
            prop_assert!(dot.abs() < 1e-9);
        }
    }

    #[test]
    fn augmentation_preserves_pixel_multiset(seed in any::<u64>(), side in 2usize..9, h in any::<bool>(), v in any::<bool>(), r in any::<bool>()) {
        let mut rng = stream(seed, "aug-image", &[]);
        let img = GrayImage::from_fn(side, side, |_, _| rng.random_range(0.0..1.0f32));
        let cfg = AugmentConfig { horizontal_flip: h, vertical_flip: v, rotate90: r };
        let out = augment(&img, &cfg, &mut rng);
        prop_assert_eq!(out.width(), side);
        prop_assert_eq!(sorted_pixels(&out), sorted_pixels(&img));
        let pair = augmented_pair(&img, 3, &cfg, &mut rng);
        prop_assert_eq!(pair.origin_id, 3);
        prop_assert_eq!(sorted_pixels(&pair.view_a), sorted_pixels(&pair.view_b));
    }
}

#[test]
fn single_pair_has_zero_loss() {
    let z = embeddings(3, 2, 4);
    assert_eq!(contrastive_pair_loss(&z, 0, 1, 0.5).unwrap(), 0.0);
    assert_eq!(batch_loss(&z, 0.5).unwrap(), 0.0);
}

#[test]
fn orthogonal_negatives_worked_value() {
    let z = Embeddings::new(4, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let l = contrastive_pair_loss(&z, 0, 1, 0.5).unwrap();
    // -ln(e^2 / (e^2 + 2 e^0)) with tau = 0.5
    assert!((l - (1.0 + 2.0 * (-2.0f64).exp()).ln()).abs() < 1e-12);
}
