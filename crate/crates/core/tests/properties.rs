use proptest::prelude::*;

use tvseg::data::{sample_sparse_labels, LabelMap, LabeledImage, UNLABELED};
use tvseg::grid::{adjoint_scatter, correlate_valid, Grid2D, ImageStack, Kernel3x3, SOBEL_X, SOBEL_Y};
use tvseg::mrf::{argmax_labels, energy, icm_from, MrfConfig};
use tvseg::spatial::{tv_grad_channels, tv_value_channels, ProbMap, SpatialLoss, TotalVariation};

fn grid(h: usize, w: usize) -> impl Strategy<Value = Grid2D> {
    prop::collection::vec(-1.0f64..1.0, h * w).prop_map(move |d| Grid2D::new(h, w, d).unwrap())
}

fn sized_grid() -> impl Strategy<Value = Grid2D> {
    (3usize..10, 3usize..10).prop_flat_map(|(h, w)| grid(h, w))
}

fn kernel() -> impl Strategy<Value = Kernel3x3> {
    prop::array::uniform9(-2.0f64..2.0).prop_map(Kernel3x3::new)
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn scatter_is_the_adjoint_of_correlation(
        (x, y) in (3usize..10, 3usize..10).prop_flat_map(|(h, w)| (grid(h, w), grid(h - 2, w - 2))),
        k in kernel(),
    ) {
        let lhs = correlate_valid(&x, &k).unwrap().dot(&y);
        let rhs = x.dot(&adjoint_scatter(&y, &k, x.height(), x.width()).unwrap());
        prop_assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
    }

    #[test]
    fn correlation_is_linear(
        (a, b) in (3usize..9, 3usize..9).prop_flat_map(|(h, w)| (grid(h, w), grid(h, w))),
        k in kernel(),
        s in -3.0f64..3.0,
    ) {
        let combo = Grid2D::new(a.height(), a.width(),
            a.data().iter().zip(b.data()).map(|(x, y)| x + s * y).collect()).unwrap();
        let lhs = correlate_valid(&combo, &k).unwrap();
        let (ka, kb) = (correlate_valid(&a, &k).unwrap(), correlate_valid(&b, &k).unwrap());
        for ((l, x), y) in lhs.data().iter().zip(ka.data()).zip(kb.data()) {
            prop_assert!(close(*l, x + s * y, 1e-12));
        }
    }

    #[test]
    fn tv_is_nonnegative_and_absolutely_homogeneous(g in sized_grid(), c in -4.0f64..4.0) {
        let tv = tv_value_channels(std::slice::from_ref(&g)).unwrap();
        prop_assert!(tv >= 0.0);
        let scaled = tv_value_channels(&[g.map(|v| c * v)]).unwrap();
        prop_assert!(close(scaled, c.abs() * tv, 1e-12));
    }

    #[test]
    fn tv_ignores_constant_offsets(g in sized_grid(), c in -5.0f64..5.0) {
        let tv = tv_value_channels(std::slice::from_ref(&g)).unwrap();
        let shifted = tv_value_channels(&[g.map(|v| v + c)]).unwrap();
        prop_assert!(close(tv, shifted, 1e-10));
    }

    #[test]
    fn image_tv_is_the_sum_of_window_losses(g in sized_grid()) {
        let mut total = 0.0;
        for r in 0..g.height() - 2 {
            for c in 0..g.width() - 2 {
                total += TotalVariation.theta(&g.window3(r, c));
            }
        }
        prop_assert!(close(total, tv_value_channels(std::slice::from_ref(&g)).unwrap(), 1e-12));
    }

    /// One-homogeneity gives Euler's identity <grad TV(p), p> = TV(p).
    #[test]
    fn gradient_satisfies_euler_identity(g in sized_grid()) {
        let tv = tv_value_channels(std::slice::from_ref(&g)).unwrap();
        let grad = tv_grad_channels(std::slice::from_ref(&g)).unwrap();
        prop_assert!(close(grad[0].dot(&g), tv, 1e-10));
    }

    #[test]
    fn sobel_kernels_annihilate_constants(v in -10.0f64..10.0) {
        prop_assert_eq!(SOBEL_X.apply(&[v; 9]), 0.0);
        prop_assert_eq!(SOBEL_Y.apply(&[v; 9]), 0.0);
    }

    #[test]
    fn sampling_draws_distinct_labeled_pixels(
        mask in prop::collection::vec(0u8..3, 36),
        n in 0usize..20,
        seed in any::<u64>(),
    ) {
        let labels: Vec<u8> = mask.iter().map(|&m| if m == 2 { UNLABELED } else { m }).collect();
        let available = labels.iter().filter(|&&l| l != UNLABELED).count();
        let img = LabeledImage::new(
            ImageStack::single(Grid2D::zeros(6, 6)),
            LabelMap::new(6, 6, labels.clone()).unwrap(),
        ).unwrap();
        match sample_sparse_labels(&img, 0, n, seed) {
            Ok(set) => {
                prop_assert!(n <= available);
                prop_assert_eq!(set.len(), n);
                let mut seen = std::collections::BTreeSet::new();
                for e in set.entries() {
                    prop_assert!(seen.insert((e.row, e.col)));
                    prop_assert_eq!(e.class, labels[e.row * 6 + e.col]);
                }
                prop_assert_eq!(set, sample_sparse_labels(&img, 0, n, seed).unwrap());
            }
            Err(_) => prop_assert!(n > available),
        }
    }

    #[test]
    fn icm_never_raises_energy(
        (h, w, k) in (2usize..8, 2usize..8, 2usize..4),
        seed in any::<u64>(),
        beta in 0.0f64..5.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..h * w * k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let channels = (0..k)
            .map(|c| Grid2D::from_fn(h, w, |r, q| {
                let px = &raw[(r * w + q) * k..(r * w + q + 1) * k];
                px[c] / px.iter().sum::<f64>()
            }))
            .collect();
        let probs = ProbMap::new(channels).unwrap();
        let start = argmax_labels(&probs).unwrap();
        let mut prev = energy(&probs, &start, beta).unwrap();
        let out = icm_from(&probs, start, &MrfConfig { beta, max_iters: 30 }).unwrap();
        for &e in &out.energies {
            prop_assert!(e <= prev);
            prev = e;
        }
    }
}

/// Every labeled pixel is picked with probability n / N; 10^4 draws keep each
/// count within five binomial standard deviations.
#[test]
fn sampling_is_uniform() {
    let (h, w, n) = (4, 4, 3);
    let img = LabeledImage::new(
        ImageStack::single(Grid2D::zeros(h, w)),
        LabelMap::filled(h, w, 1),
    )
    .unwrap();
    let draws = 10_000;
    let mut counts = vec![0usize; h * w];
    for seed in 0..draws {
        for e in sample_sparse_labels(&img, 0, n, seed).unwrap().entries() {
            counts[e.row * w + e.col] += 1;
        }
    }
    let p = n as f64 / (h * w) as f64;
    let mean = draws as f64 * p;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 5.0 * sd, "pixel {i}: {c} vs {mean}");
    }
}
