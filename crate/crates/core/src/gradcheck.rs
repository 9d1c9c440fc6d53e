//! Finite-difference and adjoint verification suites.
//!
//! Each check compares an analytic quantity against an oracle that does not
//! share its code path: central differences of the forward value, a
//! brute-force per-window scatter loop, or the inner-product definition of
//! the adjoint. Points within [`KINK_TOL`] of a non-differentiable kink of
//! `|.|` are skipped; finite differences are meaningless across them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{adjoint_scatter, correlate_valid, Grid2D, ImageStack, Kernel3x3, SOBEL_X, SOBEL_Y};
use crate::model::{LayerSpec, Network};
use crate::spatial::{
    tv_grad_channels, tv_theta, tv_theta_coeffs, tv_value_channels, NeighborhoodOutputs,
    SpatialLoss, TotalVariation,
};
use crate::trainer::{supervised_grad, unsupervised_grad, SupervisedLoss};

/// Minimum `|Gx|`, `|Gy|` for a point to count as away from a kink.
pub const KINK_TOL: f64 = 1e-3;

/// Tolerances pinned for each suite.
pub const COEFF_ABS_TOL: f64 = 1e-6;
pub const SCATTER_TOL: f64 = 1e-12;
pub const DIRECTIONAL_REL_TOL: f64 = 1e-5;
pub const ADJOINT_REL_TOL: f64 = 1e-10;
pub const NETWORK_REL_TOL: f64 = 1e-4;
pub const NETWORK_ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed error in the units of the check's tolerance.
    pub worst: f64,
    pub tolerance: f64,
    pub samples: usize,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: worst {:.3e} (tol {:.1e}, {} samples)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.samples
        )
    }
}

fn outcome(name: &str, worst: f64, tolerance: f64, samples: usize) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed: samples > 0 && worst <= tolerance,
        worst,
        tolerance,
        samples,
    }
}

/// Central difference `(f(x + h) - f(x - h)) / 2h` for every coordinate.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            probe[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps near-zero entries from
/// turning round-off into large relative errors.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn away_from_kink(nb: &[f64; 9]) -> bool {
    SOBEL_X.apply(nb).abs() >= KINK_TOL && SOBEL_Y.apply(nb).abs() >= KINK_TOL
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid2D {
    Grid2D::from_fn(h, w, |_, _| rng.random::<f64>())
}

/// Per-neighborhood coefficients against central differences of the value.
pub fn check_tv_coeffs(seed: u64, count: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut samples = 0;
    while samples < count {
        let mut nb = [0.0; 9];
        nb.iter_mut().for_each(|v| *v = rng.random::<f64>());
        if !away_from_kink(&nb) {
            continue;
        }
        let outputs = NeighborhoodOutputs::single(nb).expect("finite");
        let analytic = tv_theta_coeffs(&outputs, 0).expect("channel 0");
        let numeric = central_difference(
            |x| {
                let a: [f64; 9] = x.try_into().expect("nine values");
                tv_theta(&NeighborhoodOutputs::single(a).expect("finite"), 0).expect("channel 0")
            },
            &nb,
            1e-7,
        );
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max((a - n).abs());
        }
        samples += 1;
    }
    outcome("tv coefficients vs central differences", worst, COEFF_ABS_TOL, samples)
}

/// Random raw channels whose every window is away from a kink.
fn kink_free_channels(rng: &mut ChaCha8Rng, h: usize, w: usize, k: usize) -> Vec<Grid2D> {
    loop {
        let chans: Vec<Grid2D> = (0..k).map(|_| random_grid(rng, h, w)).collect();
        let ok = chans.iter().all(|c| {
            let gx = correlate_valid(c, &SOBEL_X).expect("size");
            let gy = correlate_valid(c, &SOBEL_Y).expect("size");
            gx.data().iter().chain(gy.data()).all(|v| v.abs() >= KINK_TOL)
        });
        if ok {
            return chans;
        }
    }
}

/// Whole-image gradient against an explicit loop over every 3x3 window.
pub fn check_tv_image_scatter(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (h, w, k) = (rng.random_range(3..9), rng.random_range(3..9), rng.random_range(1..4));
        let chans: Vec<Grid2D> = (0..k).map(|_| random_grid(&mut rng, h, w)).collect();
        let grads = tv_grad_channels(&chans).expect("size");
        for (ch, g) in chans.iter().zip(&grads) {
            let mut expect = vec![0.0; h * w];
            for r in 0..h - 2 {
                for c in 0..w - 2 {
                    let nb = NeighborhoodOutputs::single(ch.window3(r, c)).expect("finite");
                    let coeffs = tv_theta_coeffs(&nb, 0).expect("channel 0");
                    for (i, cf) in coeffs.iter().enumerate() {
                        expect[(r + i / 3) * w + c + i % 3] += cf;
                    }
                }
            }
            for (a, e) in g.data().iter().zip(&expect) {
                worst = worst.max((a - e).abs());
            }
        }
    }
    outcome("tv image gradient vs window scatter", worst, SCATTER_TOL, trials)
}

/// Whole-image gradient against directional central differences.
pub fn check_tv_image_directional(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let h_step = 1e-6;
    for _ in 0..trials {
        let (h, w, k) = (rng.random_range(3..7), rng.random_range(3..7), rng.random_range(1..4));
        let chans = kink_free_channels(&mut rng, h, w, k);
        let dirs: Vec<Grid2D> = (0..k).map(|_| random_grid(&mut rng, h, w).map(|v| 2.0 * v - 1.0)).collect();
        let grads = tv_grad_channels(&chans).expect("size");
        let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.dot(d)).sum();
        let shifted = |s: f64| -> f64 {
            let moved: Vec<Grid2D> = chans
                .iter()
                .zip(&dirs)
                .map(|(c, d)| {
                    let data = c.data().iter().zip(d.data()).map(|(a, b)| a + s * b).collect();
                    Grid2D::new(h, w, data).expect("finite")
                })
                .collect();
            tv_value_channels(&moved).expect("size")
        };
        let numeric = (shifted(h_step) - shifted(-h_step)) / (2.0 * h_step);
        worst = worst.max(rel_error(analytic, numeric, 0.0));
    }
    outcome(
        "tv image gradient vs directional differences",
        worst,
        DIRECTIONAL_REL_TOL,
        trials,
    )
}

/// `<corr(g, k), c> = <g, adjoint(c, k)>` for Sobel and random kernels.
pub fn check_adjoint(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let (h, w) = (rng.random_range(3..20), rng.random_range(3..20));
        let kernel = match t % 3 {
            0 => SOBEL_X,
            1 => SOBEL_Y,
            _ => {
                let mut taps = [0.0; 9];
                taps.iter_mut().for_each(|v| *v = rng.random::<f64>() * 2.0 - 1.0);
                Kernel3x3::new(taps)
            }
        };
        let g = random_grid(&mut rng, h, w);
        let c = random_grid(&mut rng, h - 2, w - 2).map(|v| v - 0.5);
        let lhs = correlate_valid(&g, &kernel).expect("size").dot(&c);
        let rhs = g.dot(&adjoint_scatter(&c, &kernel, h, w).expect("size"));
        worst = worst.max(rel_error(lhs, rhs, 0.0));
    }
    outcome("correlation adjoint identity", worst, ADJOINT_REL_TOL, trials)
}

/// The tiny architecture used for parameter gradient checks.
pub fn tiny_architecture(num_classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv3x3 { maps: 2 },
        Relu,
        Maxpool2x2,
        Dense { units: 8 },
        Relu,
        Dense { units: num_classes },
        Softmax,
    ]
}

fn perturbed_net(seed: u64, k: usize, patch: usize, channels: usize) -> Result<Network> {
    let mut net = Network::init(&tiny_architecture(k), channels, patch, k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let params = net
        .params()
        .iter()
        .map(|&w| w + 0.1 * (rng.random::<f64>() - 0.5))
        .collect();
    net.set_params(params)?;
    Ok(net)
}

fn random_stack(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize) -> ImageStack {
    ImageStack::new((0..channels).map(|_| random_grid(rng, h, w)).collect()).expect("equal sizes")
}

fn param_fd(net: &Network, f: impl Fn(&Network) -> f64, h: f64) -> Vec<f64> {
    let base = net.params().to_vec();
    let probe = std::cell::RefCell::new(net.clone());
    central_difference(
        |x| {
            let mut p = probe.borrow_mut();
            p.set_params(x.to_vec()).expect("finite params");
            f(&p)
        },
        &base,
        h,
    )
}

fn worst_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_error(a, n, NETWORK_ABS_FLOOR))
        .fold(0.0, f64::max)
}

/// Supervised loss gradients (MSE and cross-entropy) of a tiny network.
pub fn check_supervised_network(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let k = 2 + t % 2;
        let channels = 1 + 2 * (t % 2);
        let net = perturbed_net(rng.random(), k, 7, channels)?;
        let patch = random_stack(&mut rng, channels, 7, 7);
        let label = rng.random_range(0..k);
        for loss in [SupervisedLoss::Mse, SupervisedLoss::CrossEntropy] {
            let (_, analytic) = supervised_grad(&net, &patch, label, loss)?;
            let numeric = param_fd(
                &net,
                |n| supervised_grad(n, &patch, label, loss).expect("valid sample").0,
                1e-5,
            );
            worst = worst.max(worst_rel(analytic.data(), &numeric));
        }
    }
    Ok(outcome(
        "supervised parameter gradients vs central differences",
        worst,
        NETWORK_REL_TOL,
        trials,
    ))
}

/// Total variation over the neighborhood outputs of `(row, col)`, recomputed
/// from independent forward passes.
pub fn neighborhood_tv(net: &Network, image: &ImageStack, row: usize, col: usize) -> Vec<[f64; 9]> {
    let k = net.num_classes();
    let mut nb = vec![[0.0; 9]; k];
    for i in 0..9 {
        let patch = crate::data::extract_patch(image, row + i / 3 - 1, col + i % 3 - 1, net.patch_size())
            .expect("in bounds");
        let p = net.predict(&patch).expect("shape");
        for (ch, vals) in nb.iter_mut().enumerate() {
            vals[i] = p[ch];
        }
    }
    nb
}

/// Unsupervised (total variation) parameter gradients of a tiny network.
pub fn check_unsupervised_network(seed: u64, trials: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < trials && attempts < 50 * trials {
        attempts += 1;
        let k = 2 + attempts % 2;
        let net = perturbed_net(rng.random(), k, 7, 1)?;
        let image = random_stack(&mut rng, 1, 9, 9);
        let (row, col) = (rng.random_range(1..8), rng.random_range(1..8));
        let nb = neighborhood_tv(&net, &image, row, col);
        if !nb.iter().all(away_from_kink) {
            continue;
        }
        let (_, analytic) = unsupervised_grad(&net, &image, row, col)?;
        let numeric = param_fd(
            &net,
            |n| {
                neighborhood_tv(n, &image, row, col)
                    .iter()
                    .map(|v| TotalVariation.theta(v))
                    .sum()
            },
            1e-5,
        );
        worst = worst.max(worst_rel(analytic.data(), &numeric));
        done += 1;
    }
    Ok(outcome(
        "unsupervised parameter gradients vs central differences",
        worst,
        NETWORK_REL_TOL,
        done,
    ))
}

/// Runs every suite with its pinned tolerance.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_tv_coeffs(seed, 1000),
        check_tv_image_scatter(seed.wrapping_add(1), 50),
        check_tv_image_directional(seed.wrapping_add(2), 50),
        check_adjoint(seed.wrapping_add(3), 60),
        check_supervised_network(seed.wrapping_add(4), 6)?,
        check_unsupervised_network(seed.wrapping_add(5), 6)?,
    ])
}
