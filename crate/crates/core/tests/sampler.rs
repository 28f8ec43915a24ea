use cmdm::diffusion::NoiseMode;
use cmdm::metrics::mae;
use cmdm::models::{OraclePredictor, PriorGenerator, ZeroPredictor};
use cmdm::rng::sample_gaussian_grid;
use cmdm::sampler::{
    cascade_sample, multi_path, pure_noise_sample, shortcut_path, uncertainty_map, BaselineMode,
    SamplerConfig,
};
use cmdm::tasks::{gen_phantom, PhantomSpec};
use cmdm::{Grid2D, NoiseSchedule, RngStream};
use proptest::prelude::*;

/// A phantom mapped to `[-1, 1]`.
fn phantom(seed: u64, size: usize) -> Grid2D {
    let spec = PhantomSpec {
        image_size: size,
        ..PhantomSpec::default()
    };
    let p = gen_phantom(&mut RngStream::derive(seed, &[]), &spec).unwrap();
    let hi = p.max().max(1e-9);
    p.map(|v| 2.0 * v / hi - 1.0).unwrap()
}

fn oracle_mae(y0: &Grid2D, t_s: usize) -> f64 {
    let s = NoiseSchedule::default_linear();
    let f = OraclePredictor::new(y0.clone());
    let mut r = RngStream::derive(0, &[]);
    let out = shortcut_path(y0, y0, t_s, &f, &s, &mut r, NoiseMode::Deterministic).unwrap();
    mae(&out, y0).unwrap()
}

#[test]
fn oracle_shortcut_recovers_the_target() {
    for seed in 0..3 {
        let m = oracle_mae(&phantom(seed, 64), 250);
        assert!(m < 1e-2, "seed {seed}: MAE {m}");
    }
}

#[test]
fn oracle_error_grows_with_shortcut_time() {
    let y0 = phantom(5, 32);
    let errs: Vec<f64> = [50, 250, 500].iter().map(|&t| oracle_mae(&y0, t)).collect();
    assert!(errs.windows(2).all(|w| w[0] <= w[1]), "{errs:?}");
}

// The oracle pins every path to y0 at t = 1, so only the literal mode's
// last-step draw leaves spread to measure.
#[test]
fn path_average_variance_falls_as_one_over_paths() {
    let s = NoiseSchedule::default_linear();
    let y0 = phantom(2, 16);
    let f = OraclePredictor::new(y0.clone());
    let var_of = |n_paths: usize| {
        let outs: Vec<Grid2D> = (0..20u64)
            .map(|rep| {
                let master = RngStream::derive(77, &[n_paths as u64, rep]);
                multi_path(
                    &y0,
                    &y0,
                    250,
                    n_paths,
                    &f,
                    &s,
                    &master,
                    NoiseMode::StochasticLiteral,
                )
                .unwrap()
                .0
            })
            .collect();
        let sd = uncertainty_map(&outs).unwrap();
        // Unbiased pixel variance, averaged over pixels.
        sd.data().iter().map(|v| v * v).sum::<f64>() / sd.len() as f64 * 20.0 / 19.0
    };
    let v1 = var_of(1);
    for n in [4, 16] {
        let ratio = v1 / var_of(n) / n as f64;
        assert!((ratio - 1.0).abs() <= 0.3, "N_p = {n}: ratio {ratio}");
    }
}

#[test]
fn pure_noise_matches_a_full_length_shortcut_from_zero() {
    let s = NoiseSchedule::default_linear();
    let x = phantom(1, 8);
    let f = ZeroPredictor;
    let zero = Grid2D::zeros(8, 8).unwrap();
    let rng = RngStream::derive(4, &[]);
    let (pure, _) = pure_noise_sample(&x, &f, &s, &rng, 1, NoiseMode::StochasticStandard).unwrap();
    let mut r = rng.child(&[0]);
    let short = shortcut_path(
        &x,
        &zero,
        s.steps(),
        &f,
        &s,
        &mut r,
        NoiseMode::StochasticStandard,
    )
    .unwrap();
    // With a zero prior both start from sqrt(1 - gamma_T)·eps versus eps.
    let gap = mae(&pure, &short).unwrap();
    assert!(gap <= 1e-2, "{gap}");
}

#[test]
fn single_pure_noise_paths_diverge_across_seeds() {
    let s = NoiseSchedule::default_linear();
    let x = phantom(1, 8);
    let f = ZeroPredictor;
    let a = pure_noise_sample(
        &x,
        &f,
        &s,
        &RngStream::derive(1, &[]),
        1,
        NoiseMode::StochasticStandard,
    )
    .unwrap();
    let b = pure_noise_sample(
        &x,
        &f,
        &s,
        &RngStream::derive(2, &[]),
        1,
        NoiseMode::StochasticStandard,
    )
    .unwrap();
    assert!(mae(&a.0, &b.0).unwrap() > 0.0);
    let again = pure_noise_sample(
        &x,
        &f,
        &s,
        &RngStream::derive(1, &[]),
        1,
        NoiseMode::StochasticStandard,
    )
    .unwrap();
    assert_eq!(a, again);
}

#[test]
fn identity_task_is_a_fixed_point_of_the_cascade() {
    let s = NoiseSchedule::default_linear();
    let x = phantom(3, 16);
    let cfg = SamplerConfig {
        t_s: 100,
        n_paths: 2,
        n_cascades: 3,
        noise_mode: NoiseMode::Deterministic,
        ..SamplerConfig::default()
    };
    let r = cascade_sample(
        &x,
        &PriorGenerator::Identity,
        &OraclePredictor::new(x.clone()),
        &s,
        &cfg,
        &RngStream::derive(0, &[]),
    )
    .unwrap();
    assert!(mae(&r.y_final, &x).unwrap() < 1e-9);
    for p in &r.per_cascade_priors {
        assert!(mae(p, &x).unwrap() < 1e-9);
    }
    assert!(r.uncertainty.max() == 0.0);
}

#[test]
fn pure_noise_mode_uses_one_cascade() {
    let s = NoiseSchedule::linear(20, 1e-3, 0.3).unwrap();
    let x = phantom(3, 8);
    let cfg = SamplerConfig {
        t_s: 5,
        n_paths: 3,
        n_cascades: 4,
        baseline_mode: BaselineMode::PureNoise,
        ..SamplerConfig::default()
    };
    let r = cascade_sample(
        &x,
        &PriorGenerator::None,
        &ZeroPredictor,
        &s,
        &cfg,
        &RngStream::derive(0, &[]),
    )
    .unwrap();
    assert_eq!(r.per_cascade_averages.len(), 1);
    assert_eq!(r.per_path_outputs.len(), 3);
}

fn brute_std(paths: &[Grid2D], i: usize) -> f64 {
    let n = paths.len() as f64;
    let m = paths.iter().map(|p| p.data()[i]).sum::<f64>() / n;
    (paths.iter().map(|p| (p.data()[i] - m).powi(2)).sum::<f64>() / n).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn uncertainty_matches_two_pass_std(n in 1usize..6, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let paths: Vec<Grid2D> = (0..n as u64)
            .map(|k| sample_gaussian_grid(&mut RngStream::derive(seed, &[k]), h, w))
            .collect();
        let u = uncertainty_map(&paths).unwrap();
        for i in 0..u.len() {
            prop_assert!(u.data()[i] >= 0.0);
            prop_assert!((u.data()[i] - brute_std(&paths, i)).abs() < 1e-12);
        }
    }

    #[test]
    fn cascade_output_is_the_path_mean(n_paths in 1usize..4, n_cascades in 1usize..3, seed in any::<u64>()) {
        let s = NoiseSchedule::linear(30, 1e-3, 0.2).unwrap();
        let x = sample_gaussian_grid(&mut RngStream::derive(seed, &[]), 4, 4);
        let cfg = SamplerConfig { t_s: 10, n_paths, n_cascades, ..SamplerConfig::default() };
        let r = cascade_sample(&x, &PriorGenerator::Identity, &OraclePredictor::new(x.scale(0.5).unwrap()), &s, &cfg, &RngStream::derive(seed, &[1])).unwrap();
        prop_assert_eq!(r.per_path_outputs.len(), n_paths);
        prop_assert_eq!(r.per_cascade_priors.len(), n_cascades);
        let mean = cmdm::grid::mean_of(&r.per_path_outputs).unwrap();
        for (a, b) in mean.data().iter().zip(r.y_final.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_seed_is_deterministic(seed in any::<u64>()) {
        let s = NoiseSchedule::linear(30, 1e-3, 0.2).unwrap();
        let x = sample_gaussian_grid(&mut RngStream::derive(seed, &[]), 4, 4);
        let f = OraclePredictor::new(x.clone());
        let run = || multi_path(&x, &x, 20, 3, &f, &s, &RngStream::derive(seed, &[2]), NoiseMode::StochasticLiteral).unwrap();
        prop_assert_eq!(run(), run());
    }
}
