use tpg_core::bench::{gen_synthetic, param_rmse, SyntheticSpec};
use tpg_core::error::ErrorKind;
use tpg_core::linalg::singular_values;
use tpg_core::projection::RankSpec;
use tpg_core::sketch::{SketchKind, SketchSpec};
use tpg_core::solver::{ols_fit, thosvd_fit, tpg_fit, SolverConfig, StepSize, StopReason};
use tpg_core::tensor::unfold;

fn spec(shape: [usize; 3], t: usize, sigma: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        model_shape: shape.to_vec(),
        tucker_rank: RankSpec::Shared(2),
        sample_count: t,
        noise_sigma: sigma,
        runs: 1,
        seed,
    }
}

#[test]
fn auto_step_loss_never_increases() {
    for seed in 0..5 {
        let data = gen_synthetic(&spec([10, 8, 4], 200, 0.1, seed)).unwrap();
        let (_, report) = tpg_fit(&data.model().unwrap(), &SolverConfig::with_rank(2)).unwrap();
        for pair in report.loss_trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "seed {seed}: {pair:?}");
        }
    }
}

#[test]
fn noiseless_loss_decreases_geometrically() {
    let data = gen_synthetic(&spec([10, 8, 4], 300, 0.0, 3)).unwrap();
    let cfg = SolverConfig {
        grad_tol: 0.0,
        max_iters: 40,
        ..SolverConfig::with_rank(2)
    };
    let (w, report) = tpg_fit(&data.model().unwrap(), &cfg).unwrap();
    let trace = &report.loss_trace;
    let floor = 1e-20 * trace[0];
    let last = trace
        .iter()
        .position(|&l| l <= floor)
        .unwrap_or(trace.len() - 1);
    assert!(last >= 3);
    let rate = (trace[last] / trace[0]).powf(1.0 / last as f64);
    assert!(rate < 0.5, "average contraction {rate}");
    assert!(param_rmse(&w, &data.w_true).unwrap() <= 1e-6);
}

#[test]
fn estimate_has_requested_rank() {
    let data = gen_synthetic(&spec([9, 7, 5], 150, 0.2, 4)).unwrap();
    let cfg = SolverConfig::with_rank(vec![3, 2, 2]);
    let (w, _) = tpg_fit(&data.model().unwrap(), &cfg).unwrap();
    for (n, r) in [3, 2, 2].into_iter().enumerate() {
        let s = singular_values(&unfold(&w, n).unwrap());
        assert!(s[r] <= 1e-9 * s[0], "mode {n}: {s:?}");
    }
}

#[test]
fn error_scales_linearly_with_noise() {
    let ratios: Vec<f64> = [0.01, 0.02, 0.04, 0.08]
        .into_iter()
        .map(|sigma| {
            let data = gen_synthetic(&spec([10, 8, 4], 400, sigma, 5)).unwrap();
            let (w, _) = tpg_fit(&data.model().unwrap(), &SolverConfig::with_rank(2)).unwrap();
            param_rmse(&w, &data.w_true).unwrap() / sigma
        })
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| {
        (lo.min(r), hi.max(r))
    });
    assert!(hi / lo <= 1.5, "{ratios:?}");
}

#[test]
fn sketched_fit_needs_few_more_iterations() {
    let data = gen_synthetic(&spec([10, 8, 4], 3000, 0.05, 6)).unwrap();
    let model = data.model().unwrap();
    let cfg = SolverConfig::with_rank(2);
    let (_, full) = tpg_fit(&model, &cfg).unwrap();
    let sketched_cfg = SolverConfig {
        sketch: Some(SketchSpec {
            k: 500,
            n: 0,
            seed: 1,
            kind: SketchKind::Count,
        }),
        ..cfg
    };
    let (w, sketched) = tpg_fit(&model, &sketched_cfg).unwrap();
    assert!(sketched.sketched);
    assert!(
        sketched.iterations as f64 <= 2.5 * full.iterations as f64,
        "{} vs {}",
        sketched.iterations,
        full.iterations
    );
    assert!(param_rmse(&w, &data.w_true).unwrap() <= 0.05);
}

#[test]
fn beats_baselines_when_samples_are_scarce() {
    let data = gen_synthetic(&spec([12, 10, 4], 30, 0.1, 8)).unwrap();
    let model = data.model().unwrap();
    let (tpg, _) = tpg_fit(&model, &SolverConfig::with_rank(2)).unwrap();
    let ols = ols_fit(&model).unwrap();
    let thosvd = thosvd_fit(&model, &RankSpec::Shared(2)).unwrap();
    let rmse = |w| param_rmse(w, &data.w_true).unwrap();
    assert!(
        rmse(&tpg) < rmse(&thosvd),
        "{} vs {}",
        rmse(&tpg),
        rmse(&thosvd)
    );
    assert!(rmse(&thosvd) < rmse(&ols));
}

#[test]
fn loss_tolerance_stops_early() {
    let data = gen_synthetic(&spec([8, 6, 3], 200, 0.0, 9)).unwrap();
    let model = data.model().unwrap();
    let initial = model
        .loss(&tpg_core::DenseTensor::zeros(&[8, 6, 3]).unwrap())
        .unwrap();
    let cfg = SolverConfig {
        loss_tol: 1e-3 * initial,
        grad_tol: 0.0,
        ..SolverConfig::with_rank(2)
    };
    let (_, report) = tpg_fit(&model, &cfg).unwrap();
    assert_eq!(report.stop_reason, StopReason::LossTol);
    assert!(report.final_loss() <= 1e-3 * initial);
}

#[test]
fn fixed_step_runs_without_halving() {
    let data = gen_synthetic(&spec([8, 6, 3], 200, 0.05, 10)).unwrap();
    let cfg = SolverConfig {
        step_size: StepSize::Fixed(1e-3),
        max_iters: 30,
        ..SolverConfig::with_rank(2)
    };
    let (_, report) = tpg_fit(&data.model().unwrap(), &cfg).unwrap();
    assert_eq!(report.halvings, 0);
    assert_eq!(report.step_size, 1e-3);
}

#[test]
fn runaway_fixed_step_is_numerical_error() {
    let data = gen_synthetic(&spec([8, 6, 3], 200, 0.05, 11)).unwrap();
    let cfg = SolverConfig {
        step_size: StepSize::Fixed(1e4),
        ..SolverConfig::with_rank(2)
    };
    let err = tpg_fit(&data.model().unwrap(), &cfg).unwrap_err();
    assert_eq!(err.kind(), ErrorKind::Numerical);
}
