//! Sweep-level regression envelopes on the regression (Z = X) generator.
//! Each full sweep takes a few minutes on one core.

use kivo::bench::{compare_naive, rate_sweep, BenchSpec, Stage1Kernels, TheoryTuning, Tuning};
use kivo::schedule::{RateSpec, XiForm};
use kivo::synthdata::{CircleDgpSpec, DgpSpec, NprSpec};
use kivo::MaternNu;

fn npr_spec(npr: NprSpec, n_list: Vec<usize>, seeds: u64, tuning: Tuning) -> BenchSpec {
    BenchSpec {
        dgp: DgpSpec::Npr(npr),
        n_list,
        seeds: (0..seeds).collect(),
        master_seed: 2024,
        tilde_ratio: 1.0,
        eval_points: 20_000,
        stage1: Stage1Kernels::default(),
        tuning,
    }
}

fn theory(sigma: f64) -> Tuning {
    Tuning::Theory(TheoryTuning {
        rate: RateSpec {
            s_x: 2.0,
            s_o: 2.0,
            d_x: 1,
            d_o: 1,
            d_z: 1,
            eta0: 0.0,
            eta1: 0.0,
            sigma,
        },
        zeta: 0.05,
        form: XiForm::Theorem,
        scale_x: 1.0,
        scale_o: 1.0,
        xi: None,
    })
}

#[test]
fn noiseless_regression_is_accurate_at_moderate_n() {
    let mut spec = npr_spec(
        NprSpec::default(),
        vec![512],
        20,
        Tuning::Fixed {
            gamma_x: 0.35,
            gamma_o: 0.35,
            lambda: Some(1e-5),
            xi: Some(1e-5),
        },
    );
    spec.stage1 = Stage1Kernels {
        nu: MaternNu::ThreeHalves,
        ls_z: 0.3,
        ls_o: 0.5,
    };
    let report = rate_sweep(&spec).unwrap();
    let median = report.summary[0].median_l2;
    assert!(median <= 0.05, "median L2 error {median}");
}

#[test]
fn theory_schedule_errors_shrink_with_n() {
    let report = rate_sweep(&npr_spec(NprSpec::default(), vec![128, 512, 2048], 20, theory(0.0))).unwrap();
    let med: Vec<f64> = report.summary.iter().map(|s| s.median_l2).collect();
    let down = med.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down as f64 >= 0.8 * 2.0, "medians {med:?}");
    let slope = report.slope.unwrap();
    assert!((-0.9..=-0.1).contains(&slope), "slope {slope}, medians {med:?}");
}

#[test]
fn pure_noise_fits_shrink_toward_zero() {
    let sigma = 0.5;
    let npr = NprSpec {
        amp: 0.0,
        sigma,
        ..NprSpec::default()
    };
    let report = rate_sweep(&npr_spec(npr, vec![128, 512, 2048], 5, theory(sigma))).unwrap();
    for s in &report.summary {
        let bound = 20.0 * sigma / (s.n as f64).sqrt();
        assert!(s.median_l2 <= bound, "n = {}: {} > {bound}", s.n, s.median_l2);
    }
}

#[test]
fn comparison_arms_share_the_sweep_datasets() {
    let spec = BenchSpec {
        dgp: DgpSpec::Circle(CircleDgpSpec::default()),
        n_list: vec![32, 64],
        seeds: (0..3).collect(),
        master_seed: 5,
        tilde_ratio: 1.0,
        eval_points: 900,
        stage1: Stage1Kernels::default(),
        tuning: theory(0.2),
    };
    let sweep = rate_sweep(&spec).unwrap();
    let paired = compare_naive(&spec).unwrap();
    assert_eq!(sweep.rows.len(), paired.rows.len());
    for (a, b) in sweep.rows.iter().zip(&paired.rows) {
        assert_eq!((a.n, a.seed), (b.n, b.seed));
        assert_eq!(a.hyper, b.kivo);
        assert_eq!(a.l2_error.to_bits(), b.kivo_l2.to_bits());
        assert_eq!(a.projected_error.to_bits(), b.kivo_projected.to_bits());
    }
    assert_eq!(paired, compare_naive(&spec).unwrap());
}
