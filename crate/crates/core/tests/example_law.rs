//! The explicit example law at desk scale against its closed-form oracle.

use semivar::action::{
    action, criticality_test, el_residual, gateaux_analytic, gateaux_fd, TolerancePolicy,
};
use semivar::euler_lagrange::{decompose, el_verdict};
use semivar::fbs::{
    example_model, example_oracle, fbs_verify, target_cdf, Marginal, EXAMPLE_ACTION, TARGET_MEAN,
    TARGET_VAR,
};
use semivar::semimartingale::{simulate, simulate_single_path};
use semivar::stats::{ks_test, mean_var};
use semivar::variations::{
    eval_variation, project_average, random_variation_bank, Profile, VariationProcess,
};
use semivar::{make_grid, make_qem, PotentialSpec};

const N: usize = 512;
const M: usize = 50_000;

#[test]
fn desk_scale_pipeline() {
    let grid = make_grid(N).unwrap();
    let free = make_qem(PotentialSpec::Zero);
    let e = simulate(&example_model(), &grid, M, 7).unwrap();

    let x1 = e.terminal_marginal(0);
    let (mean, var) = mean_var(&x1);
    assert!((mean - TARGET_MEAN).abs() < 0.03, "mean {mean}");
    assert!((var - TARGET_VAR).abs() < 0.06, "var {var}");
    assert!(ks_test(&x1, target_cdf).unwrap().p_value > 0.01);

    let s = action(&e, &free).unwrap();
    assert!((s.value - EXAMPLE_ACTION).abs() < 0.02, "action {s:?}");

    let r = el_residual(&e, &free).unwrap();
    let d = decompose(&r).unwrap();
    let sup = (0..N)
        .map(|i| (d.a[i] - grid.t(i).exp()).abs())
        .fold(0.0, f64::max);
    assert!(sup < 0.05, "sup |A - e^t| = {sup}");
    assert!(el_verdict(&d, Some(&e), 0.01).unwrap().pass);
    drop(d);

    let cos = VariationProcess::deterministic("cos", Profile::Cosine { freq: 1.0 }, 10.0);
    let vs = eval_variation(&cos, &e).unwrap();
    let ds = gateaux_analytic(&r, &vs).unwrap();
    let expected = -(std::f64::consts::E + 1.0) / (1.0 + std::f64::consts::PI.powi(2));
    assert!((ds.value - expected).abs() < 0.01, "{ds:?} vs {expected}");
    let projected = gateaux_analytic(&r, &project_average(&vs)).unwrap();
    assert!(projected.value.abs() <= 3.0 * projected.se, "{projected:?}");
    drop(vs);

    let bank = random_variation_bank(11, 20, 10.0).unwrap();
    let vs = project_average(&eval_variation(&bank[1], &e).unwrap());
    let an = gateaux_analytic(&r, &vs).unwrap().value;
    for eps in [1e-3, 1e-2] {
        let fd = gateaux_fd(&e, &free, &vs, eps).unwrap().value;
        assert!(
            (fd - an).abs() < 1e-3_f64.max(0.01 * an.abs()),
            "{fd} vs {an}"
        );
    }
    drop(vs);
    drop(r);

    let report = criticality_test(&e, &free, &bank, TolerancePolicy::default(), None).unwrap();
    assert!(report.critical, "{:?}", report.rows);

    let fbs = fbs_verify(
        &e,
        &PotentialSpec::Zero,
        Marginal::Dirac { point: 0.0 },
        Marginal::example_terminal(),
        0.01,
        0.05,
    )
    .unwrap();
    assert!(fbs.verdict, "{fbs:?}");
    assert!((fbs.qv_realized - 1.0).abs() < 0.05);
}

/// Brute-force simulation on a fine grid agrees with the closed form on the
/// same noise, path by path.
#[test]
fn fine_grid_cross_check() {
    let n = 8192;
    let m = 10_000;
    let grid = make_grid(n).unwrap();
    let mut total = 0.0;
    for p in 0..m {
        let sp = simulate_single_path(&example_model(), &grid, 3, p).unwrap();
        let noise = semivar::stats::NoiseBlock {
            seed: 3,
            m_paths: 1,
            n_steps: n,
            dim: 1,
            dt: grid.dt(),
            increments: sp.increments,
        };
        let o = example_oracle(&noise).unwrap();
        total +=
            sp.x.iter()
                .zip(&o.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
    }
    let err = total / m as f64;
    assert!(err < 0.02, "mean sup error {err}");
}
