use std::f64::consts::PI;

use ntes_core::form_factor::field_form_factor;
use ntes_core::oracle::{field_matrix_element, norm_sq};
use ntes_core::tba::{solve_ntes, solve_ntes_with, solve_tes, solve_tes_with, TbaOptions};
use ntes_core::{solve_bethe, BetheState, ModelParams, QnConfig};
use proptest::prelude::*;

/// `n` distinct quantum numbers with the right parity, spread over `±span`.
fn qns(max_n: usize, span: i64) -> impl Strategy<Value = QnConfig> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::btree_set(-span..=span, n).prop_map(move |set| {
            let odd = n % 2 == 0;
            QnConfig::from_doubled(set.into_iter().map(|i| 2 * i + i64::from(odd)).collect())
                .unwrap()
        })
    })
}

fn mirrored(q: &QnConfig) -> QnConfig {
    QnConfig::from_doubled(q.doubled().iter().rev().map(|d| -d).collect()).unwrap()
}

/// `|⟨μ|Ψ(0)|λ⟩|²` over both norms by direct integration.
fn oracle_weight(bra: &BetheState, ket: &BetheState) -> f64 {
    let bra_norm = if bra.n() == 0 {
        1.0
    } else {
        norm_sq(bra).unwrap()
    };
    field_matrix_element(bra, ket).unwrap().norm_sqr() / (bra_norm * norm_sq(ket).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bethe_solutions_are_tight(q in qns(10, 15), c in 0.05f64..200.0, l in 1.0f64..30.0) {
        let p = ModelParams::new(c, l).unwrap();
        let s = solve_bethe(&q, p).unwrap();
        prop_assert!(s.residual <= 1e-10, "residual {}", s.residual);
        prop_assert!(s.rapidities.windows(2).all(|w| w[0] < w[1]));
        let exact = PI * q.doubled_sum() as f64 / l;
        prop_assert!((s.momentum - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{} vs {exact}", s.momentum);
        prop_assert!(s.energy >= 0.0);
    }

    #[test]
    fn reflection_negates_rapidities(q in qns(8, 10), c in 0.1f64..50.0, l in 1.0f64..20.0) {
        let p = ModelParams::new(c, l).unwrap();
        let a = solve_bethe(&q, p).unwrap();
        let b = solve_bethe(&mirrored(&q), p).unwrap();
        for (x, y) in a.rapidities.iter().zip(b.rapidities.iter().rev()) {
            prop_assert!((x + y).abs() < 1e-11 * x.abs().max(1.0));
        }
        prop_assert!((a.energy - b.energy).abs() < 1e-10 * a.energy.max(1.0));
        prop_assert!((a.log_norm_sq - b.log_norm_sq).abs() < 1e-10 * a.log_norm_sq.abs().max(1.0));
    }

    #[test]
    fn form_factor_is_parity_invariant(ket in qns(6, 8), pick in any::<prop::sample::Index>(), c in 0.1f64..100.0, l in 1.0f64..10.0) {
        let p = ModelParams::new(c, l).unwrap();
        let n = ket.len();
        // remove one slot and shift the rest to the other parity
        let skip = pick.index(n);
        let bra: Vec<i64> = ket.doubled().iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, d)| d + 1).collect();
        let bra = QnConfig::from_doubled(bra).unwrap();
        let w = field_form_factor(&solve_bethe(&bra, p).unwrap(), &solve_bethe(&ket, p).unwrap()).unwrap();
        let m = field_form_factor(&solve_bethe(&mirrored(&bra), p).unwrap(), &solve_bethe(&mirrored(&ket), p).unwrap()).unwrap();
        prop_assert!((w.log_weight - m.log_weight).abs() < 1e-9 * w.log_weight.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn form_factor_matches_direct_integration(
        ket in qns(3, 3),
        shift in -2i64..=2,
        c in prop::sample::select(vec![0.3, 1.0, 4.0, 1e3]),
        l in 1.5f64..4.0,
    ) {
        let p = ModelParams::new(c, l).unwrap();
        let n = ket.len();
        let bra: Vec<i64> = ket.doubled()[..n - 1].iter().map(|d| d + 1 + 2 * shift).collect();
        let bra = solve_bethe(&QnConfig::from_doubled(bra).unwrap(), p).unwrap();
        let ket = solve_bethe(&ket, p).unwrap();
        let want = oracle_weight(&bra, &ket);
        let got = field_form_factor(&bra, &ket).unwrap().log_weight.exp();
        prop_assume!(want > 1e-12);
        prop_assert!((got / want - 1.0).abs() < 1e-6, "formula {got} oracle {want}");
    }
}

#[test]
fn off_shell_rapidities_break_the_agreement() {
    let p = ModelParams::new(2.0, 3.0).unwrap();
    let bra = solve_bethe(&QnConfig::from_values(&[-1.5, 0.5]).unwrap(), p).unwrap();
    let mut ket = solve_bethe(&QnConfig::from_values(&[-1.0, 0.0, 2.0]).unwrap(), p).unwrap();
    let on_shell = field_form_factor(&bra, &ket).unwrap().log_weight.exp();
    assert!((on_shell / oracle_weight(&bra, &ket) - 1.0).abs() < 1e-6);

    ket.rapidities[1] += 1e-3;
    let formula = field_form_factor(&bra, &ket).unwrap().log_weight.exp();
    let oracle = oracle_weight(&bra, &ket);
    assert!(
        (formula / oracle - 1.0).abs() > 1e-6,
        "perturbation went unnoticed: {formula} vs {oracle}"
    );
}

#[test]
fn tba_densities_integrate_to_the_target() {
    for (c, t) in [
        (0.1, 0.13),
        (0.5, 0.2),
        (1.0, 1.15),
        (2.0, 4.0),
        (5.0, 6.36),
        (20.0, 30.0),
    ] {
        let s = solve_tes(c, t, 1.0).unwrap();
        assert!(
            (s.density - 1.0).abs() < 1e-6,
            "TES c={c} T={t}: n={}",
            s.density
        );
        assert!((2.0 * s.cumulative_density(1e9) - 1.0).abs() < 1e-6);
    }
    for c in [0.1, 0.5, 1.0, 5.0, 20.0] {
        let s = solve_ntes(c, 1.0).unwrap();
        assert!(
            (s.density - 1.0).abs() < 1e-6,
            "NTES c={c}: n={}",
            s.density
        );
        assert!((2.0 * s.cumulative_density(1e9) - 1.0).abs() < 1e-6);
    }
}

#[test]
fn tba_functions_are_even() {
    for s in [
        solve_tes(1.0, 1.15, 1.0).unwrap(),
        solve_ntes(1.0, 1.0).unwrap(),
    ] {
        for x in [0.01, 0.3, 1.7, 4.2] {
            assert!((s.rho_total_at(x) - s.rho_total_at(-x)).abs() < 1e-12);
            assert!(
                (s.epsilon_at(x) - s.epsilon_at(-x)).abs() < 1e-12 * s.epsilon_at(x).abs().max(1.0)
            );
        }
        assert!(s.counting(0.0).abs() < 1e-12);
        assert!((s.counting(2.5) + s.counting(-2.5)).abs() < 1e-12);
    }
}

#[test]
fn tba_grid_is_converged() {
    let fine = TbaOptions {
        refine: Some(0.5),
        ..Default::default()
    };
    for c in [1.0, 5.0] {
        let a = solve_tes(c, 1.0, 1.0).unwrap();
        let b = solve_tes_with(c, 1.0, 1.0, &fine).unwrap();
        assert!(
            (a.energy_density / b.energy_density - 1.0).abs() < 1e-6,
            "TES c={c}"
        );
        assert!((a.multiplier - b.multiplier).abs() < 1e-6 * a.multiplier.abs().max(1.0));
        let a = solve_ntes(c, 1.0).unwrap();
        let b = solve_ntes_with(c, 1.0, &fine).unwrap();
        assert!(
            (a.energy_density / b.energy_density - 1.0).abs() < 1e-6,
            "NTES c={c}"
        );
        // the quench conserves e = c n² exactly; only the cutoff limits it
        let wide = solve_ntes_with(
            c,
            1.0,
            &TbaOptions {
                cutoff: Some(2000.0),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (wide.energy_density / c - 1.0).abs() < 1e-6,
            "NTES c={c}: e={}",
            wide.energy_density
        );
    }
}
