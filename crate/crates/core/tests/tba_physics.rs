use ntes_core::tba::{
    match_temperature, solve_ntes, solve_tes, tail_exponent, tail_exponent_window, TailClass,
};

#[test]
fn quench_energy_equals_initial_energy() {
    for c in [0.1, 1.0, 5.0] {
        let s = solve_ntes(c, 1.0).unwrap();
        println!(
            "c={c} h'={} e={} n={} M={}",
            s.multiplier,
            s.energy_density,
            s.density,
            s.grid.m()
        );
        assert!((s.density - 1.0).abs() < 1e-6);
        assert!((s.energy_density / c - 1.0).abs() < 0.01);
    }
}

#[test]
fn matched_temperatures() {
    for (c, t_ref) in [(0.1, 0.13), (1.0, 1.15), (5.0, 6.36)] {
        let e = solve_ntes(c, 1.0).unwrap().energy_density;
        let t = match_temperature(c, 1.0, e).unwrap();
        println!("c={c} T={t} ref={t_ref} dev={:.3}", t / t_ref - 1.0);
        assert!(
            (t / t_ref - 1.0).abs() < 0.10,
            "c={c}: T={t}, expected about {t_ref}"
        );
    }
}

#[test]
fn tails() {
    let s = solve_ntes(5.0, 1.0).unwrap();
    let f = tail_exponent(&s).unwrap();
    println!("NTES c=5 {f:?}");
    assert_eq!(f.class, TailClass::PowerLaw);
    assert!((f.exponent - 4.0).abs() < 0.2, "{f:?}");
    let tg = solve_ntes(1e3, 1.0).unwrap();
    let f = tail_exponent_window(&tg, 10.0, 100.0).unwrap();
    println!("TG {f:?} M={}", tg.grid.m());
    assert!((f.exponent - 2.0).abs() < 0.2, "{f:?}");
    let t = solve_tes(5.0, 6.36, 1.0).unwrap();
    let f = tail_exponent(&t).unwrap();
    println!("TES {f:?}");
    assert_eq!(f.class, TailClass::Exponential);
}
