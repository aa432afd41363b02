//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Takes several minutes in release mode; run
//! with `cargo test --release -p ntes-cli --test acceptance`.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use ntes_core::oracle::{regression_set, shell_brute_force};
use ntes_core::sampler::representative_qns;
use ntes_core::scan::{scan, shell_classes, ScanReport, ScanThresholds};
use ntes_core::spectra::{
    assemble_grid, line_shape, negative_weight_fraction, SpectrumGrid, Units, DEFAULT_BIN_OVER_EF,
    DEFAULT_SIGMA_OVER_EF,
};
use ntes_core::tba::{
    match_temperature, solve_ntes, solve_tes, tail_exponent, tail_exponent_window, TailClass,
    TbaSolution,
};
use ntes_core::{solve_bethe, ModelParams, QnConfig, Result};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Peaks lower than this fraction of the global maximum in topographic
/// prominence are treated as noise.
const PROMINENCE: f64 = 0.05;

struct Verdict {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Verdict {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "no"
    }
}

/// Representative eigenstate of `sol` at `c`, N = L = 12, scanned to 0.99.
fn representative_scan(sol: &TbaSolution, c: f64) -> Result<ScanReport> {
    let q = representative_qns(sol, 12, 12.0)?;
    let base = solve_bethe(&q, ModelParams::new(c, 12.0)?)?;
    let started = Instant::now();
    let r = scan(
        &base,
        &ScanThresholds {
            saturation_target: 0.99,
            ..Default::default()
        },
    )?;
    eprintln!(
        "  scanned {q}: saturation {:.6}, {} lines in {:.0?}",
        r.saturation,
        r.lines.len(),
        started.elapsed()
    );
    Ok(r)
}

fn grid(r: &ScanReport) -> Result<SpectrumGrid> {
    let u = Units::new(r.n, r.l);
    assemble_grid(
        &r.lines,
        u,
        DEFAULT_BIN_OVER_EF * u.e_f,
        DEFAULT_SIGMA_OVER_EF * u.e_f,
    )
}

fn oracle_equivalence() -> Result<Verdict> {
    let set = regression_set(1e-6)?;
    Ok(Verdict::new(
        set.passed(),
        format!(
            "{} norm and field cases, max relative error {:.2e} (tolerance 1e-6)",
            set.cases.len(),
            set.max_rel_err()
        ),
    ))
}

fn saturation(ntes: &ScanReport) -> Verdict {
    Verdict::new(
        ntes.saturation >= 0.99,
        format!(
            "NTES representative state saturation {:.6}",
            ntes.saturation
        ),
    )
}

fn matched_temperatures() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (c, reference) in [(0.1, 0.13), (1.0, 1.15), (5.0, 6.36)] {
        let t = match_temperature(c, 1.0, solve_ntes(c, 1.0)?.energy_density)?;
        let dev = t / reference - 1.0;
        pass &= dev.abs() <= 0.10;
        parts.push(format!("c={c}: T={t:.4} ({:+.1}%)", 100.0 * dev));
    }
    Ok(Verdict::new(pass, parts.join(", ")))
}

fn quench_energy() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in [0.1, 1.0, 5.0, 20.0] {
        let e = solve_ntes(c, 1.0)?.energy_density;
        let dev = e / c - 1.0;
        pass &= dev.abs() <= 0.01;
        parts.push(format!("c={c}: e/(c n²)-1={dev:.1e}"));
    }
    Ok(Verdict::new(pass, parts.join(", ")))
}

fn tail_exponents(t_matched: f64) -> Result<Verdict> {
    let ntes = tail_exponent(&solve_ntes(5.0, 1.0)?)?;
    let tg = tail_exponent_window(&solve_ntes(1e3, 1.0)?, 10.0, 100.0)?;
    let tes = tail_exponent(&solve_tes(5.0, t_matched, 1.0)?)?;
    let a = (ntes.exponent - 4.0).abs() <= 0.2;
    let b = (tg.exponent - 2.0).abs() <= 0.2;
    let c = tes.class == TailClass::Exponential;
    Ok(Verdict::new(
        a && b && c,
        format!(
            "NTES c=5 p={:.3}, Tonks-Girardeau proxy c=1e3 p={:.3}, TES c=5 classified {:?}",
            ntes.exponent, tg.exponent, tes.class
        ),
    ))
}

fn discrimination(ntes: &SpectrumGrid, tes: &SpectrumGrid) -> Result<Verdict> {
    let u = ntes.units;
    let (fn_, ft) = (
        negative_weight_fraction(ntes),
        negative_weight_fraction(tes),
    );
    let a = fn_ > ft;

    let k_half = u.k_int_of(0.5);
    let sn = line_shape(ntes, k_half, true)?;
    let st = line_shape(tes, k_half, true)?;
    let (pn, pt) = (u.to_ef(sn.peak_omega()), u.to_ef(st.peak_omega()));
    let b = pn < 0.0 && pt > 0.0;

    let mut split = Vec::new();
    for &k in ntes.k_values.iter().filter(|&&k| k >= 0) {
        let Ok(t) = line_shape(tes, k, true) else {
            continue;
        };
        let n = line_shape(ntes, k, true)?;
        if n.local_maxima(PROMINENCE).len() == 2 && t.local_maxima(PROMINENCE).len() == 1 {
            split.push(k);
        }
    }
    let c = !split.is_empty();

    let mut v = Verdict::new(
        a && b && c,
        format!("(a) {}, (b) {}, (c) {}", mark(a), mark(b), mark(c)),
    );
    v.details.push(format!(
        "(a) negative-frequency weight: NTES {fn_:.4}, TES {ft:.4}"
    ));
    v.details.push(format!(
        "(b) highest peak at k_int={k_half}: NTES ω={pn:+.2} ε_F, TES ω={pt:+.2} ε_F (want NTES < 0 < TES)"
    ));
    for (name, s) in [("NTES", &sn), ("TES", &st)] {
        let peaks: Vec<String> = s
            .local_maxima(PROMINENCE)
            .iter()
            .map(|&i| format!("{:+.2}:{:.3}", u.to_ef(s.omega[i]), s.values[i] * u.e_f))
            .collect();
        v.details.push(format!(
            "    {name} maxima (ω/ε_F:height) {}",
            peaks.join(" ")
        ));
    }
    v.details.push(format!(
        "(c) k_int with two NTES maxima against one TES maximum: {split:?}"
    ));
    Ok(v)
}

fn properties(grids: &[(&str, &ScanReport, &SpectrumGrid)]) -> Result<Verdict> {
    let mut checks: Vec<(String, bool)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    let (mut worst_res, mut worst_mom) = (0.0f64, 0.0f64);
    for _ in 0..300 {
        let n = rng.random_range(1..=12);
        let parity = i64::from(n % 2 == 0);
        let slots = sample(&mut rng, 41, n);
        let mut doubled: Vec<i64> = slots.iter().map(|s| 2 * (s as i64 - 20) + parity).collect();
        doubled.sort_unstable();
        let q = QnConfig::from_doubled(doubled)?;
        let p = ModelParams::new(
            10f64.powf(rng.random_range(-1.5..2.5)),
            rng.random_range(1.0..30.0),
        )?;
        let s = solve_bethe(&q, p)?;
        let exact = PI * q.doubled_sum() as f64 / p.l;
        worst_res = worst_res.max(s.residual);
        worst_mom = worst_mom.max((s.momentum - exact).abs() / exact.abs().max(1.0));
    }
    checks.push((
        format!("Bethe residual max {worst_res:.1e} over 300 random states"),
        worst_res <= 1e-10,
    ));
    checks.push((
        format!("momentum identity max deviation {worst_mom:.1e}"),
        worst_mom <= 1e-12,
    ));

    let mut worst_n = 0.0f64;
    for (c, t) in [(0.1, 0.13), (1.0, 1.15), (5.0, 6.36), (20.0, 2.0)] {
        worst_n = worst_n.max((solve_tes(c, t, 1.0)?.density - 1.0).abs());
    }
    for c in [0.1, 1.0, 5.0, 20.0] {
        worst_n = worst_n.max((solve_ntes(c, 1.0)?.density - 1.0).abs());
    }
    checks.push((
        format!("TBA density constraint max deviation {worst_n:.1e}"),
        worst_n <= 1e-6,
    ));

    let (mut worst_w, mut worst_shape) = (0.0f64, 0.0f64);
    for (_, r, g) in grids {
        worst_w = worst_w.max((g.total_weight() / r.total_weight() - 1.0).abs());
        for &k in &g.k_values {
            worst_shape = worst_shape.max((line_shape(g, k, true)?.integral() - 1.0).abs());
        }
    }
    checks.push((
        format!("broadening weight deviation {worst_w:.1e}"),
        worst_w <= 1e-9,
    ));
    checks.push((
        format!("rescaled line-shape mass deviation {worst_shape:.1e}"),
        worst_shape <= 1e-9,
    ));

    let sol = solve_ntes(5.0, 1.0)?;
    let q = representative_qns(&sol, 8, 8.0)?;
    let base = solve_bethe(&q, ModelParams::new(5.0, 8.0)?)?;
    let th = ScanThresholds {
        saturation_target: 0.99,
        ..Default::default()
    };
    let runs: Vec<ScanReport> = [1, 2, 4]
        .into_iter()
        .map(|k| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .expect("thread pool");
            pool.install(|| scan(&base, &th))
        })
        .collect::<Result<_>>()?;
    let spread = runs
        .iter()
        .map(|r| (r.saturation - runs[0].saturation).abs())
        .fold(0.0, f64::max);
    let same_lines = runs.iter().all(|r| r.lines == runs[0].lines);
    checks.push((
        format!("scan of N=L=8 with 1/2/4 workers: saturation spread {spread:.1e}, identical lines {same_lines}"),
        spread < 1e-12 && same_lines,
    ));

    let one = solve_bethe(
        &representative_qns(&solve_ntes(1.0, 1.0)?, 1, 1.0)?,
        ModelParams::new(1.0, 1.0)?,
    )?;
    let r = scan(&one, &ScanThresholds::default())?;
    checks.push((
        format!("N=1 saturation {:?}", r.saturation),
        r.saturation == 1.0,
    ));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let failed = checks.iter().filter(|(_, ok)| !ok).count();
    let mut v = Verdict::new(
        pass,
        format!(
            "{} of {} property checks hold",
            checks.len() - failed,
            checks.len()
        ),
    );
    v.details = checks
        .into_iter()
        .map(|(d, ok)| format!("{} {d}", mark(ok)))
        .collect();
    Ok(v)
}

fn shells() -> Result<Verdict> {
    let refs: [&[f64]; 5] = [
        &[-1.0, 0.0, 1.0],
        &[-3.0, 0.0, 1.0],
        &[-2.0, 2.0, 5.0],
        &[-4.0, -3.0, 6.0],
        &[0.0, 1.0, 2.0],
    ];
    let mut pass = true;
    let mut sizes = Vec::new();
    for values in refs {
        let r = QnConfig::from_values(values)?;
        let mut brute = shell_brute_force(&r, 3, 2);
        brute.sort();
        let classes = shell_classes(&r, 3, 2);
        pass &= brute == classes;
        sizes.push(format!("{r}: {}/{}", classes.len(), brute.len()));
    }
    Ok(Verdict::new(
        pass,
        format!(
            "class union vs brute force (cost 3, 2 moves): {}",
            sizes.join(", ")
        ),
    ))
}

fn report(id: u32, name: &str, outcome: Result<Verdict>, failures: &mut u32) {
    report_str(id, name, outcome.map_err(|e| e.to_string()), failures)
}

fn report_str(
    id: u32,
    name: &str,
    outcome: std::result::Result<Verdict, String>,
    failures: &mut u32,
) {
    match outcome {
        Ok(v) => {
            if !v.pass {
                *failures += 1;
            }
            println!(
                "{} {id} {name}: {}",
                if v.pass { "PASS" } else { "FAIL" },
                v.summary
            );
            for d in v.details {
                println!("      {d}");
            }
        }
        Err(e) => {
            *failures += 1;
            println!("FAIL {id} {name}: error {e}");
        }
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut failures = 0;
    report(1, "oracle equivalence", oracle_equivalence(), &mut failures);

    eprintln!("scanning the c=5, N=L=12 representative states");
    let states = (|| -> Result<_> {
        let ntes = solve_ntes(5.0, 1.0)?;
        let t = match_temperature(5.0, 1.0, ntes.energy_density)?;
        let tes = solve_tes(5.0, t, 1.0)?;
        let rn = representative_scan(&ntes, 5.0)?;
        let rt = representative_scan(&tes, 5.0)?;
        let (gn, gt) = (grid(&rn)?, grid(&rt)?);
        Ok((t, rn, rt, gn, gt))
    })()
    .map_err(|e| e.to_string());

    match &states {
        Ok((_, rn, ..)) => report(2, "sum-rule saturation", Ok(saturation(rn)), &mut failures),
        Err(e) => report_str(2, "sum-rule saturation", Err(e.clone()), &mut failures),
    }
    report(
        3,
        "matched temperatures",
        matched_temperatures(),
        &mut failures,
    );
    report(4, "quench energy", quench_energy(), &mut failures);
    let t_matched = states.as_ref().map(|s| s.0).unwrap_or(6.36);
    report(
        5,
        "tail exponents",
        tail_exponents(t_matched),
        &mut failures,
    );
    match &states {
        Ok((_, rn, rt, gn, gt)) => {
            report(
                6,
                "spectral discrimination",
                discrimination(gn, gt),
                &mut failures,
            );
            report(
                7,
                "property suites",
                properties(&[("NTES", rn, gn), ("TES", rt, gt)]),
                &mut failures,
            );
        }
        Err(e) => {
            report_str(6, "spectral discrimination", Err(e.clone()), &mut failures);
            report_str(7, "property suites", Err(e.clone()), &mut failures);
        }
    }
    report(8, "three-particle shells", shells(), &mut failures);

    println!(
        "{} of 8 criteria passed in {:.0?}",
        8 - failures,
        started.elapsed()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
