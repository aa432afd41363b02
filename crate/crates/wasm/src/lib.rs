//! Browser bindings. Every export takes plain numbers or strings and returns
//! a JSON document, so the page needs no generated type glue.

use ntes_core::sampler::representative_qns;
use ntes_core::scan::{scan, ScanThresholds};
use ntes_core::spectra::{
    assemble_grid, line_shape, negative_weight_fraction, Units, DEFAULT_BIN_OVER_EF,
    DEFAULT_SIGMA_OVER_EF,
};
use ntes_core::tba::{
    match_temperature, solve_ntes, solve_tes, tail_exponent, TailClass, TbaSolution,
};
use ntes_core::{solve_bethe, ModelParams, QnConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest particle number the spectrum export accepts; beyond this a scan
/// blocks the page for too long.
pub const MAX_DEMO_PARTICLES: usize = 8;

type Result<T> = std::result::Result<T, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
pub struct BetheSummary {
    pub qns: Vec<f64>,
    pub rapidities: Vec<f64>,
    pub energy: f64,
    pub momentum: f64,
    pub residual: f64,
    pub log_norm_sq: f64,
}

/// Quantum numbers from a list like `-1.5, -0.5 0.5 1.5`.
pub fn parse_qns(text: &str) -> Result<QnConfig> {
    let values = text
        .split(|ch: char| ch == ',' || ch.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err("no quantum numbers given".into());
    }
    let mut q = values;
    q.sort_by(f64::total_cmp);
    QnConfig::from_values(&q).map_err(err)
}

pub fn bethe_summary(c: f64, l: f64, qns: &str) -> Result<BetheSummary> {
    let q = parse_qns(qns)?;
    let s = solve_bethe(&q, ModelParams::new(c, l).map_err(err)?).map_err(err)?;
    Ok(BetheSummary {
        qns: q.values(),
        rapidities: s.rapidities,
        energy: s.energy,
        momentum: s.momentum,
        residual: s.residual,
        log_norm_sq: s.log_norm_sq,
    })
}

#[derive(Serialize)]
pub struct TbaSummary {
    pub kind: String,
    pub c: f64,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub energy_density: f64,
    pub multiplier: f64,
    pub tail_exponent: f64,
    pub tail_class: TailClass,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub filling: Vec<f64>,
}

/// Thermal state at `t`, or at the temperature matching the quench energy
/// when `t` is not positive.
fn stationary(kind: &str, c: f64, t: f64) -> Result<(TbaSolution, Option<f64>)> {
    match kind {
        "NTES" => Ok((solve_ntes(c, 1.0).map_err(err)?, None)),
        "TES" => {
            let t = if t > 0.0 {
                t
            } else {
                match_temperature(c, 1.0, solve_ntes(c, 1.0).map_err(err)?.energy_density)
                    .map_err(err)?
            };
            Ok((solve_tes(c, t, 1.0).map_err(err)?, Some(t)))
        }
        other => Err(format!("unknown state `{other}`; use TES or NTES")),
    }
}

/// Stationary state at unit density, with `ρ(λ)` and the filling sampled on
/// `points` nodes of `[-λ_max, λ_max]`.
pub fn tba_summary(
    kind: &str,
    c: f64,
    t: f64,
    lambda_max: f64,
    points: usize,
) -> Result<TbaSummary> {
    if !(lambda_max > 0.0) || points < 2 {
        return Err("need a positive range and at least two points".into());
    }
    let (s, t) = stationary(kind, c, t)?;
    let fit = tail_exponent(&s).map_err(err)?;
    let lambda: Vec<f64> = (0..points)
        .map(|i| -lambda_max + 2.0 * lambda_max * i as f64 / (points - 1) as f64)
        .collect();
    Ok(TbaSummary {
        kind: kind.into(),
        c,
        t,
        energy_density: s.energy_density,
        multiplier: s.multiplier,
        tail_exponent: fit.exponent,
        tail_class: fit.class,
        rho: lambda.iter().map(|&x| s.rho_at(x)).collect(),
        filling: lambda.iter().map(|&x| s.filling_at(x)).collect(),
        lambda,
    })
}

#[derive(Serialize)]
pub struct SpectrumSummary {
    pub kind: String,
    pub base_qns: Vec<f64>,
    pub saturation: f64,
    pub lines: usize,
    pub negative_weight_fraction: f64,
    /// Columns in `k/k_F`, rows in `ω/ε_F`; `g1` is per unit `ω/ε_F`.
    pub k_over_kf: Vec<f64>,
    pub omega_over_ef: Vec<f64>,
    pub g1: Vec<Vec<f64>>,
    /// Per column, the positions of the rescaled line-shape maxima.
    pub maxima: Vec<Vec<f64>>,
}

/// Representative eigenstate of `kind` at `N = L = n`, scanned to `target`
/// and broadened with the default width. `t` as in the stationary solve.
pub fn spectrum_summary(
    kind: &str,
    c: f64,
    t: f64,
    n: usize,
    target: f64,
) -> Result<SpectrumSummary> {
    if n == 0 || n > MAX_DEMO_PARTICLES {
        return Err(format!("N must be between 1 and {MAX_DEMO_PARTICLES}"));
    }
    if !(0.0..1.0).contains(&target) {
        return Err("saturation target must lie in [0, 1)".into());
    }
    let (s, _) = stationary(kind, c, t)?;
    let l = n as f64;
    let q = representative_qns(&s, n, l).map_err(err)?;
    let base = solve_bethe(&q, ModelParams::new(c, l).map_err(err)?).map_err(err)?;
    let r = scan(
        &base,
        &ScanThresholds {
            saturation_target: target,
            ..Default::default()
        },
    )
    .map_err(err)?;
    let u = Units::new(n, l);
    let g = assemble_grid(
        &r.lines,
        u,
        DEFAULT_BIN_OVER_EF * u.e_f,
        DEFAULT_SIGMA_OVER_EF * u.e_f,
    )
    .map_err(err)?;
    let maxima = g
        .k_values
        .iter()
        .map(|&k| {
            let shape = line_shape(&g, k, true).map_err(err)?;
            Ok(shape
                .local_maxima(0.05)
                .iter()
                .map(|&i| u.to_ef(shape.omega[i]))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(SpectrumSummary {
        kind: kind.into(),
        base_qns: q.values(),
        saturation: r.saturation,
        lines: r.lines.len(),
        negative_weight_fraction: negative_weight_fraction(&g),
        k_over_kf: g.k_values.iter().map(|&k| u.k_over_kf(k)).collect(),
        omega_over_ef: g.omega_centers().iter().map(|&w| u.to_ef(w)).collect(),
        g1: g
            .values
            .iter()
            .map(|col| col.iter().map(|v| v * u.e_f).collect())
            .collect(),
        maxima,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = betheState)]
pub fn bethe_state(c: f64, l: f64, qns: &str) -> std::result::Result<String, JsError> {
    to_js(bethe_summary(c, l, qns))
}

#[wasm_bindgen(js_name = stationaryState)]
pub fn stationary_state(kind: &str, c: f64, t: f64) -> std::result::Result<String, JsError> {
    to_js(tba_summary(kind, c, t, 4.0 * std::f64::consts::PI, 241))
}

#[wasm_bindgen]
pub fn spectrum(
    kind: &str,
    c: f64,
    t: f64,
    n: usize,
    target: f64,
) -> std::result::Result<String, JsError> {
    to_js(spectrum_summary(kind, c, t, n, target))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qns_parse_in_any_order_and_reject_junk() {
        let q = parse_qns("0.5, -0.5").unwrap();
        assert_eq!(q.values(), vec![-0.5, 0.5]);
        assert!(parse_qns("").is_err());
        assert!(parse_qns("1 x").is_err());
        assert!(parse_qns("0.25").is_err());
    }

    #[test]
    fn bethe_summary_of_two_particles() {
        let s = bethe_summary(1.0, 5.0, "-0.5 0.5").unwrap();
        assert!(s.residual < 1e-12);
        assert!(s.momentum.abs() < 1e-12);
        assert!((s.rapidities[0] + s.rapidities[1]).abs() < 1e-12);
    }

    #[test]
    fn stationary_densities_integrate_to_about_one() {
        for kind in ["TES", "NTES"] {
            let s = tba_summary(kind, 1.0, 0.0, 40.0, 4001).unwrap();
            let h = s.lambda[1] - s.lambda[0];
            let n: f64 = s.rho.iter().sum::<f64>() * h;
            assert!((n - 1.0).abs() < 0.02, "{kind}: {n}");
            assert!(s.filling.iter().all(|f| (0.0..=1.0).contains(f)));
        }
        assert!(tba_summary("GGE", 1.0, 1.0, 4.0, 10).is_err());
    }

    #[test]
    fn small_spectrum_is_saturated_and_normalized() {
        let s = spectrum_summary("NTES", 5.0, 0.0, 4, 0.99).unwrap();
        assert!(s.saturation >= 0.99);
        assert!(
            spectrum_summary("TES", 5.0, 6.0, 4, 0.9)
                .unwrap()
                .saturation
                >= 0.9
        );
        assert_eq!(s.g1.len(), s.k_over_kf.len());
        assert!(s.g1.iter().all(|col| col.len() == s.omega_over_ef.len()));
        assert!(spectrum_summary("NTES", 5.0, 0.0, 40, 0.9).is_err());
    }
}
