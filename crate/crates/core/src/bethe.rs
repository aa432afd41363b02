//! Bethe equations for the Lieb-Liniger gas on a ring.
//!
//! The rapidities solve `L λ_j + Σ_k 2 atan((λ_j - λ_k)/c) = 2π I_j`. The
//! left-hand side minus `2π I_j` is the gradient of the convex Yang-Yang
//! action, whose Hessian is the Gaudin matrix, so damped Newton converges from
//! any starting point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::linalg::{ln_factorial, log_det_real};
use crate::qn::QnConfig;

/// Interaction strength and ring length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl ModelParams {
    pub fn new(c: f64, l: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParams(format!("c must be positive, got {c}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidParams(format!("L must be positive, got {l}")));
        }
        Ok(Self { c, l })
    }
}

/// Residual target for the solver, in units of phase (max over `j`).
pub const RESIDUAL_TARGET: f64 = 1e-12;
const MAX_ITER: usize = 200;

#[derive(Clone, Debug, PartialEq)]
pub struct BetheState {
    pub params: ModelParams,
    pub qns: QnConfig,
    pub rapidities: Vec<f64>,
    pub residual: f64,
    pub energy: f64,
    pub momentum: f64,
    pub log_norm_sq: f64,
}

impl BetheState {
    pub fn n(&self) -> usize {
        self.qns.len()
    }

    pub fn vacuum(params: ModelParams) -> Self {
        Self {
            params,
            qns: QnConfig::vacuum(),
            rapidities: Vec::new(),
            residual: 0.0,
            energy: 0.0,
            momentum: 0.0,
            log_norm_sq: 0.0,
        }
    }

    /// One JSON object on a single line.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Residuals `L λ_j + Σ 2 atan((λ_j - λ_k)/c) - 2π I_j`.
pub fn bethe_residuals(lambda: &[f64], qns: &QnConfig, p: ModelParams) -> Vec<f64> {
    let n = lambda.len();
    (0..n)
        .map(|j| {
            let mut s = p.l * lambda[j] - PI * qns.doubled()[j] as f64;
            for k in 0..n {
                if k != j {
                    s += 2.0 * ((lambda[j] - lambda[k]) / p.c).atan();
                }
            }
            s
        })
        .collect()
}

/// Scattering kernel `K(x) = 2c / (c² + x²)`.
#[inline]
pub fn kernel(x: f64, c: f64) -> f64 {
    2.0 * c / (c * c + x * x)
}

pub fn gaudin_matrix(lambda: &[f64], p: ModelParams) -> DMatrix<f64> {
    let n = lambda.len();
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut diag = p.l;
        for k in 0..n {
            if k != j {
                let kk = kernel(lambda[j] - lambda[k], p.c);
                diag += kk;
                g[(j, k)] = -kk;
            }
        }
        g[(j, j)] = diag;
    }
    g
}

/// Yang-Yang action; its gradient is the residual vector.
fn action(lambda: &[f64], qns: &QnConfig, p: ModelParams) -> f64 {
    let n = lambda.len();
    let mut s = 0.0;
    for j in 0..n {
        s += 0.5 * p.l * lambda[j] * lambda[j] - PI * qns.doubled()[j] as f64 * lambda[j];
        for k in j + 1..n {
            let x = lambda[j] - lambda[k];
            s += 2.0 * x * (x / p.c).atan() - p.c * (x * x / (p.c * p.c)).ln_1p();
        }
    }
    s
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Starting point from the equations linearised in `λ/c`, which reduces to
/// the free-fermion values `2π I/L` at large `c`.
fn initial_guess(qns: &QnConfig, p: ModelParams) -> Vec<f64> {
    let n = qns.len() as f64;
    let total = PI * qns.doubled_sum() as f64 / p.l;
    qns.doubled()
        .iter()
        .map(|&d| (PI * d as f64 + 2.0 * total / p.c) / (p.l + 2.0 * n / p.c))
        .collect()
}

pub fn solve_bethe(qns: &QnConfig, p: ModelParams) -> Result<BetheState> {
    solve_bethe_from(qns, p, None)
}

/// Solve with an optional warm start (must have the same length as `qns`).
pub fn solve_bethe_from(
    qns: &QnConfig,
    p: ModelParams,
    guess: Option<&[f64]>,
) -> Result<BetheState> {
    let n = qns.len();
    if n == 0 {
        return Ok(BetheState::vacuum(p));
    }
    let mut lambda = match guess {
        Some(g) if g.len() == n => g.to_vec(),
        _ => initial_guess(qns, p),
    };
    let mut f = bethe_residuals(&lambda, qns, p);
    let mut res = max_abs(&f);
    let mut iter = 0;
    while res > RESIDUAL_TARGET {
        if iter == MAX_ITER {
            return Err(Error::BetheNonConvergence {
                iterations: iter,
                residual: res,
            });
        }
        iter += 1;
        let g = gaudin_matrix(&lambda, p);
        let chol = g.cholesky().ok_or(Error::SingularGaudin)?;
        let step = chol.solve(&DVector::from_column_slice(&f));
        // Backtrack on the action; once differences fall below rounding,
        // accept on the residual instead.
        let s0 = action(&lambda, qns, p);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(step.iter())
                .map(|(l, s)| l - t * s)
                .collect();
            let ft = bethe_residuals(&trial, qns, p);
            let rt = max_abs(&ft);
            let st = action(&trial, qns, p);
            let tol = 1e-13 * (1.0 + s0.abs());
            if st < s0 - 1e-4 * t * step.dot(&DVector::from_column_slice(&f))
                || (st <= s0 + tol && rt < res)
            {
                accepted = Some((trial, ft, rt));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((l, ft, rt)) => {
                lambda = l;
                f = ft;
                res = rt;
            }
            None => {
                // Stalled at rounding level.
                if res < 1e-10 {
                    break;
                }
                return Err(Error::BetheNonConvergence {
                    iterations: iter,
                    residual: res,
                });
            }
        }
    }
    finish_state(qns.clone(), lambda, res, p)
}

fn finish_state(
    qns: QnConfig,
    lambda: Vec<f64>,
    residual: f64,
    p: ModelParams,
) -> Result<BetheState> {
    let energy = lambda.iter().map(|l| l * l).sum();
    let momentum = lambda.iter().sum();
    let log_norm_sq = log_norm_sq(&lambda, p)?;
    Ok(BetheState {
        params: p,
        qns,
        rapidities: lambda,
        residual,
        energy,
        momentum,
        log_norm_sq,
    })
}

/// `ln ‖ψ‖²` for the coordinate wavefunction
/// `ψ = Σ_P (-1)^P Π_{j<k} (λ_{Pk} - λ_{Pj} - ic) exp(i Σ λ_{Pj} x_j)`,
/// which equals `N! Π_{j<k} ((λ_j - λ_k)² + c²) det G`.
pub fn log_norm_sq(lambda: &[f64], p: ModelParams) -> Result<f64> {
    let n = lambda.len();
    let mut s = ln_factorial(n);
    for j in 0..n {
        for k in j + 1..n {
            let x = lambda[j] - lambda[k];
            s += (x * x + p.c * p.c).ln();
        }
    }
    let det = log_det_real(gaudin_matrix(lambda, p));
    if det.is_singular() || det.phase != 0.0 {
        return Err(Error::SingularGaudin);
    }
    Ok(s + det.ln_abs)
}

struct Sig17<'a>(&'a [f64]);

impl Serialize for Sig17<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut text = String::from("[");
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                text.push(',');
            }
            text.push_str(&format!("{x:.16e}"));
        }
        text.push(']');
        let raw = RawValue::from_string(text).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl Serialize for BetheState {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("BetheState", 9)?;
        st.serialize_field("c", &self.params.c)?;
        st.serialize_field("L", &self.params.l)?;
        st.serialize_field("N", &self.qns.len())?;
        st.serialize_field("qns", &self.qns)?;
        st.serialize_field("rapidities", &Sig17(&self.rapidities))?;
        st.serialize_field("residual", &self.residual)?;
        st.serialize_field("energy", &self.energy)?;
        st.serialize_field("momentum", &self.momentum)?;
        st.serialize_field("log_norm_sq", &self.log_norm_sq)?;
        st.end()
    }
}

#[derive(Deserialize)]
struct StateRecord {
    c: f64,
    #[serde(rename = "L")]
    l: f64,
    #[serde(rename = "N")]
    n: usize,
    qns: QnConfig,
    rapidities: Vec<f64>,
    residual: f64,
    energy: f64,
    momentum: f64,
    log_norm_sq: f64,
}

impl<'de> Deserialize<'de> for BetheState {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = StateRecord::deserialize(d)?;
        if r.n != r.qns.len() || r.n != r.rapidities.len() {
            return Err(de::Error::custom("N does not match qns/rapidities length"));
        }
        let params = ModelParams::new(r.c, r.l).map_err(de::Error::custom)?;
        Ok(BetheState {
            params,
            qns: r.qns,
            rapidities: r.rapidities,
            residual: r.residual,
            energy: r.energy,
            momentum: r.momentum,
            log_norm_sq: r.log_norm_sq,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: f64, l: f64) -> ModelParams {
        ModelParams::new(c, l).unwrap()
    }

    #[test]
    fn two_body_closed_form() {
        // N = 2 ground state: λ = ±q with L q + 2 atan(2q/c) = π.
        let s = solve_bethe(&QnConfig::ground_state(2), p(1.0, 3.0)).unwrap();
        let q = s.rapidities[1];
        assert!((s.rapidities[0] + q).abs() < 1e-14);
        assert!((3.0 * q + 2.0 * (2.0 * q).atan() - PI).abs() < 1e-13);
    }

    #[test]
    fn free_fermion_limit() {
        let qns = QnConfig::from_values(&[-2.0, 0.0, 3.0]).unwrap();
        let s = solve_bethe(&qns, p(1e8, 5.0)).unwrap();
        for (l, i) in s.rapidities.iter().zip(qns.values()) {
            assert!((l - 2.0 * PI * i / 5.0).abs() < 1e-6);
        }
    }

    #[test]
    fn weak_coupling_converges() {
        let qns = QnConfig::ground_state(12);
        let s = solve_bethe(&qns, p(0.01, 12.0)).unwrap();
        assert!(s.residual <= 1e-10);
        assert!(s.rapidities.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn momentum_identity() {
        let qns = QnConfig::from_values(&[-7.5, -2.5, -0.5, 1.5, 6.5, 11.5]).unwrap();
        let pp = p(0.7, 6.0);
        let s = solve_bethe(&qns, pp).unwrap();
        let exact = PI * qns.doubled_sum() as f64 / pp.l;
        assert!((s.momentum - exact).abs() < 1e-12);
    }

    #[test]
    fn single_particle_norm_is_length() {
        let s = solve_bethe(&QnConfig::ground_state(1), p(2.0, 7.0)).unwrap();
        assert_eq!(s.log_norm_sq, 7f64.ln());
    }

    #[test]
    fn json_record_round_trips() {
        let qns = QnConfig::from_values(&[-1.5, 0.5, 2.5, 4.5]).unwrap();
        let s = solve_bethe(&qns, p(5.0, 6.0)).unwrap();
        let line = s.to_json_line().unwrap();
        assert!(!line.contains('\n'));
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for key in [
            "c",
            "L",
            "N",
            "qns",
            "rapidities",
            "residual",
            "energy",
            "momentum",
            "log_norm_sq",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: BetheState = serde_json::from_str(&line).unwrap();
        assert_eq!(back.rapidities, s.rapidities);
        assert_eq!(back.qns, s.qns);
    }

    #[test]
    fn warm_start_agrees() {
        let qns = QnConfig::from_values(&[-3.0, -1.0, 0.0, 1.0, 5.0]).unwrap();
        let pp = p(0.3, 5.0);
        let a = solve_bethe(&qns, pp).unwrap();
        let guess: Vec<f64> = a.rapidities.iter().map(|x| x + 0.1).collect();
        let b = solve_bethe_from(&qns, pp, Some(&guess)).unwrap();
        for (x, y) in a.rapidities.iter().zip(&b.rapidities) {
            assert!((x - y).abs() < 1e-11);
        }
    }
}
