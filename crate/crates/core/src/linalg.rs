//! Log-domain determinants on top of nalgebra's pivoted LU.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Logarithm of a determinant: `ln|det|` plus its phase, and the ratio of the
/// largest to smallest pivot magnitude as a cheap conditioning indicator.
#[derive(Clone, Copy, Debug)]
pub struct LogDet {
    pub ln_abs: f64,
    pub phase: f64,
    pub pivot_ratio: f64,
}

impl LogDet {
    pub fn is_singular(&self) -> bool {
        !self.ln_abs.is_finite()
    }
}

pub fn log_det_complex(m: DMatrix<Complex64>) -> LogDet {
    let n = m.nrows();
    if n == 0 {
        return LogDet {
            ln_abs: 0.0,
            phase: 0.0,
            pivot_ratio: 1.0,
        };
    }
    let lu = m.lu();
    let sign: f64 = lu.p().determinant();
    let mut ln_abs = 0.0;
    let mut phase = if sign < 0.0 {
        std::f64::consts::PI
    } else {
        0.0
    };
    let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
    let u = lu.u();
    for i in 0..n {
        let d = u[(i, i)];
        let a = d.norm();
        pmax = pmax.max(a);
        pmin = pmin.min(a);
        ln_abs += a.ln();
        phase += d.arg();
    }
    LogDet {
        ln_abs,
        phase: wrap_phase(phase),
        pivot_ratio: pmax / pmin,
    }
}

pub fn log_det_real(m: DMatrix<f64>) -> LogDet {
    let n = m.nrows();
    if n == 0 {
        return LogDet {
            ln_abs: 0.0,
            phase: 0.0,
            pivot_ratio: 1.0,
        };
    }
    let lu = m.lu();
    let mut negative = lu.p().determinant::<f64>() < 0.0;
    let mut ln_abs = 0.0;
    let (mut pmax, mut pmin) = (0.0f64, f64::INFINITY);
    let u = lu.u();
    for i in 0..n {
        let d = u[(i, i)];
        if d < 0.0 {
            negative = !negative;
        }
        let a = d.abs();
        pmax = pmax.max(a);
        pmin = pmin.min(a);
        ln_abs += a.ln();
    }
    let phase = if negative { std::f64::consts::PI } else { 0.0 };
    LogDet {
        ln_abs,
        phase,
        pivot_ratio: pmax / pmin,
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut y = x.rem_euclid(two_pi);
    if y > std::f64::consts::PI {
        y -= two_pi;
    }
    y
}

/// `ln n!`
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}
