//! Field form factors `⟨μ|Ψ(0)|λ⟩` between an `N`-particle eigenstate `λ` and
//! an `(N-1)`-particle eigenstate `μ`.
//!
//! `Ψ(0)` acting on the coordinate wavefunction picks the rapidity sitting at
//! the origin, which gives an alternating sum over `m` of partial overlaps
//! `⟨μ|λ∖m⟩` with off-shell `λ∖m`. Each overlap is a Slavnov determinant; the
//! sum is the Laplace expansion of a single `N×N` determinant along its first
//! row, so the whole matrix element costs one complex LU.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bethe::BetheState;
use crate::error::{Error, Result};
use crate::linalg::{ln_factorial, log_det_complex, wrap_phase};

/// Complex logarithm of a matrix element.
#[derive(Clone, Copy, Debug)]
pub struct LogAmplitude {
    pub ln_abs: f64,
    pub phase: f64,
}

impl LogAmplitude {
    pub fn value(&self) -> Complex64 {
        Complex64::from_polar(self.ln_abs.exp(), self.phase)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FieldFormFactor {
    pub amplitude: LogAmplitude,
    /// `ln(|⟨μ|Ψ(0)|λ⟩|² / (‖μ‖² ‖λ‖²))`.
    pub log_weight: f64,
    /// Largest over smallest LU pivot, a conditioning hint.
    pub pivot_ratio: f64,
}

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Entry of the column-scaled Slavnov matrix for on-shell `mu` and a free
/// rapidity `v`:
/// `ic / ((v-μ_a)(v-μ_a+ic)) · [e^{-ivL/2} - e^{ivL/2} Π_{m≠a} (v-μ_m-ic)/(v-μ_m+ic)]`.
/// The bracket vanishes at `v = μ_a` by the Bethe equations, so near that
/// point the divided difference is replaced by a midpoint derivative.
fn slavnov_entry(v: f64, a: usize, mu: &[f64], c: f64, l: f64) -> Complex64 {
    let x = v - mu[a];
    let ic = I * c;
    let scale = c.min(2.0 / l);
    if x.abs() > 1e-5 * scale {
        let mut r = Complex64::new(1.0, 0.0);
        for (m, &mm) in mu.iter().enumerate() {
            if m != a {
                r *= (v - mm - ic) / (v - mm + ic);
            }
        }
        let bracket =
            Complex64::from_polar(1.0, -v * l / 2.0) - Complex64::from_polar(1.0, v * l / 2.0) * r;
        ic / (x * (x + ic)) * bracket
    } else {
        let xi = 0.5 * (v + mu[a]);
        let mut r = Complex64::new(1.0, 0.0);
        let mut dlog = I * (l / 2.0);
        for (m, &mm) in mu.iter().enumerate() {
            if m != a {
                r *= (xi - mm - ic) / (xi - mm + ic);
                dlog += 1.0 / (xi - mm - ic) - 1.0 / (xi - mm + ic);
            }
        }
        let deriv = -I * (l / 2.0) * Complex64::from_polar(1.0, -xi * l / 2.0)
            - Complex64::from_polar(1.0, xi * l / 2.0) * r * dlog;
        ic / (x + ic) * deriv
    }
}

fn sign_is_negative(n: usize) -> bool {
    (n * n.saturating_sub(1) / 2) % 2 == 1
}

/// `⟨ψ_μ|ψ_ν⟩` for on-shell `mu` and arbitrary real `nu` of equal length.
pub fn slavnov_overlap(mu: &BetheState, nu: &[f64]) -> Result<LogAmplitude> {
    let n = mu.n();
    if nu.len() != n {
        return Err(Error::Mismatch(format!(
            "overlap needs equal particle numbers, got {} and {}",
            n,
            nu.len()
        )));
    }
    let (c, l) = (mu.params.c, mu.params.l);
    let m = &mu.rapidities;
    let mut ln_pref = Complex64::new(0.0, 0.0);
    let mut h = DMatrix::<Complex64>::zeros(n, n);
    for (b, &v) in nu.iter().enumerate() {
        for a in 0..n {
            ln_pref += (v - m[a] + I * c).ln();
            h[(a, b)] = slavnov_entry(v, a, m, c, l);
        }
    }
    let det = log_det_complex(h);
    let total: f64 = nu.iter().sum();
    let ln_abs = ln_factorial(n) - n as f64 * c.ln() + ln_pref.re + det.ln_abs;
    let mut phase = ln_pref.im + det.phase + total * l / 2.0;
    if sign_is_negative(n) {
        phase += std::f64::consts::PI;
    }
    Ok(LogAmplitude {
        ln_abs,
        phase: wrap_phase(phase),
    })
}

/// `⟨μ|Ψ(0)|λ⟩` and its normalised weight. `bra` has one particle fewer.
pub fn field_form_factor(bra: &BetheState, ket: &BetheState) -> Result<FieldFormFactor> {
    let nk = ket.n();
    let n = bra.n();
    if nk == 0 || n + 1 != nk {
        return Err(Error::Mismatch(format!(
            "field form factor needs N-1 = {} bra particles for N = {}",
            n, nk
        )));
    }
    if n > 0 && bra.params != ket.params {
        return Err(Error::Mismatch(
            "bra and ket live on different models".into(),
        ));
    }
    let (c, l) = (ket.params.c, ket.params.l);
    let lam = &ket.rapidities;
    let mu = &bra.rapidities;
    let ic = I * c;

    let mut ln_c = vec![Complex64::new(0.0, 0.0); nk];
    for (j, &lj) in lam.iter().enumerate() {
        for &ma in mu {
            ln_c[j] += (lj - ma + ic).ln();
        }
    }

    // First row in log form, rescaled by its largest modulus.
    let ln_x: Vec<Complex64> = (0..nk)
        .map(|m| {
            let mut s = Complex64::new(0.0, -lam[m] * l / 2.0);
            for (j, &lj) in lam.iter().enumerate() {
                if j != m {
                    s += (lj - lam[m] - ic).ln();
                }
            }
            s - ln_c[m]
        })
        .collect();
    let shift = ln_x.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);

    let mut mat = DMatrix::<Complex64>::zeros(nk, nk);
    for (m, z) in ln_x.iter().enumerate() {
        mat[(0, m)] = (z - shift).exp();
    }
    for a in 0..n {
        for (b, &v) in lam.iter().enumerate() {
            mat[(a + 1, b)] = slavnov_entry(v, a, mu, c, l);
        }
    }
    let det = log_det_complex(mat);
    if det.is_singular() {
        return Err(Error::SingularGaudin);
    }
    let sum_c: Complex64 = ln_c.iter().sum();
    let total: f64 = lam.iter().sum();
    let ln_abs = 0.5 * (nk as f64).ln() + ln_factorial(n) - n as f64 * c.ln()
        + sum_c.re
        + shift
        + det.ln_abs;
    let mut phase = sum_c.im + det.phase + total * l / 2.0;
    if sign_is_negative(n) {
        phase += std::f64::consts::PI;
    }
    let amplitude = LogAmplitude {
        ln_abs,
        phase: wrap_phase(phase),
    };
    Ok(FieldFormFactor {
        amplitude,
        log_weight: 2.0 * ln_abs - bra.log_norm_sq - ket.log_norm_sq,
        pivot_ratio: det.pivot_ratio,
    })
}

/// `|⟨μ|Ψ(0)|λ⟩|² / (‖μ‖² ‖λ‖²)`, independent of the norm convention.
pub fn normalized_weight(bra: &BetheState, ket: &BetheState) -> Result<f64> {
    Ok(field_form_factor(bra, ket)?.log_weight.exp())
}

/// Diagnostic CSV: bra QNs, ket QNs, log weight.
pub fn write_diagnostic_csv<W: Write>(
    mut w: W,
    rows: &[(BetheState, BetheState, f64)],
    config_hash: &str,
) -> Result<()> {
    let fmt = |s: &BetheState| {
        s.qns
            .values()
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    writeln!(w, "# config_hash={config_hash}")?;
    writeln!(w, "bra_qns,ket_qns,log_weight")?;
    for (bra, ket, lw) in rows {
        writeln!(w, "\"{}\",\"{}\",{:.16e}", fmt(bra), fmt(ket), lw)?;
    }
    Ok(())
}
