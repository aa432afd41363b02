//! Brute-force coordinate-space oracle for small particle numbers.
//!
//! Wavefunctions are evaluated directly from the Bethe sum over permutations
//! and integrated with nested Gauss-Legendre rules over the ordered simplex
//! `0 < x_1 < … < x_n < L`. Nothing here shares code with the determinant
//! formulas it is meant to check.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bethe::{solve_bethe, BetheState, ModelParams};
use crate::error::{Error, Result};
use crate::form_factor::field_form_factor;
use crate::linalg::ln_factorial;
use crate::qn::QnConfig;
use crate::quadrature::Rule;

pub const MAX_PARTICLES: usize = 4;
const NODES: usize = 40;
const NODES_FINE: usize = 56;

/// All permutations of `0..n` with their signs.
fn permutations(n: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out.into_iter()
        .map(|p| {
            let inversions = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| p[i] > p[j])
                .count();
            (p, if inversions % 2 == 0 { 1.0 } else { -1.0 })
        })
        .collect()
}

/// Bethe wavefunction on the ordered sector, as a list of plane waves.
struct Wavefunction {
    terms: Vec<(Complex64, Vec<f64>)>,
}

impl Wavefunction {
    fn new(lambda: &[f64], c: f64) -> Self {
        let n = lambda.len();
        let terms = permutations(n)
            .into_iter()
            .map(|(p, sign)| {
                let mut amp = Complex64::new(sign, 0.0);
                for j in 0..n {
                    for k in j + 1..n {
                        amp *= Complex64::new(lambda[p[k]] - lambda[p[j]], -c);
                    }
                }
                (amp, p.iter().map(|&i| lambda[i]).collect())
            })
            .collect();
        Self { terms }
    }

    /// `ψ(x)` for `x` sorted ascending.
    fn eval(&self, x: &[f64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(amp, k)| {
                let phase: f64 = k.iter().zip(x).map(|(k, x)| k * x).sum();
                amp * Complex64::from_polar(1.0, phase)
            })
            .sum()
    }
}

/// `n! ∫_{0<x_1<…<x_n<L} f(x) dx` by nested Gauss-Legendre.
fn simplex_integral(
    n: usize,
    l: f64,
    nodes: usize,
    f: &mut dyn FnMut(&[f64]) -> Complex64,
) -> Complex64 {
    let rule = Rule::new(nodes);
    fn rec(
        rule: &Rule,
        x: &mut Vec<f64>,
        n: usize,
        l: f64,
        weight: f64,
        f: &mut dyn FnMut(&[f64]) -> Complex64,
    ) -> Complex64 {
        if x.len() == n {
            return weight * f(x);
        }
        let lo = x.last().copied().unwrap_or(0.0);
        let half = 0.5 * (l - lo);
        let mut s = Complex64::new(0.0, 0.0);
        for (g, w) in rule.nodes.iter().zip(&rule.weights) {
            x.push(lo + half * (g + 1.0));
            s += rec(rule, x, n, l, weight * half * w, f);
            x.pop();
        }
        s
    }
    let fact = ln_factorial(n).exp();
    fact * rec(&rule, &mut Vec::with_capacity(n), n, l, 1.0, f)
}

fn refined<F>(mut eval: F) -> Result<Complex64>
where
    F: FnMut(usize) -> Complex64,
{
    let coarse = eval(NODES);
    let fine = eval(NODES_FINE);
    let change = (fine - coarse).norm() / fine.norm().max(f64::MIN_POSITIVE);
    if change > 1e-9 {
        return Err(Error::Quadrature { change });
    }
    Ok(fine)
}

/// `⟨ψ_λ|ψ_λ⟩` by direct integration.
pub fn norm_sq(state: &BetheState) -> Result<f64> {
    let n = state.n();
    if n > MAX_PARTICLES {
        return Err(Error::OracleTooLarge {
            max: MAX_PARTICLES,
            got: n,
        });
    }
    let psi = Wavefunction::new(&state.rapidities, state.params.c);
    let v = refined(|m| {
        simplex_integral(n, state.params.l, m, &mut |x| {
            Complex64::new(psi.eval(x).norm_sqr(), 0.0)
        })
    })?;
    Ok(v.re)
}

/// `⟨μ|Ψ(0)|λ⟩ = √N ∫ conj(ψ_μ(y)) ψ_λ(0, y) dy` by direct integration.
pub fn field_matrix_element(bra: &BetheState, ket: &BetheState) -> Result<Complex64> {
    let nk = ket.n();
    if nk > MAX_PARTICLES {
        return Err(Error::OracleTooLarge {
            max: MAX_PARTICLES,
            got: nk,
        });
    }
    if bra.n() + 1 != nk {
        return Err(Error::Mismatch(
            "bra must have one particle fewer than ket".into(),
        ));
    }
    let c = ket.params.c;
    let phi = Wavefunction::new(&bra.rapidities, c);
    let psi = Wavefunction::new(&ket.rapidities, c);
    let n = bra.n();
    let sqrt_n = (nk as f64).sqrt();
    if n == 0 {
        return Ok(sqrt_n * psi.eval(&[0.0]));
    }
    let mut buf = vec![0.0; nk];
    refined(|m| {
        sqrt_n
            * simplex_integral(n, ket.params.l, m, &mut |y| {
                buf[1..].copy_from_slice(y);
                phi.eval(y).conj() * psi.eval(&buf)
            })
    })
}

/// One oracle comparison.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressionCase {
    pub kind: CaseKind,
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub bra_qns: Option<QnConfig>,
    pub ket_qns: QnConfig,
    /// Quantity compared: `‖λ‖²` for norms, `|⟨μ|Ψ(0)|λ⟩|²` for fields.
    pub oracle: f64,
    pub formula: f64,
    pub rel_err: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    Norm,
    Field,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegressionSet {
    pub tolerance: f64,
    pub cases: Vec<RegressionCase>,
}

impl RegressionSet {
    pub fn read<R: std::io::Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }

    pub fn write_json<W: std::io::Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn failures(&self) -> impl Iterator<Item = &RegressionCase> {
        self.cases.iter().filter(|c| !(c.rel_err <= self.tolerance))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.cases.iter().map(|c| c.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.cases.is_empty() && self.failures().next().is_none()
    }
}

/// Norm cases `(c, L, ket)` and field cases `(c, L, bra, ket)`.
type NormSpec = (f64, f64, &'static [f64]);
type FieldSpec = (f64, f64, &'static [f64], &'static [f64]);

const NORM_CASES: &[NormSpec] = &[
    (1.0, 2.0, &[1.0]),
    (0.1, 2.0, &[-0.5, 0.5]),
    (5.0, 2.5, &[-0.5, 1.5]),
    (100.0, 2.0, &[-1.5, 0.5]),
    (0.1, 2.0, &[-1.0, 0.0, 2.0]),
    (1.0, 3.0, &[-1.0, 0.0, 1.0]),
    (5.0, 2.0, &[-2.0, 0.0, 1.0]),
    (100.0, 2.0, &[-1.0, 0.0, 1.0]),
];

const FIELD_CASES: &[FieldSpec] = &[
    (1.0, 2.0, &[], &[0.0]),
    (0.1, 2.0, &[0.0], &[-0.5, 0.5]),
    (0.1, 2.0, &[2.0], &[-0.5, 0.5]),
    (5.0, 3.0, &[1.0], &[-1.5, 0.5]),
    (100.0, 2.0, &[-1.0], &[-0.5, 0.5]),
    (5.0, 3.0, &[-0.5, 0.5], &[-1.0, 0.0, 1.0]),
    (0.1, 2.0, &[-1.5, 1.5], &[-1.0, 0.0, 2.0]),
    (100.0, 2.0, &[-0.5, 1.5], &[-1.0, 0.0, 1.0]),
    (1.0, 3.0, &[-1.0, 0.0, 1.0], &[-1.5, -0.5, 0.5, 1.5]),
    (100.0, 2.0, &[-2.0, 0.0, 3.0], &[-1.5, -0.5, 0.5, 2.5]),
    (0.1, 2.0, &[-1.0, 0.0, 1.0], &[-1.5, -0.5, 0.5, 1.5]),
    (5.0, 2.5, &[-1.0, 1.0, 2.0], &[-1.5, -0.5, 0.5, 1.5]),
];

fn solve_qns(qns: &QnConfig, p: ModelParams) -> Result<BetheState> {
    if qns.is_empty() {
        return Ok(BetheState::vacuum(p));
    }
    solve_bethe(qns, p)
}

/// Oracle and determinant values for one case, from quantum numbers alone.
pub fn evaluate_case(
    kind: CaseKind,
    c: f64,
    l: f64,
    bra: Option<&QnConfig>,
    ket: &QnConfig,
) -> Result<RegressionCase> {
    let p = ModelParams::new(c, l)?;
    let k = solve_qns(ket, p)?;
    let (oracle, formula, bra_qns) = match kind {
        CaseKind::Norm => (norm_sq(&k)?, k.log_norm_sq.exp(), None),
        CaseKind::Field => {
            let bra =
                bra.ok_or_else(|| Error::InvalidArgument("field case without a bra".into()))?;
            let b = solve_qns(bra, p)?;
            let oracle = field_matrix_element(&b, &k)?.norm_sqr();
            (
                oracle,
                (2.0 * field_form_factor(&b, &k)?.amplitude.ln_abs).exp(),
                Some(b.qns),
            )
        }
    };
    Ok(RegressionCase {
        kind,
        c,
        l,
        bra_qns,
        ket_qns: k.qns,
        oracle,
        formula,
        rel_err: ((formula - oracle) / oracle).abs(),
    })
}

/// Build the fixed regression set. Norms use `N ≤ 3`, field matrix elements
/// `N ≤ 4`, both across `c ∈ {0.1, 1, 5, 100}`.
pub fn regression_set(tolerance: f64) -> Result<RegressionSet> {
    let mut cases = Vec::new();
    for &(c, l, ket) in NORM_CASES {
        cases.push(evaluate_case(
            CaseKind::Norm,
            c,
            l,
            None,
            &QnConfig::from_values(ket)?,
        )?);
    }
    for &(c, l, bra, ket) in FIELD_CASES {
        let bra = QnConfig::from_values(bra)?;
        cases.push(evaluate_case(
            CaseKind::Field,
            c,
            l,
            Some(&bra),
            &QnConfig::from_values(ket)?,
        )?);
    }
    Ok(RegressionSet { tolerance, cases })
}

/// Re-evaluate a stored set. Stored values are ignored: each case is solved
/// and integrated again, and also compared with its stored oracle value so
/// that a drifting oracle is caught as well.
pub fn recheck(set: &RegressionSet) -> Result<RegressionSet> {
    let cases = set
        .cases
        .iter()
        .map(|case| {
            let mut fresh = evaluate_case(
                case.kind,
                case.c,
                case.l,
                case.bra_qns.as_ref(),
                &case.ket_qns,
            )?;
            if case.oracle != 0.0 {
                fresh.rel_err = fresh
                    .rel_err
                    .max(((fresh.oracle - case.oracle) / case.oracle).abs());
            }
            Ok(fresh)
        })
        .collect::<Result<_>>()?;
    Ok(RegressionSet {
        tolerance: set.tolerance,
        cases,
    })
}

/// Every configuration with the parity and size of `reference` whose holes
/// and particles relative to it number at most `max_moves` and can be paired
/// with total displacement at most `max_cost` slots. Brute force: all subsets
/// of a window, all pairings.
pub fn shell_brute_force(reference: &QnConfig, max_cost: u32, max_moves: usize) -> Vec<QnConfig> {
    let refd = reference.doubled();
    let n = refd.len();
    if n == 0 {
        return vec![reference.clone()];
    }
    let reach = 2 * max_cost as i64;
    let lo = refd[0] - reach;
    let hi = refd[n - 1] + reach;
    let slots: Vec<i64> = (lo..=hi).step_by(2).collect();
    let mut out = Vec::new();
    let mut pick = Vec::with_capacity(n);
    subsets(&slots, n, 0, &mut pick, &mut |set| {
        let holes: Vec<i64> = refd.iter().copied().filter(|x| !set.contains(x)).collect();
        let parts: Vec<i64> = set.iter().copied().filter(|x| !refd.contains(x)).collect();
        if holes.len() > max_moves {
            return;
        }
        let best = permutations(parts.len())
            .into_iter()
            .map(|(perm, _)| {
                holes
                    .iter()
                    .zip(&perm)
                    .map(|(h, &j)| (parts[j] - h).abs() / 2)
                    .sum::<i64>()
            })
            .min()
            .unwrap_or(0);
        if best <= max_cost as i64 {
            out.push(QnConfig::from_doubled(set.to_vec()).expect("window slots share the parity"));
        }
    });
    out
}

fn subsets(slots: &[i64], k: usize, start: usize, pick: &mut Vec<i64>, f: &mut dyn FnMut(&[i64])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for i in start..slots.len() {
        if slots.len() - i < k - pick.len() {
            break;
        }
        pick.push(slots[i]);
        subsets(slots, k, i + 1, pick, f);
        pick.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(values: &[f64], p: ModelParams) -> Result<BetheState> {
        solve_qns(&QnConfig::from_values(values)?, p)
    }

    #[test]
    fn shell_of_a_single_particle() {
        let r = QnConfig::from_values(&[0.0]).unwrap();
        let shell = shell_brute_force(&r, 2, 1);
        let v: Vec<f64> = shell.iter().map(|q| q.value(0)).collect();
        assert_eq!(v, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn recheck_catches_a_tampered_oracle_value() {
        let ket = QnConfig::from_values(&[-0.5, 0.5]).unwrap();
        let bra = QnConfig::from_values(&[1.0]).unwrap();
        let case = evaluate_case(CaseKind::Field, 1.0, 2.0, Some(&bra), &ket).unwrap();
        assert!(case.rel_err < 1e-6);
        let mut set = RegressionSet {
            tolerance: 1e-6,
            cases: vec![case],
        };
        assert!(recheck(&set).unwrap().passed());
        set.cases[0].oracle *= 1.0 + 1e-3;
        let again = recheck(&set).unwrap();
        assert!(!again.passed());
        assert_eq!(again.failures().count(), 1);
    }

    #[test]
    fn empty_set_does_not_pass() {
        let set = RegressionSet {
            tolerance: 1e-6,
            cases: vec![],
        };
        assert!(!set.passed());
    }

    #[test]
    fn permutation_signs() {
        let perms = permutations(3);
        assert_eq!(perms.len(), 6);
        let total: f64 = perms.iter().map(|(_, s)| s).sum();
        assert_eq!(total, 0.0);
    }

    #[test]
    fn free_particle_norm() {
        let p = ModelParams::new(1.0, 2.0).unwrap();
        let s = solve(&[1.0], p).unwrap();
        assert!((norm_sq(&s).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wavefunction_is_antisymmetric_in_amplitudes_only_at_coincidence() {
        // Bosonic wavefunction is finite and nonzero at coinciding points.
        let psi = Wavefunction::new(&[-0.7, 0.4], 1.0);
        assert!(psi.eval(&[0.3, 0.3]).norm() > 0.0);
    }

    #[test]
    fn rejects_large_particle_numbers() {
        let p = ModelParams::new(1.0, 5.0).unwrap();
        let s = solve(&[-2.0, -1.0, 0.0, 1.0, 2.0], p).unwrap();
        assert!(matches!(norm_sq(&s), Err(Error::OracleTooLarge { .. })));
    }
}
