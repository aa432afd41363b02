//! Finite-size eigenstates drawn from a macrostate.
//!
//! A quantum-number slot `I` sits at the rapidity `λ(I)` solving
//! `L ∫₀^λ ρ_t = I`, and is occupied with probability `ϑ(λ(I))`.

use std::collections::HashSet;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bethe::{solve_bethe, BetheState, ModelParams};
use crate::error::{Error, Result};
use crate::qn::{doubled_parity, QnConfig};
use crate::tba::TbaSolution;

/// Slots whose filling falls below this are never occupied by a sample.
const FILLING_FLOOR: f64 = 1e-9;
const MAX_SLOTS: i64 = 200_000;

fn check_density(sol: &TbaSolution, n: usize, l: f64) -> Result<()> {
    let requested = n as f64 / l;
    if ((requested - sol.density) / sol.density).abs() > 0.02 {
        return Err(Error::DensityMismatch {
            solution: sol.density,
            requested,
        });
    }
    Ok(())
}

/// Rapidity of slot `i` (a half-integer or integer): the root of the
/// increasing counting function `L z(λ) = i`, by bracketed Newton.
pub fn slot_rapidity(sol: &TbaSolution, l: f64, i: f64) -> f64 {
    slot_rapidity_above(sol, l, i, 0.0)
}

/// As [`slot_rapidity`] for `i ≥ 0`, given a rapidity known to lie below the
/// root.
fn slot_rapidity_above(sol: &TbaSolution, l: f64, i: f64, lower: f64) -> f64 {
    if i < 0.0 {
        return -slot_rapidity_above(sol, l, -i, 0.0);
    }
    let f = |lam: f64| l * sol.counting(lam) - i;
    let mut lo = lower;
    let mut step = 2.0 * std::f64::consts::PI / l;
    let mut hi = lo + step;
    while f(hi) < 0.0 {
        lo = hi;
        step *= 2.0;
        hi += step;
    }
    let mut lam = 0.5 * (lo + hi);
    for _ in 0..200 {
        let v = f(lam);
        if v < 0.0 {
            lo = lam;
        } else {
            hi = lam;
        }
        let mut next = lam - v / (l * sol.rho_total_at(lam));
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - lam).abs() <= 1e-14 * (1.0 + lam.abs()) || hi - lo <= 1e-14 * (1.0 + hi) {
            return next;
        }
        lam = next;
    }
    lam
}

/// Parity-correct slots with their rapidities and fillings, symmetric about
/// zero and extending until the filling drops below a floor.
///
/// Draws are fixed-`N` conditional Bernoulli samples whose odds are fitted
/// so that every slot's inclusion probability equals its filling. Among all
/// fixed-size designs with those marginals this is the one of largest
/// entropy.
#[derive(Clone, Debug)]
pub struct SlotTable {
    pub doubled: Vec<i64>,
    pub lambda: Vec<f64>,
    pub filling: Vec<f64>,
    /// Inclusion probabilities targeted by the draw; equal to `filling` up to
    /// a common logit shift making them sum to `n`.
    pub target: Vec<f64>,
    n: usize,
    odds: Vec<f64>,
    back: Tables,
}

/// Row-normalised elementary symmetric polynomials of suffixes (or
/// prefixes) of the odds: value `rows[i][r] * exp(scale[i])`.
#[derive(Clone, Debug, Default)]
struct Tables {
    rows: Vec<f64>,
    scale: Vec<f64>,
    width: usize,
}

impl Tables {
    fn get(&self, i: usize, r: usize) -> f64 {
        self.rows[i * self.width + r]
    }

    /// `from_back`: row `i` covers slots `i..m`; otherwise slots `0..i`.
    fn build(odds: &[f64], n: usize, from_back: bool) -> Self {
        let m = odds.len();
        let width = n + 1;
        let mut rows = vec![0.0; (m + 1) * width];
        let mut scale = vec![0.0; m + 1];
        let start = if from_back { m } else { 0 };
        rows[start * width] = 1.0;
        for step in 0..m {
            let (prev, cur, slot) = if from_back {
                (m - step, m - step - 1, m - step - 1)
            } else {
                (step, step + 1, step)
            };
            let w = odds[slot];
            let mut max = 0.0f64;
            for r in 0..width {
                let mut v = rows[prev * width + r];
                if r > 0 {
                    v += w * rows[prev * width + r - 1];
                }
                rows[cur * width + r] = v;
                max = max.max(v);
            }
            for r in 0..width {
                rows[cur * width + r] /= max;
            }
            scale[cur] = scale[prev] + max.ln();
        }
        Self { rows, scale, width }
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    p.ln() - (-p).ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inclusion probabilities of the conditional Bernoulli design with `odds`.
fn inclusion(odds: &[f64], n: usize) -> (Vec<f64>, Tables) {
    let fwd = Tables::build(odds, n, false);
    let back = Tables::build(odds, n, true);
    let ln_z = back.get(0, n).ln() + back.scale[0];
    let pi = (0..odds.len())
        .map(|i| {
            let s: f64 = (0..n)
                .map(|k| fwd.get(i, k) * back.get(i + 1, n - 1 - k))
                .sum();
            (odds[i] * s * (fwd.scale[i] + back.scale[i + 1] - ln_z).exp()).min(1.0)
        })
        .collect();
    (pi, back)
}

impl SlotTable {
    pub fn new(sol: &TbaSolution, n: usize, l: f64) -> Result<Self> {
        check_density(sol, n, l)?;
        let parity = doubled_parity(n);
        let mut pos = Vec::new();
        let mut d = parity;
        let mut lower = 0.0;
        loop {
            let lam = slot_rapidity_above(sol, l, d as f64 / 2.0, lower);
            lower = lam;
            let th = sol.filling_at(lam);
            if th < FILLING_FLOOR && pos.len() >= n {
                break;
            }
            pos.push((d, lam, th));
            d += 2;
            if d > MAX_SLOTS {
                return Err(Error::Conditioning { target: n });
            }
        }
        let (mut doubled, mut lambda, mut filling) = (Vec::new(), Vec::new(), Vec::new());
        for &(d, lam, th) in pos.iter().rev() {
            if d != 0 {
                doubled.push(-d);
                lambda.push(-lam);
                filling.push(th);
            }
        }
        for &(d, lam, th) in &pos {
            doubled.push(d);
            lambda.push(lam);
            filling.push(th);
        }
        Self::from_slots(doubled, lambda, filling, n)
    }

    pub fn from_slots(
        doubled: Vec<i64>,
        lambda: Vec<f64>,
        filling: Vec<f64>,
        n: usize,
    ) -> Result<Self> {
        if filling.len() < n || n == 0 {
            return Err(Error::Conditioning { target: n });
        }
        let target = shift_to_sum(&filling, n);
        let mut odds: Vec<f64> = target.iter().map(|&t| logit(t).exp()).collect();
        let mut back = Tables::default();
        for _ in 0..500 {
            let (pi, b) = inclusion(&odds, n);
            back = b;
            let err = pi
                .iter()
                .zip(&target)
                .map(|(p, t)| (p - t).abs())
                .fold(0.0, f64::max);
            if err < 1e-12 {
                break;
            }
            for i in 0..odds.len() {
                odds[i] *= (logit(target[i]) - logit(pi[i])).exp();
            }
        }
        Ok(Self {
            doubled,
            lambda,
            filling,
            target,
            n,
            odds,
            back,
        })
    }

    pub fn len(&self) -> usize {
        self.doubled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doubled.is_empty()
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    /// See [`representative_qns`]. Uses the normalised targets, which sum to
    /// exactly `n`, so every mark is reached.
    pub fn representative(&self) -> QnConfig {
        let n = self.n;
        // slots with non-negative quantum number, ascending
        let start = self
            .doubled
            .iter()
            .position(|&d| d >= 0)
            .unwrap_or(self.len());
        let mut sum = 0.0;
        let mut positive = Vec::new();
        let mut mark = if n % 2 == 1 { 1.0 } else { 0.5 };
        let wanted = n / 2;
        for i in start..self.len() {
            if positive.len() == wanted {
                break;
            }
            let d = self.doubled[i];
            sum += if d == 0 {
                0.5 * self.target[i]
            } else {
                self.target[i]
            };
            if d == 0 {
                continue;
            }
            // a little slack absorbs rounding in the normalised sum
            let last = self.len() - i <= wanted - positive.len();
            if sum >= mark - 1e-9 || last {
                positive.push(d);
                mark += 1.0;
            }
        }
        let mut doubled: Vec<i64> = positive.iter().rev().map(|d| -d).collect();
        if n % 2 == 1 {
            doubled.push(0);
        }
        doubled.extend(positive);
        QnConfig::from_doubled(doubled).expect("mirrored slots are ordered and parity-correct")
    }

    /// Sequential draw from the back tables: slot `i` is taken with the
    /// conditional probability that the remaining `r` particles include it.
    pub fn draw(&self, rng: &mut impl Rng) -> Result<QnConfig> {
        let mut r = self.n;
        let mut doubled = Vec::with_capacity(self.n);
        for i in 0..self.len() {
            if r == 0 {
                break;
            }
            let b = &self.back;
            let p = self.odds[i] * b.get(i + 1, r - 1) / b.get(i, r)
                * (b.scale[i + 1] - b.scale[i]).exp();
            if rng.random::<f64>() < p {
                doubled.push(self.doubled[i]);
                r -= 1;
            }
        }
        if r != 0 {
            return Err(Error::Conditioning { target: self.n });
        }
        QnConfig::from_doubled(doubled)
    }
}

/// Shift all logits by a common amount so the probabilities sum to `n`.
fn shift_to_sum(p: &[f64], n: usize) -> Vec<f64> {
    let x: Vec<f64> = p.iter().map(|&t| logit(t)).collect();
    let total = |a: f64| x.iter().map(|&v| sigmoid(v + a)).sum::<f64>() - n as f64;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while total(lo) > 0.0 {
        lo *= 2.0;
    }
    while total(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    x.iter().map(|&v| sigmoid(v + a)).collect()
}

/// Deterministic state. Walking outward over the slots, the running sum of
/// fillings is compared with the half-unit marks `j - (N+1)/2` of particle
/// `j`; a slot is occupied when the sum first reaches the next mark. The
/// result is mirrored, so it is symmetric about zero.
pub fn representative_qns(sol: &TbaSolution, n: usize, l: f64) -> Result<QnConfig> {
    let table = SlotTable::new(sol, n, l)?;
    Ok(table.representative())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One stochastic configuration, reproducible from `seed`.
pub fn sample_qns(sol: &TbaSolution, n: usize, l: f64, seed: u64) -> Result<QnConfig> {
    let table = SlotTable::new(sol, n, l)?;
    table.draw(&mut rng_for(seed, 0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub seed: u64,
    pub window: f64,
    pub target_energy: f64,
    pub draws: usize,
    pub accepted: usize,
    pub acceptance_rate: f64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct CopyEnsemble {
    pub copies: Vec<BetheState>,
    pub seed: u64,
    pub window: f64,
    pub target_energy: f64,
    pub draws: usize,
}

impl CopyEnsemble {
    pub fn acceptance_rate(&self) -> f64 {
        self.copies.len() as f64 / self.draws.max(1) as f64
    }

    pub fn manifest(&self, config_hash: &str) -> EnsembleManifest {
        EnsembleManifest {
            seed: self.seed,
            window: self.window,
            target_energy: self.target_energy,
            draws: self.draws,
            accepted: self.copies.len(),
            acceptance_rate: self.acceptance_rate(),
            config_hash: config_hash.to_string(),
        }
    }

    /// One `BetheState` record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.copies {
            writeln!(w, "{}", s.to_json_line()?)?;
        }
        Ok(())
    }
}

/// Draw copy `k` from ChaCha stream `k` of `seed`, keep distinct states whose
/// energy is within `window` (relative) of `e L`, until `n_copies` are kept.
pub fn copy_ensemble(
    sol: &TbaSolution,
    n: usize,
    l: f64,
    n_copies: usize,
    window: f64,
    seed: u64,
) -> Result<CopyEnsemble> {
    if n_copies == 0 {
        return Err(Error::InvalidArgument("n_copies must be at least 1".into()));
    }
    let params = ModelParams::new(sol.c, l)?;
    let table = SlotTable::new(sol, n, l)?;
    let target = sol.energy_density * l;
    let mut seen = HashSet::new();
    let mut copies = Vec::new();
    let mut draws = 0usize;
    while copies.len() < n_copies {
        let qns = table.draw(&mut rng_for(seed, draws as u64))?;
        draws += 1;
        if seen.insert(qns.clone()) {
            let state = solve_bethe(&qns, params)?;
            if ((state.energy - target) / target).abs() <= window {
                copies.push(state);
            }
        }
        let rate = copies.len() as f64 / draws as f64;
        if draws >= 100 && rate < 0.01 {
            return Err(Error::LowAcceptance { rate, tries: draws });
        }
    }
    Ok(CopyEnsemble {
        copies,
        seed,
        window,
        target_energy: target,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tba::{solve_ntes, solve_tes};

    #[test]
    fn cold_thermal_state_is_a_fermi_sea() {
        let s = solve_tes(5.0, 1e-3, 1.0).unwrap();
        let q = representative_qns(&s, 11, 11.0).unwrap();
        assert_eq!(q, QnConfig::ground_state(11));
    }

    #[test]
    fn density_mismatch_is_rejected() {
        let s = solve_ntes(1.0, 1.0).unwrap();
        assert!(matches!(
            representative_qns(&s, 12, 10.0),
            Err(Error::DensityMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_filling_is_reproduced() {
        // Synthetic table with fillings exactly 1 on N slots and 0 elsewhere.
        let table = SlotTable::from_slots(
            vec![-4, -2, 0, 2, 4],
            vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            vec![0.0, 1.0, 1.0, 1.0, 0.0],
            3,
        )
        .unwrap();
        let mut rng = rng_for(7, 0);
        let q = table.draw(&mut rng).unwrap();
        assert_eq!(q.values(), vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn sampling_is_reproducible_and_parity_correct() {
        let s = solve_ntes(5.0, 1.0).unwrap();
        let a = sample_qns(&s, 12, 12.0, 42).unwrap();
        let b = sample_qns(&s, 12, 12.0, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        assert!(a.doubled().iter().all(|d| d.rem_euclid(2) == 1));
    }

    #[test]
    fn singleton_ensemble_with_open_window() {
        let s = solve_ntes(5.0, 1.0).unwrap();
        let e = copy_ensemble(&s, 12, 12.0, 1, f64::INFINITY, 3).unwrap();
        assert_eq!(e.copies.len(), 1);
        assert_eq!(e.draws, 1);
        assert_eq!(e.copies[0].qns, table_first(&s, 3));
    }

    #[test]
    fn fitted_inclusion_matches_targets() {
        let filling = vec![0.9, 0.7, 0.5, 0.5, 0.3, 0.1];
        let t = SlotTable::from_slots(
            (0..6).map(|i| 2 * i).collect(),
            vec![0.0; 6],
            filling.clone(),
            3,
        )
        .unwrap();
        let (pi, _) = inclusion(&t.odds, 3);
        for (p, f) in pi.iter().zip(&filling) {
            assert!((p - f).abs() < 1e-10);
        }
        // exact enumeration of the design
        let mut marg = [0.0; 6];
        let mut z = 0.0;
        for mask in 0u32..64 {
            if mask.count_ones() != 3 {
                continue;
            }
            let w: f64 = (0..6)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| t.odds[i])
                .product();
            z += w;
            for (i, m) in marg.iter_mut().enumerate() {
                if mask >> i & 1 == 1 {
                    *m += w;
                }
            }
        }
        for (m, f) in marg.iter().zip(&filling) {
            assert!((m / z - f).abs() < 1e-10);
        }
    }

    fn table_first(s: &TbaSolution, seed: u64) -> QnConfig {
        SlotTable::new(s, 12, 12.0)
            .unwrap()
            .draw(&mut rng_for(seed, 0))
            .unwrap()
    }
}
