//! Thermodynamic Bethe ansatz for thermal states and for the stationary state
//! after the BEC-to-interacting quench.
//!
//! Both equations have even driving terms, so everything is solved on the
//! positive half-line with the folded kernel `K(λ-μ) + K(λ+μ)`. Off-grid
//! values of `ε` and of the counting function come from Nyström interpolation,
//! which is exact to quadrature accuracy and needs no separate extrapolation
//! beyond the cutoff.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use roots::{find_root_brent, SimpleConvergency};
use serde::{Deserialize, Serialize};

use crate::bethe::kernel;
use crate::error::{Error, Result};
use crate::quadrature::Rule;

const PANEL_NODES: usize = 8;
const RESIDUAL_TOL: f64 = 1e-11;
const EPS_CLAMP: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TbaKind {
    #[serde(rename = "TES")]
    Tes {
        #[serde(rename = "T")]
        temperature: f64,
    },
    #[serde(rename = "NTES")]
    Ntes,
}

impl TbaKind {
    pub fn label(&self) -> &'static str {
        match self {
            TbaKind::Tes { .. } => "TES",
            TbaKind::Ntes => "NTES",
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self {
            TbaKind::Tes { temperature } => Some(*temperature),
            TbaKind::Ntes => None,
        }
    }
}

/// Discretisation knobs. `None` fields take the defaults described on
/// [`QuadratureGrid::build`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TbaOptions {
    pub cutoff: Option<f64>,
    /// Scales every panel width; 0.5 halves them.
    pub refine: Option<f64>,
}

/// Composite Gauss-Legendre grid on `[-Λ, Λ]`, symmetric, excluding `λ = 0`.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    /// Positive panel edges, starting at 0 and ending at `Λ`.
    pub edges: Vec<f64>,
    /// Positive-half nodes, ascending, and their weights.
    pub half_nodes: Vec<f64>,
    pub half_weights: Vec<f64>,
    pub cutoff: f64,
}

impl QuadratureGrid {
    /// Core panels of width `min(c, 1/2)` out to a few times the width of the
    /// occupied region, then geometrically growing panels to `Λ`. The quench
    /// state additionally grades panels toward `λ = 0`, where its driving term
    /// is logarithmically singular.
    pub fn build(c: f64, n: f64, kind: TbaKind, opts: &TbaOptions) -> Self {
        let t = kind.temperature().unwrap_or(0.0);
        let refine = opts.refine.unwrap_or(1.0);
        let cutoff = opts.cutoff.unwrap_or_else(|| default_cutoff(c, kind));
        let h = c.min(0.5) * refine;
        let width = t.sqrt().max((PI * n).min(2.0 * (c * n).sqrt())).max(h);
        let core = cutoff.min(8.0 * width);
        let mut edges = vec![0.0];
        if matches!(kind, TbaKind::Ntes) {
            edges.extend((1..=7).rev().map(|k| h * 0.2f64.powi(k)));
        }
        let mut x = h;
        while x < core - 1e-9 * h {
            edges.push(x);
            x += h;
        }
        let growth = 1.0 + 0.12 * refine;
        let mut x = core;
        while x < cutoff * (1.0 - 1e-9) {
            edges.push(x);
            x = (x * growth).max(x + h);
        }
        edges.push(cutoff);
        edges.sort_by(f64::total_cmp);
        edges.dedup_by(|a, b| (*a - *b).abs() < 1e-14 * cutoff);
        let rule = Rule::new(PANEL_NODES);
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        for w in edges.windows(2) {
            rule.push_panel(w[0], w[1], &mut nodes, &mut weights);
        }
        Self {
            edges,
            half_nodes: nodes,
            half_weights: weights,
            cutoff,
        }
    }

    /// Total node count `M` on the full line.
    pub fn m(&self) -> usize {
        2 * self.half_nodes.len()
    }

    /// Full symmetric node list, ascending.
    pub fn nodes(&self) -> Vec<f64> {
        self.half_nodes
            .iter()
            .rev()
            .map(|x| -x)
            .chain(self.half_nodes.iter().copied())
            .collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.half_weights
            .iter()
            .rev()
            .chain(self.half_weights.iter())
            .copied()
            .collect()
    }
}

pub fn default_cutoff(c: f64, kind: TbaKind) -> f64 {
    match kind {
        TbaKind::Tes { temperature } => 20.0 * 1f64.max(c).max(temperature.sqrt()),
        TbaKind::Ntes => 20.0 * 1f64.max(c),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailClass {
    PowerLaw,
    Exponential,
}

/// Least-squares fit of `ln ρ` against `ln λ`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TailFit {
    /// `p` in `ρ ≈ A / λ^p`.
    pub exponent: f64,
    pub coefficient: f64,
    /// Local exponents on the inner and outer quarter of the window.
    pub inner_exponent: f64,
    pub outer_exponent: f64,
    pub class: TailClass,
}

#[derive(Clone, Debug)]
pub struct TbaSolution {
    pub kind: TbaKind,
    pub c: f64,
    pub target_density: f64,
    pub grid: QuadratureGrid,
    /// Half-grid values, aligned with `grid.half_nodes`.
    pub epsilon: Vec<f64>,
    pub filling: Vec<f64>,
    pub rho: Vec<f64>,
    pub rho_total: Vec<f64>,
    pub multiplier: f64,
    pub density: f64,
    pub energy_density: f64,
    /// `A` in the `A/λ⁴ + B/λ⁶` tail used for the moments beyond the cutoff
    /// (quench state only, zero otherwise).
    pub tail_coefficient: f64,
    /// `B` in the same tail.
    pub tail_correction: f64,
    pub fixed_point_residual: f64,
}

/// Folded kernel `(K(x_i - x_j) + K(x_i + x_j)) w_j / 2π`.
fn folded_kernel(grid: &QuadratureGrid, c: f64) -> DMatrix<f64> {
    let x = &grid.half_nodes;
    let w = &grid.half_weights;
    let m = x.len();
    DMatrix::from_fn(m, m, |i, j| {
        (kernel(x[i] - x[j], c) + kernel(x[i] + x[j], c)) * w[j] / (2.0 * PI)
    })
}

fn driving(x: f64, c: f64, kind: TbaKind, h: f64) -> f64 {
    match kind {
        TbaKind::Tes { temperature } => (x * x - h) / temperature,
        TbaKind::Ntes => {
            let y = (x / c).powi(2);
            (y * (y + 0.25)).ln() - h
        }
    }
}

/// `ln(1 + e^{-ε})`, stable for both signs.
#[inline]
fn softplus_neg(e: f64) -> f64 {
    if e > 0.0 {
        (-e).exp().ln_1p()
    } else {
        -e + e.exp().ln_1p()
    }
}

#[inline]
fn filling_of(e: f64) -> f64 {
    1.0 / (1.0 + e.clamp(-EPS_CLAMP, EPS_CLAMP).exp())
}

struct Workspace {
    kf: DMatrix<f64>,
    grid: QuadratureGrid,
    c: f64,
    kind: TbaKind,
}

struct FixedMultiplier {
    epsilon: Vec<f64>,
    filling: Vec<f64>,
    rho_total: Vec<f64>,
    rho: Vec<f64>,
    residual: f64,
    /// `dε/dh` and `dρ/dh` at fixed grid.
    d_epsilon: Vec<f64>,
    d_rho: Vec<f64>,
}

impl Workspace {
    fn new(c: f64, n: f64, kind: TbaKind, opts: &TbaOptions) -> Self {
        let grid = QuadratureGrid::build(c, n, kind, opts);
        let kf = folded_kernel(&grid, c);
        Self { kf, grid, c, kind }
    }

    fn jacobian(&self, filling: &[f64]) -> DMatrix<f64> {
        let m = filling.len();
        DMatrix::from_fn(m, m, |a, b| {
            let delta = if a == b { 1.0 } else { 0.0 };
            delta - self.kf[(a, b)] * filling[b]
        })
    }

    fn residual(&self, eps: &[f64], d: &[f64]) -> Vec<f64> {
        let m = eps.len();
        let lf = DVector::from_iterator(m, eps.iter().map(|&e| softplus_neg(e)));
        let conv = &self.kf * lf;
        (0..m).map(|i| eps[i] - d[i] + conv[i]).collect()
    }

    /// Newton on `F(ε) = ε - d + K ln(1 + e^{-ε})`. Its Jacobian `1 - K ϑ` is
    /// also the operator of the density equation and of the linear response
    /// to the multiplier, so one factorisation at the solution gives `ρ`,
    /// `dε/dh` and `dρ/dh`.
    fn solve_fixed(&self, h: f64, start: Option<&[f64]>) -> Result<FixedMultiplier> {
        let x = &self.grid.half_nodes;
        let m = x.len();
        let d: Vec<f64> = x
            .iter()
            .map(|&x| driving(x, self.c, self.kind, h))
            .collect();
        let mut eps: Vec<f64> = start.map(|s| s.to_vec()).unwrap_or_else(|| d.clone());
        // Residuals are measured relative to the driving term: far out it is
        // large and only its leading digits are representable.
        let scaled = |f: &[f64]| {
            f.iter()
                .zip(&d)
                .fold(0.0f64, |a, (f, d)| a.max(f.abs() / (1.0 + d.abs())))
        };
        let mut f = self.residual(&eps, &d);
        let mut res = scaled(&f);
        let mut iterations = 0;
        while res > RESIDUAL_TOL {
            iterations += 1;
            if iterations > 100 {
                return Err(Error::TbaNonConvergence { residual: res });
            }
            let th: Vec<f64> = eps.iter().map(|&e| filling_of(e)).collect();
            let step = self
                .jacobian(&th)
                .lu()
                .solve(&DVector::from_column_slice(&f))
                .ok_or(Error::TbaNonConvergence { residual: res })?;
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = eps
                    .iter()
                    .zip(step.iter())
                    .map(|(e, s)| e - t * s)
                    .collect();
                let ft = self.residual(&trial, &d);
                let rt = scaled(&ft);
                if rt < res || t < 1e-3 {
                    eps = trial;
                    f = ft;
                    res = rt;
                    break;
                }
                t *= 0.5;
            }
        }
        let filling: Vec<f64> = eps.iter().map(|&e| filling_of(e)).collect();
        let lu = self.jacobian(&filling).lu();
        let fail = || Error::TbaNonConvergence { residual: res };
        let rho_total: Vec<f64> = lu
            .solve(&DVector::from_element(m, 1.0 / (2.0 * PI)))
            .ok_or_else(fail)?
            .iter()
            .copied()
            .collect();
        let rho: Vec<f64> = rho_total.iter().zip(&filling).map(|(r, t)| r * t).collect();

        // ∂d/∂h is constant: -1/T or -1.
        let dd = match self.kind {
            TbaKind::Tes { temperature } => -1.0 / temperature,
            TbaKind::Ntes => -1.0,
        };
        let d_eps = lu.solve(&DVector::from_element(m, dd)).ok_or_else(fail)?;
        let d_fill: Vec<f64> = (0..m)
            .map(|i| -filling[i] * (1.0 - filling[i]) * d_eps[i])
            .collect();
        let src = DVector::from_iterator(m, (0..m).map(|i| d_fill[i] * rho_total[i]));
        let d_rt = lu.solve(&(&self.kf * src)).ok_or_else(fail)?;
        let d_rho = (0..m)
            .map(|i| d_fill[i] * rho_total[i] + filling[i] * d_rt[i])
            .collect();
        Ok(FixedMultiplier {
            epsilon: eps,
            filling,
            rho_total,
            rho,
            residual: res,
            d_epsilon: d_eps.iter().copied().collect(),
            d_rho,
        })
    }

    /// Moments `(n, e)` and the tail coefficients. Linear in `rho`.
    fn moments(&self, rho: &[f64]) -> (f64, f64, (f64, f64)) {
        let x = &self.grid.half_nodes;
        let w = &self.grid.half_weights;
        let mut n = 0.0;
        let mut e = 0.0;
        for i in 0..x.len() {
            n += 2.0 * w[i] * rho[i];
            e += 2.0 * w[i] * x[i] * x[i] * rho[i];
        }
        let mut tail = (0.0, 0.0);
        if matches!(self.kind, TbaKind::Ntes) {
            tail = quartic_tail(x, rho);
            let (a, b) = tail;
            let lam = self.grid.cutoff;
            n += 2.0 * (a / (3.0 * lam.powi(3)) + b / (5.0 * lam.powi(5)));
            e += 2.0 * (a / lam + b / (3.0 * lam.powi(3)));
        }
        (n, e, tail)
    }
}

/// Least-squares `ρ λ⁴ ≈ A + B/λ²` over the outer 20% of the half-grid nodes.
fn quartic_tail(x: &[f64], rho: &[f64]) -> (f64, f64) {
    let m = x.len();
    let start = m - (m / 5).max(2);
    let (mut s0, mut s1, mut s2, mut y0, mut y1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in start..m {
        let u = x[i].powi(-2);
        let y = rho[i] * x[i].powi(4);
        s0 += 1.0;
        s1 += u;
        s2 += u * u;
        y0 += y;
        y1 += y * u;
    }
    let det = s0 * s2 - s1 * s1;
    ((s2 * y0 - s1 * y1) / det, (s0 * y1 - s1 * y0) / det)
}

/// Starting point for the multiplier search.
#[derive(Clone, Debug, Default)]
struct WarmStart {
    multiplier: Option<f64>,
    epsilon: Option<Vec<f64>>,
}

fn validate(c: f64, n: f64, kind: TbaKind) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParams(format!("c must be positive, got {c}")));
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "density must be positive, got {n}"
        )));
    }
    if let TbaKind::Tes { temperature } = kind {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "T must be positive, got {temperature}"
            )));
        }
    }
    Ok(())
}

/// Tune the multiplier by Newton's method on `n(h)`, which is increasing,
/// falling back to bisection once a sign change is bracketed.
fn solve_tuned(
    c: f64,
    n: f64,
    kind: TbaKind,
    opts: &TbaOptions,
    warm: WarmStart,
) -> Result<TbaSolution> {
    validate(c, n, kind)?;
    let ws = Workspace::new(c, n, kind, opts);
    let scale = match kind {
        TbaKind::Tes { temperature } => temperature.max((PI * n).powi(2).min(4.0 * c * n)),
        TbaKind::Ntes => 1.0,
    };
    let mut h = warm.multiplier.unwrap_or(0.0);
    let mut eps = warm.epsilon.filter(|e| e.len() == ws.grid.half_nodes.len());
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut last_gap = f64::INFINITY;
    for _ in 0..200 {
        let sol = ws.solve_fixed(h, eps.as_deref())?;
        let (dens, _, _) = ws.moments(&sol.rho);
        let (slope, _, _) = ws.moments(&sol.d_rho);
        let gap = dens - n;
        if gap.abs() <= 1e-13 * n || (gap.abs() <= 1e-9 * n && gap.abs() >= last_gap) {
            let (density, energy_density, (tail_coefficient, tail_correction)) =
                ws.moments(&sol.rho);
            return Ok(TbaSolution {
                kind,
                c,
                target_density: n,
                grid: ws.grid,
                epsilon: sol.epsilon,
                filling: sol.filling,
                rho: sol.rho,
                rho_total: sol.rho_total,
                multiplier: h,
                density,
                energy_density,
                tail_coefficient,
                tail_correction,
                fixed_point_residual: sol.residual,
            });
        }
        last_gap = gap.abs();
        if gap < 0.0 {
            lo = lo.max(h);
        } else {
            hi = hi.min(h);
        }
        let max_step = 4.0 * scale;
        let mut next = if slope > 0.0 {
            h - gap / slope
        } else {
            f64::NAN
        };
        if !next.is_finite() || (next - h).abs() > max_step {
            next = h + max_step * if gap < 0.0 { 1.0 } else { -1.0 };
        }
        if next <= lo || next >= hi {
            next = if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo + max_step
            } else {
                hi - max_step
            };
        }
        let dh = next - h;
        eps = Some(
            sol.epsilon
                .iter()
                .zip(&sol.d_epsilon)
                .map(|(e, de)| e + de * dh)
                .collect(),
        );
        h = next;
    }
    Err(Error::Bracketing(
        "density multiplier did not converge".into(),
    ))
}

/// Thermal state at temperature `t` and density `n`.
pub fn solve_tes(c: f64, t: f64, n: f64) -> Result<TbaSolution> {
    solve_tes_with(c, t, n, &TbaOptions::default())
}

pub fn solve_tes_with(c: f64, t: f64, n: f64, opts: &TbaOptions) -> Result<TbaSolution> {
    solve_tuned(
        c,
        n,
        TbaKind::Tes { temperature: t },
        opts,
        WarmStart::default(),
    )
}

/// Stationary state after the quench from the non-interacting ground state.
pub fn solve_ntes(c: f64, n: f64) -> Result<TbaSolution> {
    solve_ntes_with(c, n, &TbaOptions::default())
}

pub fn solve_ntes_with(c: f64, n: f64, opts: &TbaOptions) -> Result<TbaSolution> {
    solve_tuned(c, n, TbaKind::Ntes, opts, WarmStart::default())
}

/// Temperature whose thermal state at density `n` has energy density
/// `e_target`.
pub fn match_temperature(c: f64, n: f64, e_target: f64) -> Result<f64> {
    match_temperature_with(c, n, e_target, &TbaOptions::default())
}

pub fn match_temperature_with(c: f64, n: f64, e_target: f64, opts: &TbaOptions) -> Result<f64> {
    if !(e_target > 0.0) {
        return Err(Error::InvalidParams(format!(
            "target energy must be positive, got {e_target}"
        )));
    }
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let warm: RefCell<WarmStart> = RefCell::new(WarmStart::default());
    // Energy grows monotonically with T; work in ln T.
    let gap = |ln_t: f64| -> f64 {
        let start = warm.borrow().clone();
        match solve_tuned(
            c,
            n,
            TbaKind::Tes {
                temperature: ln_t.exp(),
            },
            opts,
            start,
        ) {
            Ok(s) => {
                *warm.borrow_mut() = WarmStart {
                    multiplier: Some(s.multiplier),
                    epsilon: None,
                };
                s.energy_density / e_target - 1.0
            }
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };
    // Classical estimate e ≈ n T / 2, then expand.
    let guess = (2.0 * e_target / n).max(1e-3).ln();
    let (mut lo, mut hi) = (guess - 0.5, guess + 0.5);
    let (mut g_lo, mut g_hi) = (gap(lo), gap(hi));
    let mut steps = 0;
    while !(g_lo < 0.0 && g_hi > 0.0) {
        if let Some(e) = failure.borrow_mut().take() {
            return Err(e);
        }
        steps += 1;
        if steps > 30 {
            return Err(Error::Bracketing("temperature".into()));
        }
        if g_lo >= 0.0 {
            hi = lo;
            g_hi = g_lo;
            lo -= 1.0;
            g_lo = gap(lo);
        } else {
            lo = hi;
            g_lo = g_hi;
            hi += 1.0;
            g_hi = gap(hi);
        }
    }
    let mut conv = SimpleConvergency {
        eps: 1e-5,
        max_iter: 100,
    };
    let ln_t = find_root_brent(lo, hi, &gap, &mut conv)
        .map_err(|e| Error::Bracketing(format!("temperature: {e:?}")))?;
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    Ok(ln_t.exp())
}

pub fn energy_density(sol: &TbaSolution) -> f64 {
    sol.energy_density
}

impl TbaSolution {
    fn folded(&self, lambda: f64, x: f64) -> f64 {
        kernel(lambda - x, self.c) + kernel(lambda + x, self.c)
    }

    /// `ε(λ)` anywhere on the real line.
    pub fn epsilon_at(&self, lambda: f64) -> f64 {
        let g = &self.grid;
        let conv: f64 = (0..g.half_nodes.len())
            .map(|j| {
                self.folded(lambda, g.half_nodes[j])
                    * g.half_weights[j]
                    * softplus_neg(self.epsilon[j])
            })
            .sum();
        driving(lambda.abs(), self.c, self.kind, self.multiplier) - conv / (2.0 * PI)
    }

    pub fn filling_at(&self, lambda: f64) -> f64 {
        filling_of(self.epsilon_at(lambda))
    }

    /// `ρ_t(λ) = ρ + ρ_h` anywhere on the real line.
    pub fn rho_total_at(&self, lambda: f64) -> f64 {
        let g = &self.grid;
        let conv: f64 = (0..g.half_nodes.len())
            .map(|j| self.folded(lambda, g.half_nodes[j]) * g.half_weights[j] * self.rho[j])
            .sum();
        (1.0 + conv) / (2.0 * PI)
    }

    pub fn rho_at(&self, lambda: f64) -> f64 {
        self.filling_at(lambda) * self.rho_total_at(lambda)
    }

    /// `∫₀^λ ρ_t`, in closed form from the Nyström representation. Odd in λ.
    pub fn counting(&self, lambda: f64) -> f64 {
        let g = &self.grid;
        let c = self.c;
        let s: f64 = (0..g.half_nodes.len())
            .map(|j| {
                let x = g.half_nodes[j];
                g.half_weights[j]
                    * self.rho[j]
                    * 2.0
                    * (((lambda - x) / c).atan() + ((lambda + x) / c).atan())
            })
            .sum();
        (lambda + s) / (2.0 * PI)
    }

    /// `∫₀^λ ρ` for `λ ≥ 0`, including the analytic tail beyond the cutoff.
    pub fn cumulative_density(&self, lambda: f64) -> f64 {
        let lambda = lambda.abs();
        let g = &self.grid;
        let rule = Rule::new(PANEL_NODES);
        let mut total = 0.0;
        let mut k = 0;
        for w in g.edges.windows(2) {
            if lambda >= w[1] {
                for _ in 0..PANEL_NODES {
                    total += g.half_weights[k] * self.rho[k];
                    k += 1;
                }
            } else {
                if lambda > w[0] {
                    let (mut xs, mut ws) = (Vec::new(), Vec::new());
                    rule.push_panel(w[0], lambda, &mut xs, &mut ws);
                    total += xs
                        .iter()
                        .zip(&ws)
                        .map(|(x, w)| w * self.rho_at(*x))
                        .sum::<f64>();
                }
                return total;
            }
        }
        if self.tail_coefficient > 0.0 && lambda > g.cutoff {
            total += self.tail_coefficient / 3.0 * (g.cutoff.powi(-3) - lambda.powi(-3))
                + self.tail_correction / 5.0 * (g.cutoff.powi(-5) - lambda.powi(-5));
        }
        total
    }

    /// `ln ρ` at node `i`, without underflow where the filling is tiny.
    fn ln_rho(&self, i: usize) -> f64 {
        self.rho_total[i].ln() - softplus_neg(-self.epsilon[i])
    }
}

/// Fit over nodes with `lo ≤ λ ≤ hi`.
pub fn tail_exponent_window(sol: &TbaSolution, lo: f64, hi: f64) -> Result<TailFit> {
    let g = &sol.grid;
    let pts: Vec<(f64, f64)> = (0..g.half_nodes.len())
        .filter(|&i| g.half_nodes[i] >= lo && g.half_nodes[i] <= hi)
        .map(|i| (g.half_nodes[i].ln(), sol.ln_rho(i)))
        .collect();
    if pts.len() < 16 {
        return Err(Error::InsufficientTail(format!(
            "{} nodes in [{lo}, {hi}], need 16",
            pts.len()
        )));
    }
    let (slope, intercept) = least_squares(&pts);
    let q = pts.len() / 4;
    let (inner, _) = least_squares(&pts[..q]);
    let (outer, _) = least_squares(&pts[pts.len() - q..]);
    let class = if (outer - inner).abs() > 0.25 * slope.abs().max(1.0) {
        TailClass::Exponential
    } else {
        TailClass::PowerLaw
    };
    Ok(TailFit {
        exponent: -slope,
        coefficient: intercept.exp(),
        inner_exponent: -inner,
        outer_exponent: -outer,
        class,
    })
}

/// Fit over the outer decade `[Λ/10, Λ]`; needs `Λ ≥ 20 max(1, c)`.
pub fn tail_exponent(sol: &TbaSolution) -> Result<TailFit> {
    let lam = sol.grid.cutoff;
    if lam < 20.0 * 1f64.max(sol.c) * (1.0 - 1e-12) {
        return Err(Error::InsufficientTail(format!(
            "cutoff {lam} below 20 max(1, c) = {}",
            20.0 * 1f64.max(sol.c)
        )));
    }
    tail_exponent_window(sol, lam / 10.0, lam)
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// JSON header accompanying the CSV export.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TbaHeader {
    pub kind: String,
    pub c: f64,
    #[serde(rename = "T")]
    pub temperature: Option<f64>,
    pub multiplier: f64,
    pub density: f64,
    pub energy_density: f64,
    pub tail_exponent: Option<f64>,
    pub tail_class: Option<TailClass>,
    #[serde(rename = "Lambda")]
    pub cutoff: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub config_hash: String,
}

impl TbaSolution {
    pub fn header(&self, config_hash: &str) -> TbaHeader {
        let fit = tail_exponent(self).ok();
        TbaHeader {
            kind: self.kind.label().to_string(),
            c: self.c,
            temperature: self.kind.temperature(),
            multiplier: self.multiplier,
            density: self.density,
            energy_density: self.energy_density,
            tail_exponent: fit.map(|f| f.exponent),
            tail_class: fit.map(|f| f.class),
            cutoff: self.grid.cutoff,
            m: self.grid.m(),
            config_hash: config_hash.to_string(),
        }
    }

    /// Columns `lambda, epsilon, filling, rho` over the full symmetric grid.
    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        writeln!(w, "# config_hash={config_hash}")?;
        writeln!(w, "lambda,epsilon,filling,rho")?;
        let m = self.grid.half_nodes.len();
        let rows = (0..m)
            .rev()
            .map(|i| (-1.0, i))
            .chain((0..m).map(|i| (1.0, i)));
        for (sign, i) in rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                sign * self.grid.half_nodes[i],
                self.epsilon[i],
                self.filling[i],
                self.rho[i]
            )?;
        }
        Ok(())
    }
}
