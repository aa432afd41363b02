//! Broadened `g₁(k, ω)` grids, line shapes and the NTES/TES diagnostics.
//!
//! Momentum stays exactly discrete: every grid column is one multiple of
//! `2π/L`. Frequency is smeared with a Gaussian whose mass is integrated
//! exactly over each bin, so the grid carries the same total weight as the
//! lines it was built from.

use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::{ScanReport, SpectralLine};
use crate::tba::TbaKind;

pub const DEFAULT_SIGMA_OVER_EF: f64 = 0.1;
pub const DEFAULT_BIN_OVER_EF: f64 = 0.02;

/// Gaussian tails beyond this many σ are below 1e-18 of the line weight.
const SUPPORT_SIGMAS: f64 = 9.0;

/// Fermi scales `k_F = πN/L`, `ε_F = k_F²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Units {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub k_f: f64,
    pub e_f: f64,
}

impl Units {
    pub fn new(n: usize, l: f64) -> Self {
        let k_f = PI * n as f64 / l;
        Self {
            n,
            l,
            k_f,
            e_f: k_f * k_f,
        }
    }

    pub fn momentum(&self, k_int: i64) -> f64 {
        2.0 * PI * k_int as f64 / self.l
    }

    pub fn k_over_kf(&self, k_int: i64) -> f64 {
        self.momentum(k_int) / self.k_f
    }

    /// Nearest integer momentum for `k/k_F`.
    pub fn k_int_of(&self, k_over_kf: f64) -> i64 {
        (k_over_kf * self.k_f * self.l / (2.0 * PI)).round() as i64
    }

    pub fn to_ef(&self, omega: f64) -> f64 {
        omega / self.e_f
    }

    pub fn from_ef(&self, omega_over_ef: f64) -> f64 {
        omega_over_ef * self.e_f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumGrid {
    pub units: Units,
    /// Sorted integer momenta, one column each.
    pub k_values: Vec<i64>,
    /// Uniform edges, aligned to multiples of the bin width.
    pub omega_edges: Vec<f64>,
    /// `values[column][bin]`: weight density per unit ω.
    pub values: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl SpectrumGrid {
    pub fn bin_width(&self) -> f64 {
        self.omega_edges[1] - self.omega_edges[0]
    }

    pub fn bins(&self) -> usize {
        self.omega_edges.len() - 1
    }

    pub fn omega_centers(&self) -> Vec<f64> {
        self.omega_edges
            .windows(2)
            .map(|e| 0.5 * (e[0] + e[1]))
            .collect()
    }

    pub fn column(&self, k_int: i64) -> Option<&[f64]> {
        self.k_values
            .binary_search(&k_int)
            .ok()
            .map(|i| self.values[i].as_slice())
    }

    pub fn total_weight(&self) -> f64 {
        let dw = self.bin_width();
        self.values.iter().flatten().sum::<f64>() * dw
    }

    /// Linear interpolation in ω inside one column; zero outside the grid.
    fn sample(&self, column: usize, omega: f64) -> f64 {
        let dw = self.bin_width();
        let x = (omega - self.omega_edges[0]) / dw - 0.5;
        let col = &self.values[column];
        if x <= -0.5 || x >= col.len() as f64 - 0.5 {
            return 0.0;
        }
        let i = x.floor();
        let t = x - i;
        let at = |j: f64| {
            if j < 0.0 || j >= col.len() as f64 {
                0.0
            } else {
                col[j as usize]
            }
        };
        (1.0 - t) * at(i) + t * at(i + 1.0)
    }

    /// `k_over_kF, omega_over_eF, g1` where `g1` is the density per unit
    /// `ω/ε_F`, so the plotted surface integrates to the line weight.
    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        writeln!(w, "# config_hash={config_hash}")?;
        writeln!(w, "k_over_kF,omega_over_eF,g1")?;
        let centers = self.omega_centers();
        for (k, col) in self.k_values.iter().zip(&self.values) {
            let kk = self.units.k_over_kf(*k);
            for (om, v) in centers.iter().zip(col) {
                writeln!(
                    w,
                    "{kk:.12e},{:.12e},{:.12e}",
                    self.units.to_ef(*om),
                    v * self.units.e_f
                )?;
            }
        }
        Ok(())
    }

    pub fn manifest(
        &self,
        c: f64,
        kind: Option<TbaKind>,
        saturation: f64,
        config_hash: &str,
    ) -> GridManifest {
        GridManifest {
            c,
            n: self.units.n,
            l: self.units.l,
            kind: kind.map(|k| k.label().to_string()),
            temperature: kind.and_then(|k| k.temperature()),
            sigma: self.units.to_ef(self.sigma),
            omega_bin_width: self.units.to_ef(self.bin_width()),
            saturation,
            negative_weight_fraction: negative_weight_fraction(self),
            copies: 1,
            dbr_residual: None,
            omega_convention: "omega = E_base - E_intermediate, no chemical-potential shift".into(),
            g1_normalization: "sum over k of the integral of g1 d(omega/eF) equals the line weight"
                .into(),
            config_hash: config_hash.to_string(),
        }
    }
}

/// Written next to the grid CSV. `sigma` and `omega_bin_width` are in `ε_F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub c: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub kind: Option<String>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none", default)]
    pub temperature: Option<f64>,
    pub sigma: f64,
    pub omega_bin_width: f64,
    pub saturation: f64,
    pub negative_weight_fraction: f64,
    /// Number of averaged copies.
    pub copies: usize,
    /// Thermal runs only, see [`dbr_residual`].
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dbr_residual: Option<f64>,
    pub omega_convention: String,
    pub g1_normalization: String,
    pub config_hash: String,
}

fn gauss_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Deposit every line into its own column with a Gaussian of width `sigma`.
/// Bin masses are CDF differences, so each line's deposits telescope to its
/// weight.
pub fn assemble_grid(
    lines: &[SpectralLine],
    units: Units,
    omega_bin_width: f64,
    sigma: f64,
) -> Result<SpectrumGrid> {
    if lines.is_empty() {
        return Err(Error::InvalidArgument(
            "no spectral lines to assemble".into(),
        ));
    }
    if !(sigma > 0.0) || !(omega_bin_width > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "broadening {sigma} and bin width {omega_bin_width} must be positive"
        )));
    }
    let mut k_values: Vec<i64> = lines.iter().map(|x| x.k_int).collect();
    k_values.sort_unstable();
    k_values.dedup();

    let reach = SUPPORT_SIGMAS * sigma;
    let (lo, hi) = lines
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| {
            (a.min(x.omega), b.max(x.omega))
        });
    let first = ((lo - reach) / omega_bin_width).floor() as i64;
    let last = ((hi + reach) / omega_bin_width).ceil() as i64;
    let omega_edges: Vec<f64> = (first..=last).map(|j| j as f64 * omega_bin_width).collect();
    let bins = omega_edges.len() - 1;

    let mut values = vec![vec![0.0; bins]; k_values.len()];
    for x in lines {
        let col = &mut values[k_values.binary_search(&x.k_int).unwrap()];
        let b0 = (((x.omega - reach) / omega_bin_width).floor() as i64 - first).max(0) as usize;
        let b1 = ((((x.omega + reach) / omega_bin_width).ceil() as i64 - first) as usize).min(bins);
        let mut below = gauss_cdf((omega_edges[b0] - x.omega) / sigma);
        for (b, v) in col.iter_mut().enumerate().take(b1).skip(b0) {
            let upto = gauss_cdf((omega_edges[b + 1] - x.omega) / sigma);
            *v += x.weight * (upto - below) / omega_bin_width;
            below = upto;
        }
    }
    Ok(SpectrumGrid {
        units,
        k_values,
        omega_edges,
        values,
        sigma,
    })
}

/// Uniformly averaged lines of several copies.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedLines {
    pub c: f64,
    pub units: Units,
    pub kind: Option<TbaKind>,
    pub copies: usize,
    /// Mean of the copies' saturations.
    pub saturation: f64,
    pub lines: Vec<SpectralLine>,
}

pub fn average_copies(reports: &[ScanReport]) -> Result<MergedLines> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to average".into()))?;
    for r in &reports[1..] {
        if r.c != first.c || r.l != first.l || r.n != first.n || r.kind != first.kind {
            return Err(Error::Mismatch(format!(
                "copy (c={}, L={}, N={}, kind={:?}) differs from (c={}, L={}, N={}, kind={:?})",
                r.c, r.l, r.n, r.kind, first.c, first.l, first.n, first.kind
            )));
        }
    }
    let m = reports.len() as f64;
    let lines = reports
        .iter()
        .flat_map(|r| &r.lines)
        .map(|x| SpectralLine {
            weight: x.weight / m,
            log_weight: x.log_weight - m.ln(),
            ..x.clone()
        })
        .collect();
    Ok(MergedLines {
        c: first.c,
        units: Units::new(first.n, first.l),
        kind: first.kind,
        copies: reports.len(),
        saturation: reports.iter().map(|r| r.saturation).sum::<f64>() / m,
        lines,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineShape {
    pub k_int: i64,
    pub k_over_kf: f64,
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    pub rescaled: bool,
    pub units: Units,
}

impl LineShape {
    pub fn integral(&self) -> f64 {
        let dw = if self.omega.len() > 1 {
            self.omega[1] - self.omega[0]
        } else {
            0.0
        };
        self.values.iter().sum::<f64>() * dw
    }

    /// Frequency of the global maximum.
    pub fn peak_omega(&self) -> f64 {
        let i = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .unwrap_or(0);
        self.omega[i]
    }

    /// Local maxima whose topographic prominence is at least
    /// `min_relative_prominence` times the global maximum, as bin indices.
    pub fn local_maxima(&self, min_relative_prominence: f64) -> Vec<usize> {
        let v = &self.values;
        let top = v.iter().cloned().fold(0.0, f64::max);
        if top <= 0.0 {
            return Vec::new();
        }
        let mut peaks = Vec::new();
        let mut i = 1;
        while i + 1 < v.len() {
            if v[i] > v[i - 1] {
                // Walk across a plateau before deciding.
                let mut j = i;
                while j + 1 < v.len() && v[j + 1] == v[i] {
                    j += 1;
                }
                if j + 1 < v.len() && v[j + 1] < v[i] {
                    let h = v[i];
                    let left = v[..i]
                        .iter()
                        .rev()
                        .take_while(|&&x| x <= h)
                        .cloned()
                        .fold(h, f64::min);
                    let right = v[j + 1..]
                        .iter()
                        .take_while(|&&x| x <= h)
                        .cloned()
                        .fold(h, f64::min);
                    if h - left.max(right) >= min_relative_prominence * top {
                        peaks.push((i + j) / 2);
                    }
                }
                i = j + 1;
            } else {
                i += 1;
            }
        }
        peaks
    }

    /// Two columns, `omega_over_eF, g1` (density per unit `ω/ε_F`).
    pub fn write_csv<W: Write>(&self, mut w: W, config_hash: &str) -> Result<()> {
        writeln!(w, "# config_hash={config_hash}")?;
        writeln!(
            w,
            "# k_over_kF={:.12e} rescaled={}",
            self.k_over_kf, self.rescaled
        )?;
        writeln!(w, "omega_over_eF,g1")?;
        for (om, v) in self.omega.iter().zip(&self.values) {
            writeln!(
                w,
                "{:.12e},{:.12e}",
                self.units.to_ef(*om),
                v * self.units.e_f
            )?;
        }
        Ok(())
    }
}

/// The `k_int` column, optionally divided by its ω integral.
pub fn line_shape(grid: &SpectrumGrid, k_int: i64, rescale: bool) -> Result<LineShape> {
    let col = grid.column(k_int).ok_or(Error::MissingMomentum(k_int))?;
    let mut values = col.to_vec();
    if rescale {
        let mass = values.iter().sum::<f64>() * grid.bin_width();
        if !(mass > 0.0) {
            return Err(Error::EmptyColumn(k_int));
        }
        values.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(LineShape {
        k_int,
        k_over_kf: grid.units.k_over_kf(k_int),
        omega: grid.omega_centers(),
        values,
        rescaled: rescale,
        units: grid.units,
    })
}

/// Share of the grid weight at `ω < 0`. Bin edges sit on multiples of the
/// width, so zero is always an edge.
pub fn negative_weight_fraction(grid: &SpectrumGrid) -> f64 {
    let split = grid
        .omega_edges
        .partition_point(|&e| e < 0.0)
        .min(grid.bins());
    let neg: f64 = grid
        .values
        .iter()
        .map(|c| c[..split].iter().sum::<f64>())
        .sum();
    let all = neg
        + grid
            .values
            .iter()
            .map(|c| c[split..].iter().sum::<f64>())
            .sum::<f64>();
    if all > 0.0 {
        neg / all
    } else {
        0.0
    }
}

/// Deviation from `g(k, μ + x) = e^{-x/T} g(-k, μ - x)` for `x > 0`, summed
/// over mirrored column pairs and bin-spaced `x`:
/// `Σ |g(k, μ+x) - e^{-x/T} g(-k, μ-x)| / Σ (g(k, μ+x) + e^{-x/T} g(-k, μ-x))`.
/// With `ω = E_base - E_intermediate` the frequency is the removal energy, so
/// thermal occupation suppresses removal above `μ` by the Boltzmann factor.
/// Columns without a mirror are skipped. Zero when the relation holds, at
/// most one otherwise.
pub fn dbr_residual(grid: &SpectrumGrid, t: f64, mu: f64) -> f64 {
    let dw = grid.bin_width();
    let span = grid.omega_edges[grid.bins()] - grid.omega_edges[0];
    let steps = (span / dw).ceil() as usize + 1;
    let (mut dev, mut mass) = (0.0, 0.0);
    for (i, &k) in grid.k_values.iter().enumerate() {
        let Ok(j) = grid.k_values.binary_search(&-k) else {
            continue;
        };
        for s in 0..steps {
            let x = (s as f64 + 0.5) * dw;
            let above = grid.sample(i, mu + x);
            let below = (-x / t).exp() * grid.sample(j, mu - x);
            dev += (above - below).abs();
            mass += above + below;
        }
    }
    if mass > 0.0 {
        dev / mass
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::{ExcitationTag, TypeClass};

    fn line(k_int: i64, omega: f64, weight: f64) -> SpectralLine {
        SpectralLine {
            k_int,
            omega,
            weight,
            log_weight: weight.ln(),
            tag: ExcitationTag::ZERO,
            removal: 0,
            type_class: TypeClass::Other,
        }
    }

    #[test]
    fn single_line_is_a_unit_gaussian() {
        let units = Units::new(4, 4.0);
        let g = assemble_grid(&[line(0, 0.0, 1.0)], units, 0.01, 0.1).unwrap();
        assert_eq!(g.k_values, vec![0]);
        assert!((g.total_weight() - 1.0).abs() < 1e-12);
        let s = line_shape(&g, 0, false).unwrap();
        assert!(s.peak_omega().abs() < 0.01);
        let peak = s.values.iter().cloned().fold(0.0, f64::max);
        // Bin averaging near the top lowers it by h²/6σ².
        assert!((peak * 0.1 * (2.0 * PI).sqrt() - 1.0).abs() < 2.5e-3);
        assert_eq!(s.local_maxima(0.01).len(), 1);
    }

    #[test]
    fn mirrored_lines_give_a_symmetric_column() {
        let g = assemble_grid(
            &[line(0, -0.7, 0.5), line(0, 0.7, 0.5)],
            Units::new(3, 3.0),
            0.05,
            0.2,
        )
        .unwrap();
        let col = g.column(0).unwrap();
        for (a, b) in col.iter().zip(col.iter().rev()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((negative_weight_fraction(&g) - 0.5).abs() < 1e-12);
        assert_eq!(line_shape(&g, 0, true).unwrap().local_maxima(0.05).len(), 2);
    }

    #[test]
    fn positive_lines_have_no_negative_weight() {
        let lines = [line(1, 2.0, 0.3), line(-2, 5.0, 0.1)];
        let g = assemble_grid(&lines, Units::new(3, 3.0), 0.05, 0.1).unwrap();
        assert!(negative_weight_fraction(&g) < 1e-15);
        assert_eq!(g.k_values, vec![-2, 1]);
        assert!(matches!(
            line_shape(&g, 0, false),
            Err(Error::MissingMomentum(0))
        ));
    }

    #[test]
    fn rescaled_shape_has_unit_mass_and_empty_column_is_refused() {
        let lines = [line(2, 1.0, 0.3), line(2, -3.0, 0.2), line(0, 0.0, 0.0)];
        let g = assemble_grid(&lines, Units::new(5, 5.0), 0.03, 0.15).unwrap();
        let s = line_shape(&g, 2, true).unwrap();
        assert!((s.integral() - 1.0).abs() < 1e-12);
        assert!(matches!(
            line_shape(&g, 0, true),
            Err(Error::EmptyColumn(0))
        ));
        assert!(line_shape(&g, 0, false).is_ok());
    }

    #[test]
    fn exact_detailed_balance_has_zero_residual() {
        let (t, mu) = (0.8, 0.3);
        let frame = assemble_grid(
            &[line(-1, -4.0, 1.0), line(1, 4.0, 1.0)],
            Units::new(4, 4.0),
            0.1,
            0.5,
        )
        .unwrap();
        let centers = frame.omega_centers();
        let balanced = SpectrumGrid {
            values: frame
                .k_values
                .iter()
                .map(|&k| {
                    centers
                        .iter()
                        .map(|&om| {
                            let x = om - mu;
                            let bump = (-x * x).exp();
                            if k > 0 {
                                bump * (-x / t).exp()
                            } else {
                                bump
                            }
                        })
                        .collect()
                })
                .collect(),
            ..frame.clone()
        };
        assert!(dbr_residual(&balanced, t, mu) < 1e-12);
        let r = dbr_residual(&frame, t, mu);
        assert!(r > 0.1 && r <= 1.0);
    }

    #[test]
    fn units_round_trip() {
        let u = Units::new(12, 12.0);
        assert!((u.k_over_kf(3) - 0.5).abs() < 1e-15);
        assert_eq!(u.k_int_of(0.5), 3);
        for om in [-13.7, 0.0, 2.5e-3, 91.0] {
            assert!((u.from_ef(u.to_ef(om)) - om).abs() <= 1e-12 * om.abs().max(1.0));
        }
    }

    #[test]
    fn identical_copies_average_to_one() {
        let report = |sat: f64| ScanReport {
            c: 1.0,
            l: 2.0,
            n: 2,
            base_qns: crate::QnConfig::from_doubled(vec![-1, 1]).unwrap(),
            thresholds: crate::scan::ScanThresholds::default()
                .resolve(2, 2.0)
                .unwrap(),
            saturation: sat,
            classes_visited: 1,
            truncation_reason: crate::scan::TruncationReason::Saturation,
            failed_solves: 0,
            lines_above_energy_cap: 0,
            lines: vec![line(1, 0.5, 0.4), line(0, -0.2, 0.6)],
            kind: Some(TbaKind::Ntes),
            config_hash: None,
        };
        let one = average_copies(&[report(0.9)]).unwrap();
        let two = average_copies(&[report(0.9), report(0.7)]).unwrap();
        assert!((two.saturation - 0.8).abs() < 1e-15);
        let u = one.units;
        let g1 = assemble_grid(&one.lines, u, 0.05, 0.1).unwrap();
        let g2 = assemble_grid(&two.lines, u, 0.05, 0.1).unwrap();
        for (a, b) in g1.values.iter().flatten().zip(g2.values.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut other = report(0.9);
        other.kind = Some(TbaKind::Tes { temperature: 1.0 });
        assert!(matches!(
            average_copies(&[report(0.9), other]),
            Err(Error::Mismatch(_))
        ));
    }
}
