//! Scan of the `(N-1)`-particle sector reached by `Ψ(0)` from a base state.
//!
//! The field operator removes one particle, so every intermediate state is
//! reached from one of the `N` references `base ∖ {I_i}` (after the uniform
//! `-1/2` parity shift) by particle-hole moves. A configuration `r` with holes
//! `H` and particles `P` relative to a reference is decomposed by pairing the
//! sorted holes with the sorted particles; this pairing minimises the total
//! displacement. The tag counts the moves (`N_p`), their rightward and
//! leftward displacement (`P_m`, `P_l`, in slots of `2π/L`) and how many of
//! them go left (`N_l`).
//!
//! A configuration is reachable from several references; it is only counted
//! under the one giving the cheapest decomposition, which makes the scan
//! free of double counting.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;
#[cfg(target_arch = "wasm32")]
use web_time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bethe::{solve_bethe_from, BetheState};
use crate::error::{Error, Result};
use crate::form_factor::field_form_factor;
use crate::qn::QnConfig;
use crate::tba::TbaKind;

/// Shift applied to the doubled quantum numbers of the remaining particles.
pub const PARITY_SHIFT_DOUBLED: i64 = -1;

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct ExcitationTag {
    #[serde(rename = "P_m")]
    pub p_m: u32,
    #[serde(rename = "N_p")]
    pub n_p: u32,
    #[serde(rename = "P_l")]
    pub p_l: u32,
    #[serde(rename = "N_l")]
    pub n_l: u32,
}

impl ExcitationTag {
    pub const ZERO: Self = Self {
        p_m: 0,
        n_p: 0,
        p_l: 0,
        n_l: 0,
    };

    pub fn new(p_m: u32, n_p: u32, p_l: u32, n_l: u32) -> Result<Self> {
        let t = Self { p_m, n_p, p_l, n_l };
        if t.is_valid() {
            Ok(t)
        } else {
            Err(Error::InvalidTag(t.to_string()))
        }
    }

    /// Every move carries at least one slot, rightward moves account for
    /// `P_m` and leftward ones for `P_l`.
    pub fn is_valid(&self) -> bool {
        if self.n_l > self.n_p {
            return false;
        }
        let n_r = self.n_p - self.n_l;
        (n_r == 0) == (self.p_m == 0)
            && (self.n_l == 0) == (self.p_l == 0)
            && n_r <= self.p_m
            && self.n_l <= self.p_l
    }

    pub fn rightward(&self) -> u32 {
        self.n_p - self.n_l
    }
}

impl fmt::Display for ExcitationTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{P_m={}, N_p={}, P_l={}, N_l={}}}",
            self.p_m, self.n_p, self.p_l, self.n_l
        )
    }
}

/// How the remaining quantum numbers change parity when one is removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceShift {
    /// All shift by `-1/2`.
    Down,
    /// All shift by `+1/2`.
    Up,
    /// Particles left of the removed one shift by `+1/2`, those to its right
    /// by `-1/2`. This keeps every rapidity close to its value in the base
    /// state, since dropping a scattering phase pulls each neighbour's
    /// counting function towards the removed particle by less than half a
    /// slot.
    #[default]
    Nearest,
}

impl ReferenceShift {
    fn doubled(self, j: usize, removal: usize) -> i64 {
        match self {
            ReferenceShift::Down => PARITY_SHIFT_DOUBLED,
            ReferenceShift::Up => -PARITY_SHIFT_DOUBLED,
            ReferenceShift::Nearest if j < removal => 1,
            ReferenceShift::Nearest => -1,
        }
    }
}

/// `base` without its `removal_index`-th quantum number, shifted by `-1/2`.
pub fn reference_config(base: &QnConfig, removal_index: usize) -> Result<QnConfig> {
    reference_config_with(base, removal_index, ReferenceShift::Down)
}

pub fn reference_config_with(
    base: &QnConfig,
    removal_index: usize,
    shift: ReferenceShift,
) -> Result<QnConfig> {
    if removal_index >= base.len() {
        return Err(Error::InvalidArgument(format!(
            "removal index {removal_index} out of range for {} particles",
            base.len()
        )));
    }
    let d = base
        .doubled()
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != removal_index)
        .map(|(j, &d)| d + shift.doubled(j, removal_index))
        .collect();
    QnConfig::from_doubled(d)
}

/// Elements of sorted `a` missing from sorted `b`.
fn difference(a: &[i64], b: &[i64]) -> Vec<i64> {
    a.iter()
        .copied()
        .filter(|x| b.binary_search(x).is_err())
        .collect()
}

/// Tag of the sorted pairing of `holes` with `particles` (doubled values).
fn tag_of(holes: &[i64], particles: &[i64]) -> ExcitationTag {
    let mut t = ExcitationTag {
        n_p: holes.len() as u32,
        ..ExcitationTag::ZERO
    };
    for (h, p) in holes.iter().zip(particles) {
        let s = (p - h) / 2;
        if s > 0 {
            t.p_m += s as u32;
        } else {
            t.p_l += (-s) as u32;
            t.n_l += 1;
        }
    }
    t
}

/// Tag of `target` relative to `reference`, or `None` if the particle
/// numbers or parities differ.
pub fn excitation_tag(reference: &QnConfig, target: &QnConfig) -> Option<ExcitationTag> {
    if reference.len() != target.len() {
        return None;
    }
    let (a, b) = (reference.doubled(), target.doubled());
    if let (Some(x), Some(y)) = (a.first(), b.first()) {
        if (x - y).rem_euclid(2) != 0 {
            return None;
        }
    }
    Some(tag_of(&difference(a, b), &difference(b, a)))
}

fn sorted_cost(holes: &[i64], particles: &[i64]) -> i64 {
    holes
        .iter()
        .zip(particles)
        .map(|(h, p)| (p - h).abs())
        .sum()
}

/// Index of the reference under which `r` is counted: fewest moves, then
/// least displacement, then lowest index.
fn canonical_removal(refs: &[QnConfig], r: &[i64]) -> usize {
    let mut best = (usize::MAX, i64::MAX, usize::MAX);
    for (i, reference) in refs.iter().enumerate() {
        let holes = difference(reference.doubled(), r);
        if holes.len() > best.0 {
            continue;
        }
        let particles = difference(r, reference.doubled());
        let key = (holes.len(), sorted_cost(&holes, &particles), i);
        if key < best {
            best = key;
        }
    }
    best.2
}

/// Union of every class with `P_m + P_l <= max_cost` and at most
/// `max_moves` moved particles, sorted and deduplicated.
pub fn shell_classes(reference: &QnConfig, max_cost: u32, max_moves: usize) -> Vec<QnConfig> {
    let mut all = Vec::new();
    for n_p in 0..=max_moves as u32 {
        for p_m in 0..=max_cost {
            for p_l in 0..=max_cost - p_m {
                for n_l in 0..=n_p {
                    if let Ok(tag) = ExcitationTag::new(p_m, n_p, p_l, n_l) {
                        all.extend(enumerate_class(reference, tag));
                    }
                }
            }
        }
    }
    all.sort();
    all.dedup();
    all
}

/// All configurations reached from `reference` by moves with the given tag.
/// Exhaustive and free of duplicates; empty when nothing fits.
pub fn enumerate_class(reference: &QnConfig, tag: ExcitationTag) -> Vec<QnConfig> {
    if !tag.is_valid() {
        return Vec::new();
    }
    let refd = reference.doubled();
    let mut out = Vec::new();
    let mut moves = Vec::with_capacity(tag.n_p as usize);
    enumerate_rec(
        refd,
        0,
        i64::MIN,
        tag.p_m,
        tag.p_l,
        tag.rightward(),
        tag.n_l,
        &mut moves,
        &mut |mv| {
            let holes: Vec<i64> = mv.iter().map(|m| m.0).collect();
            let mut d: Vec<i64> = refd
                .iter()
                .copied()
                .filter(|x| !holes.contains(x))
                .collect();
            d.extend(mv.iter().map(|m| m.1));
            d.sort_unstable();
            out.push(QnConfig::from_doubled(d).expect("moves preserve parity and distinctness"));
        },
    );
    out
}

#[allow(clippy::too_many_arguments)]
fn enumerate_rec(
    refd: &[i64],
    start: usize,
    last_p: i64,
    rem_m: u32,
    rem_l: u32,
    rights: u32,
    lefts: u32,
    moves: &mut Vec<(i64, i64)>,
    emit: &mut dyn FnMut(&[(i64, i64)]),
) {
    if rights + lefts == 0 {
        if rem_m == 0 && rem_l == 0 {
            emit(moves);
        }
        return;
    }
    let needed = (rights + lefts) as usize;
    for hi in start..refd.len() {
        if refd.len() - hi < needed {
            break;
        }
        let h = refd[hi];
        if lefts > 0 {
            // the last leftward move takes whatever budget remains
            let (lo, hi_s) = if lefts == 1 {
                (rem_l, rem_l)
            } else {
                (1, rem_l - (lefts - 1))
            };
            for s in lo..=hi_s {
                let p = h - 2 * s as i64;
                if p <= last_p {
                    break;
                }
                if refd.binary_search(&p).is_ok() {
                    continue;
                }
                moves.push((h, p));
                enumerate_rec(
                    refd,
                    hi + 1,
                    p,
                    rem_m,
                    rem_l - s,
                    rights,
                    lefts - 1,
                    moves,
                    emit,
                );
                moves.pop();
            }
        }
        if rights > 0 {
            let (lo, hi_s) = if rights == 1 {
                (rem_m, rem_m)
            } else {
                (1, rem_m - (rights - 1))
            };
            for s in lo..=hi_s {
                let p = h + 2 * s as i64;
                if p <= last_p || refd.binary_search(&p).is_ok() {
                    continue;
                }
                moves.push((h, p));
                enumerate_rec(
                    refd,
                    hi + 1,
                    p,
                    rem_m - s,
                    rem_l,
                    rights - 1,
                    lefts,
                    moves,
                    emit,
                );
                moves.pop();
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeClass {
    A,
    B,
    #[serde(rename = "other")]
    Other,
}

impl fmt::Display for TypeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TypeClass::A => "A",
            TypeClass::B => "B",
            TypeClass::Other => "other",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralLine {
    /// Momentum transfer `P_base - P_intermediate` in units of `2π/L`.
    pub k_int: i64,
    /// `E_base - E_intermediate`.
    pub omega: f64,
    pub weight: f64,
    pub log_weight: f64,
    pub tag: ExcitationTag,
    /// Which base particle the reference omits.
    pub removal: usize,
    pub type_class: TypeClass,
}

/// `Σ w L / N`. Accumulated from log weights so that the one-particle case
/// is exactly 1.
pub fn sum_rule_saturation(lines: &[SpectralLine], n: usize, l: f64) -> f64 {
    let offset = l.ln() - (n as f64).ln();
    lines.iter().map(|x| (x.log_weight + offset).exp()).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanThresholds {
    pub saturation_target: f64,
    /// Defaults to `1e-10 N/L`.
    pub class_weight_floor: Option<f64>,
    /// Cap on both `P_m` and `P_l`. Defaults to `4N`.
    pub max_p_m: Option<u32>,
    /// Cap on `|ω|`. Defaults to `16 ε_F`, `ε_F = (πN/L)²`.
    pub max_energy: Option<f64>,
    /// Defaults to `N - 1`.
    pub max_n_p: Option<u32>,
    #[serde(default)]
    pub reference: ReferenceShift,
}

impl Default for ScanThresholds {
    fn default() -> Self {
        Self {
            saturation_target: 0.999,
            class_weight_floor: None,
            max_p_m: None,
            max_energy: None,
            max_n_p: None,
            reference: ReferenceShift::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedThresholds {
    pub saturation_target: f64,
    pub class_weight_floor: f64,
    pub max_p_m: u32,
    pub max_energy: f64,
    pub max_n_p: u32,
    pub reference: ReferenceShift,
}

impl ScanThresholds {
    pub fn resolve(&self, n: usize, l: f64) -> Result<ResolvedThresholds> {
        let kf = std::f64::consts::PI * n as f64 / l;
        let r = ResolvedThresholds {
            saturation_target: self.saturation_target,
            class_weight_floor: self.class_weight_floor.unwrap_or(1e-10 * n as f64 / l),
            max_p_m: self.max_p_m.unwrap_or(4 * n as u32),
            max_energy: self.max_energy.unwrap_or(16.0 * kf * kf),
            max_n_p: self.max_n_p.unwrap_or(n.saturating_sub(1) as u32),
            reference: self.reference,
        };
        if !(r.saturation_target > 0.0 && r.class_weight_floor > 0.0 && r.max_energy > 0.0) {
            return Err(Error::InvalidArgument(
                "scan thresholds must be positive".into(),
            ));
        }
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruncationReason {
    Saturation,
    MomentumWise,
    EnergyWise,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanReport {
    pub c: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub base_qns: QnConfig,
    pub thresholds: ResolvedThresholds,
    pub saturation: f64,
    pub classes_visited: usize,
    pub truncation_reason: TruncationReason,
    /// Intermediate states whose Bethe solve failed; classes containing one
    /// only give a lower bound on their weight.
    pub failed_solves: usize,
    pub lines_above_energy_cap: usize,
    pub lines: Vec<SpectralLine>,
    /// Which stationary state the base configuration was drawn from, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<TbaKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl ScanReport {
    pub fn total_weight(&self) -> f64 {
        self.lines.iter().map(|l| l.weight).sum()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Lines as CSV: `k_int, omega, weight, N_p, P_m, P_l, N_l, type_class`.
    pub fn write_lines_csv<W: Write>(&self, mut w: W) -> Result<()> {
        if let Some(h) = &self.config_hash {
            writeln!(w, "# config_hash={h}")?;
        }
        writeln!(w, "k_int,omega,weight,N_p,P_m,P_l,N_l,type_class")?;
        for x in &self.lines {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{},{},{},{},{}",
                x.k_int,
                x.omega,
                x.weight,
                x.tag.n_p,
                x.tag.p_m,
                x.tag.p_l,
                x.tag.n_l,
                x.type_class
            )?;
        }
        Ok(())
    }
}

/// Outcome of one class: enough to replay pruning decisions on resume.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClassRecord {
    removal: usize,
    members: usize,
    weight: f64,
    failures: usize,
    above_cap: usize,
    lines: Vec<SpectralLine>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TagRecord {
    tag: ExcitationTag,
    classes: Vec<ClassRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    c: f64,
    #[serde(rename = "L")]
    l: f64,
    base_qns: QnConfig,
    thresholds: ResolvedThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Per reference: the corners `(P_m, P_l)` of pruned regions for each
/// `(N_p, N_l)`.
#[derive(Default)]
struct Pruning {
    corners: HashMap<(usize, u32, u32), Vec<(u32, u32)>>,
}

impl Pruning {
    fn is_pruned(&self, removal: usize, t: &ExcitationTag) -> bool {
        self.corners
            .get(&(removal, t.n_p, t.n_l))
            .is_some_and(|v| v.iter().any(|&(m, l)| m <= t.p_m && l <= t.p_l))
    }

    fn prune(&mut self, removal: usize, t: &ExcitationTag) {
        self.corners
            .entry((removal, t.n_p, t.n_l))
            .or_default()
            .push((t.p_m, t.p_l));
    }
}

struct Context<'a> {
    base: &'a BetheState,
    refs: Vec<QnConfig>,
    /// Gap between the two leftmost base particles, in slots.
    delta: i64,
    th: ResolvedThresholds,
}

impl Context<'_> {
    /// Warm start: kept slots reuse the base rapidities, new slots are
    /// interpolated along the base's slot-to-rapidity map.
    fn guess(&self, r: &QnConfig) -> Vec<f64> {
        let lam = &self.base.rapidities;
        let s = self.base.qns.doubled();
        let slope = std::f64::consts::PI / self.base.params.l;
        r.doubled()
            .iter()
            .map(|&d| match s.binary_search(&d) {
                Ok(j) => lam[j],
                Err(0) => lam[0] + slope * (d - s[0]) as f64,
                Err(j) if j == s.len() => lam[j - 1] + slope * (d - s[j - 1]) as f64,
                Err(j) => {
                    let t = (d - s[j - 1]) as f64 / (s[j] - s[j - 1]) as f64;
                    lam[j - 1] + t * (lam[j] - lam[j - 1])
                }
            })
            .collect()
    }

    fn classify(&self, removal: usize, r: &QnConfig, tag: &ExcitationTag, k_int: i64) -> TypeClass {
        if removal == 0 || tag.n_p == 0 || self.base.n() < 2 {
            return TypeClass::Other;
        }
        // the base's leftmost particle, as it sits in this reference
        let leftmost = self.refs[removal].doubled()[0];
        let holes = difference(self.refs[removal].doubled(), r.doubled());
        if !holes.contains(&leftmost) {
            return TypeClass::Other;
        }
        if tag.n_p == 1 && tag.n_l == 0 && k_int.abs() <= self.delta {
            TypeClass::B
        } else if tag.n_p >= 2 && tag.n_l == 0 {
            TypeClass::A
        } else {
            TypeClass::Other
        }
    }

    fn evaluate(&self, removal: usize, r: &QnConfig, tag: ExcitationTag) -> Result<SpectralLine> {
        let p = self.base.params;
        let state = solve_bethe_from(r, p, Some(&self.guess(r)))?;
        let ff = field_form_factor(&state, self.base)?;
        let k2 = self.base.qns.doubled_sum() - r.doubled_sum();
        let k_int = k2 / 2;
        Ok(SpectralLine {
            k_int,
            omega: self.base.energy - state.energy,
            weight: ff.log_weight.exp(),
            log_weight: ff.log_weight,
            tag,
            removal,
            type_class: self.classify(removal, r, &tag, k_int),
        })
    }

    fn run_tag(
        &self,
        tag: ExcitationTag,
        pruning: &Pruning,
        mut visited: Option<&mut HashSet<QnConfig>>,
    ) -> TagRecord {
        let mut work: Vec<(usize, QnConfig)> = Vec::new();
        let mut active = Vec::new();
        for (i, reference) in self.refs.iter().enumerate() {
            if pruning.is_pruned(i, &tag) {
                continue;
            }
            active.push(i);
            for r in enumerate_class(reference, tag) {
                if canonical_removal(&self.refs, r.doubled()) == i {
                    if let Some(v) = visited.as_deref_mut() {
                        assert!(v.insert(r.clone()), "intermediate state {r} visited twice");
                    }
                    work.push((i, r));
                }
            }
        }
        let results: Vec<(usize, Result<SpectralLine>)> = work
            .par_iter()
            .map(|(i, r)| (*i, self.evaluate(*i, r, tag)))
            .collect();
        let mut classes: Vec<ClassRecord> = active
            .iter()
            .map(|&removal| ClassRecord {
                removal,
                members: 0,
                weight: 0.0,
                failures: 0,
                above_cap: 0,
                lines: Vec::new(),
            })
            .collect();
        for (i, res) in results {
            let class = classes
                .iter_mut()
                .find(|c| c.removal == i)
                .expect("active class");
            class.members += 1;
            match res {
                Ok(line) if line.omega.abs() > self.th.max_energy => class.above_cap += 1,
                Ok(line) => {
                    class.weight += line.weight;
                    class.lines.push(line);
                }
                Err(e) => {
                    log::warn!("intermediate state in class {tag} (removal {i}) skipped: {e}");
                    class.failures += 1;
                }
            }
        }
        classes.retain(|c| c.members > 0);
        TagRecord { tag, classes }
    }
}

/// Tags in scan order: ascending `N_p`, then `P_m`, `P_l`, `N_l`.
fn level_tags(n_p: u32, cap: u32) -> impl Iterator<Item = ExcitationTag> {
    (0..=cap).flat_map(move |p_m| {
        (0..=cap).flat_map(move |p_l| {
            (0..=n_p).filter_map(move |n_l| ExcitationTag::new(p_m, n_p, p_l, n_l).ok())
        })
    })
}

pub fn scan(base: &BetheState, thresholds: &ScanThresholds) -> Result<ScanReport> {
    run_scan(base, thresholds, None, false, None)
}

/// As [`scan`], appending every completed tag to `checkpoint`. With
/// `resume`, tags already in the file are replayed instead of recomputed, so
/// the report is identical to an uninterrupted run. A `config_hash` is
/// stored in the checkpoint header and must match on resume.
pub fn scan_with_checkpoint(
    base: &BetheState,
    thresholds: &ScanThresholds,
    checkpoint: &Path,
    resume: bool,
    config_hash: Option<&str>,
) -> Result<ScanReport> {
    run_scan(base, thresholds, Some(checkpoint), resume, config_hash)
}

fn read_checkpoint(path: &Path, header: &CheckpointHeader) -> Result<Vec<TagRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut lines = BufReader::new(file).lines();
    let Some(first) = lines.next() else {
        return Ok(Vec::new());
    };
    let found: CheckpointHeader = serde_json::from_str(&first?)?;
    if &found != header {
        return Err(Error::Mismatch(format!(
            "checkpoint {} belongs to a different scan",
            path.display()
        )));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        // a run killed mid-write leaves at most one partial trailing line
        match serde_json::from_str::<TagRecord>(&line) {
            Ok(r) => records.push(r),
            Err(_) => break,
        }
    }
    Ok(records)
}

fn run_scan(
    base: &BetheState,
    thresholds: &ScanThresholds,
    checkpoint: Option<&Path>,
    resume: bool,
    config_hash: Option<&str>,
) -> Result<ScanReport> {
    let n = base.n();
    if n == 0 {
        return Err(Error::InvalidArgument("cannot scan from the vacuum".into()));
    }
    let l = base.params.l;
    let th = thresholds.resolve(n, l)?;
    let refs = (0..n)
        .map(|i| reference_config_with(&base.qns, i, th.reference))
        .collect::<Result<Vec<_>>>()?;
    let d = base.qns.doubled();
    let ctx = Context {
        base,
        delta: if n >= 2 { (d[1] - d[0]) / 2 } else { 0 },
        refs,
        th,
    };

    let header = CheckpointHeader {
        c: base.params.c,
        l,
        base_qns: base.qns.clone(),
        thresholds: th,
        config_hash: config_hash.map(str::to_owned),
    };
    let mut replay: HashMap<ExcitationTag, TagRecord> = HashMap::new();
    let mut sink = None;
    if let Some(path) = checkpoint {
        if resume {
            for r in read_checkpoint(path, &header)? {
                replay.insert(r.tag, r);
            }
            log::info!("resuming scan with {} completed tags", replay.len());
        }
        let mut f = if resume && path.exists() {
            OpenOptions::new().append(true).open(path)?
        } else {
            File::create(path)?
        };
        if !resume || replay.is_empty() {
            f.set_len(0)?;
            writeln!(f, "{}", serde_json::to_string(&header)?)?;
        }
        sink = Some(f);
    }

    let offset = l.ln() - (n as f64).ln();
    let mut lines = Vec::new();
    let mut saturation = 0.0;
    let mut classes_visited = 0;
    let mut failed = 0;
    let mut above_cap = 0;
    let mut pruning = Pruning::default();
    let mut visited: Option<HashSet<QnConfig>> =
        (cfg!(debug_assertions) && n <= 8).then(HashSet::new);
    let mut reason = TruncationReason::MomentumWise;
    let started = Instant::now();

    'levels: for n_p in 0..=th.max_n_p {
        let mut level_significant = false;
        for tag in level_tags(n_p, th.max_p_m) {
            let record = match replay.remove(&tag) {
                Some(r) => r,
                None => {
                    if (0..n).all(|i| pruning.is_pruned(i, &tag)) {
                        continue;
                    }
                    let r = ctx.run_tag(tag, &pruning, visited.as_mut());
                    if let Some(f) = sink.as_mut() {
                        writeln!(f, "{}", serde_json::to_string(&r)?)?;
                        f.flush()?;
                    }
                    r
                }
            };
            for class in record.classes {
                classes_visited += 1;
                failed += class.failures;
                above_cap += class.above_cap;
                if class.weight < th.class_weight_floor {
                    pruning.prune(class.removal, &tag);
                } else {
                    level_significant = true;
                }
                for line in class.lines {
                    saturation += (line.log_weight + offset).exp();
                    lines.push(line);
                }
                log::debug!(
                    "class {tag:?} removal {}: {} states, weight {:.3e}, saturation {saturation:.6}, {:.1} classes/s",
                    class.removal,
                    class.members,
                    class.weight,
                    classes_visited as f64 / started.elapsed().as_secs_f64().max(1e-9)
                );
            }
            if saturation >= th.saturation_target {
                reason = TruncationReason::Saturation;
                break 'levels;
            }
        }
        log::info!(
            "N_p = {n_p} done: saturation {saturation:.6}, {classes_visited} classes, {:.1} classes/s",
            classes_visited as f64 / started.elapsed().as_secs_f64().max(1e-9)
        );
        if !level_significant && n_p > 0 {
            break;
        }
    }
    if reason != TruncationReason::Saturation && above_cap > 0 {
        reason = TruncationReason::EnergyWise;
    }
    Ok(ScanReport {
        c: base.params.c,
        l,
        n,
        base_qns: base.qns.clone(),
        thresholds: th,
        saturation,
        classes_visited,
        truncation_reason: reason,
        failed_solves: failed,
        lines_above_energy_cap: above_cap,
        lines,
        kind: None,
        config_hash: None,
    })
}
