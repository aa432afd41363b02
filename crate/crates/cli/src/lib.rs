//! Stages behind the `ntes` binary. Each stage writes its files into the
//! output directory and returns what the next stage needs, so `pipeline` is
//! just the four stages in a row.

pub mod config;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ntes_core::oracle::{self, RegressionSet};
use ntes_core::sampler::{copy_ensemble, representative_qns, EnsembleManifest};
use ntes_core::scan::{self, ScanReport};
use ntes_core::spectra::{self, GridManifest, Units};
use ntes_core::tba::{self, TbaHeader, TbaKind, TbaSolution};
use ntes_core::{solve_bethe, BetheState, ModelParams, QnConfig};
use serde::{Deserialize, Serialize};

use config::{RunConfig, StateKind, StateSelection};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: ntes_core::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Verification(_) => 3,
            CliError::Stage { .. } | CliError::Internal(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn stage<T>(name: &'static str, r: ntes_core::Result<T>) -> Result<T> {
    r.map_err(|source| CliError::Stage {
        stage: name,
        source,
    })
}

fn io<T>(name: &'static str, r: std::io::Result<T>) -> Result<T> {
    stage(name, r.map_err(ntes_core::Error::from))
}

/// A run: the validated configuration, its hash and where files go.
pub struct Run {
    pub config: RunConfig,
    pub hash: String,
    pub out: PathBuf,
    pub resume: bool,
}

impl Run {
    pub fn new(config: RunConfig, resume: bool) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        let out = config.output.clone();
        io("setup", fs::create_dir_all(out.join("scan")))?;
        let run = Self {
            config,
            hash,
            out,
            resume,
        };
        let text = format!("# config_hash = \"{}\"\n{}", run.hash, run.config.to_toml());
        io("setup", fs::write(run.out.join("config.toml"), text))?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, stage_name: &'static str, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(io(
            stage_name,
            File::create(self.path(name)),
        )?))
    }

    fn write_json<T: Serialize>(
        &self,
        stage_name: &'static str,
        name: &str,
        value: &T,
    ) -> Result<()> {
        let mut w = self.create(stage_name, name)?;
        stage(
            stage_name,
            serde_json::to_writer_pretty(&mut w, value).map_err(ntes_core::Error::from),
        )?;
        io(stage_name, writeln!(w))
    }

    fn params(&self) -> Result<ModelParams> {
        stage("setup", ModelParams::new(self.config.c, self.config.l))
    }
}

/// `tba.json`: the solver header plus how the temperature was chosen.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TbaRecord {
    #[serde(flatten)]
    pub header: TbaHeader,
    /// Quench energy density the temperature was matched to.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matched_energy_density: Option<f64>,
}

pub struct TbaStage {
    pub solution: TbaSolution,
    pub temperature: Option<f64>,
}

fn solve_tba(run: &Run) -> Result<(TbaSolution, Option<f64>, Option<f64>)> {
    let cfg = &run.config;
    let n = cfg.density();
    match cfg.kind {
        StateKind::Ntes => Ok((
            stage("tba", tba::solve_ntes_with(cfg.c, n, &cfg.tba))?,
            None,
            None,
        )),
        StateKind::Tes => {
            let (t, matched) = match cfg.temperature {
                Some(t) => (t, None),
                None => {
                    let e = stage("tba", tba::solve_ntes_with(cfg.c, n, &cfg.tba))?.energy_density;
                    (
                        stage("tba", tba::match_temperature_with(cfg.c, n, e, &cfg.tba))?,
                        Some(e),
                    )
                }
            };
            log::info!("thermal state at T = {t:.6}");
            Ok((
                stage("tba", tba::solve_tes_with(cfg.c, t, n, &cfg.tba))?,
                Some(t),
                matched,
            ))
        }
    }
}

/// Solve the stationary-state TBA and write `tba.csv` and `tba.json`.
pub fn run_tba(run: &Run) -> Result<TbaStage> {
    let (solution, temperature, matched) = solve_tba(run)?;
    let mut w = run.create("tba", "tba.csv")?;
    stage("tba", solution.write_csv(&mut w, &run.hash))?;
    io("tba", w.flush())?;
    let record = TbaRecord {
        header: solution.header(&run.hash),
        matched_energy_density: matched,
    };
    run.write_json("tba", "tba.json", &record)?;
    log::info!(
        "{} c = {}: energy density {:.6}, multiplier {:.6}",
        solution.kind.label(),
        solution.c,
        solution.energy_density,
        solution.multiplier
    );
    Ok(TbaStage {
        solution,
        temperature,
    })
}

/// `ensemble_manifest.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleManifest {
    pub states: StateSelection,
    pub count: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ensemble: Option<EnsembleManifest>,
    pub config_hash: String,
}

/// Draw the base eigenstates and write `ensemble.jsonl`.
pub fn run_sample(run: &Run, tba: &TbaStage) -> Result<Vec<BetheState>> {
    let cfg = &run.config;
    let params = run.params()?;
    let (states, ensemble) = match cfg.states {
        StateSelection::Representative => {
            let q = stage("sample", representative_qns(&tba.solution, cfg.n, cfg.l))?;
            (vec![stage("sample", solve_bethe(&q, params))?], None)
        }
        StateSelection::Copies => {
            let e = stage(
                "sample",
                copy_ensemble(
                    &tba.solution,
                    cfg.n,
                    cfg.l,
                    cfg.n_copies,
                    cfg.energy_window,
                    cfg.seed,
                ),
            )?;
            let manifest = e.manifest(&run.hash);
            log::info!("{} copies from {} draws", e.copies.len(), e.draws);
            (e.copies, Some(manifest))
        }
    };
    let mut w = run.create("sample", "ensemble.jsonl")?;
    io(
        "sample",
        writeln!(w, "{}", serde_json::json!({ "config_hash": run.hash })),
    )?;
    for s in &states {
        io(
            "sample",
            writeln!(w, "{}", stage("sample", s.to_json_line())?),
        )?;
    }
    io("sample", w.flush())?;
    let manifest = SampleManifest {
        states: cfg.states,
        count: states.len(),
        ensemble,
        config_hash: run.hash.clone(),
    };
    run.write_json("sample", "ensemble_manifest.json", &manifest)?;
    Ok(states)
}

pub fn read_states(run: &Run) -> Result<Vec<BetheState>> {
    let path = run.path("ensemble.jsonl");
    let f = File::open(&path).map_err(|e| {
        CliError::Internal(format!(
            "scan: cannot open {} ({e}); run `ntes sample` first",
            path.display()
        ))
    })?;
    let mut lines = BufReader::new(f).lines();
    let header: serde_json::Value = match lines.next() {
        Some(l) => stage(
            "scan",
            serde_json::from_str(&io("scan", l)?).map_err(ntes_core::Error::from),
        )?,
        None => serde_json::Value::Null,
    };
    if header["config_hash"].as_str() != Some(run.hash.as_str()) {
        return Err(CliError::Config(format!(
            "{} was drawn under a different config; rerun `ntes sample`",
            path.display()
        )));
    }
    let mut states = Vec::new();
    for line in lines {
        let line = io("scan", line)?;
        if !line.trim().is_empty() {
            states.push(stage(
                "scan",
                serde_json::from_str(&line).map_err(ntes_core::Error::from),
            )?);
        }
    }
    Ok(states)
}

fn state_stem(i: usize) -> String {
    format!("scan/state_{i:03}")
}

/// Scan every base state with checkpointing; writes one report JSON and one
/// lines CSV per state.
pub fn run_scan(
    run: &Run,
    states: &[BetheState],
    kind: Option<TbaKind>,
) -> Result<Vec<ScanReport>> {
    let mut reports = Vec::with_capacity(states.len());
    for (i, base) in states.iter().enumerate() {
        let stem = state_stem(i);
        let ckpt = run.path(&format!("{stem}.ckpt.jsonl"));
        log::info!("scanning state {i} {}", base.qns);
        let mut r = stage(
            "scan",
            scan::scan_with_checkpoint(base, &run.config.scan, &ckpt, run.resume, Some(&run.hash)),
        )?;
        r.kind = kind;
        r.config_hash = Some(run.hash.clone());
        log::info!(
            "state {i}: saturation {:.6}, {} lines, {} classes, stopped by {:?}",
            r.saturation,
            r.lines.len(),
            r.classes_visited,
            r.truncation_reason
        );
        let mut w = run.create("scan", &format!("{stem}.json"))?;
        stage("scan", r.write_json(&mut w))?;
        io("scan", w.flush())?;
        let mut w = run.create("scan", &format!("{stem}_lines.csv"))?;
        stage("scan", r.write_lines_csv(&mut w))?;
        io("scan", w.flush())?;
        reports.push(r);
    }
    Ok(reports)
}

pub fn read_reports(run: &Run) -> Result<Vec<ScanReport>> {
    let mut reports = Vec::new();
    for i in 0.. {
        let path = run.path(&format!("{}.json", state_stem(i)));
        let Ok(f) = File::open(&path) else { break };
        let r: ScanReport = stage(
            "spectrum",
            serde_json::from_reader(BufReader::new(f)).map_err(ntes_core::Error::from),
        )?;
        if r.config_hash.as_deref() != Some(run.hash.as_str()) {
            return Err(CliError::Config(format!(
                "{} belongs to a different config; rerun `ntes scan`",
                path.display()
            )));
        }
        reports.push(r);
    }
    if reports.is_empty() {
        return Err(CliError::Internal(format!(
            "spectrum: no scan reports under {}; run `ntes scan` first",
            run.out.join("scan").display()
        )));
    }
    Ok(reports)
}

pub struct SpectrumStage {
    pub manifest: GridManifest,
    pub line_shapes: Vec<PathBuf>,
}

/// Average the copies, broaden, and write `grid.csv`, `grid_manifest.json`
/// and one `line_shape_k<k_int>.csv` per requested momentum.
pub fn run_spectrum(
    run: &Run,
    reports: &[ScanReport],
    thermal: Option<(f64, f64)>,
) -> Result<SpectrumStage> {
    let merged = stage("spectrum", spectra::average_copies(reports))?;
    let u: Units = merged.units;
    let sc = &run.config.spectrum;
    let grid = stage(
        "spectrum",
        spectra::assemble_grid(
            &merged.lines,
            u,
            sc.bin_over_ef * u.e_f,
            sc.sigma_over_ef * u.e_f,
        ),
    )?;
    let mut w = run.create("spectrum", "grid.csv")?;
    stage("spectrum", grid.write_csv(&mut w, &run.hash))?;
    io("spectrum", w.flush())?;

    let mut manifest = grid.manifest(merged.c, merged.kind, merged.saturation, &run.hash);
    manifest.copies = merged.copies;
    manifest.dbr_residual = thermal.map(|(t, mu)| spectra::dbr_residual(&grid, t, mu));
    run.write_json("spectrum", "grid_manifest.json", &manifest)?;

    let mut line_shapes = Vec::new();
    for &k in &sc.line_shapes {
        let k_int = u.k_int_of(k);
        match spectra::line_shape(&grid, k_int, true) {
            Ok(s) => {
                let name = format!("line_shape_k{k_int}.csv");
                let mut w = run.create("spectrum", &name)?;
                stage("spectrum", s.write_csv(&mut w, &run.hash))?;
                io("spectrum", w.flush())?;
                line_shapes.push(run.path(&name));
            }
            Err(e) => log::warn!("no line shape at k/k_F = {k}: {e}"),
        }
    }
    log::info!(
        "grid: {} momenta x {} bins, negative-frequency weight {:.4}",
        grid.k_values.len(),
        grid.bins(),
        manifest.negative_weight_fraction
    );
    Ok(SpectrumStage {
        manifest,
        line_shapes,
    })
}

/// Thermal `(T, μ)` for the detailed-balance diagnostic, read back from
/// `tba.json` when the spectrum stage runs on its own.
pub fn thermal_point(run: &Run) -> Option<(f64, f64)> {
    let f = File::open(run.path("tba.json")).ok()?;
    let rec: TbaRecord = serde_json::from_reader(BufReader::new(f)).ok()?;
    rec.header.temperature.map(|t| (t, rec.header.multiplier))
}

/// The state label for scans run on their own: thermal runs take the
/// temperature recorded by the TBA stage.
pub fn recorded_kind(run: &Run) -> Result<TbaKind> {
    match run.config.kind {
        StateKind::Ntes => Ok(TbaKind::Ntes),
        StateKind::Tes => thermal_point(run)
            .map(|(t, _)| t)
            .or(run.config.temperature)
            .map(|temperature| TbaKind::Tes { temperature })
            .ok_or_else(|| {
                CliError::Internal("scan: no temperature recorded; run `ntes tba` first".into())
            }),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// `pipeline_manifest.json`. Everything but `timings` is a pure function
/// of the configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub kind: String,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none", default)]
    pub temperature: Option<f64>,
    pub states: usize,
    pub saturation: f64,
    pub per_state_saturation: Vec<f64>,
    pub negative_weight_fraction: f64,
    pub timings: Vec<StageTiming>,
    pub config_hash: String,
}

pub fn run_pipeline(run: &Run) -> Result<PipelineManifest> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage: name.into(),
            seconds: clock.elapsed().as_secs_f64(),
        });
        clock = Instant::now();
    };
    let tba = run_tba(run)?;
    lap("tba", &mut timings);
    let states = run_sample(run, &tba)?;
    lap("sample", &mut timings);
    let reports = run_scan(run, &states, Some(tba.solution.kind))?;
    lap("scan", &mut timings);
    let thermal = tba.temperature.map(|t| (t, tba.solution.multiplier));
    let spectrum = run_spectrum(run, &reports, thermal)?;
    lap("spectrum", &mut timings);
    let manifest = PipelineManifest {
        kind: tba.solution.kind.label().into(),
        temperature: tba.temperature,
        states: states.len(),
        saturation: spectrum.manifest.saturation,
        per_state_saturation: reports.iter().map(|r| r.saturation).collect(),
        negative_weight_fraction: spectrum.manifest.negative_weight_fraction,
        timings,
        config_hash: run.hash.clone(),
    };
    run.write_json("pipeline", "pipeline_manifest.json", &manifest)?;
    Ok(manifest)
}

/// Shell references for the enumeration check: `(reference, cost, moves)`.
const SHELLS: &[(&[f64], u32, usize)] = &[
    (&[-1.0, 0.0, 1.0], 3, 2),
    (&[-3.0, 0.0, 1.0], 3, 2),
    (&[-1.5, -0.5, 0.5, 1.5], 2, 2),
];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShellCheck {
    pub reference: QnConfig,
    pub brute_force: usize,
    pub from_classes: usize,
    pub equal: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyReport {
    pub regression: RegressionSet,
    pub shells: Vec<ShellCheck>,
    pub passed: bool,
    pub config_hash: String,
}

/// Re-run the oracle comparisons and the shell enumeration check. The
/// regression set comes from `verify.regression_file` when set (relative
/// paths resolve against `base_dir`), otherwise the built-in set is used and
/// saved as `regression.json`.
pub fn run_verify(run: &Run, base_dir: &Path) -> Result<VerifyReport> {
    let v = &run.config.verify;
    let regression = match &v.regression_file {
        Some(p) => {
            let p = if p.is_absolute() {
                p.clone()
            } else {
                base_dir.join(p)
            };
            let f = File::open(&p).map_err(|e| {
                CliError::Config(format!("`verify.regression_file`: {} ({e})", p.display()))
            })?;
            let mut stored = RegressionSet::read(BufReader::new(f))
                .map_err(|e| CliError::Config(format!("`verify.regression_file`: {e}")))?;
            if stored.cases.is_empty() {
                return Err(CliError::Verification(format!(
                    "regression file {} has no cases",
                    p.display()
                )));
            }
            stored.tolerance = v.tolerance;
            stage("verify", oracle::recheck(&stored))?
        }
        None => {
            let set = stage("verify", oracle::regression_set(v.tolerance))?;
            let mut w = run.create("verify", "regression.json")?;
            stage("verify", set.write_json(&mut w))?;
            io("verify", w.flush())?;
            set
        }
    };
    let mut shells = Vec::new();
    for &(r, cost, moves) in SHELLS {
        let reference = stage("verify", QnConfig::from_values(r))?;
        let mut brute = oracle::shell_brute_force(&reference, cost, moves);
        brute.sort();
        let classes = scan::shell_classes(&reference, cost, moves);
        shells.push(ShellCheck {
            equal: brute == classes,
            brute_force: brute.len(),
            from_classes: classes.len(),
            reference,
        });
    }
    let passed = regression.passed() && shells.iter().all(|s| s.equal);
    let report = VerifyReport {
        regression,
        shells,
        passed,
        config_hash: run.hash.clone(),
    };
    run.write_json("verify", "verify_report.json", &report)?;
    if !passed {
        let mut failing: Vec<String> = report
            .regression
            .failures()
            .map(|c| {
                format!(
                    "{:?} c={} L={} bra={} ket={} rel_err={:.3e}",
                    c.kind,
                    c.c,
                    c.l,
                    c.bra_qns.as_ref().map_or("-".into(), |q| q.to_string()),
                    c.ket_qns,
                    c.rel_err
                )
            })
            .collect();
        failing.extend(
            report
                .shells
                .iter()
                .filter(|s| !s.equal)
                .map(|s| format!("shell around {}", s.reference)),
        );
        return Err(CliError::Verification(failing.join("; ")));
    }
    Ok(report)
}
