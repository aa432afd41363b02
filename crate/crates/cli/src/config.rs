//! The TOML run file.
//!
//! ```toml
//! kind = "NTES"          # or "TES"
//! c = 5.0
//! N = 12
//! L = 12.0
//! # T = 6.36            # TES only; or set match_energy = true
//! match_energy = false
//! states = "representative"   # or "copies"
//! n_copies = 20
//! energy_window = 0.05
//! seed = 1
//! output = "out"
//!
//! [tba]                  # cutoff, refine (optional)
//! [scan]                 # saturation_target, class_weight_floor, max_p_m, max_energy, max_n_p, reference
//! [spectrum]
//! sigma_over_ef = 0.1
//! bin_over_ef = 0.02
//! line_shapes = [0.5]    # k / k_F
//! [verify]
//! tolerance = 1e-6
//! # regression_file = "regression.json"
//! ```

use std::path::{Path, PathBuf};

use ntes_core::scan::ScanThresholds;
use ntes_core::spectra::{DEFAULT_BIN_OVER_EF, DEFAULT_SIGMA_OVER_EF};
use ntes_core::tba::TbaOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateKind {
    #[serde(rename = "TES")]
    Tes,
    #[serde(rename = "NTES")]
    Ntes,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSelection {
    /// The deterministic representative configuration only.
    #[default]
    Representative,
    /// `n_copies` stochastic draws inside the energy window.
    Copies,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_sigma")]
    pub sigma_over_ef: f64,
    #[serde(default = "default_bin")]
    pub bin_over_ef: f64,
    /// Momenta `k / k_F` whose line shapes are exported.
    #[serde(default = "default_line_shapes")]
    pub line_shapes: Vec<f64>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            sigma_over_ef: default_sigma(),
            bin_over_ef: default_bin(),
            line_shapes: default_line_shapes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Stored regression set; the built-in set is generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression_file: Option<PathBuf>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            tolerance: default_tolerance(),
            regression_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: StateKind,
    pub c: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub match_energy: bool,
    #[serde(default)]
    pub states: StateSelection,
    #[serde(default = "default_copies")]
    pub n_copies: usize,
    #[serde(default = "default_window")]
    pub energy_window: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub tba: TbaOptions,
    #[serde(default)]
    pub scan: ScanThresholds,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_sigma() -> f64 {
    DEFAULT_SIGMA_OVER_EF
}
fn default_bin() -> f64 {
    DEFAULT_BIN_OVER_EF
}
fn default_line_shapes() -> Vec<f64> {
    vec![0.5]
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_copies() -> usize {
    1
}
fn default_window() -> f64 {
    0.05
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: StateKind::Ntes,
            c: 1.0,
            n: 4,
            l: 4.0,
            temperature: None,
            match_energy: false,
            states: StateSelection::default(),
            n_copies: default_copies(),
            energy_window: default_window(),
            seed: 0,
            output: default_output(),
            tba: TbaOptions::default(),
            scan: ScanThresholds::default(),
            spectrum: SpectrumConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn bad(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {why}"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable in TOML")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(key, format!("must be positive, got {v}")))
            }
        };
        positive("c", self.c)?;
        positive("L", self.l)?;
        if self.n == 0 {
            return Err(bad("N", "must be at least 1"));
        }
        match (self.kind, self.temperature, self.match_energy) {
            (StateKind::Tes, None, false) => {
                return Err(bad("T", "thermal runs need T or match_energy = true"))
            }
            (StateKind::Tes, Some(_), true) => {
                return Err(bad("T", "give either T or match_energy, not both"))
            }
            (StateKind::Ntes, Some(_), _) => {
                return Err(bad("T", "only thermal runs take a temperature"))
            }
            (StateKind::Ntes, None, true) => {
                return Err(bad("match_energy", "only thermal runs are matched"))
            }
            _ => {}
        }
        if let Some(t) = self.temperature {
            positive("T", t)?;
        }
        if self.n_copies == 0 {
            return Err(bad("n_copies", "must be at least 1"));
        }
        positive("energy_window", self.energy_window)?;
        positive("spectrum.sigma_over_ef", self.spectrum.sigma_over_ef)?;
        positive("spectrum.bin_over_ef", self.spectrum.bin_over_ef)?;
        positive("verify.tolerance", self.verify.tolerance)?;
        let s = &self.scan;
        if !(s.saturation_target > 0.0 && s.saturation_target <= 1.0) {
            return Err(bad(
                "scan.saturation_target",
                format!("must lie in (0, 1], got {}", s.saturation_target),
            ));
        }
        if let Some(f) = s.class_weight_floor {
            if !(f >= 0.0) {
                return Err(bad("scan.class_weight_floor", "must be non-negative"));
            }
        }
        if let Some(e) = s.max_energy {
            positive("scan.max_energy", e)?;
        }
        if let Some(x) = self.tba.cutoff {
            positive("tba.cutoff", x)?;
        }
        Ok(())
    }

    pub fn density(&self) -> f64 {
        self.n as f64 / self.l
    }

    /// SHA-256 over the canonical TOML with the output directory blanked, so
    /// moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
kind = "TES"
c = 5.0
N = 12
L = 12.0
match_energy = true
states = "copies"
n_copies = 20
energy_window = 0.05
seed = 42
output = "runs/c5"

[tba]
cutoff = 120.0

[scan]
saturation_target = 0.99
max_n_p = 3
reference = "down"

[spectrum]
sigma_over_ef = 0.05
bin_over_ef = 0.01
line_shapes = [0.5, 1.0]

[verify]
tolerance = 1e-7
regression_file = "reg.json"
"#;

    #[test]
    fn round_trip_is_lossless() {
        let cfg = RunConfig::parse(FULL).unwrap();
        assert_eq!(cfg.scan.max_n_p, Some(3));
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let minimal = RunConfig::parse("kind = \"NTES\"\nc = 1.0\nN = 3\nL = 3.0\n").unwrap();
        assert_eq!(RunConfig::parse(&minimal.to_toml()).unwrap(), minimal);
    }

    #[test]
    fn shipped_configs_are_valid_and_round_trip() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg =
                    RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
                assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
                seen += 1;
            }
        }
        assert!(seen >= 4);
    }

    #[test]
    fn hash_ignores_output_but_not_physics() {
        let cfg = RunConfig::parse(FULL).unwrap();
        let moved = RunConfig {
            output: "elsewhere".into(),
            ..cfg.clone()
        };
        assert_eq!(cfg.hash(), moved.hash());
        let reseeded = RunConfig {
            seed: 43,
            ..cfg.clone()
        };
        assert_ne!(cfg.hash(), reseeded.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let cases = [
            ("kind = \"NTES\"\nc = -1.0\nN = 3\nL = 3.0\n", "`c`"),
            ("kind = \"TES\"\nc = 1.0\nN = 3\nL = 3.0\n", "`T`"),
            (
                "kind = \"NTES\"\nc = 1.0\nN = 3\nL = 3.0\nwobble = 2\n",
                "wobble",
            ),
            (
                "kind = \"NTES\"\nc = 1.0\nN = 3\nL = 3.0\n[scan]\nsaturation_target = 1.5\n",
                "scan.saturation_target",
            ),
            ("kind = \"NTES\"\nc = 1.0\nL = 3.0\n", "N"),
        ];
        for (text, key) in cases {
            match RunConfig::parse(text) {
                Err(CliError::Config(msg)) => {
                    assert!(msg.contains(key), "{msg} should mention {key}")
                }
                other => panic!("expected a config error for {key}, got {other:?}"),
            }
        }
    }
}
