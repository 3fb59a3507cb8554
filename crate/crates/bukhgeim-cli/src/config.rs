//! Experiment configuration: one JSON document, defaults explicit.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use bukhgeim::grid::{ConductivityPreset, GridSpec, PresetKind};
use bukhgeim::scattering::{AnnulusSpec, ConjMode, DatasetConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { half_width: 1.0, n: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetConfig {
    /// One of `unit`, `real_bump`, `complex_bump`, `two_bump`.
    pub kind: String,
    pub center: [f64; 2],
    pub radius: f64,
    /// `None` keeps the preset's built-in amplitude.
    pub amplitude: Option<[f64; 2]>,
}

impl Default for PresetConfig {
    fn default() -> Self {
        Self { kind: "real_bump".into(), center: [0.0, 0.0], radius: 0.5, amplitude: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnulusConfig {
    /// Inner radius R of the octave annulus (R, 2R) in lambda.
    pub r_inner: f64,
    pub n_r: usize,
    pub n_theta: usize,
}

impl Default for AnnulusConfig {
    fn default() -> Self {
        Self { r_inner: 40.0, n_r: 4, n_theta: 16 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub preset: PresetConfig,
    pub annulus: AnnulusConfig,
    /// Every `w_stride`-th grid node per axis becomes a w sample.
    pub w_stride: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub conj_mode: ConjMode,
    /// Contour ring (cells inside the grid frame) for the boundary form.
    pub contour_ring: usize,
    /// Relative volume/boundary disagreement flagged per sample.
    pub consistency_tol: f64,
    /// Worker threads; `None` defers to --threads / BUKHGEIM_THREADS / one
    /// worker per core.
    pub parallel_width: Option<usize>,
    /// Output directory; overridden by --out.
    pub out_dir: Option<PathBuf>,
    /// Seed reserved for randomized property tests; the pipeline itself is
    /// deterministic.
    pub seed: u64,
    /// Inner radii of the octave shells measured by `diagnostics`.
    pub shell_inner_radii: Vec<f64>,
    /// |lambda| values for the stationary-phase error table.
    pub stationary_lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig::default(),
            preset: PresetConfig::default(),
            annulus: AnnulusConfig::default(),
            w_stride: 8,
            tol: 1e-10,
            max_iter: 200,
            conj_mode: ConjMode::default(),
            contour_ring: 1,
            consistency_tol: 0.05,
            parallel_width: None,
            out_dir: None,
            seed: 0,
            shell_inner_radii: vec![10.0, 20.0, 40.0],
            stationary_lambdas: vec![16.0, 32.0, 64.0, 128.0],
        }
    }
}

/// A configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| ConfigError(format!("cannot parse {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.preset_kind()?;
        if !self.grid.n.is_power_of_two() {
            eprintln!(
                "warning: grid n = {} is not a power of two; FFTs will be slower",
                self.grid.n
            );
        }
        if self.w_stride == 0 || self.grid.n % self.w_stride != 0 {
            return Err(ConfigError(format!(
                "w_stride {} must divide grid n {}",
                self.w_stride, self.grid.n
            )));
        }
        if self.annulus.r_inner <= 0.0 || self.annulus.n_r == 0 || self.annulus.n_theta == 0 {
            return Err(ConfigError("annulus parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn preset_kind(&self) -> Result<PresetKind, ConfigError> {
        match self.preset.kind.as_str() {
            "unit" => Ok(PresetKind::Unit),
            "real_bump" => Ok(PresetKind::RealBump),
            "complex_bump" => Ok(PresetKind::ComplexBump),
            "two_bump" => Ok(PresetKind::TwoBump),
            other => Err(ConfigError(format!(
                "unknown preset '{other}' (expected unit, real_bump, complex_bump or two_bump)"
            ))),
        }
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        GridSpec::new(self.grid.half_width, self.grid.n)
            .map_err(|e| ConfigError(e.to_string()))
    }

    pub fn conductivity_preset(&self) -> Result<ConductivityPreset, ConfigError> {
        let mut p = ConductivityPreset::new(self.preset_kind()?);
        p.center = Complex64::new(self.preset.center[0], self.preset.center[1]);
        p.radius = self.preset.radius;
        if let Some([re, im]) = self.preset.amplitude {
            p.amplitude = Complex64::new(re, im);
        }
        Ok(p)
    }

    pub fn dataset_config(&self, provenance: String) -> DatasetConfig {
        DatasetConfig {
            annulus: AnnulusSpec {
                r_inner: self.annulus.r_inner,
                n_r: self.annulus.n_r,
                n_theta: self.annulus.n_theta,
            },
            w_stride: self.w_stride,
            tol: self.tol,
            max_iter: self.max_iter,
            conj_mode: self.conj_mode,
            contour_ring: self.contour_ring,
            consistency_tol: self.consistency_tol,
            provenance,
        }
    }
}
