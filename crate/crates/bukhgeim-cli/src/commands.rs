//! The four pipeline commands and the run manifest they emit.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use bukhgeim::cauchy::CauchyKernel;
use bukhgeim::cgo::{decay_diagnostics, DecayConfig};
use bukhgeim::dirac::{conductivity_to_potential, DiracPotential};
use bukhgeim::grid::{BumpKind, ComplexField, GridSpec, PresetKind, TestFunction};
use bukhgeim::reconstruct::{
    error_metrics, reconstruct_pointwise, recover_gamma, stationary_phase_check,
};
use bukhgeim::scattering::{compute_dataset, ConjMode, ScatteringDataset};

use crate::config::{ConfigError, ExperimentConfig};

/// Run record written next to every command's outputs. Every output file is
/// reachable from `outputs`; `config` echoes the fully resolved configuration
/// (all defaults explicit), so a run can be reproduced from the manifest
/// alone.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub conj_mode: ConjMode,
    pub threads: usize,
    pub outputs: Vec<String>,
    pub timings_s: BTreeMap<String, f64>,
    pub notes: Vec<String>,
}

pub struct CommandError {
    pub message: String,
    pub exit_code: i32,
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        CommandError { message: e.to_string(), exit_code: 2 }
    }
}

impl From<bukhgeim::Error> for CommandError {
    fn from(e: bukhgeim::Error) -> Self {
        let exit_code = match &e {
            bukhgeim::Error::PartialDataset(_) => 3,
            bukhgeim::Error::NotContractive { .. }
            | bukhgeim::Error::MaxIterations(_)
            | bukhgeim::Error::NotConverged => 4,
            _ => 1,
        };
        CommandError { message: e.to_string(), exit_code }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError { message: e.to_string(), exit_code: 1 }
    }
}

type CmdResult = Result<(), CommandError>;

fn config_digest(cfg: &ExperimentConfig) -> String {
    let text = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    format!("{:x}", hasher.finalize())
}

struct Runner {
    cfg: ExperimentConfig,
    out_dir: PathBuf,
    threads: usize,
    timings: BTreeMap<String, f64>,
    outputs: Vec<String>,
    notes: Vec<String>,
}

impl Runner {
    fn new(cfg: ExperimentConfig, out_dir: PathBuf, threads: usize) -> Result<Self, CommandError> {
        std::fs::create_dir_all(&out_dir)?;
        Ok(Self {
            cfg,
            out_dir,
            threads,
            timings: BTreeMap::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        })
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&ExperimentConfig) -> Result<T, CommandError>) -> Result<T, CommandError> {
        let start = Instant::now();
        let out = f(&self.cfg)?;
        self.timings.insert(name.to_string(), start.elapsed().as_secs_f64());
        Ok(out)
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CommandError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes)?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    fn write_field(&mut self, name: &str, f: &ComplexField) -> CmdResult {
        let path = self.out_dir.join(name);
        f.save_cfld(&path).map_err(CommandError::from)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str, total: Instant) -> CmdResult {
        self.timings.insert("total".into(), total.elapsed().as_secs_f64());
        let manifest = RunManifest {
            command: command.to_string(),
            config_sha256: config_digest(&self.cfg),
            conj_mode: self.cfg.conj_mode,
            threads: self.threads,
            outputs: self.outputs.clone(),
            timings_s: self.timings.clone(),
            notes: self.notes.clone(),
            config: self.cfg,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.out_dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn build_potential(cfg: &ExperimentConfig) -> Result<(GridSpec, ComplexField, DiracPotential), CommandError> {
    let grid = cfg.grid_spec()?;
    let preset = cfg.conductivity_preset()?;
    let gamma = preset.sample_gamma(grid).map_err(CommandError::from)?;
    let q = conductivity_to_potential(&gamma).map_err(CommandError::from)?;
    Ok((grid, gamma, q))
}

fn forward_dataset(cfg: &ExperimentConfig, q: &DiracPotential, kernel: &CauchyKernel) -> Result<ScatteringDataset, CommandError> {
    let provenance = format!("bukhgeim forward sha256:{}", config_digest(cfg));
    let ds_cfg = cfg.dataset_config(provenance);
    compute_dataset(q, &ds_cfg, kernel).map_err(CommandError::from)
}

pub fn cmd_forward(cfg: ExperimentConfig, out_dir: PathBuf, threads: usize) -> CmdResult {
    let total = Instant::now();
    let mut run = Runner::new(cfg, out_dir, threads)?;
    let (_, _, q) = run.stage("potential", build_potential)?;
    let kernel = CauchyKernel::new(q.grid());
    let ds = run.stage("dataset", |cfg| forward_dataset(cfg, &q, &kernel))?;
    let mut bytes = Vec::new();
    ds.write(&mut bytes).map_err(CommandError::from)?;
    run.write_bytes("dataset.bksd", &bytes)?;
    run.write_bytes("dataset.csv", ds.to_csv().as_bytes())?;
    if ds.inconsistent_samples() > 0 {
        run.notes.push(format!(
            "{} samples exceed the volume/boundary consistency tolerance",
            ds.inconsistent_samples()
        ));
    }
    let partial = ds.is_partial();
    let failed = ds.header.failed_samples;
    run.finish("forward", total)?;
    if partial {
        return Err(CommandError {
            message: format!("dataset is partial: {failed} unconverged samples"),
            exit_code: 3,
        });
    }
    Ok(())
}

/// Ground truth restricted to the dataset's w subgrid.
fn subsample(fine: &ComplexField, coarse: GridSpec, stride: usize) -> Result<ComplexField, CommandError> {
    let mut values = Vec::with_capacity(coarse.len());
    for j in 0..coarse.n() {
        for k in 0..coarse.n() {
            values.push(fine.at(j * stride, k * stride));
        }
    }
    ComplexField::from_values(coarse, values).map_err(CommandError::from)
}

const ERROR_CSV_HEADER: &str =
    "preset,n,r_inner,n_r,n_theta,rel_l2_q12,rel_l2_q21,rel_l2_gamma,diag_noise_floor\n";

fn reconstruct_and_report(
    run: &mut Runner,
    ds: &ScatteringDataset,
    gamma_truth: &ComplexField,
    q_truth: &DiracPotential,
    csv_name: &str,
) -> CmdResult {
    let pr = run.stage("reconstruct", |_| {
        reconstruct_pointwise(ds).map_err(CommandError::from)
    })?;
    let gamma_rec = run.stage("recover_gamma", |_| {
        recover_gamma(ds).map_err(CommandError::from)
    })?;
    run.write_field("q12_rec.cfld", pr.q.q12())?;
    run.write_field("q21_rec.cfld", pr.q.q21())?;
    run.write_field("gamma_rec.cfld", &gamma_rec)?;
    run.write_bytes("gamma_rec.csv", gamma_rec.to_csv().as_bytes())?;

    let coarse = pr.grid();
    let stride = ds.header.w_stride;
    let t12 = subsample(q_truth.q12(), coarse, stride)?;
    let t21 = subsample(q_truth.q21(), coarse, stride)?;
    let tg = subsample(gamma_truth, coarse, stride)?;
    let m12 = error_metrics(pr.q.q12(), &t12).map_err(CommandError::from)?;
    let m21 = error_metrics(pr.q.q21(), &t21).map_err(CommandError::from)?;
    let mg = error_metrics(&gamma_rec, &tg).map_err(CommandError::from)?;
    let row = format!(
        "{},{},{},{},{},{},{},{},{}\n",
        run.cfg.preset.kind,
        run.cfg.grid.n,
        run.cfg.annulus.r_inner,
        run.cfg.annulus.n_r,
        run.cfg.annulus.n_theta,
        m12.rel_l2,
        m21.rel_l2,
        mg.rel_l2,
        pr.diagonal_noise_floor(),
    );
    run.write_bytes(csv_name, format!("{ERROR_CSV_HEADER}{row}").as_bytes())?;
    Ok(())
}

pub fn cmd_reconstruct(
    cfg: ExperimentConfig,
    dataset: PathBuf,
    out_dir: PathBuf,
    threads: usize,
) -> CmdResult {
    let total = Instant::now();
    let mut run = Runner::new(cfg, out_dir, threads)?;
    let ds = ScatteringDataset::load(&dataset).map_err(CommandError::from)?;
    let grid = run.cfg.grid_spec()?;
    if ds.header.grid != grid {
        return Err(CommandError {
            message: format!(
                "dataset grid (L={}, N={}) does not match config grid (L={}, N={})",
                ds.header.grid.half_width(),
                ds.header.grid.n(),
                grid.half_width(),
                grid.n()
            ),
            exit_code: 2,
        });
    }
    let (_, gamma, q) = run.stage("potential", build_potential)?;
    reconstruct_and_report(&mut run, &ds, &gamma, &q, "errors.csv")?;
    run.finish("reconstruct", total)
}

pub fn cmd_roundtrip(cfg: ExperimentConfig, out_dir: PathBuf, threads: usize) -> CmdResult {
    let total = Instant::now();
    let mut run = Runner::new(cfg, out_dir, threads)?;
    let (_, gamma, q) = run.stage("potential", build_potential)?;
    let kernel = CauchyKernel::new(q.grid());
    let ds = run.stage("dataset", |cfg| forward_dataset(cfg, &q, &kernel))?;
    let mut bytes = Vec::new();
    ds.write(&mut bytes).map_err(CommandError::from)?;
    run.write_bytes("dataset.bksd", &bytes)?;
    if ds.is_partial() {
        let failed = ds.header.failed_samples;
        run.finish("roundtrip", total)?;
        return Err(CommandError {
            message: format!("dataset is partial: {failed} unconverged samples"),
            exit_code: 3,
        });
    }
    reconstruct_and_report(&mut run, &ds, &gamma, &q, "summary.csv")?;
    run.finish("roundtrip", total)
}

pub fn cmd_diagnostics(cfg: ExperimentConfig, out_dir: PathBuf, threads: usize) -> CmdResult {
    let total = Instant::now();
    let mut run = Runner::new(cfg, out_dir, threads)?;
    let (grid, _, q) = run.stage("potential", build_potential)?;
    let kernel = CauchyKernel::new(grid);
    let preset = run.cfg.conductivity_preset()?;
    let decay_cfg = DecayConfig {
        p: 4.0,
        shell_inner_radii: run.cfg.shell_inner_radii.clone(),
        n_r: run.cfg.annulus.n_r,
        n_theta: run.cfg.annulus.n_theta,
        w_samples: vec![Complex64::ZERO, preset.center],
        tol: run.cfg.tol,
        max_iter: run.cfg.max_iter,
    };
    let report = run.stage("decay", |_| {
        decay_diagnostics(&q, &decay_cfg, &kernel).map_err(CommandError::from)
    })?;
    run.write_bytes("decay.csv", report.to_csv().as_bytes())?;

    // Stationary-phase error table for a smooth bump, evaluated at its
    // center where g is largest.
    let g = TestFunction {
        kind: BumpKind::GaussianBump,
        center: Complex64::ZERO,
        radius: (0.6f64).min(bukhgeim::grid::SUPPORT_MARGIN * grid.half_width()),
        amplitude: Complex64::ONE,
    };
    let lambdas: Vec<Complex64> = run
        .cfg
        .stationary_lambdas
        .iter()
        .map(|&r| Complex64::new(r, 0.0))
        .collect();
    let sp = run.stage("stationary_phase", |_| {
        stationary_phase_check(&g, Complex64::ZERO, &lambdas, grid).map_err(CommandError::from)
    })?;
    run.write_bytes("stationary.csv", sp.to_csv().as_bytes())?;
    run.notes.push(format!("stationary-phase slope {:.3}", sp.slope));

    // Zero-potential sanity: diagnostics on the unit preset must be silent.
    if run.cfg.preset_kind()? == PresetKind::Unit {
        let max = report.rows.iter().map(|r| r.norm).fold(0.0f64, f64::max);
        run.notes.push(format!("unit preset: max shell norm {max:e}"));
    }
    run.finish("diagnostics", total)
}
