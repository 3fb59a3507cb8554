//! Generalized scattering data `h(lambda, w)` and batch dataset production.
//!
//! `h` is computed two independent ways: the volume form
//! `int e^{-i rho} Q conj(mu) dsigma` and the boundary form
//! `(1/2i) oint mu dz` over a square contour containing the potential
//! support. The two are tied by Green's formula; their agreement certifies
//! the solver and resolves the conjugation convention (see [`ConjMode`]).

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cauchy::CauchyKernel;
use crate::cgo::{bukhgeim_phase, solve_mu, MuSolution, Phase, SpectralPoint};
pub use crate::cgo::t_lambda_scalar;
use crate::dirac::DiracPotential;
use crate::error::{Error, Result};
use crate::grid::{integrate, ComplexField, GridSpec};
use crate::quadrature::annulus_rule;

/// Minimum index distance between the potential support and the boundary
/// contour.
const CONTOUR_CLEARANCE: usize = 3;

/// Whether the volume form integrates `Q conj(mu)` or `Q mu`.
///
/// The defining volume integral carries the conjugate; an alternative
/// formulation of the same data reads `h = T^lambda[mu]` without it. The two
/// readings disagree as written, so both are implemented and the boundary
/// contour form is the arbiter: `Conjugated` is the mode that matches it and
/// is the documented default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConjMode {
    Conjugated,
    Plain,
}

impl Default for ConjMode {
    fn default() -> Self {
        ConjMode::Conjugated
    }
}

/// `T^lambda[G] = int e^{-i rho} Q G dsigma` for a 2x2 field G.
pub fn t_lambda(
    g: &[ComplexField; 4],
    q: &DiracPotential,
    phase: &Phase,
) -> Result<[Complex64; 4]> {
    // Q G for off-diagonal Q: rows (Q12 G21, Q12 G22), (Q21 G11, Q21 G12).
    let e = &phase.e_minus;
    Ok([
        integrate(&e.mul(&q.q12().mul(&g[2])?)?),
        integrate(&e.mul(&q.q12().mul(&g[3])?)?),
        integrate(&e.mul(&q.q21().mul(&g[0])?)?),
        integrate(&e.mul(&q.q21().mul(&g[1])?)?),
    ])
}

/// Volume form of the scattering data at the solution's spectral point.
pub fn scattering_volume(
    q: &DiracPotential,
    mu: &MuSolution,
    mode: ConjMode,
) -> Result<[Complex64; 4]> {
    if !mu.converged {
        return Err(Error::NotConverged);
    }
    if q.grid() != mu.grid() {
        return Err(Error::GridMismatch);
    }
    let phase = bukhgeim_phase(q.grid(), mu.spectral);
    let g: [ComplexField; 4] = match mode {
        ConjMode::Conjugated => [
            mu.entries[0].conj(),
            mu.entries[1].conj(),
            mu.entries[2].conj(),
            mu.entries[3].conj(),
        ],
        ConjMode::Plain => mu.entries.clone(),
    };
    t_lambda(&g, q, &phase)
}

/// Boundary form: trapezoidal quadrature of `(1/2i) oint mu dz` over the
/// counterclockwise square contour at `ring` cells inside the grid frame.
pub fn scattering_boundary(
    mu: &MuSolution,
    q: &DiracPotential,
    ring: usize,
) -> Result<[Complex64; 4]> {
    let grid = mu.grid();
    if q.grid() != grid {
        return Err(Error::GridMismatch);
    }
    let n = grid.n();
    if 2 * (ring + CONTOUR_CLEARANCE) + 2 >= n {
        return Err(Error::ContourTooTight(CONTOUR_CLEARANCE));
    }
    // The support must stay CONTOUR_CLEARANCE cells away from the contour.
    let scale = 1.0 + q.sup_norm();
    for j in 0..n {
        for k in 0..n {
            let rd = j.min(k).min(n - 1 - j).min(n - 1 - k);
            let dist = rd.abs_diff(ring);
            if dist <= CONTOUR_CLEARANCE {
                let idx = grid.index(j, k);
                if q.q12().values()[idx].norm() > 1e-12 * scale
                    || q.q21().values()[idx].norm() > 1e-12 * scale
                {
                    return Err(Error::ContourTooTight(CONTOUR_CLEARANCE));
                }
            }
        }
    }
    let lo = ring;
    let hi = n - 1 - ring;
    // Counterclockwise node path: bottom, right, top, left.
    let mut path: Vec<(usize, usize)> = Vec::with_capacity(4 * (hi - lo));
    for j in lo..hi {
        path.push((j, lo));
    }
    for k in lo..hi {
        path.push((hi, k));
    }
    for j in ((lo + 1)..=hi).rev() {
        path.push((j, hi));
    }
    for k in ((lo + 1)..=hi).rev() {
        path.push((lo, k));
    }
    let mut acc = [Complex64::ZERO; 4];
    let len = path.len();
    for i in 0..len {
        let (j0, k0) = path[i];
        let (j1, k1) = path[(i + 1) % len];
        let dz = grid.node(j1, k1) - grid.node(j0, k0);
        for (e, a) in acc.iter_mut().enumerate() {
            let f0 = mu.entries[e].at(j0, k0);
            let f1 = mu.entries[e].at(j1, k1);
            *a += 0.5 * (f0 + f1) * dz;
        }
    }
    let half_i = Complex64::new(0.0, 2.0);
    Ok([acc[0] / half_i, acc[1] / half_i, acc[2] / half_i, acc[3] / half_i])
}

/// Polar annulus sampling of lambda.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnulusSpec {
    /// Inner radius R; the outer radius is 2R.
    pub r_inner: f64,
    /// Gauss-Legendre radial points.
    pub n_r: usize,
    /// Uniform angular samples (full complex arguments).
    pub n_theta: usize,
}

impl AnnulusSpec {
    pub fn rule(&self) -> Vec<(Complex64, f64)> {
        annulus_rule(self.r_inner, self.n_r, self.n_theta)
    }
}

/// Per-sample solver certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub iterations: usize,
    pub residual: f64,
    /// Whether the fixed-point solve converged; failed solves make the
    /// dataset partial.
    pub converged: bool,
    /// Whether the volume and boundary forms agreed within the configured
    /// tolerance. Advisory: disagreement is expected for w far from the
    /// support, where h is tiny and under-resolved, and those samples carry
    /// almost no reconstruction weight.
    pub consistent: bool,
    /// Relative disagreement between the volume and boundary forms; absent
    /// when the boundary form could not be evaluated.
    pub vol_bnd_disagreement: Option<f64>,
    /// Failure description for unconverged or inconsistent samples.
    pub error: Option<String>,
}

/// Serializable header of a dataset file; the bulk h block is binary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub grid: GridSpec,
    pub annulus: AnnulusSpec,
    pub lambda_samples: Vec<[f64; 3]>, // re, im, weight
    pub w_samples: Vec<[f64; 2]>,
    pub w_stride: usize,
    pub w_cell_area: f64,
    pub conj_mode: ConjMode,
    pub tol: f64,
    pub max_iter: usize,
    pub meta: Vec<SampleMeta>,
    pub failed_samples: usize,
    pub provenance: String,
}

/// Scattering data over an annulus in lambda and a subgrid in w.
///
/// Sample order is lambda-major: `id = lambda_index * w_count + w_index`.
#[derive(Debug, Clone)]
pub struct ScatteringDataset {
    pub header: DatasetHeader,
    pub h_values: Vec<[Complex64; 4]>,
}

impl ScatteringDataset {
    pub fn lambda(&self, i: usize) -> (Complex64, f64) {
        let s = self.header.lambda_samples[i];
        (Complex64::new(s[0], s[1]), s[2])
    }

    pub fn w(&self, i: usize) -> Complex64 {
        let s = self.header.w_samples[i];
        Complex64::new(s[0], s[1])
    }

    pub fn n_lambda(&self) -> usize {
        self.header.lambda_samples.len()
    }

    pub fn n_w(&self) -> usize {
        self.header.w_samples.len()
    }

    pub fn h(&self, lambda_idx: usize, w_idx: usize) -> [Complex64; 4] {
        self.h_values[lambda_idx * self.n_w() + w_idx]
    }

    pub fn is_partial(&self) -> bool {
        self.header.failed_samples > 0
    }

    /// Samples whose volume/boundary forms disagreed beyond tolerance.
    pub fn inconsistent_samples(&self) -> usize {
        self.header.meta.iter().filter(|m| !m.consistent).count()
    }

    pub fn max_abs_h(&self) -> f64 {
        self.h_values
            .iter()
            .flat_map(|h| h.iter().map(|c| c.norm()))
            .fold(0.0, f64::max)
    }

    /// The coarse grid formed by the w samples (requires the stride to divide
    /// the grid so that the subgrid is itself a valid grid).
    pub fn w_grid(&self) -> Result<GridSpec> {
        let n = self.header.grid.n();
        let s = self.header.w_stride;
        if s == 0 || n % s != 0 {
            return Err(Error::Format("w stride does not divide the grid".into()));
        }
        GridSpec::new(self.header.grid.half_width(), n / s)
    }

    pub fn write<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let json = serde_json::to_vec(&self.header)
            .map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"BKSD")?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for h in &self.h_values {
            for c in h {
                out.write_all(&c.re.to_le_bytes())?;
                out.write_all(&c.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)
    }

    pub fn read<R: std::io::Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"BKSD" {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut json = vec![0u8; len];
        input.read_exact(&mut json)?;
        let header: DatasetHeader =
            serde_json::from_slice(&json).map_err(|e| Error::Format(e.to_string()))?;
        let count = header.lambda_samples.len() * header.w_samples.len();
        let mut h_values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut h = [Complex64::ZERO; 4];
            for c in &mut h {
                input.read_exact(&mut b8)?;
                let re = f64::from_le_bytes(b8);
                input.read_exact(&mut b8)?;
                let im = f64::from_le_bytes(b8);
                *c = Complex64::new(re, im);
            }
            h_values.push(h);
        }
        Ok(Self { header, h_values })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read(&mut f)
    }

    /// CSV export, one row per (lambda, w) sample.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "re_lambda,im_lambda,re_w,im_w,h11_re,h11_im,h12_re,h12_im,h21_re,h21_im,h22_re,h22_im,residual\n",
        );
        for il in 0..self.n_lambda() {
            let (lambda, _) = self.lambda(il);
            for iw in 0..self.n_w() {
                let w = self.w(iw);
                let h = self.h(il, iw);
                let meta = &self.header.meta[il * self.n_w() + iw];
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    lambda.re,
                    lambda.im,
                    w.re,
                    w.im,
                    h[0].re,
                    h[0].im,
                    h[1].re,
                    h[1].im,
                    h[2].re,
                    h[2].im,
                    h[3].re,
                    h[3].im,
                    meta.residual,
                ));
            }
        }
        s
    }
}

/// Dataset production parameters.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub annulus: AnnulusSpec,
    /// Every `w_stride`-th node per axis becomes a w sample.
    pub w_stride: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub conj_mode: ConjMode,
    /// Contour ring (cells inside the grid frame) for the boundary form.
    pub contour_ring: usize,
    /// Relative volume/boundary disagreement flagged as a failure.
    pub consistency_tol: f64,
    pub provenance: String,
}

impl DatasetConfig {
    pub fn new(annulus: AnnulusSpec, w_stride: usize) -> Self {
        Self {
            annulus,
            w_stride,
            tol: 1e-10,
            max_iter: 200,
            conj_mode: ConjMode::Conjugated,
            contour_ring: 1,
            consistency_tol: 0.05,
            provenance: String::new(),
        }
    }
}

/// Subgrid w samples for a stride, in deterministic row-major order.
pub fn w_subgrid(grid: GridSpec, stride: usize) -> Vec<Complex64> {
    let n = grid.n();
    let mut out = Vec::new();
    let mut j = 0;
    while j < n {
        let mut k = 0;
        while k < n {
            out.push(grid.node(j, k));
            k += stride;
        }
        j += stride;
    }
    out
}

/// Solve every (lambda, w) sample and store both-form-certified h values.
///
/// Samples are independent; they are mapped in parallel over a worker pool
/// and gathered into slots indexed by sample id, so the output is
/// deterministic for a fixed configuration.
pub fn compute_dataset(
    q: &DiracPotential,
    cfg: &DatasetConfig,
    kernel: &CauchyKernel,
) -> Result<ScatteringDataset> {
    let grid = q.grid();
    if grid != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let rule = cfg.annulus.rule();
    let w_samples = w_subgrid(grid, cfg.w_stride);
    let n_w = w_samples.len();
    let ids: Vec<usize> = (0..rule.len() * n_w).collect();
    let results: Vec<(SampleMeta, [Complex64; 4])> = ids
        .par_iter()
        .map(|&id| {
            let (lambda, _) = rule[id / n_w];
            let w = w_samples[id % n_w];
            let sp = SpectralPoint { lambda, w };
            match solve_mu(q, sp, cfg.tol, cfg.max_iter, kernel) {
                Ok(mu) => {
                    let vol = scattering_volume(q, &mu, cfg.conj_mode)
                        .expect("converged solution");
                    let bnd = scattering_boundary(&mu, q, cfg.contour_ring);
                    match bnd {
                        Ok(bnd) => {
                            let denom = vol
                                .iter()
                                .map(|c| c.norm())
                                .fold(0.0f64, f64::max)
                                .max(1e-12);
                            let dis = vol
                                .iter()
                                .zip(&bnd)
                                .map(|(a, b)| (a - b).norm())
                                .fold(0.0f64, f64::max)
                                / denom;
                            let ok = dis <= cfg.consistency_tol;
                            let meta = SampleMeta {
                                iterations: mu.iterations,
                                residual: mu.final_residual,
                                converged: true,
                                consistent: ok,
                                vol_bnd_disagreement: Some(dis),
                                error: if ok {
                                    None
                                } else {
                                    Some(format!(
                                        "volume/boundary forms disagree by {dis:e}"
                                    ))
                                },
                            };
                            (meta, vol)
                        }
                        Err(e) => (
                            SampleMeta {
                                iterations: mu.iterations,
                                residual: mu.final_residual,
                                converged: true,
                                consistent: false,
                                vol_bnd_disagreement: None,
                                error: Some(e.to_string()),
                            },
                            vol,
                        ),
                    }
                }
                Err(e) => (
                    SampleMeta {
                        iterations: 0,
                        residual: 0.0,
                        converged: false,
                        consistent: false,
                        vol_bnd_disagreement: None,
                        error: Some(e.to_string()),
                    },
                    [Complex64::ZERO; 4],
                ),
            }
        })
        .collect();
    let failed = results.iter().filter(|(m, _)| !m.converged).count();
    let header = DatasetHeader {
        version: 1,
        grid,
        annulus: cfg.annulus,
        lambda_samples: rule.iter().map(|&(l, w)| [l.re, l.im, w]).collect(),
        w_samples: w_samples.iter().map(|w| [w.re, w.im]).collect(),
        w_stride: cfg.w_stride,
        w_cell_area: {
            let s = cfg.w_stride as f64 * grid.spacing();
            s * s
        },
        conj_mode: cfg.conj_mode,
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        meta: results.iter().map(|(m, _)| m.clone()).collect(),
        failed_samples: failed,
        provenance: cfg.provenance.clone(),
    };
    Ok(ScatteringDataset { header, h_values: results.into_iter().map(|(_, h)| h).collect() })
}
