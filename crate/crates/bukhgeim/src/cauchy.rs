//! Solid Cauchy transform (inverse d-bar operator) and Wirtinger derivatives.
//!
//! The transform `C f (z) = (1/pi) int f(z') / (z - z') dsigma` is computed as
//! a discrete convolution on a zero-padded `2N` grid via FFT. The kernel is
//! the free-space `1/(pi z)` sampled at cell centers, with two adjustments:
//!
//! * the singular cell carries its exact analytic cell integral instead of a
//!   point sample (for a square centered at the origin the odd symmetry of
//!   `1/z` makes that integral exactly zero);
//! * offsets beyond `(1 + SUPPORT_MARGIN) * L` per component are smoothly
//!   tapered to zero at the padding frame. Those offsets never pair an output
//!   node with a point of an admissibly supported input, so results on the
//!   main grid are unchanged, while the periodic image of the kernel stays
//!   continuous across the frame.
//!
//! Inputs must be compactly supported inside the `SUPPORT_MARGIN` box.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{ComplexField, GridSpec, SUPPORT_MARGIN};

/// Precomputed spectral data for the fast Cauchy transform on one grid.
pub struct CauchyKernel {
    grid: GridSpec,
    padded: usize,
    kernel_hat: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// Exact integral of `1/(pi z)` over the grid cell centered at the origin.
///
/// The integrand is odd under `z -> -z` and the cell is centrally symmetric,
/// so the closed-form value is zero.
pub fn singular_cell_weight() -> Complex64 {
    Complex64::ZERO
}

/// Quintic smoothstep, 1 at t <= 0 and 0 at t >= 1.
fn taper(t: f64) -> f64 {
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        let s = 1.0 - t;
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

impl CauchyKernel {
    pub fn new(grid: GridSpec) -> Self {
        let n = grid.n();
        let m = 2 * n;
        let h = grid.spacing();
        let el = grid.half_width();
        // Taper begins where admissible offsets end and reaches zero at the
        // padding frame.
        let t0 = (1.0 + SUPPORT_MARGIN) * el;
        let t1 = 2.0 * el;
        let mut kernel = vec![Complex64::ZERO; m * m];
        for p in 0..m {
            let dj = if p < n { p as isize } else { p as isize - m as isize };
            for q in 0..m {
                let dk = if q < n { q as isize } else { q as isize - m as isize };
                let val = if dj == 0 && dk == 0 {
                    singular_cell_weight() / (h * h)
                } else {
                    let dz = Complex64::new(dj as f64 * h, dk as f64 * h);
                    let wx = taper((dz.re.abs() - t0) / (t1 - t0));
                    let wy = taper((dz.im.abs() - t0) / (t1 - t0));
                    wx * wy / (std::f64::consts::PI * dz)
                };
                kernel[p * m + q] = val;
            }
        }
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(m);
        let ifft = planner.plan_fft_inverse(m);
        fft2(&mut kernel, m, fft.as_ref());
        Self { grid, padded: m, kernel_hat: kernel, fft, ifft }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn padded_size(&self) -> usize {
        self.padded
    }

    /// The padded grid the periodic convolution lives on.
    pub fn padded_grid(&self) -> GridSpec {
        GridSpec::new(2.0 * self.grid.half_width(), self.padded).expect("padded grid is valid")
    }

    fn convolve(&self, f: &ComplexField) -> Result<Vec<Complex64>> {
        if f.grid() != self.grid {
            return Err(Error::GridMismatch);
        }
        let max = f.sup_norm();
        let leak = f.max_outside_margin();
        if leak > 1e-9 * (1.0 + max) {
            return Err(Error::SupportMargin { max_frame: leak });
        }
        let n = self.grid.n();
        let m = self.padded;
        let mut buf = vec![Complex64::ZERO; m * m];
        for j in 0..n {
            for k in 0..n {
                buf[j * m + k] = f.values()[self.grid.index(j, k)];
            }
        }
        fft2(&mut buf, m, self.fft.as_ref());
        let h2 = self.grid.spacing() * self.grid.spacing();
        let scale = h2 / (m * m) as f64;
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k * scale;
        }
        fft2(&mut buf, m, self.ifft.as_ref());
        Ok(buf)
    }
}

/// Fast Cauchy transform, returned on the input grid.
pub fn cauchy_transform(f: &ComplexField, kernel: &CauchyKernel) -> Result<ComplexField> {
    let buf = kernel.convolve(f)?;
    let n = kernel.grid.n();
    let m = kernel.padded;
    let mut values = vec![Complex64::ZERO; n * n];
    for j in 0..n {
        for k in 0..n {
            values[kernel.grid.index(j, k)] = buf[j * m + k];
        }
    }
    ComplexField::from_values(kernel.grid, values)
}

/// Cauchy transform on the full padded periodic grid.
///
/// The result is exactly periodic-compatible, so spectral differentiation may
/// be applied to it directly. The input sits in the lower-left quadrant of the
/// padded square; values in the outer half carry the tapered kernel and are
/// only asymptotically meaningful.
pub fn cauchy_transform_padded(f: &ComplexField, kernel: &CauchyKernel) -> Result<ComplexField> {
    let buf = kernel.convolve(f)?;
    ComplexField::from_values(kernel.padded_grid(), buf)
}

/// Restrict a padded-grid field back to the main grid of `kernel`.
pub fn restrict_padded(f: &ComplexField, kernel: &CauchyKernel) -> Result<ComplexField> {
    if f.grid() != kernel.padded_grid() {
        return Err(Error::GridMismatch);
    }
    let n = kernel.grid.n();
    let m = kernel.padded;
    let mut values = vec![Complex64::ZERO; n * n];
    for j in 0..n {
        for k in 0..n {
            values[kernel.grid.index(j, k)] = f.values()[j * m + k];
        }
    }
    ComplexField::from_values(kernel.grid, values)
}

/// Direct-quadrature oracle for the Cauchy transform at a single point.
///
/// O(N^2) per point; used to validate the fast path at small N.
pub fn cauchy_oracle(f: &ComplexField, z: Complex64) -> Complex64 {
    let grid = f.grid();
    let h = grid.spacing();
    let h2 = h * h;
    let mut acc = Complex64::ZERO;
    for (idx, zp) in grid.nodes() {
        let d = z - zp;
        if d.norm() < 0.5 * h {
            // Singular cell: exact analytic cell integral times f there.
            acc += singular_cell_weight() * f.values()[idx];
        } else {
            acc += h2 * f.values()[idx] / (std::f64::consts::PI * d);
        }
    }
    acc
}

/// In-place 2D FFT on an `m x m` row-major buffer: rows, transpose, rows,
/// transpose back.
fn fft2(data: &mut [Complex64], m: usize, fft: &dyn Fft<f64>) {
    debug_assert_eq!(data.len(), m * m);
    let mut scratch = vec![Complex64::ZERO; fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(m) {
        fft.process_with_scratch(row, &mut scratch);
    }
    transpose(data, m);
    for row in data.chunks_exact_mut(m) {
        fft.process_with_scratch(row, &mut scratch);
    }
    transpose(data, m);
}

fn transpose(data: &mut [Complex64], m: usize) {
    for i in 0..m {
        for j in (i + 1)..m {
            data.swap(i * m + j, j * m + i);
        }
    }
}

/// Differentiation backend for the Wirtinger derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffMode {
    /// Fourier multipliers, treating the field as periodic on its own grid.
    /// Exact up to machine precision for smooth fields that are compactly
    /// supported or periodic-compatible.
    Spectral,
    /// Fourth-order centered finite differences with zero extension. Local;
    /// intended for merely-Lipschitz inputs where spectral accuracy is moot.
    FiniteDifference,
}

/// d-bar = (1/2)(d/dx + i d/dy).
pub fn dbar(f: &ComplexField) -> ComplexField {
    wirtinger(f, DiffMode::Spectral, true)
}

/// d = (1/2)(d/dx - i d/dy).
pub fn partial(f: &ComplexField) -> ComplexField {
    wirtinger(f, DiffMode::Spectral, false)
}

pub fn wirtinger(f: &ComplexField, mode: DiffMode, bar: bool) -> ComplexField {
    match mode {
        DiffMode::Spectral => wirtinger_spectral(f, bar),
        DiffMode::FiniteDifference => wirtinger_fd(f, bar),
    }
}

fn wirtinger_spectral(f: &ComplexField, bar: bool) -> ComplexField {
    let grid = f.grid();
    let n = grid.n();
    let period = 2.0 * grid.half_width();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = f.values().to_vec();
    fft2(&mut buf, n, fft.as_ref());
    let wavenumber = |idx: usize| -> f64 {
        let s = if idx <= n / 2 { idx as isize } else { idx as isize - n as isize };
        if s.unsigned_abs() == n / 2 {
            0.0 // drop the unmatched Nyquist mode
        } else {
            2.0 * std::f64::consts::PI * s as f64 / period
        }
    };
    for j in 0..n {
        let kx = wavenumber(j);
        for k in 0..n {
            let ky = wavenumber(k);
            // 1/2 (i kx -+ ky): minus for d-bar, plus for d.
            let mult = if bar {
                Complex64::new(-ky, kx) * 0.5
            } else {
                Complex64::new(ky, kx) * 0.5
            };
            buf[j * n + k] *= mult / (n * n) as f64;
        }
    }
    fft2(&mut buf, n, ifft.as_ref());
    ComplexField::from_values(grid, buf).expect("size preserved")
}

fn wirtinger_fd(f: &ComplexField, bar: bool) -> ComplexField {
    let grid = f.grid();
    let n = grid.n() as isize;
    let h = grid.spacing();
    let get = |j: isize, k: isize| -> Complex64 {
        if j < 0 || k < 0 || j >= n || k >= n {
            Complex64::ZERO
        } else {
            f.values()[(j * n + k) as usize]
        }
    };
    let mut values = vec![Complex64::ZERO; (n * n) as usize];
    for j in 0..n {
        for k in 0..n {
            let dx = (8.0 * (get(j + 1, k) - get(j - 1, k)) - (get(j + 2, k) - get(j - 2, k)))
                / (12.0 * h);
            let dy = (8.0 * (get(j, k + 1) - get(j, k - 1)) - (get(j, k + 2) - get(j, k - 2)))
                / (12.0 * h);
            let i = Complex64::new(0.0, 1.0);
            values[(j * n + k) as usize] = if bar { 0.5 * (dx + i * dy) } else { 0.5 * (dx - i * dy) };
        }
    }
    ComplexField::from_values(grid, values).expect("size preserved")
}
