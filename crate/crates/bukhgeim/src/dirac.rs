//! The changes of variables between the conductivity and the Dirac system.
//!
//! `gamma -> Q`: `Q12 = -(1/2) d log gamma`, `q21 = -(1/2) dbar log gamma`,
//! and the system stores `Q21 = conj(q21)`. `Q -> gamma`: invert
//! `dbar log gamma = -2 conj(Q21)` with the Cauchy transform, which decays at
//! infinity and thereby pins the additive constant (`gamma -> 1` at the grid
//! frame).

use num_complex::Complex64;

use crate::cauchy::{cauchy_transform, wirtinger, CauchyKernel, DiffMode};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, GridSpec};

/// Minimum admissible |gamma|.
pub const GAMMA_FLOOR: f64 = 1e-6;

/// Decay tolerance for the recovered `log gamma` on the grid frame.
pub const FRAME_DECAY_TOL: f64 = 0.2;

/// Off-diagonal Dirac potential. Diagonal entries are identically zero by
/// construction and are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DiracPotential {
    q12: ComplexField,
    q21: ComplexField,
}

impl DiracPotential {
    pub fn new(q12: ComplexField, q21: ComplexField) -> Result<Self> {
        if q12.grid() != q21.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { q12, q21 })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { q12: ComplexField::zeros(grid), q21: ComplexField::zeros(grid) }
    }

    pub fn grid(&self) -> GridSpec {
        self.q12.grid()
    }

    /// The (1,2) entry of the Dirac potential matrix.
    pub fn q12(&self) -> &ComplexField {
        &self.q12
    }

    /// The (2,1) entry (already conjugated relative to the conductivity form).
    pub fn q21(&self) -> &ComplexField {
        &self.q21
    }

    pub fn sup_norm(&self) -> f64 {
        self.q12.sup_norm().max(self.q21.sup_norm())
    }

    pub fn is_zero(&self) -> bool {
        self.sup_norm() == 0.0
    }
}

/// Continuous branch of `log gamma`, unwrapped along each grid line from the
/// frame where `gamma = 1`.
fn unwrap_log(gamma: &ComplexField) -> Result<ComplexField> {
    let grid = gamma.grid();
    let n = grid.n();
    let mut values = vec![Complex64::ZERO; grid.len()];
    for k in 0..n {
        let mut prev_arg = gamma.at(0, k).arg();
        let mut phase = prev_arg; // frame value; ~0 when gamma = 1 there
        for j in 0..n {
            let v = gamma.at(j, k);
            let arg = v.arg();
            let mut delta = arg - prev_arg;
            while delta > std::f64::consts::PI {
                delta -= 2.0 * std::f64::consts::PI;
            }
            while delta < -std::f64::consts::PI {
                delta += 2.0 * std::f64::consts::PI;
            }
            phase += if j == 0 { 0.0 } else { delta };
            prev_arg = arg;
            values[grid.index(j, k)] = Complex64::new(v.norm().ln(), phase);
        }
        // Returning to the frame must close the loop; a leftover multiple of
        // 2 pi means gamma winds around the origin along this line.
        let winding = (phase / (2.0 * std::f64::consts::PI)).round() as i32;
        if winding != 0 {
            return Err(Error::BranchAmbiguity { line: k, winding });
        }
    }
    Ok(ComplexField::from_values(grid, values)?)
}

/// `gamma -> Q` (the forward change of variables).
pub fn conductivity_to_potential(gamma: &ComplexField) -> Result<DiracPotential> {
    conductivity_to_potential_with(gamma, DiffMode::Spectral)
}

pub fn conductivity_to_potential_with(
    gamma: &ComplexField,
    mode: DiffMode,
) -> Result<DiracPotential> {
    let min = gamma.values().iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    if min < GAMMA_FLOOR {
        return Err(Error::VanishingConductivity { min, floor: GAMMA_FLOOR });
    }
    let log_gamma = unwrap_log(gamma)?;
    let mut q12 = wirtinger(&log_gamma, mode, false).scale(Complex64::new(-0.5, 0.0));
    let mut q21_raw = wirtinger(&log_gamma, mode, true).scale(Complex64::new(-0.5, 0.0));
    // The true potential vanishes exactly where gamma is the constant 1;
    // differentiation (spectral in particular) leaks small tails there.
    // Mask to the support of gamma - 1 dilated by 2 cells, so downstream
    // consumers see a compactly supported field.
    let mask = support_mask(gamma);
    for idx in 0..mask.len() {
        if !mask[idx] {
            q12.values_mut()[idx] = Complex64::ZERO;
            q21_raw.values_mut()[idx] = Complex64::ZERO;
        }
    }
    DiracPotential::new(q12, q21_raw.conj())
}

/// Support of `gamma - 1`, dilated by 2 cells (Chebyshev).
fn support_mask(gamma: &ComplexField) -> Vec<bool> {
    let grid = gamma.grid();
    let n = grid.n();
    let dev: Vec<f64> = gamma.values().iter().map(|v| (v - Complex64::ONE).norm()).collect();
    let sup = dev.iter().cloned().fold(0.0f64, f64::max);
    let thresh = 1e-13 * sup;
    let mut mask = vec![false; grid.len()];
    for j in 0..n {
        for k in 0..n {
            if dev[grid.index(j, k)] > thresh {
                for dj in j.saturating_sub(2)..=(j + 2).min(n - 1) {
                    for dk in k.saturating_sub(2)..=(k + 2).min(n - 1) {
                        mask[grid.index(dj, dk)] = true;
                    }
                }
            }
        }
    }
    mask
}

/// `Q -> gamma`: solve `dbar log gamma = -2 conj(Q21)` with decay at infinity.
pub fn potential_to_conductivity(q: &DiracPotential, kernel: &CauchyKernel) -> Result<ComplexField> {
    if q.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let rhs = q.q21().conj().scale(Complex64::new(-2.0, 0.0));
    let log_gamma = cauchy_transform(&rhs, kernel)?;
    let frame = log_gamma.frame_max(1);
    if frame > FRAME_DECAY_TOL {
        return Err(Error::NonDecayingSolution { max: frame, tol: FRAME_DECAY_TOL });
    }
    Ok(log_gamma.map(|v| v.exp()))
}
