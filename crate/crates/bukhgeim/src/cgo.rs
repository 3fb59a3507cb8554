//! CGO solutions of the Dirac system at one spectral point.
//!
//! Solves the phase-modulated Lippmann-Schwinger equation
//! `mu = I + C(e^{-i rho} Q conj(mu))` with `rho = Im[lambda (z-w)^2] / 2`
//! by fixed-point iteration, exposes the scalar operator
//! `M = L_lambda Q12 conj(L_lambda) conj(Q21)` and its Neumann series as an
//! independent route to `mu11`, and measures the large-|lambda| norm decay of
//! `M 1`, `mu11 - 1` and `T^lambda[M 1]` over octave shells.

use num_complex::Complex64;
use serde::Serialize;

use crate::cauchy::{cauchy_transform, CauchyKernel};
use crate::dirac::DiracPotential;
use crate::error::{Error, Result};
use crate::grid::{integrate, ComplexField, GridSpec};
use crate::quadrature::annulus_rule;

/// Largest admissible exponent in `exp` before f64 overflow.
pub const OVERFLOW_BUDGET: f64 = 700.0;

/// Consecutive non-decreasing residuals before the iteration is declared
/// non-contractive.
const STALL_LIMIT: usize = 5;

/// One spectral sample: lambda anywhere in the punctured plane, w inside the
/// grid square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub lambda: Complex64,
    pub w: Complex64,
}

/// Bukhgeim phase and its unimodular exponentials on a grid.
pub struct Phase {
    pub rho: Vec<f64>,
    pub e_minus: ComplexField,
    pub e_plus: ComplexField,
}

/// `rho(z) = Im[lambda (z - w)^2] / 2`, `e_minus = exp(-i rho)`,
/// `e_plus = exp(i rho)`. Built from cos/sin of the real phase, so the
/// exponentials are unimodular to the last bit.
pub fn bukhgeim_phase(grid: GridSpec, sp: SpectralPoint) -> Phase {
    let mut rho = vec![0.0; grid.len()];
    let mut minus = vec![Complex64::ZERO; grid.len()];
    let mut plus = vec![Complex64::ZERO; grid.len()];
    for (idx, z) in grid.nodes() {
        let d = z - sp.w;
        let r = 0.5 * (sp.lambda * d * d).im;
        let (s, c) = r.sin_cos();
        rho[idx] = r;
        minus[idx] = Complex64::new(c, -s);
        plus[idx] = Complex64::new(c, s);
    }
    Phase {
        rho,
        e_minus: ComplexField::from_values(grid, minus).expect("sized"),
        e_plus: ComplexField::from_values(grid, plus).expect("sized"),
    }
}

/// `L_lambda phi = C(e^{-i rho} phi)`.
pub fn apply_l_lambda(
    phi: &ComplexField,
    phase: &Phase,
    kernel: &CauchyKernel,
) -> Result<ComplexField> {
    cauchy_transform(&phase.e_minus.mul(phi)?, kernel)
}

/// Converged CGO matrix `mu` with solver metadata.
#[derive(Debug, Clone)]
pub struct MuSolution {
    /// Entries in order (1,1), (1,2), (2,1), (2,2).
    pub entries: [ComplexField; 4],
    pub spectral: SpectralPoint,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
}

impl MuSolution {
    pub fn grid(&self) -> GridSpec {
        self.entries[0].grid()
    }

    pub fn mu11(&self) -> &ComplexField {
        &self.entries[0]
    }

    /// `mu - I` entrywise.
    pub fn deviation(&self) -> [ComplexField; 4] {
        let one = ComplexField::constant(self.grid(), Complex64::ONE);
        [
            self.entries[0].sub(&one).expect("same grid"),
            self.entries[1].clone(),
            self.entries[2].clone(),
            self.entries[3].sub(&one).expect("same grid"),
        ]
    }
}

/// One sweep of the Lippmann-Schwinger map: `I + C(e_minus Q conj(mu))`.
fn ls_step(
    q: &DiracPotential,
    phase: &Phase,
    kernel: &CauchyKernel,
    mu: &[ComplexField; 4],
) -> Result<[ComplexField; 4]> {
    // Q conj(mu) for off-diagonal Q:
    //   row 1: Q12 conj(mu21), Q12 conj(mu22)
    //   row 2: Q21 conj(mu11), Q21 conj(mu12)
    let prod = [
        q.q12().mul(&mu[2].conj())?,
        q.q12().mul(&mu[3].conj())?,
        q.q21().mul(&mu[0].conj())?,
        q.q21().mul(&mu[1].conj())?,
    ];
    let one = ComplexField::constant(q.grid(), Complex64::ONE);
    let t11 = cauchy_transform(&phase.e_minus.mul(&prod[0])?, kernel)?.add(&one)?;
    let t12 = cauchy_transform(&phase.e_minus.mul(&prod[1])?, kernel)?;
    let t21 = cauchy_transform(&phase.e_minus.mul(&prod[2])?, kernel)?;
    let t22 = cauchy_transform(&phase.e_minus.mul(&prod[3])?, kernel)?.add(&one)?;
    Ok([t11, t12, t21, t22])
}

/// Solve the 2x2 Lippmann-Schwinger fixed point at one spectral point.
pub fn solve_mu(
    q: &DiracPotential,
    sp: SpectralPoint,
    tol: f64,
    max_iter: usize,
    kernel: &CauchyKernel,
) -> Result<MuSolution> {
    if q.grid() != kernel.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = q.grid();
    let phase = bukhgeim_phase(grid, sp);
    let one = ComplexField::constant(grid, Complex64::ONE);
    let mut mu = [
        one.clone(),
        ComplexField::zeros(grid),
        ComplexField::zeros(grid),
        one,
    ];
    let mut prev_residual = f64::INFINITY;
    let mut stalls = 0usize;
    for iter in 1..=max_iter {
        let next = ls_step(q, &phase, kernel, &mu)?;
        let residual = (0..4)
            .map(|i| next[i].sub(&mu[i]).expect("same grid").sup_norm())
            .fold(0.0, f64::max);
        mu = next;
        if residual <= tol {
            return Ok(MuSolution {
                entries: mu,
                spectral: sp,
                iterations: iter,
                final_residual: residual,
                converged: true,
            });
        }
        if residual >= prev_residual {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                return Err(Error::NotContractive {
                    lambda_abs: sp.lambda.norm(),
                    residual,
                });
            }
        } else {
            stalls = 0;
        }
        prev_residual = residual;
    }
    Err(Error::MaxIterations(max_iter))
}

/// `M f = L_lambda(Q12 conj(L_lambda(Q21 conj(f))))`, the scalar operator
/// governing `mu11`. Linear in `f` (the two conjugations cancel).
pub fn apply_m(
    f: &ComplexField,
    q: &DiracPotential,
    phase: &Phase,
    kernel: &CauchyKernel,
) -> Result<ComplexField> {
    let inner = apply_l_lambda(&q.q21().mul(&f.conj())?, phase, kernel)?;
    apply_l_lambda(&q.q12().mul(&inner.conj())?, phase, kernel)
}

/// Neumann-series route to `mu11`: `mu11 = 1 + sum_k M^k 1`.
pub fn solve_mu11_via_m(
    q: &DiracPotential,
    sp: SpectralPoint,
    tol: f64,
    max_iter: usize,
    kernel: &CauchyKernel,
) -> Result<ComplexField> {
    let grid = q.grid();
    let phase = bukhgeim_phase(grid, sp);
    let one = ComplexField::constant(grid, Complex64::ONE);
    let mut term = apply_m(&one, q, &phase, kernel)?;
    let mut sum = term.clone();
    let mut prev = f64::INFINITY;
    let mut stalls = 0usize;
    for _ in 1..=max_iter {
        let norm = term.sup_norm();
        if norm <= tol {
            return Ok(sum.add(&one)?);
        }
        if norm >= prev {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                return Err(Error::NotContractive { lambda_abs: sp.lambda.norm(), residual: norm });
            }
        } else {
            stalls = 0;
        }
        prev = norm;
        term = apply_m(&term, q, &phase, kernel)?;
        sum = sum.add(&term)?;
    }
    Err(Error::MaxIterations(max_iter))
}

/// `psi = mu exp(lambda (z-w)^2 / 4)` entrywise in z.
pub fn assemble_psi(mu: &MuSolution) -> Result<[ComplexField; 4]> {
    let grid = mu.grid();
    let sp = mu.spectral;
    let mut worst = f64::NEG_INFINITY;
    for (_, z) in grid.nodes() {
        let d = z - sp.w;
        worst = worst.max(0.25 * (sp.lambda * d * d).re);
    }
    if worst > OVERFLOW_BUDGET {
        return Err(Error::ExponentialOverflow(worst));
    }
    let mut phase = vec![Complex64::ZERO; grid.len()];
    for (idx, z) in grid.nodes() {
        let d = z - sp.w;
        phase[idx] = (0.25 * sp.lambda * d * d).exp();
    }
    let phase = ComplexField::from_values(grid, phase)?;
    Ok([
        mu.entries[0].mul(&phase)?,
        mu.entries[1].mul(&phase)?,
        mu.entries[2].mul(&phase)?,
        mu.entries[3].mul(&phase)?,
    ])
}

/// Configuration of the shell-decay measurement.
#[derive(Debug, Clone, Serialize)]
pub struct DecayConfig {
    /// L^p exponent in lambda. The M-family norms require p > 2.
    pub p: f64,
    /// Inner radii of the octave shells (R, 2R).
    pub shell_inner_radii: Vec<f64>,
    /// Radial Gauss-Legendre points per shell.
    pub n_r: usize,
    /// Uniform angular samples per circle (full complex arguments).
    pub n_theta: usize,
    /// Spatial parameters w to take the sup over.
    pub w_samples: Vec<Complex64>,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub r_inner: f64,
    pub r_outer: f64,
    pub quantity: String,
    pub norm: f64,
}

/// Shell-wise empirical norms: L^p over sampled lambda (polar quadrature),
/// sup over sampled w, sup over z where the quantity is a field.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub p: f64,
    pub quadrature: String,
    pub rows: Vec<DecayRow>,
}

impl DecayReport {
    pub fn norms_of(&self, quantity: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.quantity == quantity)
            .map(|r| (r.r_inner, r.norm))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("shell_r_inner,shell_r_outer,quantity,norm\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.r_inner, r.r_outer, r.quantity, r.norm));
        }
        s
    }
}

pub const QUANTITY_M1: &str = "M1";
pub const QUANTITY_MU11_MINUS_1: &str = "mu11_minus_1";
pub const QUANTITY_T_LAMBDA_M1: &str = "T_lambda_M1";

/// Measure shell norms of `M 1`, `mu11 - 1` and `T^lambda[M 1]`.
pub fn decay_diagnostics(
    q: &DiracPotential,
    cfg: &DecayConfig,
    kernel: &CauchyKernel,
) -> Result<DecayReport> {
    let grid = q.grid();
    let one = ComplexField::constant(grid, Complex64::ONE);
    let mut rows = Vec::new();
    for &r in &cfg.shell_inner_radii {
        let rule = annulus_rule(r, cfg.n_r, cfg.n_theta);
        let area: f64 = rule.iter().map(|&(_, wt)| wt).sum();
        // Accumulate sum_lambda wt * v^p per w, then sup over w. The shell
        // integral is normalized by the shell area so that octaves are
        // comparable (the raw integral carries an R^2 measure factor).
        let mut acc = [0.0f64; 3]; // running sup over w of the L^p norms
        for &w in &cfg.w_samples {
            let mut sums = [0.0f64; 3];
            for &(lambda, wt) in &rule {
                let sp = SpectralPoint { lambda, w };
                let phase = bukhgeim_phase(grid, sp);
                let m1 = apply_m(&one, q, &phase, kernel)?;
                let v_m1 = m1.sup_norm();
                let mu = solve_mu(q, sp, cfg.tol, cfg.max_iter, kernel)?;
                let v_mu = mu.deviation()[0].sup_norm();
                let t = t_lambda_scalar(&m1, q, &phase)?;
                let v_t = t.iter().map(|c| c.norm()).fold(0.0, f64::max);
                sums[0] += wt * v_m1.powf(cfg.p);
                sums[1] += wt * v_mu.powf(cfg.p);
                sums[2] += wt * v_t.powf(cfg.p);
            }
            for i in 0..3 {
                acc[i] = acc[i].max((sums[i] / area).powf(1.0 / cfg.p));
            }
        }
        for (i, name) in [QUANTITY_M1, QUANTITY_MU11_MINUS_1, QUANTITY_T_LAMBDA_M1]
            .iter()
            .enumerate()
        {
            rows.push(DecayRow {
                r_inner: r,
                r_outer: 2.0 * r,
                quantity: (*name).to_string(),
                norm: acc[i],
            });
        }
    }
    Ok(DecayReport {
        p: cfg.p,
        quadrature: format!(
            "polar shell rule: {} Gauss-Legendre radii x {} uniform angles, weight |lambda| dr dtheta, normalized by shell area",
            cfg.n_r, cfg.n_theta
        ),
        rows,
    })
}

/// `T^lambda[g] = int e^{-i rho} Q g dsigma` for scalar g; returns the 2x2
/// result (diagonal identically zero for off-diagonal Q).
pub fn t_lambda_scalar(
    g: &ComplexField,
    q: &DiracPotential,
    phase: &Phase,
) -> Result<[Complex64; 4]> {
    let weighted = phase.e_minus.mul(g)?;
    let h12 = integrate(&q.q12().mul(&weighted)?);
    let h21 = integrate(&q.q21().mul(&weighted)?);
    Ok([Complex64::ZERO, h12, h21, Complex64::ZERO])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac::conductivity_to_potential;
    use crate::grid::{make_grid, ConductivityPreset, PresetKind};

    fn bump_potential(n: usize) -> (DiracPotential, CauchyKernel) {
        let g = make_grid(1.0, n).unwrap();
        let gamma = ConductivityPreset::new(PresetKind::RealBump).sample_gamma(g).unwrap();
        (conductivity_to_potential(&gamma).unwrap(), CauchyKernel::new(g))
    }

    #[test]
    fn phase_values() {
        let g = make_grid(2.0, 16).unwrap();
        // lambda = 0: rho = 0, exponentials = 1.
        let p0 = bukhgeim_phase(g, SpectralPoint { lambda: Complex64::ZERO, w: Complex64::ZERO });
        assert!(p0.rho.iter().all(|&r| r == 0.0));
        assert!(p0
            .e_minus
            .values()
            .iter()
            .all(|&v| (v - Complex64::ONE).norm() == 0.0));

        // lambda = 2i, w = 0 at z = 1: lambda z^2 = 2i, rho = 1.
        let sp = SpectralPoint { lambda: Complex64::new(0.0, 2.0), w: Complex64::ZERO };
        let p = bukhgeim_phase(g, sp);
        let (j, k) = g.locate(Complex64::new(1.0, 0.0)).unwrap();
        let idx = g.index(j, k);
        assert!((p.rho[idx] - 1.0).abs() < 1e-12);
        let want = Complex64::new(1.0f64.cos(), -(1.0f64.sin()));
        assert!((p.e_minus.values()[idx] - want).norm() < 1e-12);

        // rho vanishes at z = w.
        let spw = SpectralPoint { lambda: Complex64::new(3.0, -1.0), w: Complex64::new(0.5, 0.25) };
        let pw = bukhgeim_phase(g, spw);
        let (j, k) = g.locate(spw.w).unwrap();
        assert_eq!(pw.rho[g.index(j, k)], 0.0);

        // Unimodularity everywhere.
        for v in pw.e_plus.values() {
            assert!((v.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn l_lambda_at_zero_is_plain_cauchy() {
        let g = make_grid(1.0, 32).unwrap();
        let kernel = CauchyKernel::new(g);
        let f = crate::grid::TestFunction {
            kind: crate::grid::BumpKind::GaussianBump,
            center: Complex64::ZERO,
            radius: 0.5,
            amplitude: Complex64::new(1.0, -0.2),
        }
        .sample_on(g)
        .unwrap();
        let phase = bukhgeim_phase(g, SpectralPoint { lambda: Complex64::ZERO, w: Complex64::ZERO });
        let a = apply_l_lambda(&f, &phase, &kernel).unwrap();
        let b = cauchy_transform(&f, &kernel).unwrap();
        assert!(a.sub(&b).unwrap().sup_norm() < 1e-14);
        let z = apply_l_lambda(&ComplexField::zeros(g), &phase, &kernel).unwrap();
        assert_eq!(z.sup_norm(), 0.0);
    }

    #[test]
    fn l_lambda_matches_nested_quadrature_oracle() {
        let g = make_grid(1.0, 32).unwrap();
        let kernel = CauchyKernel::new(g);
        let sp = SpectralPoint { lambda: Complex64::new(5.0, 3.0), w: Complex64::new(0.1, 0.0) };
        let phase = bukhgeim_phase(g, sp);
        let f = crate::grid::TestFunction {
            kind: crate::grid::BumpKind::GaussianBump,
            center: Complex64::new(-0.1, 0.2),
            radius: 0.5,
            amplitude: Complex64::ONE,
        }
        .sample_on(g)
        .unwrap();
        let fast = apply_l_lambda(&f, &phase, &kernel).unwrap();
        let weighted = phase.e_minus.mul(&f).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (idx, z) in g.nodes() {
            let direct = crate::cauchy::cauchy_oracle(&weighted, z);
            num += (fast.values()[idx] - direct).norm_sqr();
            den += direct.norm_sqr();
        }
        assert!((num / den).sqrt() <= 1e-3, "rel {}", (num / den).sqrt());
    }

    #[test]
    fn zero_potential_gives_identity_in_one_iteration() {
        let g = make_grid(1.0, 32).unwrap();
        let kernel = CauchyKernel::new(g);
        let q = DiracPotential::zeros(g);
        let sp = SpectralPoint { lambda: Complex64::new(0.0, 40.0), w: Complex64::ZERO };
        let mu = solve_mu(&q, sp, 1e-10, 50, &kernel).unwrap();
        assert!(mu.converged);
        assert_eq!(mu.iterations, 1);
        assert_eq!(mu.final_residual, 0.0);
        let dev = mu.deviation();
        assert!(dev.iter().all(|d| d.sup_norm() == 0.0));

        let mu11 = solve_mu11_via_m(&q, sp, 1e-10, 50, &kernel).unwrap();
        let one = ComplexField::constant(g, Complex64::ONE);
        assert!(mu11.sub(&one).unwrap().sup_norm() == 0.0);
    }

    #[test]
    fn bump_potential_converges_and_decays() {
        let (q, kernel) = bump_potential(64);
        let w = Complex64::new(0.1, -0.05);
        let sp40 = SpectralPoint { lambda: Complex64::from_polar(40.0, 0.7), w };
        let mu40 = solve_mu(&q, sp40, 1e-10, 200, &kernel).unwrap();
        assert!(mu40.converged);
        assert!(mu40.final_residual <= 1e-10);
        // mu -> I away from the support.
        let dev = mu40.deviation();
        let frame = dev.iter().map(|d| d.frame_max(1)).fold(0.0, f64::max);
        assert!(frame < 0.1, "frame deviation {frame}");

        let sp80 = SpectralPoint { lambda: Complex64::from_polar(80.0, 0.7), w };
        let mu80 = solve_mu(&q, sp80, 1e-10, 200, &kernel).unwrap();
        let d40 = mu40.deviation()[0].sup_norm();
        let d80 = mu80.deviation()[0].sup_norm();
        assert!(d80 <= d40, "d40 {d40} d80 {d80}");
    }

    #[test]
    fn fixed_point_and_neumann_routes_agree() {
        let (q, kernel) = bump_potential(64);
        let tol = 1e-10;
        let sp = SpectralPoint {
            lambda: Complex64::from_polar(40.0, 2.1),
            w: Complex64::new(-0.15, 0.2),
        };
        let mu = solve_mu(&q, sp, tol, 200, &kernel).unwrap();
        let mu11 = solve_mu11_via_m(&q, sp, tol, 200, &kernel).unwrap();
        let diff = mu.mu11().sub(&mu11).unwrap().sup_norm();
        assert!(diff <= 10.0 * tol, "routes differ by {diff}");
    }

    #[test]
    fn neumann_terms_decay_geometrically() {
        let (q, kernel) = bump_potential(64);
        let g = q.grid();
        let sp = SpectralPoint { lambda: Complex64::from_polar(40.0, 0.3), w: Complex64::ZERO };
        let phase = bukhgeim_phase(g, sp);
        let one = ComplexField::constant(g, Complex64::ONE);
        let t1 = apply_m(&one, &q, &phase, &kernel).unwrap();
        let t2 = apply_m(&t1, &q, &phase, &kernel).unwrap();
        let t3 = apply_m(&t2, &q, &phase, &kernel).unwrap();
        let r1 = t2.sup_norm() / t1.sup_norm();
        let r2 = t3.sup_norm() / t2.sup_norm();
        assert!(r1 < 1.0 && r2 < 1.0, "ratios {r1} {r2}");
    }

    #[test]
    fn apply_m_is_linear() {
        let (q, kernel) = bump_potential(32);
        let g = q.grid();
        let sp = SpectralPoint { lambda: Complex64::new(10.0, 25.0), w: Complex64::new(0.2, 0.1) };
        let phase = bukhgeim_phase(g, sp);
        let f = crate::grid::sample(g, |z| Complex64::new(z.re, 0.3) * (-z.norm_sqr()).exp()).unwrap();
        let h = crate::grid::sample(g, |z| Complex64::new(0.1, z.im * z.re)).unwrap();
        let a = Complex64::new(1.3, -0.7);
        let b = Complex64::new(-0.4, 0.9);
        let lhs = apply_m(&f.scale(a).add(&h.scale(b)).unwrap(), &q, &phase, &kernel).unwrap();
        let rhs = apply_m(&f, &q, &phase, &kernel)
            .unwrap()
            .scale(a)
            .add(&apply_m(&h, &q, &phase, &kernel).unwrap().scale(b))
            .unwrap();
        let rel = lhs.sub(&rhs).unwrap().sup_norm() / rhs.sup_norm();
        assert!(rel < 1e-12, "rel {rel}");

        // M of zero is zero; M with zero potential is zero.
        let z = apply_m(&ComplexField::zeros(g), &q, &phase, &kernel).unwrap();
        assert_eq!(z.sup_norm(), 0.0);
        let q0 = DiracPotential::zeros(g);
        let m0 = apply_m(&f, &q0, &phase, &kernel).unwrap();
        assert_eq!(m0.sup_norm(), 0.0);
    }

    #[test]
    fn m_matches_kernel_form_oracle() {
        // Direct double quadrature of the kernel
        // A(z, z2) = pi^-2 int e^{-i rho(z1)} / (z - z1) Q12(z1)
        //                  e^{ i rho(z2)} / conj(z1 - z2) conj(Q21)(z2) dsigma_z1
        // applied to f, at small N.
        let g = make_grid(1.0, 24).unwrap();
        let gamma = ConductivityPreset::new(PresetKind::RealBump).sample_gamma(g).unwrap();
        let q = conductivity_to_potential(&gamma).unwrap();
        let kernel = CauchyKernel::new(g);
        let sp = SpectralPoint { lambda: Complex64::new(8.0, 14.0), w: Complex64::new(0.1, -0.2) };
        let phase = bukhgeim_phase(g, sp);
        let f = crate::grid::sample(g, |z| Complex64::new(1.0, 0.5) * (-2.0 * z.norm_sqr()).exp())
            .unwrap();
        let fast = apply_m(&f, &q, &phase, &kernel).unwrap();

        let h2 = g.spacing() * g.spacing();
        let pi = std::f64::consts::PI;
        let mut direct = vec![Complex64::ZERO; g.len()];
        // inner(z1) = sum_z2 e^{i rho(z2)} / conj(z1 - z2) conj(Q21)(z2) f(z2)
        let mut inner = vec![Complex64::ZERO; g.len()];
        for (i1, z1) in g.nodes() {
            let mut s = Complex64::ZERO;
            for (i2, z2) in g.nodes() {
                if i1 == i2 {
                    continue;
                }
                s += phase.e_plus.values()[i2] * q.q21().values()[i2].conj()
                    * f.values()[i2]
                    / (z1 - z2).conj();
            }
            inner[i1] = s * h2;
        }
        for (iz, z) in g.nodes() {
            let mut s = Complex64::ZERO;
            for (i1, z1) in g.nodes() {
                if iz == i1 {
                    continue;
                }
                s += phase.e_minus.values()[i1] * q.q12().values()[i1] * inner[i1] / (z - z1);
            }
            direct[iz] = s * h2 / (pi * pi);
        }
        let direct = ComplexField::from_values(g, direct).unwrap();
        let rel = fast.sub(&direct).unwrap().l2_norm() / direct.l2_norm();
        assert!(rel <= 1e-2, "rel {rel}");
    }

    #[test]
    fn converged_solution_satisfies_equation_residual() {
        let (q, kernel) = bump_potential(64);
        let tol = 1e-10;
        let sp = SpectralPoint { lambda: Complex64::from_polar(50.0, 1.0), w: Complex64::ZERO };
        let mu = solve_mu(&q, sp, tol, 200, &kernel).unwrap();
        let phase = bukhgeim_phase(q.grid(), sp);
        let next = ls_step(&q, &phase, &kernel, &mu.entries).unwrap();
        let res = (0..4)
            .map(|i| next[i].sub(&mu.entries[i]).unwrap().sup_norm())
            .fold(0.0, f64::max);
        assert!(res <= 10.0 * tol, "residual {res}");
    }

    #[test]
    fn psi_assembly() {
        let (q, kernel) = bump_potential(32);
        let g = q.grid();
        // lambda = 0 -> psi = mu.
        let sp0 = SpectralPoint { lambda: Complex64::ZERO, w: Complex64::ZERO };
        let mu = solve_mu(&DiracPotential::zeros(g), sp0, 1e-10, 10, &kernel).unwrap();
        let psi = assemble_psi(&mu).unwrap();
        assert!(psi[0].sub(mu.mu11()).unwrap().sup_norm() == 0.0);

        // Q = 0 -> psi = exp(lambda (z-w)^2/4) I.
        let sp = SpectralPoint { lambda: Complex64::new(1.0, 2.0), w: Complex64::new(0.2, 0.0) };
        let mu = solve_mu(&DiracPotential::zeros(g), sp, 1e-10, 10, &kernel).unwrap();
        let psi = assemble_psi(&mu).unwrap();
        for (idx, z) in g.nodes() {
            let d = z - sp.w;
            let want = (0.25 * sp.lambda * d * d).exp();
            assert!((psi[0].values()[idx] - want).norm() < 1e-12);
            assert!(psi[1].values()[idx].norm() == 0.0);
        }

        // Overflow guard.
        let sp_big = SpectralPoint { lambda: Complex64::new(4000.0, 0.0), w: Complex64::ZERO };
        let mu_big = MuSolution {
            entries: [
                ComplexField::constant(g, Complex64::ONE),
                ComplexField::zeros(g),
                ComplexField::zeros(g),
                ComplexField::constant(g, Complex64::ONE),
            ],
            spectral: sp_big,
            iterations: 1,
            final_residual: 0.0,
            converged: true,
        };
        assert!(matches!(assemble_psi(&mu_big), Err(Error::ExponentialOverflow(_))));
        let _ = q;
    }

    #[test]
    fn dirac_equation_residual_of_psi() {
        // dbar(psi) = Q conj(psi) reduces, after the analytic factor
        // exp(lambda (z-w)^2/4) is cancelled, to
        // dbar(mu) = e^{-i rho} Q conj(mu). Check the first column on the
        // padded periodic representation.
        let (q, kernel) = bump_potential(256);
        let g = q.grid();
        let sp = SpectralPoint { lambda: Complex64::from_polar(30.0, 0.5), w: Complex64::ZERO };
        let mu = solve_mu(&q, sp, 1e-10, 200, &kernel).unwrap();
        let phase = bukhgeim_phase(g, sp);
        // Column 1 of Q conj(mu): rows (Q12 conj(mu21), Q21 conj(mu11)).
        let rhs1 = phase.e_minus.mul(&q.q12().mul(&mu.entries[2].conj()).unwrap()).unwrap();
        let rhs2 = phase.e_minus.mul(&q.q21().mul(&mu.entries[0].conj()).unwrap()).unwrap();
        // mu11 = 1 + C(rhs1), mu21 = C(rhs2); differentiate the padded forms.
        let p1 = crate::cauchy::cauchy_transform_padded(&rhs1, &kernel).unwrap();
        let p2 = crate::cauchy::cauchy_transform_padded(&rhs2, &kernel).unwrap();
        let d1 = crate::cauchy::restrict_padded(&crate::cauchy::dbar(&p1), &kernel).unwrap();
        let d2 = crate::cauchy::restrict_padded(&crate::cauchy::dbar(&p2), &kernel).unwrap();
        let r1 = d1.sub(&rhs1).unwrap().l2_norm() / rhs1.l2_norm();
        let r2 = d2.sub(&rhs2).unwrap().l2_norm() / rhs2.l2_norm();
        assert!(r1 <= 1e-2, "column residual {r1}");
        assert!(r2 <= 1e-2, "column residual {r2}");
    }

    #[test]
    fn decay_diagnostics_zero_potential() {
        let g = make_grid(1.0, 32).unwrap();
        let kernel = CauchyKernel::new(g);
        let q = DiracPotential::zeros(g);
        let cfg = DecayConfig {
            p: 4.0,
            shell_inner_radii: vec![10.0, 20.0],
            n_r: 2,
            n_theta: 4,
            w_samples: vec![Complex64::ZERO],
            tol: 1e-10,
            max_iter: 50,
        };
        let report = decay_diagnostics(&q, &cfg, &kernel).unwrap();
        assert!(report.rows.iter().all(|r| r.norm == 0.0));
    }

    #[test]
    fn decay_diagnostics_shells_decrease() {
        let (q, kernel) = bump_potential(64);
        let cfg = DecayConfig {
            p: 4.0,
            shell_inner_radii: vec![10.0, 20.0, 40.0],
            n_r: 2,
            n_theta: 8,
            w_samples: vec![Complex64::ZERO, Complex64::new(0.2, -0.1)],
            tol: 1e-10,
            max_iter: 200,
        };
        let report = decay_diagnostics(&q, &cfg, &kernel).unwrap();
        for name in [QUANTITY_M1, QUANTITY_MU11_MINUS_1] {
            let norms = report.norms_of(name);
            assert_eq!(norms.len(), 3);
            assert!(norms[0].1 > norms[1].1 && norms[1].1 > norms[2].1, "{name}: {norms:?}");
        }
    }

    #[test]
    fn mu_decay_is_monotone_in_lambda() {
        let (q, kernel) = bump_potential(64);
        let w = Complex64::new(0.05, 0.05);
        let arg = 1.3;
        let mut prev = f64::INFINITY;
        for r in [20.0, 40.0, 80.0] {
            let sp = SpectralPoint { lambda: Complex64::from_polar(r, arg), w };
            let mu = solve_mu(&q, sp, 1e-10, 200, &kernel).unwrap();
            let d = mu.deviation()[0].sup_norm();
            assert!(d <= prev, "at |lambda| = {r}: {d} > {prev}");
            prev = d;
        }
    }
}
