//! Annulus-averaged reconstruction of the potential and the conductivity
//! from scattering data, plus the stationary-phase cross-check behind the
//! averaging constant.
//!
//! Weak form: `int g Q dsigma = (1 / (4 pi^2 ln 2)) sum_lambda wt |lambda|^-1
//! sum_w area g(w) h(lambda, w)`, over one octave annulus `R < |lambda| < 2R`;
//! convergence is measured by comparing octaves, not by a true limit. The
//! pointwise form drops the g-integration (same stationary-phase
//! localization) and yields a field on the w subgrid.

use num_complex::Complex64;
use serde::Serialize;

use crate::cauchy::CauchyKernel;
use crate::dirac::{potential_to_conductivity, DiracPotential};
use crate::error::{Error, Result};
use crate::grid::{ComplexField, GridSpec, TestFunction};
use crate::scattering::ScatteringDataset;

/// The averaging constant `4 pi^2 ln 2`: `2 pi` from the angular integral,
/// `2 pi ln 2` from `int_R^{2R} r^-1 dr` against the stationary-phase factor
/// `2 pi / |lambda|`.
pub fn recon_const() -> f64 {
    4.0 * std::f64::consts::PI * std::f64::consts::PI * std::f64::consts::LN_2
}

/// The annulus-weighted average of h applied entrywise:
/// `(1 / (4 pi^2 ln 2)) sum_lambda wt |lambda|^-1 h(lambda, w)`.
fn lambda_average(ds: &ScatteringDataset, w_idx: usize) -> [Complex64; 4] {
    let mut acc = [Complex64::ZERO; 4];
    for il in 0..ds.n_lambda() {
        let (lambda, wt) = ds.lambda(il);
        let c = wt / lambda.norm();
        let h = ds.h(il, w_idx);
        for e in 0..4 {
            acc[e] += c * h[e];
        }
    }
    let inv = 1.0 / recon_const();
    acc.map(|v| inv * v)
}

/// Weak-form reconstruction: the paired value `int g Q dsigma` entrywise.
pub fn reconstruct_weak(ds: &ScatteringDataset, g: &TestFunction) -> Result<[Complex64; 4]> {
    let grid = ds.header.grid;
    let reach = g.center.re.abs().max(g.center.im.abs()) + g.radius;
    let hull = grid.half_width() - ds.header.w_stride as f64 * grid.spacing();
    if reach > hull {
        return Err(Error::SupportNotCovered);
    }
    let area = ds.header.w_cell_area;
    let mut acc = [Complex64::ZERO; 4];
    for iw in 0..ds.n_w() {
        let gw = g.eval(ds.w(iw));
        if gw == Complex64::ZERO {
            continue;
        }
        let avg = lambda_average(ds, iw);
        for e in 0..4 {
            acc[e] += area * gw * avg[e];
        }
    }
    Ok(acc)
}

/// Pointwise reconstruction output: the off-diagonal entries of the averaged
/// h become the potential; the diagonal entries, which vanish for the true
/// potential, are kept as an empirical noise floor.
#[derive(Debug, Clone)]
pub struct PointwiseReconstruction {
    pub q: DiracPotential,
    pub noise11: ComplexField,
    pub noise22: ComplexField,
    pub r_used: f64,
}

impl PointwiseReconstruction {
    pub fn grid(&self) -> GridSpec {
        self.q.grid()
    }

    /// Sup of the diagonal noise entries.
    pub fn diagonal_noise_floor(&self) -> f64 {
        self.noise11.sup_norm().max(self.noise22.sup_norm())
    }
}

/// Pointwise reconstruction on the dataset's w subgrid.
pub fn reconstruct_pointwise(ds: &ScatteringDataset) -> Result<PointwiseReconstruction> {
    if ds.is_partial() {
        return Err(Error::PartialDataset(ds.header.failed_samples));
    }
    let coarse = ds.w_grid()?;
    if ds.n_w() != coarse.len() {
        return Err(Error::Format("w samples do not fill the subgrid".into()));
    }
    let mut q12 = vec![Complex64::ZERO; coarse.len()];
    let mut q21 = vec![Complex64::ZERO; coarse.len()];
    let mut n11 = vec![Complex64::ZERO; coarse.len()];
    let mut n22 = vec![Complex64::ZERO; coarse.len()];
    // w samples are emitted row-major over the subgrid, matching the coarse
    // grid's own indexing.
    for iw in 0..ds.n_w() {
        let avg = lambda_average(ds, iw);
        n11[iw] = avg[0];
        q12[iw] = avg[1];
        q21[iw] = avg[2];
        n22[iw] = avg[3];
    }
    Ok(PointwiseReconstruction {
        q: DiracPotential::new(
            ComplexField::from_values(coarse, q12)?,
            ComplexField::from_values(coarse, q21)?,
        )?,
        noise11: ComplexField::from_values(coarse, n11)?,
        noise22: ComplexField::from_values(coarse, n22)?,
        r_used: ds.header.annulus.r_inner,
    })
}

/// Recover the conductivity: pointwise potential, then invert the dbar link
/// on the coarse grid (normalized by decay at the frame).
///
/// The averaged data carries a small noise floor everywhere, including near
/// the frame where the true potential is guaranteed to vanish; that part is
/// clipped so the dbar inversion sees an admissibly supported field.
pub fn recover_gamma(ds: &ScatteringDataset) -> Result<ComplexField> {
    let pr = reconstruct_pointwise(ds)?;
    let grid = pr.grid();
    let lim = crate::grid::SUPPORT_MARGIN * grid.half_width();
    let clip = |f: &ComplexField| -> Result<ComplexField> {
        let mut values = f.values().to_vec();
        for (idx, z) in grid.nodes() {
            if z.re.abs() > lim || z.im.abs() > lim {
                values[idx] = Complex64::ZERO;
            }
        }
        ComplexField::from_values(grid, values)
    };
    let q = DiracPotential::new(clip(pr.q.q12())?, clip(pr.q.q21())?)?;
    let kernel = CauchyKernel::new(grid);
    potential_to_conductivity(&q, &kernel)
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryPhaseRow {
    pub lambda_abs: f64,
    pub lhs_re: f64,
    pub lhs_im: f64,
    pub leading_re: f64,
    pub leading_im: f64,
    pub abs_error: f64,
}

/// Error table for the quadratic-phase localization
/// `int e^{-i Im[lambda (w - z)^2]/2} g(w) dsigma_w ~ (2 pi / |lambda|) g(z)`.
#[derive(Debug, Clone, Serialize)]
pub struct StationaryPhaseReport {
    pub rows: Vec<StationaryPhaseRow>,
    /// Least-squares slope of `log(abs_error)` against `log |lambda|`.
    pub slope: f64,
}

impl StationaryPhaseReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda_abs,lhs_re,lhs_im,leading_re,leading_im,abs_error\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.lambda_abs, r.lhs_re, r.lhs_im, r.leading_re, r.leading_im, r.abs_error
            ));
        }
        s.push_str(&format!("slope,{},,,,\n", self.slope));
        s
    }
}

/// Evaluate the oscillatory integral directly on `grid` (plain node sums are
/// spectrally accurate here: the integrand is smooth and compactly
/// supported) and tabulate the error of the leading term.
pub fn stationary_phase_check(
    g: &TestFunction,
    z: Complex64,
    lambdas: &[Complex64],
    grid: GridSpec,
) -> Result<StationaryPhaseReport> {
    let samples = g.sample_on(grid)?;
    let h2 = grid.spacing() * grid.spacing();
    let gz = g.eval(z);
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut lhs = Complex64::ZERO;
        for (idx, w) in grid.nodes() {
            let v = samples.values()[idx];
            if v == Complex64::ZERO {
                continue;
            }
            let d = w - z;
            let rho = 0.5 * (lambda * d * d).im;
            let (s, c) = rho.sin_cos();
            lhs += Complex64::new(c, -s) * v;
        }
        lhs *= h2;
        let leading = 2.0 * std::f64::consts::PI / lambda.norm() * gz;
        rows.push(StationaryPhaseRow {
            lambda_abs: lambda.norm(),
            lhs_re: lhs.re,
            lhs_im: lhs.im,
            leading_re: leading.re,
            leading_im: leading.im,
            abs_error: (lhs - leading).norm(),
        });
    }
    // Log-log least squares over rows with nonzero error.
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.abs_error > 0.0)
        .map(|r| (r.lambda_abs.ln(), r.abs_error.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        0.0
    };
    Ok(StationaryPhaseReport { rows, slope })
}

/// Relative error norms of `f` against a reference field.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ErrorMetrics {
    pub rel_l2: f64,
    pub rel_sup: f64,
    /// Same norms restricted to the reference's support dilated by 2 cells.
    pub rel_l2_support: f64,
    pub rel_sup_support: f64,
}

pub fn error_metrics(f: &ComplexField, reference: &ComplexField) -> Result<ErrorMetrics> {
    if f.grid() != reference.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = f.grid();
    let n = grid.n();
    let sup_ref = reference.sup_norm();
    let thresh = 1e-12 * sup_ref;
    // Support mask of the reference, dilated by 2 cells (Chebyshev).
    let mut mask = vec![false; grid.len()];
    for j in 0..n {
        for k in 0..n {
            if reference.at(j, k).norm() > thresh {
                for dj in j.saturating_sub(2)..=(j + 2).min(n - 1) {
                    for dk in k.saturating_sub(2)..=(k + 2).min(n - 1) {
                        mask[grid.index(dj, dk)] = true;
                    }
                }
            }
        }
    }
    let mut num2 = 0.0;
    let mut den2 = 0.0;
    let mut num_sup = 0.0f64;
    let mut num2_m = 0.0;
    let mut den2_m = 0.0;
    let mut num_sup_m = 0.0f64;
    let mut den_sup_m = 0.0f64;
    for idx in 0..grid.len() {
        let d = (f.values()[idx] - reference.values()[idx]).norm();
        let r = reference.values()[idx].norm();
        num2 += d * d;
        den2 += r * r;
        num_sup = num_sup.max(d);
        if mask[idx] {
            num2_m += d * d;
            den2_m += r * r;
            num_sup_m = num_sup_m.max(d);
            den_sup_m = den_sup_m.max(r);
        }
    }
    let rel = |num: f64, den: f64| if den > 0.0 { num / den } else { num };
    Ok(ErrorMetrics {
        rel_l2: rel(num2.sqrt(), den2.sqrt()),
        rel_sup: rel(num_sup, sup_ref),
        rel_l2_support: rel(num2_m.sqrt(), den2_m.sqrt()),
        rel_sup_support: rel(num_sup_m, den_sup_m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirac::conductivity_to_potential;
    use crate::grid::{integrate, make_grid, sample, BumpKind, ConductivityPreset, PresetKind};
    use crate::scattering::{
        compute_dataset, AnnulusSpec, ConjMode, DatasetConfig, DatasetHeader, SampleMeta,
        ScatteringDataset,
    };

    fn bump_g() -> TestFunction {
        TestFunction {
            kind: BumpKind::GaussianBump,
            center: Complex64::ZERO,
            radius: 0.4,
            amplitude: Complex64::ONE,
        }
    }

    /// Dataset with prescribed h values for exercising the averaging algebra.
    fn synthetic_dataset(
        n: usize,
        stride: usize,
        r_inner: f64,
        h: impl Fn(Complex64, Complex64) -> [Complex64; 4],
    ) -> ScatteringDataset {
        let grid = make_grid(1.0, n).unwrap();
        let annulus = AnnulusSpec { r_inner, n_r: 3, n_theta: 8 };
        let rule = annulus.rule();
        let w_samples = crate::scattering::w_subgrid(grid, stride);
        let mut h_values = Vec::new();
        for &(lambda, _) in &rule {
            for &w in &w_samples {
                h_values.push(h(lambda, w));
            }
        }
        let count = h_values.len();
        let header = DatasetHeader {
            version: 1,
            grid,
            annulus,
            lambda_samples: rule.iter().map(|&(l, w)| [l.re, l.im, w]).collect(),
            w_samples: w_samples.iter().map(|w| [w.re, w.im]).collect(),
            w_stride: stride,
            w_cell_area: {
                let s = stride as f64 * grid.spacing();
                s * s
            },
            conj_mode: ConjMode::Conjugated,
            tol: 1e-10,
            max_iter: 100,
            meta: vec![
                SampleMeta {
                    iterations: 1,
                    residual: 0.0,
                    converged: true,
                    consistent: true,
                    vol_bnd_disagreement: Some(0.0),
                    error: None,
                };
                count
            ],
            failed_samples: 0,
            provenance: String::new(),
        };
        ScatteringDataset { header, h_values }
    }

    fn scale_h(ds: &ScatteringDataset, c: Complex64) -> ScatteringDataset {
        let mut out = ds.clone();
        for h in &mut out.h_values {
            for e in h.iter_mut() {
                *e *= c;
            }
        }
        out
    }

    #[test]
    fn weak_of_zero_dataset_is_zero() {
        let ds = synthetic_dataset(64, 8, 20.0, |_, _| [Complex64::ZERO; 4]);
        let v = reconstruct_weak(&ds, &bump_g()).unwrap();
        assert!(v.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn weak_support_check() {
        let ds = synthetic_dataset(64, 8, 20.0, |_, _| [Complex64::ZERO; 4]);
        let wide = TestFunction { radius: 0.9, ..bump_g() };
        assert!(matches!(reconstruct_weak(&ds, &wide), Err(Error::SupportNotCovered)));
    }

    #[test]
    fn weak_and_pointwise_are_linear_in_h() {
        let ds = synthetic_dataset(64, 8, 20.0, |lambda, w| {
            let b = Complex64::new(w.re, -0.3 * w.im) / lambda;
            [b, 2.0 * b, b * b, -b]
        });
        let c = Complex64::new(-1.7, 0.4);
        let scaled = scale_h(&ds, c);
        let g = bump_g();
        let a = reconstruct_weak(&ds, &g).unwrap();
        let b = reconstruct_weak(&scaled, &g).unwrap();
        for e in 0..4 {
            assert!((b[e] - c * a[e]).norm() <= 1e-12 * (1.0 + a[e].norm()));
        }
        let pa = reconstruct_pointwise(&ds).unwrap();
        let pb = reconstruct_pointwise(&scaled).unwrap();
        let d = pb.q.q12().sub(&pa.q.q12().scale(c)).unwrap().sup_norm();
        assert!(d <= 1e-12 * (1.0 + pa.q.sup_norm()));
    }

    #[test]
    fn pairing_pointwise_against_g_matches_weak() {
        let ds = synthetic_dataset(64, 8, 30.0, |lambda, w| {
            let b = (w * w.conj() - lambda / lambda.norm()) * (1.0 / lambda.norm());
            [0.1 * b, b, b.conj(), Complex64::new(0.0, 0.01)]
        });
        let g = bump_g();
        let weak = reconstruct_weak(&ds, &g).unwrap();
        let pr = reconstruct_pointwise(&ds).unwrap();
        let coarse = pr.grid();
        let gw = g.sample_on(coarse).unwrap();
        let paired12 = integrate(&gw.mul(pr.q.q12()).unwrap());
        let paired21 = integrate(&gw.mul(pr.q.q21()).unwrap());
        assert!((paired12 - weak[1]).norm() <= 1e-12 * (1.0 + weak[1].norm()));
        assert!((paired21 - weak[2]).norm() <= 1e-12 * (1.0 + weak[2].norm()));
    }

    #[test]
    fn partial_dataset_rejected() {
        let mut ds = synthetic_dataset(64, 8, 20.0, |_, _| [Complex64::ONE; 4]);
        ds.header.failed_samples = 3;
        assert!(matches!(
            reconstruct_pointwise(&ds),
            Err(Error::PartialDataset(3))
        ));
    }

    #[test]
    fn zero_conductivity_reconstructs_to_nothing() {
        let g = make_grid(1.0, 64).unwrap();
        let kernel = CauchyKernel::new(g);
        let q = DiracPotential::zeros(g);
        let cfg = DatasetConfig::new(AnnulusSpec { r_inner: 20.0, n_r: 2, n_theta: 4 }, 8);
        let ds = compute_dataset(&q, &cfg, &kernel).unwrap();
        let pr = reconstruct_pointwise(&ds).unwrap();
        assert!(pr.q.sup_norm() <= 1e-8);
        assert!(pr.diagonal_noise_floor() <= 1e-8);
        let gamma = recover_gamma(&ds).unwrap();
        let one = ComplexField::constant(pr.grid(), Complex64::ONE);
        assert!(gamma.sub(&one).unwrap().sup_norm() <= 1e-8);
    }

    #[test]
    fn stationary_phase_trivial_cases() {
        let grid = make_grid(1.0, 128).unwrap();
        let lambdas: Vec<Complex64> =
            [16.0, 32.0, 64.0].iter().map(|&r| Complex64::from_polar(r, 0.4)).collect();
        // g = 0 -> lhs = 0, leading = 0.
        let zero_g = TestFunction { amplitude: Complex64::ZERO, ..bump_g() };
        let rep = stationary_phase_check(&zero_g, Complex64::ZERO, &lambdas, grid).unwrap();
        assert!(rep.rows.iter().all(|r| r.abs_error == 0.0 && r.lhs_re == 0.0));

        // z outside the support: no stationary point, so the integral decays
        // superlinearly (recorded as a trend, not an absolute level: the
        // smallest |lambda| here is far from asymptotic).
        let g = bump_g();
        let outside = stationary_phase_check(&g, Complex64::new(0.7, 0.0), &lambdas, grid).unwrap();
        for r in &outside.rows {
            assert!(r.leading_re == 0.0 && r.leading_im == 0.0);
        }
        let norms: Vec<f64> =
            outside.rows.iter().map(|r| Complex64::new(r.lhs_re, r.lhs_im).norm()).collect();
        assert!(norms[1] < norms[0] && norms[2] < norms[1], "{norms:?}");
        assert!(norms[2] < 0.1 * norms[0], "decay too slow: {norms:?}");
    }

    #[test]
    fn stationary_phase_slope() {
        let grid = make_grid(1.0, 256).unwrap();
        let lambdas: Vec<Complex64> = [16.0, 32.0, 64.0, 128.0]
            .iter()
            .map(|&r| Complex64::from_polar(r, 0.9))
            .collect();
        let wide = TestFunction { radius: 0.6, ..bump_g() };
        let rep = stationary_phase_check(&wide, Complex64::ZERO, &lambdas, grid).unwrap();
        // Leading term is O(1/|lambda|); the residual must fit a slope at or
        // below -1 (theory: -3/2, smoother profiles even faster).
        assert!(rep.slope <= -1.0, "slope {}", rep.slope);
        // By the largest |lambda| the leading term dominates.
        let last = rep.rows.last().unwrap();
        let leading = Complex64::new(last.leading_re, last.leading_im).norm();
        assert!(last.abs_error < leading, "error not subdominant at {}", last.lambda_abs);
    }

    #[test]
    fn error_metrics_basics() {
        let g = make_grid(1.0, 16).unwrap();
        let p = ConductivityPreset::new(PresetKind::RealBump);
        let f = p.sample_gamma(g).unwrap();
        let m = error_metrics(&f, &f).unwrap();
        assert_eq!(m.rel_l2, 0.0);
        assert_eq!(m.rel_sup, 0.0);
        let doubled = f.scale(Complex64::new(2.0, 0.0));
        let m2 = error_metrics(&doubled, &f).unwrap();
        assert!((m2.rel_l2 - 1.0).abs() < 1e-12);
        assert!((m2.rel_sup - 1.0).abs() < 1e-12);

        let other = make_grid(1.0, 32).unwrap();
        assert!(matches!(
            error_metrics(&ComplexField::zeros(other), &f),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn error_metrics_against_plain_loops() {
        let g = make_grid(1.0, 16).unwrap();
        let a = sample(g, |z| Complex64::new(z.re, z.im * z.im)).unwrap();
        let b = sample(g, |z| Complex64::new(z.re + 0.1, z.im)).unwrap();
        let m = error_metrics(&a, &b).unwrap();
        let mut n2 = 0.0;
        let mut d2 = 0.0;
        let mut ns = 0.0f64;
        let mut ds = 0.0f64;
        for idx in 0..g.len() {
            n2 += (a.values()[idx] - b.values()[idx]).norm_sqr();
            d2 += b.values()[idx].norm_sqr();
            ns = ns.max((a.values()[idx] - b.values()[idx]).norm());
            ds = ds.max(b.values()[idx].norm());
        }
        assert!((m.rel_l2 - (n2 / d2).sqrt()).abs() < 1e-14);
        assert!((m.rel_sup - ns / ds).abs() < 1e-14);
    }

    #[test]
    fn support_restricted_metrics_ignore_far_field_noise() {
        let g = make_grid(1.0, 64).unwrap();
        let reference = TestFunction {
            kind: BumpKind::GaussianBump,
            center: Complex64::ZERO,
            radius: 0.3,
            amplitude: Complex64::ONE,
        }
        .sample_on(g)
        .unwrap();
        // f = ref + a spike far outside the support.
        let mut f = reference.clone();
        let (j, k) = g.locate(Complex64::new(0.8, 0.8)).unwrap();
        f.values_mut()[g.index(j, k)] += Complex64::new(5.0, 0.0);
        let m = error_metrics(&f, &reference).unwrap();
        assert!(m.rel_sup > 1.0);
        assert_eq!(m.rel_sup_support, 0.0);
        assert_eq!(m.rel_l2_support, 0.0);
    }

    #[test]
    fn end_to_end_real_bump_reconstruction() {
        let grid = make_grid(1.0, 64).unwrap();
        let kernel = CauchyKernel::new(grid);
        let gamma = ConductivityPreset::new(PresetKind::RealBump).sample_gamma(grid).unwrap();
        let q = conductivity_to_potential(&gamma).unwrap();
        let cfg = DatasetConfig::new(AnnulusSpec { r_inner: 40.0, n_r: 3, n_theta: 8 }, 8);
        let ds = compute_dataset(&q, &cfg, &kernel).unwrap();
        assert!(!ds.is_partial(), "failed samples: {}", ds.header.failed_samples);
        let pr = reconstruct_pointwise(&ds).unwrap();
        // Ground truth restricted to the w subgrid.
        let coarse = pr.grid();
        let stride = ds.header.w_stride;
        let mut truth12 = Vec::with_capacity(coarse.len());
        for jc in 0..coarse.n() {
            for kc in 0..coarse.n() {
                truth12.push(q.q12().at(jc * stride, kc * stride));
            }
        }
        let truth12 = ComplexField::from_values(coarse, truth12).unwrap();
        let m = error_metrics(pr.q.q12(), &truth12).unwrap();
        assert!(m.rel_l2 < 0.5, "rel L2 {}", m.rel_l2);
        // Structural residual: diagonal output is small against off-diagonal.
        assert!(pr.diagonal_noise_floor() <= 0.1 * pr.q.sup_norm(),
            "noise {} vs {}", pr.diagonal_noise_floor(), pr.q.sup_norm());
        let grec = recover_gamma(&ds).unwrap();
        let mut gtruth = Vec::with_capacity(coarse.len());
        for jc in 0..coarse.n() {
            for kc in 0..coarse.n() {
                gtruth.push(gamma.at(jc * stride, kc * stride));
            }
        }
        let gtruth = ComplexField::from_values(coarse, gtruth).unwrap();
        let mg = error_metrics(&grec, &gtruth).unwrap();
        assert!(mg.rel_l2 < 0.5, "gamma rel L2 {}", mg.rel_l2);
    }
}
