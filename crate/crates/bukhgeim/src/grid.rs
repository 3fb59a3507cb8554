//! Uniform square grid, complex field storage, quadrature and analytic presets.
//!
//! The grid covers `[-L, L)^2` with `N` points per side and spacing `2L/N`.
//! Nodes are `z_jk = (-L + j*h) + i*(-L + k*h)`, enumerated row-major in `j`
//! (index `j * N + k`). All downstream operators (Cauchy transform, phases,
//! scattering integrals) act on `ComplexField`s over such a grid.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compact supports must stay inside this fraction of the half-width so that
/// the convolution kernel is exact on every offset that actually occurs.
pub const SUPPORT_MARGIN: f64 = 0.9;

/// Uniform square grid over `[-L, L)^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    half_width: f64,
    points_per_side: usize,
}

/// `make_grid` in free-function form; kept as the canonical constructor.
pub fn make_grid(half_width: f64, points_per_side: usize) -> Result<GridSpec> {
    GridSpec::new(half_width, points_per_side)
}

impl GridSpec {
    pub fn new(half_width: f64, points_per_side: usize) -> Result<Self> {
        if !(half_width > 0.0) {
            return Err(Error::NonPositiveHalfWidth(half_width));
        }
        if points_per_side % 2 != 0 {
            return Err(Error::OddGridSize(points_per_side));
        }
        if points_per_side < 8 {
            return Err(Error::GridTooSmall(points_per_side));
        }
        Ok(Self { half_width, points_per_side })
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.points_per_side
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points_per_side as f64
    }

    pub fn len(&self) -> usize {
        self.points_per_side * self.points_per_side
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < self.points_per_side && k < self.points_per_side);
        j * self.points_per_side + k
    }

    pub fn node(&self, j: usize, k: usize) -> Complex64 {
        let h = self.spacing();
        Complex64::new(-self.half_width + j as f64 * h, -self.half_width + k as f64 * h)
    }

    /// Iterate nodes in storage order together with their flat index.
    pub fn nodes(&self) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let n = self.points_per_side;
        (0..n).flat_map(move |j| (0..n).map(move |k| (self.index(j, k), self.node(j, k))))
    }

    /// Nearest grid index pair for a point inside the square, if any.
    pub fn locate(&self, z: Complex64) -> Option<(usize, usize)> {
        let h = self.spacing();
        let j = ((z.re + self.half_width) / h).round() as isize;
        let k = ((z.im + self.half_width) / h).round() as isize;
        let n = self.points_per_side as isize;
        if j < 0 || k < 0 || j >= n || k >= n {
            None
        } else {
            Some((j as usize, k as usize))
        }
    }
}

/// Complex samples on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![Complex64::ZERO; grid.len()] }
    }

    pub fn constant(grid: GridSpec, c: Complex64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn at(&self, j: usize, k: usize) -> Complex64 {
        self.values[self.grid.index(j, k)]
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn scale(&self, a: Complex64) -> Self {
        self.map(|v| a * v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    pub fn zip(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self { grid: self.grid, values })
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Discrete L2 norm, `sqrt(h^2 sum |f|^2)`.
    pub fn l2_norm(&self) -> f64 {
        let h2 = self.grid.spacing() * self.grid.spacing();
        (h2 * self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// Maximum modulus over the outermost `depth` rings of nodes.
    pub fn frame_max(&self, depth: usize) -> f64 {
        let n = self.grid.n();
        let mut m = 0.0f64;
        for j in 0..n {
            for k in 0..n {
                let d = j.min(k).min(n - 1 - j).min(n - 1 - k);
                if d < depth {
                    m = m.max(self.values[self.grid.index(j, k)].norm());
                }
            }
        }
        m
    }

    /// Maximum modulus outside the central `SUPPORT_MARGIN` box.
    pub fn max_outside_margin(&self) -> f64 {
        let lim = SUPPORT_MARGIN * self.grid.half_width();
        let mut m = 0.0f64;
        for (idx, z) in self.grid.nodes() {
            if z.re.abs() > lim || z.im.abs() > lim {
                m = m.max(self.values[idx].norm());
            }
        }
        m
    }

    pub fn assert_finite(&self) -> Result<()> {
        let n = self.grid.n();
        for j in 0..n {
            for k in 0..n {
                let v = self.values[self.grid.index(j, k)];
                if !v.re.is_finite() || !v.im.is_finite() {
                    return Err(Error::NonFiniteSample { j, k });
                }
            }
        }
        Ok(())
    }

    /// Flat binary serialization: magic "CFLD", version, N, L, then row-major
    /// interleaved re/im little-endian f64 pairs.
    pub fn write_cfld<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"CFLD")?;
        out.write_all(&1u32.to_le_bytes())?;
        out.write_all(&(self.grid.n() as u32).to_le_bytes())?;
        out.write_all(&self.grid.half_width().to_le_bytes())?;
        for v in &self.values {
            out.write_all(&v.re.to_le_bytes())?;
            out.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_cfld(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_cfld(&mut f)
    }

    pub fn read_cfld<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"CFLD" {
            return Err(Error::Format("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != 1 {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        input.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let half_width = f64::from_le_bytes(b8);
        let grid = GridSpec::new(half_width, n)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            input.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            input.read_exact(&mut b8)?;
            let im = f64::from_le_bytes(b8);
            values.push(Complex64::new(re, im));
        }
        Self::from_values(grid, values)
    }

    pub fn load_cfld(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_cfld(&mut f)
    }

    /// CSV rows `x,y,re,im` in node enumeration order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,re,im\n");
        for (idx, z) in self.grid.nodes() {
            let v = self.values[idx];
            let _ = writeln!(s, "{},{},{},{}", z.re, z.im, v.re, v.im);
        }
        s
    }
}

/// Sample an analytic descriptor on every node.
pub fn sample(grid: GridSpec, f: impl Fn(Complex64) -> Complex64) -> Result<ComplexField> {
    let n = grid.n();
    let mut values = vec![Complex64::ZERO; grid.len()];
    for j in 0..n {
        for k in 0..n {
            let v = f(grid.node(j, k));
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFiniteSample { j, k });
            }
            values[grid.index(j, k)] = v;
        }
    }
    Ok(ComplexField { grid, values })
}

/// Midpoint-rule integral `h^2 sum f` over the grid square.
pub fn integrate(f: &ComplexField) -> Complex64 {
    let h2 = f.grid.spacing() * f.grid.spacing();
    f.values.iter().sum::<Complex64>() * h2
}

/// Smooth compactly supported bump shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BumpKind {
    GaussianBump,
    CosineBump,
    TwoBump,
}

/// A smooth test function vanishing identically outside a disk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub kind: BumpKind,
    pub center: Complex64,
    pub radius: f64,
    pub amplitude: Complex64,
}

/// C-infinity mollifier profile with value 1 at t = 0 and support t < 1.
fn mollifier(t2: f64) -> f64 {
    if t2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - t2)).exp()
    }
}

/// Squared raised-cosine profile, value 1 at t = 0, C^3 at the rim.
fn cosine_profile(t: f64) -> f64 {
    if t >= 1.0 {
        0.0
    } else {
        let c = 0.5 * (1.0 + (std::f64::consts::PI * t).cos());
        c * c
    }
}

impl TestFunction {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        let d = z - self.center;
        match self.kind {
            BumpKind::GaussianBump => {
                self.amplitude * mollifier(d.norm_sqr() / (self.radius * self.radius))
            }
            BumpKind::CosineBump => self.amplitude * cosine_profile(d.norm() / self.radius),
            BumpKind::TwoBump => {
                // Two mollifiers inside the nominal disk, second at 60% strength.
                let r = 0.45 * self.radius;
                let c1 = self.center + Complex64::new(0.5 * self.radius, 0.0);
                let c2 = self.center - Complex64::new(0.5 * self.radius, 0.0);
                let b1 = mollifier((z - c1).norm_sqr() / (r * r));
                let b2 = mollifier((z - c2).norm_sqr() / (r * r));
                self.amplitude * (b1 + 0.6 * b2)
            }
        }
    }

    /// Errors unless the support disk sits inside the margin box of `grid`.
    pub fn check_support(&self, grid: GridSpec) -> Result<()> {
        let lim = SUPPORT_MARGIN * grid.half_width();
        let reach = self.center.re.abs().max(self.center.im.abs()) + self.radius;
        if reach > lim {
            return Err(Error::SupportMargin { max_frame: reach - lim });
        }
        Ok(())
    }

    pub fn sample_on(&self, grid: GridSpec) -> Result<ComplexField> {
        self.check_support(grid)?;
        sample(grid, |z| self.eval(z))
    }
}

/// Named conductivity shapes, all of the form `gamma = exp(bump)` so that
/// `gamma = 1` outside a compact set and `log gamma` is single-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetKind {
    Unit,
    RealBump,
    ComplexBump,
    TwoBump,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConductivityPreset {
    pub kind: PresetKind,
    pub center: Complex64,
    pub radius: f64,
    pub amplitude: Complex64,
}

impl ConductivityPreset {
    pub fn new(kind: PresetKind) -> Self {
        let amplitude = match kind {
            PresetKind::Unit => Complex64::ZERO,
            PresetKind::RealBump => Complex64::new(0.8, 0.0),
            PresetKind::ComplexBump => Complex64::new(0.6, 0.4),
            PresetKind::TwoBump => Complex64::new(0.5, 0.3),
        };
        Self { kind, center: Complex64::ZERO, radius: 0.5, amplitude }
    }

    /// The exponent field `log gamma`.
    pub fn log_gamma(&self, z: Complex64) -> Complex64 {
        match self.kind {
            PresetKind::Unit => Complex64::ZERO,
            PresetKind::RealBump | PresetKind::ComplexBump => {
                let t2 = (z - self.center).norm_sqr() / (self.radius * self.radius);
                self.amplitude * mollifier(t2)
            }
            PresetKind::TwoBump => {
                let f = TestFunction {
                    kind: BumpKind::TwoBump,
                    center: self.center,
                    radius: self.radius,
                    amplitude: self.amplitude,
                };
                f.eval(z)
            }
        }
    }

    pub fn gamma(&self, z: Complex64) -> Complex64 {
        self.log_gamma(z).exp()
    }

    pub fn check_support(&self, grid: GridSpec) -> Result<()> {
        let lim = SUPPORT_MARGIN * grid.half_width();
        let reach = self.center.re.abs().max(self.center.im.abs()) + self.radius;
        if reach > lim {
            return Err(Error::SupportMargin { max_frame: reach - lim });
        }
        Ok(())
    }

    pub fn sample_gamma(&self, grid: GridSpec) -> Result<ComplexField> {
        self.check_support(grid)?;
        sample(grid, |z| self.gamma(z))
    }

    pub fn sample_log_gamma(&self, grid: GridSpec) -> Result<ComplexField> {
        self.check_support(grid)?;
        sample(grid, |z| self.log_gamma(z))
    }
}
