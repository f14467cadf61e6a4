//! Periodic uniform lattice on the centred box `Π [−L_i/2, L_i/2)` and the
//! spectral calculus used everywhere else.
//!
//! Derivatives are trigonometric-interpolation derivatives computed with
//! `rustfft`. First derivatives drop the Nyquist mode; pure second
//! derivatives keep it (`−k²` is real there); mixed second derivatives drop
//! it. Quadrature is the uniform rule `Σ f · Π h_i`, which is spectrally exact
//! for band-limited periodic integrands.
//!
//! Logarithmic derivatives are always formed from ratios of spectral
//! derivatives, `∇log g = ∇g/g` and `∇²log g = ∇²g/g − ∇g⊗∇g/g²`, never by
//! differentiating `log g` directly: densities that decay towards the seam
//! have a well-resolved `g` but a `log g` whose periodic extension is kinked.

use crate::coeffs::Interaction;
use crate::sym::{packed_len, packed_pairs, SymMatrix};
use crate::{Error, Result};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

/// Default cap on the total number of lattice points.
pub const DEFAULT_POINT_CAP: usize = 1 << 22;
/// Default positivity floor for densities.
pub const DEFAULT_FLOOR: f64 = 1e-30;
/// Relative shortfall below the floor still accepted for evolved densities.
const FLOOR_SLACK: f64 = 1e-9;
/// Cells on each side of the seam counted by [`seam_mass`].
pub const SEAM_CELLS: usize = 3;

struct GridInner {
    dim: usize,
    extent: Vec<f64>,
    points: Vec<usize>,
    spacing: Vec<f64>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
    /// Angular wavenumbers per axis with the Nyquist entry kept (used squared).
    k_full: Vec<Vec<f64>>,
    /// Angular wavenumbers per axis with the Nyquist entry zeroed.
    k_odd: Vec<Vec<f64>>,
    /// Signed integer mode numbers per axis.
    modes: Vec<Vec<i64>>,
}

/// Periodic lattice. Cloning is cheap (shared FFT plans).
#[derive(Clone)]
pub struct Grid(Arc<GridInner>);

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("extent", &self.0.extent)
            .field("points", &self.0.points)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.extent == other.0.extent && self.0.points == other.0.points)
    }
}

impl Grid {
    /// Grid with the default point cap.
    pub fn new(extent: &[f64], points: &[usize]) -> Result<Grid> {
        Self::with_cap(extent, points, DEFAULT_POINT_CAP)
    }

    pub fn with_cap(extent: &[f64], points: &[usize], cap: usize) -> Result<Grid> {
        let dim = extent.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if points.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "{} extents but {} point counts",
                dim,
                points.len()
            )));
        }
        for (&l, &n) in extent.iter().zip(points) {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidGrid(format!("extent {l} must be positive")));
            }
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::InvalidGrid(format!(
                    "point count {n} must be a power of two >= 8"
                )));
            }
        }
        let total: usize = points.iter().product();
        if total > cap {
            return Err(Error::InvalidGrid(format!(
                "{total} points exceed the cap of {cap}"
            )));
        }
        let mut planner = FftPlanner::<f64>::new();
        let fwd = points.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = points.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut k_full = Vec::new();
        let mut k_odd = Vec::new();
        let mut modes = Vec::new();
        for (&l, &n) in extent.iter().zip(points) {
            let base = 2.0 * std::f64::consts::PI / l;
            let m: Vec<i64> = (0..n)
                .map(|j| if j <= n / 2 { j as i64 } else { j as i64 - n as i64 })
                .collect();
            k_full.push(m.iter().map(|&m| base * m as f64).collect());
            k_odd.push(
                m.iter()
                    .map(|&mm| if mm as usize == n / 2 { 0.0 } else { base * mm as f64 })
                    .collect(),
            );
            modes.push(m);
        }
        Ok(Grid(Arc::new(GridInner {
            dim,
            extent: extent.to_vec(),
            points: points.to_vec(),
            spacing: extent.iter().zip(points).map(|(l, &n)| l / n as f64).collect(),
            fwd,
            inv,
            k_full,
            k_odd,
            modes,
        })))
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn extent(&self) -> &[f64] {
        &self.0.extent
    }

    pub fn points(&self) -> &[usize] {
        &self.0.points
    }

    pub fn spacing(&self) -> &[f64] {
        &self.0.spacing
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.0.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `Π h_i`.
    pub fn cell_volume(&self) -> f64 {
        self.0.spacing.iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.0.extent.iter().product()
    }

    pub fn max_spacing(&self) -> f64 {
        self.0.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Same box with every point count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        let pts: Vec<usize> = self.0.points.iter().map(|n| n * factor).collect();
        Grid::new(&self.0.extent, &pts)
    }

    /// Coordinates of the lattice along one axis: `−L/2 + j h`.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        let l = self.0.extent[axis];
        let h = self.0.spacing[axis];
        (0..self.0.points[axis]).map(|j| -0.5 * l + j as f64 * h).collect()
    }

    /// Multi-index of a flat (row-major, last axis fastest) index.
    pub fn unflatten(&self, mut idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        for a in (0..self.0.dim).rev() {
            let n = self.0.points[a];
            out[a] = idx % n;
            idx /= n;
        }
        out
    }

    /// Position of a flat index.
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let m = self.unflatten(idx);
        let mut x = [0.0; 3];
        for a in 0..self.0.dim {
            x[a] = -0.5 * self.0.extent[a] + m[a] as f64 * self.0.spacing[a];
        }
        x
    }

    /// Field of the `axis` coordinate.
    pub fn coordinate(&self, axis: usize) -> ScalarField {
        ScalarField::from_fn(self, |x| x[axis])
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let dim = self.0.dim;
        let total = data.len();
        for a in 0..dim {
            let n = self.0.points[a];
            let stride: usize = self.0.points[a + 1..].iter().product();
            let fft = if inverse { &self.0.inv[a] } else { &self.0.fwd[a] };
            if stride == 1 {
                fft.process(data);
                continue;
            }
            let outer = total / (n * stride);
            let mut buf = vec![Complex64::new(0.0, 0.0); total];
            let mut line = 0;
            for o in 0..outer {
                let base = o * n * stride;
                for i in 0..stride {
                    for j in 0..n {
                        buf[line * n + j] = data[base + j * stride + i];
                    }
                    line += 1;
                }
            }
            fft.process(&mut buf);
            line = 0;
            for o in 0..outer {
                let base = o * n * stride;
                for i in 0..stride {
                    for j in 0..n {
                        data[base + j * stride + i] = buf[line * n + j];
                    }
                    line += 1;
                }
            }
        }
    }

    /// Discrete Fourier coefficients (unnormalised forward transform).
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, false);
        data
    }

    /// Real part of the normalised inverse transform.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, true);
        let scale = 1.0 / spec.len() as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }

    /// Calls `f(flat_index, mode_multi_index)` for every Fourier mode.
    fn for_each_mode(&self, mut f: impl FnMut(usize, [usize; 3])) {
        let p = &self.0.points;
        let (n0, n1, n2) = (
            p[0],
            if self.0.dim > 1 { p[1] } else { 1 },
            if self.0.dim > 2 { p[2] } else { 1 },
        );
        let mut idx = 0;
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    f(idx, [i0, i1, i2]);
                    idx += 1;
                }
            }
        }
    }

    /// `|k|²` at a mode multi-index.
    fn k2(&self, m: [usize; 3]) -> f64 {
        (0..self.0.dim).map(|a| self.0.k_full[a][m[a]].powi(2)).sum()
    }

    /// Applies a real Fourier multiplier that depends on `|k|²`.
    pub fn apply_radial_multiplier(&self, values: &[f64], mult: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut spec = self.forward(values);
        self.for_each_mode(|idx, m| spec[idx] *= mult(self.k2(m)));
        self.inverse_real(spec)
    }

    /// Zeroes every mode with `|m_a| > N_a/3` on some axis (2/3 rule).
    pub fn dealias(&self, values: &[f64]) -> Vec<f64> {
        let mut spec = self.forward(values);
        self.dealias_spectrum(&mut spec);
        self.inverse_real(spec)
    }

    fn dealias_spectrum(&self, spec: &mut [Complex64]) {
        let dim = self.0.dim;
        self.for_each_mode(|idx, m| {
            for a in 0..dim {
                if 3 * self.0.modes[a][m[a]].unsigned_abs() as usize > self.0.points[a] {
                    spec[idx] = Complex64::new(0.0, 0.0);
                    return;
                }
            }
        });
    }

    fn diff_spectrum(&self, spec: &[Complex64], axes: &[usize]) -> Vec<Complex64> {
        let mut out = spec.to_vec();
        let dim = self.0.dim;
        self.for_each_mode(|idx, m| {
            let factor = match axes {
                [a] => Complex64::new(0.0, self.0.k_odd[*a][m[*a]]),
                [a, b] if a == b => Complex64::new(-self.0.k_full[*a][m[*a]].powi(2), 0.0),
                [a, b] => Complex64::new(-self.0.k_odd[*a][m[*a]] * self.0.k_odd[*b][m[*b]], 0.0),
                _ => Complex64::new(-(0..dim).map(|c| self.0.k_full[c][m[c]].powi(2)).sum::<f64>(), 0.0),
            };
            out[idx] *= factor;
        });
        out
    }

    fn gradient_raw(&self, spec: &[Complex64]) -> Vec<Vec<f64>> {
        (0..self.0.dim)
            .map(|a| self.inverse_real(self.diff_spectrum(spec, &[a])))
            .collect()
    }

    fn hessian_raw(&self, spec: &[Complex64]) -> Vec<Vec<f64>> {
        packed_pairs(self.0.dim)
            .into_iter()
            .map(|(i, j)| self.inverse_real(self.diff_spectrum(spec, &[i, j])))
            .collect()
    }
}

/// Real field on a grid, row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    /// Checked constructor: length must match and all values be finite.
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("scalar field at index {i}")));
        }
        Ok(ScalarField {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_raw(grid: &Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField {
            grid: grid.clone(),
            values,
        }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Self {
        let d = grid.dim();
        let values = (0..grid.len()).map(|i| f(&grid.position(i)[..d])).collect();
        ScalarField::from_raw(grid, values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField::from_raw(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<ScalarField> {
        same_grid(&self.grid, &other.grid)?;
        Ok(ScalarField::from_raw(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `n` real components per lattice point, stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn new(grid: &Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidArgument("vector field shape mismatch".into()));
        }
        if comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector field".into()));
        }
        Ok(VectorField {
            grid: grid.clone(),
            comps,
        })
    }

    pub(crate) fn from_raw(grid: &Grid, comps: Vec<Vec<f64>>) -> Self {
        VectorField {
            grid: grid.clone(),
            comps,
        }
    }

    /// Constant vector `c` at every point.
    pub fn constant(grid: &Grid, c: &[f64]) -> Self {
        VectorField::from_raw(grid, c.iter().map(|&ci| vec![ci; grid.len()]).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[idx];
        }
        v
    }

    /// Pointwise `|v|²`.
    pub fn norm_sq(&self) -> ScalarField {
        let n = self.grid.len();
        ScalarField::from_raw(
            &self.grid,
            (0..n).map(|i| self.comps.iter().map(|c| c[i] * c[i]).sum()).collect(),
        )
    }

    /// Pointwise product with a scalar field.
    pub fn scale_by(&self, s: &ScalarField) -> Result<VectorField> {
        same_grid(&self.grid, s.grid())?;
        Ok(VectorField::from_raw(
            &self.grid,
            self.comps
                .iter()
                .map(|c| c.iter().zip(s.values()).map(|(a, b)| a * b).collect())
                .collect(),
        ))
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// A symmetric matrix per lattice point, stored as `n(n+1)/2` packed component fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SymField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
}

impl SymField {
    pub fn new(grid: &Grid, comps: Vec<Vec<f64>>) -> Result<Self> {
        if comps.len() != packed_len(grid.dim()) || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::InvalidArgument("symmetric field shape mismatch".into()));
        }
        if comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("symmetric field".into()));
        }
        Ok(SymField {
            grid: grid.clone(),
            comps,
        })
    }

    pub(crate) fn from_raw(grid: &Grid, comps: Vec<Vec<f64>>) -> Self {
        SymField {
            grid: grid.clone(),
            comps,
        }
    }

    pub fn constant(grid: &Grid, m: &SymMatrix) -> Self {
        SymField::from_raw(grid, m.packed().iter().map(|&v| vec![v; grid.len()]).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    pub fn at(&self, idx: usize) -> SymMatrix {
        let n = self.grid.dim();
        let mut p = [0.0; 6];
        for (k, c) in self.comps.iter().enumerate() {
            p[k] = c[idx];
        }
        SymMatrix::from_packed(n, &p[..packed_len(n)])
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Strictly positive, unit-mass scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct Density {
    field: ScalarField,
    floor: f64,
}

impl Density {
    /// Normalises, clamps values to `floor` and renormalises to unit mass.
    /// This is the only place a density is ever clamped.
    pub fn new(field: ScalarField, floor: f64) -> Result<Density> {
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(Error::InvalidArgument(format!("floor {floor} must be positive")));
        }
        let grid = field.grid().clone();
        let positive: Vec<f64> = field.values().iter().map(|&v| v.max(0.0)).collect();
        let raw_mass = sum(&positive) * grid.cell_volume();
        let scale = if raw_mass.is_finite() && raw_mass > 0.0 { raw_mass } else { 1.0 };
        let clamped: Vec<f64> = positive.iter().map(|&v| (v / scale).max(floor)).collect();
        let mass = sum(&clamped) * grid.cell_volume();
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::NonFinite("density mass".into()));
        }
        Ok(Density {
            field: ScalarField::from_raw(&grid, clamped.into_iter().map(|v| v / mass).collect()),
            floor,
        })
    }

    /// Density from the closure, with the default floor.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Density> {
        Density::new(ScalarField::from_fn(grid, f), DEFAULT_FLOOR)
    }

    pub fn uniform(grid: &Grid) -> Density {
        Density {
            field: ScalarField::constant(grid, 1.0 / grid.volume()),
            floor: DEFAULT_FLOOR,
        }
    }

    /// Accepts a field produced by an evolution step: no clamping. Fails if any
    /// value is below the floor (up to a relative round-off allowance);
    /// otherwise renormalises and returns the mass drift `|mass − 1|` that
    /// was removed.
    pub fn from_evolved(field: ScalarField, floor: f64) -> Result<(Density, f64)> {
        let min = field.min();
        if !(min >= floor * (1.0 - FLOOR_SLACK)) {
            return Err(Error::BelowFloor { min, floor });
        }
        let mass = integrate(&field);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::NonFinite("density mass".into()));
        }
        let grid = field.grid().clone();
        let vals = field.into_values().into_iter().map(|v| v / mass).collect();
        Ok((
            Density {
                field: ScalarField::from_raw(&grid, vals),
                floor,
            },
            (mass - 1.0).abs(),
        ))
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// First moment `∫ x dρ` in box coordinates.
    pub fn mean(&self) -> Vec<f64> {
        let g = self.grid();
        (0..g.dim())
            .map(|a| {
                let vals: Vec<f64> = (0..g.len()).map(|i| g.position(i)[a] * self.values()[i]).collect();
                sum(&vals) * g.cell_volume()
            })
            .collect()
    }

    /// Covariance `∫ (x−m)⊗(x−m) dρ` in box coordinates.
    pub fn covariance(&self) -> SymMatrix {
        let g = self.grid();
        let n = g.dim();
        let m = self.mean();
        let mut c = SymMatrix::zeros(n);
        for (i, j) in packed_pairs(n) {
            let vals: Vec<f64> = (0..g.len())
                .map(|k| {
                    let x = g.position(k);
                    (x[i] - m[i]) * (x[j] - m[j]) * self.values()[k]
                })
                .collect();
            c.set(i, j, sum(&vals) * g.cell_volume());
        }
        c
    }
}

/// Correctly rounded sum (Shewchuk's exact partials), so the result does not
/// depend on the order of `values`.
pub fn sum(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = Vec::with_capacity(8);
    let mut special = 0.0f64;
    for &v in values {
        if !v.is_finite() {
            special += v;
            continue;
        }
        let mut x = v;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        if !x.is_finite() {
            special += x;
            partials.clear();
            continue;
        }
        partials.truncate(i);
        partials.push(x);
    }
    if special != 0.0 || special.is_nan() {
        return special;
    }
    let Some(mut hi) = partials.pop() else {
        return 0.0;
    };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    // round half-even across the remaining partials
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// `∇f`.
pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid();
    VectorField::from_raw(g, g.gradient_raw(&g.forward(f.values())))
}

/// `∇²f` as a field of symmetric matrices; each `∂²_ij` is computed once.
pub fn hessian(f: &ScalarField) -> SymField {
    let g = f.grid();
    SymField::from_raw(g, g.hessian_raw(&g.forward(f.values())))
}

/// `∇·v`.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); g.len()];
    for a in 0..g.dim() {
        let d = g.diff_spectrum(&g.forward(v.component(a)), &[a]);
        acc.iter_mut().zip(d).for_each(|(s, x)| *s += x);
    }
    ScalarField::from_raw(g, g.inverse_real(acc))
}

/// `Δf`.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = f.grid();
    let spec = g.forward(f.values());
    ScalarField::from_raw(g, g.inverse_real(g.diff_spectrum(&spec, &[])))
}

/// Quadrature `∫ f dx`.
pub fn integrate(f: &ScalarField) -> f64 {
    sum(f.values()) * f.grid().cell_volume()
}

/// `∫ f dρ`.
pub fn integrate_against(f: &ScalarField, rho: &Density) -> Result<f64> {
    same_grid(f.grid(), rho.grid())?;
    Ok(weighted_sum(f.values(), rho.values()) * f.grid().cell_volume())
}

/// `∫ A dρ` for a matrix field.
pub fn integrate_tensor(a: &SymField, rho: &Density) -> Result<SymMatrix> {
    same_grid(a.grid(), rho.grid())?;
    let n = a.grid().dim();
    let packed: Vec<f64> = a
        .components()
        .iter()
        .map(|c| weighted_sum(c, rho.values()) * a.grid().cell_volume())
        .collect();
    Ok(SymMatrix::from_packed(n, &packed))
}

pub(crate) fn weighted_sum(f: &[f64], w: &[f64]) -> f64 {
    let prod: Vec<f64> = f.iter().zip(w).map(|(a, b)| a * b).collect();
    sum(&prod)
}

/// Heat semigroup with generator `(σ/2)Δ`: Fourier multiplier `exp(−(σ/2)|k|²t)`.
pub fn heat_propagate(f: &ScalarField, t: f64, sigma: f64) -> Result<ScalarField> {
    if t < 0.0 || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let g = f.grid();
    let c = 0.5 * sigma * t;
    Ok(ScalarField::from_raw(
        g,
        g.apply_radial_multiplier(f.values(), |k2| (-c * k2).exp()),
    ))
}

/// `W*ρ` for an interaction descriptor.
pub fn convolve(w: &Interaction, rho: &Density) -> Result<ScalarField> {
    w.convolve(rho)
}

/// Circular convolution `(K*f)(x) = Σ_y K(x−y) f(y) Π h` where `kernel` is
/// sampled at the lattice positions (the kernel's origin is the box centre).
pub fn circular_convolve(kernel: &ScalarField, f: &ScalarField) -> Result<ScalarField> {
    same_grid(kernel.grid(), f.grid())?;
    let g = f.grid();
    // move the kernel's origin from the box centre to index 0
    let shifted: Vec<f64> = (0..g.len())
        .map(|i| {
            let m = g.unflatten(i);
            let mut src = 0usize;
            for a in 0..g.dim() {
                let n = g.points()[a];
                src = src * n + (m[a] + n / 2) % n;
            }
            kernel.values()[src]
        })
        .collect();
    let ks = g.forward(&shifted);
    let fs = g.forward(f.values());
    let prod: Vec<Complex64> = ks.iter().zip(&fs).map(|(a, b)| a * b).collect();
    let vol = g.cell_volume();
    Ok(ScalarField::from_raw(
        g,
        g.inverse_real(prod).into_iter().map(|v| v * vol).collect(),
    ))
}

/// `(∇log g, ∇²log g)` from ratios of spectral derivatives of a positive field.
pub fn log_derivatives(gf: &ScalarField) -> Result<(VectorField, SymField)> {
    let grid = gf.grid();
    let min = gf.min();
    if !(min > 0.0) {
        return Err(Error::BelowFloor { min, floor: 0.0 });
    }
    let spec = grid.forward(gf.values());
    let grad = grid.gradient_raw(&spec);
    let hess = grid.hessian_raw(&spec);
    let gv = gf.values();
    let lg: Vec<Vec<f64>> = grad
        .iter()
        .map(|c| c.iter().zip(gv).map(|(d, v)| d / v).collect())
        .collect();
    let lh: Vec<Vec<f64>> = packed_pairs(grid.dim())
        .into_iter()
        .zip(hess)
        .map(|((i, j), h)| {
            h.iter()
                .enumerate()
                .map(|(k, hv)| hv / gv[k] - lg[i][k] * lg[j][k])
                .collect()
        })
        .collect();
    Ok((VectorField::from_raw(grid, lg), SymField::from_raw(grid, lh)))
}

/// Half-width of the central stencils used by [`stencil_derivatives`].
const STENCIL_HALF_WIDTH: usize = 6;

/// Fornberg weights for derivatives of order 0..=2 at 0 on nodes `-m..=m`
/// (unit spacing).
fn central_weights(m: usize) -> [Vec<f64>; 3] {
    let nodes: Vec<f64> = (0..=2 * m).map(|i| i as f64 - m as f64).collect();
    let n = nodes.len();
    let mut c = vec![[0.0f64; 3]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0];
    for i in 1..n {
        let mn = i.min(2);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i];
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] *= c4 / c3;
        }
        c1 = c2;
    }
    [0, 1, 2].map(|k| c.iter().map(|w| w[k]).collect())
}

fn stencil_axis(grid: &Grid, values: &[f64], axis: usize, weights: &[f64]) -> Vec<f64> {
    let n = grid.points()[axis];
    let h = grid.spacing()[axis];
    let m = weights.len() / 2;
    let stride: usize = grid.points()[axis + 1..].iter().product();
    let mut out = vec![0.0; values.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let i = (idx / stride) % n;
        let base = idx - i * stride;
        let terms: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(w, c)| c * values[base + ((i + n + w - m) % n) * stride])
            .collect();
        *o = sum(&terms) / h;
    }
    out
}

/// Gradient and Hessian of a smooth function that need not be periodic,
/// by wrapped central differences of order twelve.
///
/// Only the few points next to the box seam see the wrap; use this for
/// log-densities and potentials whose weight there is negligible.
pub fn stencil_derivatives(f: &ScalarField) -> (VectorField, SymField) {
    let grid = f.grid();
    let [_, d1, d2] = central_weights(STENCIL_HALF_WIDTH);
    let grad: Vec<Vec<f64>> = (0..grid.dim()).map(|a| stencil_axis(grid, f.values(), a, &d1)).collect();
    let hess: Vec<Vec<f64>> = packed_pairs(grid.dim())
        .into_iter()
        .map(|(i, j)| {
            if i == j {
                let once = stencil_axis(grid, f.values(), i, &d2);
                let h = grid.spacing()[i];
                once.into_iter().map(|v| v / h).collect()
            } else {
                stencil_axis(grid, &grad[i], j, &d1)
            }
        })
        .collect();
    (VectorField::from_raw(grid, grad), SymField::from_raw(grid, hess))
}

/// `¼(|∇log ρ|² + 2Δlog ρ)`, which equals `Δ√ρ/√ρ`.
pub fn bohm_potential(rho: &Density) -> Result<ScalarField> {
    let (lg, lh) = log_derivatives(rho.field())?;
    let n = rho.grid().dim();
    let sq = lg.norm_sq();
    let vals = (0..rho.grid().len())
        .map(|k| {
            let lap: f64 = (0..n).map(|a| lh.at(k).get(a, a)).sum();
            0.25 * (sq.values()[k] + 2.0 * lap)
        })
        .collect();
    Ok(ScalarField::from_raw(rho.grid(), vals))
}

/// `Δ√ρ/√ρ` evaluated directly from the square-root field.
pub fn bohm_potential_direct(rho: &Density) -> Result<ScalarField> {
    let min = rho.field().min();
    if !(min > 0.0) {
        return Err(Error::BelowFloor {
            min,
            floor: rho.floor(),
        });
    }
    let sq = rho.field().map(f64::sqrt);
    let lap = laplacian(&sq);
    lap.zip_map(&sq, |l, s| l / s)
}

/// Mass within [`SEAM_CELLS`] cells of the box seam on any axis.
pub fn seam_mass(rho: &Density) -> f64 {
    let g = rho.grid();
    let vals: Vec<f64> = (0..g.len())
        .filter(|&i| {
            let m = g.unflatten(i);
            (0..g.dim()).any(|a| m[a] < SEAM_CELLS || m[a] >= g.points()[a] - SEAM_CELLS)
        })
        .map(|i| rho.values()[i])
        .collect();
    sum(&vals) * g.cell_volume()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid1(n: usize, l: f64) -> Grid {
        Grid::new(&[l], &[n]).unwrap()
    }

    #[test]
    fn stencil_derivatives_of_non_periodic_polynomial() {
        let g = Grid::new(&[8.0, 6.0], &[64, 64]).unwrap();
        let f = ScalarField::from_fn(&g, |x| 0.3 * x[0] * x[0] - x[0] * x[1] + 2.0 * x[1] + x[0].powi(3) / 6.0);
        let (gr, he) = stencil_derivatives(&f);
        let mut worst = 0.0f64;
        for k in 0..g.len() {
            let x = g.position(k);
            // away from the seam on both axes
            if x[0].abs() > 3.0 || x[1].abs() > 2.0 {
                continue;
            }
            let v = gr.at(k);
            let h = he.at(k);
            worst = worst
                .max((v[0] - (0.6 * x[0] - x[1] + 0.5 * x[0] * x[0])).abs())
                .max((v[1] - (2.0 - x[0])).abs())
                .max((h.get(0, 0) - (0.6 + x[0])).abs())
                .max((h.get(0, 1) + 1.0).abs())
                .max(h.get(1, 1).abs());
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(&[1.0], &[12]).is_err());
        assert!(Grid::new(&[1.0], &[4]).is_err());
        assert!(Grid::new(&[1.0, 1.0, 1.0, 1.0], &[8, 8, 8, 8]).is_err());
        assert!(Grid::new(&[-1.0], &[8]).is_err());
        assert!(Grid::with_cap(&[1.0, 1.0], &[64, 64], 1024).is_err());
        let g = Grid::new(&[2.0, 3.0], &[16, 8]).unwrap();
        assert_eq!(g.len(), 128);
        assert_eq!(g.spacing(), &[0.125, 0.375]);
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = Grid::new(&[2.0, 3.0], &[16, 32]).unwrap();
        let v = gradient(&ScalarField::constant(&g, 4.2));
        assert!(v.max_abs() < 1e-13);
        assert!(hessian(&ScalarField::constant(&g, 4.2)).max_abs() < 1e-12);
    }

    #[test]
    fn gradient_of_sine_mode() {
        let l = 3.0;
        let g = grid1(64, l);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0] / l).sin());
        let d = gradient(&f);
        for i in 0..g.len() {
            let x = g.position(i)[0];
            let want = 2.0 * PI / l * (2.0 * PI * x / l).cos();
            assert!((d.component(0)[i] - want).abs() < 1e-10);
        }
        let h = hessian(&f);
        for i in 0..g.len() {
            let x = g.position(i)[0];
            let want = -(2.0 * PI / l).powi(2) * (2.0 * PI * x / l).sin();
            assert!((h.at(i).get(0, 0) - want).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_and_mixed_partial_2d() {
        let (l1, l2) = (2.0, 5.0);
        let g = Grid::new(&[l1, l2], &[32, 64]).unwrap();
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0] / l1).sin() + (2.0 * PI * x[1] / l2).cos());
        let d = gradient(&f);
        let g2 = Grid::new(&[l1, l1], &[32, 32]).unwrap();
        let p2 = ScalarField::from_fn(&g2, |x| (2.0 * PI * x[0] / l1).sin() * (2.0 * PI * x[1] / l1).sin());
        let h = hessian(&p2);
        for i in 0..g.len() {
            let x = g.position(i);
            let w0 = 2.0 * PI / l1 * (2.0 * PI * x[0] / l1).cos();
            let w1 = -2.0 * PI / l2 * (2.0 * PI * x[1] / l2).sin();
            assert!((d.component(0)[i] - w0).abs() < 1e-10);
            assert!((d.component(1)[i] - w1).abs() < 1e-10);
        }
        let k = 2.0 * PI / l1;
        for i in 0..g2.len() {
            let x = g2.position(i);
            let want = k * k * (k * x[0]).cos() * (k * x[1]).cos();
            assert!((h.at(i).get(0, 1) - want).abs() < 1e-9);
            assert_eq!(h.at(i).get(0, 1), h.at(i).get(1, 0));
        }
    }

    #[test]
    fn laplacian_eigenfunction_and_constant_divergence() {
        let l = 4.0;
        let g = grid1(32, l);
        let f = ScalarField::from_fn(&g, |x| (2.0 * PI * x[0] / l).sin());
        let lap = laplacian(&f);
        let k2 = (2.0 * PI / l).powi(2);
        for i in 0..g.len() {
            assert!((lap.values()[i] + k2 * f.values()[i]).abs() < 1e-10);
        }
        let g2 = Grid::new(&[1.0, 2.0], &[8, 16]).unwrap();
        assert!(divergence(&VectorField::constant(&g2, &[1.0, -3.0])).max_abs() < 1e-13);
    }

    #[test]
    fn integrals() {
        let g = Grid::new(&[2.0, 3.0], &[16, 8]).unwrap();
        assert!((integrate(&ScalarField::constant(&g, 1.5)) - 9.0).abs() < 1e-13);
        let g1 = grid1(64, 3.0);
        let s = ScalarField::from_fn(&g1, |x| (2.0 * PI * x[0] / 3.0).sin());
        assert!(integrate(&s).abs() < 1e-12);
        let rho = Density::from_fn(&g1, |x| (x[0]).cos().exp()).unwrap();
        let one = integrate_against(&ScalarField::constant(&g1, 1.0), &rho).unwrap();
        assert!((one - 1.0).abs() < 1e-14);
        let other = grid1(32, 3.0);
        assert!(matches!(
            integrate_against(&ScalarField::constant(&other, 1.0), &rho),
            Err(Error::GridMismatch)
        ));
    }

    #[test]
    fn heat_propagation() {
        let l = 2.0;
        let sigma = 0.7;
        let g = grid1(32, l);
        let f = ScalarField::from_fn(&g, |x| 1.0 + (2.0 * PI * x[0] / l).cos());
        assert_eq!(heat_propagate(&f, 0.0, sigma).unwrap(), f);
        let t = 0.3;
        let p = heat_propagate(&f, t, sigma).unwrap();
        let decay = (-(sigma / 2.0) * (2.0 * PI / l).powi(2) * t).exp();
        for i in 0..g.len() {
            let x = g.position(i)[0];
            assert!((p.values()[i] - (1.0 + decay * (2.0 * PI * x / l).cos())).abs() < 1e-12);
        }
        let c = ScalarField::constant(&g, 2.5);
        assert!(heat_propagate(&c, 5.0, sigma).unwrap().values().iter().all(|v| (v - 2.5).abs() < 1e-14));
        assert!(matches!(heat_propagate(&f, -1.0, sigma), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn circular_delta_kernel_is_identity() {
        let g = Grid::new(&[2.0, 2.0], &[8, 16]).unwrap();
        let mut k = vec![0.0; g.len()];
        // the origin sits at index N/2 on each axis
        let origin = 4 * 16 + 8;
        assert_eq!(g.position(origin)[..2], [0.0, 0.0]);
        k[origin] = 1.0 / g.cell_volume();
        let kernel = ScalarField::new(&g, k).unwrap();
        let f = ScalarField::from_fn(&g, |x| (x[0] * 3.0).sin() + x[1]);
        let c = circular_convolve(&kernel, &f).unwrap();
        for i in 0..g.len() {
            assert!((c.values()[i] - f.values()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bohm_identity_on_exp_cos() {
        let l = 2.0 * PI;
        let g = grid1(256, l);
        let rho = Density::from_fn(&g, |x| x[0].cos().exp()).unwrap();
        let a = bohm_potential(&rho).unwrap();
        let b = bohm_potential_direct(&rho).unwrap();
        let diff = a.zip_map(&b, |x, y| (x - y).abs()).unwrap().max();
        assert!(diff < 1e-6, "{diff}");
        let u = bohm_potential(&Density::uniform(&g)).unwrap();
        assert!(u.max_abs() < 1e-12);
    }

    #[test]
    fn bohm_of_gaussian_matches_closed_form() {
        let v = 0.5;
        let g = grid1(256, 16.0);
        let rho = Density::from_fn(&g, |x| (-x[0] * x[0] / (2.0 * v)).exp()).unwrap();
        let b = bohm_potential(&rho).unwrap();
        for i in 0..g.len() {
            let x = g.position(i)[0];
            if x.abs() < 4.0 {
                let want = x * x / (4.0 * v * v) - 1.0 / (2.0 * v);
                assert!((b.values()[i] - want).abs() < 1e-4, "x={x}");
            }
        }
    }

    #[test]
    fn density_clamps_and_normalises() {
        let g = grid1(16, 1.0);
        let f = ScalarField::from_fn(&g, |x| if x[0] < 0.0 { 0.0 } else { 2.0 });
        let rho = Density::new(f, 1e-12).unwrap();
        assert!(rho.field().min() > 0.0);
        assert!((integrate(rho.field()) - 1.0).abs() < 1e-14);
        let bad = ScalarField::from_fn(&g, |x| x[0]);
        assert!(matches!(Density::from_evolved(bad, 1e-30), Err(Error::BelowFloor { .. })));
    }

    #[test]
    fn seam_mass_of_uniform() {
        let g = grid1(64, 1.0);
        let m = seam_mass(&Density::uniform(&g));
        assert!((m - 6.0 / 64.0).abs() < 1e-14);
    }
}
