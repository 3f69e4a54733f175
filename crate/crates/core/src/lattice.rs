//! Periodic lattices over `T²_x × T^d_z`, real and spectral fields, and the
//! Fourier-diagonal resolvent `(−Δ + m²)^{−q}`.
//!
//! Conventions used by every other module:
//!
//! * Axes are stored x-first, row-major, last axis fastest.
//! * Site `i` on an axis of extent `L` and `N` points sits at the periodic
//!   coordinate `i·h` for `i < N/2` and `(i − N)·h` otherwise, so index 0 is
//!   the origin.
//! * Dual frequencies are `k = 2π n / L` with `n ∈ {−N/2, …, N/2 − 1}`.
//! * The forward transform is unnormalized, the inverse carries `1/∏N`.
//!   Parseval therefore reads `Σ|u|²·cellvol = (cellvol/∏N)·Σ|û|²`.
//! * The Laplacian symbol is the continuum `|k|²`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// One periodic axis.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Axis {
    pub extent: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(extent: f64, points: usize) -> Self {
        Self { extent, points }
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.points as f64
    }

    /// Signed dual index of storage slot `i`.
    pub fn mode(&self, i: usize) -> i64 {
        let n = self.points as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * PI * self.mode(i) as f64 / self.extent
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.mode(i) as f64 * self.spacing()
    }
}

/// Periodic lattice. The first `x_axes` axes (0 or 2) are the x-plane, the
/// rest are the internal z-directions.
pub struct Grid {
    axes: Vec<Axis>,
    x_axes: usize,
    engine: OnceLock<Arc<FftEngine>>,
    half: OnceLock<Arc<HalfSpectrum>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("axes", &self.axes)
            .field("x_axes", &self.x_axes)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes && self.x_axes == other.x_axes
    }
}

impl Grid {
    /// Lattice `T²_x × T^d_z`: `x = (extent, points)` for both x-axes, one
    /// entry of `z` per internal direction (`d = z.len() ≤ 2`).
    pub fn new(x: (f64, usize), z: &[(f64, usize)]) -> Result<Arc<Self>> {
        if z.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "at most 2 internal axes are supported, got {}",
                z.len()
            )));
        }
        let mut axes = vec![Axis::new(x.0, x.1), Axis::new(x.0, x.1)];
        axes.extend(z.iter().map(|&(l, n)| Axis::new(l, n)));
        Self::from_axes(axes, 2)
    }

    /// Lattice over the internal directions only (a slice at fixed x).
    pub fn internal(z: &[(f64, usize)]) -> Result<Arc<Self>> {
        Self::from_axes(z.iter().map(|&(l, n)| Axis::new(l, n)).collect(), 0)
    }

    pub fn from_axes(axes: Vec<Axis>, x_axes: usize) -> Result<Arc<Self>> {
        if x_axes != 0 && x_axes != 2 {
            return Err(Error::InvalidGrid("x_axes must be 0 or 2".into()));
        }
        if x_axes > axes.len() || axes.len() > 4 {
            return Err(Error::InvalidGrid(format!(
                "{} axes with {} x-axes is not a supported layout",
                axes.len(),
                x_axes
            )));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.points < 4 || a.points % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "axis {i}: point count must be even and >= 4, got {}",
                    a.points
                )));
            }
            if !(a.extent.is_finite() && a.extent > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "axis {i}: extent must be positive, got {}",
                    a.extent
                )));
            }
        }
        Ok(Arc::new(Self {
            axes,
            x_axes,
            engine: OnceLock::new(),
            half: OnceLock::new(),
        }))
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn x_axes(&self) -> usize {
        self.x_axes
    }

    pub fn z_axes(&self) -> &[Axis] {
        &self.axes[self.x_axes..]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.extent).product()
    }

    pub fn z_len(&self) -> usize {
        self.z_axes().iter().map(|a| a.points).product()
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.ndim());
        idx.iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.points + i)
    }

    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        for (o, a) in out.iter_mut().zip(&self.axes).rev() {
            *o = flat % a.points;
            flat /= a.points;
        }
    }

    /// Periodic coordinates of a flat site.
    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.ndim()];
        self.unflatten(flat, &mut idx);
        idx.iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coord(i))
            .collect()
    }

    /// Squared periodic distance from the origin, split into (x, z) parts.
    pub fn radius2_split(&self, flat: usize) -> (f64, f64) {
        let c = self.coords(flat);
        let x2 = c[..self.x_axes].iter().map(|v| v * v).sum();
        let z2 = c[self.x_axes..].iter().map(|v| v * v).sum();
        (x2, z2)
    }

    /// `|k|²` on the full dual lattice, storage order.
    pub fn k2_full(&self) -> Vec<f64> {
        let mut idx = vec![0; self.ndim()];
        (0..self.len())
            .map(|f| {
                self.unflatten(f, &mut idx);
                idx.iter()
                    .zip(&self.axes)
                    .map(|(&i, a)| a.wavenumber(i).powi(2))
                    .sum()
            })
            .collect()
    }

    pub fn engine(&self) -> Arc<FftEngine> {
        self.engine
            .get_or_init(|| Arc::new(FftEngine::new(&self.dims())))
            .clone()
    }

    /// Wavevector tables in the half-spectrum layout used by real transforms.
    pub fn half_spectrum(&self) -> Arc<HalfSpectrum> {
        self.half
            .get_or_init(|| Arc::new(HalfSpectrum::new(self)))
            .clone()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self == other
    }
}

/// Wavevector data for the half-spectrum layout (last axis truncated to
/// `N/2 + 1`).
#[derive(Debug)]
pub struct HalfSpectrum {
    pub dims: Vec<usize>,
    pub k2: Vec<f64>,
    pub k2_x: Vec<f64>,
    pub k2_z: Vec<f64>,
    /// Dual indices per axis, flattened `[slot * ndim + axis]`.
    pub modes: Vec<i64>,
    /// Multiplicity of each slot in a Hermitian sum over the full lattice.
    pub weight: Vec<f64>,
}

impl HalfSpectrum {
    fn new(grid: &Grid) -> Self {
        let nd = grid.ndim();
        let mut dims = grid.dims();
        if let Some(last) = dims.last_mut() {
            *last = *last / 2 + 1;
        }
        let len: usize = dims.iter().product();
        let mut k2 = Vec::with_capacity(len);
        let mut k2_x = Vec::with_capacity(len);
        let mut k2_z = Vec::with_capacity(len);
        let mut modes = Vec::with_capacity(len * nd);
        let mut weight = Vec::with_capacity(len);
        let mut idx = vec![0usize; nd];
        for flat in 0..len {
            let mut r = flat;
            for (o, d) in idx.iter_mut().zip(&dims).rev() {
                *o = r % d;
                r /= d;
            }
            let (mut sx, mut sz) = (0.0, 0.0);
            for (a, (&i, axis)) in idx.iter().zip(grid.axes()).enumerate() {
                // the last axis keeps its non-negative half, including N/2
                let n = if a + 1 == nd {
                    i as i64
                } else {
                    axis.mode(i)
                };
                let k = 2.0 * PI * n as f64 / axis.extent;
                if a < grid.x_axes() {
                    sx += k * k;
                } else {
                    sz += k * k;
                }
                modes.push(n);
            }
            k2.push(sx + sz);
            k2_x.push(sx);
            k2_z.push(sz);
            let w = match (nd, idx.last()) {
                (0, _) => 1.0,
                (_, Some(&i)) => {
                    let n_last = grid.axes()[nd - 1].points;
                    if i == 0 || i == n_last / 2 {
                        1.0
                    } else {
                        2.0
                    }
                }
                _ => 1.0,
            };
            weight.push(w);
        }
        Self {
            dims,
            k2,
            k2_x,
            k2_z,
            modes,
            weight,
        }
    }

    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }
}

/// Cached FFT plans for one lattice shape.
pub struct FftEngine {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    r2c: Option<Arc<dyn RealToComplex<f64>>>,
    c2r: Option<Arc<dyn ComplexToReal<f64>>>,
}

impl FftEngine {
    fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        let mut real = RealFftPlanner::<f64>::new();
        let (r2c, c2r) = match dims.last() {
            Some(&n) => (
                Some(real.plan_fft_forward(n)),
                Some(real.plan_fft_inverse(n)),
            ),
            None => (None, None),
        };
        Self {
            dims: dims.to_vec(),
            forward,
            inverse,
            r2c,
            c2r,
        }
    }

    fn total(&self) -> usize {
        self.dims.iter().product()
    }

    /// In-place transform of `data` (laid out with `dims`) along `axis`.
    fn along_axis(plan: &dyn Fft<f64>, data: &mut [Complex64], dims: &[usize], axis: usize) {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        if stride == 1 {
            plan.process(data);
            return;
        }
        let block = n * stride;
        let mut buf = vec![Complex64::default(); block];
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        for chunk in data.chunks_mut(block) {
            // transpose [n][stride] -> [stride][n]
            for j in 0..n {
                for s in 0..stride {
                    buf[s * n + j] = chunk[j * stride + s];
                }
            }
            plan.process_with_scratch(&mut buf, &mut scratch);
            for j in 0..n {
                for s in 0..stride {
                    chunk[j * stride + s] = buf[s * n + j];
                }
            }
        }
    }

    /// Unnormalized forward transform over the full lattice.
    pub fn forward_full(&self, real: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = real.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for (a, plan) in self.forward.iter().enumerate() {
            Self::along_axis(plan.as_ref(), &mut data, &self.dims, a);
        }
        data
    }

    /// Inverse transform over the full lattice, including the `1/∏N` factor.
    pub fn inverse_full(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let mut data = spec.to_vec();
        for (a, plan) in self.inverse.iter().enumerate() {
            Self::along_axis(plan.as_ref(), &mut data, &self.dims, a);
        }
        let scale = 1.0 / self.total() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    fn half_dims(&self) -> Vec<usize> {
        let mut d = self.dims.clone();
        if let Some(last) = d.last_mut() {
            *last = *last / 2 + 1;
        }
        d
    }

    /// Unnormalized real-to-complex transform into the half-spectrum layout.
    pub fn forward_half(&self, real: &[f64]) -> Vec<Complex64> {
        let Some(r2c) = &self.r2c else {
            return real.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        };
        let n = *self.dims.last().unwrap();
        let nh = n / 2 + 1;
        let rows = real.len() / n;
        let mut out = vec![Complex64::default(); rows * nh];
        let mut input = vec![0.0; n];
        let mut scratch = r2c.make_scratch_vec();
        for (row, o) in real.chunks(n).zip(out.chunks_mut(nh)) {
            input.copy_from_slice(row);
            r2c.process_with_scratch(&mut input, o, &mut scratch)
                .expect("r2c buffer sizes are fixed by the plan");
        }
        let hd = self.half_dims();
        for a in 0..self.dims.len() - 1 {
            Self::along_axis(self.forward[a].as_ref(), &mut out, &hd, a);
        }
        out
    }

    /// Inverse of [`forward_half`](Self::forward_half), normalized.
    pub fn inverse_half(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let Some(c2r) = &self.c2r else {
            return spec.iter().map(|c| c.re).collect();
        };
        let hd = self.half_dims();
        for a in 0..self.dims.len() - 1 {
            Self::along_axis(self.inverse[a].as_ref(), &mut spec, &hd, a);
        }
        let n = *self.dims.last().unwrap();
        let nh = n / 2 + 1;
        let rows = spec.len() / nh;
        let mut out = vec![0.0; rows * n];
        let mut scratch = c2r.make_scratch_vec();
        let scale = 1.0 / self.total() as f64;
        for (row, o) in spec.chunks_mut(nh).zip(out.chunks_mut(n)) {
            row[0].im = 0.0;
            row[nh - 1].im = 0.0;
            c2r.process_with_scratch(row, o, &mut scratch)
                .expect("c2r buffer sizes are fixed by the plan");
            o.iter_mut().for_each(|v| *v *= scale);
        }
        out
    }

    /// Apply a real multiplier given in half-spectrum layout.
    pub fn apply_multiplier(&self, real: &[f64], mult: &[f64]) -> Vec<f64> {
        let mut spec = self.forward_half(real);
        debug_assert_eq!(spec.len(), mult.len());
        spec.iter_mut().zip(mult).for_each(|(c, &m)| *c *= m);
        self.inverse_half(spec)
    }
}

/// Real field, one value per site.
#[derive(Clone, Debug)]
pub struct RealField {
    grid: Arc<Grid>,
    data: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![value; grid.len()],
        }
    }

    /// Wraps raw values; rejects a wrong length or any non-finite value.
    pub fn from_vec(grid: &Arc<Grid>, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("site {i} holds {}", data[i])));
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    /// Builds a field from the periodic coordinates of each site.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub(crate) fn from_vec_unchecked(grid: &Arc<Grid>, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.grid.flat_index(idx)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `∫ u` as a lattice sum times the cell volume.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Linear combination `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &RealField, b: f64) -> Result<Self> {
        check_same(&self.grid, &other.grid)?;
        Ok(Self {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Periodic shift by whole sites: `out(i) = self(i − shift)`.
    pub fn shift(&self, shift: &[isize]) -> Self {
        let g = &self.grid;
        let mut idx = vec![0; g.ndim()];
        let mut out = vec![0.0; self.data.len()];
        for (flat, &v) in self.data.iter().enumerate() {
            g.unflatten(flat, &mut idx);
            for ((i, &s), a) in idx.iter_mut().zip(shift).zip(g.axes()) {
                let n = a.points as isize;
                *i = (*i as isize + s).rem_euclid(n) as usize;
            }
            out[g.flat_index(&idx)] = v;
        }
        Self {
            grid: g.clone(),
            data: out,
        }
    }
}

pub(crate) fn check_same(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            expected: a.len(),
            found: b.len(),
        })
    }
}

/// Complex coefficients on the full dual lattice.
#[derive(Clone, Debug)]
pub struct SpectralField {
    grid: Arc<Grid>,
    data: Vec<Complex64>,
}

impl SpectralField {
    pub fn from_vec(grid: &Arc<Grid>, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        Ok(Self {
            grid: grid.clone(),
            data,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.data
    }

    /// Largest violation of `c(−k) = conj(c(k))`.
    pub fn hermitian_defect(&self) -> f64 {
        let g = &self.grid;
        let mut idx = vec![0; g.ndim()];
        let mut worst: f64 = 0.0;
        for flat in 0..self.data.len() {
            g.unflatten(flat, &mut idx);
            for (i, a) in idx.iter_mut().zip(g.axes()) {
                *i = (a.points - *i) % a.points;
            }
            let mirror = self.data[g.flat_index(&idx)];
            worst = worst.max((self.data[flat] - mirror.conj()).norm());
        }
        worst
    }
}

pub fn fft_forward(field: &RealField) -> SpectralField {
    SpectralField {
        grid: field.grid.clone(),
        data: field.grid.engine().forward_full(&field.data),
    }
}

/// Inverse transform; the imaginary residue of a Hermitian input is dropped.
pub fn fft_inverse(spec: &SpectralField) -> RealField {
    let data = spec.grid.engine().inverse_full(&spec.data);
    RealField {
        grid: spec.grid.clone(),
        data: data.into_iter().map(|c| c.re).collect(),
    }
}

/// Resolvent `(−Δ + m²)^{−q}` with the continuum symbol.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GreenOp {
    pub mass2: f64,
    pub power: u32,
}

impl GreenOp {
    pub fn new(mass2: f64, power: u32) -> Result<Self> {
        if !(mass2.is_finite() && mass2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mass2 must be positive, got {mass2}"
            )));
        }
        if power != 1 && power != 2 {
            return Err(Error::InvalidParameter(format!(
                "resolvent power must be 1 or 2, got {power}"
            )));
        }
        Ok(Self { mass2, power })
    }

    pub fn symbol(&self, k2: f64) -> f64 {
        (k2 + self.mass2).powi(-(self.power as i32))
    }

    pub fn multiplier(&self, grid: &Grid) -> Vec<f64> {
        grid.half_spectrum()
            .k2
            .iter()
            .map(|&k2| self.symbol(k2))
            .collect()
    }
}

pub fn green_apply(u: &RealField, op: &GreenOp) -> RealField {
    let mult = op.multiplier(&u.grid);
    RealField {
        grid: u.grid.clone(),
        data: u.grid.engine().apply_multiplier(&u.data, &mult),
    }
}

/// `(−Δ + m²)^q u`, the inverse of [`green_apply`].
pub fn elliptic_apply(u: &RealField, op: &GreenOp) -> RealField {
    let mult: Vec<f64> = op.multiplier(&u.grid).iter().map(|m| 1.0 / m).collect();
    RealField {
        grid: u.grid.clone(),
        data: u.grid.engine().apply_multiplier(&u.data, &mult),
    }
}

/// `z ↦ u(0, z)`. A grid without internal axes yields a one-point field.
pub fn restrict_to_origin(u: &RealField) -> Result<RealField> {
    let g = &u.grid;
    if g.x_axes() != 2 {
        return Err(Error::InvalidGrid(
            "restriction needs a grid with two x-axes".into(),
        ));
    }
    let z: Vec<(f64, usize)> = g.z_axes().iter().map(|a| (a.extent, a.points)).collect();
    let slice_grid = Grid::internal(&z)?;
    // x-index (0, 0) is the leading block of z_len values
    let data = u.data[..g.z_len()].to_vec();
    Ok(RealField {
        grid: slice_grid,
        data,
    })
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"ESQF";
const SNAPSHOT_VERSION: u16 = 1;
const DTYPE_F64_LE: u8 = 1;
pub const SNAPSHOT_HEADER_LEN: usize = 64;

/// Writes the 64-byte snapshot header followed by row-major f64 LE values.
///
/// Header layout (little-endian):
/// `magic[4] | version u16 | dtype u8 | ndim u8 | x_axes u8 | pad[3] |
/// points u32 ×4 | extent f64 ×4 | pad[4]`.
pub fn write_snapshot(field: &RealField, mut w: impl Write) -> Result<()> {
    let g = &field.grid;
    let mut header = [0u8; SNAPSHOT_HEADER_LEN];
    header[0..4].copy_from_slice(SNAPSHOT_MAGIC);
    header[4..6].copy_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    header[6] = DTYPE_F64_LE;
    header[7] = g.ndim() as u8;
    header[8] = g.x_axes() as u8;
    for (i, a) in g.axes().iter().enumerate() {
        header[12 + 4 * i..16 + 4 * i].copy_from_slice(&(a.points as u32).to_le_bytes());
        header[28 + 8 * i..36 + 8 * i].copy_from_slice(&a.extent.to_le_bytes());
    }
    w.write_all(&header)?;
    let mut body = Vec::with_capacity(field.data.len() * 8);
    for v in &field.data {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

pub fn read_snapshot(mut r: impl Read) -> Result<RealField> {
    let mut header = [0u8; SNAPSHOT_HEADER_LEN];
    r.read_exact(&mut header)?;
    let bad = |m: &str| Error::Snapshot(m.to_string());
    if &header[0..4] != SNAPSHOT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != SNAPSHOT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    if header[6] != DTYPE_F64_LE {
        return Err(bad(&format!("unsupported dtype code {}", header[6])));
    }
    let ndim = header[7] as usize;
    let x_axes = header[8] as usize;
    if ndim > 4 || header[9..12].iter().any(|&b| b != 0) || header[60..].iter().any(|&b| b != 0) {
        return Err(bad("malformed header"));
    }
    let mut axes = Vec::with_capacity(ndim);
    for i in 0..4 {
        let p = u32::from_le_bytes(header[12 + 4 * i..16 + 4 * i].try_into().unwrap()) as usize;
        let e = f64::from_le_bytes(header[28 + 8 * i..36 + 8 * i].try_into().unwrap());
        if i < ndim {
            axes.push(Axis::new(e, p));
        } else if p != 0 || e != 0.0 {
            return Err(bad("unused axis slots must be zero"));
        }
    }
    let grid = Grid::from_axes(axes, x_axes)?;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != grid.len() * 8 {
        return Err(bad(&format!(
            "expected {} value bytes, found {}",
            grid.len() * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    RealField::from_vec(&grid, data)
}
