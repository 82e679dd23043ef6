//! Periodic grid, complex fields, Fourier transforms, spectral derivatives and
//! semiclassical Sobolev norms.
//!
//! The box is `[-L/2, L/2)^3` sampled at `x_j = -L/2 + j L/N`, stored x-fastest.
//! Frequencies live on the lattice `2π m / L`. Odd derivatives zero the Nyquist
//! bin so that real fields stay real; even multipliers keep it.

use crate::error::{Error, Result};
use crate::fft;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub n: usize,
    pub l: f64,
}

impl Grid3 {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::invalid(format!("grid size must be even and >= 4, got {n}")));
        }
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid(format!("box length must be positive, got {l}")));
        }
        Ok(Grid3 { n, l })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.l / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(3)
    }

    #[inline]
    pub fn volume(&self) -> f64 {
        self.l.powi(3)
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        -0.5 * self.l + j as f64 * self.spacing()
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    #[inline]
    pub fn unidx(&self, p: usize) -> (usize, usize, usize) {
        let n = self.n;
        (p % n, (p / n) % n, p / (n * n))
    }

    #[inline]
    pub fn point(&self, p: usize) -> [f64; 3] {
        let (i, j, k) = self.unidx(p);
        [self.coord(i), self.coord(j), self.coord(k)]
    }

    /// Full wavenumber of bin `m`, Nyquist included with its negative value.
    #[inline]
    pub fn wavenumber(&self, m: usize) -> f64 {
        2.0 * PI * fft::signed_index(m, self.n) as f64 / self.l
    }

    /// Wavenumber used by first-derivative multipliers (Nyquist zeroed).
    #[inline]
    pub fn deriv_wavenumber(&self, m: usize) -> f64 {
        if m == self.n / 2 {
            0.0
        } else {
            self.wavenumber(m)
        }
    }

    pub fn wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|m| self.wavenumber(m)).collect()
    }

    pub fn deriv_wavenumbers(&self) -> Vec<f64> {
        (0..self.n).map(|m| self.deriv_wavenumber(m)).collect()
    }

    pub fn check_same(&self, other: &Grid3) -> Result<()> {
        if self != other {
            return Err(Error::invalid(format!(
                "grid mismatch: N={} L={} vs N={} L={}",
                self.n, self.l, other.n, other.l
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid3,
    values: Vec<C64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid3) -> Self {
        ScalarField { grid, values: vec![ZERO; grid.len()] }
    }

    pub fn constant(grid: Grid3, c: C64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: Grid3, values: Vec<C64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} values, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite { index, context: "field construction".into() });
        }
        Ok(ScalarField { grid, values })
    }

    /// Internal constructor for values produced by trusted arithmetic.
    pub(crate) fn from_raw(grid: Grid3, values: Vec<C64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> C64) -> Self {
        let values = (0..grid.len()).map(|p| f(grid.point(p))).collect();
        ScalarField { grid, values }
    }

    pub fn from_real_fn(grid: Grid3, f: impl Fn([f64; 3]) -> f64) -> Self {
        Self::from_fn(grid, |x| C64::new(f(x), 0.0))
    }

    #[inline]
    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<C64> {
        self.values
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        match self.values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            Some(index) => Err(Error::NonFinite { index, context: context.into() }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        ScalarField::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(C64, C64) -> C64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: C64) -> Self {
        self.map(|v| v * c)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn axpy(&mut self, a: C64, x: &ScalarField) {
        for (y, &xv) in self.values.iter_mut().zip(&x.values) {
            *y += a * xv;
        }
    }

    /// `∫ f dx` by the periodic trapezoid rule.
    pub fn integral(&self) -> C64 {
        self.values.iter().sum::<C64>() * self.grid.cell_volume()
    }

    /// `∫ f conj(g) dx`.
    pub fn inner(&self, other: &ScalarField) -> C64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum::<C64>()
            * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_volume()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.norm()))
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.values.iter().all(|v| v.im.abs() <= tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub c: [ScalarField; 3],
}

impl VectorField {
    pub fn new(c: [ScalarField; 3]) -> Result<Self> {
        c[0].grid.check_same(&c[1].grid)?;
        c[0].grid.check_same(&c[2].grid)?;
        Ok(VectorField { c })
    }

    pub fn zeros(grid: Grid3) -> Self {
        VectorField { c: [ScalarField::zeros(grid), ScalarField::zeros(grid), ScalarField::zeros(grid)] }
    }

    pub fn grid(&self) -> &Grid3 {
        self.c[0].grid()
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        VectorField { c: [f(&self.c[0]), f(&self.c[1]), f(&self.c[2])] }
    }

    pub fn add(&self, o: &VectorField) -> Self {
        VectorField { c: [self.c[0].add(&o.c[0]), self.c[1].add(&o.c[1]), self.c[2].add(&o.c[2])] }
    }

    pub fn sub(&self, o: &VectorField) -> Self {
        VectorField { c: [self.c[0].sub(&o.c[0]), self.c[1].sub(&o.c[1]), self.c[2].sub(&o.c[2])] }
    }

    pub fn conj(&self) -> Self {
        self.map(|f| f.conj())
    }

    /// `v · F` for a constant complex vector `v` (no conjugation).
    pub fn dot_const(&self, v: [C64; 3]) -> ScalarField {
        let g = *self.grid();
        let vals = (0..g.len())
            .map(|p| v[0] * self.c[0].values[p] + v[1] * self.c[1].values[p] + v[2] * self.c[2].values[p])
            .collect();
        ScalarField::from_raw(g, vals)
    }

    /// Pointwise `F · F` (bilinear, as in `A² = Σ A_j²`).
    pub fn square(&self) -> ScalarField {
        let g = *self.grid();
        let vals = (0..g.len())
            .map(|p| {
                self.c[0].values[p] * self.c[0].values[p]
                    + self.c[1].values[p] * self.c[1].values[p]
                    + self.c[2].values[p] * self.c[2].values[p]
            })
            .collect();
        ScalarField::from_raw(g, vals)
    }

    pub fn l2_norm(&self) -> f64 {
        (self.c.iter().map(|f| f.l2_norm().powi(2)).sum::<f64>()).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        let g = self.grid();
        (0..g.len())
            .map(|p| {
                (self.c[0].values[p].norm_sqr() + self.c[1].values[p].norm_sqr() + self.c[2].values[p].norm_sqr())
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevSpec {
    pub s: f64,
    pub h: f64,
}

impl SobolevSpec {
    pub fn new(s: f64, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) || !s.is_finite() {
            return Err(Error::invalid(format!("Sobolev spec needs finite s and h > 0 (s={s}, h={h})")));
        }
        Ok(SobolevSpec { s, h })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Raw DFT of the field values (no physical scaling or phase).
pub fn dft(f: &ScalarField) -> Vec<C64> {
    let mut v = f.values.clone();
    fft::forward(&mut v, f.grid.n);
    v
}

/// Inverse of [`dft`].
pub fn idft(grid: Grid3, mut spec: Vec<C64>) -> ScalarField {
    fft::inverse(&mut spec, grid.n);
    ScalarField::from_raw(grid, spec)
}

#[inline]
fn parity_sign(m: usize) -> f64 {
    if m % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Physical Fourier transform: forward returns `f̂(k) = (L/N)³ Σ f(x) e^{-i x·k}`
/// indexed like the DFT; inverse undoes it.
pub fn fourier_transform(f: &ScalarField, direction: Direction) -> Result<ScalarField> {
    f.check_finite("fourier_transform input")?;
    let g = f.grid;
    let n = g.n;
    // x_j = -L/2 + j dx gives the phase e^{iπ m} per axis
    let phase = |p: usize| {
        let (a, b, c) = g.unidx(p);
        parity_sign(a) * parity_sign(b) * parity_sign(c)
    };
    match direction {
        Direction::Forward => {
            let mut v = f.values.clone();
            fft::forward(&mut v, n);
            let dv = g.cell_volume();
            for (p, x) in v.iter_mut().enumerate() {
                *x *= phase(p) * dv;
            }
            Ok(ScalarField::from_raw(g, v))
        }
        Direction::Inverse => {
            let dv = g.cell_volume();
            let mut v: Vec<C64> = f.values.iter().enumerate().map(|(p, &x)| x * (phase(p) / dv)).collect();
            fft::inverse(&mut v, n);
            Ok(ScalarField::from_raw(g, v))
        }
    }
}

/// Applies a Fourier multiplier `m(k1, k2, k3)` given per-axis wavenumber tables.
pub fn apply_multiplier(f: &ScalarField, m: impl Fn(usize, usize, usize) -> C64) -> ScalarField {
    let g = f.grid;
    let mut v = dft(f);
    for (p, x) in v.iter_mut().enumerate() {
        let (a, b, c) = g.unidx(p);
        *x *= m(a, b, c);
    }
    idft(g, v)
}

/// `∂f/∂x_axis` by multiplication with `i k` (axis is 0-based).
pub fn spectral_derivative(f: &ScalarField, axis: usize) -> Result<ScalarField> {
    if axis > 2 {
        return Err(Error::invalid(format!("axis must be 0, 1 or 2, got {axis}")));
    }
    f.check_finite("spectral_derivative input")?;
    let k = f.grid.deriv_wavenumbers();
    Ok(apply_multiplier(f, |a, b, c| {
        let kk = [k[a], k[b], k[c]][axis];
        C64::new(0.0, kk)
    }))
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let k = g.deriv_wavenumbers();
    let spec = dft(f);
    let comp = |axis: usize| {
        let mut v = spec.clone();
        for (p, x) in v.iter_mut().enumerate() {
            let (a, b, c) = g.unidx(p);
            let kk = [k[a], k[b], k[c]][axis];
            *x *= C64::new(0.0, kk);
        }
        idft(g, v)
    };
    VectorField { c: [comp(0), comp(1), comp(2)] }
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let g = *v.grid();
    let k = g.deriv_wavenumbers();
    let mut acc = vec![ZERO; g.len()];
    for axis in 0..3 {
        let s = dft(&v.c[axis]);
        for (p, x) in acc.iter_mut().enumerate() {
            let (a, b, c) = g.unidx(p);
            let kk = [k[a], k[b], k[c]][axis];
            *x += C64::new(0.0, kk) * s[p];
        }
    }
    idft(g, acc)
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let k = f.grid.wavenumbers();
    apply_multiplier(f, |a, b, c| C64::new(-(k[a] * k[a] + k[b] * k[b] + k[c] * k[c]), 0.0))
}

/// `⟨hD⟩^s f` on the torus.
pub fn bessel_potential(f: &ScalarField, spec: SobolevSpec) -> ScalarField {
    let k = f.grid.wavenumbers();
    let h2 = spec.h * spec.h;
    apply_multiplier(f, |a, b, c| {
        let k2 = k[a] * k[a] + k[b] * k[b] + k[c] * k[c];
        C64::new((1.0 + h2 * k2).powf(0.5 * spec.s), 0.0)
    })
}

/// `‖⟨hD⟩^s f‖_{L²}` computed from the spectrum, normalized so `s = 0` is the L² norm.
pub fn semiclassical_norm(f: &ScalarField, spec: SobolevSpec) -> f64 {
    let g = f.grid;
    let k = g.wavenumbers();
    let spec_v = dft(f);
    semiclassical_norm_of_dft(&g, &k, &spec_v, spec)
}

pub(crate) fn semiclassical_norm_of_dft(g: &Grid3, k: &[f64], spec_v: &[C64], spec: SobolevSpec) -> f64 {
    let h2 = spec.h * spec.h;
    let n = g.n;
    let mut acc = 0.0;
    for c in 0..n {
        for b in 0..n {
            let kbc = k[b] * k[b] + k[c] * k[c];
            let row = &spec_v[n * (b + n * c)..n * (b + n * c) + n];
            for (a, x) in row.iter().enumerate() {
                let w = (1.0 + h2 * (k[a] * k[a] + kbc)).powf(spec.s);
                acc += w * x.norm_sqr();
            }
        }
    }
    (acc * g.cell_volume() / g.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid3 {
        Grid3::new(16, 2.0 * PI).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid3::new(5, 1.0).is_err());
        assert!(Grid3::new(2, 1.0).is_err());
        assert!(Grid3::new(8, -1.0).is_err());
    }

    #[test]
    fn constant_has_only_zero_mode() {
        let g = grid();
        let f = ScalarField::constant(g, C64::new(1.0, 0.0));
        let fh = fourier_transform(&f, Direction::Forward).unwrap();
        assert!((fh.values()[0] - C64::new(g.volume(), 0.0)).norm() < 1e-10);
        assert!(fh.values()[1..].iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn plane_wave_single_coefficient() {
        let g = grid();
        let k = [2.0, -1.0, 3.0];
        let f = ScalarField::from_fn(g, |x| C64::from_polar(1.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]));
        let fh = fourier_transform(&f, Direction::Forward).unwrap();
        let target = g.idx(2, g.n - 1, 3);
        for (p, v) in fh.values().iter().enumerate() {
            if p == target {
                assert!((v - C64::new(g.volume(), 0.0)).norm() < 1e-9);
            } else {
                assert!(v.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn non_finite_rejected() {
        let g = grid();
        let mut v = vec![ZERO; g.len()];
        v[7] = C64::new(f64::NAN, 0.0);
        assert!(ScalarField::from_values(g, v).is_err());
    }

    #[test]
    fn derivative_of_constant_is_zero() {
        let g = grid();
        let f = ScalarField::constant(g, C64::new(3.0, -1.0));
        for axis in 0..3 {
            assert!(spectral_derivative(&f, axis).unwrap().sup_norm() < 1e-12);
        }
    }

    #[test]
    fn derivative_of_plane_wave() {
        let g = grid();
        let k = [1.0, 2.0, -3.0];
        let f = ScalarField::from_fn(g, |x| C64::from_polar(1.0, k[0] * x[0] + k[1] * x[1] + k[2] * x[2]));
        for axis in 0..3 {
            let d = spectral_derivative(&f, axis).unwrap();
            let expect = f.scale(C64::new(0.0, k[axis]));
            assert!(d.sub(&expect).sup_norm() < 1e-11);
        }
    }

    #[test]
    fn single_mode_semiclassical_norm() {
        // unit-volume box
        let g = Grid3::new(8, 1.0).unwrap();
        let k = [2.0 * PI, 0.0, 4.0 * PI];
        let f = ScalarField::from_fn(g, |x| C64::from_polar(1.0, k[0] * x[0] + k[2] * x[2]));
        let h = 0.1;
        let k2 = k[0] * k[0] + k[2] * k[2];
        for s in [-1.0, 0.0, 0.5, 2.0] {
            let got = semiclassical_norm(&f, SobolevSpec::new(s, h).unwrap());
            let expect = (1.0 + h * h * k2).powf(s / 2.0);
            assert!((got - expect).abs() < 1e-12 * expect);
        }
    }
}
