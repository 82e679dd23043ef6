//! Frames, the inverse of `ζ₀·∇` and transport phases.
//!
//! For a null vector `ζ₀ = μ₁ + iμ₂` the operator `ζ₀·∇` is `2∂/∂z̄` in the plane
//! spanned by `μ₁, μ₂`, and its decaying inverse is convolution with
//! `δ(ξ̂·x) / (2π (x·μ₁ + i x·μ₂))`. That kernel is evaluated with a truncated
//! Green's function: cutting it off outside an in-plane disc of radius `R` gives
//! the smooth symbol
//!
//! ```text
//! Ê_R(k) = (1 - J₀(R |k⊥|)) / (i ζ₀·k)
//! ```
//!
//! and, because every distance between two box points is below `R`, the cut-off
//! changes nothing on the box. The band-limited kernel is tabulated once per
//! `ζ₀` on a 4× lattice and applied as an aperiodic convolution on a 2× padded
//! grid, so the result is spectrally accurate for smooth data.

use crate::error::{Error, Result};
use crate::fft;
use crate::fields::{gradient, Grid3, ScalarField, VectorField, I, ZERO};
use crate::C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex, OnceLock};

pub type CVec3 = [C64; 3];

#[inline]
pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cdot(a: CVec3, b: CVec3) -> C64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm3(a: [f64; 3]) -> f64 {
    dot3(a, a).sqrt()
}

pub fn complexify(re: [f64; 3], im: [f64; 3]) -> CVec3 {
    [C64::new(re[0], im[0]), C64::new(re[1], im[1]), C64::new(re[2], im[2])]
}

pub fn re3(z: CVec3) -> [f64; 3] {
    [z[0].re, z[1].re, z[2].re]
}

pub fn im3(z: CVec3) -> [f64; 3] {
    [z[0].im, z[1].im, z[2].im]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub xi: [f64; 3],
    pub mu1: [f64; 3],
    pub mu2: [f64; 3],
}

impl Frame {
    /// `μ₁ + iμ₂`.
    pub fn zeta0(&self) -> CVec3 {
        complexify(self.mu1, self.mu2)
    }

    /// The frame with `μ₂` reversed.
    pub fn flipped(&self) -> Frame {
        Frame { xi: self.xi, mu1: self.mu1, mu2: [-self.mu2[0], -self.mu2[1], -self.mu2[2]] }
    }
}

/// Deterministic orthonormal pair perpendicular to `xi`: start from the first
/// basis vector making an angle of at least 45° with `xi`.
pub fn make_frame(xi: [f64; 3]) -> Result<Frame> {
    let n = norm3(xi);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::invalid("frame needs a nonzero finite xi"));
    }
    let u = [xi[0] / n, xi[1] / n, xi[2] / n];
    let m = (0..3).find(|&m| u[m].abs() <= std::f64::consts::FRAC_1_SQRT_2 + 1e-15).unwrap_or(0);
    let mut e = [0.0; 3];
    e[m] = 1.0;
    let p = dot3(e, u);
    let v = [e[0] - p * u[0], e[1] - p * u[1], e[2] - p * u[2]];
    let vn = norm3(v);
    let mu1 = [v[0] / vn, v[1] / vn, v[2] / vn];
    let mu2 = cross(u, mu1);
    Ok(Frame { xi, mu1, mu2 })
}

/// Rejects `ζ₀` unless `ζ₀·ζ₀ = 0` and `|Re ζ₀| = |Im ζ₀| = 1`.
pub fn check_zeta0(z: CVec3) -> Result<()> {
    let re = re3(z);
    let im = im3(z);
    let zz = cdot(z, z).norm();
    if zz > 1e-10 || (norm3(re) - 1.0).abs() > 1e-10 || (norm3(im) - 1.0).abs() > 1e-10 {
        return Err(Error::invalid(format!(
            "zeta0 must satisfy zeta0.zeta0 = 0 and |Re| = |Im| = 1 (got |z.z| = {zz:.3e}, |Re| = {:.6}, |Im| = {:.6})",
            norm3(re),
            norm3(im)
        )));
    }
    Ok(())
}

/// `(1 - J₀(x)) / x²`, accurate down to `x = 0`.
fn one_minus_j0_over_x2(x: f64) -> f64 {
    if x < 0.1 {
        let x2 = x * x;
        0.25 - x2 / 64.0 + x2 * x2 / 2304.0 - x2 * x2 * x2 / 147456.0
    } else {
        (1.0 - libm::j0(x)) / (x * x)
    }
}

/// Tabulated kernel for one `ζ₀` on one grid, in the form used by the 2× padded
/// convolution (raw DFT of the kernel restricted to the box difference cube,
/// scaled by the cell volume).
pub struct CauchyKernel {
    grid: Grid3,
    mu1: [f64; 3],
    mu2: [f64; 3],
    khat: Vec<C64>,
}

impl CauchyKernel {
    pub fn build(grid: Grid3, zeta0: CVec3) -> Result<Self> {
        check_zeta0(zeta0)?;
        let mu1 = re3(zeta0);
        let mu2 = im3(zeta0);
        let n = grid.n;
        let n2 = 2 * n;
        let m4 = 4 * n;
        let dx = grid.spacing();
        let l4 = 4.0 * grid.l;
        let dk = 2.0 * std::f64::consts::PI / l4;
        let r = 2.0 * grid.l;
        let signed = |q: usize| fft::signed_index(q, m4);
        // Ê on the 4× lattice, Nyquist planes dropped
        let symbol = |q1: usize, q2: usize, q3: usize| -> C64 {
            let (s1, s2, s3) = (signed(q1), signed(q2), signed(q3));
            let nyq = -(2 * n as i64);
            if s1 == nyq || s2 == nyq || s3 == nyq {
                return ZERO;
            }
            let k = [dk * s1 as f64, dk * s2 as f64, dk * s3 as f64];
            let k1 = dot3(k, mu1);
            let k2 = dot3(k, mu2);
            let a = (k1 * k1 + k2 * k2).sqrt();
            // (1 - J0(Ra)) / (i kz) = -i R² g(Ra) conj(kz)
            -I * (r * r * one_minus_j0_over_x2(r * a)) * C64::new(k1, -k2)
        };
        let keep = |j: usize| -> Option<usize> {
            // output bin j of the 4× line holds offset s = signed(j); keep -n <= s < n
            let s = signed(j);
            if s >= -(n as i64) && s < n as i64 {
                Some(s.rem_euclid(n2 as i64) as usize)
            } else {
                None
            }
        };
        let keep_map: Vec<Option<usize>> = (0..m4).map(keep).collect();
        // stage 1: lines along axis 1, generated on the fly
        let mut a1 = vec![ZERO; n2 * m4 * m4];
        let mut line = vec![ZERO; m4];
        for q3 in 0..m4 {
            for q2 in 0..m4 {
                for (q1, v) in line.iter_mut().enumerate() {
                    *v = symbol(q1, q2, q3);
                }
                fft::fft_lines(&mut line, m4, true);
                for (j, v) in line.iter().enumerate() {
                    if let Some(p) = keep_map[j] {
                        a1[p + n2 * (q2 + m4 * q3)] = *v;
                    }
                }
            }
        }
        // stage 2: axis 2
        let mut a2 = vec![ZERO; n2 * n2 * m4];
        for q3 in 0..m4 {
            for p1 in 0..n2 {
                for (q2, v) in line.iter_mut().enumerate() {
                    *v = a1[p1 + n2 * (q2 + m4 * q3)];
                }
                fft::fft_lines(&mut line, m4, true);
                for (j, v) in line.iter().enumerate() {
                    if let Some(p) = keep_map[j] {
                        a2[p1 + n2 * (p + n2 * q3)] = *v;
                    }
                }
            }
        }
        drop(a1);
        // stage 3: axis 3
        let mut kc = vec![ZERO; n2 * n2 * n2];
        let scale = 1.0 / (l4 * l4 * l4);
        for p2 in 0..n2 {
            for p1 in 0..n2 {
                for (q3, v) in line.iter_mut().enumerate() {
                    *v = a2[p1 + n2 * (p2 + n2 * q3)];
                }
                fft::fft_lines(&mut line, m4, true);
                for (j, v) in line.iter().enumerate() {
                    if let Some(p) = keep_map[j] {
                        kc[p1 + n2 * (p2 + n2 * p)] = *v * scale;
                    }
                }
            }
        }
        drop(a2);
        fft::forward(&mut kc, n2);
        let dv = dx * dx * dx;
        for v in kc.iter_mut() {
            *v *= dv;
        }
        Ok(CauchyKernel { grid, mu1, mu2, khat: kc })
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn zeta0(&self) -> CVec3 {
        complexify(self.mu1, self.mu2)
    }

    /// Aperiodic convolution of `f` (taken as zero outside the box) with the kernel.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        self.grid.check_same(f.grid())?;
        let n = self.grid.n;
        let n2 = 2 * n;
        let mut pad = vec![ZERO; n2 * n2 * n2];
        let fv = f.values();
        for k in 0..n {
            for j in 0..n {
                let src = n * (j + n * k);
                let dst = n2 * (j + n2 * k);
                pad[dst..dst + n].copy_from_slice(&fv[src..src + n]);
            }
        }
        fft::forward(&mut pad, n2);
        for (v, k) in pad.iter_mut().zip(&self.khat) {
            *v *= k;
        }
        fft::inverse(&mut pad, n2);
        let mut out = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                let src = n2 * (j + n2 * k);
                out.extend_from_slice(&pad[src..src + n]);
            }
        }
        ScalarField::from_values(self.grid, out)
    }
}

/// How a requested `ζ₀` relates to the cached canonical one.
#[derive(Clone, Copy)]
struct Variant {
    negate: bool,
    conjugate: bool,
}

fn canonical(z: CVec3) -> (CVec3, Variant) {
    let first_sign = |v: [f64; 3]| {
        for c in v {
            if c.abs() > 1e-9 {
                return c > 0.0;
            }
        }
        true
    };
    let re_pos = first_sign(re3(z));
    let im_pos = first_sign(im3(z));
    // (a, b) -> (a, -b) is conjugation, (a, b) -> (-a, -b) is negation
    let v = match (re_pos, im_pos) {
        (true, true) => Variant { negate: false, conjugate: false },
        (true, false) => Variant { negate: false, conjugate: true },
        (false, false) => Variant { negate: true, conjugate: false },
        (false, true) => Variant { negate: true, conjugate: true },
    };
    let mut c = z;
    if v.conjugate {
        c = [c[0].conj(), c[1].conj(), c[2].conj()];
    }
    if v.negate {
        c = [-c[0], -c[1], -c[2]];
    }
    (c, v)
}

type KernelKey = (usize, u64, [u64; 6]);

fn key(grid: &Grid3, z: CVec3) -> KernelKey {
    let b = |x: f64| x.to_bits();
    (grid.n, grid.l.to_bits(), [b(z[0].re), b(z[1].re), b(z[2].re), b(z[0].im), b(z[1].im), b(z[2].im)])
}

const CACHE_SLOTS: usize = 6;

fn cache() -> &'static Mutex<Vec<(KernelKey, Arc<CauchyKernel>)>> {
    static C: OnceLock<Mutex<Vec<(KernelKey, Arc<CauchyKernel>)>>> = OnceLock::new();
    C.get_or_init(|| Mutex::new(Vec::new()))
}

fn kernel_for(grid: &Grid3, z: CVec3) -> Result<Arc<CauchyKernel>> {
    let k = key(grid, z);
    {
        let mut c = cache().lock().unwrap();
        if let Some(pos) = c.iter().position(|(kk, _)| *kk == k) {
            let e = c.remove(pos);
            let out = e.1.clone();
            c.push(e);
            return Ok(out);
        }
    }
    let built = Arc::new(CauchyKernel::build(*grid, z)?);
    let mut c = cache().lock().unwrap();
    if c.len() >= CACHE_SLOTS {
        c.remove(0);
    }
    c.push((k, built.clone()));
    Ok(built)
}

/// `N_{ζ₀}⁻¹ f`: the decaying solution of `ζ₀·∇Φ = f`, for `f` supported in the box.
pub fn cauchy_transform_inverse(f: &ScalarField, zeta0: CVec3) -> Result<ScalarField> {
    check_zeta0(zeta0)?;
    f.check_finite("cauchy_transform_inverse input")?;
    let (c, v) = canonical(zeta0);
    let k = kernel_for(f.grid(), c)?;
    let out = if v.conjugate { k.apply(&f.conj())?.conj() } else { k.apply(f)? };
    Ok(if v.negate { out.scale(C64::new(-1.0, 0.0)) } else { out })
}

/// Gradient of `N_{ζ₀}⁻¹ f`, obtained as `N_{ζ₀}⁻¹ ∇f` (the inverse commutes with
/// derivatives and `f` is periodic on the box, `N⁻¹f` is not).
pub fn cauchy_transform_inverse_gradient(f: &ScalarField, zeta0: CVec3) -> Result<VectorField> {
    let g = gradient(f);
    VectorField::new([
        cauchy_transform_inverse(&g.c[0], zeta0)?,
        cauchy_transform_inverse(&g.c[1], zeta0)?,
        cauchy_transform_inverse(&g.c[2], zeta0)?,
    ])
}

/// Window equal to 1 on `|x_i| ≤ 0.2L` and falling to 0 at the box faces. The
/// profile `e^{-1/t^{1.5}}` resolves better on the grid than `e^{-1/t}`.
pub fn residual_window(grid: Grid3) -> ScalarField {
    let inner = 0.2 * grid.l;
    let outer = 0.5 * grid.l;
    let prof = |t: f64| {
        if t <= 0.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else {
            let a = (-1.0 / t.powf(1.5)).exp();
            let b = (-1.0 / (1.0 - t).powf(1.5)).exp();
            a / (a + b)
        }
    };
    ScalarField::from_real_fn(grid, |x| {
        (0..3).map(|i| prof((outer - x[i].abs()) / (outer - inner))).product()
    })
}

/// Relative L² residual of `ζ₀·∇Φ = f` on the flat part of [`residual_window`].
/// `Φ` is multiplied by the window so that it becomes periodic and can be
/// differentiated spectrally; `f` should live inside the flat part.
pub fn transport_residual(phi: &ScalarField, f: &ScalarField, zeta0: CVec3) -> Result<f64> {
    let grid = *phi.grid();
    grid.check_same(f.grid())?;
    let w = residual_window(grid);
    let d = gradient(&w.mul(phi)).dot_const(zeta0);
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..grid.len() {
        den += f.values()[p].norm_sqr();
        if w.values()[p].re == 1.0 {
            num += (d.values()[p] - f.values()[p]).norm_sqr();
        }
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

#[derive(Debug, Clone)]
pub struct Phase {
    pub phi_sharp: ScalarField,
    /// Mollification width used for `A♯` (0 tags the unmollified limit).
    pub tau: f64,
    pub zeta0: CVec3,
    /// Measured `sup|Φ♯| / sup|ζ₀·A♯|`.
    pub bound: f64,
}

impl Phase {
    pub fn amplitude(&self) -> ScalarField {
        self.phi_sharp.map(|z| z.exp())
    }
}

/// `Φ♯ = N_{ζ₀}⁻¹(-i ζ₀·A♯)`, so that `ζ₀·∇Φ♯ + iζ₀·A♯ = 0`.
pub fn transport_phase(a_sharp: &VectorField, zeta0: CVec3, tau: f64) -> Result<Phase> {
    check_zeta0(zeta0)?;
    let rhs = a_sharp.dot_const(zeta0).scale(-I);
    let phi = cauchy_transform_inverse(&rhs, zeta0)?;
    let s = rhs.sup_norm();
    let bound = if s > 0.0 { phi.sup_norm() / s } else { 0.0 };
    Ok(Phase { phi_sharp: phi, tau, zeta0, bound })
}

/// `(∫ (1+|x|²)^δ |f|² dx)^{1/2}` with the weight centered at the box center.
pub fn weighted_l2_norm(f: &ScalarField, delta: f64) -> f64 {
    let g = *f.grid();
    let mut acc = 0.0;
    for (p, v) in f.values().iter().enumerate() {
        let x = g.point(p);
        acc += (1.0 + dot3(x, x)).powf(delta) * v.norm_sqr();
    }
    (acc * g.cell_volume()).sqrt()
}

/// Least-squares slope of `log y` against `log x`, with the fitted constant.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, (my - slope * mx).exp())
}

/// Fitted constants recorded by the estimate checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DbarDiagnostics {
    /// `max sup|N⁻¹f| / sup|f|` over the bump family of radius `radius`.
    pub c_r: Option<f64>,
    pub radius: Option<f64>,
    /// `(order, C_α)` from `sup|∂^α Φ♯| ≈ C_α τ^{-|α|}`.
    pub c_alpha: Vec<(u32, f64)>,
    pub alpha_slope: Option<f64>,
    /// `max ‖N⁻¹f‖_{L²_δ} / ‖f‖_{L²_{δ+1}}`.
    pub c_delta: Option<f64>,
    pub delta: Option<f64>,
}

impl DbarDiagnostics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

/// Smooth bump of support radius `r` around `c`, with unit sup norm.
pub fn bump(grid: Grid3, c: [f64; 3], r: f64) -> ScalarField {
    ScalarField::from_real_fn(grid, |x| {
        let d2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)) / (r * r);
        if d2 >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - d2)).exp()
        }
    })
}

/// Frames with `ξ` uniform in `[-xi_range, xi_range]³` and `(μ₁, μ₂)` rotated by a
/// uniform angle about `ξ`.
pub fn random_frames(rng: &mut impl Rng, count: usize, xi_range: f64) -> Result<Vec<Frame>> {
    (0..count)
        .map(|_| {
            let xi: [f64; 3] = [0; 3].map(|_| rng.gen_range(-xi_range..xi_range));
            let f = make_frame(xi)?;
            let t: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let (c, s) = (t.cos(), t.sin());
            Ok(Frame {
                xi,
                mu1: [0, 1, 2].map(|j| c * f.mu1[j] + s * f.mu2[j]),
                mu2: [0, 1, 2].map(|j| -s * f.mu1[j] + c * f.mu2[j]),
            })
        })
        .collect()
}

/// Smooth compactly supported complex sources inside the flat part of
/// [`residual_window`]: sums of two Gaussians of width `r/4`, each cut off by a
/// bump of radius `r`, with random centers, radii and amplitudes.
pub fn random_sources(grid: Grid3, rng: &mut impl Rng, count: usize) -> Vec<ScalarField> {
    let flat = 0.2 * grid.l;
    (0..count)
        .map(|_| {
            let mut f = ScalarField::zeros(grid);
            for _ in 0..2 {
                let r = rng.gen_range(0.65..0.8) * flat;
                let reach = 0.95 * flat - r;
                let c: [f64; 3] = [0; 3].map(|_| rng.gen_range(-reach..reach));
                let amp = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let w = r / 4.0;
                let g = ScalarField::from_real_fn(grid, |x| {
                    let d2: f64 = (0..3).map(|j| (x[j] - c[j]).powi(2)).sum();
                    (-d2 / (2.0 * w * w)).exp()
                });
                f.axpy(amp, &bump(grid, c, r).mul(&g));
            }
            f
        })
        .collect()
}

/// Relative residual of `ζ₀·Da + ζ₀·A a = 0` (`D = -i∇`) on the flat part of
/// [`residual_window`], for an amplitude `a` tending to 1 away from the support.
pub fn transport_cancellation_residual(a: &ScalarField, a_sharp: &VectorField, zeta0: CVec3) -> Result<f64> {
    let grid = *a.grid();
    grid.check_same(a_sharp.grid())?;
    let w = residual_window(grid);
    let one = C64::new(1.0, 0.0);
    let da = gradient(&w.mul(&a.map(|v| v - one))).dot_const(zeta0);
    let za = a_sharp.dot_const(zeta0).mul(a);
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..grid.len() {
        den += za.values()[p].norm_sqr();
        if w.values()[p].re == 1.0 {
            num += (da.values()[p] + I * za.values()[p]).norm_sqr();
        }
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

/// `max sup|N⁻¹f| / sup|f|` over a family.
pub fn boundedness_constant(fs: &[ScalarField], zeta0: CVec3) -> Result<f64> {
    let mut c: f64 = 0.0;
    for f in fs {
        let phi = cauchy_transform_inverse(f, zeta0)?;
        c = c.max(phi.sup_norm() / f.sup_norm());
    }
    Ok(c)
}

/// `max ‖N⁻¹f‖_{L²_δ} / ‖f‖_{L²_{δ+1}}` over a family.
pub fn weighted_constant(fs: &[ScalarField], zeta0: CVec3, delta: f64) -> Result<f64> {
    let mut c: f64 = 0.0;
    for f in fs {
        let phi = cauchy_transform_inverse(f, zeta0)?;
        c = c.max(weighted_l2_norm(&phi, delta) / weighted_l2_norm(f, delta + 1.0));
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_for_vertical_xi() {
        let f = make_frame([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(f.mu1, [1.0, 0.0, 0.0]);
        assert_eq!(f.mu2, [0.0, 1.0, 0.0]);
        assert!(make_frame([0.0; 3]).is_err());
    }

    #[test]
    fn zero_input_gives_zero() {
        let g = Grid3::new(8, 6.0).unwrap();
        let fr = make_frame([1.0, 2.0, 0.5]).unwrap();
        let phi = cauchy_transform_inverse(&ScalarField::zeros(g), fr.zeta0()).unwrap();
        assert_eq!(phi.sup_norm(), 0.0);
    }

    #[test]
    fn bad_zeta_rejected() {
        let g = Grid3::new(8, 6.0).unwrap();
        let z = complexify([1.0, 0.0, 0.0], [1.0, 0.0, 0.0]);
        assert!(cauchy_transform_inverse(&ScalarField::zeros(g), z).is_err());
    }

    #[test]
    fn small_argument_series_matches_closed_form() {
        for &x in &[0.099, 0.1, 0.101] {
            let direct = (1.0 - libm::j0(x)) / (x * x);
            assert!((one_minus_j0_over_x2(x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let x = [0.4, 0.2, 0.1];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        let (s, c) = loglog_fit(&x, &y);
        assert!((s + 1.5).abs() < 1e-12 && (c - 3.0).abs() < 1e-10);
    }
}
