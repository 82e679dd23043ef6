//! Reconstruction chain from the integral identity: CGO evaluations of the
//! identity, h→0 extrapolation to Fourier projections of `A₁ − A₂`, assembly of
//! the magnetic field difference, the gauge potential, and the electric potential
//! difference.
//!
//! With `I(u₁, u₂) = a₁(u₁, ū₂) − a₂(u₁, ū₂)` and CGO inputs along a frame
//! `(ξ, μ₁, μ₂)`, `h·I → −2i(μ₁ + iμ₂)·∫(A₁ − A₂)e^{ix·ξ}` once the phase factor
//! has been removed by the Eskin–Ralston cancellation.

use crate::cgo::{build_cgo, make_zeta_pair, CgoOptions, CgoSolution, RemainderRegion, Side};
use crate::dbar::{self, cauchy_transform_inverse, cdot, norm3, CVec3, Frame};
use crate::error::{Error, Result};
use crate::fields::{
    fourier_transform, gradient, Direction, Grid3, ScalarField, VectorField, I, ZERO,
};
use crate::forward::{basis_solutions, basis_trace, BoxDomain, BoxOperator, CauchyDataset, NodeField, SOLVER_TOL};
use crate::krylov::KrylovConfig;
use crate::potentials::{magnetic_field, MagneticField2Form, Potentials};
use crate::rng;
use crate::C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// `h·I → LIMIT_FACTOR · (μ₁ + iμ₂)·V(ξ)`.
pub const LIMIT_FACTOR: C64 = C64 { re: 0.0, im: -2.0 };

fn frame_at_zero() -> Frame {
    Frame { xi: [0.0; 3], mu1: [1.0, 0.0, 0.0], mu2: [0.0, 1.0, 0.0] }
}

/// The frame used for lattice frequency `ξ`; `ξ = 0` gets `μ₁ = e₁, μ₂ = e₂`.
pub fn frame_for(xi: [f64; 3]) -> Result<Frame> {
    if norm3(xi) == 0.0 {
        Ok(frame_at_zero())
    } else {
        dbar::make_frame(xi)
    }
}

/// `(A₁·A₁ − A₂·A₂ + q₁ − q₂)` and `A₁ − A₂`.
fn differences(p1: &Potentials, p2: &Potentials) -> Result<(VectorField, ScalarField)> {
    p1.grid().check_same(p2.grid())?;
    let w = p1.a.sub(&p2.a);
    let m = p1.a.square().sub(&p2.a.square()).add(&p1.q.sub(&p2.q));
    Ok((w, m))
}

fn union_mask(p1: &Potentials, p2: &Potentials) -> Vec<bool> {
    p1.mask.values().iter().zip(p2.mask.values()).map(|(a, b)| a.re != 0.0 || b.re != 0.0).collect()
}

/// `∫_Ω iW·(u₁∇ū₂ − ū₂∇u₁) + M u₁ū₂` with spectral gradients. The inputs must be
/// resolved periodic fields (for CGO solutions use [`identity_from_cgo`]).
pub fn eval_integral_identity(p1: &Potentials, p2: &Potentials, u1: &ScalarField, u2: &ScalarField) -> Result<C64> {
    let g = *p1.grid();
    g.check_same(u1.grid())?;
    g.check_same(u2.grid())?;
    let (w, m) = differences(p1, p2)?;
    let inside = union_mask(p1, p2);
    let g1 = gradient(u1);
    let g2 = gradient(&u2.conj());
    let v2 = u2.conj();
    let mut acc = ZERO;
    for x in 0..g.len() {
        if !inside[x] {
            continue;
        }
        let (a, b) = (u1.values()[x], v2.values()[x]);
        let mut t = m.values()[x] * a * b;
        for j in 0..3 {
            t += I * w.c[j].values()[x] * (a * g2.c[j].values()[x] - b * g1.c[j].values()[x]);
        }
        acc += t;
    }
    Ok(acc * g.cell_volume())
}

/// The identity for `u_j = e^{x·ζ_j/h} w_j`, evaluated without forming the
/// exponentials: `u₁ū₂ = e^{x·(ζ₁+ζ̄₂)/h} w₁w̄₂`.
pub fn identity_from_cgo(p1: &Potentials, p2: &Potentials, s1: &CgoSolution, s2: &CgoSolution) -> Result<C64> {
    if s1.side != Side::One || s2.side != Side::Two {
        return Err(Error::invalid("identity needs a side-1 solution for P1 and a side-2 solution for conj(P2)"));
    }
    if s1.pair.h != s2.pair.h || s1.pair.frame != s2.pair.frame {
        return Err(Error::invalid("CGO solutions come from different (frame, h)"));
    }
    let g = *p1.grid();
    let h = s1.pair.h;
    let (w, m) = differences(p1, p2)?;
    let inside = union_mask(p1, p2);
    let (z1, z2) = (s1.zeta, s2.zeta);
    let osc: CVec3 = [0, 1, 2].map(|j| (z1[j] + z2[j].conj()) / h);
    let lead: CVec3 = [0, 1, 2].map(|j| (z1[j] - z2[j].conj()) / h);
    let w1 = s1.reduced();
    let gw1 = s1.grad_reduced();
    let w2 = s2.reduced();
    let gw2 = s2.grad_reduced();
    let mut acc = ZERO;
    for x in 0..g.len() {
        if !inside[x] {
            continue;
        }
        let pt = g.point(x);
        let e = (osc[0] * pt[0] + osc[1] * pt[1] + osc[2] * pt[2]).exp();
        let a = w1.values()[x];
        let b = w2.values()[x].conj();
        let mut t = m.values()[x] * a * b;
        for j in 0..3 {
            let flux = lead[j] * a * b + b * gw1.c[j].values()[x] - a * gw2.c[j].values()[x].conj();
            t -= I * w.c[j].values()[x] * flux;
        }
        acc += e * t;
    }
    Ok(acc * g.cell_volume())
}

/// `a₁(u₁, ū₂) − a₂(u₁, ū₂)` with the lattice forms of the forward solver.
pub fn identity_lattice_volume(p1: &Potentials, p2: &Potentials, dom: &BoxDomain, u1: &NodeField, u2: &NodeField) -> Result<C64> {
    if u1.dom != *dom || u2.dom != *dom {
        return Err(Error::invalid("node fields live on a different box"));
    }
    let o1 = BoxOperator::new(p1, dom)?;
    let o2 = BoxOperator::new(p2, dom)?;
    let v2 = u2.conj();
    Ok(o1.pairing(&u1.values, &v2.values) - o2.pairing(&u1.values, &v2.values))
}

/// `Σ c_m conj(d_{m'}) (Q₁ − Q₂)[m][m']`: the identity from boundary data alone,
/// for `u₁` with trace `Σ c_m g_m` and `u₂` with trace `Σ d_m g_m`.
pub fn identity_boundary_route(d1: &CauchyDataset, d2: &CauchyDataset, c: &[C64], d: &[C64]) -> Result<C64> {
    if d1.dom != d2.dom || d1.m() != d2.m() {
        return Err(Error::invalid("datasets do not share a box and basis"));
    }
    if c.len() != d1.m() || d.len() != d1.m() {
        return Err(Error::invalid(format!("coefficient vectors must have length {}", d1.m())));
    }
    let mut acc = ZERO;
    for (i, ci) in c.iter().enumerate() {
        for (j, dj) in d.iter().enumerate() {
            acc += ci * dj.conj() * (d1.q[i][j] - d2.q[i][j]);
        }
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRouteReport {
    pub m: usize,
    pub volume: C64,
    pub boundary: C64,
    pub relative: f64,
    pub max_solver_residual: f64,
}

/// Evaluates the identity for seeded random boundary combinations both through the
/// lattice volume forms and through the two Cauchy datasets.
pub fn cross_check_identity(p1: &Potentials, p2: &Potentials, dom: &BoxDomain, m: usize, seed: u64) -> Result<CrossRouteReport> {
    let o1 = BoxOperator::new(p1, dom)?;
    let o2 = BoxOperator::new(p2, dom)?;
    let o2c = BoxOperator::new(&p2.conj(), dom)?;
    let (basis, s1, r1) = basis_solutions(&o1, m)?;
    let (_, s2, r2) = basis_solutions(&o2, m)?;
    let (_, s2c, r3) = basis_solutions(&o2c, m)?;
    let traces: Vec<NodeField> = basis.iter().map(|b| basis_trace(dom, *b)).collect();
    let dataset = |op: &BoxOperator, sols: &[NodeField], r: f64| CauchyDataset {
        dom: *dom,
        l: p1.grid().l,
        basis: basis.clone(),
        q: sols.iter().map(|u| traces.iter().map(|g| op.pairing(&u.values, &g.values)).collect()).collect(),
        max_solver_residual: r,
    };
    let d1 = dataset(&o1, &s1, r1);
    let d2 = dataset(&o2, &s2, r2);
    let mut rng = rng::substream(seed, "recon-cross-route");
    let mut draw = || -> Vec<C64> { (0..m).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect() };
    let c = draw();
    let d = draw();
    let combine = |sols: &[NodeField], coef: &[C64]| {
        let mut u = NodeField::zeros(*dom);
        for (s, k) in sols.iter().zip(coef) {
            u = u.add(&s.scale(*k));
        }
        u
    };
    let u1 = combine(&s1, &c);
    let u2 = combine(&s2c, &d);
    let volume = identity_lattice_volume(p1, p2, dom, &u1, &u2)?;
    let boundary = identity_boundary_route(&d1, &d2, &c, &d)?;
    let relative = (volume - boundary).norm() / volume.norm().max(boundary.norm()).max(1e-300);
    Ok(CrossRouteReport { m, volume, boundary, relative, max_solver_residual: r1.max(r2).max(r3) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    /// Descending h values; the last two are extrapolated.
    pub hs: Vec<f64>,
    pub sigma: f64,
    /// Mollification width; `None` uses `h^σ`, `Some(0.0)` disables mollification.
    pub tau: Option<f64>,
    /// Radius of the frequency ball in units of `2π/L`.
    pub xi_max: f64,
    /// Solve for the CGO remainders (otherwise `r = 0`).
    pub solve_remainder: bool,
    pub cgo_max_iter: usize,
    pub cgo_rel_tol: f64,
    /// Weak-residual test bumps per CGO build (0 skips the check).
    pub cgo_weak_bumps: usize,
    /// Relative extrapolation residual above which a coefficient is flagged.
    pub extrapolation_tol: f64,
    /// Relative size of the assembled `dA` above which the difference is not a gradient.
    pub curl_tol: f64,
    /// Relative `A`-mismatch allowed in the electric stage.
    pub mismatch_tol: f64,
    /// Box and basis size for the optional boundary-data comparison.
    pub dataset_m: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            hs: vec![0.1, 0.05],
            sigma: 1.0 / 3.0,
            tau: None,
            xi_max: 4.0,
            solve_remainder: true,
            cgo_max_iter: 500,
            cgo_rel_tol: 1e-6,
            cgo_weak_bumps: 0,
            extrapolation_tol: 1e-2,
            curl_tol: 1e-5,
            mismatch_tol: 1e-6,
            dataset_m: 9,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self, grid: &Grid3) -> Result<()> {
        if self.hs.is_empty() {
            return Err(Error::invalid("the h-sweep is empty"));
        }
        if self.hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::invalid("h values must be positive"));
        }
        if self.hs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("the h-sweep must be strictly descending"));
        }
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(Error::invalid(format!("sigma must lie in (0, 1/2), got {}", self.sigma)));
        }
        if !(self.xi_max >= 0.0) {
            return Err(Error::invalid("frequency ball radius must be nonnegative"));
        }
        let xi = self.xi_max * 2.0 * PI / grid.l;
        if self.hs[0] * xi >= 2.0 {
            return Err(Error::invalid(format!(
                "h|xi| = {:.3} at the ball edge must be below 2",
                self.hs[0] * xi
            )));
        }
        if self.xi_max.floor() as usize >= grid.n / 2 {
            return Err(Error::invalid("frequency ball reaches the Nyquist band"));
        }
        Ok(())
    }

    pub fn cgo_options(&self) -> CgoOptions {
        CgoOptions {
            sigma: self.sigma,
            tau: self.tau,
            max_iter: self.cgo_max_iter,
            rel_tol: self.cgo_rel_tol,
            region: RemainderRegion::Mask,
            neglect_remainder: !self.solve_remainder,
            weak_bumps: self.cgo_weak_bumps,
            ..CgoOptions::default()
        }
    }
}

/// Two-point linear extrapolation to h = 0.
pub fn richardson(h1: f64, v1: C64, h2: f64, v2: C64) -> C64 {
    (v2 * h1 - v1 * h2) / (h1 - h2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HValue {
    pub h: f64,
    pub value: C64,
    pub r_norm_h1: [f64; 2],
    pub iterations: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub frame: Frame,
    pub values: Vec<HValue>,
    pub limit: C64,
    /// `|difference of the last two extrapolants|`, or the size of the last
    /// correction when only two values exist.
    pub extrapolation_residual: f64,
    pub scale: f64,
    pub flagged: bool,
    /// Observed order of `|v(h_i) − v(h_{i+1})|` (needs three values).
    pub rate: Option<f64>,
    /// Phase-replacement error and its bound `‖ΔΦ‖ e^{max Re}` (magnetic stage only).
    pub swap_error: Option<f64>,
    pub swap_bound: Option<f64>,
}

impl CoefficientReport {
    pub fn swap_within_bound(&self) -> bool {
        match (self.swap_error, self.swap_bound) {
            (Some(e), Some(b)) => e <= b * (1.0 + 1e-9) + 1e-13 * self.scale,
            _ => true,
        }
    }
}

fn extrapolate(values: &[HValue], tol: f64, scale: f64) -> (C64, f64, bool, Option<f64>) {
    let n = values.len();
    if n == 1 {
        return (values[0].value, f64::INFINITY, true, None);
    }
    let (a, b) = (&values[n - 2], &values[n - 1]);
    let limit = richardson(a.h, a.value, b.h, b.value);
    let residual = if n >= 3 {
        let c = &values[n - 3];
        (limit - richardson(c.h, c.value, a.h, a.value)).norm()
    } else {
        (limit - b.value).norm()
    };
    let rate = if n >= 3 {
        let c = &values[n - 3];
        let d1 = (c.value - a.value).norm();
        let d2 = (a.value - b.value).norm();
        if d1 > 0.0 && d2 > 0.0 {
            Some((d1 / d2).ln() / (c.h / a.h).ln())
        } else {
            None
        }
    } else {
        None
    };
    let flagged = !(residual <= tol * limit.norm().max(scale));
    (limit, residual, flagged, rate)
}

fn l1_mask(f: &ScalarField, inside: &[bool]) -> f64 {
    let dv = f.grid().cell_volume();
    f.values().iter().zip(inside).filter(|(_, m)| **m).map(|(v, _)| v.norm()).sum::<f64>() * dv
}

fn sweep_identity(
    p1: &Potentials,
    p2: &Potentials,
    frame: Frame,
    hs: &[f64],
    cfg: &ReconConfig,
    scaled: bool,
) -> Result<(Vec<HValue>, Option<(CgoSolution, CgoSolution)>)> {
    let opts = cfg.cgo_options();
    let p2c = p2.conj();
    let mut out = Vec::with_capacity(hs.len());
    let mut last = None;
    for &h in hs {
        let s1 = build_cgo(p1, frame, h, Side::One, &opts)?;
        let s2 = build_cgo(&p2c, frame, h, Side::Two, &opts)?;
        let v = identity_from_cgo(p1, p2, &s1, &s2)?;
        out.push(HValue {
            h,
            value: if scaled { v * h } else { v },
            r_norm_h1: [s1.diagnostics.r_norm_h1, s2.diagnostics.r_norm_h1],
            iterations: [s1.diagnostics.iterations, s2.diagnostics.iterations],
        });
        last = Some((s1, s2));
    }
    Ok((out, last))
}

/// The measured phase-replacement error `|∫ LIMIT·ζ₀·W e^{ix·ξ}(a₁ā₂ − e^{φ_W})|` on
/// the mask and its bound from `|e^z − e^w| ≤ |z − w| e^{max(Re z, Re w)}`.
fn phase_swap(p1: &Potentials, p2: &Potentials, s1: &CgoSolution, s2: &CgoSolution) -> Result<(f64, f64)> {
    let g = *p1.grid();
    let (w, _) = differences(p1, p2)?;
    let inside = union_mask(p1, p2);
    let zeta0 = s1.pair.zeta0(Side::One);
    let zw = w.dot_const(zeta0);
    let phi_w = cauchy_transform_inverse(&zw.scale(-I), zeta0)?;
    let xi = s1.pair.frame.xi;
    let dv = g.cell_volume();
    let (mut err, mut dphi2, mut zw2) = (ZERO, 0.0, 0.0);
    let mut max_re = f64::NEG_INFINITY;
    for x in 0..g.len() {
        if !inside[x] {
            continue;
        }
        let sum = s1.phase.phi_sharp.values()[x] + s2.phase.phi_sharp.values()[x].conj();
        let pw = phi_w.values()[x];
        let prod = s1.amplitude.a.values()[x] * s2.amplitude.a.values()[x].conj();
        let pt = g.point(x);
        let e = C64::from_polar(1.0, pt[0] * xi[0] + pt[1] * xi[1] + pt[2] * xi[2]);
        err += LIMIT_FACTOR * zw.values()[x] * e * (prod - pw.exp());
        dphi2 += (sum - pw).norm_sqr();
        zw2 += zw.values()[x].norm_sqr();
        max_re = max_re.max(sum.re).max(pw.re);
    }
    let bound = LIMIT_FACTOR.norm() * (zw2 * dv).sqrt() * (dphi2 * dv).sqrt() * max_re.exp();
    Ok(((err * dv).norm(), bound))
}

/// Extrapolated `lim h·I(u₁, u₂)` along `frame` with CGO inputs, plus the
/// phase-replacement check at the finest h.
pub fn phase_corrected_fourier_coefficient(
    p1: &Potentials,
    p2: &Potentials,
    frame: Frame,
    hs: &[f64],
    cfg: &ReconConfig,
) -> Result<CoefficientReport> {
    for &h in hs {
        make_zeta_pair(frame, h)?;
    }
    let (values, last) = sweep_identity(p1, p2, frame, hs, cfg, true)?;
    let (w, m) = differences(p1, p2)?;
    let inside = union_mask(p1, p2);
    let wn: f64 = (0..3).map(|j| l1_mask(&w.c[j], &inside)).sum();
    let scale = 2.0 * wn + hs[0] * l1_mask(&m, &inside);
    let (limit, extrapolation_residual, flagged, rate) = extrapolate(&values, cfg.extrapolation_tol, scale);
    let (swap_error, swap_bound) = match last {
        Some((s1, s2)) if wn > 0.0 => {
            let (e, b) = phase_swap(p1, p2, &s1, &s2)?;
            (Some(e), Some(b))
        }
        _ => (None, None),
    };
    Ok(CoefficientReport { frame, values, limit, extrapolation_residual, scale, flagged, rate, swap_error, swap_bound })
}

/// Extrapolated `lim I(u₁, u₂) = ∫(q₁ − q₂)e^{ix·ξ}` for potentials whose magnetic
/// parts already agree.
pub fn electric_coefficient(p1: &Potentials, p2: &Potentials, frame: Frame, hs: &[f64], cfg: &ReconConfig) -> Result<CoefficientReport> {
    check_a_matched(p1, p2, cfg.mismatch_tol)?;
    let (values, _) = sweep_identity(p1, p2, frame, hs, cfg, false)?;
    let (_, m) = differences(p1, p2)?;
    let scale = l1_mask(&m, &union_mask(p1, p2)).max(l1_mask(&p1.q, &union_mask(p1, p2)));
    let (limit, extrapolation_residual, flagged, rate) = extrapolate(&values, cfg.extrapolation_tol, scale);
    Ok(CoefficientReport { frame, values, limit, extrapolation_residual, scale, flagged, rate, swap_error: None, swap_bound: None })
}

fn check_a_matched(p1: &Potentials, p2: &Potentials, tol: f64) -> Result<f64> {
    let d = p1.a.sub(&p2.a).l2_norm();
    let s = p1.a.l2_norm().max(p2.a.l2_norm());
    let rel = if s > 0.0 { d / s } else { 0.0 };
    if rel > tol {
        return Err(Error::invalid(format!(
            "magnetic potentials differ by {rel:.3e} relative (tolerance {tol:.1e}); gauge step incomplete"
        )));
    }
    Ok(rel)
}

/// `(ζ₀·∫W e^{ix·ξ}e^{φ}, ζ₀·∫W e^{ix·ξ})` with `φ = N_{ζ₀}⁻¹(−iζ₀·W)`, `ζ₀ = μ₁ + iμ₂`.
pub fn eskin_ralston_check(w: &VectorField, frame: Frame) -> Result<(C64, C64)> {
    let g = *w.grid();
    let zeta0 = frame.zeta0();
    let zw = w.dot_const(zeta0);
    if zw.sup_norm() == 0.0 {
        return Ok((ZERO, ZERO));
    }
    let phi = cauchy_transform_inverse(&zw.scale(-I), zeta0)?;
    let xi = frame.xi;
    let (mut lhs, mut rhs) = (ZERO, ZERO);
    for x in 0..g.len() {
        let v = zw.values()[x];
        if v == ZERO {
            continue;
        }
        let pt = g.point(x);
        let e = C64::from_polar(1.0, pt[0] * xi[0] + pt[1] * xi[1] + pt[2] * xi[2]) * v;
        lhs += e * phi.values()[x].exp();
        rhs += e;
    }
    let dv = g.cell_volume();
    Ok((lhs * dv, rhs * dv))
}

/// Integer modes `m` with `|m| ≤ radius`, in lexicographic order.
pub fn ball_modes(radius: f64) -> Vec<[i64; 3]> {
    let r = radius.floor() as i64;
    let mut out = Vec::new();
    for a in -r..=r {
        for b in -r..=r {
            for c in -r..=r {
                if ((a * a + b * b + c * c) as f64) <= radius * radius + 1e-9 {
                    out.push([a, b, c]);
                }
            }
        }
    }
    out
}

/// One representative of each `±m` pair (first nonzero entry positive), and `0`.
pub fn half_ball_modes(radius: f64) -> Vec<[i64; 3]> {
    ball_modes(radius)
        .into_iter()
        .filter(|m| {
            let first = m.iter().copied().find(|v| *v != 0).unwrap_or(0);
            first >= 0
        })
        .collect()
}

fn mode_xi(grid: &Grid3, m: [i64; 3]) -> [f64; 3] {
    m.map(|v| 2.0 * PI * v as f64 / grid.l)
}

/// Spectrum index of the wavevector `k = −ξ(m)`.
fn spectrum_index(grid: &Grid3, m: [i64; 3]) -> Result<usize> {
    let n = grid.n as i64;
    if m.iter().any(|v| 2 * v.abs() >= n) {
        return Err(Error::invalid(format!("mode {m:?} is outside the resolved band")));
    }
    let idx = m.map(|v| (-v).rem_euclid(n) as usize);
    Ok(grid.idx(idx[0], idx[1], idx[2]))
}

/// Projections `μ·V(ξ)` of `V(ξ) = ∫(A₁ − A₂)e^{ix·ξ}` for one lattice frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiProjection {
    pub m: [i64; 3],
    pub projections: Vec<([f64; 3], C64)>,
}

#[derive(Debug, Clone)]
pub struct AssembledField {
    pub da: MagneticField2Form,
    /// Largest least-squares residual of the projections, relative to their size.
    pub max_residual: f64,
    pub flagged: bool,
    /// `V⊥(ξ)` per supplied mode.
    pub transverse: Vec<([i64; 3], CVec3)>,
}

/// Least-squares `V⊥` in the plane orthogonal to `ξ` from its projections.
fn transverse_part(xi: [f64; 3], projections: &[([f64; 3], C64)]) -> Result<(CVec3, f64)> {
    let fr = dbar::make_frame(xi)?;
    let (e1, e2) = (fr.mu1, fr.mu2);
    let xn = norm3(xi);
    let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
    let (mut b1, mut b2) = (ZERO, ZERO);
    for (mu, v) in projections {
        if dbar::dot3(*mu, xi).abs() > 1e-10 * xn * norm3(*mu) {
            return Err(Error::invalid("projection direction is not orthogonal to xi"));
        }
        let (c1, c2) = (dbar::dot3(*mu, e1), dbar::dot3(*mu, e2));
        g11 += c1 * c1;
        g12 += c1 * c2;
        g22 += c2 * c2;
        b1 += *v * c1;
        b2 += *v * c2;
    }
    let det = g11 * g22 - g12 * g12;
    if !(det > 1e-12 * (g11 + g22).powi(2)) {
        return Err(Error::invalid("projections do not span the plane orthogonal to xi"));
    }
    let v1 = (b1 * g22 - b2 * g12) / det;
    let v2 = (b2 * g11 - b1 * g12) / det;
    let (mut res, mut size) = (0.0, 0.0);
    for (mu, v) in projections {
        let fit = v1 * dbar::dot3(*mu, e1) + v2 * dbar::dot3(*mu, e2);
        res += (fit - v).norm_sqr();
        size += v.norm_sqr();
    }
    let rel = if size > 0.0 { (res / size).sqrt() } else { 0.0 };
    Ok(([0, 1, 2].map(|j| v1 * e1[j] + v2 * e2[j]), rel))
}

/// Builds `(dW)^_{jk}(k) = i(k_j Ŵ_k − k_k Ŵ_j)` at `k = −ξ` for the supplied modes
/// inside the ball (everything else zero) and transforms back.
pub fn assemble_magnetic_field_hat(grid: Grid3, coeffs: &[XiProjection], xi_max: f64) -> Result<AssembledField> {
    let mut spec = [vec![ZERO; grid.len()], vec![ZERO; grid.len()], vec![ZERO; grid.len()]];
    let mut max_residual: f64 = 0.0;
    let mut transverse = Vec::new();
    for c in coeffs {
        let mm = c.m.iter().map(|v| (v * v) as f64).sum::<f64>();
        if mm > xi_max * xi_max + 1e-9 || mm == 0.0 {
            continue;
        }
        let xi = mode_xi(&grid, c.m);
        let (v, rel) = transverse_part(xi, &c.projections)?;
        max_residual = max_residual.max(rel);
        let k = xi.map(|x| -x);
        let idx = spectrum_index(&grid, c.m)?;
        for (slot, (j, l)) in [(0, 1), (0, 2), (1, 2)].into_iter().enumerate() {
            spec[slot][idx] = I * (k[j] * v[l] - k[l] * v[j]);
        }
        transverse.push((c.m, v));
    }
    let back = |s: Vec<C64>| -> Result<ScalarField> {
        fourier_transform(&ScalarField::from_values(grid, s)?, Direction::Inverse)
    };
    let [s12, s13, s23] = spec;
    let da = MagneticField2Form { f12: back(s12)?, f13: back(s13)?, f23: back(s23)?, gibbs_affected: false };
    Ok(AssembledField { da, max_residual, flagged: max_residual > 1e-6, transverse })
}

/// `sqrt(Σ_jk ‖∂_j W_k‖²)`, the scale against which a curl is called small.
fn gradient_scale(w: &VectorField) -> f64 {
    (0..3)
        .map(|k| {
            let g = gradient(&w.c[k]);
            (0..3).map(|j| g.c[j].l2_norm().powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// `ψ` with `∇ψ = A_diff`: `ψ̂ = k·Â/(i|k|²)`, `ψ̂(0) = 0`. Rejected unless the
/// supplied curl (the assembled `dA`, or the spectral curl of `A_diff` when none is
/// given) is below `curl_tol` relative to the full derivative of `A_diff`.
pub fn gauge_potential_from_difference(adiff: &VectorField, curl: Option<&MagneticField2Form>, curl_tol: f64) -> Result<ScalarField> {
    let g = *adiff.grid();
    let scale = gradient_scale(adiff);
    let own;
    let curl = match curl {
        Some(c) => c,
        None => {
            own = magnetic_field(adiff);
            &own
        }
    };
    let rel = if scale > 0.0 { curl.l2_norm() / scale } else { curl.l2_norm() };
    if rel > curl_tol {
        return Err(Error::invalid(format!(
            "difference is not a gradient: relative curl {rel:.3e} exceeds {curl_tol:.1e}"
        )));
    }
    let kd = g.deriv_wavenumbers();
    let ah = [0, 1, 2].map(|j| crate::fields::dft(&adiff.c[j]));
    let mut psi = vec![ZERO; g.len()];
    for (p, v) in psi.iter_mut().enumerate() {
        let (a, b, c) = g.unidx(p);
        let k = [kd[a], kd[b], kd[c]];
        let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
        if k2 > 0.0 {
            *v = (ah[0][p] * k[0] + ah[1][p] * k[1] + ah[2][p] * k[2]) / (I * k2);
        }
    }
    Ok(crate::fields::idft(g, psi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XiDiagnostics {
    pub m: [i64; 3],
    pub plus: CoefficientReport,
    pub minus: CoefficientReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectricDiagnostics {
    pub m: [i64; 3],
    pub coefficient: CoefficientReport,
}

#[derive(Debug, Clone)]
pub struct ElectricResult {
    pub q_diff: ScalarField,
    /// `∫(q₁ − q₂)e^{ix·ξ}` per mode.
    pub coefficients: Vec<([i64; 3], C64)>,
    pub per_xi: Vec<ElectricDiagnostics>,
}

fn is_real_potential(p: &Potentials) -> bool {
    let s = p.a.sup_norm().max(p.q.sup_norm()).max(1e-300);
    p.a.c.iter().all(|c| c.is_real(1e-14 * s)) && p.q.is_real(1e-14 * s)
}

fn inverse_from_modes(grid: Grid3, modes: &[([i64; 3], C64)]) -> Result<ScalarField> {
    let mut spec = vec![ZERO; grid.len()];
    for (m, v) in modes {
        spec[spectrum_index(&grid, *m)?] = *v;
    }
    fourier_transform(&ScalarField::from_values(grid, spec)?, Direction::Inverse)
}

fn mirrored<T: Clone>(items: Vec<([i64; 3], T)>, conj: impl Fn(&T) -> T, hermitian: bool) -> Vec<([i64; 3], T)> {
    let mut out = Vec::with_capacity(2 * items.len());
    for (m, v) in items {
        if hermitian && m != [0, 0, 0] {
            out.push((m.map(|x| -x), conj(&v)));
        }
        out.push((m, v));
    }
    out.sort_by_key(|(m, _)| *m);
    out
}

/// `q₁ − q₂` on the frequency ball from the identity with matched magnetic parts,
/// masked to Ω.
pub fn recover_electric_potential(p1: &Potentials, p2g: &Potentials, cfg: &ReconConfig) -> Result<ElectricResult> {
    let grid = *p1.grid();
    cfg.validate(&grid)?;
    check_a_matched(p1, p2g, cfg.mismatch_tol)?;
    let hermitian = is_real_potential(p1) && is_real_potential(p2g);
    let modes = if hermitian { half_ball_modes(cfg.xi_max) } else { ball_modes(cfg.xi_max) };
    let per_xi = modes
        .par_iter()
        .map(|&m| {
            let frame = frame_for(mode_xi(&grid, m))?;
            let coefficient = electric_coefficient(p1, p2g, frame, &cfg.hs, cfg)?;
            Ok(ElectricDiagnostics { m, coefficient })
        })
        .collect::<Result<Vec<_>>>()?;
    let coefficients = mirrored(per_xi.iter().map(|d| (d.m, d.coefficient.limit)).collect(), |v| v.conj(), hermitian);
    let q_diff = inverse_from_modes(grid, &coefficients)?.mul(&p1.mask);
    Ok(ElectricResult { q_diff, coefficients, per_xi })
}

/// How the electric stage matched the magnetic parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeStatus {
    /// `A₂ + ∇ψ` with the recovered gauge potential.
    Gauged,
    /// The difference was not a gradient; `A₁` was substituted for `A₂`.
    Substituted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconDiagnostics {
    pub modes: usize,
    pub hermitian: bool,
    pub flagged: usize,
    pub swap_violations: usize,
    pub projection_residual: f64,
    pub gauge_status: GaugeStatus,
    pub gauge_rejection: Option<String>,
    pub a_mismatch: f64,
    pub dataset_discrepancy: Option<f64>,
    pub per_xi: Vec<XiDiagnostics>,
    pub electric: Vec<ElectricDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub da_estimate: MagneticField2Form,
    pub psi_estimate: Option<ScalarField>,
    pub q_diff_estimate: ScalarField,
    /// `V(ξ) = ∫(A₁ − A₂)e^{ix·ξ}` projected orthogonally to `ξ`, per mode.
    pub transverse: Vec<([i64; 3], CVec3)>,
    pub q_coefficients: Vec<([i64; 3], C64)>,
    pub diagnostics: ReconDiagnostics,
}

/// The full chain: magnetic projections over the ball, `dA` difference, gauge
/// potential, electric potential difference.
pub fn reconstruct(p1: &Potentials, p2: &Potentials, dom: Option<&BoxDomain>, cfg: &ReconConfig) -> Result<ReconResult> {
    let grid = *p1.grid();
    grid.check_same(p2.grid())?;
    cfg.validate(&grid).map_err(|e| e.at_stage("config"))?;
    let hermitian = is_real_potential(p1) && is_real_potential(p2);
    let modes = if hermitian { half_ball_modes(cfg.xi_max) } else { ball_modes(cfg.xi_max) };

    let per_xi = modes
        .par_iter()
        .filter(|m| **m != [0, 0, 0])
        .map(|&m| {
            let frame = frame_for(mode_xi(&grid, m))?;
            let plus = phase_corrected_fourier_coefficient(p1, p2, frame, &cfg.hs, cfg)?;
            let minus = phase_corrected_fourier_coefficient(p1, p2, frame.flipped(), &cfg.hs, cfg)?;
            Ok(XiDiagnostics { m, plus, minus })
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.at_stage("magnetic coefficients"))?;

    let projections: Vec<([i64; 3], Vec<([f64; 3], C64)>)> = per_xi
        .iter()
        .map(|d| {
            let cp = d.plus.limit / LIMIT_FACTOR;
            let cm = d.minus.limit / LIMIT_FACTOR;
            (d.m, vec![(d.plus.frame.mu1, (cp + cm) / 2.0), (d.plus.frame.mu2, (cp - cm) / (2.0 * I))])
        })
        .collect();
    let conj_proj = |v: &Vec<([f64; 3], C64)>| v.iter().map(|(mu, c)| (*mu, c.conj())).collect();
    let coeffs: Vec<XiProjection> = mirrored(projections, conj_proj, hermitian)
        .into_iter()
        .map(|(m, projections)| XiProjection { m, projections })
        .collect();
    let assembled = assemble_magnetic_field_hat(grid, &coeffs, cfg.xi_max).map_err(|e| e.at_stage("assembly"))?;

    let adiff = p1.a.sub(&p2.a);
    let (psi, gauge_status, gauge_rejection, a2) = match gauge_potential_from_difference(&adiff, Some(&assembled.da), cfg.curl_tol) {
        Ok(psi) => {
            let grad = gradient(&psi);
            let a2 = p2.a.add(&grad).map(|c| c.mul(&p2.mask));
            (Some(psi), GaugeStatus::Gauged, None, a2)
        }
        Err(e) => (None, GaugeStatus::Substituted, Some(e.to_string()), p1.a.clone()),
    };
    let p2g = Potentials { a: a2, q: p2.q.clone(), mask: p2.mask.clone() };
    let a_mismatch = check_a_matched(p1, &p2g, cfg.mismatch_tol).map_err(|e| e.at_stage("gauge"))?;
    let electric = recover_electric_potential(p1, &p2g, cfg).map_err(|e| e.at_stage("electric"))?;

    let dataset_discrepancy = match dom {
        Some(d) => {
            let d1 = crate::forward::build_cauchy_dataset(p1, d, cfg.dataset_m).map_err(|e| e.at_stage("dataset"))?;
            let d2 = crate::forward::build_cauchy_dataset(p2, d, cfg.dataset_m).map_err(|e| e.at_stage("dataset"))?;
            Some(d1.max_discrepancy(&d2)?)
        }
        None => None,
    };

    let flagged = per_xi.iter().filter(|d| d.plus.flagged || d.minus.flagged).count()
        + electric.per_xi.iter().filter(|d| d.coefficient.flagged).count();
    let swap_violations = per_xi.iter().filter(|d| !d.plus.swap_within_bound() || !d.minus.swap_within_bound()).count();
    Ok(ReconResult {
        da_estimate: assembled.da,
        psi_estimate: psi,
        q_diff_estimate: electric.q_diff,
        transverse: assembled.transverse,
        q_coefficients: electric.coefficients,
        diagnostics: ReconDiagnostics {
            modes: modes.len(),
            hermitian,
            flagged,
            swap_violations,
            projection_residual: assembled.max_residual,
            gauge_status,
            gauge_rejection,
            a_mismatch,
            dataset_discrepancy,
            per_xi,
            electric: electric.per_xi,
        },
    })
}

impl ReconResult {
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        crate::io::write_scalar(&dir.join("da12"), &self.da_estimate.f12, "dA_12")?;
        crate::io::write_scalar(&dir.join("da13"), &self.da_estimate.f13, "dA_13")?;
        crate::io::write_scalar(&dir.join("da23"), &self.da_estimate.f23, "dA_23")?;
        if let Some(psi) = &self.psi_estimate {
            crate::io::write_scalar(&dir.join("psi"), psi, "psi")?;
        }
        crate::io::write_scalar(&dir.join("q_diff"), &self.q_diff_estimate, "q_diff")?;
        std::fs::write(dir.join("coefficients.csv"), self.coefficients_csv())?;
        Ok(())
    }

    /// One row per mode: `m1,m2,m3,v1_re,v1_im,v2_re,v2_im,v3_re,v3_im,q_re,q_im`.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("m1,m2,m3,v1_re,v1_im,v2_re,v2_im,v3_re,v3_im,q_re,q_im\n");
        for (m, q) in &self.q_coefficients {
            let v = self.transverse.iter().find(|(mm, _)| mm == m).map(|(_, v)| *v).unwrap_or([ZERO; 3]);
            out.push_str(&format!(
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                m[0], m[1], m[2], v[0].re, v[0].im, v[1].re, v[1].im, v[2].re, v[2].im, q.re, q.im
            ));
        }
        out
    }
}

/// `V(ξ) = ∫W e^{ix·ξ}` by direct quadrature.
pub fn fourier_coefficient(w: &ScalarField, xi: [f64; 3]) -> C64 {
    let g = *w.grid();
    let mut acc = ZERO;
    for (x, v) in w.values().iter().enumerate() {
        if *v != ZERO {
            let pt = g.point(x);
            acc += v * C64::from_polar(1.0, pt[0] * xi[0] + pt[1] * xi[1] + pt[2] * xi[2]);
        }
    }
    acc * g.cell_volume()
}

/// `ζ₀·V(ξ)` for the frame's `ζ₀ = μ₁ + iμ₂`.
pub fn projected_coefficient(w: &VectorField, frame: &Frame) -> C64 {
    let v = [0, 1, 2].map(|j| fourier_coefficient(&w.c[j], frame.xi));
    cdot(frame.zeta0(), v)
}

/// Relative L² distance between two 2-forms.
pub fn relative_l2(a: &MagneticField2Form, b: &MagneticField2Form) -> f64 {
    a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
}

/// `F` projected onto the modes of the frequency ball.
pub fn band_limit(f: &ScalarField, xi_max: f64) -> Result<ScalarField> {
    let grid = *f.grid();
    let spec = fourier_transform(f, Direction::Forward)?;
    let mut keep = vec![ZERO; grid.len()];
    for m in ball_modes(xi_max) {
        let i = spectrum_index(&grid, m)?;
        keep[i] = spec.values()[i];
    }
    fourier_transform(&ScalarField::from_values(grid, keep)?, Direction::Inverse)
}

pub fn band_limit_form(f: &MagneticField2Form, xi_max: f64) -> Result<MagneticField2Form> {
    Ok(MagneticField2Form {
        f12: band_limit(&f.f12, xi_max)?,
        f13: band_limit(&f.f13, xi_max)?,
        f23: band_limit(&f.f23, xi_max)?,
        gibbs_affected: f.gibbs_affected,
    })
}

/// Default forward-solver settings for the lattice cross-check.
pub fn lattice_krylov() -> KrylovConfig {
    KrylovConfig { rel_tol: SOLVER_TOL, ..KrylovConfig::default() }
}
