//! Numerical probes of the Carleman estimates for the conjugated Laplacian and
//! the conjugated magnetic Schrödinger operator with linear weights `φ = α·x`.
//!
//! A probe evaluates `‖P u‖ / ‖u‖` over a seeded family of truncated Gaussian
//! wave packets. Small minimum ratios certify a failure of the estimate; ratios
//! bounded below by `c·h` are only consistent with it.

use crate::cgo::{mask_extent, ConjugatedOperator};
use crate::dbar::{complexify, dot3, loglog_fit, norm3};
use crate::error::{Error, Result};
use crate::fields::{dft, semiclassical_norm_of_dft, Grid3, ScalarField, SobolevSpec, I, ZERO};
use crate::potentials::Potentials;
use crate::rng;
use crate::C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const CANONICAL_HS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
pub const CANONICAL_EPSILON: f64 = 0.1;
pub const EPSILON_SWEEP: [f64; 3] = [0.2, 0.1, 0.05];
/// h values for the perturbation-bound fit.
pub const PERTURBATION_HS: [f64; 3] = [0.2, 0.1, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarlemanWeight {
    pub alpha: [f64; 3],
    pub epsilon: f64,
    pub h: f64,
}

impl CarlemanWeight {
    pub fn new(alpha: [f64; 3], epsilon: f64, h: f64) -> Result<Self> {
        if (norm3(alpha) - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("weight direction must be a unit vector, |alpha| = {}", norm3(alpha))));
        }
        Self::checked(alpha, epsilon, h)
    }

    /// `α = 0`: not a Carleman weight. Used as a negative control.
    pub fn degenerate(epsilon: f64, h: f64) -> Result<Self> {
        Self::checked([0.0; 3], epsilon, h)
    }

    fn checked(alpha: [f64; 3], epsilon: f64, h: f64) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("h must be positive, got {h}")));
        }
        Ok(CarlemanWeight { alpha, epsilon, h })
    }

    pub fn with_h(&self, h: f64) -> Result<Self> {
        Self::checked(self.alpha, self.epsilon, h)
    }

    /// Whether `h < ε`, the regime where the convexified estimate is stated.
    pub fn in_regime(&self) -> bool {
        self.h < self.epsilon
    }

    pub fn phi(&self, x: [f64; 3]) -> f64 {
        dot3(self.alpha, x)
    }
}

/// `φ_ε(x) = α·x + (h/2ε)(α·x)²`.
pub fn convexified_weight(w: &CarlemanWeight, x: [f64; 3]) -> f64 {
    let p = w.phi(x);
    p + w.h / (2.0 * w.epsilon) * p * p
}

pub fn convexified_gradient(w: &CarlemanWeight, x: [f64; 3]) -> [f64; 3] {
    let s = 1.0 + w.h / w.epsilon * w.phi(x);
    w.alpha.map(|a| a * s)
}

pub fn convexified_laplacian(w: &CarlemanWeight) -> f64 {
    w.h / w.epsilon * dot3(w.alpha, w.alpha)
}

/// `p_φ(ξ) = ξ² + 2i∇φ·ξ − |∇φ|²` for the linear weight.
pub fn weight_symbol(alpha: [f64; 3], xi: [f64; 3]) -> C64 {
    C64::new(dot3(xi, xi) - dot3(alpha, alpha), 2.0 * dot3(alpha, xi))
}

/// `e^{φ/h}(−h²Δ)e^{−φ/h}` on the torus, for either the plain or the
/// convexified weight, applied in expanded form
/// `−h²Δu + 2h∇φ·∇u + (hΔφ − |∇φ|²)u`.
pub struct ConjugatedLaplacian {
    grid: Grid3,
    h: f64,
    alpha: [f64; 3],
    k2: Vec<f64>,
    alpha_k: Vec<f64>,
    /// `∇φ = α·stretch(x)`.
    stretch: Vec<f64>,
    c0: Vec<f64>,
    weight: Vec<f64>,
}

impl ConjugatedLaplacian {
    pub fn new(grid: Grid3, w: &CarlemanWeight, convexified: bool) -> Self {
        let n = grid.n;
        let k = grid.wavenumbers();
        let kd = grid.deriv_wavenumbers();
        let mut k2 = vec![0.0; grid.len()];
        let mut alpha_k = vec![0.0; grid.len()];
        for (q, (s, t)) in k2.iter_mut().zip(alpha_k.iter_mut()).enumerate() {
            let (a, b, c) = (q % n, (q / n) % n, q / (n * n));
            *s = k[a] * k[a] + k[b] * k[b] + k[c] * k[c];
            *t = w.alpha[0] * kd[a] + w.alpha[1] * kd[b] + w.alpha[2] * kd[c];
        }
        let a2 = dot3(w.alpha, w.alpha);
        let lap = if convexified { convexified_laplacian(w) } else { 0.0 };
        let mut stretch = vec![1.0; grid.len()];
        let mut c0 = vec![0.0; grid.len()];
        let mut weight = vec![0.0; grid.len()];
        for p in 0..grid.len() {
            let x = grid.point(p);
            let s = if convexified { 1.0 + w.h / w.epsilon * w.phi(x) } else { 1.0 };
            stretch[p] = s;
            c0[p] = w.h * lap - s * s * a2;
            weight[p] = if convexified { convexified_weight(w, x) } else { w.phi(x) };
        }
        ConjugatedLaplacian { grid, h: w.h, alpha: w.alpha, k2, alpha_k, stretch, c0, weight }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    fn apply_spectrum(&self, u: &[C64], uh: &[C64]) -> Vec<C64> {
        let n = self.grid.n;
        let h = self.h;
        let mut lap: Vec<C64> = uh.iter().zip(&self.k2).map(|(v, k2)| v * (h * h * k2)).collect();
        crate::fft::inverse(&mut lap, n);
        let mut out = lap;
        if self.alpha != [0.0; 3] {
            let mut du: Vec<C64> = uh.iter().zip(&self.alpha_k).map(|(v, ak)| v * I * *ak).collect();
            crate::fft::inverse(&mut du, n);
            for p in 0..out.len() {
                out[p] += 2.0 * h * self.stretch[p] * du[p];
            }
        }
        for p in 0..out.len() {
            out[p] += self.c0[p] * u[p];
        }
        out
    }

    pub fn apply(&self, u: &ScalarField) -> ScalarField {
        let uh = dft(u);
        ScalarField::from_raw(self.grid, self.apply_spectrum(u.values(), &uh))
    }

    /// `e^{φ/h}·(−h²Δ)(e^{−φ/h}u)` with a spectral Laplacian. The weight is
    /// taken relative to its value at `reference` to keep the exponentials finite;
    /// `u` must be small wherever the shifted weight is large.
    pub fn apply_by_conjugation(&self, u: &ScalarField, reference: usize) -> ScalarField {
        let n = self.grid.n;
        let h = self.h;
        let w0 = self.weight[reference];
        let mut v: Vec<C64> = u.values().iter().zip(&self.weight).map(|(x, w)| x * (-(w - w0) / h).exp()).collect();
        crate::fft::forward(&mut v, n);
        for (x, k2) in v.iter_mut().zip(&self.k2) {
            *x *= h * h * k2;
        }
        crate::fft::inverse(&mut v, n);
        let out = v.iter().zip(&self.weight).map(|(x, w)| x * ((w - w0) / h).exp()).collect();
        ScalarField::from_raw(self.grid, out)
    }

    /// `‖P u‖_{H^s_scl} / ‖u‖_{H^{s+2}_scl}`.
    pub fn ratio(&self, u: &ScalarField, s: f64) -> f64 {
        let g = self.grid;
        let k = g.wavenumbers();
        let uh = dft(u);
        let mut pu = self.apply_spectrum(u.values(), &uh);
        crate::fft::forward(&mut pu, g.n);
        let num = semiclassical_norm_of_dft(&g, &k, &pu, SobolevSpec { s, h: self.h });
        let den = semiclassical_norm_of_dft(&g, &k, &uh, SobolevSpec { s: s + 2.0, h: self.h });
        num / den
    }
}

/// Seeded probe parameters. Frequencies are stored in semiclassical units, so the
/// same family is reused across an h-sweep with `e^{ix·η/h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub center: [f64; 3],
    pub width: f64,
    pub eta: [f64; 3],
    pub characteristic: bool,
}

/// The probe family: half the packets sit on the characteristic set of the
/// weight symbol (`|η| = |α|`, `η ⊥ α`), the rest have `|η| ∈ [0, 2]` in a
/// random direction.
pub fn probe_family(mask: &ScalarField, alpha: [f64; 3], count: usize, seed: u64) -> Vec<Probe> {
    let l = mask.grid().l;
    let m = mask_extent(mask);
    let mut rng = rng::substream(seed, "carleman-probes");
    let a_norm = norm3(alpha);
    (0..count)
        .map(|i| {
            let center = [0; 3].map(|_| rng.gen_range(-m..=m));
            let width = rng.gen_range(0.05 * l..=0.2 * l);
            let dir = random_unit(&mut rng);
            let characteristic = i % 2 == 0;
            let eta = if characteristic {
                if a_norm == 0.0 {
                    [0.0; 3]
                } else {
                    let al = alpha.map(|a| a / a_norm);
                    let d = dot3(dir, al);
                    let perp = [0, 1, 2].map(|j| dir[j] - d * al[j]);
                    let pn = norm3(perp).max(1e-12);
                    perp.map(|v| v / pn * a_norm)
                }
            } else {
                let r = rng.gen_range(0.0..=2.0);
                dir.map(|v| v * r)
            };
            Probe { center, width, eta, characteristic }
        })
        .collect()
}

fn random_unit(rng: &mut rng::Stream) -> [f64; 3] {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let t: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).sqrt();
    [r * t.cos(), r * t.sin(), z]
}

/// `mask · e^{−|x−c|²/2w²} · e^{ix·η/h}`.
pub fn probe_field(mask: &ScalarField, probe: &Probe, h: f64) -> ScalarField {
    let g = *mask.grid();
    let vals = (0..g.len())
        .map(|p| {
            let m = mask.values()[p].re;
            if m == 0.0 {
                return ZERO;
            }
            let x = g.point(p);
            let r2: f64 = (0..3).map(|j| (x[j] - probe.center[j]).powi(2)).sum();
            let arg = dot3(x, probe.eta) / h;
            C64::from_polar((-r2 / (2.0 * probe.width * probe.width)).exp(), arg) * m
        })
        .collect();
    ScalarField::from_raw(g, vals)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub h: f64,
    pub epsilon: f64,
    /// Sobolev index of the norm on `P u`.
    pub s: f64,
    pub ratios: Vec<f64>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub in_regime: bool,
}

impl ProbeReport {
    fn from_ratios(w: &CarlemanWeight, s: f64, ratios: Vec<f64>) -> Result<Self> {
        if ratios.len() < 30 {
            return Err(Error::invalid(format!("a probe needs at least 30 samples, got {}", ratios.len())));
        }
        if ratios.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("probe produced a non-finite ratio"));
        }
        let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
        Ok(ProbeReport { h: w.h, epsilon: w.epsilon, s, ratios, min_ratio, max_ratio, in_regime: w.in_regime() })
    }

    pub fn samples(&self) -> usize {
        self.ratios.len()
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 30 {
        return Err(Error::invalid(format!("a probe needs at least 30 samples, got {samples}")));
    }
    Ok(())
}

/// Ratio statistics `‖e^{φ_ε/h}(−h²Δ)e^{−φ_ε/h}u‖_{H^s_scl} / ‖u‖_{H^{s+2}_scl}`.
pub fn probe_laplacian_estimate(
    mask: &ScalarField,
    w: &CarlemanWeight,
    s: f64,
    samples: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if s != -1.0 && s != 0.0 {
        return Err(Error::invalid(format!("Sobolev index must be -1 or 0, got {s}")));
    }
    check_samples(samples)?;
    let op = ConjugatedLaplacian::new(*mask.grid(), w, true);
    let family = probe_family(mask, w.alpha, samples, seed);
    let ratios = family.par_iter().map(|pr| op.ratio(&probe_field(mask, pr, w.h), s)).collect();
    ProbeReport::from_ratios(w, s, ratios)
}

fn conjugated_magnetic(p: &Potentials, w: &CarlemanWeight) -> ConjugatedOperator {
    // e^{φ/h} h²L e^{−φ/h} is the CGO conjugation with the real frequency ζ = −α.
    ConjugatedOperator::new(p, complexify(w.alpha.map(|a| -a), [0.0; 3]), w.h)
}

fn h_minus_one_ratio(pu: &ScalarField, u: &ScalarField, h: f64) -> f64 {
    let g = *u.grid();
    let k = g.wavenumbers();
    let num = semiclassical_norm_of_dft(&g, &k, &dft(pu), SobolevSpec { s: -1.0, h });
    let den = semiclassical_norm_of_dft(&g, &k, &dft(u), SobolevSpec { s: 1.0, h });
    num / den
}

/// Ratio statistics `‖e^{φ/h}(h²L_{A,q})e^{−φ/h}u‖_{H⁻¹_scl} / ‖u‖_{H¹_scl}` with the
/// plain linear weight and probes inside the potential mask.
pub fn probe_magnetic_estimate(p: &Potentials, w: &CarlemanWeight, samples: usize, seed: u64) -> Result<ProbeReport> {
    check_samples(samples)?;
    let op = conjugated_magnetic(p, w);
    let family = probe_family(&p.mask, w.alpha, samples, seed);
    let ratios = family
        .par_iter()
        .map(|pr| {
            let u = probe_field(&p.mask, pr, w.h);
            h_minus_one_ratio(&op.apply(&u), &u, w.h)
        })
        .collect();
    ProbeReport::from_ratios(w, -1.0, ratios)
}

/// Ratio statistics of the first-order magnetic terms
/// `h²(A·D + D·A) + 2ih(α·A)` of the conjugated operator, in `H⁻¹_scl / H¹_scl`.
/// They are the odd part in `A`, so they are read off as `(P_A − P_{−A})/2`.
pub fn probe_magnetic_perturbation(p: &Potentials, w: &CarlemanWeight, samples: usize, seed: u64) -> Result<ProbeReport> {
    check_samples(samples)?;
    let q = ScalarField::zeros(*p.grid());
    let plus = Potentials { a: p.a.clone(), q: q.clone(), mask: p.mask.clone() };
    let minus = Potentials { a: p.a.map(|c| c.scale(C64::new(-1.0, 0.0))), q, mask: p.mask.clone() };
    let full = conjugated_magnetic(&plus, w);
    let free = conjugated_magnetic(&minus, w);
    let family = probe_family(&p.mask, w.alpha, samples, seed);
    let ratios = family
        .par_iter()
        .map(|pr| {
            let u = probe_field(&p.mask, pr, w.h);
            h_minus_one_ratio(&full.apply(&u).sub(&free.apply(&u)).scale(C64::new(0.5, 0.0)), &u, w.h)
        })
        .collect();
    ProbeReport::from_ratios(w, -1.0, ratios)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub statistic: Statistic,
    pub reports: Vec<ProbeReport>,
    /// Log-log slope of the chosen statistic against h.
    pub slope: f64,
    pub constant: f64,
}

impl SweepReport {
    pub fn fit(reports: Vec<ProbeReport>, statistic: Statistic) -> Result<Self> {
        if reports.len() < 2 {
            return Err(Error::invalid("a sweep needs at least two values of h"));
        }
        let hs: Vec<f64> = reports.iter().map(|r| r.h).collect();
        let ys: Vec<f64> = reports.iter().map(|r| pick(r, statistic)).collect();
        if ys.iter().any(|y| !(*y > 0.0)) {
            return Err(Error::invalid("cannot fit a sweep with a zero ratio"));
        }
        let (slope, constant) = loglog_fit(&hs, &ys);
        Ok(SweepReport { statistic, reports, slope, constant })
    }

    pub fn values(&self) -> Vec<f64> {
        self.reports.iter().map(|r| pick(r, self.statistic)).collect()
    }

    /// Columns `h, epsilon, s, min_ratio, slope, constant`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,epsilon,s,min_ratio,slope,constant\n");
        for r in &self.reports {
            out.push_str(&format!(
                "{:e},{:e},{},{:e},{:e},{:e}\n",
                r.h, r.epsilon, r.s, r.min_ratio, self.slope, self.constant
            ));
        }
        out
    }
}

fn pick(r: &ProbeReport, s: Statistic) -> f64 {
    match s {
        Statistic::Min => r.min_ratio,
        Statistic::Max => r.max_ratio,
    }
}

/// Runs `probe` at each h of `hs` and fits the chosen statistic.
pub fn sweep_h(
    w: &CarlemanWeight,
    hs: &[f64],
    statistic: Statistic,
    probe: impl Fn(&CarlemanWeight) -> Result<ProbeReport>,
) -> Result<SweepReport> {
    let reports = hs.iter().map(|&h| probe(&w.with_h(h)?)).collect::<Result<Vec<_>>>()?;
    SweepReport::fit(reports, statistic)
}
