//! Magnetic and electric potentials: test corpus, mollification, the magnetic
//! two-form `dA`, gauge shifts and the operator `L_{A,q}` itself.

use crate::error::{Error, Result};
use crate::fields::{dft, divergence, gradient, idft, laplacian, Grid3, ScalarField, VectorField, I, ZERO};
use crate::io;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

/// Minimum distance between the support mask and the box boundary, as a fraction of L.
pub const MARGIN_FRACTION: f64 = 0.125;

#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub a: VectorField,
    pub q: ScalarField,
    pub mask: ScalarField,
}

impl Potentials {
    /// Builds potentials, extending by zero outside the mask and checking the margin.
    pub fn new(a: VectorField, q: ScalarField, mask: ScalarField) -> Result<Self> {
        let g = *mask.grid();
        g.check_same(a.grid())?;
        g.check_same(q.grid())?;
        for (p, m) in mask.values().iter().enumerate() {
            if !((m.re == 0.0 || m.re == 1.0) && m.im == 0.0) {
                return Err(Error::invalid(format!("mask value {m} at {p} is not 0 or 1")));
            }
            if m.re == 1.0 && !inside_margin(&g, g.point(p)) {
                return Err(Error::invalid("mask reaches into the boundary margin (L/8)"));
            }
        }
        let cut = |f: &ScalarField| f.mul(&mask);
        let a = a.map(cut);
        let q = cut(&q);
        a.c.iter().try_for_each(|c| c.check_finite("magnetic potential"))?;
        q.check_finite("electric potential")?;
        Ok(Potentials { a, q, mask })
    }

    pub fn zero(mask: ScalarField) -> Self {
        let g = *mask.grid();
        Potentials { a: VectorField::zeros(g), q: ScalarField::zeros(g), mask }
    }

    pub fn grid(&self) -> &Grid3 {
        self.mask.grid()
    }

    /// `(Ā, q̄)`, the potentials of the formal adjoint.
    pub fn conj(&self) -> Self {
        Potentials { a: self.a.conj(), q: self.q.conj(), mask: self.mask.clone() }
    }

    pub fn is_zero(&self) -> bool {
        self.a.sup_norm() == 0.0 && self.q.sup_norm() == 0.0
    }

    pub fn write_dir(&self, dir: &Path, label: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (j, c) in self.a.c.iter().enumerate() {
            io::write_scalar(&dir.join(format!("A{}", j + 1)), c, &format!("A{}", j + 1))?;
        }
        io::write_scalar(&dir.join("q"), &self.q, "q")?;
        io::write_scalar(&dir.join("mask"), &self.mask, "mask")?;
        let g = self.grid();
        let manifest = serde_json::json!({
            "schema": 1,
            "label": label,
            "n": g.n,
            "l": g.l,
            "files": ["A1", "A2", "A3", "q", "mask"],
        });
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let mf = dir.join("manifest.json");
        if !mf.exists() {
            return Err(Error::Format(format!("missing {}", mf.display())));
        }
        let rd = |name: &str| io::read_scalar(&dir.join(name)).map(|(f, _)| f);
        let a = VectorField::new([rd("A1")?, rd("A2")?, rd("A3")?])?;
        Potentials::new(a, rd("q")?, rd("mask")?)
    }
}

fn inside_margin(g: &Grid3, x: [f64; 3]) -> bool {
    let lim = 0.5 * g.l - MARGIN_FRACTION * g.l + 1e-12 * g.l;
    x.iter().all(|c| c.abs() <= lim)
}

/// Indicator of the closed box `|x_i| ≤ half_width`.
pub fn box_mask(grid: Grid3, half_width: f64) -> ScalarField {
    let tol = 1e-9 * grid.spacing();
    ScalarField::from_real_fn(grid, |x| {
        if x.iter().all(|c| c.abs() <= half_width + tol) {
            1.0
        } else {
            0.0
        }
    })
}

/// Default Ω: the largest box respecting the L/8 margin.
pub fn default_mask(grid: Grid3) -> ScalarField {
    box_mask(grid, (0.5 - MARGIN_FRACTION) * grid.l)
}

// C∞ transition from 0 (t ≤ 0) to 1 (t ≥ 1) and its derivative.
fn smooth_step(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    let da = a / (t * t);
    let db = -b / ((1.0 - t) * (1.0 - t));
    let s = a / (a + b);
    let ds = (da * (a + b) - a * (da + db)) / ((a + b) * (a + b));
    (s, ds)
}

/// Smooth taper equal to 1 on `|x_i| ≤ inner` and 0 on `|x_i| ≥ outer`, with gradient.
#[derive(Debug, Clone, Copy)]
pub struct Taper {
    pub inner: f64,
    pub outer: f64,
}

impl Taper {
    pub fn eval(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let w = self.outer - self.inner;
        let mut v = [0.0; 3];
        let mut d = [0.0; 3];
        for i in 0..3 {
            let t = (self.outer - x[i].abs()) / w;
            let (s, ds) = smooth_step(t);
            v[i] = s;
            d[i] = -ds / w * x[i].signum();
        }
        let val = v[0] * v[1] * v[2];
        (val, [d[0] * v[1] * v[2], v[0] * d[1] * v[2], v[0] * v[1] * d[2]])
    }

    pub fn field(&self, grid: Grid3) -> ScalarField {
        ScalarField::from_real_fn(grid, |x| self.eval(x).0)
    }

}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    Smooth,
    Indicator,
    Gradient,
    PlaneWave,
}

impl std::str::FromStr for PotentialKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smooth" => Ok(PotentialKind::Smooth),
            "indicator" => Ok(PotentialKind::Indicator),
            "gradient" => Ok(PotentialKind::Gradient),
            "plane_wave" => Ok(PotentialKind::PlaneWave),
            "zero" => Err(Error::invalid("use Potentials::zero for vanishing potentials")),
            other => Err(Error::invalid(format!("unsupported potential kind '{other}'"))),
        }
    }
}

/// Parameters of the test corpus. Lengths are absolute (same units as L).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPotentialParams {
    pub center: [f64; 3],
    /// Gaussian width (smooth, gradient) or ball radius (indicator).
    pub width: f64,
    pub amplitude: [f64; 3],
    pub q_amplitude: f64,
    pub q_center: [f64; 3],
    pub q_width: f64,
    /// Integer lattice wavevector for `plane_wave`, in units of 2π/L.
    pub wavevector: [i64; 3],
}

impl TestPotentialParams {
    pub fn default_for(kind: PotentialKind, grid: Grid3) -> Self {
        let l = grid.l;
        let base = TestPotentialParams {
            center: [0.0; 3],
            width: 0.048 * l,
            amplitude: [1.0, 0.5, -0.3],
            q_amplitude: 1.0,
            q_center: [0.01 * l, -0.015 * l, 0.005 * l],
            q_width: 0.048 * l,
            wavevector: [1, 0, 0],
        };
        match kind {
            PotentialKind::Smooth => base,
            PotentialKind::Indicator => TestPotentialParams {
                width: 0.2 * l,
                amplitude: [1.0, 0.0, 0.0],
                q_amplitude: 0.0,
                ..base
            },
            PotentialKind::Gradient => TestPotentialParams { amplitude: [1.0, 0.0, 0.0], q_amplitude: 0.0, ..base },
            PotentialKind::PlaneWave => TestPotentialParams { q_amplitude: 0.0, ..base },
        }
    }
}

fn gaussian(x: [f64; 3], c: [f64; 3], w: f64) -> f64 {
    let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
    (-r2 / (2.0 * w * w)).exp()
}

/// Gaussian profile `G_w(x - c)` and its exact gradient.
pub fn gaussian_profile(grid: Grid3, c: [f64; 3], w: f64) -> (ScalarField, VectorField) {
    let f = ScalarField::from_real_fn(grid, |x| gaussian(x, c, w));
    let d = |i: usize| ScalarField::from_real_fn(grid, move |x| -gaussian(x, c, w) * (x[i] - c[i]) / (w * w));
    (f, VectorField { c: [d(0), d(1), d(2)] })
}

pub fn make_test_potential(grid: Grid3, kind: PotentialKind, params: &TestPotentialParams) -> Result<Potentials> {
    if !(params.width > 0.0 && params.q_width > 0.0) {
        return Err(Error::invalid("test potential widths must be positive"));
    }
    let mask = default_mask(grid);
    let amp = params.amplitude;
    let (a, q) = match kind {
        PotentialKind::Smooth => {
            let (prof, _) = gaussian_profile(grid, params.center, params.width);
            let a = VectorField { c: [0, 1, 2].map(|j| prof.scale(C64::new(amp[j], 0.0))) };
            let (qp, _) = gaussian_profile(grid, params.q_center, params.q_width);
            (a, qp.scale(C64::new(params.q_amplitude, 0.0)))
        }
        PotentialKind::Indicator => {
            let r = params.width;
            if r + params.center.iter().fold(0.0, |m: f64, c| m.max(c.abs())) > (0.5 - MARGIN_FRACTION) * grid.l {
                return Err(Error::invalid("indicator ball leaves the mask"));
            }
            let ball = ScalarField::from_real_fn(grid, |x| {
                let r2: f64 = (0..3).map(|i| (x[i] - params.center[i]).powi(2)).sum();
                if r2 < r * r {
                    1.0
                } else {
                    0.0
                }
            });
            let a = VectorField { c: [0, 1, 2].map(|j| ball.scale(C64::new(amp[j], 0.0))) };
            (a, ball.scale(C64::new(params.q_amplitude, 0.0)))
        }
        PotentialKind::Gradient => {
            let (psi, _) = gaussian_profile(grid, params.center, params.width);
            let psi = psi.scale(C64::new(amp[0], 0.0));
            (gradient(&psi), ScalarField::zeros(grid))
        }
        PotentialKind::PlaneWave => {
            let kv = params.wavevector.map(|m| 2.0 * PI * m as f64 / grid.l);
            let prof = ScalarField::from_real_fn(grid, |x| {
                (kv[0] * x[0] + kv[1] * x[1] + kv[2] * x[2]).cos() * gaussian(x, params.center, params.width)
            });
            let a = VectorField { c: [0, 1, 2].map(|j| prof.scale(C64::new(amp[j], 0.0))) };
            (a, ScalarField::zeros(grid))
        }
    };
    Potentials::new(a, q, mask)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    pub tau: f64,
}

/// Discrete kernel `c (1 - |x/τ|²)⁴` on `|x| ≤ τ`, wrapped around the origin, unit mass.
pub fn mollifier_kernel(grid: Grid3, spec: MollifierSpec) -> Result<ScalarField> {
    let dx = grid.spacing();
    if !(spec.tau >= 2.0 * dx - 1e-12 * dx) {
        return Err(Error::invalid(format!(
            "mollifier width {:.4} is below twice the grid spacing {:.4}",
            spec.tau, dx
        )));
    }
    if spec.tau >= 0.5 * grid.l {
        return Err(Error::invalid("mollifier width must be below L/2"));
    }
    let n = grid.n;
    let wrap = |j: usize| -> f64 {
        let s = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        s * dx
    };
    let mut k = ScalarField::from_fn(grid, |_| ZERO);
    let mut mass = 0.0;
    for p in 0..grid.len() {
        let (i, j, l) = grid.unidx(p);
        let r2 = (wrap(i).powi(2) + wrap(j).powi(2) + wrap(l).powi(2)) / (spec.tau * spec.tau);
        if r2 < 1.0 {
            let v = (1.0 - r2).powi(4);
            k.values_mut()[p] = C64::new(v, 0.0);
            mass += v;
        }
    }
    let norm = 1.0 / (mass * grid.cell_volume());
    Ok(k.scale(C64::new(norm, 0.0)))
}

/// Periodic convolution `f * Ψ_τ` by FFT.
pub fn mollify_scalar(f: &ScalarField, spec: MollifierSpec) -> Result<ScalarField> {
    let g = *f.grid();
    let kh = dft(&mollifier_kernel(g, spec)?);
    let mut fh = dft(f);
    let dv = g.cell_volume();
    for (a, b) in fh.iter_mut().zip(&kh) {
        *a *= b * dv;
    }
    Ok(idft(g, fh))
}

/// `A♯ = A * Ψ_τ`.
pub fn mollify(p: &Potentials, spec: MollifierSpec) -> Result<VectorField> {
    let c = [
        mollify_scalar(&p.a.c[0], spec)?,
        mollify_scalar(&p.a.c[1], spec)?,
        mollify_scalar(&p.a.c[2], spec)?,
    ];
    Ok(VectorField { c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagneticField2Form {
    pub f12: ScalarField,
    pub f13: ScalarField,
    pub f23: ScalarField,
    /// Set when the input carried unresolved (discontinuous) content.
    pub gibbs_affected: bool,
}

impl MagneticField2Form {
    /// `F_jk` for any ordered pair (0-based), using antisymmetry.
    pub fn component(&self, j: usize, k: usize) -> ScalarField {
        let g = *self.f12.grid();
        match (j, k) {
            (0, 1) => self.f12.clone(),
            (0, 2) => self.f13.clone(),
            (1, 2) => self.f23.clone(),
            (1, 0) => self.f12.scale(C64::new(-1.0, 0.0)),
            (2, 0) => self.f13.scale(C64::new(-1.0, 0.0)),
            (2, 1) => self.f23.scale(C64::new(-1.0, 0.0)),
            _ => ScalarField::zeros(g),
        }
    }

    pub fn sub(&self, o: &MagneticField2Form) -> Self {
        MagneticField2Form {
            f12: self.f12.sub(&o.f12),
            f13: self.f13.sub(&o.f13),
            f23: self.f23.sub(&o.f23),
            gibbs_affected: self.gibbs_affected || o.gibbs_affected,
        }
    }

    pub fn l2_norm(&self) -> f64 {
        (self.f12.l2_norm().powi(2) + self.f13.l2_norm().powi(2) + self.f23.l2_norm().powi(2)).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.f12.sup_norm().max(self.f13.sup_norm()).max(self.f23.sup_norm())
    }
}

/// Fraction of spectral energy in the top third of the band.
pub fn high_frequency_fraction(f: &ScalarField) -> f64 {
    let g = *f.grid();
    let s = dft(f);
    let kmax = PI / g.spacing();
    let k = g.wavenumbers();
    let (mut hi, mut tot) = (0.0, 0.0);
    for (p, v) in s.iter().enumerate() {
        let (a, b, c) = g.unidx(p);
        let kk = k[a].abs().max(k[b].abs()).max(k[c].abs());
        let e = v.norm_sqr();
        tot += e;
        if kk > 2.0 * kmax / 3.0 {
            hi += e;
        }
    }
    if tot == 0.0 {
        0.0
    } else {
        hi / tot
    }
}

pub fn magnetic_field(a: &VectorField) -> MagneticField2Form {
    let d = [gradient(&a.c[0]), gradient(&a.c[1]), gradient(&a.c[2])];
    // d[k].c[j] = ∂_j A_k
    let f = |j: usize, k: usize| d[k].c[j].sub(&d[j].c[k]);
    let gibbs = a.c.iter().any(|c| high_frequency_fraction(c) > 1e-8);
    MagneticField2Form { f12: f(0, 1), f13: f(0, 2), f23: f(1, 2), gibbs_affected: gibbs }
}

/// `(A + ∇ψ, q)` for a real gauge function supported inside the mask.
pub fn gauge_shift(p: &Potentials, psi: &ScalarField) -> Result<Potentials> {
    let g = *p.grid();
    g.check_same(psi.grid())?;
    let scale = psi.sup_norm().max(1e-300);
    if !psi.is_real(1e-14 * scale) {
        return Err(Error::invalid("gauge function must be real"));
    }
    for (pt, v) in psi.values().iter().enumerate() {
        if v.norm() > 1e-12 * scale && p.mask.values()[pt].re == 0.0 {
            return Err(Error::invalid("gauge function is supported outside the potential mask"));
        }
    }
    let dpsi = gradient(psi);
    Potentials::new(p.a.add(&dpsi), p.q.clone(), p.mask.clone())
}

/// `L_{A,q} u = -Δu + A·Du + D·(A u) + (A² + q) u` with `D = -i∇`, spectrally.
pub fn apply_operator(p: &Potentials, u: &ScalarField) -> ScalarField {
    let lap = laplacian(u);
    let du = gradient(u);
    let au = p.a.map(|c| c.mul(u));
    let div_au = divergence(&au);
    let a2q = p.a.square().add(&p.q);
    let g = *u.grid();
    let vals = (0..g.len())
        .map(|x| {
            let adu = p.a.c[0].values()[x] * du.c[0].values()[x]
                + p.a.c[1].values()[x] * du.c[1].values()[x]
                + p.a.c[2].values()[x] * du.c[2].values()[x];
            -lap.values()[x] - I * adu - I * div_au.values()[x] + a2q.values()[x] * u.values()[x]
        })
        .collect();
    ScalarField::from_raw(g, vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid3 {
        Grid3::new(32, 2.0 * PI).unwrap()
    }

    #[test]
    fn extension_by_zero_holds() {
        let g = grid();
        for kind in [PotentialKind::Smooth, PotentialKind::Indicator, PotentialKind::Gradient, PotentialKind::PlaneWave] {
            let p = make_test_potential(g, kind, &TestPotentialParams::default_for(kind, g)).unwrap();
            for x in 0..g.len() {
                if p.mask.values()[x].re == 0.0 {
                    assert_eq!(p.q.values()[x], ZERO);
                    for c in &p.a.c {
                        assert_eq!(c.values()[x], ZERO);
                    }
                }
            }
        }
    }

    #[test]
    fn indicator_is_discontinuous_with_unit_sup() {
        let g = grid();
        let pr = TestPotentialParams::default_for(PotentialKind::Indicator, g);
        let p = make_test_potential(g, PotentialKind::Indicator, &pr).unwrap();
        assert_eq!(p.a.sup_norm(), 1.0);
        assert!(magnetic_field(&p.a).gibbs_affected);
    }

    #[test]
    fn mask_in_margin_rejected() {
        let g = grid();
        let mask = box_mask(g, 0.45 * g.l);
        assert!(Potentials::new(VectorField::zeros(g), ScalarField::zeros(g), mask).is_err());
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!("spiky".parse::<PotentialKind>().is_err());
    }

    #[test]
    fn kernel_has_unit_mass() {
        let g = grid();
        let k = mollifier_kernel(g, MollifierSpec { tau: 0.5 }).unwrap();
        assert!((k.integral().re - 1.0).abs() < 1e-12);
        assert!(mollifier_kernel(g, MollifierSpec { tau: 1.5 * g.spacing() }).is_err());
    }

    #[test]
    fn mollify_zero_is_zero() {
        let g = grid();
        let p = Potentials::zero(default_mask(g));
        let s = mollify(&p, MollifierSpec { tau: 0.5 }).unwrap();
        assert_eq!(s.sup_norm(), 0.0);
    }

    #[test]
    fn gauge_shift_by_zero_is_identity() {
        let g = grid();
        let p = make_test_potential(g, PotentialKind::Smooth, &TestPotentialParams::default_for(PotentialKind::Smooth, g))
            .unwrap();
        let s = gauge_shift(&p, &ScalarField::zeros(g)).unwrap();
        assert_eq!(s, p);
    }

    #[test]
    fn complex_gauge_rejected() {
        let g = grid();
        let p = Potentials::zero(default_mask(g));
        let (b, _) = gaussian_profile(g, [0.0; 3], 0.5);
        assert!(gauge_shift(&p, &b.scale(I)).is_err());
    }
}
