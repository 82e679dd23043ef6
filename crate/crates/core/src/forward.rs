//! Dirichlet problems for `L_{A,q}` on an axis-aligned box and the weak Neumann
//! pairing.
//!
//! The box nodes are a strided subset of the torus grid. The bilinear form
//!
//! ```text
//! a(u, g) = Σ_e c_e (α_e u_y − β_e u_x)(β_e g_y − α_e g_x) + Σ_x m_x q_x u_x g_x
//! ```
//!
//! runs over box edges `e = (x → y)` with `α = e^{iθ/2}`, `β = e^{-iθ/2}` and `θ`
//! the exact line integral of the trigonometric interpolant of `A` along the edge.
//! The weights are trilinear elements with trapezoid quadrature. Gauge shifts by
//! grid functions change `θ` by exact node differences, so the discrete Cauchy
//! data are gauge invariant up to solver tolerance. The same form drives the
//! solver and the pairing.

use crate::error::{Error, Result};
use crate::fields::{dft, idft, Grid3, ScalarField, ZERO};
use crate::krylov::{self, KrylovConfig};
use crate::potentials::{gauge_shift, Potentials, MARGIN_FRACTION};
use crate::C64;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// The box `[-half·dx, half·dx]³` sampled every `stride` torus points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub grid_n: usize,
    pub half: usize,
    pub stride: usize,
}

impl BoxDomain {
    pub fn new(grid: &Grid3, half: usize, stride: usize) -> Result<Self> {
        if stride == 0 || half == 0 || half % stride != 0 {
            return Err(Error::invalid(format!("half ({half}) must be a positive multiple of stride ({stride})")));
        }
        if half / stride < 2 {
            return Err(Error::invalid("box needs at least one interior node per axis"));
        }
        if grid.n % 2 != 0 {
            return Err(Error::invalid("box domains need an even torus size"));
        }
        let reach = half as f64 * grid.spacing();
        if reach >= (0.5 - MARGIN_FRACTION) * grid.l {
            return Err(Error::invalid(format!(
                "box half-width {reach:.4} must lie strictly inside the mask margin {:.4}",
                (0.5 - MARGIN_FRACTION) * grid.l
            )));
        }
        Ok(BoxDomain { grid_n: grid.n, half, stride })
    }

    /// Nodes per axis.
    pub fn nodes(&self) -> usize {
        2 * self.half / self.stride + 1
    }

    pub fn len(&self) -> usize {
        self.nodes().pow(3)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, grid: &Grid3) -> f64 {
        self.stride as f64 * grid.spacing()
    }

    pub fn half_width(&self, grid: &Grid3) -> f64 {
        self.half as f64 * grid.spacing()
    }

    fn check(&self, grid: &Grid3) -> Result<()> {
        if grid.n != self.grid_n {
            return Err(Error::invalid(format!("box built for N = {}, grid has N = {}", self.grid_n, grid.n)));
        }
        Ok(())
    }

    /// Torus index of node coordinate `a` along one axis.
    pub fn torus_index(&self, a: usize) -> usize {
        self.grid_n / 2 - self.half + self.stride * a
    }

    pub fn node(&self, a: usize, b: usize, c: usize) -> usize {
        let n = self.nodes();
        a + n * (b + n * c)
    }

    pub fn unnode(&self, p: usize) -> (usize, usize, usize) {
        let n = self.nodes();
        (p % n, (p / n) % n, p / (n * n))
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        let n = self.nodes();
        let (a, b, c) = self.unnode(p);
        [a, b, c].iter().any(|&t| t == 0 || t == n - 1)
    }

    pub fn point(&self, grid: &Grid3, p: usize) -> [f64; 3] {
        let (a, b, c) = self.unnode(p);
        [a, b, c].map(|t| grid.coord(self.torus_index(t)))
    }

    pub fn torus_point(&self, p: usize) -> usize {
        let (a, b, c) = self.unnode(p);
        let n = self.grid_n;
        self.torus_index(a) + n * (self.torus_index(b) + n * self.torus_index(c))
    }

    /// Samples a torus field at the box nodes.
    pub fn restrict(&self, f: &ScalarField) -> Result<NodeField> {
        self.check(f.grid())?;
        Ok(NodeField { dom: *self, values: (0..self.len()).map(|p| f.values()[self.torus_point(p)]).collect() })
    }

    pub fn sample(&self, grid: &Grid3, f: impl Fn([f64; 3]) -> C64) -> NodeField {
        NodeField { dom: *self, values: (0..self.len()).map(|p| f(self.point(grid, p))).collect() }
    }

    /// Trace: boundary values kept, interior zeroed.
    pub fn trace(&self, u: &NodeField) -> NodeField {
        NodeField {
            dom: *self,
            values: u.values.iter().enumerate().map(|(p, v)| if self.is_boundary(p) { *v } else { ZERO }).collect(),
        }
    }
}

/// Values on the nodes of a [`BoxDomain`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub dom: BoxDomain,
    pub values: Vec<C64>,
}

impl NodeField {
    pub fn zeros(dom: BoxDomain) -> Self {
        NodeField { dom, values: vec![ZERO; dom.len()] }
    }

    pub fn conj(&self) -> Self {
        NodeField { dom: self.dom, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    pub fn add(&self, o: &NodeField) -> Self {
        NodeField { dom: self.dom, values: self.values.iter().zip(&o.values).map(|(a, b)| a + b).collect() }
    }

    pub fn scale(&self, c: C64) -> Self {
        NodeField { dom: self.dom, values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Edge phases, node potentials and quadrature weights of one (potentials, box) pair.
pub struct BoxOperator {
    pub dom: BoxDomain,
    delta: f64,
    /// `e^{iθ/2}` per node and axis, for the edge leaving the node in `+e_axis`.
    alpha: [Vec<C64>; 3],
    q: Vec<C64>,
}

/// `θ_j(x) = ∫_0^δ A_j(x + t e_j) dt` for the trigonometric interpolant of `A_j`.
fn edge_integrals(a: &ScalarField, axis: usize, delta: f64) -> ScalarField {
    let g = *a.grid();
    let n = g.n;
    let k = g.wavenumbers();
    let mut s = dft(a);
    for (p, v) in s.iter_mut().enumerate() {
        let (i, j, l) = g.unidx(p);
        let m = [i, j, l][axis];
        let kk = k[m];
        let factor = if m == n / 2 {
            // Nyquist modes carry no derivative, matching the gradient convention
            C64::new(0.0, 0.0)
        } else if kk == 0.0 {
            C64::new(delta, 0.0)
        } else {
            (C64::new(0.0, kk * delta).exp() - 1.0) / C64::new(0.0, kk)
        };
        *v *= factor;
    }
    idft(g, s)
}

impl BoxOperator {
    pub fn new(p: &Potentials, dom: &BoxDomain) -> Result<Self> {
        let grid = *p.grid();
        dom.check(&grid)?;
        let delta = dom.spacing(&grid);
        let has_a = p.a.sup_norm() > 0.0;
        let alpha = [0, 1, 2].map(|j| {
            if has_a {
                let th = edge_integrals(&p.a.c[j], j, delta);
                (0..dom.len()).map(|x| (C64::new(0.0, 0.5) * th.values()[dom.torus_point(x)]).exp()).collect()
            } else {
                vec![C64::new(1.0, 0.0); dom.len()]
            }
        });
        let q = (0..dom.len()).map(|x| p.q.values()[dom.torus_point(x)]).collect();
        Ok(BoxOperator { dom: *dom, delta, alpha, q })
    }

    pub fn spacing(&self) -> f64 {
        self.delta
    }

    fn axis_factor(&self, t: usize) -> f64 {
        let n = self.dom.nodes();
        if t == 0 || t == n - 1 {
            0.5
        } else {
            1.0
        }
    }

    fn node_mass(&self, p: usize) -> f64 {
        let (a, b, c) = self.dom.unnode(p);
        self.delta.powi(3) * self.axis_factor(a) * self.axis_factor(b) * self.axis_factor(c)
    }

    /// Weight `c_e` of the edge leaving node `p` along `axis`.
    fn edge_weight(&self, p: usize, axis: usize) -> f64 {
        let (a, b, c) = self.dom.unnode(p);
        let t = [a, b, c];
        let mut w = self.delta;
        for (j, &tj) in t.iter().enumerate() {
            if j != axis {
                w *= self.axis_factor(tj);
            }
        }
        w
    }

    fn step(&self, p: usize, axis: usize) -> Option<usize> {
        let n = self.dom.nodes();
        let (a, b, c) = self.dom.unnode(p);
        let mut t = [a, b, c];
        if t[axis] + 1 >= n {
            return None;
        }
        t[axis] += 1;
        Some(self.dom.node(t[0], t[1], t[2]))
    }

    /// `a(u, g)` over the whole box.
    pub fn pairing(&self, u: &[C64], g: &[C64]) -> C64 {
        let mut acc = ZERO;
        for x in 0..self.dom.len() {
            for axis in 0..3 {
                if let Some(y) = self.step(x, axis) {
                    let al = self.alpha[axis][x];
                    let be = 1.0 / al;
                    acc += self.edge_weight(x, axis) * (al * u[y] - be * u[x]) * (be * g[y] - al * g[x]);
                }
            }
            acc += self.node_mass(x) * self.q[x] * u[x] * g[x];
        }
        acc
    }

    /// `r_x = a(u, φ_x)` for every node (the full stiffness-with-potential action).
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let mut r = vec![ZERO; self.dom.len()];
        for x in 0..self.dom.len() {
            r[x] += self.node_mass(x) * self.q[x] * u[x];
            for axis in 0..3 {
                if let Some(y) = self.step(x, axis) {
                    let al = self.alpha[axis][x];
                    let w = self.edge_weight(x, axis);
                    let a2 = al * al;
                    r[x] += w * (u[x] - a2 * u[y]);
                    r[y] += w * (u[y] - u[x] / a2);
                }
            }
        }
        r
    }
}

/// Dirichlet Laplacian inverse on the interior nodes by sine transforms.
struct DstPreconditioner {
    m: usize,
    inv_eig: Vec<f64>,
}

impl DstPreconditioner {
    fn new(m: usize, delta: f64) -> Self {
        let lam: Vec<f64> = (1..=m).map(|k| 2.0 - 2.0 * (std::f64::consts::PI * k as f64 / (m + 1) as f64).cos()).collect();
        let mut inv_eig = vec![0.0; m * m * m];
        for c in 0..m {
            for b in 0..m {
                for a in 0..m {
                    inv_eig[a + m * (b + m * c)] = 1.0 / (delta * (lam[a] + lam[b] + lam[c]));
                }
            }
        }
        DstPreconditioner { m, inv_eig }
    }

    /// In-place DST-I along one axis; applying it twice multiplies by (m+1)/2.
    fn dst_axis(&self, v: &mut [C64], axis: usize) {
        let m = self.m;
        let len = 2 * (m + 1);
        let stride = [1, m, m * m][axis];
        let mut line = vec![ZERO; len];
        for outer in 0..m * m {
            let (o1, o2) = (outer % m, outer / m);
            let base = match axis {
                0 => m * (o1 + m * o2),
                1 => o1 + m * m * o2,
                _ => o1 + m * o2,
            };
            line.iter_mut().for_each(|z| *z = ZERO);
            for i in 0..m {
                let x = v[base + stride * i];
                line[i + 1] = x;
                line[len - 1 - i] = -x;
            }
            crate::fft::fft_lines(&mut line, len, false);
            for i in 0..m {
                // the odd extension turns the DFT into -2i times the sine sum
                v[base + stride * i] = line[i + 1] * C64::new(0.0, 0.5);
            }
        }
    }

    fn apply(&self, r: &[C64]) -> Vec<C64> {
        let mut v = r.to_vec();
        for axis in 0..3 {
            self.dst_axis(&mut v, axis);
        }
        for (x, e) in v.iter_mut().zip(&self.inv_eig) {
            *x *= e;
        }
        for axis in 0..3 {
            self.dst_axis(&mut v, axis);
        }
        let s = (2.0 / (self.m + 1) as f64).powi(3);
        v.iter_mut().for_each(|x| *x *= s);
        v
    }
}

pub const SOLVER_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Solves `a(u, φ_x) = 0` at interior nodes with `u = f` on the boundary.
pub fn solve_with(op: &BoxOperator, f: &NodeField, cfg: &KrylovConfig) -> Result<(NodeField, SolveReport)> {
    let dom = op.dom;
    if f.dom != dom {
        return Err(Error::invalid("boundary data belongs to a different box"));
    }
    let n = dom.nodes();
    let m = n - 2;
    let interior: Vec<usize> = (0..dom.len()).filter(|&p| !dom.is_boundary(p)).collect();
    // interior ordering a-fastest matches the preconditioner layout
    let ub = dom.trace(f);
    let rb = op.apply(&ub.values);
    let b: Vec<C64> = interior.iter().map(|&p| -rb[p]).collect();
    let embed = |xi: &[C64]| {
        let mut full = vec![ZERO; dom.len()];
        for (k, &p) in interior.iter().enumerate() {
            full[p] = xi[k];
        }
        full
    };
    let apply = |xi: &[C64]| {
        let r = op.apply(&embed(xi));
        interior.iter().map(|&p| r[p]).collect::<Vec<C64>>()
    };
    let pre = DstPreconditioner::new(m, op.spacing());
    let res = krylov::gmres(apply, |v| pre.apply(v), &b, cfg, "shift q away from a Dirichlet eigenvalue or refine the grid")?;
    let mut u = ub;
    for (k, &p) in interior.iter().enumerate() {
        u.values[p] = res.x[k];
    }
    Ok((u, SolveReport { iterations: res.iterations, residual: res.residual }))
}

pub fn solve_dirichlet(p: &Potentials, dom: &BoxDomain, f: &NodeField) -> Result<NodeField> {
    let op = BoxOperator::new(p, dom)?;
    let cfg = KrylovConfig { rel_tol: SOLVER_TOL, ..KrylovConfig::default() };
    Ok(solve_with(&op, f, &cfg)?.0)
}

/// `(N_{A,q} u, [g])` as the quadrature of the weak form over the box.
pub fn neumann_pairing(p: &Potentials, dom: &BoxDomain, u: &NodeField, g: &NodeField) -> Result<C64> {
    let op = BoxOperator::new(p, dom)?;
    Ok(op.pairing(&u.values, &g.values))
}

/// Boundary basis function descriptor: `face = None` is the constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisMode {
    pub face: Option<usize>,
    pub p: usize,
    pub r: usize,
}

/// The first `m` boundary modes: the constant, then `sin(pπs) sin(rπt)` on single
/// faces (zero on the face edges, so traces stay continuous), ordered by `p + r`,
/// then face index, then `p`.
pub fn boundary_basis(m: usize) -> Vec<BasisMode> {
    let mut out = vec![BasisMode { face: None, p: 0, r: 0 }];
    let mut level = 2;
    while out.len() < m {
        for face in 0..6 {
            for p in 1..level {
                out.push(BasisMode { face: Some(face), p, r: level - p });
            }
        }
        level += 1;
    }
    out.truncate(m);
    out
}

/// Faces are ordered `x=-, x=+, y=-, y=+, z=-, z=+`.
pub fn basis_trace(dom: &BoxDomain, mode: BasisMode) -> NodeField {
    let n = dom.nodes();
    let mut f = NodeField::zeros(*dom);
    for x in 0..dom.len() {
        if !dom.is_boundary(x) {
            continue;
        }
        let (a, b, c) = dom.unnode(x);
        let t = [a, b, c];
        f.values[x] = match mode.face {
            None => C64::new(1.0, 0.0),
            Some(face) => {
                let axis = face / 2;
                let side = if face % 2 == 0 { 0 } else { n - 1 };
                if t[axis] != side {
                    ZERO
                } else {
                    let others: Vec<usize> = (0..3).filter(|&j| j != axis).collect();
                    let s = t[others[0]] as f64 / (n - 1) as f64;
                    let r = t[others[1]] as f64 / (n - 1) as f64;
                    let pi = std::f64::consts::PI;
                    C64::new((mode.p as f64 * pi * s).sin() * (mode.r as f64 * pi * r).sin(), 0.0)
                }
            }
        };
    }
    f
}

/// Finite-rank Cauchy data: `Q[m][m'] = (N u_m, [g_{m'}])` with `u_m` the solution
/// with trace `g_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyDataset {
    pub dom: BoxDomain,
    pub l: f64,
    pub basis: Vec<BasisMode>,
    #[serde(skip)]
    pub q: Vec<Vec<C64>>,
    pub max_solver_residual: f64,
}

impl CauchyDataset {
    pub fn m(&self) -> usize {
        self.basis.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().flatten().fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn max_discrepancy(&self, o: &CauchyDataset) -> Result<f64> {
        if self.basis != o.basis || self.dom != o.dom {
            return Err(Error::invalid("datasets use different boxes or bases"));
        }
        Ok(self.q.iter().flatten().zip(o.q.iter().flatten()).fold(0.0, |m, (a, b)| m.max((a - b).norm())))
    }

    /// Largest `|Q[m][m'] - conj(Q[m'][m])|` relative to `max|Q|`.
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.m();
        let mut d: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                d = d.max((self.q[i][j] - self.q[j][i].conj()).norm());
            }
        }
        d / self.max_abs().max(1e-300)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(16 * self.m() * self.m());
        for v in self.q.iter().flatten() {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        let manifest = DatasetManifest { dataset: self.clone(), checksum: crate::io::checksum(&bytes) };
        std::fs::write(dir.join("q.bin"), &bytes)?;
        std::fs::write(
            dir.join("dataset.json"),
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?,
        )?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<CauchyDataset> {
        let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join("dataset.json"))?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let bytes = std::fs::read(dir.join("q.bin"))?;
        if crate::io::checksum(&bytes) != manifest.checksum {
            return Err(Error::Checksum { path: dir.join("q.bin").display().to_string() });
        }
        let mut ds = manifest.dataset;
        let m = ds.m();
        if bytes.len() != 16 * m * m {
            return Err(Error::Format(format!("q.bin holds {} bytes, expected {}", bytes.len(), 16 * m * m)));
        }
        let f = |i: usize| f64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
        ds.q = (0..m).map(|i| (0..m).map(|j| C64::new(f(2 * (i * m + j)), f(2 * (i * m + j) + 1))).collect()).collect();
        Ok(ds)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    dataset: CauchyDataset,
    checksum: String,
}

/// Solutions `u_m` for the first `m` basis traces, in basis order.
pub fn basis_solutions(op: &BoxOperator, m: usize) -> Result<(Vec<BasisMode>, Vec<NodeField>, f64)> {
    if m == 0 {
        return Err(Error::invalid("the dataset needs at least one basis function"));
    }
    let basis = boundary_basis(m);
    let cfg = KrylovConfig { rel_tol: SOLVER_TOL, ..KrylovConfig::default() };
    let mut sols = Vec::with_capacity(m);
    let mut worst: f64 = 0.0;
    for (k, mode) in basis.iter().enumerate() {
        let f = basis_trace(&op.dom, *mode);
        let (u, rep) = solve_with(op, &f, &cfg)
            .map_err(|e| if e.is_convergence() { e } else { Error::invalid(format!("basis column {k}: {e}")) })?;
        worst = worst.max(rep.residual);
        sols.push(u);
    }
    Ok((basis, sols, worst))
}

pub fn build_cauchy_dataset(p: &Potentials, dom: &BoxDomain, m: usize) -> Result<CauchyDataset> {
    let op = BoxOperator::new(p, dom)?;
    let (basis, sols, worst) = basis_solutions(&op, m)?;
    let traces: Vec<NodeField> = basis.iter().map(|b| basis_trace(dom, *b)).collect();
    let q = sols.iter().map(|u| traces.iter().map(|g| op.pairing(&u.values, &g.values)).collect()).collect();
    Ok(CauchyDataset { dom: *dom, l: p.grid().l, basis, q, max_solver_residual: worst })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaugeReport {
    pub m: usize,
    pub solver_tol: f64,
    /// `max |Q_{A,q} - Q_{A+∇ψ,q}|` on the inner box.
    pub inner: f64,
    pub inner_scale: f64,
    /// Same on the outer box of a nested pair.
    pub outer: Option<f64>,
    pub outer_scale: Option<f64>,
}

impl GaugeReport {
    pub fn inner_relative(&self) -> f64 {
        self.inner / self.inner_scale.max(1e-300)
    }

    pub fn outer_relative(&self) -> Option<f64> {
        self.outer.zip(self.outer_scale).map(|(d, s)| d / s.max(1e-300))
    }
}

/// Compares the Cauchy datasets of `(A, q)` and `(A + ∇ψ, q)` on `dom` and, when
/// given, on an enclosing box.
pub fn verify_gauge_equivalence(
    p: &Potentials,
    psi: &ScalarField,
    dom: &BoxDomain,
    outer: Option<&BoxDomain>,
    m: usize,
) -> Result<GaugeReport> {
    let shifted = gauge_shift(p, psi)?;
    let compare = |d: &BoxDomain| -> Result<(f64, f64)> {
        let q1 = build_cauchy_dataset(p, d, m)?;
        let q2 = build_cauchy_dataset(&shifted, d, m)?;
        Ok((q1.max_discrepancy(&q2)?, q1.max_abs()))
    };
    let (inner, inner_scale) = compare(dom)?;
    let (outer, outer_scale) = match outer {
        Some(o) => {
            if o.half <= dom.half {
                return Err(Error::invalid("outer box must strictly contain the inner box"));
            }
            let (d, s) = compare(o)?;
            (Some(d), Some(s))
        }
        None => (None, None),
    };
    Ok(GaugeReport { m, solver_tol: SOLVER_TOL, inner, inner_scale, outer, outer_scale })
}
