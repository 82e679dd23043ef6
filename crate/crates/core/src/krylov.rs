//! Krylov solvers on plain complex vectors.
//!
//! * restarted GMRES with right preconditioning for the forward Dirichlet systems;
//! * CGLS for least-squares problems, which started from zero converges to the
//!   minimum-norm solution.

use crate::error::{Error, Result};
use num_complex::Complex64 as C64;

#[derive(Debug, Clone, Copy)]
pub struct KrylovConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub restart: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        KrylovConfig { max_iter: 500, rel_tol: 1e-9, restart: 40 }
    }
}

#[derive(Debug, Clone)]
pub struct KrylovResult {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

#[inline]
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

#[inline]
pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [C64], a: C64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Solves `A x = b` with right preconditioner `M⁻¹` (x = M⁻¹ y).
pub fn gmres(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    precond: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    cfg: &KrylovConfig,
    advice: &'static str,
) -> Result<KrylovResult> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    if bnorm == 0.0 {
        return Ok(KrylovResult { x, iterations: 0, residual: 0.0, history: vec![0.0] });
    }
    let m = cfg.restart.max(1);
    let mut history = Vec::new();
    let mut iters = 0;
    loop {
        let ax = apply(&x);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = norm(&r);
        let rel = beta / bnorm;
        history.push(rel);
        if rel <= cfg.rel_tol {
            return Ok(KrylovResult { x, iterations: iters, residual: rel, history });
        }
        if iters >= cfg.max_iter {
            return Err(Error::NoConvergence {
                solver: "gmres",
                iterations: iters,
                residual: rel,
                history,
                advice,
            });
        }
        let mut v: Vec<Vec<C64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut hmat = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![C64::new(0.0, 0.0); m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut gvec = vec![C64::new(0.0, 0.0); m + 1];
        gvec[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for j in 0..m {
            let z = precond(&v[j]);
            let mut w = apply(&z);
            for i in 0..=j {
                let hij = dot(&v[i], &w);
                hmat[i][j] = hij;
                axpy(&mut w, -hij, &v[i]);
            }
            let hn = norm(&w);
            hmat[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * hmat[i][j] + sn[i].conj() * hmat[i + 1][j];
                hmat[i + 1][j] = -sn[i] * hmat[i][j] + cs[i] * hmat[i + 1][j];
                hmat[i][j] = t;
            }
            let a = hmat[j][j];
            let bb = hmat[j + 1][j];
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[j] = C64::new(1.0, 0.0);
                sn[j] = C64::new(0.0, 0.0);
            } else {
                cs[j] = a / den;
                sn[j] = bb / den;
            }
            hmat[j][j] = cs[j].conj() * a + sn[j].conj() * bb;
            hmat[j + 1][j] = C64::new(0.0, 0.0);
            gvec[j + 1] = -sn[j] * gvec[j];
            gvec[j] = cs[j].conj() * gvec[j];
            iters += 1;
            k_used = j + 1;
            let est = gvec[j + 1].norm() / bnorm;
            history.push(est);
            if est <= cfg.rel_tol || iters >= cfg.max_iter || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // back substitution
        let mut y = vec![C64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = gvec[i];
            for l in i + 1..k_used {
                s -= hmat[i][l] * y[l];
            }
            y[i] = s / hmat[i][i];
        }
        let mut upd = vec![C64::new(0.0, 0.0); n];
        for (i, yi) in y.iter().enumerate() {
            axpy(&mut upd, *yi, &v[i]);
        }
        let dz = precond(&upd);
        axpy(&mut x, C64::new(1.0, 0.0), &dz);
        // drop the estimate pushed in the inner loop, the true residual follows
        history.pop();
    }
}

/// CGLS for `min ‖B s - b‖`. `apply` is B, `adjoint` is B^H.
/// Returns `s` and the relative residual history `‖B^H(b - Bs)‖ / ‖B^H b‖`
/// is used as stopping measure, together with `‖b - Bs‖ / ‖b‖`.
pub struct CglsOutcome {
    pub s: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

pub fn cgls(
    apply: impl Fn(&[C64]) -> Vec<C64>,
    adjoint: impl Fn(&[C64]) -> Vec<C64>,
    b: &[C64],
    n_unknowns: usize,
    max_iter: usize,
    rel_tol: f64,
) -> Result<CglsOutcome> {
    let bnorm = norm(b);
    let mut s = vec![C64::new(0.0, 0.0); n_unknowns];
    if bnorm == 0.0 {
        return Ok(CglsOutcome { s, iterations: 0, residual: 0.0, history: vec![0.0] });
    }
    let mut r = b.to_vec();
    let mut z = adjoint(&r);
    let mut p = z.clone();
    let mut gamma = dot(&z, &z).re;
    let mut history = vec![1.0];
    for it in 1..=max_iter {
        let q = apply(&p);
        let qq = dot(&q, &q).re;
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        axpy(&mut s, C64::new(alpha, 0.0), &p);
        axpy(&mut r, C64::new(-alpha, 0.0), &q);
        let rel = norm(&r) / bnorm;
        history.push(rel);
        if rel <= rel_tol {
            return Ok(CglsOutcome { s, iterations: it, residual: rel, history });
        }
        z = adjoint(&r);
        let gnew = dot(&z, &z).re;
        let beta = gnew / gamma;
        gamma = gnew;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let rel = *history.last().unwrap();
    Err(Error::NoConvergence {
        solver: "cgls",
        iterations: max_iter,
        residual: rel,
        history,
        advice: "decrease h or increase the iteration budget",
    })
}
