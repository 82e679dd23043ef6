use magcgo::dbar::*;
use magcgo::fields::{Grid3, ScalarField};
use magcgo::C64;
use std::f64::consts::PI;

fn gaussian(grid: Grid3, c: [f64; 3], w: f64, amp: C64) -> ScalarField {
    ScalarField::from_fn(grid, |x| {
        let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2);
        amp * (-r2 / (2.0 * w * w)).exp()
    })
}

/// Direct evaluation of the planar Cauchy integral in polar coordinates, where the
/// 1/(y1 + i y2) singularity is absorbed by the area element.
fn polar_oracle(x: [f64; 3], c: [f64; 3], w: f64, amp: C64, fr: &Frame) -> C64 {
    let f = |p: [f64; 3]| {
        let r2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
        amp * (-r2 / (2.0 * w * w)).exp()
    };
    let rmax = 20.0;
    let nr = 4000;
    let nt = 96;
    let hr = rmax / nr as f64;
    let mut acc = C64::new(0.0, 0.0);
    for ir in 0..=nr {
        let rho = ir as f64 * hr;
        let wr = if ir == 0 || ir == nr { 1.0 } else if ir % 2 == 1 { 4.0 } else { 2.0 } * hr / 3.0;
        let mut s = C64::new(0.0, 0.0);
        for it in 0..nt {
            let t = 2.0 * PI * it as f64 / nt as f64;
            let (st, ct) = t.sin_cos();
            let p = [
                x[0] - rho * (ct * fr.mu1[0] + st * fr.mu2[0]),
                x[1] - rho * (ct * fr.mu1[1] + st * fr.mu2[1]),
                x[2] - rho * (ct * fr.mu1[2] + st * fr.mu2[2]),
            ];
            s += f(p) * C64::from_polar(1.0, -t);
        }
        acc += s * (2.0 * PI / nt as f64) * wr;
    }
    acc / (2.0 * PI)
}

#[test]
fn matches_polar_quadrature() {
    let g = Grid3::new(32, 2.0 * PI).unwrap();
    let fr = make_frame([1.0, 0.4, -0.7]).unwrap();
    let c = [0.3, -0.2, 0.1];
    let w = 0.45;
    let amp = C64::new(1.0, 0.5);
    let f = gaussian(g, c, w, amp);
    let phi = cauchy_transform_inverse(&f, fr.zeta0()).unwrap();
    let mut worst: f64 = 0.0;
    for &p in &[g.idx(16, 16, 16), g.idx(3, 20, 9), g.idx(30, 1, 17), g.idx(12, 25, 28)] {
        let x = g.point(p);
        let o = polar_oracle(x, c, w, amp, &fr);
        worst = worst.max((phi.values()[p] - o).norm());
        eprintln!("{:?} {:?} {:?}", x, phi.values()[p], o);
    }
    assert!(worst < 1e-8, "worst {worst}");
}

#[test]
fn window_residual_small() {
    let g = Grid3::new(64, 2.0 * PI).unwrap();
    for xi in [[0.3, 1.0, 0.2], [0.0, 0.0, 1.0], [1.0, -1.0, 0.5]] {
        let fr = make_frame(xi).unwrap();
        for w in [0.16, 0.19] {
            let f = gaussian(g, [0.2, 0.1, -0.15], w, C64::new(1.0, 0.3));
            let phi = cauchy_transform_inverse(&f, fr.zeta0()).unwrap();
            let r = transport_residual(&phi, &f, fr.zeta0()).unwrap();
            assert!(r <= 1e-4, "residual {xi:?} {w}: {r:e}");
        }
    }
}
