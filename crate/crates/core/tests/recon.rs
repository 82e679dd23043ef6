use magcgo::cgo::{build_cgo, CgoOptions, Side};
use magcgo::dbar::{make_frame, Frame};
use magcgo::fields::{fourier_transform, gradient, Direction, Grid3, ScalarField, VectorField};
use magcgo::forward::BoxDomain;
use magcgo::potentials::{
    gaussian_profile, gauge_shift, magnetic_field, make_test_potential, mollify, MollifierSpec, PotentialKind,
    Potentials, Taper, TestPotentialParams,
};
use magcgo::recon::*;
use magcgo::C64;
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;

fn grid(n: usize) -> Grid3 {
    Grid3::new(n, 2.0 * PI).unwrap()
}

fn smooth(g: Grid3) -> Potentials {
    let mut prm = TestPotentialParams::default_for(PotentialKind::Smooth, g);
    prm.width = 0.6;
    prm.q_width = 0.6;
    make_test_potential(g, PotentialKind::Smooth, &prm).unwrap()
}

fn interior_gauge(g: Grid3) -> ScalarField {
    let (p, _) = gaussian_profile(g, [0.2, -0.1, 0.0], 0.35);
    p.mul(&Taper { inner: 1.6, outer: 2.3 }.field(g)).scale(C64::new(0.5, 0.0))
}

fn random_frames(count: usize, seed: u64) -> Vec<Frame> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let xi: [f64; 3] = [0; 3].map(|_| rng.gen_range(-3.0..3.0));
            let f = make_frame(xi).unwrap();
            let t: f64 = rng.gen_range(0.0..2.0 * PI);
            let (c, s) = (t.cos(), t.sin());
            Frame {
                xi,
                mu1: [0, 1, 2].map(|j| c * f.mu1[j] + s * f.mu2[j]),
                mu2: [0, 1, 2].map(|j| -s * f.mu1[j] + c * f.mu2[j]),
            }
        })
        .collect()
}

fn fast(xi_max: f64) -> ReconConfig {
    ReconConfig { hs: vec![0.01, 0.005], tau: Some(0.0), solve_remainder: false, xi_max, ..ReconConfig::default() }
}

#[test]
fn identity_vanishes_for_equal_potentials() {
    let g = grid(16);
    let p = smooth(g);
    let u1 = ScalarField::from_fn(g, |x| C64::new(x[0].sin(), x[1].cos()));
    let u2 = ScalarField::from_fn(g, |x| C64::from_polar(1.0, x[2]));
    assert_eq!(eval_integral_identity(&p, &p, &u1, &u2).unwrap(), C64::new(0.0, 0.0));
    let fr = make_frame([1.0, 0.0, 0.0]).unwrap();
    let opts = CgoOptions { tau: Some(0.0), neglect_remainder: true, ..CgoOptions::default() };
    let s1 = build_cgo(&p, fr, 0.2, Side::One, &opts).unwrap();
    let s2 = build_cgo(&p.conj(), fr, 0.2, Side::Two, &opts).unwrap();
    assert_eq!(identity_from_cgo(&p, &p, &s1, &s2).unwrap(), C64::new(0.0, 0.0));
    assert!(identity_from_cgo(&p, &p, &s2, &s1).is_err());
}

fn scaled(v: &VectorField, c: f64) -> VectorField {
    v.map(|f| f.scale(C64::new(c, 0.0)))
}

#[test]
fn reduced_identity_matches_the_assembled_solutions() {
    let g = grid(32);
    let p1 = smooth(g);
    let p2 = Potentials { a: scaled(&p1.a, 0.4), q: p1.q.scale(C64::new(-0.5, 0.0)), mask: p1.mask.clone() };
    let fr = make_frame([1.0, 0.5, 0.0]).unwrap();
    let opts = CgoOptions { tau: Some(0.0), neglect_remainder: true, ..CgoOptions::default() };
    let s1 = build_cgo(&p1, fr, 0.5, Side::One, &opts).unwrap();
    let s2 = build_cgo(&p2.conj(), fr, 0.5, Side::Two, &opts).unwrap();
    let reduced = identity_from_cgo(&p1, &p2, &s1, &s2).unwrap();
    let (u1, g1) = (s1.assembled(), s1.assembled_gradient());
    let (v2, g2) = (s2.assembled().conj(), s2.assembled_gradient().conj());
    let w = p1.a.sub(&p2.a);
    let m = p1.a.square().sub(&p2.a.square()).add(&p1.q.sub(&p2.q));
    let mut full = C64::new(0.0, 0.0);
    for x in 0..g.len() {
        if p1.mask.values()[x].re == 0.0 {
            continue;
        }
        let (a, b) = (u1.values()[x], v2.values()[x]);
        full += m.values()[x] * a * b;
        for j in 0..3 {
            full += C64::new(0.0, 1.0) * w.c[j].values()[x] * (a * g2.c[j].values()[x] - b * g1.c[j].values()[x]);
        }
    }
    full *= g.cell_volume();
    assert!((reduced - full).norm() < 1e-10 * full.norm(), "{reduced} vs {full}");
}

#[test]
fn volume_and_boundary_routes_agree() {
    let g = grid(32);
    let p1 = smooth(g);
    let mut prm = TestPotentialParams::default_for(PotentialKind::Smooth, g);
    prm.width = 0.5;
    prm.center = [0.3, 0.0, -0.2];
    prm.amplitude = [-0.4, 0.8, 0.2];
    prm.q_amplitude = 0.5;
    let p2 = make_test_potential(g, PotentialKind::Smooth, &prm).unwrap();
    let dom = BoxDomain::new(&g, 8, 1).unwrap();
    let r = cross_check_identity(&p1, &p2, &dom, 9, 17).unwrap();
    assert!(r.relative < 1e-6, "{r:?}");
    assert!(r.volume.norm() > 1e-3);
}

#[test]
fn coefficient_vanishes_for_equal_magnetic_parts() {
    let g = grid(32);
    let p = smooth(g);
    let cfg = ReconConfig { hs: vec![0.2, 0.1], tau: Some(0.0), ..ReconConfig::default() };
    let fr = make_frame([1.0, 1.0, 0.0]).unwrap();
    let c = phase_corrected_fourier_coefficient(&p, &p, fr, &cfg.hs, &cfg).unwrap();
    assert!(c.limit.norm() < 1e-12, "{}", c.limit);
    assert!(c.swap_error.is_none());
}

#[test]
fn coefficient_matches_the_fft_oracle_with_first_order_rate() {
    let g = grid(32);
    let p1 = smooth(g);
    let p2 = Potentials::zero(p1.mask.clone());
    let cfg = ReconConfig { hs: vec![0.2, 0.1, 0.05], tau: Some(0.0), solve_remainder: true, ..ReconConfig::default() };
    // near the ball edge h²|ξ|² is not yet small on this sweep, so the observed
    // rate is only checked at low frequency
    for (m, check_rate) in [([1i64, 0, 0], true), ([2, 1, 0], true), ([3, -2, 1], false), ([0, 0, 4], false)] {
        let fr = make_frame(m.map(|v| v as f64)).unwrap();
        let c = phase_corrected_fourier_coefficient(&p1, &p2, fr, &cfg.hs, &cfg).unwrap();
        let oracle = projected_coefficient(&p1.a, &fr) * LIMIT_FACTOR;
        let rel = (c.limit - oracle).norm() / oracle.norm();
        assert!(rel <= 0.05, "{m:?}: {rel}");
        let rate = c.rate.unwrap();
        assert!(!check_rate || (rate - 1.0).abs() <= 0.15, "{m:?}: rate {rate}");
        assert!(c.swap_within_bound());
        assert!(c.values.windows(2).all(|w| w[1].r_norm_h1[0] < w[0].r_norm_h1[0]));
    }
}

#[test]
fn rejects_sweeps_violating_the_frequency_bound() {
    let g = grid(16);
    let p = smooth(g);
    let cfg = ReconConfig::default();
    let fr = make_frame([2.0, 0.0, 0.0]).unwrap();
    assert!(phase_corrected_fourier_coefficient(&p, &p, fr, &[1.0], &cfg).is_err());
    let bad = ReconConfig { hs: vec![0.05, 0.1], ..ReconConfig::default() };
    assert!(bad.validate(&g).is_err());
    let bad = ReconConfig { sigma: 0.5, ..ReconConfig::default() };
    assert!(bad.validate(&g).is_err());
}

#[test]
fn eskin_ralston_cancellation() {
    let g = grid(32);
    let fr = make_frame([1.0, 0.0, 0.0]).unwrap();
    let (l, r) = eskin_ralston_check(&VectorField::zeros(g), fr).unwrap();
    assert_eq!((l, r), (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));

    let w = smooth(g).a;
    for f in random_frames(5, 21) {
        let (l, r) = eskin_ralston_check(&w, f).unwrap();
        assert!((l - r).norm() <= 1e-3 * r.norm(), "{f:?}: {l} vs {r}");
    }
}

#[test]
fn eskin_ralston_for_a_mollified_indicator() {
    let g = grid(48);
    let ind = make_test_potential(g, PotentialKind::Indicator, &TestPotentialParams::default_for(PotentialKind::Indicator, g)).unwrap();
    let w = mollify(&ind, MollifierSpec { tau: 0.05 * g.l }).unwrap();
    for f in random_frames(5, 22) {
        let (l, r) = eskin_ralston_check(&w, f).unwrap();
        assert!((l - r).norm() <= 1e-2 * r.norm(), "{f:?}: {l} vs {r}");
    }
}

#[test]
fn eskin_ralston_error_shrinks_with_the_grid_spacing() {
    let fr = random_frames(1, 23)[0];
    let errs: Vec<f64> = [16, 24, 32]
        .iter()
        .map(|&n| {
            let g = grid(n);
            let mut prm = TestPotentialParams::default_for(PotentialKind::Smooth, g);
            prm.width = 0.5;
            let w = make_test_potential(g, PotentialKind::Smooth, &prm).unwrap().a;
            let (l, r) = eskin_ralston_check(&w, fr).unwrap();
            (l - r).norm() / r.norm()
        })
        .collect();
    assert!(errs.windows(2).all(|e| e[1] < e[0]), "{errs:?}");
}

fn exact_projections(g: Grid3, a: &VectorField, xi_max: f64) -> Vec<XiProjection> {
    ball_modes(xi_max)
        .into_iter()
        .filter(|m| *m != [0, 0, 0])
        .map(|m| {
            let fr = make_frame(m.map(|v| v as f64 * 2.0 * PI / g.l)).unwrap();
            let v = [0, 1, 2].map(|j| fourier_coefficient(&a.c[j], fr.xi));
            let p = |mu: [f64; 3]| (mu, v[0] * mu[0] + v[1] * mu[1] + v[2] * mu[2]);
            XiProjection { m, projections: vec![p(fr.mu1), p(fr.mu2)] }
        })
        .collect()
}

#[test]
fn assembly_of_a_gradient_is_zero() {
    let g = grid(32);
    let a = gradient(&interior_gauge(g));
    let out = assemble_magnetic_field_hat(g, &exact_projections(g, &a, 4.0), 4.0).unwrap();
    assert!(out.da.sup_norm() <= 1e-6 * a.sup_norm(), "{}", out.da.sup_norm());
    assert!(!out.flagged);
}

#[test]
fn assembly_of_a_single_plane_wave() {
    let g = grid(16);
    let m = [1i64, 2, 0];
    let k = m.map(|v| v as f64);
    let amp = [C64::new(0.3, 0.1), C64::new(-0.2, 0.0), C64::new(0.0, 0.7)];
    let a = VectorField::new([0, 1, 2].map(|j| ScalarField::from_fn(g, |x| amp[j] * C64::from_polar(1.0, -(k[0] * x[0] + k[1] * x[1] + k[2] * x[2]))))).unwrap();
    let fr = make_frame(k).unwrap();
    let v = [0, 1, 2].map(|j| fourier_coefficient(&a.c[j], fr.xi));
    let p = |mu: [f64; 3]| (mu, v[0] * mu[0] + v[1] * mu[1] + v[2] * mu[2]);
    let out = assemble_magnetic_field_hat(g, &[XiProjection { m, projections: vec![p(fr.mu1), p(fr.mu2)] }], 4.0).unwrap();
    let spec = fourier_transform(&out.da.f12, Direction::Forward).unwrap().into_values();
    let idx = g.idx(g.n - 1, g.n - 2, 0);
    // i(k_1 Â_2 − k_2 Â_1) at k = −ξ
    let expect = C64::new(0.0, 1.0) * (-k[0] * v[1] + k[1] * v[0]);
    assert!((spec[idx] - expect).norm() < 1e-10 * expect.norm(), "{} vs {expect}", spec[idx]);
    let nonzero = spec.iter().filter(|c| c.norm() > 1e-9 * expect.norm()).count();
    assert_eq!(nonzero, 1);
}

#[test]
fn assembly_matches_the_spectral_curl_in_ball() {
    let g = grid(16);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let raw = [0, 1, 2].map(|_| {
        let v = (0..g.len()).map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
        ScalarField::from_values(g, v).unwrap()
    });
    let a = VectorField::new(raw.map(|c| band_limit(&c, 3.0).unwrap())).unwrap();
    let out = assemble_magnetic_field_hat(g, &exact_projections(g, &a, 3.0), 3.0).unwrap();
    let oracle = band_limit_form(&magnetic_field(&a), 3.0).unwrap();
    let rel = relative_l2(&out.da, &oracle);
    assert!(rel <= 1e-8, "{rel}");
}

#[test]
fn inconsistent_projections_are_flagged() {
    let g = grid(16);
    let m = [1i64, 0, 0];
    let fr = make_frame([1.0, 0.0, 0.0]).unwrap();
    let d = [0, 1, 2].map(|j| (fr.mu1[j] + fr.mu2[j]) / 2f64.sqrt());
    let proj = XiProjection {
        m,
        projections: vec![(fr.mu1, C64::new(1.0, 0.0)), (fr.mu2, C64::new(1.0, 0.0)), (d, C64::new(-3.0, 0.0))],
    };
    let out = assemble_magnetic_field_hat(g, &[proj], 4.0).unwrap();
    assert!(out.flagged && out.max_residual > 0.1);
    let skew = XiProjection { m, projections: vec![([1.0, 0.0, 0.0], C64::new(1.0, 0.0)), (fr.mu2, C64::new(1.0, 0.0))] };
    assert!(assemble_magnetic_field_hat(g, &[skew], 4.0).is_err());
}

#[test]
fn gauge_potential_round_trip() {
    let g = grid(32);
    let zero = gauge_potential_from_difference(&VectorField::zeros(g), None, 1e-5).unwrap();
    assert_eq!(zero.sup_norm(), 0.0);
    let b = interior_gauge(g);
    let psi = gauge_potential_from_difference(&gradient(&b), None, 1e-5).unwrap();
    let mean = b.integral() / g.volume();
    let err = psi.sub(&b.map(|v| v - mean)).sup_norm();
    assert!(err <= 1e-6, "{err}");
    let back = gradient(&psi).sub(&gradient(&b)).l2_norm() / gradient(&b).l2_norm();
    assert!(back <= 1e-6, "{back}");
}

#[test]
fn rotational_difference_is_rejected() {
    let g = grid(32);
    let (bump, _) = gaussian_profile(g, [0.0; 3], 0.6);
    let x = ScalarField::from_real_fn(g, |p| p[0]);
    let y = ScalarField::from_real_fn(g, |p| p[1]);
    let rot = VectorField::new([bump.mul(&y).scale(C64::new(-1.0, 0.0)), bump.mul(&x), ScalarField::zeros(g)]).unwrap();
    let err = gauge_potential_from_difference(&rot, None, 1e-5).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("not a gradient"), "{msg}");
}

#[test]
fn electric_potential_control_and_mismatch() {
    let g = grid(32);
    let p = smooth(g);
    let cfg = fast(2.0);
    let same = recover_electric_potential(&p, &p, &cfg).unwrap();
    assert!(same.q_diff.l2_norm() <= 1e-4 * p.q.l2_norm());
    let other = Potentials { a: scaled(&p.a, 0.5), q: p.q.clone(), mask: p.mask.clone() };
    let err = recover_electric_potential(&p, &other, &cfg).unwrap_err();
    assert!(err.to_string().contains("gauge step incomplete"));
}

#[test]
fn electric_coefficients_with_remainders_match_the_oracle() {
    let g = grid(32);
    let p1 = smooth(g);
    let p2 = Potentials { a: p1.a.clone(), q: p1.q.scale(C64::new(0.3, 0.0)), mask: p1.mask.clone() };
    let cfg = ReconConfig { hs: vec![0.2, 0.1], tau: Some(0.0), solve_remainder: true, xi_max: 1.0, ..ReconConfig::default() };
    let r = recover_electric_potential(&p1, &p2, &cfg).unwrap();
    let dq = p1.q.sub(&p2.q);
    for (m, v) in &r.coefficients {
        let oracle = fourier_coefficient(&dq, m.map(|c| c as f64 * 2.0 * PI / g.l));
        assert!((v - oracle).norm() <= 0.05 * oracle.norm(), "{m:?}: {v} vs {oracle}");
    }
    assert_eq!(r.coefficients.len(), 7);
}

#[test]
fn reconstruct_equal_potentials_is_at_the_noise_floor() {
    let g = grid(32);
    let p = smooth(g);
    let r = reconstruct(&p, &p, None, &fast(2.0)).unwrap();
    let scale = magnetic_field(&p.a).l2_norm();
    assert!(r.da_estimate.l2_norm() <= 1e-6 * scale);
    assert!(r.q_diff_estimate.l2_norm() <= 1e-6 * p.q.l2_norm());
    assert_eq!(r.diagnostics.gauge_status, GaugeStatus::Gauged);
    assert!(r.psi_estimate.unwrap().sup_norm() <= 1e-12);
}

#[test]
fn reconstruct_gauge_pair_small_ball() {
    let g = grid(32);
    let p1 = smooth(g);
    let psi = interior_gauge(g);
    let p2 = gauge_shift(&p1, &psi).unwrap();
    let r = reconstruct(&p1, &p2, None, &fast(2.0)).unwrap();
    let scale = band_limit_form(&magnetic_field(&p1.a), 2.0).unwrap().l2_norm();
    assert!(r.da_estimate.l2_norm() <= 1e-4 * scale, "{}", r.da_estimate.l2_norm() / scale);
    let mean = psi.integral() / g.volume();
    let truth = psi.map(|v| mean - v);
    let est = r.psi_estimate.expect("gauge stage accepted");
    assert!(est.sub(&truth).l2_norm() <= 0.02 * truth.l2_norm());
    assert!(r.q_diff_estimate.l2_norm() <= 1e-3 * p1.q.l2_norm());
    assert_eq!(r.diagnostics.swap_violations, 0);
}

#[test]
fn reconstruct_against_zero_substitutes_the_magnetic_part() {
    let g = grid(32);
    let p1 = smooth(g);
    let p2 = Potentials::zero(p1.mask.clone());
    let cfg = fast(2.0);
    let r = reconstruct(&p1, &p2, None, &cfg).unwrap();
    let oracle = band_limit_form(&magnetic_field(&p1.a), cfg.xi_max).unwrap();
    assert!(relative_l2(&r.da_estimate, &oracle) <= 0.1);
    assert_eq!(r.diagnostics.gauge_status, GaugeStatus::Substituted);
    assert!(r.psi_estimate.is_none());
    let q_oracle = band_limit(&p1.q, cfg.xi_max).unwrap().mul(&p1.mask);
    assert!(r.q_diff_estimate.sub(&q_oracle).l2_norm() <= 0.1 * q_oracle.l2_norm());
}

#[test]
fn reconstruct_is_deterministic_and_stage_tagged() {
    let g = grid(16);
    let p1 = smooth(g);
    let p2 = Potentials { a: scaled(&p1.a, 0.5), q: p1.q.clone(), mask: p1.mask.clone() };
    let cfg = ReconConfig { hs: vec![0.05, 0.025], ..fast(1.5) };
    let a = reconstruct(&p1, &p2, None, &cfg).unwrap();
    let b = reconstruct(&p1, &p2, None, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a.diagnostics).unwrap(), serde_json::to_string(&b.diagnostics).unwrap());
    assert_eq!(a.coefficients_csv(), b.coefficients_csv());
    let bad = ReconConfig { xi_max: 40.0, ..cfg };
    let msg = reconstruct(&p1, &p2, None, &bad).unwrap_err().to_string();
    assert!(msg.starts_with("config stage failed"), "{msg}");
}

#[test]
fn complex_potentials_use_the_full_ball() {
    let g = grid(16);
    let p1 = smooth(g);
    let p2 = Potentials { a: scaled(&p1.a, 0.5), q: p1.q.scale(C64::new(0.0, 1.0)), mask: p1.mask.clone() };
    let cfg = ReconConfig { hs: vec![0.05, 0.025], ..fast(1.0) };
    let r = reconstruct(&p1, &p2, None, &cfg).unwrap();
    assert!(!r.diagnostics.hermitian);
    assert_eq!(r.diagnostics.modes, 7);
    assert_eq!(r.q_coefficients.len(), 7);
}

#[test]
fn identity_is_small_for_a_gauge_pair_with_matched_solutions() {
    let g = grid(32);
    let p1 = smooth(g);
    let p2 = gauge_shift(&p1, &interior_gauge(g)).unwrap();
    let fr = make_frame([1.0, 1.0, 0.0]).unwrap();
    let opts = CgoOptions { tau: Some(0.0), weak_bumps: 0, ..CgoOptions::default() };
    let h = 0.1;
    let s1 = build_cgo(&p1, fr, h, Side::One, &opts).unwrap();
    let s2 = build_cgo(&p2.conj(), fr, h, Side::Two, &opts).unwrap();
    let v = identity_from_cgo(&p1, &p2, &s1, &s2).unwrap();
    let w = p1.a.sub(&p2.a);
    let scale = 2.0 * w.l2_norm() / h;
    eprintln!("gauge identity {v} scale {scale} rel {}", v.norm() / scale);
    assert!(v.norm() <= 1e-5 * scale, "{}", v.norm() / scale);
}
