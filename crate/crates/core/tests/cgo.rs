use magcgo::cgo::*;
use magcgo::dbar::{self, cdot, make_frame, CVec3};
use magcgo::fields::{Grid3, ScalarField, VectorField, I};
use magcgo::potentials::{
    apply_operator, default_mask, make_test_potential, PotentialKind, Potentials, TestPotentialParams,
};
use magcgo::C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use std::f64::consts::PI;

fn grid(n: usize) -> Grid3 {
    Grid3::new(n, 2.0 * PI).unwrap()
}

/// Random trigonometric polynomial with modes |m_i| ≤ deg.
fn trig_poly(g: Grid3, deg: i64, seed: u64) -> ScalarField {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    for a in -deg..=deg {
        for b in -deg..=deg {
            for c in -deg..=deg {
                let co = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) / (1.0 + (a * a + b * b + c * c) as f64);
                terms.push(([a as f64, b as f64, c as f64], co));
            }
        }
    }
    ScalarField::from_fn(g, |x| terms.iter().map(|(m, c)| c * (I * (m[0] * x[0] + m[1] * x[1] + m[2] * x[2])).exp()).sum())
}

fn rel(a: &ScalarField, b: &ScalarField) -> f64 {
    a.sub(b).l2_norm() / b.l2_norm().max(1e-300)
}

/// `e^{-x·ζ/h} h² L (e^{x·ζ/h} u)` for a lattice `ζ = i h k0`, where the exponential is periodic.
fn direct_conjugation(p: &Potentials, k0: [f64; 3], h: f64, u: &ScalarField) -> ScalarField {
    let g = *u.grid();
    let e = ScalarField::from_fn(g, |x| (I * (k0[0] * x[0] + k0[1] * x[1] + k0[2] * x[2])).exp());
    let lu = apply_operator(p, &e.mul(u));
    lu.mul(&e.conj()).scale(C64::new(h * h, 0.0))
}

fn lattice_zeta(k0: [f64; 3], h: f64) -> CVec3 {
    k0.map(|k| I * k * h)
}

#[test]
fn conjugation_kills_constants() {
    let g = grid(16);
    let p = Potentials::zero(default_mask(g));
    let fr = make_frame([0.0, 1.0, 1.0]).unwrap();
    let pair = make_zeta_pair(fr, 0.2).unwrap();
    let one = ScalarField::constant(g, C64::new(1.0, 0.0));
    let out = conjugated_apply(&p, pair.zeta1, 0.2, &one).unwrap();
    assert!(out.sup_norm() < 1e-12);
}

#[test]
fn conjugation_matches_direct_oracle() {
    let g = grid(32);
    let h = 0.3;
    let k0 = [2.0, -1.0, 1.0];
    let u = trig_poly(g, 3, 1);
    let free = Potentials::zero(default_mask(g));
    let got = conjugated_apply(&free, lattice_zeta(k0, h), h, &u).unwrap();
    assert!(rel(&got, &direct_conjugation(&free, k0, h, &u)) < 1e-8);

    // band-limited potentials, bypassing the mask so products stay inside the band
    let a = VectorField { c: [trig_poly(g, 2, 2), trig_poly(g, 2, 3), trig_poly(g, 2, 4)] };
    let p = Potentials { a, q: trig_poly(g, 2, 5), mask: default_mask(g) };
    let u = trig_poly(g, 2, 6);
    let got = conjugated_apply(&p, lattice_zeta(k0, h), h, &u).unwrap();
    let want = direct_conjugation(&p, k0, h, &u);
    assert!(rel(&got, &want) < 1e-8, "{}", rel(&got, &want));
}

#[test]
fn adjoint_is_formal_adjoint() {
    let g = grid(16);
    let a = VectorField { c: [trig_poly(g, 2, 7), trig_poly(g, 2, 8), trig_poly(g, 2, 9)] };
    let p = Potentials { a, q: trig_poly(g, 2, 10), mask: default_mask(g) };
    let pair = make_zeta_pair(make_frame([1.0, 0.0, 0.5]).unwrap(), 0.3).unwrap();
    let op = ConjugatedOperator::new(&p, pair.zeta1, 0.3);
    let u = trig_poly(g, 3, 11);
    let v = trig_poly(g, 3, 12);
    let lhs = v.inner(&op.apply(&u));
    let rhs = op.adjoint().apply(&v).inner(&u);
    assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
}

#[test]
fn rhs_is_minus_h2_q_without_magnetic_part() {
    let g = grid(32);
    let kind = PotentialKind::Smooth;
    let mut prm = TestPotentialParams::default_for(kind, g);
    prm.amplitude = [0.0; 3];
    let p = make_test_potential(g, kind, &prm).unwrap();
    let pair = make_zeta_pair(make_frame([0.0, 0.0, 1.0]).unwrap(), 0.1).unwrap();
    let amp = Amplitude {
        a: ScalarField::constant(g, C64::new(1.0, 0.0)),
        grad: VectorField::zeros(g),
        lap: ScalarField::zeros(g),
        zeta0: pair.zeta0(Side::One),
    };
    let got = assemble_rhs_g(&p, &amp, &pair, Side::One).unwrap();
    let want = p.q.scale(C64::new(-0.01, 0.0));
    assert!(got.sub(&want).sup_norm() < 1e-14);
    assert!(assemble_rhs_g(&p, &amp, &pair, Side::Two).is_err());
}

#[test]
fn zero_source_gives_zero_remainder() {
    let g = grid(16);
    let p = Potentials::zero(default_mask(g));
    let pair = make_zeta_pair(make_frame([1.0, 1.0, 0.0]).unwrap(), 0.2).unwrap();
    let (r, rep) = solve_remainder(&p, &pair, Side::One, &ScalarField::zeros(g), &CgoOptions::default()).unwrap();
    assert_eq!(r.sup_norm(), 0.0);
    assert_eq!(rep.iterations, 0);
}

#[test]
fn single_mode_matches_symbol_inversion() {
    let g = grid(16);
    let p = Potentials::zero(default_mask(g));
    let h = 0.2;
    let pair = make_zeta_pair(make_frame([1.0, 0.0, 2.0]).unwrap(), h).unwrap();
    let z = pair.zeta1;
    let m = [1.0, 2.0, -1.0];
    let mode = ScalarField::from_fn(g, |x| (I * (m[0] * x[0] + m[1] * x[1] + m[2] * x[2])).exp());
    let opts = CgoOptions { region: RemainderRegion::Torus, rel_tol: 1e-13, ..CgoOptions::default() };
    let (r, _) = solve_remainder(&p, &pair, Side::One, &mode, &opts).unwrap();
    let zk = z[0] * m[0] + z[1] * m[1] + z[2] * m[2];
    let k2 = m.iter().map(|v| v * v).sum::<f64>();
    let symbol = C64::new(h * h * k2, 0.0) - 2.0 * h * I * zk;
    let want = mode.scale(1.0 / symbol);
    assert!(r.sub(&want).sup_norm() < 1e-10 * want.sup_norm());
}

#[test]
fn free_cgo_is_pure_exponential() {
    let g = grid(32);
    let p = Potentials::zero(default_mask(g));
    let sol = build_cgo(&p, make_frame([1.0, 0.0, 0.0]).unwrap(), 0.2, Side::One, &CgoOptions::default()).unwrap();
    assert_eq!(sol.remainder.sup_norm(), 0.0);
    assert_eq!(sol.phase.phi_sharp.sup_norm(), 0.0);
    // only the truncation of the test Gaussians at six widths remains
    assert!(sol.diagnostics.weak_residual.unwrap() < 1e-7);
    let e = sol.exponential();
    assert!(sol.assembled().sub(&e).sup_norm() == 0.0);
}

#[test]
fn build_rejects_bad_parameters() {
    let g = grid(16);
    let p = Potentials::zero(default_mask(g));
    let fr = make_frame([0.0, 2.0, 0.0]).unwrap();
    assert!(build_cgo(&p, fr, 1.0, Side::One, &CgoOptions::default()).is_err());
    let bad = CgoOptions { sigma: 0.5, ..CgoOptions::default() };
    assert!(build_cgo(&p, fr, 0.1, Side::One, &bad).is_err());
}

fn smooth(g: Grid3, width: f64) -> Potentials {
    let kind = PotentialKind::Smooth;
    let mut prm = TestPotentialParams::default_for(kind, g);
    prm.width = width;
    prm.q_width = width;
    make_test_potential(g, kind, &prm).unwrap()
}

#[test]
fn smooth_cgo_satisfies_weak_equation_on_both_sides() {
    let g = grid(32);
    let p = smooth(g, 0.6);
    let fr = make_frame([1.0, 0.5, -0.7]).unwrap();
    let opts = CgoOptions::default();
    let s1 = build_cgo(&p, fr, 0.1, Side::One, &opts).unwrap();
    let w1 = s1.diagnostics.weak_residual.unwrap();
    assert!(s1.diagnostics.weak_enforced);
    assert!(w1 <= 1e-5, "{w1}");
    assert!(s1.diagnostics.solve_residual <= 1e-6);
    let s2 = build_cgo(&p.conj(), fr, 0.1, Side::Two, &opts).unwrap();
    assert!(s2.diagnostics.weak_residual.unwrap() <= 1e-5);
}

#[test]
fn transport_violation_inflates_source() {
    let g = grid(32);
    let kind = PotentialKind::Smooth;
    let mut prm = TestPotentialParams::default_for(kind, g);
    // the inflation grows like width/h; narrow potentials sit near 3x at h = 0.1
    prm.width = 1.0;
    prm.amplitude = prm.amplitude.map(|v| 0.3 * v);
    prm.q_amplitude = 0.0;
    let p = make_test_potential(g, kind, &prm).unwrap();
    let fr = make_frame([0.0, 1.0, 0.0]).unwrap();
    let h = 0.1;
    let pair = make_zeta_pair(fr, h).unwrap();
    let z0 = pair.zeta0(Side::One);
    let phase = dbar::transport_phase(&p.a, z0, 0.0).unwrap();
    let amp = amplitude_from_phase(&phase, &p.a, &p.mask).unwrap();
    let good = assemble_rhs_g(&p, &amp, &pair, Side::One).unwrap();
    let flat = Amplitude {
        a: ScalarField::constant(g, C64::new(1.0, 0.0)),
        grad: VectorField::zeros(g),
        lap: ScalarField::zeros(g),
        zeta0: z0,
    };
    let bad = assemble_rhs_g(&p, &flat, &pair, Side::One).unwrap();
    let hm1 = magcgo::fields::SobolevSpec::new(-1.0, h).unwrap();
    let ratio = magcgo::fields::semiclassical_norm(&bad, hm1) / magcgo::fields::semiclassical_norm(&good, hm1);
    assert!(ratio >= 10.0, "{ratio}");
}

#[test]
fn serialization_round_trip() {
    let g = grid(16);
    let p = smooth(g, 0.8);
    let fr = make_frame([1.0, 0.0, 0.0]).unwrap();
    let opts = CgoOptions { tau: Some(0.0), ..CgoOptions::default() };
    let sol = build_cgo(&p, fr, 0.3, Side::One, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    sol.write_dir(dir.path()).unwrap();
    let back = CgoSolution::read_dir(dir.path()).unwrap();
    assert_eq!(back.remainder.values(), sol.remainder.values());
    assert_eq!(back.amplitude.a.values(), sol.amplitude.a.values());
    assert_eq!(back.diagnostics.r_norm_h1.to_bits(), sol.diagnostics.r_norm_h1.to_bits());
}

#[test]
fn corrector_scales_linearly_in_h() {
    let fr = make_frame([0.5, 1.0, 1.5]).unwrap();
    let ratios: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&h| {
            let c = make_zeta_pair(fr, h).unwrap().corrector(Side::One);
            dbar::norm3(c.map(|v| v.norm())) / h
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / 3.0;
    for r in &ratios {
        assert!((r - mean).abs() <= 0.2 * mean);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zeta_pair_is_null_and_sums_to_xi(x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0, h in 0.01f64..0.3) {
        prop_assume!(x * x + y * y + z * z > 1e-6);
        let fr = make_frame([x, y, z]).unwrap();
        let pair = make_zeta_pair(fr, h).unwrap();
        prop_assert!(cdot(pair.zeta1, pair.zeta1).norm() < 1e-12);
        prop_assert!(cdot(pair.zeta2, pair.zeta2).norm() < 1e-12);
        for j in 0..3 {
            let s = (pair.zeta1[j] + pair.zeta2[j].conj()) / h;
            prop_assert!((s - I * fr.xi[j]).norm() < 1e-12 * (1.0 + fr.xi[j].abs()));
        }
        let c = pair.corrector(Side::Two);
        prop_assert!(c.iter().all(|v| v.norm() <= h * (1.0 + dbar::norm3(fr.xi))));
    }
}
