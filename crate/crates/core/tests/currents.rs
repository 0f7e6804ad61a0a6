use henon_core::averaging::sampled_sequence;
use henon_core::currents::{
    backward_line_potential, backward_orbit_sequence, equilibrium_sampler, histogram_distance, pair_potential,
    pullback_pairing_errors, slice_measure, PolyTerm, theta_iterate_potential, QuasiPotentialSpec, RadialBump,
};
use henon_core::green::{classify_point, compute_filtration, green_estimate, green_grid, OrbitClassification, Sign};
use henon_core::slice::SliceSpec;
use henon_core::stats::{linear_fit, significant_positive_trend};
use henon_core::{BaseDynamics, ComplexPoint2, HenonFamily, ParameterPoint, ParameterSequence};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square_map(a: f64) -> HenonFamily {
    HenonFamily::single(2, Complex64::new(0.0, 0.0), Complex64::new(a, 0.0)).unwrap()
}

fn origin_param() -> ParameterPoint {
    ParameterPoint::new(vec![Complex64::new(0.0, 0.0)])
}

#[test]
fn green_slice_has_unit_mass() {
    let f = square_map(1.0);
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let seq = ParameterSequence::iid(f.domain(), 0);
    let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 3.0, 256);
    let g: Vec<f64> = green_grid(&f, &seq, Sign::Plus, &slice, 1e-10, &filt).unwrap().iter().map(|g| g.value).collect();
    let m = slice_measure(&g, &slice).unwrap();
    assert!((0.95..=1.05).contains(&m.total_mass), "{}", m.total_mass);
}

/// Max-norm ball around `w` certified to reach `V_R⁺` under `(x, y) -> (y, y² - x)`.
fn ball_escapes(mut w: ComplexPoint2, mut rho: f64, r: f64) -> bool {
    for _ in 0..30 {
        if w.y.norm() - rho > r && w.y.norm() - rho > w.x.norm() + rho {
            return true;
        }
        rho *= 1.0 + 2.0 * (w.y.norm() + rho);
        w = ComplexPoint2::new(w.y, w.y * w.y - w.x);
        if rho > 1e3 {
            return false;
        }
    }
    false
}

#[test]
fn green_slice_is_harmonic_where_everything_escapes() {
    let f = square_map(1.0);
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let seq = ParameterSequence::iid(f.domain(), 0);
    let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 3.0, 256);
    let g: Vec<f64> = green_grid(&f, &seq, Sign::Plus, &slice, 1e-12, &filt).unwrap().iter().map(|g| g.value).collect();
    let m = slice_measure(&g, &slice).unwrap();
    let mut checked = 0;
    for j in 1..slice.ny - 1 {
        for i in 1..slice.nx - 1 {
            // every point within six cells escapes, not only the cell centres
            let z = slice.point(slice.t_at(i, j));
            if ball_escapes(z, 6.0 * slice.hx(), filt.r) {
                assert!(matches!(classify_point(&f, &seq, Sign::Plus, &z, 60, &filt), OrbitClassification::Escaped { .. }));
                checked += 1;
                assert!(m.mass(i, j).abs() <= 1e-6 * m.total_mass, "cell ({i},{j}) mass {}", m.mass(i, j));
            }
        }
    }
    assert!(checked > 20000, "{checked}");
}

fn shifted_quadratic() -> QuasiPotentialSpec {
    QuasiPotentialSpec::Poly {
        terms: vec![
            PolyTerm { x_pow: 0, y_pow: 2, coeff: Complex64::new(1.0, 0.0) },
            PolyTerm { x_pow: 1, y_pow: 0, coeff: Complex64::new(-1.0, 0.0) },
            PolyTerm { x_pow: 0, y_pow: 0, coeff: Complex64::new(4.0, 0.0) },
        ],
    }
}

fn decay_series(a: f64, u: &QuasiPotentialSpec) -> (Vec<(usize, f64)>, f64) {
    let f = square_map(a);
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let seq = ParameterSequence::iid(f.domain(), 0);
    let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 3.0, 256);
    let bump = RadialBump::new(Complex64::new(0.4, 0.3), 2.0).unwrap();
    let ns: Vec<usize> = (4..=12).collect();
    let s = pullback_pairing_errors(&f, &seq, u, &ns, &bump, &slice, &filt, 1e-12)
        .unwrap()
        .iter()
        .map(|p| (p.n, p.error))
        .collect();
    (s, bump.c1_norm())
}

fn fitted_slope(s: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = s.iter().map(|p| p.0 as f64).collect();
    let ys: Vec<f64> = s.iter().map(|p| p.1.ln()).collect();
    linear_fit(&xs, &ys).unwrap().slope
}

fn scaled_by_rate(s: &[(usize, f64)]) -> Vec<f64> {
    s.iter().map(|(n, e)| e * 2f64.powi(*n as i32) / *n as f64).collect()
}

#[test]
fn pullback_rate_on_dissipative_map() {
    // both potentials are positive on the basin of the attracting origin
    for u in [QuasiPotentialSpec::LogPlusYMinusC { c: Complex64::new(5.0, 0.0) }, shifted_quadratic()] {
        let (s, _) = decay_series(0.3, &u);
        let slope = fitted_slope(&s);
        assert!((slope + 2f64.ln()).abs() <= 0.15 * 2f64.ln(), "{u:?}: slope {slope}");
        assert!(!significant_positive_trend(&scaled_by_rate(&s)));
    }
}

#[test]
fn pullback_error_bounded_by_rate_on_conservative_map() {
    for u in [QuasiPotentialSpec::LogPlusY, QuasiPotentialSpec::y_squared_minus_x()] {
        let (s, c1) = decay_series(1.0, &u);
        let scaled = scaled_by_rate(&s);
        let a = scaled.iter().cloned().fold(0.0, f64::max) / c1;
        assert!(a.is_finite() && a > 0.0);
        assert!(!significant_positive_trend(&scaled), "{u:?}: {scaled:?}");
        // decays at least as fast as the rate
        assert!(fitted_slope(&s) <= -0.85 * 2f64.ln());
    }
}

#[test]
fn pairing_base_case_is_finite_and_nonzero() {
    let f = square_map(1.0);
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let seq = ParameterSequence::iid(f.domain(), 0);
    let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 3.0, 128);
    let bump = RadialBump::new(Complex64::new(0.4, 0.3), 2.0).unwrap();
    let e0 = pullback_pairing_errors(&f, &seq, &QuasiPotentialSpec::LogPlusY, &[0], &bump, &slice, &filt, 1e-10).unwrap();
    assert!(e0[0].error.is_finite() && e0[0].error > 1e-6);
    let off = RadialBump::new(Complex64::new(2.5, 0.0), 1.0).unwrap();
    assert!(pullback_pairing_errors(&f, &seq, &QuasiPotentialSpec::LogPlusY, &[1], &off, &slice, &filt, 1e-10).is_err());
}

#[test]
fn theta_iteration_converges_to_averaged_current() {
    let f = HenonFamily::quadratic_circle(-1.2, 0.3, 0.3).unwrap();
    let filt = compute_filtration(&f, 32, 0).unwrap();
    let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 3.0, 128);
    let bump = RadialBump::new(Complex64::new(0.0, 0.0), 2.5).unwrap();
    let paths = 64;
    let theta = theta_iterate_potential(&f, &QuasiPotentialSpec::LogPlusY, 10, paths, 7, &slice, &filt).unwrap();
    let eg: Vec<f64> = slice
        .cells()
        .map(|(_, _, t)| {
            (0..paths)
                .map(|p| green_estimate(&f, &sampled_sequence(&f, 7, p), Sign::Plus, &slice.point(t), 1e-10, &filt).unwrap().value)
                .sum::<f64>()
                / paths as f64
        })
        .collect();
    let a = pair_potential(&theta, &slice, &bump).unwrap();
    let b = pair_potential(&eg, &slice, &bump).unwrap();
    assert!((a - b).abs() < 1e-2);
}

fn backward_sup_errors(f: &HenonFamily, base: &BaseDynamics, lambda: &ParameterPoint) -> Vec<f64> {
    let filt = compute_filtration(f, 16, 0).unwrap();
    let seq = backward_orbit_sequence(f, base, lambda).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = filt.r;
    let points: Vec<ComplexPoint2> = (0..100)
        .map(|_| {
            let x = Complex64::from_polar(rng.gen_range(1.1 * r..3.0 * r), rng.gen_range(0.0..6.28));
            let y = Complex64::from_polar(rng.gen_range(0.0..0.9) * x.norm(), rng.gen_range(0.0..6.28));
            ComplexPoint2::new(x, y)
        })
        .collect();
    let g: Vec<f64> = points.iter().map(|z| green_estimate(f, &seq, Sign::Minus, z, 1e-13, &filt).unwrap().value).collect();
    (4..=12)
        .map(|k| {
            points
                .iter()
                .zip(&g)
                .map(|(z, g)| (backward_line_potential(f, base, lambda, k, z, &filt).unwrap() - g).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

fn check_backward_slope(errs: &[f64], d: f64) {
    let xs: Vec<f64> = (4..=12).map(|k| k as f64).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let fit = linear_fit(&xs, &ys).unwrap();
    assert!((fit.slope + d.ln()).abs() <= 0.2 * d.ln(), "slope {}", fit.slope);
}

#[test]
fn backward_line_potential_converges_singleton() {
    let f = square_map(0.3);
    let errs = backward_sup_errors(&f, &BaseDynamics::Identity, &origin_param());
    check_backward_slope(&errs, 2.0);
}

#[test]
fn backward_line_potential_converges_rotation() {
    let f = HenonFamily::quadratic_circle(-0.5, 0.3, 0.3).unwrap();
    let base = BaseDynamics::Rotation { alpha: 0.5f64.sqrt() - 0.5 };
    let errs = backward_sup_errors(&f, &base, &ParameterPoint::from_angles(&[0.1]));
    check_backward_slope(&errs, 2.0);
}

#[test]
fn equilibrium_sampler_mass_and_invariance() {
    let f = square_map(0.3);
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let l = origin_param();
    let r = filt.r;
    let h = f.at(&l).unwrap();
    let mut distances = Vec::new();
    for n in [8, 24] {
        let s = equilibrium_sampler(&f, &BaseDynamics::Identity, &l, n, 256, &filt).unwrap();
        if n == 8 {
            assert!((0.95..=1.05).contains(&s.cloud.total_mass), "{}", s.cloud.total_mass);
        }
        // points pinned onto J⁺ keep the transported mass near J instead of spreading
        assert!(s.cloud.points.iter().all(|p| p.x.norm() <= r && p.y.norm() <= r));
        let image = s.cloud.pushforward(&h, Some(l.clone())).unwrap();
        let dist = histogram_distance(&s.cloud, &image, r, 32);
        // the pushforward only swaps the first and last Cesàro terms
        assert!(dist <= 1.0 / n as f64 + s.dropped_mass, "n {n}: {dist}");
        assert!(dist <= 0.1, "n {n}: {dist}");
        distances.push(dist);
    }
    assert!(distances[1] < 0.6 * distances[0], "{distances:?}");
}

#[test]
fn equilibrium_sampler_follows_the_base_orbit() {
    let f = HenonFamily::quadratic_circle(-0.5, 0.3, 0.3).unwrap();
    let filt = compute_filtration(&f, 16, 0).unwrap();
    let base = BaseDynamics::Rotation { alpha: 0.5f64.sqrt() - 0.5 };
    let l = ParameterPoint::from_angles(&[0.2]);
    let s = equilibrium_sampler(&f, &base, &l, 6, 128, &filt).unwrap();
    assert!((s.cloud.total_mass - 1.0).abs() < 0.05);
    assert_eq!(s.cloud.fiber.as_ref(), Some(&l));
    assert!(s.cloud.points.iter().all(|p| p.norm() <= filt.r));
}
