use henon_core::green::{
    classify_point, compute_filtration, green_estimate, green_partial_sums, log_growth_constant,
    log_plus, FiltrationData, OrbitClassification, Sign,
};
use henon_core::{ComplexPoint2, HenonFamily, ParameterSequence};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Complex number `m · e^s` with `|m| = 1`, enough range for 60 squarings.
#[derive(Clone, Copy)]
struct Scaled {
    m: Complex64,
    s: f64,
}

impl Scaled {
    fn new(z: Complex64) -> Self {
        let r = z.norm();
        if r == 0.0 {
            Scaled { m: Complex64::new(0.0, 0.0), s: f64::NEG_INFINITY }
        } else {
            Scaled { m: z / r, s: r.ln() }
        }
    }

    fn square(self) -> Self {
        Scaled { m: self.m * self.m, s: 2.0 * self.s }
    }

    fn sub(self, o: Scaled) -> Self {
        if o.s == f64::NEG_INFINITY {
            return self;
        }
        if self.s == f64::NEG_INFINITY {
            return Scaled { m: -o.m, s: o.s };
        }
        let top = self.s.max(o.s);
        let v = self.m * (self.s - top).exp() - o.m * (o.s - top).exp();
        let r = v.norm();
        Scaled { m: v / r, s: top + r.ln() }
    }
}

/// `G⁺` for `(x, y) -> (y, y² - x)` by 60 steps in scaled coordinates.
fn log_coordinate_oracle(x: Complex64, y: Complex64) -> f64 {
    let (mut x, mut y) = (Scaled::new(x), Scaled::new(y));
    for _ in 0..60 {
        let ny = y.square().sub(x);
        x = y;
        y = ny;
    }
    y.s.max(x.s).max(0.0) / 2f64.powi(60)
}

fn square_map() -> HenonFamily {
    HenonFamily::single(2, Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)).unwrap()
}

#[test]
fn deep_escape_value_matches_log_oracle() {
    let f = square_map();
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let seq = ParameterSequence::iid(f.domain(), 0);
    let z = ComplexPoint2::from_re(0.0, 1e4);
    let oracle = log_coordinate_oracle(z.x, z.y);
    assert!((oracle - 9.2103).abs() < 1e-3, "oracle {oracle}");
    let g = green_estimate(&f, &seq, Sign::Plus, &z, 1e-8, &filt).unwrap();
    assert!((g.value - oracle).abs() <= 1e-8 + 1e-12, "{g:?} vs {oracle}");
    assert!((g.value - 9.2103).abs() < 1e-3);
}

#[test]
fn estimates_match_log_oracle_on_random_points() {
    let f = square_map();
    let filt = compute_filtration(&f, 4, 0).unwrap();
    let seq = ParameterSequence::iid(f.domain(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let x = Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let y = Complex64::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let g = green_estimate(&f, &seq, Sign::Plus, &ComplexPoint2::new(x, y), 1e-9, &filt).unwrap();
        let oracle = log_coordinate_oracle(x, y);
        assert!((g.value - oracle).abs() <= g.err_bound, "{x} {y}: {g:?} vs {oracle}");
    }
}

#[test]
fn invariance_under_one_step() {
    let f = HenonFamily::quadratic_circle(-1.2, 0.1, 0.3).unwrap();
    let filt = compute_filtration(&f, 32, 0).unwrap();
    let d = f.degree() as f64;
    let tol = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..40 {
        let lam = f.domain().sample(&mut rng);
        let seq = ParameterSequence::iid(f.domain(), 1000 + trial);
        let z = ComplexPoint2::new(
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        );
        for sign in [Sign::Plus, Sign::Minus] {
            let h = f.at(&lam).unwrap();
            let image = h.eval_signed(&z, sign.forward()).unwrap();
            let lhs = green_estimate(&f, &seq, sign, &image, tol, &filt).unwrap();
            let rhs = green_estimate(&f, &seq.prepended(lam.clone()), sign, &z, tol / d, &filt).unwrap();
            let residual = (lhs.value - d * rhs.value).abs();
            assert!(residual <= 2.0 * tol, "{sign:?} residual {residual}");
        }
    }
}

#[test]
fn certified_bound_covers_remaining_change() {
    let f = HenonFamily::quadratic_circle(-1.2, 0.1, 0.3).unwrap();
    let filt = compute_filtration(&f, 32, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..50 {
        let seq = ParameterSequence::iid(f.domain(), trial);
        let z = ComplexPoint2::new(
            Complex64::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
            Complex64::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5)),
        );
        for sign in [Sign::Plus, Sign::Minus] {
            let g = green_estimate(&f, &seq, sign, &z, 1e-4, &filt).unwrap();
            let reference = *green_partial_sums(&f, &seq, sign, &z, 80, &filt).unwrap().last().unwrap();
            assert!((g.value - reference).abs() <= g.err_bound, "{sign:?} {g:?} vs {reference}");
        }
    }
}

#[test]
fn logarithmic_growth_and_positivity() {
    let f = HenonFamily::quadratic_circle(-1.2, 0.1, 0.3).unwrap();
    let filt = compute_filtration(&f, 32, 0).unwrap();
    let c = log_growth_constant(&f, &filt, Sign::Plus);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..500 {
        let seq = ParameterSequence::iid(f.domain(), trial);
        let r = 10f64.powf(rng.gen_range(-1.0..6.0));
        let z = ComplexPoint2::new(
            Complex64::from_polar(r * rng.gen::<f64>(), rng.gen_range(0.0..6.3)),
            Complex64::from_polar(r * rng.gen::<f64>(), rng.gen_range(0.0..6.3)),
        );
        let g = green_estimate(&f, &seq, Sign::Plus, &z, 1e-6, &filt).unwrap();
        assert!(g.value >= 0.0);
        assert!(g.value - g.err_bound <= log_plus(z.norm()) + c);
        if let OrbitClassification::Escaped { .. } = classify_point(&f, &seq, Sign::Plus, &z, 100, &filt) {
            assert!(g.value > 0.0);
        }
    }
}

#[test]
fn continuity_in_sequence_tail() {
    let f = HenonFamily::quadratic_circle(-1.2, 0.1, 0.3).unwrap();
    let filt = compute_filtration(&f, 32, 0).unwrap();
    let tol = 1e-7;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for trial in 0..30 {
        let seq = ParameterSequence::iid(f.domain(), trial);
        let z = ComplexPoint2::new(
            Complex64::new(rng.gen_range(-1.0..1.0), 0.0),
            Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)),
        );
        let g = green_estimate(&f, &seq, Sign::Plus, &z, tol, &filt).unwrap();
        let j = g.depth as u64 + 1 + rng.gen_range(0..5);
        let perturbed = seq.with_term(j, f.domain().sample(&mut rng));
        let h = green_estimate(&f, &perturbed, Sign::Plus, &z, tol, &filt).unwrap();
        assert!((g.value - h.value).abs() <= 2.0 * tol);
    }
}

#[test]
fn manual_filtration_is_usable() {
    let f = square_map();
    let filt = FiltrationData::manual(2.0, 1.0, 5.0);
    let seq = ParameterSequence::iid(f.domain(), 0);
    let g = green_estimate(&f, &seq, Sign::Minus, &ComplexPoint2::from_re(1e4, 0.0), 1e-8, &filt).unwrap();
    // symmetric map: G⁻(x, 0) = G⁺(0, x)
    assert!((g.value - log_coordinate_oracle(Complex64::new(0.0, 0.0), Complex64::new(1e4, 0.0))).abs() < 1e-7);
}
