//! Finite random compositions, the filtration `V_R^± ∪ V_R`, escape classification
//! and certified Green function estimates.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{HenonFamily, ParameterPoint};
use crate::maps::{Composite, Mat2};
use crate::sequence::{ParameterSequence, Terms};
use crate::slice::SliceSpec;
use crate::ComplexPoint2;

/// Multiplier applied to sampled `K` and `L`.
pub const SAFETY_FACTOR: f64 = 1.25;
const MAX_DEPTH: usize = 400;
const MAX_SEARCH_DOUBLINGS: u32 = 24;
/// `ln` of the dominant coordinate past which exact iteration could overflow after one more step.
const OVERFLOW_LOG: f64 = 600.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Sign {
    #[inline]
    pub fn forward(self) -> bool {
        self == Sign::Plus
    }

    pub fn opposite(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// Which filtration piece a point lies in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// `V_R^+ = {|y| > |x|, |y| > R}`.
    Plus,
    /// `V_R^- = {|x| > |y|, |x| > R}`.
    Minus,
    /// `V_R` together with the tie set `|x| = |y| > R`.
    Box,
}

#[inline]
pub fn region(z: &ComplexPoint2, r: f64) -> Region {
    let (ax, ay) = (z.x.norm(), z.y.norm());
    if ay > ax && ay > r {
        Region::Plus
    } else if ax > ay && ax > r {
        Region::Minus
    } else {
        Region::Box
    }
}

#[inline]
fn escape_region(sign: Sign) -> Region {
    match sign {
        Sign::Plus => Region::Plus,
        Sign::Minus => Region::Minus,
    }
}

/// Dominant coordinate modulus in the escape region of `sign`.
#[inline]
fn dominant(z: &ComplexPoint2, sign: Sign) -> f64 {
    match sign {
        Sign::Plus => z.y.norm(),
        Sign::Minus => z.x.norm(),
    }
}

#[inline]
pub fn log_plus(t: f64) -> f64 {
    if t > 1.0 {
        t.ln()
    } else {
        0.0
    }
}

/// Filtration radius and the sampled constants of the convergence estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiltrationData {
    pub r: f64,
    /// Bound on `|v_λ|` over `V_R ∪ V_R^±`, both signs.
    pub k: f64,
    /// Bound on `‖DH_λ^{±1}‖` over `V_R`.
    pub l: f64,
    pub r_esc: f64,
    /// Smallest normalized inclusion margin seen at the accepted radius.
    pub margin: f64,
    pub lambda_samples: usize,
    pub safety_factor: f64,
    /// `K` and `L` come from sampling plus analytic tails, not a proof.
    pub sampled_estimate: bool,
}

impl FiltrationData {
    /// Hand-specified constants, used in tests and for known maps.
    pub fn manual(r: f64, k: f64, l: f64) -> Self {
        Self {
            r,
            k,
            l: l.max(1.0),
            r_esc: (10.0 * r).max(1e8),
            margin: f64::NAN,
            lambda_samples: 0,
            safety_factor: 1.0,
            sampled_estimate: false,
        }
    }
}

fn lambda_samples(family: &HenonFamily, sample_count: usize, seed: u64) -> Vec<ParameterPoint> {
    let mut out = family.domain().grid(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    out.extend((0..sample_count).map(|_| family.domain().sample(&mut rng)));
    out
}

fn polar(r: f64, k: usize, n: usize) -> Complex64 {
    Complex64::from_polar(r, std::f64::consts::TAU * k as f64 / n as f64)
}

/// Smallest normalized margins of the filtration inclusions for one map at radius `r`:
/// `(escape-region inclusions, V_R inclusions)`. The second is closed-set and is
/// zero whenever `|y| = R` maps to `|x'| = R`, so it is only checked for sign.
fn inclusion_margin(h: &Composite<f64>, r: f64) -> (f64, f64) {
    const NA: usize = 16;
    let mut worst = f64::INFINITY;
    // H(V_R^+) ⊂ V_R^+ and H^{-1}(V_R^-) ⊂ V_R^-, on shells up to 4R
    for s in [1.0, 1.25, 2.0, 4.0] {
        for t in [0.0, 0.5, 0.9, 1.0] {
            for ka in 0..NA {
                for kb in 0..NA {
                    let big = polar(r * s, ka, NA);
                    let small = polar(r * s * t, kb, NA);
                    if let Ok(w) = h.eval(&ComplexPoint2::new(small, big)) {
                        let (ax, ay) = (w.x.norm(), w.y.norm());
                        worst = worst.min((ay - ax).min(ay - r) / r);
                    } else {
                        worst = worst.min(-1.0);
                    }
                    if let Ok(w) = h.eval_inverse(&ComplexPoint2::new(big, small)) {
                        let (ax, ay) = (w.x.norm(), w.y.norm());
                        worst = worst.min((ax - ay).min(ax - r) / r);
                    } else {
                        worst = worst.min(-1.0);
                    }
                }
            }
        }
    }
    let escape = worst;
    let mut worst = f64::INFINITY;
    // H(V_R) ⊂ V_R ∪ V_R^+ and H^{-1}(V_R) ⊂ V_R ∪ V_R^-
    const NB: usize = 8;
    for sx in [0.0, 0.5, 1.0] {
        for sy in [0.0, 0.5, 1.0] {
            for ka in 0..NB {
                for kb in 0..NB {
                    let z = ComplexPoint2::new(polar(r * sx, ka, NB), polar(r * sy, kb, NB));
                    for forward in [true, false] {
                        let m = match h.eval_signed(&z, forward) {
                            Ok(w) => {
                                let (ax, ay) = (w.x.norm(), w.y.norm());
                                let in_box = (r - ax).min(r - ay) / r;
                                let (big, small) = if forward { (ay, ax) } else { (ax, ay) };
                                let in_escape = (big - small).min(big - r) / r;
                                in_box.max(in_escape)
                            }
                            Err(_) => -1.0,
                        };
                        worst = worst.min(m);
                    }
                }
            }
        }
    }
    (escape, worst)
}

fn op_norm(m: &Mat2<f64>) -> f64 {
    // largest singular value of a 2x2 complex matrix
    let a = m[0][0].norm_sqr() + m[1][0].norm_sqr();
    let d = m[0][1].norm_sqr() + m[1][1].norm_sqr();
    let b = m[0][0].conj() * m[0][1] + m[1][0].conj() * m[1][1];
    let tr = a + d;
    let det = a * d - b.norm_sqr();
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    (tr / 2.0 + disc).sqrt()
}

/// `v_λ(z) = (1/d) log⁺‖H_λ^{±1}(z)‖ - log⁺‖z‖`.
fn v_value(h: &Composite<f64>, z: &ComplexPoint2, forward: bool) -> Option<f64> {
    let d = h.degree() as f64;
    h.eval_signed(z, forward)
        .ok()
        .map(|w| log_plus(w.norm()) / d - log_plus(z.norm()))
}

/// Doubling search for `R`, then sampled `K` and `L` with the safety factor applied.
pub fn compute_filtration(family: &HenonFamily, sample_count: usize, seed: u64) -> Result<FiltrationData> {
    if sample_count == 0 {
        return Err(Error::arg("sample_count", "must be at least 1"));
    }
    let lambdas = lambda_samples(family, sample_count, seed);
    let maps: Vec<Composite<f64>> = lambdas.iter().map(|l| family.at(l)).collect::<Result<_>>()?;

    let mut accepted = None;
    for k in 0..=MAX_SEARCH_DOUBLINGS {
        let r = 2f64.powi(k as i32);
        let (margin, box_margin) = maps
            .par_iter()
            .map(|h| inclusion_margin(h, r))
            .reduce(|| (f64::INFINITY, f64::INFINITY), |a, b| (a.0.min(b.0), a.1.min(b.1)));
        if margin >= -1e-9 && box_margin >= -1e-9 {
            accepted = Some((r, margin));
            break;
        }
    }
    let (r, margin) = accepted.ok_or_else(|| {
        Error::Filtration(format!(
            "inclusions fail up to R = 2^{MAX_SEARCH_DOUBLINGS}"
        ))
    })?;
    let r_esc = (10.0 * r).max(1e8);
    let d = family.degree() as f64;

    // sampled sup of |v| on V_R ∪ V_R^± up to R_esc
    const NA: usize = 8;
    const NSHELL: usize = 16;
    let k_sampled = maps
        .par_iter()
        .map(|h| {
            let mut worst: f64 = 0.0;
            for forward in [true, false] {
                for sx in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    for sy in [0.0, 0.25, 0.5, 0.75, 1.0] {
                        for ka in 0..NA {
                            for kb in 0..NA {
                                let z = ComplexPoint2::new(polar(r * sx, ka, NA), polar(r * sy, kb, NA));
                                if let Some(v) = v_value(h, &z, forward) {
                                    worst = worst.max(v.abs());
                                }
                            }
                        }
                    }
                }
                for shell in 0..=NSHELL {
                    let big_r = r * (r_esc / r).powf(shell as f64 / NSHELL as f64);
                    for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
                        for ka in 0..NA {
                            for kb in 0..NA {
                                let big = polar(big_r, ka, NA);
                                let small = polar(big_r * t, kb, NA);
                                let z = if forward {
                                    ComplexPoint2::new(small, big)
                                } else {
                                    ComplexPoint2::new(big, small)
                                };
                                if let Some(v) = v_value(h, &z, forward) {
                                    worst = worst.max(v.abs());
                                }
                            }
                        }
                    }
                }
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    let tail = [true, false]
        .iter()
        .map(|&f| (family.leading_log_coeff_bound(f) + family.deep_remainder_const(f) / r_esc) / d)
        .fold(0.0, f64::max);
    let k = SAFETY_FACTOR * k_sampled.max(tail);

    let l_sampled = maps
        .par_iter()
        .map(|h| {
            let mut worst: f64 = 1.0;
            for sx in [0.0, 0.5, 1.0] {
                for sy in [0.0, 0.5, 1.0] {
                    for ka in 0..NA {
                        for kb in 0..NA {
                            let z = ComplexPoint2::new(polar(r * sx, ka, NA), polar(r * sy, kb, NA));
                            if let Ok(m) = h.differential(&z) {
                                worst = worst.max(op_norm(&m));
                            }
                            if let Ok(m) = h.differential_inverse(&z) {
                                worst = worst.max(op_norm(&m));
                            }
                        }
                    }
                }
            }
            worst
        })
        .reduce(|| 1.0, f64::max);

    Ok(FiltrationData {
        r,
        k,
        l: SAFETY_FACTOR * l_sampled,
        r_esc,
        margin,
        lambda_samples: lambdas.len(),
        safety_factor: SAFETY_FACTOR,
        sampled_estimate: true,
    })
}

/// Upper end `min{1, log d / log L}` of the admissible Hölder exponents.
pub fn holder_exponent_bound(d: usize, l: f64) -> f64 {
    assert!(d >= 2 && l >= 1.0, "need d >= 2 and L >= 1");
    if l <= d as f64 {
        1.0
    } else {
        ((d as f64).ln() / l.ln()).min(1.0)
    }
}

/// Constant `C` with `0 <= G^±_Λ(z) <= log⁺‖z‖ + C` for every `Λ`.
pub fn log_growth_constant(family: &HenonFamily, filt: &FiltrationData, sign: Sign) -> f64 {
    let d = family.degree() as f64;
    filt.k * d / (d - 1.0) + family.log_growth_const(sign.forward()).max(0.0) / (d - 1.0)
}

/// `H^±_{n,Λ}(z)`, maps applied for `λ_1, ..., λ_n` in that order.
pub fn compose_n(
    family: &HenonFamily,
    seq: &ParameterSequence,
    n: usize,
    sign: Sign,
    z: &ComplexPoint2,
) -> Result<ComplexPoint2> {
    seq.terms()
        .take(n)
        .try_fold(*z, |w, l| family.at(&l)?.eval_signed(&w, sign.forward()))
}

/// State of an orbit under random iteration, switching to log coordinates
/// once the dominant coordinate is deep in the escape region.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tracked {
    Exact(ComplexPoint2),
    /// `log |w|` of the dominant coordinate with an absolute error bound.
    Deep { log_dom: f64, err: f64 },
}

/// Orbit of `z` under `H^±_{n,Λ}`, n = 0, 1, 2, ...
pub struct OrbitTracker<'a> {
    family: &'a HenonFamily,
    terms: Terms<'a>,
    sign: Sign,
    r: f64,
    r_esc: f64,
    deep_b: f64,
    degree: f64,
    state: Tracked,
    step: usize,
}

impl<'a> OrbitTracker<'a> {
    pub fn new(
        family: &'a HenonFamily,
        seq: &'a ParameterSequence,
        sign: Sign,
        filt: &FiltrationData,
        z: ComplexPoint2,
    ) -> Self {
        Self {
            family,
            terms: seq.terms(),
            sign,
            r: filt.r,
            r_esc: filt.r_esc,
            deep_b: family.deep_remainder_const(sign.forward()),
            degree: family.degree() as f64,
            state: Tracked::Exact(z),
            step: 0,
        }
    }

    pub fn state(&self) -> Tracked {
        self.state
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Next parameter and the map it selects.
    fn next_map(&mut self) -> Composite<f64> {
        let l = self.terms.next().expect("sequences are infinite");
        self.family.at_unchecked(&l)
    }

    /// True when the exact point is deep enough for the asymptotic recursion to apply.
    pub fn is_deep(&self, z: &ComplexPoint2) -> bool {
        region(z, self.r) == escape_region(self.sign) && {
            let w = dominant(z, self.sign);
            w > self.r_esc && self.deep_b / w <= 0.25
        }
    }

    /// `log ‖H^±_{n,Λ}(z)‖` (max norm) with its absolute error.
    pub fn log_norm(&self) -> (f64, f64) {
        match self.state {
            Tracked::Exact(z) => (z.norm().ln(), 0.0),
            Tracked::Deep { log_dom, err } => (log_dom, err),
        }
    }

    pub fn advance(&mut self) -> Result<()> {
        let h = self.next_map();
        self.step += 1;
        self.state = match self.state {
            Tracked::Exact(z) => {
                if self.is_deep(&z) && dominant(&z, self.sign).ln() * self.degree > OVERFLOW_LOG {
                    let w = dominant(&z, self.sign);
                    let log_dom = self.degree * w.ln() + h.leading_log_coeff(self.sign.forward());
                    Tracked::Deep { log_dom, err: self.deep_b / w }
                } else {
                    Tracked::Exact(h.eval_signed(&z, self.sign.forward())?)
                }
            }
            Tracked::Deep { log_dom, err } => Tracked::Deep {
                log_dom: self.degree * log_dom + h.leading_log_coeff(self.sign.forward()),
                err: self.degree * err + self.deep_b * (-log_dom).exp(),
            },
        };
        Ok(())
    }

    /// The not-yet-consumed parameters, for analytic tails.
    fn peek_maps(&self, count: usize) -> Vec<Composite<f64>> {
        let mut t = self.terms.clone();
        (0..count).map(|_| self.family.at_unchecked(&t.next().expect("infinite"))).collect()
    }
}

/// Green function estimate with its certified truncation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenValue {
    pub value: f64,
    pub depth: usize,
    pub err_bound: f64,
}

/// Floating-point error of a value built over `depth` orbit steps: a few ulp per step.
fn rounding(value: f64, depth: usize) -> f64 {
    2.0 * f64::EPSILON * (depth as f64 + 4.0) * value.abs()
}

/// `G^±_Λ(z)` to absolute tolerance `tol`.
pub fn green_estimate(
    family: &HenonFamily,
    seq: &ParameterSequence,
    sign: Sign,
    z: &ComplexPoint2,
    tol: f64,
    filt: &FiltrationData,
) -> Result<GreenValue> {
    if !(tol > 0.0) {
        return Err(Error::arg("tol", "tolerance must be positive"));
    }
    let d = family.degree() as f64;
    let tail_factor = d / (d - 1.0);
    let log_c_bound = family.leading_log_coeff_bound(sign.forward());
    let deep_b = family.deep_remainder_const(sign.forward());
    let mut orbit = OrbitTracker::new(family, seq, sign, filt, *z);
    let mut scale = 1.0; // d^{-n}
    let mut zero_certified: Option<GreenValue> = None;
    loop {
        let n = orbit.step_count();
        let deep = match orbit.state() {
            Tracked::Exact(w) => orbit.is_deep(&w).then(|| (dominant(&w, sign).ln(), deep_b / dominant(&w, sign))),
            Tracked::Deep { log_dom, err } => Some((log_dom, err + deep_b * (-log_dom).exp())),
        };
        if let Some((log_dom, step_err)) = deep {
            let remainder = scale * (2.0 * step_err / d);
            let must_stop = matches!(orbit.state(), Tracked::Deep { .. }) || n >= MAX_DEPTH;
            if remainder <= tol / 2.0 || must_stop {
                // Σ_k d^{-k-1} log|C_{λ_{n+k+1}}| until the rest is below tol/4
                let mut tail = 0.0;
                let mut trunc = 0.0;
                if log_c_bound > 0.0 {
                    let mut count = 0usize;
                    while scale * log_c_bound * d.powi(-(count as i32) - 1) * tail_factor > tol / 4.0 {
                        count += 1;
                    }
                    for (k, h) in orbit.peek_maps(count).iter().enumerate() {
                        tail += d.powi(-(k as i32) - 1) * h.leading_log_coeff(sign.forward());
                    }
                    trunc = scale * log_c_bound * d.powi(-(count as i32) - 1) * tail_factor;
                }
                let value = (scale * (log_dom + tail)).max(0.0);
                let err_bound = remainder + trunc + scale * orbit.log_norm().1 + rounding(value, n);
                return Ok(GreenValue { value, depth: n, err_bound });
            }
        } else if let Tracked::Exact(w) = orbit.state() {
            if region(&w, filt.r) != escape_region(sign.opposite()) {
                let bound = filt.k * scale * tail_factor;
                if bound <= tol {
                    let value = scale * log_plus(w.norm());
                    let g = GreenValue { value, depth: n, err_bound: bound + rounding(value, n) };
                    // A zero estimate keeps iterating so slowly escaping orbits still
                    // report a positive value; every later depth is certified too.
                    if g.value > 0.0 || n >= MAX_DEPTH {
                        return Ok(g);
                    }
                    zero_certified = Some(g);
                }
            }
        }
        if n >= MAX_DEPTH {
            if let Some(g) = zero_certified {
                return Ok(g);
            }
            return Err(Error::Budget(format!("green estimate not certified within {MAX_DEPTH} steps")));
        }
        orbit.advance()?;
        scale /= d;
    }
}

/// `G^±_{n,Λ}(z)` for `n = 0..=n_max`, via the log-tracked orbit.
pub fn green_partial_sums(
    family: &HenonFamily,
    seq: &ParameterSequence,
    sign: Sign,
    z: &ComplexPoint2,
    n_max: usize,
    filt: &FiltrationData,
) -> Result<Vec<f64>> {
    let d = family.degree() as f64;
    let mut orbit = OrbitTracker::new(family, seq, sign, filt, *z);
    let mut out = Vec::with_capacity(n_max + 1);
    let mut scale = 1.0;
    for n in 0..=n_max {
        let (ln, _) = orbit.log_norm();
        out.push(scale * ln.max(0.0));
        if n < n_max {
            orbit.advance()?;
            scale /= d;
        }
    }
    Ok(out)
}

/// Escape verdict for a finite orbit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum OrbitClassification {
    /// Entered `V_R^±` first at `step`.
    Escaped { step: usize, sign: Sign },
    BoundedUpTo { n_max: usize },
    Undecided,
}

pub fn classify_point(
    family: &HenonFamily,
    seq: &ParameterSequence,
    sign: Sign,
    z: &ComplexPoint2,
    n_max: usize,
    filt: &FiltrationData,
) -> OrbitClassification {
    let mut w = *z;
    let mut terms = seq.terms();
    for step in 0..=n_max {
        if !w.is_finite() {
            return OrbitClassification::Undecided;
        }
        if region(&w, filt.r) == escape_region(sign) {
            return OrbitClassification::Escaped { step, sign };
        }
        if step == n_max {
            break;
        }
        let h = family.at_unchecked(&terms.next().expect("infinite"));
        w = match h.eval_signed(&w, sign.forward()) {
            Ok(w) => w,
            Err(_) => return OrbitClassification::Undecided,
        };
    }
    OrbitClassification::BoundedUpTo { n_max }
}

/// Row-major grid of estimates at slice cell centers.
pub fn green_grid(
    family: &HenonFamily,
    seq: &ParameterSequence,
    sign: Sign,
    slice: &SliceSpec,
    tol: f64,
    filt: &FiltrationData,
) -> Result<Vec<GreenValue>> {
    slice.validate()?;
    let cells: Vec<Complex64> = slice.cells().map(|(_, _, t)| t).collect();
    cells
        .par_iter()
        .map(|t| green_estimate(family, seq, sign, &slice.point(*t), tol, filt))
        .collect()
}
