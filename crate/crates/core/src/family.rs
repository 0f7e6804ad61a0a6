//! Parameter domains `M`, base homeomorphisms `σ`, and continuous families `λ -> H_λ`.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{Composite, Factor};

const MEMBERSHIP_TOL: f64 = 1e-9;

/// A point `λ ∈ M ⊂ C^k`.
///
/// On the circle and the torus the point also carries its angle coordinates
/// (in turns, each in `[0, 1)`); the base maps act on those exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    coords: Vec<Complex64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    angles: Vec<f64>,
}

impl ParameterPoint {
    pub fn new(coords: Vec<Complex64>) -> Self {
        Self { coords, angles: Vec::new() }
    }

    /// Point on `(S¹)^k` given by angles in turns.
    pub fn from_angles(angles: &[f64]) -> Self {
        let angles: Vec<f64> = angles.iter().map(|t| t.rem_euclid(1.0)).collect();
        let coords = angles.iter().map(|t| Complex64::from_polar(1.0, TAU * t)).collect();
        Self { coords, angles }
    }

    pub fn coords(&self) -> &[Complex64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Angle coordinates, recovered from the coordinates when not stored.
    pub fn angles(&self) -> Vec<f64> {
        if !self.angles.is_empty() {
            return self.angles.clone();
        }
        self.coords
            .iter()
            .map(|c| (c.arg() / TAU).rem_euclid(1.0))
            .collect()
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// The compact parameter space `M` with its normalized sampling measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParameterDomain {
    Singleton { point: Vec<Complex64> },
    /// Unit circle in C with Haar measure.
    Circle,
    /// `S¹ × S¹ ⊂ C²` with Haar measure.
    Torus,
    /// Product of real intervals embedded in C^k, Lebesgue measure.
    Box { intervals: Vec<(f64, f64)> },
    /// Finite set with counting measure.
    Finite { points: Vec<Vec<Complex64>> },
}

impl ParameterDomain {
    pub fn singleton_origin() -> Self {
        ParameterDomain::Singleton { point: vec![Complex64::new(0.0, 0.0)] }
    }

    pub fn dim(&self) -> usize {
        match self {
            ParameterDomain::Singleton { point } => point.len(),
            ParameterDomain::Circle => 1,
            ParameterDomain::Torus => 2,
            ParameterDomain::Box { intervals } => intervals.len(),
            ParameterDomain::Finite { points } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ParameterDomain::Box { intervals } => {
                if intervals.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
                    return Err(Error::Domain("box interval must satisfy lo <= hi".into()));
                }
            }
            ParameterDomain::Finite { points } => {
                if points.is_empty() {
                    return Err(Error::Domain("finite domain is empty".into()));
                }
                let k = points[0].len();
                if points.iter().any(|p| p.len() != k) {
                    return Err(Error::Domain("finite domain points differ in dimension".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn contains(&self, p: &ParameterPoint) -> bool {
        if p.dim() != self.dim() {
            return false;
        }
        let c = p.coords();
        match self {
            ParameterDomain::Singleton { point } => {
                c.iter().zip(point).all(|(a, b)| (a - b).norm() <= MEMBERSHIP_TOL)
            }
            ParameterDomain::Circle | ParameterDomain::Torus => {
                c.iter().all(|a| (a.norm() - 1.0).abs() <= MEMBERSHIP_TOL)
            }
            ParameterDomain::Box { intervals } => c.iter().zip(intervals).all(|(a, (lo, hi))| {
                a.im.abs() <= MEMBERSHIP_TOL
                    && a.re >= lo - MEMBERSHIP_TOL
                    && a.re <= hi + MEMBERSHIP_TOL
            }),
            ParameterDomain::Finite { points } => points.iter().any(|q| {
                q.iter().zip(c).all(|(a, b)| (a - b).norm() <= MEMBERSHIP_TOL)
            }),
        }
    }

    /// Draws from the normalized measure on `M`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterPoint {
        match self {
            ParameterDomain::Singleton { point } => ParameterPoint::new(point.clone()),
            ParameterDomain::Circle => ParameterPoint::from_angles(&[rng.gen::<f64>()]),
            ParameterDomain::Torus => ParameterPoint::from_angles(&[rng.gen::<f64>(), rng.gen::<f64>()]),
            ParameterDomain::Box { intervals } => ParameterPoint::new(
                intervals
                    .iter()
                    .map(|(lo, hi)| Complex64::new(lo + (hi - lo) * rng.gen::<f64>(), 0.0))
                    .collect(),
            ),
            ParameterDomain::Finite { points } => {
                ParameterPoint::new(points[rng.gen_range(0..points.len())].clone())
            }
        }
    }

    /// Deterministic covering sample used by the filtration search.
    pub fn grid(&self, per_axis: usize) -> Vec<ParameterPoint> {
        let per_axis = per_axis.max(1);
        let ts: Vec<f64> = (0..per_axis).map(|i| i as f64 / per_axis as f64).collect();
        match self {
            ParameterDomain::Singleton { point } => vec![ParameterPoint::new(point.clone())],
            ParameterDomain::Circle => ts.iter().map(|t| ParameterPoint::from_angles(&[*t])).collect(),
            ParameterDomain::Torus => ts
                .iter()
                .flat_map(|a| ts.iter().map(move |b| ParameterPoint::from_angles(&[*a, *b])))
                .collect(),
            ParameterDomain::Box { intervals } => {
                let mut out = vec![Vec::new()];
                for (lo, hi) in intervals {
                    let vals: Vec<f64> = if per_axis == 1 {
                        vec![0.5 * (lo + hi)]
                    } else {
                        (0..per_axis)
                            .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                            .collect()
                    };
                    out = out
                        .into_iter()
                        .flat_map(|p: Vec<Complex64>| {
                            vals.iter().map(move |v| {
                                let mut q = p.clone();
                                q.push(Complex64::new(*v, 0.0));
                                q
                            })
                        })
                        .collect();
                }
                out.into_iter().map(ParameterPoint::new).collect()
            }
            ParameterDomain::Finite { points } => points.iter().cloned().map(ParameterPoint::new).collect(),
        }
    }

    /// Ranges of `(Re λ_k, Im λ_k)` over the domain, `None` for discrete domains.
    fn re_im_ranges(&self) -> Option<Vec<((f64, f64), (f64, f64))>> {
        match self {
            ParameterDomain::Circle => Some(vec![((-1.0, 1.0), (-1.0, 1.0))]),
            ParameterDomain::Torus => Some(vec![((-1.0, 1.0), (-1.0, 1.0)); 2]),
            ParameterDomain::Box { intervals } => {
                Some(intervals.iter().map(|&(lo, hi)| ((lo, hi), (0.0, 0.0))).collect())
            }
            _ => None,
        }
    }

    pub(crate) fn discrete_points(&self) -> Vec<ParameterPoint> {
        match self {
            ParameterDomain::Singleton { point } => vec![ParameterPoint::new(point.clone())],
            ParameterDomain::Finite { points } => points.iter().cloned().map(ParameterPoint::new).collect(),
            _ => Vec::new(),
        }
    }

    /// Number of real tangent directions of the base (angles or box coordinates).
    pub fn tangent_dim(&self) -> usize {
        match self {
            ParameterDomain::Circle => 1,
            ParameterDomain::Torus => 2,
            ParameterDomain::Box { intervals } => intervals.len(),
            _ => 0,
        }
    }

    /// `∂λ_k/∂θ_j` for each real tangent direction `θ_j`, as complex numbers.
    pub fn coord_derivatives(&self, p: &ParameterPoint) -> Vec<Vec<Complex64>> {
        let k = self.dim();
        match self {
            ParameterDomain::Circle | ParameterDomain::Torus => (0..k)
                .map(|j| {
                    let mut v = vec![Complex64::new(0.0, 0.0); k];
                    v[j] = Complex64::new(0.0, TAU) * p.coords()[j];
                    v
                })
                .collect(),
            ParameterDomain::Box { .. } => (0..k)
                .map(|j| {
                    let mut v = vec![Complex64::new(0.0, 0.0); k];
                    v[j] = Complex64::new(1.0, 0.0);
                    v
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// The base homeomorphism `σ : M -> M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseDynamics {
    Identity,
    /// `λ -> e^{2πiα} λ` on the circle.
    Rotation { alpha: f64 },
    /// Integer matrix with determinant ±1 acting on torus angles.
    TorusAutomorphism { matrix: [[i64; 2]; 2] },
    /// `points[i] -> points[perm[i]]` on a finite domain.
    Permutation { perm: Vec<usize> },
}

impl BaseDynamics {
    pub fn validate(&self, domain: &ParameterDomain) -> Result<()> {
        match (self, domain) {
            (BaseDynamics::Identity, _) => Ok(()),
            (BaseDynamics::Rotation { alpha }, ParameterDomain::Circle) if alpha.is_finite() => Ok(()),
            (BaseDynamics::TorusAutomorphism { matrix: m }, ParameterDomain::Torus) => {
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                if det.abs() == 1 {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("torus automorphism determinant {det} is not ±1")))
                }
            }
            (BaseDynamics::Permutation { perm }, ParameterDomain::Finite { points }) => {
                let mut seen = vec![false; points.len()];
                if perm.len() != points.len() {
                    return Err(Error::Domain("permutation length differs from domain size".into()));
                }
                for &i in perm {
                    if i >= seen.len() || seen[i] {
                        return Err(Error::Domain("not a permutation".into()));
                    }
                    seen[i] = true;
                }
                Ok(())
            }
            _ => Err(Error::Domain(format!(
                "base dynamics {self:?} incompatible with domain {domain:?}"
            ))),
        }
    }

    fn inverse_matrix(m: &[[i64; 2]; 2]) -> [[i64; 2]; 2] {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        [[det * m[1][1], -det * m[0][1]], [-det * m[1][0], det * m[0][0]]]
    }

    fn act(&self, domain: &ParameterDomain, p: &ParameterPoint, forward: bool) -> Result<ParameterPoint> {
        if !domain.contains(p) {
            return Err(Error::Domain(format!("{:?} not in domain", p.coords())));
        }
        Ok(match self {
            BaseDynamics::Identity => p.clone(),
            BaseDynamics::Rotation { alpha } => {
                let t = p.angles()[0];
                ParameterPoint::from_angles(&[if forward { t + alpha } else { t - alpha }])
            }
            BaseDynamics::TorusAutomorphism { matrix } => {
                let m = if forward { *matrix } else { Self::inverse_matrix(matrix) };
                let t = p.angles();
                ParameterPoint::from_angles(&[
                    m[0][0] as f64 * t[0] + m[0][1] as f64 * t[1],
                    m[1][0] as f64 * t[0] + m[1][1] as f64 * t[1],
                ])
            }
            BaseDynamics::Permutation { perm } => {
                let ParameterDomain::Finite { points } = domain else {
                    return Err(Error::Domain("permutation needs a finite domain".into()));
                };
                let idx = points
                    .iter()
                    .position(|q| ParameterPoint::new(q.clone()).dist(p) <= MEMBERSHIP_TOL)
                    .ok_or_else(|| Error::Domain("point not in finite domain".into()))?;
                let target = if forward {
                    perm[idx]
                } else {
                    perm.iter().position(|&j| j == idx).expect("validated permutation")
                };
                ParameterPoint::new(points[target].clone())
            }
        })
    }

    pub fn step(&self, domain: &ParameterDomain, p: &ParameterPoint) -> Result<ParameterPoint> {
        self.act(domain, p, true)
    }

    pub fn inverse_step(&self, domain: &ParameterDomain, p: &ParameterPoint) -> Result<ParameterPoint> {
        self.act(domain, p, false)
    }

    /// `σ^n` for signed `n`.
    pub fn iterate(&self, domain: &ParameterDomain, p: &ParameterPoint, n: i64) -> Result<ParameterPoint> {
        let mut q = p.clone();
        for _ in 0..n.unsigned_abs() {
            q = self.act(domain, &q, n > 0)?;
        }
        Ok(q)
    }

    /// Derivative of `σ` on the real tangent coordinates of the base.
    pub fn tangent_matrix(&self, domain: &ParameterDomain) -> Vec<Vec<f64>> {
        let k = domain.tangent_dim();
        match self {
            BaseDynamics::TorusAutomorphism { matrix } => {
                matrix.iter().map(|row| row.iter().map(|v| *v as f64).collect()).collect()
            }
            _ => (0..k)
                .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        }
    }

    /// Largest Lyapunov exponent of `σ` for the Haar/counting measure.
    pub fn lyapunov_exponent(&self) -> f64 {
        match self {
            BaseDynamics::TorusAutomorphism { matrix: m } => {
                let tr = (m[0][0] + m[1][1]) as f64;
                let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) as f64;
                let disc = tr * tr - 4.0 * det;
                if disc <= 0.0 {
                    // complex pair of modulus sqrt|det| = 1
                    0.0
                } else {
                    let l1 = ((tr + disc.sqrt()) / 2.0).abs();
                    let l2 = ((tr - disc.sqrt()) / 2.0).abs();
                    l1.max(l2).ln().max(0.0)
                }
            }
            _ => 0.0,
        }
    }
}

/// Affine function of the real and imaginary parts of `λ`'s coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCoeff {
    pub constant: Complex64,
    /// Weight of `Re λ_k`.
    #[serde(default)]
    pub re: Vec<Complex64>,
    /// Weight of `Im λ_k`.
    #[serde(default)]
    pub im: Vec<Complex64>,
}

impl AffineCoeff {
    pub fn constant(c: Complex64) -> Self {
        Self { constant: c, re: Vec::new(), im: Vec::new() }
    }

    pub fn real(c: f64) -> Self {
        Self::constant(Complex64::new(c, 0.0))
    }

    pub fn eval(&self, p: &ParameterPoint) -> Complex64 {
        let mut v = self.constant;
        for (w, l) in self.re.iter().zip(p.coords()) {
            v += w * l.re;
        }
        for (w, l) in self.im.iter().zip(p.coords()) {
            v += w * l.im;
        }
        v
    }

    /// Directional derivative given `∂λ/∂θ`.
    pub fn derivative(&self, dlambda: &[Complex64]) -> Complex64 {
        let mut v = Complex64::new(0.0, 0.0);
        for (w, l) in self.re.iter().zip(dlambda) {
            v += w * l.re;
        }
        for (w, l) in self.im.iter().zip(dlambda) {
            v += w * l.im;
        }
        v
    }

    /// Interval enclosure of `(Re, Im)` over a box of `(Re λ, Im λ)` ranges.
    fn enclosure(&self, ranges: &[((f64, f64), (f64, f64))]) -> ((f64, f64), (f64, f64)) {
        let mut re = (self.constant.re, self.constant.re);
        let mut im = (self.constant.im, self.constant.im);
        let mut add = |w: Complex64, (lo, hi): (f64, f64)| {
            let (a, b) = (w.re * lo, w.re * hi);
            re.0 += a.min(b);
            re.1 += a.max(b);
            let (a, b) = (w.im * lo, w.im * hi);
            im.0 += a.min(b);
            im.1 += a.max(b);
        };
        for (w, r) in self.re.iter().zip(ranges) {
            add(*w, r.0);
        }
        for (w, r) in self.im.iter().zip(ranges) {
            add(*w, r.1);
        }
        (re, im)
    }

    /// Upper bound of `|value|` over the domain.
    fn sup_abs(&self, domain: &ParameterDomain) -> f64 {
        match domain.re_im_ranges() {
            Some(r) => {
                let (re, im) = self.enclosure(&r);
                let mr = re.0.abs().max(re.1.abs());
                let mi = im.0.abs().max(im.1.abs());
                (mr * mr + mi * mi).sqrt()
            }
            None => domain
                .discrete_points()
                .iter()
                .map(|p| self.eval(p).norm())
                .fold(0.0, f64::max),
        }
    }

    /// Lower bound of `|value|` over the domain (0 when vanishing cannot be excluded).
    fn inf_abs(&self, domain: &ParameterDomain) -> f64 {
        match domain.re_im_ranges() {
            Some(r) => {
                let (re, im) = self.enclosure(&r);
                let dist = |(lo, hi): (f64, f64)| {
                    if lo <= 0.0 && hi >= 0.0 {
                        0.0
                    } else {
                        lo.abs().min(hi.abs())
                    }
                };
                let (dr, di) = (dist(re), dist(im));
                (dr * dr + di * di).sqrt()
            }
            None => domain
                .discrete_points()
                .iter()
                .map(|p| self.eval(p).norm())
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Coefficient rule for one factor: `p(y) = y^d + Σ lower[i] y^i`, `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorRule {
    pub lower: Vec<AffineCoeff>,
    pub a: AffineCoeff,
}

/// Per-factor magnitude bounds over the whole domain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorBounds {
    pub degree: usize,
    pub coeff_sum_sup: f64,
    pub a_sup: f64,
    pub a_inf: f64,
}

/// A continuous family `λ -> H_λ` over a compact domain.
#[derive(Clone, Debug, PartialEq)]
pub struct HenonFamily {
    domain: ParameterDomain,
    rules: Vec<FactorRule>,
    builtin: Option<String>,
    bounds: Vec<FactorBounds>,
}

impl HenonFamily {
    pub fn new(domain: ParameterDomain, rules: Vec<FactorRule>) -> Result<Self> {
        domain.validate()?;
        if rules.is_empty() {
            return Err(Error::InvalidMap("family needs at least one factor".into()));
        }
        let k = domain.dim();
        let mut bounds = Vec::with_capacity(rules.len());
        for (j, rule) in rules.iter().enumerate() {
            if rule.lower.len() < 2 {
                return Err(Error::InvalidMap(format!("factors[{j}]: degree {} < 2", rule.lower.len())));
            }
            for (name, c) in rule
                .lower
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("factors[{j}].lower[{i}]"), c))
                .chain(std::iter::once((format!("factors[{j}].a"), &rule.a)))
            {
                if c.re.len() > k || c.im.len() > k {
                    return Err(Error::InvalidMap(format!("{name}: more weights than parameter coordinates")));
                }
            }
            let a_inf = rule.a.inf_abs(&domain);
            if !(a_inf > 0.0) {
                return Err(Error::VanishingCoefficient { coefficient: format!("factors[{j}].a") });
            }
            bounds.push(FactorBounds {
                degree: rule.lower.len(),
                coeff_sum_sup: rule.lower.iter().map(|c| c.sup_abs(&domain)).sum(),
                a_sup: rule.a.sup_abs(&domain),
                a_inf,
            });
        }
        Ok(Self { domain, rules, builtin: None, bounds })
    }

    fn with_builtin(mut self, name: &str) -> Self {
        self.builtin = Some(name.to_string());
        self
    }

    /// Single map `p(y) = y^degree + c`, coefficient `a`, over a one-point domain.
    pub fn single(degree: usize, c: Complex64, a: Complex64) -> Result<Self> {
        let mut lower = vec![AffineCoeff::real(0.0); degree];
        if degree > 0 {
            lower[0] = AffineCoeff::constant(c);
        }
        Self::new(
            ParameterDomain::singleton_origin(),
            vec![FactorRule { lower, a: AffineCoeff::constant(a) }],
        )
        .map(|f| f.with_builtin("single"))
    }

    /// `p_λ(y) = y² + c₀ + c₁ Re λ`, `a(λ) = a₀` on the unit circle.
    pub fn quadratic_circle(c0: f64, c1: f64, a0: f64) -> Result<Self> {
        let c = AffineCoeff {
            constant: Complex64::new(c0, 0.0),
            re: vec![Complex64::new(c1, 0.0)],
            im: Vec::new(),
        };
        Self::new(
            ParameterDomain::Circle,
            vec![FactorRule { lower: vec![c, AffineCoeff::real(0.0)], a: AffineCoeff::real(a0) }],
        )
        .map(|f| f.with_builtin("quadratic-circle"))
    }

    /// `p_λ(y) = y² + c₀ + c₁ Re λ₁ + c₂ Re λ₂`, `a(λ) = a₀` on the torus.
    pub fn quadratic_torus(c0: f64, c1: f64, c2: f64, a0: f64) -> Result<Self> {
        let c = AffineCoeff {
            constant: Complex64::new(c0, 0.0),
            re: vec![Complex64::new(c1, 0.0), Complex64::new(c2, 0.0)],
            im: Vec::new(),
        };
        Self::new(
            ParameterDomain::Torus,
            vec![FactorRule { lower: vec![c, AffineCoeff::real(0.0)], a: AffineCoeff::real(a0) }],
        )
        .map(|f| f.with_builtin("quadratic-torus"))
    }

    pub fn domain(&self) -> &ParameterDomain {
        &self.domain
    }

    pub fn rules(&self) -> &[FactorRule] {
        &self.rules
    }

    pub fn builtin(&self) -> Option<&str> {
        self.builtin.as_deref()
    }

    pub fn bounds(&self) -> &[FactorBounds] {
        &self.bounds
    }

    /// Total degree `d`, independent of `λ`.
    pub fn degree(&self) -> usize {
        self.rules.iter().map(|r| r.lower.len()).product()
    }

    /// `H_λ`.
    pub fn at(&self, lambda: &ParameterPoint) -> Result<Composite<f64>> {
        if !self.domain.contains(lambda) {
            return Err(Error::Domain(format!("{:?} not in {:?}", lambda.coords(), self.domain)));
        }
        Ok(self.at_unchecked(lambda))
    }

    /// `H_λ` without the membership check, for hot loops over points produced by the domain itself.
    pub(crate) fn at_unchecked(&self, lambda: &ParameterPoint) -> Composite<f64> {
        let factors = self
            .rules
            .iter()
            .map(|r| {
                Factor::new(r.lower.iter().map(|c| c.eval(lambda)).collect(), r.a.eval(lambda))
                    .expect("family invariants guarantee a valid factor")
            })
            .collect();
        Composite::new(factors).expect("non-empty")
    }

    /// `∂H_λ(z)/∂θ_j` per factor rule, given `∂λ/∂θ_j`: returns derivative rules
    /// (coefficient derivatives of `lower` and `a`).
    pub(crate) fn coefficient_derivatives(&self, dlambda: &[Complex64]) -> Vec<(Vec<Complex64>, Complex64)> {
        self.rules
            .iter()
            .map(|r| (r.lower.iter().map(|c| c.derivative(dlambda)).collect(), r.a.derivative(dlambda)))
            .collect()
    }

    /// Family-wide `B` of [`Composite::deep_remainder_const`].
    pub fn deep_remainder_const(&self, forward: bool) -> f64 {
        let mut b = 0.0;
        let mut tail = 1.0;
        let bounds: Vec<&FactorBounds> = if forward {
            self.bounds.iter().rev().collect()
        } else {
            self.bounds.iter().collect()
        };
        for f in bounds {
            let bj = if forward { f.coeff_sum_sup + f.a_sup } else { f.coeff_sum_sup + 1.0 };
            b += tail * 2.0 * bj;
            tail *= f.degree as f64;
        }
        b
    }

    /// Family-wide `log B` of [`Composite::log_growth_const`].
    pub fn log_growth_const(&self, forward: bool) -> f64 {
        let bounds: Vec<&FactorBounds> = if forward {
            self.bounds.iter().collect()
        } else {
            self.bounds.iter().rev().collect()
        };
        bounds.into_iter().fold(0.0, |acc, f| {
            let bj = if forward {
                1.0 + f.coeff_sum_sup + f.a_sup
            } else {
                (2.0 + f.coeff_sum_sup) / f.a_inf.min(1.0)
            };
            f.degree as f64 * acc + bj.ln()
        })
    }

    /// Upper bound of `|log|C_λ||` over the domain.
    pub fn leading_log_coeff_bound(&self, forward: bool) -> f64 {
        if forward {
            return 0.0;
        }
        self.bounds.iter().rev().fold(0.0, |acc, f| {
            f.degree as f64 * acc + f.a_sup.ln().abs().max(f.a_inf.ln().abs())
        })
    }
}
