//! Green currents probed along complex lines.
//!
//! Currents only appear through potentials: a pairing `⟨(1/2π) dd^c v, φ⟩` on a
//! slice is `∫ v Δφ dA / 2π`, and slice masses are discrete Laplacians.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::averaging::sampled_sequence;
use crate::error::{Error, Result};
use crate::family::{BaseDynamics, HenonFamily, ParameterDomain, ParameterPoint};
use crate::green::{green_estimate, region, FiltrationData, OrbitTracker, Region, Sign, Tracked};
use crate::maps::Composite;
use crate::sequence::{OrbitDirection, ParameterSequence};
use crate::slice::SliceSpec;
use crate::ComplexPoint2;

const TAU: f64 = std::f64::consts::TAU;

/// Cell masses of `(1/2π) Δu` on a slice grid; boundary cells carry no mass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMeasureField {
    pub nx: usize,
    pub ny: usize,
    /// Row-major, `j` outer.
    pub masses: Vec<f64>,
    pub total_mass: f64,
    /// Negative mass removed by [`SliceMeasureField::clamped`] (0 for raw fields).
    pub clamped_mass: f64,
}

impl SliceMeasureField {
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.masses[j * self.nx + i]
    }

    pub fn negative_mass(&self) -> f64 {
        self.masses.iter().filter(|m| **m < 0.0).map(|m| -m).sum()
    }

    /// Negative cells set to zero; the removed mass is recorded.
    pub fn clamped(&self) -> Self {
        let masses: Vec<f64> = self.masses.iter().map(|m| m.max(0.0)).collect();
        Self {
            nx: self.nx,
            ny: self.ny,
            total_mass: masses.iter().sum(),
            clamped_mass: self.clamped_mass + self.negative_mass(),
            masses,
        }
    }
}

/// Five-point Laplacian × cell area / 2π at interior cells of a row-major grid.
pub fn slice_laplacian_measure(values: &[f64], nx: usize, ny: usize, hx: f64, hy: f64) -> Result<SliceMeasureField> {
    if nx < 3 || ny < 3 {
        return Err(Error::arg("grid", "slice Laplacian needs at least 3×3 cells"));
    }
    if values.len() != nx * ny {
        return Err(Error::arg("grid", format!("expected {} values, got {}", nx * ny, values.len())));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::arg("cell size", "cell sizes must be positive"));
    }
    let u = |i: usize, j: usize| values[j * nx + i];
    let mut masses = vec![0.0; nx * ny];
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            let c = u(i, j);
            let lap = (u(i + 1, j) - 2.0 * c + u(i - 1, j)) / (hx * hx) + (u(i, j + 1) - 2.0 * c + u(i, j - 1)) / (hy * hy);
            masses[j * nx + i] = lap * hx * hy / TAU;
        }
    }
    Ok(SliceMeasureField { nx, ny, total_mass: masses.iter().sum(), masses, clamped_mass: 0.0 })
}

pub fn slice_measure(values: &[f64], slice: &SliceSpec) -> Result<SliceMeasureField> {
    slice_laplacian_measure(values, slice.nx, slice.ny, slice.hx(), slice.hy())
}

/// Monomial `coeff · x^x_pow · y^y_pow`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub x_pow: u32,
    pub y_pow: u32,
    pub coeff: Complex64,
}

/// Catalog of quasi-potentials with logarithmic growth, bounded (after subtracting
/// `log‖z‖`) near the point at infinity where `|y| ≫ |x|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QuasiPotentialSpec {
    /// `log⁺|y|`
    LogPlusY,
    /// `(1/deg P) log|P(x, y)|`
    Poly { terms: Vec<PolyTerm> },
    /// `log⁺|y - c|`
    LogPlusYMinusC { c: Complex64 },
}

impl QuasiPotentialSpec {
    /// `P(x, y) = y² - x`.
    pub fn y_squared_minus_x() -> Self {
        QuasiPotentialSpec::Poly {
            terms: vec![
                PolyTerm { x_pow: 0, y_pow: 2, coeff: Complex64::new(1.0, 0.0) },
                PolyTerm { x_pow: 1, y_pow: 0, coeff: Complex64::new(-1.0, 0.0) },
            ],
        }
    }

    fn poly_degree(terms: &[PolyTerm]) -> u32 {
        terms.iter().filter(|t| t.coeff != Complex64::new(0.0, 0.0)).map(|t| t.x_pow + t.y_pow).max().unwrap_or(0)
    }

    /// Coefficient of `y^deg`; nonzero exactly when the potential is bounded near `[0:1:0]`.
    fn leading_y_coeff(terms: &[PolyTerm]) -> Complex64 {
        let deg = Self::poly_degree(terms);
        terms.iter().filter(|t| t.x_pow == 0 && t.y_pow == deg).map(|t| t.coeff).sum()
    }

    /// Rejects polynomials outside the catalog: the growth/boundedness hypothesis needs a `y^deg` term.
    pub fn validate(&self) -> Result<()> {
        match self {
            QuasiPotentialSpec::Poly { terms } => {
                if terms.iter().any(|t| !(t.coeff.re.is_finite() && t.coeff.im.is_finite())) {
                    return Err(Error::arg("potential", "non-finite coefficient"));
                }
                if Self::poly_degree(terms) == 0 {
                    return Err(Error::arg("potential", "polynomial must be nonconstant"));
                }
                if Self::leading_y_coeff(terms).norm() == 0.0 {
                    return Err(Error::arg(
                        "potential",
                        "polynomial needs a y^deg monomial (otherwise unbounded near the indeterminacy point)",
                    ));
                }
                Ok(())
            }
            QuasiPotentialSpec::LogPlusYMinusC { c } if !(c.re.is_finite() && c.im.is_finite()) => {
                Err(Error::arg("potential", "non-finite shift"))
            }
            _ => Ok(()),
        }
    }

    pub fn bounded_near_indeterminacy(&self) -> bool {
        self.validate().is_ok()
    }

    pub fn eval(&self, z: &ComplexPoint2) -> f64 {
        match self {
            QuasiPotentialSpec::LogPlusY => z.y.norm().ln().max(0.0),
            QuasiPotentialSpec::LogPlusYMinusC { c } => (z.y - c).norm().ln().max(0.0),
            QuasiPotentialSpec::Poly { terms } => {
                // factor out s^deg so large arguments do not overflow
                let deg = Self::poly_degree(terms);
                let s = z.norm().max(1.0);
                let (x, y) = (z.x / s, z.y / s);
                let v: Complex64 = terms
                    .iter()
                    .map(|t| t.coeff * x.powu(t.x_pow) * y.powu(t.y_pow) * s.powi(t.x_pow as i32 + t.y_pow as i32 - deg as i32))
                    .sum();
                (deg as f64 * s.ln() + v.norm().ln()) / deg as f64
            }
        }
    }

    /// Value at a point with `log|y| = log_y`, deep in the forward escape region.
    pub fn eval_deep(&self, log_y: f64) -> f64 {
        match self {
            QuasiPotentialSpec::LogPlusY | QuasiPotentialSpec::LogPlusYMinusC { .. } => log_y.max(0.0),
            QuasiPotentialSpec::Poly { terms } => {
                log_y + Self::leading_y_coeff(terms).norm().ln() / Self::poly_degree(terms) as f64
            }
        }
    }
}

/// Radial test function `φ(t) = (1 - |t - c|²/r²)³` on the slice coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub center: Complex64,
    pub radius: f64,
}

impl RadialBump {
    pub fn new(center: Complex64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::arg("radius", "bump radius must be positive"));
        }
        Ok(Self { center, radius })
    }

    pub fn value(&self, t: Complex64) -> f64 {
        let q = 1.0 - (t - self.center).norm_sqr() / (self.radius * self.radius);
        if q > 0.0 {
            q * q * q
        } else {
            0.0
        }
    }

    pub fn laplacian(&self, t: Complex64) -> f64 {
        let r2 = self.radius * self.radius;
        let s2 = (t - self.center).norm_sqr();
        let q = 1.0 - s2 / r2;
        if q > 0.0 {
            -12.0 * q * q / r2 + 24.0 * s2 * q / (r2 * r2)
        } else {
            0.0
        }
    }

    /// `sup|φ| + sup|∇φ|`.
    pub fn c1_norm(&self) -> f64 {
        1.0 + 96.0 / (25.0 * 5f64.sqrt() * self.radius)
    }

    /// Support contained in the slice window.
    pub fn fits(&self, slice: &SliceSpec) -> bool {
        let (c, r) = (self.center, self.radius);
        c.re - r >= slice.re.0 && c.re + r <= slice.re.1 && c.im - r >= slice.im.0 && c.im + r <= slice.im.1
    }
}

/// Midpoint rule for `∫ v Δφ dA / 2π` on the slice grid.
pub fn pair_potential(values: &[f64], slice: &SliceSpec, bump: &RadialBump) -> Result<f64> {
    if values.len() != slice.len() {
        return Err(Error::arg("grid", "value grid does not match slice"));
    }
    let area = slice.cell_area();
    Ok(slice
        .cells()
        .zip(values)
        .map(|((_, _, t), v)| {
            let l = bump.laplacian(t);
            if l == 0.0 {
                0.0
            } else {
                v * l
            }
        })
        .sum::<f64>()
        * area
        / TAU)
}

/// `d^{-n} u(H⁺_{n,Λ}(z))`, overflow-safe.
pub fn pullback_potential(
    family: &HenonFamily,
    seq: &ParameterSequence,
    u: &QuasiPotentialSpec,
    n: usize,
    z: &ComplexPoint2,
    filt: &FiltrationData,
) -> Result<f64> {
    let mut orbit = OrbitTracker::new(family, seq, Sign::Plus, filt, *z);
    for _ in 0..n {
        orbit.advance()?;
    }
    let v = match orbit.state() {
        Tracked::Exact(w) => u.eval(&w),
        Tracked::Deep { log_dom, .. } => u.eval_deep(log_dom),
    };
    Ok(v * (family.degree() as f64).powi(-(n as i32)))
}

/// Indices of slice cells inside the support of `bump`.
fn support_cells(slice: &SliceSpec, bump: &RadialBump) -> Vec<(usize, Complex64)> {
    slice
        .cells()
        .enumerate()
        .filter(|(_, (_, _, t))| bump.laplacian(*t) != 0.0)
        .map(|(k, (_, _, t))| (k, t))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairingPoint {
    pub n: usize,
    pub error: f64,
}

/// `e_n = |⟨d^{-n}(H⁺_{n,Λ})^* S - μ⁺_Λ, φ⟩|` for each requested `n`, sharing one Green grid.
#[allow(clippy::too_many_arguments)]
pub fn pullback_pairing_errors(
    family: &HenonFamily,
    seq: &ParameterSequence,
    u: &QuasiPotentialSpec,
    ns: &[usize],
    bump: &RadialBump,
    slice: &SliceSpec,
    filt: &FiltrationData,
    green_tol: f64,
) -> Result<Vec<PairingPoint>> {
    u.validate()?;
    slice.validate()?;
    if !bump.fits(slice) {
        return Err(Error::arg("bump", "test function support leaves the slice window"));
    }
    let cells = support_cells(slice, bump);
    let green: Vec<f64> = cells
        .par_iter()
        .map(|(_, t)| green_estimate(family, seq, Sign::Plus, &slice.point(*t), green_tol, filt).map(|g| g.value))
        .collect::<Result<_>>()?;
    let area = slice.cell_area();
    ns.iter()
        .map(|&n| {
            let diffs: Vec<f64> = cells
                .par_iter()
                .zip(&green)
                .map(|((_, t), g)| {
                    let v = pullback_potential(family, seq, u, n, &slice.point(*t), filt)?;
                    Ok((v - g) * bump.laplacian(*t))
                })
                .collect::<Result<_>>()?;
            Ok(PairingPoint { n, error: (diffs.iter().sum::<f64>() * area / TAU).abs() })
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
pub fn pullback_pairing_error(
    family: &HenonFamily,
    seq: &ParameterSequence,
    u: &QuasiPotentialSpec,
    n: usize,
    bump: &RadialBump,
    slice: &SliceSpec,
    filt: &FiltrationData,
    green_tol: f64,
) -> Result<f64> {
    Ok(pullback_pairing_errors(family, seq, u, &[n], bump, slice, filt, green_tol)?[0].error)
}

/// Potential of `Θⁿ(S)` on the slice grid: `d^{-n}` times the average of `u ∘ H⁺_{n,Λ}`
/// over `n_paths` sampled sequences (shared by all cells, so the field stays psh).
pub fn theta_iterate_potential(
    family: &HenonFamily,
    u: &QuasiPotentialSpec,
    n: usize,
    n_paths: usize,
    seed: u64,
    slice: &SliceSpec,
    filt: &FiltrationData,
) -> Result<Vec<f64>> {
    u.validate()?;
    slice.validate()?;
    if n_paths == 0 {
        return Err(Error::arg("n_paths", "need at least one path"));
    }
    // a one-point parameter space has a single path
    let paths: Vec<ParameterSequence> = if matches!(family.domain(), ParameterDomain::Singleton { .. }) {
        vec![sampled_sequence(family, seed, 0)]
    } else {
        (0..n_paths).map(|p| sampled_sequence(family, seed, p)).collect()
    };
    let cells: Vec<Complex64> = slice.cells().map(|(_, _, t)| t).collect();
    cells
        .par_iter()
        .map(|t| {
            let z = slice.point(*t);
            let mut sum = 0.0;
            for seq in &paths {
                sum += pullback_potential(family, seq, u, n, &z, filt)?;
            }
            Ok(sum / paths.len() as f64)
        })
        .collect()
}

/// `(σ^{-1}λ, σ^{-2}λ, ...)`: the sequence whose backward Green function is `G⁻_λ`.
pub fn backward_orbit_sequence(
    family: &HenonFamily,
    base: &BaseDynamics,
    lambda: &ParameterPoint,
) -> Result<ParameterSequence> {
    let start = base.inverse_step(family.domain(), lambda)?;
    ParameterSequence::sigma_orbit(family.domain(), base, start, OrbitDirection::Backward)
}

/// `d^{-k} log|π_x(H⁻¹_{σ^{-k}λ} ∘ ⋯ ∘ H⁻¹_{σ^{-1}λ}(z))|`, the potential of the
/// pulled-back line `{x = 0}`; `-∞` when the orbit lands on the line exactly.
pub fn backward_line_potential(
    family: &HenonFamily,
    base: &BaseDynamics,
    lambda: &ParameterPoint,
    k: usize,
    z: &ComplexPoint2,
    filt: &FiltrationData,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::arg("k", "k must be at least 1"));
    }
    let seq = backward_orbit_sequence(family, base, lambda)?;
    let mut orbit = OrbitTracker::new(family, &seq, Sign::Minus, filt, *z);
    for _ in 0..k {
        orbit.advance()?;
    }
    let log_x = match orbit.state() {
        Tracked::Exact(w) if w.x.norm() == 0.0 => return Ok(f64::NEG_INFINITY),
        Tracked::Exact(w) => w.x.norm().ln(),
        Tracked::Deep { log_dom, .. } => log_dom,
    };
    Ok(log_x * (family.degree() as f64).powi(-(k as i32)))
}

/// The C² smoothing of `log|y|` inside `|y| ≤ R`.
pub fn smoothed_log(y: Complex64, r: f64) -> f64 {
    let a = y.norm();
    if a > r {
        a.ln()
    } else {
        let s = (a / r).powi(2) - 1.0;
        r.ln() + s / 2.0 - s * s / 4.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedPointCloud {
    pub points: Vec<ComplexPoint2>,
    pub weights: Vec<f64>,
    pub fiber: Option<ParameterPoint>,
    pub total_mass: f64,
}

impl WeightedPointCloud {
    pub fn new(points: Vec<ComplexPoint2>, weights: Vec<f64>, fiber: Option<ParameterPoint>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::arg("cloud", "points and weights differ in length"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::arg("cloud", "weights must be nonnegative and points finite"));
        }
        Ok(Self { total_mass: weights.iter().sum(), points, weights, fiber })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Image measure under `h`, landing on fiber `fiber`.
    pub fn pushforward(&self, h: &Composite<f64>, fiber: Option<ParameterPoint>) -> Result<Self> {
        let points = self.points.iter().map(|p| h.eval(p)).collect::<Result<Vec<_>>>()?;
        Self::new(points, self.weights.clone(), fiber)
    }

    /// `π_y` histogram on `bins × bins` cells over `[-half, half]²`, normalised by total mass;
    /// mass outside the window goes to one extra bin.
    pub fn y_histogram(&self, half: f64, bins: usize) -> Vec<f64> {
        let mut h = vec![0.0; bins * bins + 1];
        let cell = 2.0 * half / bins as f64;
        for (p, w) in self.points.iter().zip(&self.weights) {
            let i = ((p.y.re + half) / cell).floor();
            let j = ((p.y.im + half) / cell).floor();
            let k = if i >= 0.0 && j >= 0.0 && (i as usize) < bins && (j as usize) < bins {
                j as usize * bins + i as usize
            } else {
                bins * bins
            };
            h[k] += w;
        }
        if self.total_mass > 0.0 {
            h.iter_mut().for_each(|v| *v /= self.total_mass);
        }
        h
    }
}

/// Total-variation distance of the `π_y` histograms.
pub fn histogram_distance(a: &WeightedPointCloud, b: &WeightedPointCloud, half: f64, bins: usize) -> f64 {
    let (ha, hb) = (a.y_histogram(half, bins), b.y_histogram(half, bins));
    0.5 * ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSample {
    pub cloud: WeightedPointCloud,
    /// Normalised mass of cells dropped because their transported point left `V_R` or fell under the cutoff.
    pub dropped_mass: f64,
    /// Normalised negative Laplacian mass clamped to zero.
    pub clamped_mass: f64,
    pub disc_radius: f64,
}

const WEIGHT_CUTOFF: f64 = 1e-12;
/// Escape horizon and bisection depth used to pin sample points onto `J⁺`.
const PIN_STEPS: usize = 64;
const PIN_BISECTIONS: usize = 52;

/// Whether the orbit of `(0, t)` enters `V_R⁺` within the given maps.
fn escapes(maps: &[Composite<f64>], t: Complex64, r: f64) -> bool {
    let mut w = ComplexPoint2::new(Complex64::new(0.0, 0.0), t);
    for h in maps {
        if region(&w, r) == Region::Plus {
            return true;
        }
        w = match h.eval(&w) {
            Ok(w) => w,
            Err(_) => return true,
        };
    }
    region(&w, r) == Region::Plus
}

/// A point of `∂K⁺` (escape time crossing the horizon) within two cells of `t`, found by
/// bisection towards the nearest probe whose escape status differs from the centre's.
fn pin_to_boundary(maps: &[Composite<f64>], t: Complex64, hx: f64, hy: f64, r: f64) -> Option<Complex64> {
    let here = escapes(maps, t, r);
    let offsets = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    let other = [0.5, 1.0, 2.0].iter().find_map(|s| {
        offsets
            .iter()
            .map(|(a, b)| t + Complex64::new(s * a * hx, s * b * hy))
            .find(|q| q.norm() < r && escapes(maps, *q, r) != here)
    })?;
    let (mut a, mut b) = (t, other);
    for _ in 0..PIN_BISECTIONS {
        let m = (a + b) * 0.5;
        if escapes(maps, m, r) == here {
            a = m;
        } else {
            b = m;
        }
    }
    // the non-escaping end of the final bracket
    Some(if here { b } else { a })
}

/// Cesàro sample `μ_{n,λ} = (1/n) Σ_j d^{-n} (H^j)_* α_{n,σ^{-j}λ}` of the fibre measure `μ_λ`,
/// built from the disc `{x = 0, |y| < R}` on a `resolution²` grid.
///
/// Cell masses come from the Laplacian of `d^{-n} log⁺|y_n|` at the cell centres. Each
/// weighted cell is represented by a point of `J⁺` inside it (found by bisection on the
/// escape time) when the cell straddles `∂K⁺`, so transported orbits stay near `J`.
pub fn equilibrium_sampler(
    family: &HenonFamily,
    base: &BaseDynamics,
    lambda: &ParameterPoint,
    n: usize,
    resolution: usize,
    filt: &FiltrationData,
) -> Result<EquilibriumSample> {
    if n == 0 {
        return Err(Error::arg("n", "n must be at least 1"));
    }
    if resolution < 3 {
        return Err(Error::arg("resolution", "disc grid needs at least 3×3 cells"));
    }
    base.validate(family.domain())?;
    let r = filt.r;
    let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), r, resolution);
    let (hx, hy) = (slice.hx(), slice.hy());
    let norm = (family.degree() as f64).powi(n as i32);
    let cells: Vec<Complex64> = slice.cells().map(|(_, _, t)| t).collect();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let (mut dropped, mut clamped) = (0.0, 0.0);
    for j in 0..n {
        let mu = base.iterate(family.domain(), lambda, -(j as i64))?;
        let maps: Vec<Composite<f64>> = ParameterSequence::sigma_orbit(family.domain(), base, mu, OrbitDirection::Forward)?
            .terms()
            .take(n.max(PIN_STEPS))
            .map(|l| family.at(&l))
            .collect::<Result<_>>()?;
        let potential: Vec<f64> = cells
            .par_iter()
            .map(|t| {
                let mut w = ComplexPoint2::new(Complex64::new(0.0, 0.0), *t);
                for (m, h) in maps[..n].iter().enumerate() {
                    if w.norm() > filt.r_esc {
                        // harmonic from here on; log|y_n| ≈ d^{n-m} log|y_m| avoids overflow
                        return Ok(w.y.norm().ln() * (family.degree() as f64).powi((n - m) as i32));
                    }
                    w = h.eval(&w)?;
                }
                Ok(smoothed_log(w.y, r))
            })
            .collect::<Result<_>>()?;
        let field = slice_measure(&potential, &slice)?;
        let total: f64 = field.masses.iter().filter(|m| **m > 0.0).sum();
        let kept: Vec<usize> = (0..cells.len())
            .filter(|&k| field.masses[k] >= WEIGHT_CUTOFF * total && field.masses[k] > 0.0)
            .collect();
        // image after j steps, if the transported point stays in V_R
        let images: Vec<Option<ComplexPoint2>> = kept
            .par_iter()
            .map(|&k| {
                let t = pin_to_boundary(&maps, cells[k], hx, hy, r).unwrap_or(cells[k]);
                if t.norm() >= r {
                    return Ok(None);
                }
                let mut w = ComplexPoint2::new(Complex64::new(0.0, 0.0), t);
                for h in &maps[..j] {
                    w = h.eval(&w)?;
                    if region(&w, r) != Region::Box {
                        return Ok(None);
                    }
                }
                Ok(Some(w))
            })
            .collect::<Result<_>>()?;
        let mut next = kept.iter().zip(&images).peekable();
        for (k, m) in field.masses.iter().enumerate() {
            let m = m / norm / n as f64;
            if m < 0.0 {
                clamped += -m;
                continue;
            }
            match next.peek() {
                Some((&kk, img)) if kk == k => {
                    match img {
                        Some(p) => {
                            points.push(*p);
                            weights.push(m);
                        }
                        None => dropped += m,
                    }
                    next.next();
                }
                _ => dropped += m,
            }
        }
    }
    Ok(EquilibriumSample {
        cloud: WeightedPointCloud::new(points, weights, Some(lambda.clone()))?,
        dropped_mass: dropped,
        clamped_mass: clamped,
        disc_radius: r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::compute_filtration;

    fn square_map(a: f64) -> HenonFamily {
        HenonFamily::single(2, Complex64::new(0.0, 0.0), Complex64::new(a, 0.0)).unwrap()
    }

    fn grid_values(slice: &SliceSpec, f: impl Fn(Complex64) -> f64) -> Vec<f64> {
        slice.cells().map(|(_, _, t)| f(t)).collect()
    }

    #[test]
    fn log_modulus_has_unit_mass() {
        let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 1.0, 64);
        let v = grid_values(&slice, |t| t.norm().ln());
        let m = slice_measure(&v, &slice).unwrap();
        assert!((m.total_mass - 1.0).abs() < 0.02, "{}", m.total_mass);
    }

    #[test]
    fn harmonic_potential_has_no_mass() {
        let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 2.0, 40);
        let v = grid_values(&slice, |t| (t * t).re);
        let m = slice_measure(&v, &slice).unwrap();
        assert!(m.masses.iter().all(|x| x.abs() <= 1e-8 * 4.0));
    }

    #[test]
    fn laplacian_is_additive_and_rejects_small_grids() {
        let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 1.0, 16);
        let a = grid_values(&slice, |t| t.norm_sqr());
        let b = grid_values(&slice, |t| (t - 0.3).norm().ln());
        let s: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let (ma, mb, ms) = (slice_measure(&a, &slice).unwrap(), slice_measure(&b, &slice).unwrap(), slice_measure(&s, &slice).unwrap());
        for k in 0..s.len() {
            assert!((ms.masses[k] - ma.masses[k] - mb.masses[k]).abs() <= 1e-12 * (1.0 + ms.masses[k].abs()));
        }
        assert!(slice_laplacian_measure(&[0.0; 4], 2, 2, 1.0, 1.0).is_err());
    }

    #[test]
    fn clamping_reports_removed_mass() {
        let f = SliceMeasureField { nx: 3, ny: 1, masses: vec![1.0, -0.25, 0.5], total_mass: 1.25, clamped_mass: 0.0 };
        let c = f.clamped();
        assert_eq!(c.masses, vec![1.0, 0.0, 0.5]);
        assert_eq!((c.total_mass, c.clamped_mass), (1.5, 0.25));
    }

    #[test]
    fn bump_laplacian_matches_finite_differences() {
        let b = RadialBump::new(Complex64::new(0.2, -0.1), 0.7).unwrap();
        let h = 1e-4;
        for t in [Complex64::new(0.3, 0.1), Complex64::new(-0.2, -0.3), Complex64::new(0.2, -0.1)] {
            let fd = (b.value(t + h) + b.value(t - h) + b.value(t + Complex64::i() * h) + b.value(t - Complex64::i() * h)
                - 4.0 * b.value(t))
                / (h * h);
            assert!((fd - b.laplacian(t)).abs() < 1e-5 * (1.0 + fd.abs()), "{fd} vs {}", b.laplacian(t));
        }
        assert_eq!(b.laplacian(Complex64::new(5.0, 0.0)), 0.0);
        // the gradient maximum sits at |t - c| = r/√5
        let s = 0.7 / 5f64.sqrt();
        let slope = (b.value(b.center + s + 1e-6) - b.value(b.center + s - 1e-6)) / 2e-6;
        assert!((1.0 + slope.abs() - b.c1_norm()).abs() < 1e-6);
    }

    #[test]
    fn catalog_potentials() {
        let u = QuasiPotentialSpec::y_squared_minus_x();
        assert!(u.bounded_near_indeterminacy());
        let z = ComplexPoint2::from_re(2.0, 3.0);
        assert!((u.eval(&z) - 7f64.ln() / 2.0).abs() < 1e-14);
        let huge = ComplexPoint2::from_re(1e200, 1e250);
        assert!((u.eval(&huge) - 1e250f64.ln()).abs() < 1e-10);
        assert!((u.eval_deep(1e250f64.ln()) - 1e250f64.ln()).abs() < 1e-10);
        let bad = QuasiPotentialSpec::Poly { terms: vec![PolyTerm { x_pow: 2, y_pow: 0, coeff: Complex64::new(1.0, 0.0) }] };
        assert!(bad.validate().is_err());
        let c = QuasiPotentialSpec::LogPlusYMinusC { c: Complex64::new(1.0, 0.0) };
        assert_eq!(c.eval(&ComplexPoint2::from_re(0.0, 1.5)), 0.0);
    }

    #[test]
    fn backward_line_examples() {
        let f = square_map(1.0);
        let filt = compute_filtration(&f, 2, 0).unwrap();
        let l = ParameterPoint::new(vec![Complex64::new(0.0, 0.0)]);
        let id = BaseDynamics::Identity;
        // H⁻¹(x, y) = (x² - y, x)
        let v = backward_line_potential(&f, &id, &l, 1, &ComplexPoint2::from_re(1.0, 1.0), &filt).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
        let v = backward_line_potential(&f, &id, &l, 1, &ComplexPoint2::from_re(3.0, 1.0), &filt).unwrap();
        assert!((v - 8f64.ln() / 2.0).abs() < 1e-15);
        assert!(backward_line_potential(&f, &id, &l, 0, &ComplexPoint2::origin(), &filt).is_err());
    }

    #[test]
    fn theta_on_singleton_is_plain_pullback() {
        let f = square_map(1.0);
        let filt = compute_filtration(&f, 2, 0).unwrap();
        let slice = SliceSpec::vertical(Complex64::new(0.0, 0.0), 2.0, 8);
        let u = QuasiPotentialSpec::LogPlusY;
        let th0 = theta_iterate_potential(&f, &u, 0, 4, 0, &slice, &filt).unwrap();
        let direct0: Vec<f64> = slice.cells().map(|(_, _, t)| u.eval(&slice.point(t))).collect();
        assert_eq!(th0, direct0);
        let th = theta_iterate_potential(&f, &u, 5, 16, 0, &slice, &filt).unwrap();
        let h = f.at(&ParameterPoint::new(vec![Complex64::new(0.0, 0.0)])).unwrap();
        for ((_, _, t), v) in slice.cells().zip(&th) {
            let mut w = slice.point(t);
            for _ in 0..5 {
                w = h.eval(&w).unwrap();
            }
            assert!((v - u.eval(&w) / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothed_log_is_c1_at_radius() {
        let r = 2.0;
        let e = 1e-7;
        for a in [r - e, r + e] {
            assert!((smoothed_log(Complex64::new(a, 0.0), r) - r.ln()).abs() < 1e-6);
        }
        let inner = (smoothed_log(Complex64::new(r, 0.0), r) - smoothed_log(Complex64::new(r - e, 0.0), r)) / e;
        assert!((inner - 1.0 / r).abs() < 1e-5);
    }
}
