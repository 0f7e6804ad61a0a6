//! One parameter struct per command. Every struct is read with `deny_unknown_fields` and
//! defaults for missing keys; `run` turns it into report results and artifacts.

use henon_core::averaging::{average_green, classify_against_hulls, eg_invariance_residual};
use henon_core::currents::{
    backward_line_potential, backward_orbit_sequence, equilibrium_sampler, histogram_distance, pair_potential,
    pullback_pairing_errors, slice_measure, theta_iterate_potential, QuasiPotentialSpec, RadialBump,
};
use henon_core::ergodic::{
    disc_area_growth, disc_candidates, entropy_lower_estimate, global_measure_sample, lyapunov_largest,
    mixing_correlation, random_mixing_correlation, separated_set_ladder, slice_candidates, AreaOptions, BowenMetric,
    CorrelationSeries, GlobalSampleConfig, Observable,
};
use henon_core::green::{
    classify_point, green_estimate, green_grid, FiltrationData, OrbitClassification, Sign,
};
use henon_core::slice::SliceSpec;
use henon_core::stats::{kendall_tau, linear_fit, significant_positive_trend};
use henon_core::{
    BaseDynamics, ComplexPoint2, HenonFamily, OrbitDirection, ParameterDomain, ParameterPoint, ParameterSequence,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::resolve_lambda;
use crate::error::CliError;
use crate::output::Artifacts;

/// Everything a command sees once the configuration is validated.
pub struct Context<'a> {
    pub family: &'a HenonFamily,
    pub base: &'a BaseDynamics,
    pub seed: u64,
    pub filt: &'a FiltrationData,
}

#[derive(Default)]
pub struct Outcome {
    pub results: Value,
    pub warnings: Vec<String>,
    pub artifacts: Artifacts,
}

pub trait Command: Serialize + serde::de::DeserializeOwned + Sync {
    /// Checks that need the family but no computation.
    fn check(&self, family: &HenonFamily, base: &BaseDynamics) -> Result<(), CliError>;
    fn run(&self, ctx: &Context) -> Result<Outcome, CliError>;
}

fn positive(field: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::config(field, "must be positive"));
    }
    Ok(())
}

fn positive_f(field: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(CliError::config(field, "must be positive and finite"));
    }
    Ok(())
}

fn nonempty<T>(field: &str, v: &[T]) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::config(field, "must not be empty"));
    }
    Ok(())
}

fn core_check(field: &str, r: henon_core::Result<()>) -> Result<(), CliError> {
    r.map_err(|e| CliError::from_core_in(field, e))
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn point_cells(p: &ComplexPoint2) -> Vec<String> {
    [p.x.re, p.x.im, p.y.re, p.y.im].iter().map(|v| v.to_string()).collect()
}

/// Parameter point given as angles on the circle/torus or as raw coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Angles {
        /// Turns in `[0, 1)`.
        angles: Vec<f64>,
    },
    Point(ParameterPoint),
}

impl LambdaSpec {
    fn point(&self) -> ParameterPoint {
        match self {
            LambdaSpec::Angles { angles } => ParameterPoint::from_angles(angles),
            LambdaSpec::Point(p) => p.clone(),
        }
    }
}

fn lambda_of(domain: &ParameterDomain, spec: &Option<LambdaSpec>, field: &str) -> Result<ParameterPoint, CliError> {
    resolve_lambda(domain, &spec.as_ref().map(LambdaSpec::point), field)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SequenceSpec {
    /// I.i.d. terms from the domain measure, seeded by the run seed.
    Iid,
    Constant { lambda: LambdaSpec },
    /// `λ, σλ, σ²λ, ...` (or the backward orbit).
    SigmaOrbit {
        lambda: LambdaSpec,
        #[serde(default)]
        direction: Option<OrbitDirection>,
    },
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec::Iid
    }
}

impl SequenceSpec {
    fn check(&self, family: &HenonFamily) -> Result<(), CliError> {
        match self {
            SequenceSpec::Iid => Ok(()),
            SequenceSpec::Constant { lambda } | SequenceSpec::SigmaOrbit { lambda, .. } => {
                lambda_of(family.domain(), &Some(lambda.clone()), "params.sequence.lambda").map(|_| ())
            }
        }
    }

    fn build(&self, ctx: &Context) -> Result<ParameterSequence, CliError> {
        let domain = ctx.family.domain();
        Ok(match self {
            SequenceSpec::Iid => ParameterSequence::iid(domain, ctx.seed),
            SequenceSpec::Constant { lambda } => ParameterSequence::constant(lambda.point()),
            SequenceSpec::SigmaOrbit { lambda, direction } => ParameterSequence::sigma_orbit(
                domain,
                ctx.base,
                lambda.point(),
                direction.unwrap_or(OrbitDirection::Forward),
            )?,
        })
    }
}

/// Grid on the vertical line `{x = x0}`; the half width defaults to `1.5 R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowSpec {
    pub x0: Complex64,
    pub half_width: Option<f64>,
    pub resolution: usize,
}

impl WindowSpec {
    fn with_resolution(resolution: usize) -> Self {
        Self { x0: Complex64::new(0.0, 0.0), half_width: None, resolution }
    }

    fn check(&self) -> Result<(), CliError> {
        positive("params.window.resolution", self.resolution)?;
        if let Some(h) = self.half_width {
            positive_f("params.window.half_width", h)?;
        }
        Ok(())
    }

    fn slice(&self, filt: &FiltrationData) -> SliceSpec {
        SliceSpec::vertical(self.x0, self.half_width.unwrap_or(1.5 * filt.r), self.resolution)
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self::with_resolution(256)
    }
}

fn bump_check(bump: &RadialBump) -> Result<(), CliError> {
    RadialBump::new(bump.center, bump.radius).map(|_| ()).map_err(|e| CliError::from_core_in("params.bump", e))
}

fn fiber_bump(x: f64, y: f64, radius: f64) -> Observable {
    Observable::FiberBump { center: ComplexPoint2::from_re(x, y), radius }
}

fn series_rows(s: &CorrelationSeries) -> Vec<Vec<String>> {
    s.points.iter().map(|p| vec![p.n.to_string(), p.value.to_string(), p.stderr.to_string()]).collect()
}

/// Kendall τ of `|value|` against `n` over `n ≥ 1`; `None` with fewer than two points.
fn magnitude_trend(s: &CorrelationSeries) -> Option<f64> {
    let pts: Vec<_> = s.points.iter().filter(|p| p.n >= 1).collect();
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.value.abs()).collect();
    Some(kendall_tau(&xs, &ys))
}

/// Least-squares slope of `log y` against `x`, if every `y` is positive.
fn log_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() < 2 || ys.iter().any(|y| !(*y > 0.0)) {
        return None;
    }
    let logs: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(xs, &logs).ok().map(|f| f.slope)
}

fn classification_label(c: &OrbitClassification) -> String {
    match c {
        OrbitClassification::Escaped { step, sign } => {
            format!("escaped{}@{step}", if *sign == Sign::Plus { "+" } else { "-" })
        }
        OrbitClassification::BoundedUpTo { n_max } => format!("bounded@{n_max}"),
        OrbitClassification::Undecided => "undecided".into(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub sign: Sign,
    pub tol: f64,
    pub window: WindowSpec,
    pub sequence: SequenceSpec,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self { sign: Sign::Plus, tol: 1e-6, window: WindowSpec::default(), sequence: SequenceSpec::Iid }
    }
}

impl Command for RenderParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        positive_f("params.tol", self.tol)?;
        self.window.check()?;
        self.sequence.check(family)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let slice = self.window.slice(ctx.filt);
        let seq = self.sequence.build(ctx)?;
        let grid = green_grid(ctx.family, &seq, self.sign, &slice, self.tol, ctx.filt)?;
        let values: Vec<f64> = grid.iter().map(|g| g.value).collect();
        let mut out = Outcome::default();
        out.artifacts.field_image("green", &values, slice.nx, slice.ny);
        let mut results = json!({
            "slice": slice,
            "cells": grid.len(),
            "max_value": values.iter().cloned().fold(0.0, f64::max),
            "max_err_bound": grid.iter().map(|g| g.err_bound).fold(0.0, f64::max),
            "max_depth": grid.iter().map(|g| g.depth).max(),
            "zero_cells": values.iter().filter(|v| **v == 0.0).count(),
        });
        if let [g] = grid.as_slice() {
            results["value"] = to_json(g);
        }
        out.results = results;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenParams {
    pub points: Vec<ComplexPoint2>,
    pub sign: Sign,
    pub tol: f64,
    /// Orbit length for the escape classification.
    pub classify_depth: usize,
    pub sequence: SequenceSpec,
}

impl Default for GreenParams {
    fn default() -> Self {
        Self {
            points: vec![ComplexPoint2::origin()],
            sign: Sign::Plus,
            tol: 1e-8,
            classify_depth: 100,
            sequence: SequenceSpec::Iid,
        }
    }
}

impl Command for GreenParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        nonempty("params.points", &self.points)?;
        positive_f("params.tol", self.tol)?;
        self.sequence.check(family)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let seq = self.sequence.build(ctx)?;
        let rows: Vec<_> = self
            .points
            .par_iter()
            .map(|z| {
                let g = green_estimate(ctx.family, &seq, self.sign, z, self.tol, ctx.filt)?;
                let c = classify_point(ctx.family, &seq, self.sign, z, self.classify_depth, ctx.filt);
                Ok((g, c))
            })
            .collect::<Result<_, henon_core::Error>>()?;
        let mut out = Outcome::default();
        let undecided = rows.iter().filter(|(_, c)| *c == OrbitClassification::Undecided).count();
        if undecided > 0 {
            out.warnings.push(format!("{undecided} undecided classifications"));
        }
        out.artifacts.csv(
            "green.csv",
            &["x_re", "x_im", "y_re", "y_im", "value", "err_bound", "depth", "classification"],
            self.points.iter().zip(&rows).map(|(z, (g, c))| {
                let mut r = point_cells(z);
                r.extend([g.value.to_string(), g.err_bound.to_string(), g.depth.to_string(), classification_label(c)]);
                r
            }),
        );
        out.results = json!({
            "values": rows.iter().map(|(g, c)| json!({"green": g, "classification": c})).collect::<Vec<_>>(),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AverageParams {
    pub points: Vec<ComplexPoint2>,
    pub sign: Sign,
    pub n_sequences: usize,
    pub tol: f64,
    /// Orbit length for the per-sequence escape test behind the hull verdict.
    pub hull_depth: usize,
    /// Parameter samples for the averaged invariance residual; 0 skips it.
    pub invariance_lambdas: usize,
}

impl Default for AverageParams {
    fn default() -> Self {
        Self {
            points: vec![ComplexPoint2::origin()],
            sign: Sign::Plus,
            n_sequences: 64,
            tol: 1e-8,
            hull_depth: 60,
            invariance_lambdas: 0,
        }
    }
}

impl Command for AverageParams {
    fn check(&self, _: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        nonempty("params.points", &self.points)?;
        positive("params.n_sequences", self.n_sequences)?;
        positive_f("params.tol", self.tol)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let (f, filt) = (ctx.family, ctx.filt);
        let mut out = Outcome::default();
        let mut entries = Vec::new();
        let mut rows = Vec::new();
        for z in &self.points {
            let avg = average_green(f, self.sign, z, self.n_sequences, self.tol, ctx.seed, filt)?;
            let hull = classify_against_hulls(f, self.sign, z, self.n_sequences, self.hull_depth, ctx.seed, filt);
            if hull.undecided > 0 {
                out.warnings.push(format!("{} undecided classifications at {z:?}", hull.undecided));
            }
            let inv = if self.invariance_lambdas > 0 {
                let r = eg_invariance_residual(
                    f, self.sign, z, self.invariance_lambdas, self.n_sequences, self.tol, ctx.seed, filt,
                )?;
                Some(r)
            } else {
                None
            };
            let mut row = point_cells(z);
            row.extend([avg.mean.to_string(), avg.mc_stderr.to_string(), avg.trunc_bound.to_string()]);
            rows.push(row);
            entries.push(json!({"average": avg, "hull": hull, "invariance": inv}));
        }
        out.artifacts.csv("average.csv", &["x_re", "x_im", "y_re", "y_im", "mean", "mc_stderr", "trunc_bound"], rows);
        out.results = json!({ "values": entries });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentMassParams {
    pub sign: Sign,
    pub tol: f64,
    pub window: WindowSpec,
    pub sequence: SequenceSpec,
}

impl Default for CurrentMassParams {
    fn default() -> Self {
        Self { sign: Sign::Plus, tol: 1e-10, window: WindowSpec::with_resolution(512), sequence: SequenceSpec::Iid }
    }
}

impl Command for CurrentMassParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        positive_f("params.tol", self.tol)?;
        self.window.check()?;
        self.sequence.check(family)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let slice = self.window.slice(ctx.filt);
        let seq = self.sequence.build(ctx)?;
        let g: Vec<f64> = green_grid(ctx.family, &seq, self.sign, &slice, self.tol, ctx.filt)?
            .iter()
            .map(|g| g.value)
            .collect();
        let m = slice_measure(&g, &slice)?;
        let negative = m.negative_mass();
        let mut out = Outcome::default();
        if negative > 0.0 {
            out.warnings.push(format!("clamped mass {negative} (negative Laplacian cells, shown as 0 in the image)"));
        }
        out.artifacts.field_image("current_mass", &m.masses, m.nx, m.ny);
        out.results = json!({ "slice": slice, "total_mass": m.total_mass, "negative_mass": negative });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PullbackParams {
    pub potential: QuasiPotentialSpec,
    pub ns: Vec<usize>,
    pub bump: RadialBump,
    pub window: WindowSpec,
    pub green_tol: f64,
    pub sequence: SequenceSpec,
}

impl Default for PullbackParams {
    fn default() -> Self {
        Self {
            potential: QuasiPotentialSpec::LogPlusY,
            ns: (4..=12).collect(),
            bump: RadialBump { center: Complex64::new(0.4, 0.3), radius: 2.0 },
            window: WindowSpec::default(),
            green_tol: 1e-12,
            sequence: SequenceSpec::Iid,
        }
    }
}

impl Command for PullbackParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        core_check("params.potential", self.potential.validate())?;
        nonempty("params.ns", &self.ns)?;
        bump_check(&self.bump)?;
        positive_f("params.green_tol", self.green_tol)?;
        self.window.check()?;
        self.sequence.check(family)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let slice = self.window.slice(ctx.filt);
        let seq = self.sequence.build(ctx)?;
        let pts = pullback_pairing_errors(
            ctx.family, &seq, &self.potential, &self.ns, &self.bump, &slice, ctx.filt, self.green_tol,
        )?;
        let d = ctx.family.degree() as f64;
        let xs: Vec<f64> = pts.iter().map(|p| p.n as f64).collect();
        let es: Vec<f64> = pts.iter().map(|p| p.error).collect();
        let scaled: Vec<f64> = pts.iter().map(|p| p.error * d.powi(p.n as i32) / (p.n.max(1)) as f64).collect();
        let mut out = Outcome::default();
        out.artifacts.csv(
            "pullback.csv",
            &["n", "error", "scaled"],
            pts.iter().zip(&scaled).map(|(p, s)| vec![p.n.to_string(), p.error.to_string(), s.to_string()]),
        );
        out.results = json!({
            "slice": slice,
            "errors": pts,
            "fitted_slope": log_slope(&xs, &es),
            "target_slope": -d.ln(),
            "bump_c1_norm": self.bump.c1_norm(),
            "scaled_positive_trend": significant_positive_trend(&scaled),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaParams {
    pub potential: QuasiPotentialSpec,
    pub n: usize,
    pub paths: usize,
    pub bump: RadialBump,
    pub window: WindowSpec,
    pub green_tol: f64,
}

impl Default for ThetaParams {
    fn default() -> Self {
        Self {
            potential: QuasiPotentialSpec::LogPlusY,
            n: 10,
            paths: 64,
            bump: RadialBump { center: Complex64::new(0.0, 0.0), radius: 2.5 },
            window: WindowSpec::with_resolution(128),
            green_tol: 1e-10,
        }
    }
}

impl Command for ThetaParams {
    fn check(&self, _: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        core_check("params.potential", self.potential.validate())?;
        positive("params.paths", self.paths)?;
        bump_check(&self.bump)?;
        positive_f("params.green_tol", self.green_tol)?;
        self.window.check()
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let slice = self.window.slice(ctx.filt);
        let theta = theta_iterate_potential(ctx.family, &self.potential, self.n, self.paths, ctx.seed, &slice, ctx.filt)?;
        // the reference average runs over the same sampled sequences as the paths
        let cells: Vec<Complex64> = slice.cells().map(|(_, _, t)| t).collect();
        let eg: Vec<f64> = cells
            .par_iter()
            .map(|t| {
                average_green(ctx.family, Sign::Plus, &slice.point(*t), self.paths, self.green_tol, ctx.seed, ctx.filt)
                    .map(|a| a.mean)
            })
            .collect::<henon_core::Result<_>>()?;
        let a = pair_potential(&theta, &slice, &self.bump)?;
        let b = pair_potential(&eg, &slice, &self.bump)?;
        let mut out = Outcome::default();
        out.artifacts.field_image("theta_potential", &theta, slice.nx, slice.ny);
        out.results = json!({
            "slice": slice,
            "theta_pairing": a,
            "reference_pairing": b,
            "difference": (a - b).abs(),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackwardParams {
    pub lambda: Option<LambdaSpec>,
    pub ks: Vec<usize>,
    /// Test points drawn in `V_R⁻` (where `G⁻` is positive) from the run seed.
    pub points: usize,
    pub tol: f64,
}

impl Default for BackwardParams {
    fn default() -> Self {
        Self { lambda: None, ks: (4..=12).collect(), points: 100, tol: 1e-13 }
    }
}

impl Command for BackwardParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        lambda_of(family.domain(), &self.lambda, "params.lambda")?;
        nonempty("params.ks", &self.ks)?;
        positive("params.points", self.points)?;
        positive_f("params.tol", self.tol)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let (f, filt) = (ctx.family, ctx.filt);
        let lambda = lambda_of(f.domain(), &self.lambda, "params.lambda")?;
        let seq = backward_orbit_sequence(f, ctx.base, &lambda)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        let tau = std::f64::consts::TAU;
        let points: Vec<ComplexPoint2> = (0..self.points)
            .map(|_| {
                let x = Complex64::from_polar(rng.gen_range(1.1 * filt.r..3.0 * filt.r), rng.gen_range(0.0..tau));
                let y = Complex64::from_polar(rng.gen_range(0.0..0.9) * x.norm(), rng.gen_range(0.0..tau));
                ComplexPoint2::new(x, y)
            })
            .collect();
        let g: Vec<f64> = points
            .par_iter()
            .map(|z| green_estimate(f, &seq, Sign::Minus, z, self.tol, filt).map(|g| g.value))
            .collect::<henon_core::Result<_>>()?;
        let sup: Vec<f64> = self
            .ks
            .iter()
            .map(|&k| {
                let errs = points
                    .par_iter()
                    .zip(&g)
                    .map(|(z, g)| backward_line_potential(f, ctx.base, &lambda, k, z, filt).map(|v| (v - g).abs()))
                    .collect::<henon_core::Result<Vec<f64>>>()?;
                Ok(errs.into_iter().fold(0.0, f64::max))
            })
            .collect::<henon_core::Result<_>>()?;
        let xs: Vec<f64> = self.ks.iter().map(|&k| k as f64).collect();
        let mut out = Outcome::default();
        out.artifacts.csv(
            "backward.csv",
            &["k", "sup_error"],
            self.ks.iter().zip(&sup).map(|(k, e)| vec![k.to_string(), e.to_string()]),
        );
        out.results = json!({
            "lambda": lambda,
            "sup_errors": sup,
            "fitted_slope": log_slope(&xs, &sup),
            "target_slope": -(f.degree() as f64).ln(),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumParams {
    pub lambda: Option<LambdaSpec>,
    /// Cesàro length.
    pub n: usize,
    pub resolution: usize,
    /// Bins per axis of the invariance histogram on `|Re y|, |Im y| ≤ R`.
    pub bins: usize,
}

impl Default for EquilibriumParams {
    fn default() -> Self {
        Self { lambda: None, n: 8, resolution: 256, bins: 32 }
    }
}

impl Command for EquilibriumParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        lambda_of(family.domain(), &self.lambda, "params.lambda")?;
        positive("params.n", self.n)?;
        positive("params.resolution", self.resolution)?;
        positive("params.bins", self.bins)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let (f, base, filt) = (ctx.family, ctx.base, ctx.filt);
        let lambda = lambda_of(f.domain(), &self.lambda, "params.lambda")?;
        let s = equilibrium_sampler(f, base, &lambda, self.n, self.resolution, filt)?;
        // compare H_λ-pushforward with the sample on the next fibre
        let next = base.step(f.domain(), &lambda)?;
        let image = s.cloud.pushforward(&f.at(&lambda)?, Some(next.clone()))?;
        let target = if next == lambda {
            s.cloud.clone()
        } else {
            equilibrium_sampler(f, base, &next, self.n, self.resolution, filt)?.cloud
        };
        let dist = histogram_distance(&target, &image, filt.r, self.bins);
        let mut out = Outcome::default();
        if s.clamped_mass > 0.0 {
            out.warnings.push(format!("clamped mass {}", s.clamped_mass));
        }
        if s.dropped_mass > 0.0 {
            out.warnings.push(format!("dropped weight {}", s.dropped_mass));
        }
        out.artifacts.csv(
            "cloud.csv",
            &["x_re", "x_im", "y_re", "y_im", "weight"],
            s.cloud.points.iter().zip(&s.cloud.weights).map(|(p, w)| {
                let mut r = point_cells(p);
                r.push(w.to_string());
                r
            }),
        );
        out.results = json!({
            "lambda": lambda,
            "points": s.cloud.len(),
            "total_mass": s.cloud.total_mass,
            "dropped_mass": s.dropped_mass,
            "clamped_mass": s.clamped_mass,
            "disc_radius": s.disc_radius,
            "invariance_distance": dist,
        });
        Ok(out)
    }
}

/// Global μ-sample settings shared by `lyapunov` and `mixing`.
fn sample_config(fibers: usize, cesaro_n: usize, resolution: usize, points: usize, seed: u64) -> GlobalSampleConfig {
    GlobalSampleConfig { n_fibers: fibers, cesaro_n, resolution, points_per_fiber: points, seed }
}

fn check_sample(fibers: usize, cesaro_n: usize, resolution: usize) -> Result<(), CliError> {
    positive("params.fibers", fibers)?;
    positive("params.cesaro_n", cesaro_n)?;
    positive("params.resolution", resolution)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    pub fibers: usize,
    pub cesaro_n: usize,
    pub resolution: usize,
    /// Orbits kept per fibre; 0 keeps the whole cloud.
    pub points_per_fiber: usize,
    pub steps: usize,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self { fibers: 4, cesaro_n: 8, resolution: 128, points_per_fiber: 500, steps: 20 }
    }
}

impl Command for LyapunovParams {
    fn check(&self, _: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        check_sample(self.fibers, self.cesaro_n, self.resolution)?;
        if self.steps < 10 {
            return Err(CliError::config("params.steps", "need at least 10 steps"));
        }
        Ok(())
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let cfg = sample_config(self.fibers, self.cesaro_n, self.resolution, self.points_per_fiber, ctx.seed);
        let sample = global_measure_sample(ctx.family, ctx.base, &cfg, ctx.filt)?;
        let est = lyapunov_largest(ctx.family, ctx.base, &sample, self.steps, ctx.filt)?;
        let log_d = (ctx.family.degree() as f64).ln();
        let base_exp = ctx.base.lyapunov_exponent();
        let mut out = Outcome::default();
        out.results = json!({
            "estimate": est,
            "samples": sample.len(),
            "log_degree": log_d,
            "base_exponent": base_exp,
            "lower_bound": log_d.max(base_exp),
        });
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CandidateSpec {
    /// Square grid on the fibre disc of radius `R`.
    Disc { per_axis: usize },
    /// Grid on a small window of `{x = 0}`; without a centre it sits on the point where
    /// the positive real `y`-axis crosses `J⁺`.
    Window { center: Option<ComplexPoint2>, half_width: f64, resolution: usize },
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec::Window { center: None, half_width: 0.05, resolution: 400 }
    }
}

/// Largest `t ∈ [0, R]` (by bisection) whose orbit from `(0, t)` stays in `V_R` for 64 steps.
fn real_axis_crossing(f: &HenonFamily, base: &BaseDynamics, lambda: &ParameterPoint, r: f64) -> Result<f64, CliError> {
    let mut maps = Vec::with_capacity(64);
    let mut l = lambda.clone();
    for _ in 0..64 {
        maps.push(f.at(&l)?);
        l = base.step(f.domain(), &l)?;
    }
    let escapes = |t: f64| {
        let mut w = ComplexPoint2::from_re(0.0, t);
        maps.iter().any(|h| match h.eval(&w) {
            Ok(v) => {
                w = v;
                w.norm() > r
            }
            Err(_) => true,
        })
    };
    let (mut a, mut b) = (0.0, r);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if escapes(m) {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyParams {
    pub lambda: Option<LambdaSpec>,
    pub candidates: CandidateSpec,
    pub ns: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub metric: BowenMetric,
}

impl Default for EntropyParams {
    fn default() -> Self {
        Self {
            lambda: None,
            candidates: CandidateSpec::default(),
            ns: (3..=9).collect(),
            epsilons: vec![0.05],
            metric: BowenMetric::Fiber,
        }
    }
}

impl Command for EntropyParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        lambda_of(family.domain(), &self.lambda, "params.lambda")?;
        nonempty("params.ns", &self.ns)?;
        nonempty("params.epsilons", &self.epsilons)?;
        for e in &self.epsilons {
            positive_f("params.epsilons", *e)?;
        }
        match &self.candidates {
            CandidateSpec::Disc { per_axis } => positive("params.candidates.per_axis", *per_axis),
            CandidateSpec::Window { half_width, resolution, .. } => {
                positive_f("params.candidates.half_width", *half_width)?;
                positive("params.candidates.resolution", *resolution)
            }
        }
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let (f, base, filt) = (ctx.family, ctx.base, ctx.filt);
        let lambda = lambda_of(f.domain(), &self.lambda, "params.lambda")?;
        let (cands, window) = match &self.candidates {
            CandidateSpec::Disc { per_axis } => (disc_candidates(&lambda, filt.r, *per_axis), None),
            CandidateSpec::Window { center, half_width, resolution } => {
                let c = match center {
                    Some(c) => *c,
                    None => ComplexPoint2::from_re(0.0, real_axis_crossing(f, base, &lambda, filt.r)?),
                };
                let mut s = SliceSpec::vertical(Complex64::new(0.0, 0.0), *half_width, *resolution);
                s.base = c;
                (slice_candidates(&lambda, &s, filt.r), Some(s))
            }
        };
        let res = separated_set_ladder(f, base, &cands, &self.ns, &self.epsilons, self.metric, filt)?;
        let log_d = (f.degree() as f64).ln();
        let mut out = Outcome::default();
        let estimate = match entropy_lower_estimate(&res) {
            Ok(v) => Some(v),
            Err(e) => {
                out.warnings.push(format!("no entropy estimate: {e}"));
                None
            }
        };
        out.artifacts.csv(
            "entropy.csv",
            &["n", "eps", "count"],
            res.counts.iter().map(|c| vec![c.n.to_string(), c.eps.to_string(), c.count.to_string()]),
        );
        out.results = json!({
            "lambda": lambda,
            "window": window,
            "candidates": cands.len(),
            "counts": res.counts,
            "slope": res.slope,
            "entropy_lower_estimate": estimate,
            "log_degree": log_d,
            "base_entropy": base.lyapunov_exponent(),
        });
        Ok(out)
    }
}

fn check_observables(phi: &Observable, psi: &Observable, ns: &[usize]) -> Result<(), CliError> {
    core_check("params.phi", phi.validate())?;
    core_check("params.psi", psi.validate())?;
    nonempty("params.ns", ns)
}

fn mixing_outcome(series: CorrelationSeries, extra: Value) -> Outcome {
    let mut out = Outcome::default();
    out.artifacts.csv("mixing.csv", &["n", "value", "stderr"], series_rows(&series));
    let mut results = json!({ "series": series.points, "magnitude_trend": magnitude_trend(&series) });
    if let (Value::Object(r), Value::Object(e)) = (&mut results, extra) {
        r.extend(e);
    }
    out.results = results;
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingParams {
    pub fibers: usize,
    pub cesaro_n: usize,
    pub resolution: usize,
    pub points_per_fiber: usize,
    pub phi: Observable,
    pub psi: Observable,
    pub ns: Vec<usize>,
}

impl Default for MixingParams {
    fn default() -> Self {
        Self {
            fibers: 16,
            cesaro_n: 8,
            resolution: 128,
            points_per_fiber: 0,
            phi: fiber_bump(0.0, 0.0, 2.0),
            psi: fiber_bump(0.0, 0.0, 2.0),
            ns: (0..=20).collect(),
        }
    }
}

impl Command for MixingParams {
    fn check(&self, _: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        check_sample(self.fibers, self.cesaro_n, self.resolution)?;
        check_observables(&self.phi, &self.psi, &self.ns)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let cfg = sample_config(self.fibers, self.cesaro_n, self.resolution, self.points_per_fiber, ctx.seed);
        let sample = global_measure_sample(ctx.family, ctx.base, &cfg, ctx.filt)?;
        let c = mixing_correlation(ctx.family, ctx.base, &sample, &self.phi, &self.psi, &self.ns)?;
        Ok(mixing_outcome(c, json!({ "samples": sample.len() })))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomMixingParams {
    pub lambda: Option<LambdaSpec>,
    pub cesaro_n: usize,
    pub resolution: usize,
    pub phi: Observable,
    pub psi: Observable,
    pub ns: Vec<usize>,
}

impl Default for RandomMixingParams {
    fn default() -> Self {
        Self {
            lambda: None,
            cesaro_n: 8,
            resolution: 128,
            phi: fiber_bump(0.0, 0.0, 2.0),
            psi: fiber_bump(0.0, 0.0, 2.0),
            ns: (0..=20).collect(),
        }
    }
}

impl Command for RandomMixingParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        lambda_of(family.domain(), &self.lambda, "params.lambda")?;
        positive("params.cesaro_n", self.cesaro_n)?;
        positive("params.resolution", self.resolution)?;
        check_observables(&self.phi, &self.psi, &self.ns)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let lambda = lambda_of(ctx.family.domain(), &self.lambda, "params.lambda")?;
        let s = equilibrium_sampler(ctx.family, ctx.base, &lambda, self.cesaro_n, self.resolution, ctx.filt)?;
        let c = random_mixing_correlation(ctx.family, ctx.base, &lambda, &s.cloud, &self.phi, &self.psi, &self.ns)?;
        let mut out = mixing_outcome(c, json!({ "lambda": lambda, "samples": s.cloud.len() }));
        if s.dropped_mass > 0.0 {
            out.warnings.push(format!("dropped weight {}", s.dropped_mass));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AreaParams {
    pub lambda: Option<LambdaSpec>,
    pub ns: Vec<usize>,
    pub options: AreaOptions,
}

impl Default for AreaParams {
    fn default() -> Self {
        Self { lambda: None, ns: (0..=6).collect(), options: AreaOptions::default() }
    }
}

impl Command for AreaParams {
    fn check(&self, family: &HenonFamily, _: &BaseDynamics) -> Result<(), CliError> {
        lambda_of(family.domain(), &self.lambda, "params.lambda")?;
        nonempty("params.ns", &self.ns)?;
        positive_f("params.options.edge_tol", self.options.edge_tol)?;
        positive("params.options.max_triangles", self.options.max_triangles)
    }

    fn run(&self, ctx: &Context) -> Result<Outcome, CliError> {
        let lambda = lambda_of(ctx.family.domain(), &self.lambda, "params.lambda")?;
        let est: Vec<_> = self
            .ns
            .iter()
            .map(|&n| disc_area_growth(ctx.family, ctx.base, &lambda, n, &self.options, ctx.filt))
            .collect::<henon_core::Result<_>>()?;
        let mut out = Outcome::default();
        for e in est.iter().filter(|e| e.partial) {
            out.warnings.push(format!("n = {}: triangle budget exhausted, area is partial", e.n));
        }
        let ratios: Vec<f64> = est.windows(2).map(|w| w[1].area / w[0].area).collect();
        out.artifacts.csv(
            "area.csv",
            &["n", "area", "area_unrestricted", "triangles", "partial"],
            est.iter().map(|e| {
                vec![
                    e.n.to_string(),
                    e.area.to_string(),
                    e.area_unrestricted.to_string(),
                    e.triangles.to_string(),
                    e.partial.to_string(),
                ]
            }),
        );
        out.results = json!({ "lambda": lambda, "estimates": est, "successive_ratios": ratios });
        Ok(out)
    }
}
