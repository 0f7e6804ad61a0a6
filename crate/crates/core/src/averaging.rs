//! Averaged Green functions `EG^±` over i.i.d. parameter sequences.
//!
//! Each sequence is truncated at its certified depth, so averaging finite prefixes
//! is exact up to the per-sequence tolerance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::HenonFamily;
use crate::green::{classify_point, green_estimate, FiltrationData, OrbitClassification, Sign};
use crate::sequence::{derive_seed, ParameterSequence};
use crate::ComplexPoint2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvgGreenValue {
    pub mean: f64,
    pub mc_stderr: f64,
    /// Largest per-sequence certified error.
    pub trunc_bound: f64,
    pub n_sequences: usize,
}

impl AvgGreenValue {
    /// `z_sigma · stderr + trunc_bound`.
    pub fn uncertainty(&self, z_sigma: f64) -> f64 {
        z_sigma * self.mc_stderr + self.trunc_bound
    }
}

/// Mean and standard error; exactly zero spread when all samples coincide.
pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.windows(2).all(|w| w[0].to_bits() == w[1].to_bits()) {
        return (values.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The `i`-th sampled sequence of a run.
pub fn sampled_sequence(family: &HenonFamily, seed: u64, i: usize) -> ParameterSequence {
    ParameterSequence::iid(family.domain(), derive_seed(seed, i as u64))
}

/// Monte Carlo `EG^±(z)` over `n_sequences` i.i.d. sequences.
pub fn average_green(
    family: &HenonFamily,
    sign: Sign,
    z: &ComplexPoint2,
    n_sequences: usize,
    tol: f64,
    seed: u64,
    filt: &FiltrationData,
) -> Result<AvgGreenValue> {
    if n_sequences < 2 {
        return Err(Error::arg("n_sequences", "need at least 2 sequences"));
    }
    let values: Vec<_> = (0..n_sequences)
        .into_par_iter()
        .map(|i| green_estimate(family, &sampled_sequence(family, seed, i), sign, z, tol, filt))
        .collect::<Result<_>>()?;
    let vals: Vec<f64> = values.iter().map(|g| g.value).collect();
    let (mean, mc_stderr) = mean_stderr(&vals);
    Ok(AvgGreenValue {
        mean,
        mc_stderr,
        trunc_bound: values.iter().map(|g| g.err_bound).fold(0.0, f64::max),
        n_sequences,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResidual {
    /// `|avg_λ EG(H_λ^{±1} z) - d EG(z)|`.
    pub residual: f64,
    /// One-sigma Monte Carlo uncertainty of the difference.
    pub mc_sigma: f64,
    /// Deterministic truncation part of the difference.
    pub trunc: f64,
}

impl InvarianceResidual {
    pub fn within(&self, z_sigma: f64) -> bool {
        self.residual <= z_sigma * self.mc_sigma + self.trunc
    }
}

/// Residual of `∫ EG^± ∘ H_λ^{±1} dm(λ) = d EG^±`.
#[allow(clippy::too_many_arguments)]
pub fn eg_invariance_residual(
    family: &HenonFamily,
    sign: Sign,
    z: &ComplexPoint2,
    n_lambda: usize,
    n_sequences: usize,
    tol: f64,
    seed: u64,
    filt: &FiltrationData,
) -> Result<InvarianceResidual> {
    if n_lambda < 2 {
        return Err(Error::arg("n_lambda", "need at least 2 parameter samples"));
    }
    let d = family.degree() as f64;
    let lambda_seq = ParameterSequence::iid(family.domain(), derive_seed(seed, u64::MAX));
    let sides: Vec<AvgGreenValue> = (0..n_lambda)
        .into_par_iter()
        .map(|j| {
            let h = family.at(&lambda_seq.term(j as u64 + 1))?;
            let image = h.eval_signed(z, sign.forward())?;
            average_green(family, sign, &image, n_sequences, tol, derive_seed(seed, j as u64), filt)
        })
        .collect::<Result<_>>()?;
    let means: Vec<f64> = sides.iter().map(|a| a.mean).collect();
    let (lhs, lhs_se) = mean_stderr(&means);
    let lhs_trunc = sides.iter().map(|a| a.trunc_bound).fold(0.0, f64::max);
    let rhs = average_green(family, sign, z, n_sequences, tol / d, derive_seed(seed, u64::MAX - 1), filt)?;
    Ok(InvarianceResidual {
        residual: (lhs - d * rhs.mean).abs(),
        mc_sigma: (lhs_se.powi(2) + (d * rhs.mc_stderr).powi(2)).sqrt(),
        trunc: lhs_trunc + d * rhs.trunc_bound,
    })
}

/// Sampled evidence for `z ∈ 𝒦₀^±` (every sequence bounded) or `z ∉ 𝒦^±` (every sequence escapes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetVerdict {
    InCore,
    OutsideHull,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HullClassification {
    pub verdict: SetVerdict,
    pub escaped: usize,
    pub bounded: usize,
    pub undecided: usize,
    pub n_sequences: usize,
}

pub fn classify_against_hulls(
    family: &HenonFamily,
    sign: Sign,
    z: &ComplexPoint2,
    n_sequences: usize,
    n_max: usize,
    seed: u64,
    filt: &FiltrationData,
) -> HullClassification {
    let verdicts: Vec<OrbitClassification> = (0..n_sequences)
        .into_par_iter()
        .map(|i| classify_point(family, &sampled_sequence(family, seed, i), sign, z, n_max, filt))
        .collect();
    let escaped = verdicts.iter().filter(|v| matches!(v, OrbitClassification::Escaped { .. })).count();
    let bounded = verdicts.iter().filter(|v| matches!(v, OrbitClassification::BoundedUpTo { .. })).count();
    let undecided = n_sequences - escaped - bounded;
    let verdict = if bounded == n_sequences {
        SetVerdict::InCore
    } else if escaped == n_sequences {
        SetVerdict::OutsideHull
    } else {
        SetVerdict::Mixed
    };
    HullClassification { verdict, escaped, bounded, undecided, n_sequences }
}
