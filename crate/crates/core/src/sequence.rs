//! Parameter sequences `Λ = (λ₁, λ₂, ...)`.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{BaseDynamics, ParameterDomain, ParameterPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitDirection {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
enum Source {
    /// i.i.d. from the domain measure; term `n` depends only on `(seed, n)`.
    Iid { domain: ParameterDomain, seed: u64 },
    /// `λ_n = σ^{±(n-1)}(λ₀)`.
    SigmaOrbit { domain: ParameterDomain, base: BaseDynamics, start: ParameterPoint, direction: OrbitDirection },
    Constant(ParameterPoint),
    /// Repeats periodically past its end.
    Explicit(Vec<ParameterPoint>),
}

/// A reproducible random-access sequence of parameters, indexed from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSequence {
    source: Source,
    prefix: Vec<ParameterPoint>,
    skip: u64,
    overrides: BTreeMap<u64, ParameterPoint>,
}

/// Term `n` of the i.i.d. stream keyed by `seed`: one ChaCha stream per index.
pub fn iid_term(domain: &ParameterDomain, seed: u64, n: u64) -> ParameterPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(n);
    domain.sample(&mut rng)
}

/// Independent seed for sub-stream `index` of a run seeded with `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ParameterSequence {
    fn from_source(source: Source) -> Self {
        Self { source, prefix: Vec::new(), skip: 0, overrides: BTreeMap::new() }
    }

    pub fn iid(domain: &ParameterDomain, seed: u64) -> Self {
        Self::from_source(Source::Iid { domain: domain.clone(), seed })
    }

    pub fn sigma_orbit(
        domain: &ParameterDomain,
        base: &BaseDynamics,
        start: ParameterPoint,
        direction: OrbitDirection,
    ) -> Result<Self> {
        base.validate(domain)?;
        if !domain.contains(&start) {
            return Err(Error::Domain("orbit start outside domain".into()));
        }
        Ok(Self::from_source(Source::SigmaOrbit {
            domain: domain.clone(),
            base: base.clone(),
            start,
            direction,
        }))
    }

    pub fn constant(lambda: ParameterPoint) -> Self {
        Self::from_source(Source::Constant(lambda))
    }

    pub fn explicit(terms: Vec<ParameterPoint>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::arg("terms", "explicit sequence must be non-empty"));
        }
        Ok(Self::from_source(Source::Explicit(terms)))
    }

    fn source_term(&self, n: u64) -> ParameterPoint {
        match &self.source {
            Source::Iid { domain, seed } => iid_term(domain, *seed, n),
            Source::SigmaOrbit { domain, base, start, direction } => {
                let k = (n - 1) as i64;
                let k = if *direction == OrbitDirection::Forward { k } else { -k };
                base.iterate(domain, start, k).expect("validated orbit")
            }
            Source::Constant(p) => p.clone(),
            Source::Explicit(v) => v[((n - 1) % v.len() as u64) as usize].clone(),
        }
    }

    fn raw_term(&self, n: u64) -> ParameterPoint {
        let p = self.prefix.len() as u64;
        if n <= p {
            self.prefix[(n - 1) as usize].clone()
        } else {
            self.source_term(n - p + self.skip)
        }
    }

    /// `λ_n`, `n >= 1`.
    pub fn term(&self, n: u64) -> ParameterPoint {
        assert!(n >= 1, "sequence terms are indexed from 1");
        match self.overrides.get(&n) {
            Some(p) => p.clone(),
            None => self.raw_term(n),
        }
    }

    /// Iterator over `λ_1, λ_2, ...`; sequential access is cheap for σ-orbits.
    pub fn terms(&self) -> Terms<'_> {
        Terms { seq: self, next: 1, orbit_state: None }
    }

    /// `Λ_k = (λ_k, λ_{k+1}, ...)`.
    pub fn shifted(&self, k: u64) -> Self {
        assert!(k >= 1);
        let drop = k - 1;
        let mut out = self.clone();
        let from_prefix = drop.min(out.prefix.len() as u64);
        out.prefix.drain(..from_prefix as usize);
        out.skip += drop - from_prefix;
        out.overrides = self
            .overrides
            .iter()
            .filter(|(n, _)| **n > drop)
            .map(|(n, p)| (n - drop, p.clone()))
            .collect();
        out
    }

    /// `λΛ = (λ, λ₁, λ₂, ...)`.
    pub fn prepended(&self, lambda: ParameterPoint) -> Self {
        let mut out = self.clone();
        out.prefix.insert(0, lambda);
        out.overrides = self.overrides.iter().map(|(n, p)| (n + 1, p.clone())).collect();
        out
    }

    /// Same sequence with term `j` replaced.
    pub fn with_term(&self, j: u64, lambda: ParameterPoint) -> Self {
        let mut out = self.clone();
        out.overrides.insert(j, lambda);
        out
    }
}

#[derive(Clone)]
pub struct Terms<'a> {
    seq: &'a ParameterSequence,
    next: u64,
    orbit_state: Option<ParameterPoint>,
}

impl Iterator for Terms<'_> {
    type Item = ParameterPoint;

    fn next(&mut self) -> Option<ParameterPoint> {
        let n = self.next;
        self.next += 1;
        let p = self.seq.prefix.len() as u64;
        let out = if n > p {
            if let Source::SigmaOrbit { domain, base, direction, .. } = &self.seq.source {
                let state = match self.orbit_state.take() {
                    Some(prev) => base
                        .iterate(domain, &prev, if *direction == OrbitDirection::Forward { 1 } else { -1 })
                        .expect("validated orbit"),
                    None => self.seq.source_term(n - p + self.seq.skip),
                };
                self.orbit_state = Some(state.clone());
                state
            } else {
                self.seq.raw_term(n)
            }
        } else {
            self.seq.raw_term(n)
        };
        Some(self.seq.overrides.get(&n).cloned().unwrap_or(out))
    }
}
