//! Sparse bosonic Fock-space algebra.
//!
//! A [`FockState`] is a finite linear combination of occupation configurations
//! over modes `(spatial, internal)`. Creation and annihilation act along an
//! arbitrary internal direction given by an [`InternalVector`]:
//!
//! ```text
//! a†_{j,ψ} = Σ_s ψ_s a†_{j,s}        a_{j,ψ} = Σ_s conj(ψ_s) a_{j,s}
//! ```
//!
//! so that `(a†_{j,ψ})† = a_{j,ψ}`. All operations are pure and return new
//! states; amplitudes below [`PRUNE_THRESHOLD`] are dropped after every step.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::format::fmt_complex;

/// Amplitudes with magnitude below this are removed from a state.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// Default tolerance for amplitude comparisons.
pub const COMPARE_TOLERANCE: f64 = 1e-9;

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeKey {
    pub spatial: usize,
    pub internal: usize,
}

impl ModeKey {
    pub fn new(spatial: usize, internal: usize) -> Self {
        ModeKey { spatial, internal }
    }
}

/// Occupation numbers of the non-empty modes, sorted by `(spatial, internal)`.
///
/// Zero counts are never stored, so two equal configurations are equal
/// element-for-element.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OccupationConfig {
    counts: Vec<(ModeKey, u32)>,
}

impl OccupationConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a configuration from `(mode, count)` pairs; repeated modes are summed.
    pub fn from_counts<I: IntoIterator<Item = (ModeKey, u32)>>(pairs: I) -> Self {
        let mut map: BTreeMap<ModeKey, u32> = BTreeMap::new();
        for (mode, n) in pairs {
            *map.entry(mode).or_insert(0) += n;
        }
        OccupationConfig {
            counts: map.into_iter().filter(|&(_, n)| n > 0).collect(),
        }
    }

    pub fn count(&self, mode: ModeKey) -> u32 {
        match self.counts.binary_search_by(|(m, _)| m.cmp(&mode)) {
            Ok(i) => self.counts[i].1,
            Err(_) => 0,
        }
    }

    /// Total number of bosons in a spatial mode, summed over internal levels.
    pub fn spatial_count(&self, spatial: usize) -> u32 {
        self.counts
            .iter()
            .filter(|(m, _)| m.spatial == spatial)
            .map(|&(_, n)| n)
            .sum()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().map(|&(_, n)| n).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ModeKey, u32)> + '_ {
        self.counts.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// True when each of the first `system` spatial modes holds exactly one
    /// boson and every other spatial mode is empty.
    pub fn is_one_per_mode(&self, system: usize) -> bool {
        let mut seen = vec![0u32; system];
        for &(m, n) in &self.counts {
            if m.spatial >= system {
                return false;
            }
            seen[m.spatial] += n;
        }
        seen.iter().all(|&n| n == 1)
    }

    fn with_added(&self, mode: ModeKey) -> (Self, u32) {
        let mut counts = self.counts.clone();
        match counts.binary_search_by(|(m, _)| m.cmp(&mode)) {
            Ok(i) => {
                counts[i].1 += 1;
                let n = counts[i].1;
                (OccupationConfig { counts }, n)
            }
            Err(i) => {
                counts.insert(i, (mode, 1));
                (OccupationConfig { counts }, 1)
            }
        }
    }

    /// Removes one boson from `mode`; returns the new config and the count
    /// the mode held before removal.
    fn with_removed(&self, mode: ModeKey) -> Option<(Self, u32)> {
        let i = self.counts.binary_search_by(|(m, _)| m.cmp(&mode)).ok()?;
        let mut counts = self.counts.clone();
        let before = counts[i].1;
        if before == 1 {
            counts.remove(i);
        } else {
            counts[i].1 -= 1;
        }
        Some((OccupationConfig { counts }, before))
    }

    fn factorial_norm(&self) -> f64 {
        self.counts
            .iter()
            .map(|&(_, n)| (1..=n).map(f64::from).product::<f64>())
            .product::<f64>()
            .sqrt()
    }
}

impl fmt::Display for OccupationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|")?;
        for (i, (m, n)) in self.counts.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}:{}", m.spatial + 1, m.internal)?;
            if *n > 1 {
                write!(f, "^{n}")?;
            }
        }
        write!(f, "⟩")
    }
}

impl Serialize for OccupationConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<[usize; 3]> = self.iter().map(|(m, n)| [m.spatial, m.internal, n as usize]).collect();
        v.serialize(serializer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub spatial: usize,
    pub internal: usize,
}

/// A unit vector in the `d`-dimensional internal space of one boson.
#[derive(Clone, Debug, PartialEq)]
pub struct InternalVector(Vec<Complex64>);

impl InternalVector {
    /// Fails unless the components have unit norm within 1e-9.
    pub fn new(components: Vec<Complex64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("internal vector has no components".into()));
        }
        let n: f64 = components.iter().map(|c| c.norm_sqr()).sum();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Normalization {
                what: "internal vector".into(),
                norm_sqr: n,
            });
        }
        Ok(InternalVector(components))
    }

    /// Normalizes the given components; fails on the zero vector.
    pub fn normalized(components: Vec<Complex64>) -> Result<Self> {
        let n: f64 = components.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if n < PRUNE_THRESHOLD {
            return Err(Error::InvalidArgument("cannot normalize a zero internal vector".into()));
        }
        Ok(InternalVector(components.into_iter().map(|c| c / n).collect()))
    }

    /// Computational basis vector `|s⟩`.
    pub fn basis(d: usize, s: usize) -> Result<Self> {
        if s >= d {
            return Err(Error::InvalidArgument(format!("level {s} out of range for d={d}")));
        }
        let mut v = vec![Complex64::new(0.0, 0.0); d];
        v[s] = Complex64::new(1.0, 0.0);
        Ok(InternalVector(v))
    }

    /// `|+⟩ = (|0⟩ + |1⟩)/√2`.
    pub fn plus() -> Self {
        fourier_internal(2, 0).expect("d=2, k=0 is valid")
    }

    /// `|−⟩ = (|0⟩ − |1⟩)/√2`.
    pub fn minus() -> Self {
        fourier_internal(2, 1).expect("d=2, k=1 is valid")
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[Complex64] {
        &self.0
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &InternalVector) -> Complex64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }
}

/// Fourier basis vector `|k̃⟩` with components `exp(2πi k s / d)/√d`.
pub fn fourier_internal(d: usize, k: usize) -> Result<InternalVector> {
    if d < 2 {
        return Err(Error::InvalidArgument(format!("internal dimension {d} < 2")));
    }
    if k >= d {
        return Err(Error::InvalidArgument(format!("Fourier index {k} out of range for d={d}")));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let comps = (0..d)
        .map(|s| {
            // reduce the exponent first so that e.g. ω^2 for d=2 is exactly 1
            let e = (k * s) % d;
            if e == 0 {
                Complex64::new(scale, 0.0)
            } else if 2 * e == d {
                Complex64::new(-scale, 0.0)
            } else {
                Complex64::from_polar(scale, 2.0 * PI * e as f64 / d as f64)
            }
        })
        .collect();
    Ok(InternalVector(comps))
}

/// Sparse superposition of occupation configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct FockState {
    dims: Dims,
    terms: BTreeMap<OccupationConfig, Complex64>,
}

impl FockState {
    pub fn vacuum(spatial: usize, d: usize) -> Result<Self> {
        let dims = check_dims(spatial, d)?;
        let mut terms = BTreeMap::new();
        terms.insert(OccupationConfig::empty(), Complex64::new(1.0, 0.0));
        Ok(FockState { dims, terms })
    }

    /// The zero vector; a valid result of annihilation, not an error.
    pub fn zero(spatial: usize, d: usize) -> Result<Self> {
        let dims = check_dims(spatial, d)?;
        Ok(FockState { dims, terms: BTreeMap::new() })
    }

    /// Sums the given terms; every mode must lie inside `dims`.
    pub fn from_terms<I>(dims: Dims, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (OccupationConfig, Complex64)>,
    {
        let dims = check_dims(dims.spatial, dims.internal)?;
        let mut map: BTreeMap<OccupationConfig, Complex64> = BTreeMap::new();
        for (cfg, amp) in terms {
            for (m, _) in cfg.iter() {
                if m.spatial >= dims.spatial || m.internal >= dims.internal {
                    return Err(Error::InvalidArgument(format!(
                        "mode ({}, {}) outside dims ({}, {})",
                        m.spatial, m.internal, dims.spatial, dims.internal
                    )));
                }
            }
            *map.entry(cfg).or_insert(Complex64::new(0.0, 0.0)) += amp;
        }
        Ok(FockState { dims, terms: pruned(map) })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OccupationConfig, &Complex64)> {
        self.terms.iter()
    }

    pub fn amplitude(&self, cfg: &OccupationConfig) -> Complex64 {
        self.terms.get(cfg).copied().unwrap_or_default()
    }

    #[allow(clippy::len_without_is_empty)] // is_zero is the domain name
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Boson number shared by all terms, or `None` for the zero state or a
    /// state without definite particle number.
    pub fn total_bosons(&self) -> Option<u32> {
        let mut it = self.terms.keys().map(OccupationConfig::total);
        let first = it.next()?;
        it.all(|n| n == first).then_some(first)
    }

    pub fn apply_creation(&self, spatial: usize, v: &InternalVector) -> Result<FockState> {
        self.check_operator(spatial, v)?;
        let mut out: BTreeMap<OccupationConfig, Complex64> = BTreeMap::new();
        for (cfg, amp) in &self.terms {
            for (s, c) in v.components().iter().enumerate() {
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                let (next, n) = cfg.with_added(ModeKey::new(spatial, s));
                *out.entry(next).or_default() += amp * c * f64::from(n).sqrt();
            }
        }
        Ok(FockState { dims: self.dims, terms: pruned(out) })
    }

    pub fn apply_annihilation(&self, spatial: usize, v: &InternalVector) -> Result<FockState> {
        self.check_operator(spatial, v)?;
        let mut out: BTreeMap<OccupationConfig, Complex64> = BTreeMap::new();
        for (cfg, amp) in &self.terms {
            for (s, c) in v.components().iter().enumerate() {
                if c.norm_sqr() == 0.0 {
                    continue;
                }
                if let Some((next, n)) = cfg.with_removed(ModeKey::new(spatial, s)) {
                    *out.entry(next).or_default() += amp * c.conj() * f64::from(n).sqrt();
                }
            }
        }
        Ok(FockState { dims: self.dims, terms: pruned(out) })
    }

    /// `⟨self|other⟩`, conjugate-linear in `self`.
    pub fn inner_product(&self, other: &FockState) -> Result<Complex64> {
        self.check_same_dims(other)?;
        let (small, large, flip) = if self.terms.len() <= other.terms.len() {
            (self, other, false)
        } else {
            (other, self, true)
        };
        let mut acc = Complex64::new(0.0, 0.0);
        for (cfg, a) in &small.terms {
            if let Some(b) = large.terms.get(cfg) {
                acc += if flip { b.conj() * a } else { a.conj() * b };
            }
        }
        Ok(acc)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: Complex64) -> FockState {
        let terms = self.terms.iter().map(|(k, v)| (k.clone(), v * c)).collect();
        FockState { dims: self.dims, terms: pruned(terms) }
    }

    pub fn add(&self, other: &FockState) -> Result<FockState> {
        self.check_same_dims(other)?;
        let mut terms = self.terms.clone();
        for (cfg, amp) in &other.terms {
            *terms.entry(cfg.clone()).or_default() += amp;
        }
        Ok(FockState { dims: self.dims, terms: pruned(terms) })
    }

    /// The state divided by its norm; the zero state is returned unchanged.
    pub fn normalized(&self) -> FockState {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return self.clone();
        }
        self.scaled(Complex64::new(1.0 / n, 0.0))
    }

    /// Largest per-configuration amplitude difference.
    pub fn max_abs_diff(&self, other: &FockState) -> Result<f64> {
        self.check_same_dims(other)?;
        let mut worst: f64 = 0.0;
        for (cfg, a) in &self.terms {
            worst = worst.max((a - other.amplitude(cfg)).norm());
        }
        for (cfg, b) in &other.terms {
            if !self.terms.contains_key(cfg) {
                worst = worst.max(b.norm());
            }
        }
        Ok(worst)
    }

    pub fn approx_eq(&self, other: &FockState, tol: f64) -> bool {
        self.max_abs_diff(other).map(|d| d <= tol).unwrap_or(false)
    }

    /// Keeps the terms whose configuration satisfies `keep`.
    pub fn filter<F: Fn(&OccupationConfig) -> bool>(&self, keep: F) -> FockState {
        let terms = self
            .terms
            .iter()
            .filter(|(c, _)| keep(c))
            .map(|(c, a)| (c.clone(), *a))
            .collect();
        FockState { dims: self.dims, terms }
    }

    /// Re-embeds the state into a larger spatial register.
    pub fn with_spatial_count(&self, spatial: usize) -> Result<FockState> {
        if spatial < self.dims.spatial {
            let used = self.terms.keys().flat_map(|c| c.iter()).any(|(m, _)| m.spatial >= spatial);
            if used {
                return Err(Error::InvalidArgument(format!(
                    "cannot shrink to {spatial} spatial modes: occupied modes would be dropped"
                )));
            }
        }
        let dims = check_dims(spatial, self.dims.internal)?;
        Ok(FockState { dims, terms: self.terms.clone() })
    }

    /// Applies a passive linear transformation of the creation operators,
    /// `a†_m ↦ Σ_n image(m)_n a†_n`, into a register of `spatial` modes.
    ///
    /// Unitarity is the caller's responsibility.
    pub fn transform_modes<F>(&self, spatial: usize, image: F) -> Result<FockState>
    where
        F: Fn(ModeKey) -> Vec<(ModeKey, Complex64)>,
    {
        let dims = check_dims(spatial, self.dims.internal)?;
        let mut cache: BTreeMap<ModeKey, Vec<(ModeKey, Complex64)>> = BTreeMap::new();
        let mut out: BTreeMap<OccupationConfig, Complex64> = BTreeMap::new();
        for (cfg, amp) in &self.terms {
            let mut partial: BTreeMap<OccupationConfig, Complex64> = BTreeMap::new();
            partial.insert(OccupationConfig::empty(), amp / cfg.factorial_norm());
            for (mode, n) in cfg.iter() {
                let targets = cache.entry(mode).or_insert_with(|| image(mode)).clone();
                for (t, _) in &targets {
                    if t.spatial >= dims.spatial || t.internal >= dims.internal {
                        return Err(Error::InvalidArgument(format!(
                            "mode image ({}, {}) outside register",
                            t.spatial, t.internal
                        )));
                    }
                }
                for _ in 0..n {
                    let mut next: BTreeMap<OccupationConfig, Complex64> = BTreeMap::new();
                    for (c, a) in &partial {
                        for (t, u) in &targets {
                            let (cc, k) = c.with_added(*t);
                            *next.entry(cc).or_default() += a * u * f64::from(k).sqrt();
                        }
                    }
                    partial = next;
                }
            }
            for (c, a) in partial {
                *out.entry(c).or_default() += a;
            }
        }
        Ok(FockState { dims, terms: pruned(out) })
    }

    fn check_operator(&self, spatial: usize, v: &InternalVector) -> Result<()> {
        if spatial >= self.dims.spatial {
            return Err(Error::DimensionMismatch {
                expected: format!("spatial index < {}", self.dims.spatial),
                found: spatial.to_string(),
            });
        }
        if v.dim() != self.dims.internal {
            return Err(Error::DimensionMismatch {
                expected: format!("internal dimension {}", self.dims.internal),
                found: v.dim().to_string(),
            });
        }
        Ok(())
    }

    fn check_same_dims(&self, other: &FockState) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                expected: format!("{:?}", self.dims),
                found: format!("{:?}", other.dims),
            });
        }
        Ok(())
    }
}

fn check_dims(spatial: usize, d: usize) -> Result<Dims> {
    if spatial < 1 {
        return Err(Error::InvalidArgument("need at least one spatial mode".into()));
    }
    if d < 2 {
        return Err(Error::InvalidArgument(format!("internal dimension {d} < 2")));
    }
    Ok(Dims { spatial, internal: d })
}

fn pruned(map: BTreeMap<OccupationConfig, Complex64>) -> BTreeMap<OccupationConfig, Complex64> {
    map.into_iter().filter(|(_, a)| a.norm() >= PRUNE_THRESHOLD).collect()
}

pub fn vacuum(spatial: usize, d: usize) -> Result<FockState> {
    FockState::vacuum(spatial, d)
}

pub fn apply_creation(state: &FockState, spatial: usize, v: &InternalVector) -> Result<FockState> {
    state.apply_creation(spatial, v)
}

pub fn apply_annihilation(state: &FockState, spatial: usize, v: &InternalVector) -> Result<FockState> {
    state.apply_annihilation(spatial, v)
}

pub fn inner_product(a: &FockState, b: &FockState) -> Result<Complex64> {
    a.inner_product(b)
}

impl fmt::Display for FockState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (cfg, amp)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{} {}", fmt_complex(*amp), cfg)?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    occ: Vec<[u64; 3]>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    dims: Dims,
    terms: Vec<TermRepr>,
}

impl Serialize for FockState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let terms = self
            .terms
            .iter()
            .map(|(cfg, amp)| TermRepr {
                occ: cfg
                    .iter()
                    .map(|(m, n)| [m.spatial as u64, m.internal as u64, u64::from(n)])
                    .collect(),
                re: amp.re,
                im: amp.im,
            })
            .collect();
        StateRepr { dims: self.dims, terms }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FockState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = StateRepr::deserialize(deserializer)?;
        let terms = repr.terms.into_iter().map(|t| {
            let cfg = OccupationConfig::from_counts(
                t.occ
                    .into_iter()
                    .map(|[j, s, n]| (ModeKey::new(j as usize, s as usize), n as u32)),
            );
            (cfg, Complex64::new(t.re, t.im))
        });
        FockState::from_terms(repr.dims, terms).map_err(serde::de::Error::custom)
    }
}
