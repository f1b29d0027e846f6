//! Sculpting operators and their action on maximally symmetric states.
//!
//! A [`SubtractionOperator`] removes one boson from a superposition of spatial
//! modes, `Σ_j α_j a_{j,ψ_j}`. A [`SculptingOperator`] is a product of such
//! factors acting on `N` system modes plus `K` ancilla modes.

use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fock::{FockState, InternalVector, ModeKey, OccupationConfig};

const NORM_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of collective paths that may be expanded.
pub const DEFAULT_PATH_CAP: u128 = 10_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SubtractionTerm {
    pub spatial: usize,
    pub amplitude: Complex64,
    pub internal: InternalVector,
}

impl SubtractionTerm {
    pub fn new(spatial: usize, amplitude: Complex64, internal: InternalVector) -> Self {
        SubtractionTerm { spatial, amplitude, internal }
    }
}

/// One factor `Σ_j α_j a_{j,ψ_j}` of a sculpting operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtractionOperator {
    terms: Vec<SubtractionTerm>,
}

impl SubtractionOperator {
    pub fn new(terms: Vec<SubtractionTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidArgument("subtraction operator has no terms".into()));
        }
        let d = terms[0].internal.dim();
        if let Some(t) = terms.iter().find(|t| t.internal.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: format!("internal dimension {d}"),
                found: t.internal.dim().to_string(),
            });
        }
        let norm: f64 = terms.iter().map(|t| t.amplitude.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Normalization {
                what: "subtraction operator weights".into(),
                norm_sqr: norm,
            });
        }
        for (i, a) in terms.iter().enumerate() {
            for b in &terms[i + 1..] {
                if a.spatial == b.spatial && (a.internal.inner(&b.internal).norm() - 1.0).abs() < NORM_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "two terms on spatial mode {} share an internal direction",
                        a.spatial
                    )));
                }
            }
        }
        Ok(SubtractionOperator { terms })
    }

    pub fn terms(&self) -> &[SubtractionTerm] {
        &self.terms
    }

    pub fn internal_dim(&self) -> usize {
        self.terms[0].internal.dim()
    }

    /// Applies `Σ_j α_j a_{j,ψ_j}` to `state`.
    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        let dims = state.dims();
        let mut acc = FockState::zero(dims.spatial, dims.internal)?;
        for t in &self.terms {
            let part = state.apply_annihilation(t.spatial, &t.internal)?;
            acc = acc.add(&part.scaled(t.amplitude))?;
        }
        Ok(acc)
    }

    fn canonicalized(&self) -> SubtractionOperator {
        let mut terms = self.terms.clone();
        terms.sort_by(cmp_term);
        SubtractionOperator { terms }
    }
}

fn cmp_complex(a: &Complex64, b: &Complex64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

fn cmp_slices(a: &[Complex64], b: &[Complex64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = cmp_complex(x, y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn cmp_term(a: &SubtractionTerm, b: &SubtractionTerm) -> Ordering {
    a.spatial
        .cmp(&b.spatial)
        .then_with(|| cmp_slices(b.internal.components(), a.internal.components()))
        .then_with(|| cmp_complex(&a.amplitude, &b.amplitude))
}

fn cmp_factor(a: &SubtractionOperator, b: &SubtractionOperator) -> Ordering {
    for (x, y) in a.terms.iter().zip(&b.terms) {
        let o = cmp_term(x, y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.terms.len().cmp(&b.terms.len())
}

/// Product of subtraction factors over `n_system + n_ancilla` spatial modes.
#[derive(Clone, Debug, PartialEq)]
pub struct SculptingOperator {
    factors: Vec<SubtractionOperator>,
    n_system: usize,
    n_ancilla: usize,
    d: usize,
}

impl SculptingOperator {
    pub fn new(factors: Vec<SubtractionOperator>, n_system: usize, n_ancilla: usize, d: usize) -> Result<Self> {
        if n_system < 1 {
            return Err(Error::InvalidArgument("need at least one system mode".into()));
        }
        if d < 2 {
            return Err(Error::InvalidArgument(format!("internal dimension {d} < 2")));
        }
        let total = n_system + n_ancilla;
        for f in &factors {
            for t in f.terms() {
                if t.spatial >= total {
                    return Err(Error::InvalidArgument(format!(
                        "term on spatial mode {} but only {total} modes exist",
                        t.spatial
                    )));
                }
                if t.internal.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: format!("internal dimension {d}"),
                        found: t.internal.dim().to_string(),
                    });
                }
            }
        }
        Ok(SculptingOperator { factors, n_system, n_ancilla, d })
    }

    pub fn factors(&self) -> &[SubtractionOperator] {
        &self.factors
    }

    pub fn n_system(&self) -> usize {
        self.n_system
    }

    pub fn n_ancilla(&self) -> usize {
        self.n_ancilla
    }

    pub fn internal_dim(&self) -> usize {
        self.d
    }

    pub fn spatial_count(&self) -> usize {
        self.n_system + self.n_ancilla
    }

    /// Same operator with terms and factors in a fixed order.
    pub fn canonicalized(&self) -> SculptingOperator {
        let mut factors: Vec<_> = self.factors.iter().map(SubtractionOperator::canonicalized).collect();
        factors.sort_by(cmp_factor);
        SculptingOperator { factors, ..self.clone() }
    }

    /// Product of the number of terms in each factor.
    pub fn path_count(&self) -> u128 {
        self.factors
            .iter()
            .map(|f| f.terms().len() as u128)
            .fold(1u128, |acc, n| acc.saturating_mul(n))
    }
}

/// `Π_j Π_s a†_{j,s}` over the system modes, times one boson per ancilla at
/// the given internal level.
pub fn maximally_symmetric_state(n_system: usize, d: usize, ancilla_levels: &[usize]) -> Result<FockState> {
    if n_system < 1 {
        return Err(Error::InvalidArgument("need at least one system mode".into()));
    }
    let spatial = n_system + ancilla_levels.len();
    let mut counts = Vec::with_capacity(n_system * d + ancilla_levels.len());
    for j in 0..n_system {
        for s in 0..d {
            counts.push((ModeKey::new(j, s), 1));
        }
    }
    for (k, &s) in ancilla_levels.iter().enumerate() {
        if s >= d {
            return Err(Error::InvalidArgument(format!("ancilla level {s} out of range for d={d}")));
        }
        counts.push((ModeKey::new(n_system + k, s), 1));
    }
    let cfg = OccupationConfig::from_counts(counts);
    FockState::from_terms(
        crate::fock::Dims { spatial, internal: d },
        [(cfg, Complex64::new(1.0, 0.0))],
    )
}

fn check_operator_state(op: &SculptingOperator, state: &FockState) -> Result<()> {
    let dims = state.dims();
    if dims.spatial != op.spatial_count() || dims.internal != op.d {
        return Err(Error::DimensionMismatch {
            expected: format!("({} spatial, d={})", op.spatial_count(), op.d),
            found: format!("({} spatial, d={})", dims.spatial, dims.internal),
        });
    }
    if let Some(total) = state.total_bosons() {
        let needed = (total as usize).checked_sub(op.n_system);
        if needed != Some(op.factors.len()) {
            return Err(Error::Precondition(format!(
                "{} factors cannot leave one boson in each of {} modes from {} bosons",
                op.factors.len(),
                op.n_system,
                total
            )));
        }
    }
    Ok(())
}

/// Applies every factor of `op` in sequence; the result is unnormalized and may be zero.
pub fn apply_sculpting(op: &SculptingOperator, state: &FockState) -> Result<FockState> {
    check_operator_state(op, state)?;
    let mut st = state.clone();
    for f in &op.factors {
        st = f.apply(&st)?;
    }
    Ok(st)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoBunchingReport {
    pub violations: Vec<(OccupationConfig, Complex64)>,
}

impl NoBunchingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// Norm of the violating part of the state.
    pub fn residual(&self) -> f64 {
        self.violations.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>().sqrt().abs()
    }
}

/// Lists every configuration that does not hold exactly one boson in each of
/// the `n_system` system modes with all ancillas empty.
pub fn check_no_bunching(state: &FockState, n_system: usize, n_ancilla: usize) -> NoBunchingReport {
    debug_assert!(state.dims().spatial >= n_system + n_ancilla);
    let violations = state
        .terms()
        .filter(|(c, _)| !c.is_one_per_mode(n_system))
        .map(|(c, a)| (c.clone(), *a))
        .collect();
    NoBunchingReport { violations }
}

/// Squared norm of a heralded final state that satisfies no-bunching.
pub fn success_probability(final_state: &FockState, n_system: usize, n_ancilla: usize) -> Result<f64> {
    let report = check_no_bunching(final_state, n_system, n_ancilla);
    if !report.passed() {
        return Err(Error::Precondition(format!(
            "final state violates no-bunching in {} configuration(s)",
            report.violations.len()
        )));
    }
    Ok(final_state.norm_sqr())
}

/// One term of the expanded product: factor `l` acts on mode `spatial[l]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CollectivePath {
    pub assignment: Vec<usize>,
    pub spatial: Vec<usize>,
    pub coefficient: Complex64,
    pub internals: Vec<InternalVector>,
}

impl CollectivePath {
    /// `coefficient · Π_l a_{spatial_l, internal_l}` applied to `state`.
    pub fn apply(&self, state: &FockState) -> Result<FockState> {
        let mut st = state.clone();
        for (j, v) in self.spatial.iter().zip(&self.internals) {
            st = st.apply_annihilation(*j, v)?;
            if st.is_zero() {
                break;
            }
        }
        Ok(st.scaled(self.coefficient))
    }

    /// Number of times the path hits each of `spatial_count` modes.
    pub fn hits(&self, spatial_count: usize) -> Vec<usize> {
        let mut h = vec![0; spatial_count];
        for &j in &self.spatial {
            h[j] += 1;
        }
        h
    }
}

/// Expands `op` into all collective paths, refusing when there are more than `cap`.
pub fn expand_collective_paths(op: &SculptingOperator, cap: u128) -> Result<Vec<CollectivePath>> {
    let needed = op.path_count();
    if needed > cap {
        return Err(Error::ResourceLimit { what: "collective paths".into(), needed, cap });
    }
    let mut out = Vec::with_capacity(needed as usize);
    let mut idx = vec![0usize; op.factors.len()];
    loop {
        let chosen: Vec<&SubtractionTerm> = idx.iter().zip(&op.factors).map(|(&i, f)| &f.terms()[i]).collect();
        out.push(CollectivePath {
            assignment: idx.clone(),
            spatial: chosen.iter().map(|t| t.spatial).collect(),
            coefficient: chosen.iter().map(|t| t.amplitude).product(),
            internals: chosen.iter().map(|t| t.internal.clone()).collect(),
        });
        // odometer increment, last factor fastest
        let mut pos = idx.len();
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < op.factors[pos].terms().len() {
                break;
            }
            idx[pos] = 0;
        }
    }
}

/// Sum of every collective path applied to `state`.
pub fn apply_via_paths(op: &SculptingOperator, state: &FockState, cap: u128) -> Result<FockState> {
    check_operator_state(op, state)?;
    let dims = state.dims();
    let mut acc = FockState::zero(dims.spatial, dims.internal)?;
    for p in expand_collective_paths(op, cap)? {
        acc = acc.add(&p.apply(state)?)?;
    }
    Ok(acc)
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    j: usize,
    re: f64,
    im: f64,
    internal: Vec<[f64; 2]>,
}

#[derive(Serialize, Deserialize)]
struct OperatorRepr {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    factors: Vec<Vec<TermRepr>>,
}

impl Serialize for SculptingOperator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let factors = self
            .factors
            .iter()
            .map(|f| {
                f.terms()
                    .iter()
                    .map(|t| TermRepr {
                        j: t.spatial,
                        re: t.amplitude.re,
                        im: t.amplitude.im,
                        internal: t.internal.components().iter().map(|c| [c.re, c.im]).collect(),
                    })
                    .collect()
            })
            .collect();
        OperatorRepr { n: self.n_system, k: self.n_ancilla, d: self.d, factors }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SculptingOperator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = OperatorRepr::deserialize(deserializer)?;
        let mut factors = Vec::with_capacity(repr.factors.len());
        for f in repr.factors {
            let mut terms = Vec::with_capacity(f.len());
            for t in f {
                let v = InternalVector::new(t.internal.iter().map(|[re, im]| Complex64::new(*re, *im)).collect())
                    .map_err(D::Error::custom)?;
                terms.push(SubtractionTerm::new(t.j, Complex64::new(t.re, t.im), v));
            }
            factors.push(SubtractionOperator::new(terms).map_err(D::Error::custom)?);
        }
        SculptingOperator::new(factors, repr.n, repr.k, repr.d).map_err(D::Error::custom)
    }
}
