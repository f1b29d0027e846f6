//! Logical N-party states and their separability classification.

use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::check_no_bunching;
use crate::error::{Error, Result};
use crate::fock::{fourier_internal, FockState, InternalVector};
use crate::format::fmt_complex;

/// Singular values above this count toward the Schmidt rank.
pub const DEFAULT_RANK_THRESHOLD: f64 = 1e-8;

const NORM_TOLERANCE: f64 = 1e-9;

/// Dense `d^N` amplitude vector, party 0 most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalState {
    n: usize,
    d: usize,
    amps: Vec<Complex64>,
}

impl LogicalState {
    pub fn new(n: usize, d: usize, amps: Vec<Complex64>) -> Result<Self> {
        check_shape(n, d, amps.len())?;
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Normalization { what: "logical state".into(), norm_sqr: norm });
        }
        Ok(LogicalState { n, d, amps })
    }

    /// Normalizes `amps`; fails on the zero vector.
    pub fn from_unnormalized(n: usize, d: usize, amps: Vec<Complex64>) -> Result<Self> {
        check_shape(n, d, amps.len())?;
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::InvalidArgument("cannot normalize the zero vector".into()));
        }
        Ok(LogicalState { n, d, amps: amps.into_iter().map(|a| a / norm).collect() })
    }

    /// `|s_1 … s_N⟩`.
    pub fn basis_state(d: usize, digits: &[usize]) -> Result<Self> {
        let n = digits.len();
        let mut amps = vec![Complex64::new(0.0, 0.0); checked_len(n, d)?];
        amps[index_of(d, digits)?] = Complex64::new(1.0, 0.0);
        Ok(LogicalState { n, d, amps })
    }

    pub fn parties(&self) -> usize {
        self.n
    }

    pub fn local_dim(&self) -> usize {
        self.d
    }

    pub fn amps(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, digits: &[usize]) -> Complex64 {
        index_of(self.d, digits).map(|i| self.amps[i]).unwrap_or_default()
    }

    /// `self ⊗ other`, with `other`'s parties appended.
    pub fn tensor(&self, other: &LogicalState) -> Result<LogicalState> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch { expected: format!("d={}", self.d), found: format!("d={}", other.d) });
        }
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        Ok(LogicalState { n: self.n + other.n, d: self.d, amps })
    }

    /// Applies a `d×d` matrix to one party.
    pub fn apply_local(&self, party: usize, u: &DMatrix<Complex64>) -> Result<LogicalState> {
        if party >= self.n || u.nrows() != self.d || u.ncols() != self.d {
            return Err(Error::DimensionMismatch {
                expected: format!("party < {} and {}x{} matrix", self.n, self.d, self.d),
                found: format!("party {party}, {}x{}", u.nrows(), u.ncols()),
            });
        }
        let stride = self.d.pow((self.n - 1 - party) as u32);
        let mut out = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for (i, a) in self.amps.iter().enumerate() {
            let s = (i / stride) % self.d;
            let base = i - s * stride;
            for t in 0..self.d {
                out[base + t * stride] += u[(t, s)] * a;
            }
        }
        Ok(LogicalState { n: self.n, d: self.d, amps: out })
    }

    /// `|⟨self|other⟩|`.
    pub fn fidelity_up_to_phase(&self, other: &LogicalState) -> Result<f64> {
        if self.n != other.n || self.d != other.d {
            return Err(Error::DimensionMismatch {
                expected: format!("N={}, d={}", self.n, self.d),
                found: format!("N={}, d={}", other.n, other.d),
            });
        }
        let ip: Complex64 = self.amps.iter().zip(&other.amps).map(|(a, b)| a.conj() * b).sum();
        Ok(ip.norm().min(1.0))
    }

    /// Amplitudes arranged as a `d^|A| × d^|B|` matrix for the cut `A|B`.
    pub fn bipartition_matrix(&self, part_a: &[usize]) -> DMatrix<Complex64> {
        let part_b: Vec<usize> = (0..self.n).filter(|p| !part_a.contains(p)).collect();
        let rows = self.d.pow(part_a.len() as u32);
        let cols = self.d.pow(part_b.len() as u32);
        let mut m = DMatrix::from_element(rows, cols, Complex64::new(0.0, 0.0));
        let mut digits = vec![0usize; self.n];
        for (i, a) in self.amps.iter().enumerate() {
            let mut rem = i;
            for p in (0..self.n).rev() {
                digits[p] = rem % self.d;
                rem /= self.d;
            }
            let r = part_a.iter().fold(0, |acc, &p| acc * self.d + digits[p]);
            let c = part_b.iter().fold(0, |acc, &p| acc * self.d + digits[p]);
            m[(r, c)] = *a;
        }
        m
    }
}

fn checked_len(n: usize, d: usize) -> Result<usize> {
    if n < 1 || d < 2 {
        return Err(Error::InvalidArgument(format!("need N >= 1 and d >= 2, got N={n}, d={d}")));
    }
    d.checked_pow(n as u32)
        .filter(|&l| l <= 1 << 24)
        .ok_or_else(|| Error::ResourceLimit { what: "logical dimension".into(), needed: (d as u128).saturating_pow(n as u32), cap: 1 << 24 })
}

fn check_shape(n: usize, d: usize, len: usize) -> Result<()> {
    let expected = checked_len(n, d)?;
    if expected != len {
        return Err(Error::DimensionMismatch { expected: format!("{expected} amplitudes"), found: len.to_string() });
    }
    Ok(())
}

fn index_of(d: usize, digits: &[usize]) -> Result<usize> {
    digits.iter().try_fold(0usize, |acc, &s| {
        if s >= d {
            Err(Error::InvalidArgument(format!("digit {s} out of range for d={d}")))
        } else {
            Ok(acc * d + s)
        }
    })
}

impl fmt::Display for LogicalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, a) in self.amps.iter().enumerate() {
            if a.norm() < 1e-12 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let mut digits = vec![0; self.n];
            let mut rem = i;
            for p in (0..self.n).rev() {
                digits[p] = rem % self.d;
                rem /= self.d;
            }
            let label: String = digits.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(if self.d > 10 { "," } else { "" });
            write!(f, "{} |{}⟩", fmt_complex(*a), label)?;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LogicalRepr {
    #[serde(rename = "N")]
    n: usize,
    d: usize,
    amps: Vec<[f64; 2]>,
}

impl Serialize for LogicalState {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        LogicalRepr { n: self.n, d: self.d, amps: self.amps.iter().map(|a| [a.re, a.im]).collect() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for LogicalState {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = LogicalRepr::deserialize(deserializer)?;
        LogicalState::new(r.n, r.d, r.amps.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Which internal vector encodes logical value `s` on every party.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalBasis {
    /// `|+⟩ ↦ 0`, `|−⟩ ↦ 1` (qubits only)
    PlusMinus,
    /// `|k̃⟩ ↦ k`
    Fourier,
    /// `|s⟩ ↦ s`
    Computational,
}

impl LocalBasis {
    pub fn vectors(&self, d: usize) -> Result<Vec<InternalVector>> {
        match self {
            LocalBasis::PlusMinus if d != 2 => Err(Error::InvalidArgument(format!("the ± basis needs d=2, got d={d}"))),
            LocalBasis::PlusMinus | LocalBasis::Fourier => (0..d).map(|k| fourier_internal(d, k)).collect(),
            LocalBasis::Computational => (0..d).map(|s| InternalVector::basis(d, s)).collect(),
        }
    }
}

/// Reads the no-bunching state `f` in the given local basis. Returns the
/// normalized logical state and the squared norm it had before normalization.
pub fn to_logical_state(f: &FockState, n: usize, n_ancilla: usize, basis: LocalBasis) -> Result<(LogicalState, f64)> {
    let dims = f.dims();
    if dims.spatial < n + n_ancilla {
        return Err(Error::DimensionMismatch {
            expected: format!("at least {} spatial modes", n + n_ancilla),
            found: dims.spatial.to_string(),
        });
    }
    let report = check_no_bunching(f, n, n_ancilla);
    if !report.passed() {
        return Err(Error::NoBunching(report.violations));
    }
    let d = dims.internal;
    let vecs = basis.vectors(d)?;
    let len = checked_len(n, d)?;
    let mut amps = vec![Complex64::new(0.0, 0.0); len];
    let mut levels = vec![0usize; n];
    for (cfg, a) in f.terms() {
        for (m, _) in cfg.iter() {
            levels[m.spatial] = m.internal;
        }
        for (i, slot) in amps.iter_mut().enumerate() {
            let mut rem = i;
            let mut coeff = *a;
            for p in (0..n).rev() {
                let s = rem % d;
                rem /= d;
                coeff *= vecs[s].components()[levels[p]].conj();
            }
            *slot += coeff;
        }
    }
    let norm_sqr = f.norm_sqr();
    if norm_sqr == 0.0 {
        return Err(Error::Precondition("final state is zero".into()));
    }
    Ok((LogicalState::from_unnormalized(n, d, amps)?, norm_sqr))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntanglementKind {
    FullySeparable,
    PartiallySeparable,
    Genuine,
}

impl fmt::Display for EntanglementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntanglementKind::FullySeparable => "FULLY_SEPARABLE",
            EntanglementKind::PartiallySeparable => "PARTIALLY_SEPARABLE",
            EntanglementKind::Genuine => "GENUINE",
        })
    }
}

/// A cut `A|B` with 0-based party indices; party 0 is always in `a`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl fmt::Display for Bipartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |v: &[usize]| v.iter().map(|p| (p + 1).to_string()).collect::<Vec<_>>().join(",");
        write!(f, "{{{}|{}}}", side(&self.a), side(&self.b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutRank {
    pub cut: Bipartition,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Classification {
    pub kind: EntanglementKind,
    /// Cuts across which the state is a product; empty when genuine.
    pub witnesses: Vec<Bipartition>,
    pub ranks: Vec<CutRank>,
}

/// Every unordered bipartition into two nonempty sides.
pub fn bipartitions(n: usize) -> Vec<Bipartition> {
    if n < 2 {
        return Vec::new();
    }
    (0..(1usize << (n - 1)) - 1)
        .map(|mask| {
            // party 0 on side A; bits of `mask` choose which of 1..n join it
            let a: Vec<usize> = std::iter::once(0).chain((1..n).filter(|p| mask >> (p - 1) & 1 == 1)).collect();
            let b = (0..n).filter(|p| !a.contains(p)).collect();
            Bipartition { a, b }
        })
        .collect()
}

/// Number of singular values of `m` above `threshold`.
pub fn schmidt_rank(m: &DMatrix<Complex64>, threshold: f64) -> usize {
    m.clone().svd(false, false).singular_values.iter().filter(|&&s| s > threshold).count()
}

pub fn classify(s: &LogicalState) -> Result<Classification> {
    classify_with_threshold(s, DEFAULT_RANK_THRESHOLD)
}

pub fn classify_with_threshold(s: &LogicalState, threshold: f64) -> Result<Classification> {
    if s.n < 2 {
        return Err(Error::InvalidArgument("classification needs at least two parties".into()));
    }
    let ranks: Vec<CutRank> = bipartitions(s.n)
        .into_iter()
        .map(|cut| {
            let rank = schmidt_rank(&s.bipartition_matrix(&cut.a), threshold);
            CutRank { cut, rank }
        })
        .collect();
    let witnesses: Vec<Bipartition> = ranks.iter().filter(|r| r.rank <= 1).map(|r| r.cut.clone()).collect();
    let kind = if witnesses.is_empty() {
        EntanglementKind::Genuine
    } else if witnesses.len() == ranks.len() {
        EntanglementKind::FullySeparable
    } else {
        EntanglementKind::PartiallySeparable
    };
    Ok(Classification { kind, witnesses, ranks })
}

pub fn fidelity_up_to_phase(a: &LogicalState, b: &LogicalState) -> Result<f64> {
    a.fidelity_up_to_phase(b)
}

/// `Σ_k |k…k⟩/√d`.
pub fn ghz_target(n: usize, d: usize) -> Result<LogicalState> {
    let mut amps = vec![Complex64::new(0.0, 0.0); checked_len(n, d)?];
    let w = 1.0 / (d as f64).sqrt();
    for k in 0..d {
        amps[index_of(d, &vec![k; n])?] = Complex64::new(w, 0.0);
    }
    LogicalState::new(n, d, amps)
}

/// Equal superposition of the `N` states with a single 1.
pub fn w_target(n: usize) -> Result<LogicalState> {
    let mut amps = vec![Complex64::new(0.0, 0.0); checked_len(n, 2)?];
    let w = 1.0 / (n as f64).sqrt();
    for j in 0..n {
        amps[1 << (n - 1 - j)] = Complex64::new(w, 0.0);
    }
    LogicalState::new(n, 2, amps)
}

/// `(|000⟩+|100⟩+|101⟩+|110⟩+|111⟩)/√5`.
pub fn type5_target() -> LogicalState {
    let w = Complex64::new(1.0 / 5f64.sqrt(), 0.0);
    let mut amps = vec![Complex64::new(0.0, 0.0); 8];
    for i in [0b000, 0b100, 0b101, 0b110, 0b111] {
        amps[i] = w;
    }
    LogicalState { n: 3, d: 2, amps }
}
