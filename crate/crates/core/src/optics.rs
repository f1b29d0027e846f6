//! Polarization linear optics with ideal heralding.
//!
//! Photons live on named paths with polarization `H` (internal level 0) or
//! `V` (level 1). Elements act on creation operators:
//!
//! ```text
//! HWP:  a†_H → (a†_H + a†_V)/√2,   a†_V → (a†_H − a†_V)/√2
//! PBS:  (in1,H) → (out1,H)   (in1,V) → (out2,V)
//!       (in2,H) → (out2,H)   (in2,V) → (out1,V)
//! ```

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::maximally_symmetric_state;
use crate::entanglement::{ghz_target, to_logical_state, LocalBasis, LogicalState};
use crate::error::{Error, Result};
use crate::fock::{Dims, FockState, ModeKey, OccupationConfig};

const H: usize = 0;
const V: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

impl Polarization {
    fn level(self) -> usize {
        match self {
            Polarization::H => H,
            Polarization::V => V,
        }
    }
}

/// One linear factor `Σ c · a†_{path,pol}` of a creation polynomial.
pub type LinearForm<'a> = Vec<(Complex64, &'a str, Polarization)>;

/// A two-level Fock state whose spatial modes are named paths.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OpticalState {
    pub paths: Vec<String>,
    pub state: FockState,
}

impl OpticalState {
    pub fn new(paths: Vec<String>, state: FockState) -> Result<Self> {
        let dims = state.dims();
        if dims.internal != 2 || dims.spatial != paths.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} paths with two polarizations", paths.len()),
                found: format!("{} modes with d={}", dims.spatial, dims.internal),
            });
        }
        let mut sorted = paths.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != paths.len() {
            return Err(Error::InvalidArgument("path labels must be unique".into()));
        }
        Ok(OpticalState { paths, state })
    }

    /// One `H` and one `V` photon on every listed path.
    pub fn one_h_one_v(paths: &[&str]) -> Result<Self> {
        let st = maximally_symmetric_state(paths.len(), 2, &[])?;
        OpticalState::new(paths.iter().map(|p| p.to_string()).collect(), st)
    }

    /// `coeff · Π_f (Σ_t c_t a†_{path_t,pol_t}) |vac⟩` on the listed paths.
    pub fn from_polynomial(paths: &[&str], coeff: Complex64, factors: &[LinearForm<'_>]) -> Result<Self> {
        let names: Vec<String> = paths.iter().map(|p| p.to_string()).collect();
        let mut st = FockState::vacuum(paths.len(), 2)?.scaled(coeff);
        for form in factors {
            let mut acc = FockState::zero(paths.len(), 2)?;
            for &(c, path, pol) in form {
                let j = paths.iter().position(|p| *p == path).ok_or_else(|| Error::UnknownPath(path.to_string()))?;
                let u = crate::fock::InternalVector::basis(2, pol.level())?;
                acc = acc.add(&st.apply_creation(j, &u)?.scaled(c))?;
            }
            st = acc;
        }
        OpticalState::new(names, st)
    }

    /// Keeps the configurations accepted by `keep`, which sees the photon
    /// count per path in `self.paths` order.
    pub fn project<F: Fn(&[u32]) -> bool>(&self, keep: F) -> OpticalState {
        let n = self.paths.len();
        let state = self.state.filter(|cfg| {
            let counts: Vec<u32> = (0..n).map(|j| cfg.spatial_count(j)).collect();
            keep(&counts)
        });
        OpticalState { paths: self.paths.clone(), state }
    }

    pub fn index(&self, path: &str) -> Result<usize> {
        self.paths.iter().position(|p| p == path).ok_or_else(|| Error::UnknownPath(path.to_string()))
    }

    pub fn photon_count(&self) -> Option<u32> {
        self.state.total_bosons()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.state.norm_sqr()
    }

    /// Amplitude of the configuration given as `(path, polarization, count)` triples.
    pub fn amplitude(&self, occ: &[(&str, Polarization, u32)]) -> Result<Complex64> {
        let counts = occ
            .iter()
            .map(|&(p, pol, n)| Ok((ModeKey::new(self.index(p)?, pol.level()), n)))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.state.amplitude(&OccupationConfig::from_counts(counts)))
    }

    /// Reorders modes so that `order` comes first, as logical parties.
    pub fn reordered(&self, order: &[&str]) -> Result<OpticalState> {
        let mut paths: Vec<String> = order.iter().map(|s| s.to_string()).collect();
        for p in order {
            self.index(p)?;
        }
        paths.extend(self.paths.iter().filter(|p| !order.contains(&p.as_str())).cloned());
        let map: Vec<Option<usize>> = self
            .paths
            .iter()
            .map(|p| paths.iter().position(|q| q == p))
            .collect();
        let st = reindex(&self.state, &map, paths.len())?;
        OpticalState::new(paths, st)
    }

    /// Reads one photon per listed path as a qubit with `H ↦ 0`, `V ↦ 1`.
    pub fn logical(&self, order: &[&str]) -> Result<(LogicalState, f64)> {
        let r = self.reordered(order)?;
        if r.paths.len() != order.len() {
            return Err(Error::Precondition("paths outside the readout order are still present".into()));
        }
        to_logical_state(&r.state, order.len(), 0, LocalBasis::Computational)
    }

    /// Display with path labels, e.g. `0.5 |11:H 21:V⟩`.
    pub fn describe(&self) -> String {
        if self.state.is_zero() {
            return "0".into();
        }
        let terms: Vec<String> = self
            .state
            .terms()
            .map(|(cfg, a)| {
                let modes: Vec<String> = cfg
                    .iter()
                    .map(|(m, n)| {
                        let pol = if m.internal == H { "H" } else { "V" };
                        if n > 1 {
                            format!("{}:{}^{}", self.paths[m.spatial], pol, n)
                        } else {
                            format!("{}:{}", self.paths[m.spatial], pol)
                        }
                    })
                    .collect();
                format!("{} |{}⟩", crate::format::fmt_complex(*a), modes.join(" "))
            })
            .collect();
        terms.join(" + ")
    }
}

fn reindex(state: &FockState, map: &[Option<usize>], spatial: usize) -> Result<FockState> {
    let terms = state.terms().map(|(cfg, a)| {
        let counts = cfg.iter().filter_map(|(m, n)| map[m.spatial].map(|j| (ModeKey::new(j, m.internal), n)));
        (OccupationConfig::from_counts(counts), *a)
    });
    FockState::from_terms(Dims { spatial, internal: 2 }, terms)
}

/// One or several path labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathSpec {
    One(String),
    Many(Vec<String>),
}

impl PathSpec {
    pub fn list(&self) -> Vec<String> {
        match self {
            PathSpec::One(p) => vec![p.clone()],
            PathSpec::Many(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pol: Option<Polarization>,
}

/// Required outcome at each detector path.
pub type HeraldPattern = BTreeMap<String, Detection>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Element {
    Hwp {
        path: PathSpec,
    },
    /// A single input means the second port is vacuum.
    Pbs {
        #[serde(rename = "in")]
        inputs: Vec<String>,
        out: [String; 2],
    },
    /// Wire crossing: the two labels are exchanged.
    Swap {
        paths: [String; 2],
    },
    Detector {
        path: String,
    },
    Mark {
        label: String,
    },
    Herald {
        pattern: HeraldPattern,
    },
}

pub fn apply_hwp(s: &OpticalState, path: &str) -> Result<OpticalState> {
    let idx = s.index(path)?;
    let r = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let st = s.state.transform_modes(s.paths.len(), |m| {
        if m.spatial != idx {
            vec![(m, Complex64::new(1.0, 0.0))]
        } else if m.internal == H {
            vec![(ModeKey::new(idx, H), r), (ModeKey::new(idx, V), r)]
        } else {
            vec![(ModeKey::new(idx, H), r), (ModeKey::new(idx, V), -r)]
        }
    })?;
    OpticalState::new(s.paths.clone(), st)
}

/// `in2 = None` is a vacuum port. Outputs replace the inputs in path order;
/// an output without a matching input is appended.
pub fn apply_pbs(s: &OpticalState, in1: &str, in2: Option<&str>, out1: &str, out2: &str) -> Result<OpticalState> {
    if out1 == out2 || in2 == Some(in1) {
        return Err(Error::InvalidArgument("PBS ports must be distinct".into()));
    }
    let i1 = s.index(in1)?;
    let i2 = in2.map(|p| s.index(p)).transpose()?;
    for out in [out1, out2] {
        if let Some(j) = s.paths.iter().position(|p| p == out) {
            if j != i1 && Some(j) != i2 {
                return Err(Error::InvalidArgument(format!("PBS output '{out}' collides with an existing path")));
            }
        }
    }
    let mut paths = s.paths.clone();
    paths[i1] = out1.to_string();
    let o2 = match i2 {
        Some(j) => {
            paths[j] = out2.to_string();
            j
        }
        None => {
            paths.push(out2.to_string());
            paths.len() - 1
        }
    };
    let one = Complex64::new(1.0, 0.0);
    let st = s.state.transform_modes(paths.len(), |m| {
        let target = if m.spatial == i1 {
            if m.internal == H { ModeKey::new(i1, H) } else { ModeKey::new(o2, V) }
        } else if Some(m.spatial) == i2 {
            if m.internal == H { ModeKey::new(o2, H) } else { ModeKey::new(i1, V) }
        } else {
            m
        };
        vec![(target, one)]
    })?;
    OpticalState::new(paths, st)
}

pub fn apply_swap(s: &OpticalState, a: &str, b: &str) -> Result<OpticalState> {
    let (i, j) = (s.index(a)?, s.index(b)?);
    let mut paths = s.paths.clone();
    paths.swap(i, j);
    OpticalState::new(paths, s.state.clone())
}

/// Projects onto the pattern, removes the detector paths, and returns the
/// unnormalized remainder with its squared norm.
pub fn herald(s: &OpticalState, pattern: &HeraldPattern) -> Result<(OpticalState, f64)> {
    let mut watched = Vec::with_capacity(pattern.len());
    for (p, det) in pattern {
        if det.count > 0 && det.pol.is_none() {
            return Err(Error::InvalidArgument(format!(
                "detector '{p}' must resolve polarization when it expects photons"
            )));
        }
        watched.push((s.index(p)?, det));
    }
    let kept = s.state.filter(|cfg| {
        watched.iter().all(|&(j, det)| {
            let total = cfg.spatial_count(j);
            match det.pol {
                Some(pol) => total == det.count && cfg.count(ModeKey::new(j, pol.level())) == det.count,
                None => total == det.count,
            }
        })
    });
    let remaining: Vec<String> = s.paths.iter().filter(|p| !pattern.contains_key(*p)).cloned().collect();
    if remaining.is_empty() {
        return Err(Error::InvalidArgument("herald would remove every path".into()));
    }
    let map: Vec<Option<usize>> = s.paths.iter().map(|p| remaining.iter().position(|q| q == p)).collect();
    let st = reindex(&kept, &map, remaining.len())?;
    let p = st.norm_sqr();
    Ok((OpticalState::new(remaining, st)?, p))
}

/// Whether the last PBS of a subtractor sorts `H/V` directly or `D/A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Rectilinear,
    Diagonal,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Circuit {
    pub elements: Vec<Element>,
    #[serde(skip)]
    subtractors: Vec<(String, String)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CircuitRun {
    pub state: OpticalState,
    pub marks: Vec<(String, OpticalState)>,
    pub detectors: Vec<String>,
    /// Product of herald probabilities along the run.
    pub probability: f64,
}

impl Circuit {
    pub fn new(elements: Vec<Element>) -> Self {
        Circuit { elements, subtractors: Vec::new() }
    }

    pub fn push(&mut self, e: Element) {
        self.elements.push(e);
    }

    /// Appends a subtractor taking wires `a` and `b`; returns its two
    /// detector paths `b1`, `b2`.
    pub fn heralded_subtractor(&mut self, a: &str, b: &str, analysis: Analysis) -> Result<[String; 2]> {
        if a == b {
            return Err(Error::InvalidArgument("subtractor wires must be distinct paths".into()));
        }
        let key = (a.to_string(), b.to_string());
        if self.subtractors.iter().any(|(x, y)| (x, y) == (&key.0, &key.1) || (x, y) == (&key.1, &key.0)) {
            return Err(Error::InvalidArgument(format!("a subtractor already acts on paths {a} and {b}")));
        }
        let d1 = format!("{b}1");
        let d2 = format!("{b}2");
        self.push(Element::Hwp { path: PathSpec::Many(vec![a.to_string(), b.to_string()]) });
        self.push(Element::Pbs { inputs: vec![a.to_string(), b.to_string()], out: [a.to_string(), b.to_string()] });
        if analysis == Analysis::Diagonal {
            self.push(Element::Hwp { path: PathSpec::One(b.to_string()) });
        }
        self.push(Element::Pbs { inputs: vec![b.to_string()], out: [d1.clone(), d2.clone()] });
        self.push(Element::Detector { path: d1.clone() });
        self.push(Element::Detector { path: d2.clone() });
        self.subtractors.push(key);
        Ok([d1, d2])
    }

    pub fn run(&self, initial: &OpticalState) -> Result<CircuitRun> {
        let mut s = initial.clone();
        let mut marks = Vec::new();
        let mut detectors = Vec::new();
        let mut probability = 1.0;
        for e in &self.elements {
            match e {
                Element::Hwp { path } => {
                    for p in path.list() {
                        s = apply_hwp(&s, &p)?;
                    }
                }
                Element::Pbs { inputs, out } => {
                    let (in1, in2) = match inputs.as_slice() {
                        [a] => (a.as_str(), None),
                        [a, b] => (a.as_str(), Some(b.as_str())),
                        _ => return Err(Error::InvalidArgument("PBS takes one or two inputs".into())),
                    };
                    s = apply_pbs(&s, in1, in2, &out[0], &out[1])?;
                }
                Element::Swap { paths } => s = apply_swap(&s, &paths[0], &paths[1])?,
                Element::Detector { path } => {
                    s.index(path)?;
                    detectors.push(path.clone());
                }
                Element::Mark { label } => marks.push((label.clone(), s.clone())),
                Element::Herald { pattern } => {
                    let (rest, p) = herald(&s, pattern)?;
                    detectors.retain(|d| !pattern.contains_key(d));
                    // herald probabilities are conditional on earlier branches
                    let prior = s.norm_sqr();
                    probability *= if prior > 0.0 { p / prior } else { 0.0 };
                    s = rest;
                }
            }
        }
        Ok(CircuitRun { state: s, marks, detectors, probability })
    }
}

/// The two-party Bell circuit built from two overlapped subtractors, with
/// marks after each of the five stages.
pub fn bell_circuit() -> Circuit {
    let s = |x: &str| x.to_string();
    let mut c = Circuit::new(vec![
        Element::Hwp { path: PathSpec::Many(vec![s("1"), s("2")]) },
        Element::Mark { label: s("step1") },
        Element::Pbs { inputs: vec![s("1")], out: [s("11"), s("12")] },
        Element::Pbs { inputs: vec![s("2")], out: [s("21"), s("22")] },
        Element::Mark { label: s("step2") },
        Element::Swap { paths: [s("12"), s("22")] },
        Element::Hwp { path: PathSpec::Many(vec![s("11"), s("12"), s("21"), s("22")]) },
        Element::Mark { label: s("step3") },
        Element::Pbs { inputs: vec![s("11"), s("12")], out: [s("11"), s("12")] },
        Element::Pbs { inputs: vec![s("21"), s("22")], out: [s("21"), s("22")] },
        Element::Mark { label: s("step4") },
        Element::Hwp { path: PathSpec::Many(vec![s("12"), s("22")]) },
        Element::Pbs { inputs: vec![s("12")], out: [s("121"), s("122")] },
        Element::Pbs { inputs: vec![s("22")], out: [s("221"), s("222")] },
    ]);
    for d in ["121", "122", "221", "222"] {
        c.push(Element::Detector { path: d.to_string() });
    }
    c.push(Element::Mark { label: s("step5") });
    c
}

/// The same circuit assembled from [`Circuit::heralded_subtractor`] blocks.
pub fn bell_circuit_from_subtractors() -> Result<Circuit> {
    let s = |x: &str| x.to_string();
    let mut c = Circuit::new(vec![
        Element::Hwp { path: PathSpec::Many(vec![s("1"), s("2")]) },
        Element::Pbs { inputs: vec![s("1")], out: [s("11"), s("12")] },
        Element::Pbs { inputs: vec![s("2")], out: [s("21"), s("22")] },
        Element::Swap { paths: [s("12"), s("22")] },
    ]);
    c.heralded_subtractor("11", "12", Analysis::Diagonal)?;
    c.heralded_subtractor("21", "22", Analysis::Diagonal)?;
    Ok(c)
}

/// Algebraic form of the Bell circuit's state at each mark. The last entry
/// is only the part with one photon on each of 11, 21, {121,122} and
/// {221,222}; compare it against the projection of the simulated state.
pub fn bell_step_expectations() -> Result<Vec<(String, OpticalState)>> {
    use Polarization::{H as PH, V as PV};
    let r = FRAC_1_SQRT_2;
    let c = |x: f64| Complex64::new(x, 0.0);
    let d = |p: &'static str| vec![(c(r), p, PH), (c(r), p, PV)];
    let a = |p: &'static str| vec![(c(r), p, PH), (c(-r), p, PV)];
    let lin = |x: &'static str, px, sign: f64, y: &'static str, py| vec![(c(1.0), x, px), (c(sign), y, py)];
    let one = |x: &'static str, p| vec![(c(1.0), x, p)];
    let mut out = Vec::new();
    let p1 = ["1", "2"];
    out.push(("step1".to_string(), OpticalState::from_polynomial(&p1, c(1.0), &[d("1"), a("1"), d("2"), a("2")])?));
    let p2 = ["11", "12", "21", "22"];
    out.push((
        "step2".to_string(),
        OpticalState::from_polynomial(
            &p2,
            c(0.25),
            &[lin("11", PH, 1.0, "12", PV), lin("11", PH, -1.0, "12", PV), lin("21", PH, 1.0, "22", PV), lin("21", PH, -1.0, "22", PV)],
        )?,
    ));
    // step 3: ¼(D11² − A22²)(D21² − A12²), expanded term by term
    let mut s3 = FockState::zero(4, 2)?;
    for (x, sx) in [((d("11"), d("11")), 1.0), ((a("22"), a("22")), -1.0)] {
        for (y, sy) in [((d("21"), d("21")), 1.0), ((a("12"), a("12")), -1.0)] {
            let t = OpticalState::from_polynomial(&p2, c(0.25 * sx * sy), &[x.0.clone(), x.1.clone(), y.0.clone(), y.1.clone()])?;
            s3 = s3.add(&t.state)?;
        }
    }
    out.push(("step3".to_string(), OpticalState::new(p2.iter().map(|p| p.to_string()).collect(), s3)?));
    // step 4: (1/16)((11H+12V)² − (22H−21V)²)((21H+22V)² − (12H−11V)²)
    let f1 = lin("11", PH, 1.0, "12", PV);
    let g1 = lin("22", PH, -1.0, "21", PV);
    let f2 = lin("21", PH, 1.0, "22", PV);
    let g2 = lin("12", PH, -1.0, "11", PV);
    let mut s4 = FockState::zero(4, 2)?;
    for (x, sx) in [(&f1, 1.0), (&g1, -1.0)] {
        for (y, sy) in [(&f2, 1.0), (&g2, -1.0)] {
            let t = OpticalState::from_polynomial(&p2, c(sx * sy / 16.0), &[x.clone(), x.clone(), y.clone(), y.clone()])?;
            s4 = s4.add(&t.state)?;
        }
    }
    out.push(("step4".to_string(), OpticalState::new(p2.iter().map(|p| p.to_string()).collect(), s4)?));
    // step 5 accepted part: ⅛(11H 21H (121H−122V)(221H−222V) + 11V 21V (121H+122V)(221H+222V))
    let p5 = ["11", "21", "121", "122", "221", "222"];
    let hh = OpticalState::from_polynomial(
        &p5,
        c(0.125),
        &[one("11", PH), one("21", PH), lin("121", PH, -1.0, "122", PV), lin("221", PH, -1.0, "222", PV)],
    )?;
    let vv = OpticalState::from_polynomial(
        &p5,
        c(0.125),
        &[one("11", PV), one("21", PV), lin("121", PH, 1.0, "122", PV), lin("221", PH, 1.0, "222", PV)],
    )?;
    out.push(("step5".to_string(), OpticalState::new(hh.paths.clone(), hh.state.add(&vv.state)?)?));
    Ok(out)
}

/// Compares a simulated mark against its algebraic form; the step-5 state is
/// projected onto the accepted configurations first. Returns the largest
/// amplitude difference.
pub fn compare_bell_step(label: &str, simulated: &OpticalState, expected: &OpticalState) -> Result<f64> {
    let order: Vec<&str> = expected.paths.iter().map(String::as_str).collect();
    let sim = if label == "step5" {
        let idx: Vec<usize> = order.iter().map(|p| simulated.index(p)).collect::<Result<_>>()?;
        let projected = simulated.project(|n| {
            n[idx[0]] == 1 && n[idx[1]] == 1 && n[idx[2]] + n[idx[3]] == 1 && n[idx[4]] + n[idx[5]] == 1
        });
        projected.reordered(&order)?
    } else {
        simulated.reordered(&order)?
    };
    if sim.paths.len() != order.len() {
        return Err(Error::Precondition(format!("{label}: simulated state has photons outside {order:?}")));
    }
    sim.state.max_abs_diff(&expected.state)
}

#[derive(Clone, Debug, Serialize)]
pub struct HeraldBranch {
    pub pattern: HeraldPattern,
    pub probability: f64,
    /// `+1` for `(|HH⟩+|VV⟩)/√2`, `−1` for `(|HH⟩−|VV⟩)/√2`.
    pub bell_sign: i8,
    pub fidelity: f64,
    pub conditional: LogicalState,
}

#[derive(Clone, Debug, Serialize)]
pub struct BellCircuitReport {
    pub steps: Vec<(String, OpticalState)>,
    pub branches: Vec<HeraldBranch>,
    pub total_probability: f64,
}

/// `(|HH⟩ + sign·|VV⟩)/√2`.
pub fn bell_hv(sign: i8) -> LogicalState {
    let g = ghz_target(2, 2).expect("N=2, d=2 is valid");
    let mut amps = g.amps().to_vec();
    amps[3] *= f64::from(sign);
    LogicalState::new(2, 2, amps).expect("unit norm")
}

/// Runs the Bell circuit and enumerates every herald outcome with one photon
/// on each detector pair.
pub fn run_bell_circuit() -> Result<BellCircuitReport> {
    let init = OpticalState::one_h_one_v(&["1", "2"])?;
    let run = bell_circuit().run(&init)?;
    let last = &run.state;
    let pairs = [["121", "122"], ["221", "222"]];
    let pols = [Polarization::H, Polarization::V];
    let mut branches = Vec::new();
    for (&a, &pa) in pairs[0].iter().flat_map(|a| pols.iter().map(move |p| (a, p))).collect::<Vec<_>>().iter() {
        for (&b, &pb) in pairs[1].iter().flat_map(|b| pols.iter().map(move |p| (b, p))).collect::<Vec<_>>().iter() {
            let mut pattern = HeraldPattern::new();
            for d in pairs.iter().flatten() {
                pattern.insert(d.to_string(), Detection { count: 0, pol: None });
            }
            pattern.insert(a.to_string(), Detection { count: 1, pol: Some(pa) });
            pattern.insert(b.to_string(), Detection { count: 1, pol: Some(pb) });
            let (rest, p) = herald(last, &pattern)?;
            if p < 1e-12 {
                continue;
            }
            let (conditional, _) = rest.logical(&["11", "21"])?;
            let sign = if pa == pb { 1 } else { -1 };
            let fidelity = conditional.fidelity_up_to_phase(&bell_hv(sign))?;
            branches.push(HeraldBranch { pattern, probability: p, bell_sign: sign, fidelity, conditional });
        }
    }
    let total_probability = branches.iter().map(|b| b.probability).sum();
    Ok(BellCircuitReport { steps: run.marks, branches, total_probability })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarization::{H as PH, V as PV};

    fn single(path: &str, pol: Polarization) -> OpticalState {
        let st = FockState::vacuum(1, 2).unwrap();
        let st = st.apply_creation(0, &crate::fock::InternalVector::basis(2, pol.level()).unwrap()).unwrap();
        OpticalState::new(vec![path.to_string()], st).unwrap()
    }

    #[test]
    fn hwp_rotates_and_is_involutive() {
        let s = single("1", PH);
        let r = apply_hwp(&s, "1").unwrap();
        assert!((r.amplitude(&[("1", PH, 1)]).unwrap().re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((r.amplitude(&[("1", PV, 1)]).unwrap().re - FRAC_1_SQRT_2).abs() < 1e-15);
        let back = apply_hwp(&r, "1").unwrap();
        assert!(back.state.approx_eq(&s.state, 1e-15));
        assert!(apply_hwp(&s, "9").is_err());
    }

    #[test]
    fn hwp_on_hv_pair() {
        let s = OpticalState::one_h_one_v(&["1"]).unwrap();
        let r = apply_hwp(&s, "1").unwrap();
        // ½(a†²_H − a†²_V)|vac⟩ → amplitudes ±√2/2 on doubly occupied modes
        let a = r.amplitude(&[("1", PH, 2)]).unwrap();
        let b = r.amplitude(&[("1", PV, 2)]).unwrap();
        assert!((a.re - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((b.re + FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(r.state.len(), 2);
    }

    #[test]
    fn pbs_transmits_h_and_reflects_v() {
        let s = single("a", PH);
        let r = apply_pbs(&s, "a", None, "x", "y").unwrap();
        assert_eq!(r.paths, vec!["x", "y"]);
        assert!((r.amplitude(&[("x", PH, 1)]).unwrap().re - 1.0).abs() < 1e-15);
        let s = single("a", PV);
        let r = apply_pbs(&s, "a", None, "x", "y").unwrap();
        assert!((r.amplitude(&[("y", PV, 1)]).unwrap().re - 1.0).abs() < 1e-15);
        assert!(apply_pbs(&s, "a", None, "x", "x").is_err());
        assert!(matches!(apply_pbs(&s, "zz", None, "x", "y"), Err(Error::UnknownPath(_))));
    }

    #[test]
    fn herald_on_empty_path_has_zero_probability() {
        let s = OpticalState::one_h_one_v(&["1", "2"]).unwrap();
        let s = apply_pbs(&s, "1", None, "11", "12").unwrap();
        let s = apply_pbs(&s, "11", None, "111", "e").unwrap();
        let mut pat = HeraldPattern::new();
        pat.insert("e".into(), Detection { count: 1, pol: Some(PH) });
        let (_, p) = herald(&s, &pat).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn subtractor_fragment_shape() {
        let mut c = Circuit::default();
        c.heralded_subtractor("a", "b", Analysis::Rectilinear).unwrap();
        let count = |f: fn(&Element) -> bool| c.elements.iter().filter(|e| f(e)).count();
        assert_eq!(count(|e| matches!(e, Element::Pbs { .. })), 2);
        assert_eq!(count(|e| matches!(e, Element::Hwp { .. })), 1);
        assert_eq!(count(|e| matches!(e, Element::Detector { .. })), 2);
        assert!(c.heralded_subtractor("a", "b", Analysis::Rectilinear).is_err());
        assert!(c.heralded_subtractor("b", "a", Analysis::Diagonal).is_err());
    }

    #[test]
    fn single_mode_subtractor_heralds_h_or_v() {
        let init = OpticalState::one_h_one_v(&["1"]).unwrap();
        let mut c = Circuit::new(vec![
            Element::Hwp { path: PathSpec::One("1".into()) },
            Element::Pbs { inputs: vec!["1".into()], out: ["1".into(), "2".into()] },
        ]);
        let [d1, d2] = c.heralded_subtractor("1", "2", Analysis::Rectilinear).unwrap();
        let run = c.run(&init).unwrap();
        let pattern = |path: &str, pol| {
            let mut p = HeraldPattern::new();
            p.insert(d1.clone(), Detection { count: 0, pol: None });
            p.insert(d2.clone(), Detection { count: 0, pol: None });
            p.insert(path.to_string(), Detection { count: 1, pol: Some(pol) });
            p
        };
        let (rest, p) = herald(&run.state, &pattern(&d2, PV)).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
        let h = rest.amplitude(&[("1", PH, 1)]).unwrap();
        assert!((h.norm_sqr() - 0.25).abs() < 1e-12);
        let (rest, p) = herald(&run.state, &pattern(&d1, PH)).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
        assert!((rest.amplitude(&[("1", PV, 1)]).unwrap().norm_sqr() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bell_circuit_branches() {
        let r = run_bell_circuit().unwrap();
        assert_eq!(r.branches.len(), 4);
        for b in &r.branches {
            assert!((b.fidelity - 1.0).abs() < 1e-9);
            assert!((b.probability - 1.0 / 32.0).abs() < 1e-12);
        }
        assert!((r.total_probability - 0.125).abs() < 1e-12);
        assert_eq!(r.steps.len(), 5);
    }

    #[test]
    fn subtractor_assembly_matches_explicit_circuit() {
        let init = OpticalState::one_h_one_v(&["1", "2"]).unwrap();
        let a = bell_circuit().run(&init).unwrap().state;
        let b = bell_circuit_from_subtractors().unwrap().run(&init).unwrap().state;
        let order: Vec<&str> = a.paths.iter().map(String::as_str).collect();
        let b = b.reordered(&order).unwrap();
        assert!(a.state.approx_eq(&b.state, 1e-12));
    }

    #[test]
    fn marks_match_algebraic_steps() {
        let init = OpticalState::one_h_one_v(&["1", "2"]).unwrap();
        let run = bell_circuit().run(&init).unwrap();
        let expected = bell_step_expectations().unwrap();
        assert_eq!(run.marks.len(), expected.len());
        for ((label, sim), (l2, exp)) in run.marks.iter().zip(&expected) {
            assert_eq!(label, l2);
            let diff = compare_bell_step(label, sim, exp).unwrap();
            assert!(diff < 1e-12, "{label}: {diff}");
        }
    }

    #[test]
    fn polynomial_builder_counts_bosons() {
        let s = OpticalState::from_polynomial(
            &["a"],
            Complex64::new(1.0, 0.0),
            &[vec![(Complex64::new(1.0, 0.0), "a", PH)], vec![(Complex64::new(1.0, 0.0), "a", PH)]],
        )
        .unwrap();
        assert!((s.amplitude(&[("a", PH, 2)]).unwrap().re - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn circuit_json_schema() {
        let c = bell_circuit();
        let text = serde_json::to_string(&c.elements).unwrap();
        assert!(text.starts_with(r#"[{"op":"hwp","path":["1","2"]}"#));
        assert!(text.contains(r#"{"op":"pbs","in":["1"],"out":["11","12"]}"#));
        let back: Vec<Element> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c.elements);
        let h: Element = serde_json::from_str(r#"{"op":"herald","pattern":{"121":{"count":1,"pol":"H"}}}"#).unwrap();
        assert!(matches!(h, Element::Herald { .. }));
    }
}
