//! Sculpting bigraphs.
//!
//! Circles are spatial modes (system modes first, then ancillas), dots are
//! subtraction factors, and a weighted colored edge from a dot to a circle is
//! one term `α a_{j,color}` of that factor. A dot may stand for several
//! identical factors through its multiplicity.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::engine::{maximally_symmetric_state, SculptingOperator, SubtractionOperator, SubtractionTerm};
use crate::error::{Error, Result};
use crate::fock::{fourier_internal, FockState, InternalVector};
use crate::format::fmt_complex;

const NORM_TOLERANCE: f64 = 1e-9;
const MERGE_TOLERANCE: f64 = 1e-12;

/// Internal-state label of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "ColorRepr", into = "ColorRepr")]
pub enum EdgeColor {
    /// `|0⟩`
    Black,
    /// `|1⟩`
    Dotted,
    /// `|+⟩`
    Red,
    /// `|−⟩`
    Blue,
    /// Fourier basis vector `|k̃⟩`
    Fourier(usize),
    /// Computational level `|s⟩`
    Level(usize),
}

impl EdgeColor {
    pub fn resolve(&self, d: usize) -> Result<InternalVector> {
        match *self {
            EdgeColor::Black => InternalVector::basis(d, 0),
            EdgeColor::Dotted => InternalVector::basis(d, 1),
            EdgeColor::Red | EdgeColor::Blue if d != 2 => Err(Error::InvalidArgument(format!(
                "{self:?} is a qubit color but d={d}; use a Fourier index"
            ))),
            EdgeColor::Red => fourier_internal(2, 0),
            EdgeColor::Blue => fourier_internal(2, 1),
            EdgeColor::Fourier(k) => fourier_internal(d, k),
            EdgeColor::Level(s) => InternalVector::basis(d, s),
        }
    }

    /// Maps qubit-equivalent indexed colors onto the four named ones.
    pub fn qubit_named(&self) -> EdgeColor {
        match *self {
            EdgeColor::Fourier(0) => EdgeColor::Red,
            EdgeColor::Fourier(1) => EdgeColor::Blue,
            EdgeColor::Level(0) => EdgeColor::Black,
            EdgeColor::Level(1) => EdgeColor::Dotted,
            c => c,
        }
    }
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
enum NamedColor {
    Black,
    Dotted,
    Red,
    Blue,
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
enum ColorRepr {
    Named(NamedColor),
    Fourier { fourier: usize },
    Level { level: usize },
}

impl From<ColorRepr> for EdgeColor {
    fn from(r: ColorRepr) -> Self {
        match r {
            ColorRepr::Named(NamedColor::Black) => EdgeColor::Black,
            ColorRepr::Named(NamedColor::Dotted) => EdgeColor::Dotted,
            ColorRepr::Named(NamedColor::Red) => EdgeColor::Red,
            ColorRepr::Named(NamedColor::Blue) => EdgeColor::Blue,
            ColorRepr::Fourier { fourier } => EdgeColor::Fourier(fourier),
            ColorRepr::Level { level } => EdgeColor::Level(level),
        }
    }
}

impl From<EdgeColor> for ColorRepr {
    fn from(c: EdgeColor) -> Self {
        match c {
            EdgeColor::Black => ColorRepr::Named(NamedColor::Black),
            EdgeColor::Dotted => ColorRepr::Named(NamedColor::Dotted),
            EdgeColor::Red => ColorRepr::Named(NamedColor::Red),
            EdgeColor::Blue => ColorRepr::Named(NamedColor::Blue),
            EdgeColor::Fourier(k) => ColorRepr::Fourier { fourier: k },
            EdgeColor::Level(s) => ColorRepr::Level { level: s },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub circle: usize,
    pub amplitude: Complex64,
    pub color: EdgeColor,
}

impl Edge {
    pub fn new(circle: usize, amplitude: Complex64, color: EdgeColor) -> Self {
        Edge { circle, amplitude, color }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dot {
    pub multiplicity: usize,
    pub edges: Vec<Edge>,
}

impl Dot {
    pub fn new(edges: Vec<Edge>) -> Self {
        Dot { multiplicity: 1, edges }
    }

    pub fn with_multiplicity(multiplicity: usize, edges: Vec<Edge>) -> Self {
        Dot { multiplicity, edges }
    }
}

fn cmp_edge(a: &Edge, b: &Edge) -> Ordering {
    a.circle
        .cmp(&b.circle)
        .then(a.color.cmp(&b.color))
        .then(a.amplitude.re.total_cmp(&b.amplitude.re))
        .then(a.amplitude.im.total_cmp(&b.amplitude.im))
}

fn cmp_dot(a: &Dot, b: &Dot) -> Ordering {
    let circles = |d: &Dot| d.edges.iter().map(|e| e.circle).collect::<Vec<_>>();
    circles(a).cmp(&circles(b)).then_with(|| {
        for (x, y) in a.edges.iter().zip(&b.edges) {
            let o = cmp_edge(x, y);
            if o != Ordering::Equal {
                return o;
            }
        }
        a.multiplicity.cmp(&b.multiplicity)
    })
}

fn dots_match(a: &Dot, b: &Dot) -> bool {
    a.edges.len() == b.edges.len()
        && a.edges.iter().zip(&b.edges).all(|(x, y)| {
            x.circle == y.circle && x.color == y.color && (x.amplitude - y.amplitude).norm() < MERGE_TOLERANCE
        })
}

/// A validated, canonically ordered sculpting bigraph.
#[derive(Clone, Debug, PartialEq)]
pub struct SculptingBigraph {
    n_system: usize,
    n_ancilla: usize,
    d: usize,
    dots: Vec<Dot>,
}

/// One edge per dot copy; `edges[i] = (dot, edge)` for the `i`-th copy in dot order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PerfectMatching {
    pub edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpmReport {
    pub epm: bool,
    pub offending: Vec<CircleDiagnosis>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircleDiagnosis {
    pub circle: usize,
    pub reason: String,
}

impl SculptingBigraph {
    pub fn new(n_system: usize, n_ancilla: usize, d: usize, dots: Vec<Dot>) -> Result<Self> {
        if n_system < 1 {
            return Err(Error::InvalidArgument("need at least one system circle".into()));
        }
        if d < 2 {
            return Err(Error::InvalidArgument(format!("internal dimension {d} < 2")));
        }
        let circles = n_system + n_ancilla;
        let mut dots = dots;
        for (i, dot) in dots.iter_mut().enumerate() {
            if dot.multiplicity == 0 {
                return Err(Error::InvalidArgument(format!("dot {i} has multiplicity 0")));
            }
            if dot.edges.is_empty() {
                return Err(Error::InvalidArgument(format!("dot {i} has no edges")));
            }
            for e in &dot.edges {
                if e.circle >= circles {
                    return Err(Error::InvalidArgument(format!(
                        "dot {i} points at circle {} but only {circles} circles exist",
                        e.circle
                    )));
                }
                e.color.resolve(d)?;
            }
            let norm: f64 = dot.edges.iter().map(|e| e.amplitude.norm_sqr()).sum();
            if (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(Error::Normalization { what: format!("dot {i} edge weights"), norm_sqr: norm });
            }
            dot.edges.sort_by(cmp_edge);
            for w in dot.edges.windows(2) {
                if w[0].circle == w[1].circle && w[0].color == w[1].color {
                    return Err(Error::InvalidArgument(format!(
                        "dot {i} has two {:?} edges to circle {}",
                        w[0].color, w[0].circle
                    )));
                }
            }
        }
        dots.sort_by(cmp_dot);
        Ok(SculptingBigraph { n_system, n_ancilla, d, dots })
    }

    pub fn n_system(&self) -> usize {
        self.n_system
    }

    pub fn n_ancilla(&self) -> usize {
        self.n_ancilla
    }

    pub fn circle_count(&self) -> usize {
        self.n_system + self.n_ancilla
    }

    pub fn internal_dim(&self) -> usize {
        self.d
    }

    pub fn dots(&self) -> &[Dot] {
        &self.dots
    }

    pub fn edge_count(&self) -> usize {
        self.dots.iter().map(|d| d.edges.len()).sum()
    }

    /// Number of subtraction factors, counting multiplicity.
    pub fn copy_count(&self) -> usize {
        self.dots.iter().map(|d| d.multiplicity).sum()
    }

    /// Ancilla circles hold one level-0 boson each.
    pub fn initial_state(&self) -> Result<FockState> {
        maximally_symmetric_state(self.n_system, self.d, &vec![0; self.n_ancilla])
    }

    /// How many covering edges each circle needs in a perfect matching.
    pub fn circle_demand(&self) -> Vec<usize> {
        (0..self.circle_count())
            .map(|c| if c < self.n_system { self.d - 1 } else { 1 })
            .collect()
    }

    pub fn to_sculpting_operator(&self) -> Result<SculptingOperator> {
        let mut factors = Vec::with_capacity(self.copy_count());
        for dot in &self.dots {
            let terms = dot
                .edges
                .iter()
                .map(|e| Ok(SubtractionTerm::new(e.circle, e.amplitude, e.color.resolve(self.d)?)))
                .collect::<Result<Vec<_>>>()?;
            let f = SubtractionOperator::new(terms)?;
            for _ in 0..dot.multiplicity {
                factors.push(f.clone());
            }
        }
        SculptingOperator::new(factors, self.n_system, self.n_ancilla, self.d)
    }

    /// Reads a graph off an operator whose internal vectors are basis or
    /// Fourier vectors up to phase. Identical factors are merged into one dot.
    pub fn from_sculpting_operator(op: &SculptingOperator) -> Result<Self> {
        let d = op.internal_dim();
        let palette: Vec<(EdgeColor, InternalVector)> = palette(d)?;
        let mut dots: Vec<Dot> = Vec::new();
        for f in op.factors() {
            let mut edges = Vec::with_capacity(f.terms().len());
            for t in f.terms() {
                let (color, overlap) = palette
                    .iter()
                    .map(|(c, v)| (*c, v.inner(&t.internal)))
                    .find(|(_, o)| (o.norm() - 1.0).abs() < NORM_TOLERANCE)
                    .ok_or_else(|| {
                        Error::UnsupportedTarget(format!(
                            "internal vector on mode {} is not a basis or Fourier vector",
                            t.spatial
                        ))
                    })?;
                // ψ = e^{iθ} c, so a_ψ = e^{−iθ} a_c
                let phase = overlap / overlap.norm();
                edges.push(Edge::new(t.spatial, t.amplitude * phase.conj(), color));
            }
            edges.sort_by(cmp_edge);
            let dot = Dot::new(edges);
            match dots.iter_mut().find(|d| dots_match(d, &dot)) {
                Some(existing) => existing.multiplicity += 1,
                None => dots.push(dot),
            }
        }
        SculptingBigraph::new(op.n_system(), op.n_ancilla(), d, dots)
    }

    /// All perfect matchings, treating copies of a dot as interchangeable.
    pub fn enumerate_perfect_matchings(&self) -> Vec<PerfectMatching> {
        let mut remaining = self.circle_demand();
        let need: usize = remaining.iter().sum();
        let copies: Vec<usize> = self
            .dots
            .iter()
            .enumerate()
            .flat_map(|(i, d)| std::iter::repeat_n(i, d.multiplicity))
            .collect();
        if need != copies.len() {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut chosen = Vec::with_capacity(copies.len());
        self.pm_backtrack(&copies, 0, &mut remaining, &mut chosen, &mut out);
        out
    }

    fn pm_backtrack(
        &self,
        copies: &[usize],
        pos: usize,
        remaining: &mut [usize],
        chosen: &mut Vec<(usize, usize)>,
        out: &mut Vec<PerfectMatching>,
    ) {
        if pos == copies.len() {
            out.push(PerfectMatching { edges: chosen.clone() });
            return;
        }
        let dot = copies[pos];
        // copies of the same dot pick edges in non-decreasing order
        let start = match chosen.last() {
            Some(&(prev, e)) if prev == dot => e,
            _ => 0,
        };
        for (ei, edge) in self.dots[dot].edges.iter().enumerate().skip(start) {
            if remaining[edge.circle] == 0 {
                continue;
            }
            remaining[edge.circle] -= 1;
            chosen.push((dot, ei));
            if self.coverable(copies, pos + 1, remaining) {
                self.pm_backtrack(copies, pos + 1, remaining, chosen, out);
            }
            chosen.pop();
            remaining[edge.circle] += 1;
        }
    }

    /// Every circle still needing an edge must be adjacent to some later copy.
    fn coverable(&self, copies: &[usize], from: usize, remaining: &[usize]) -> bool {
        let mut reach = vec![0usize; remaining.len()];
        for &dot in &copies[from..] {
            for e in &self.dots[dot].edges {
                reach[e.circle] += 1;
            }
        }
        remaining.iter().zip(&reach).all(|(&r, &n)| r <= n)
    }

    /// Product of the chosen edge amplitudes.
    pub fn pm_weight(&self, pm: &PerfectMatching) -> Complex64 {
        pm.edges.iter().map(|&(d, e)| self.dots[d].edges[e].amplitude).product()
    }

    /// Syntactic EPM test for qubit graphs.
    pub fn is_epm(&self) -> Result<EpmReport> {
        if self.d != 2 {
            return Err(Error::Precondition(format!("EPM is defined for d=2, graph has d={}", self.d)));
        }
        let mut incident: Vec<BTreeMap<EdgeColor, usize>> = vec![BTreeMap::new(); self.circle_count()];
        for dot in &self.dots {
            for e in &dot.edges {
                *incident[e.circle].entry(e.color.qubit_named()).or_insert(0) += dot.multiplicity;
            }
        }
        let mut offending = Vec::new();
        for (circle, colors) in incident.iter().enumerate() {
            let count = |c: EdgeColor| colors.get(&c).copied().unwrap_or(0);
            let total: usize = colors.values().sum();
            let ok = (colors.len() == 2 && count(EdgeColor::Red) == 1 && count(EdgeColor::Blue) == 1)
                || (colors.len() == 1 && (count(EdgeColor::Black) >= 1 || count(EdgeColor::Dotted) >= 1));
            if !ok {
                let reason = if total == 0 {
                    "no incident edges".to_string()
                } else {
                    let parts: Vec<String> = colors.iter().map(|(c, n)| format!("{n}x{c:?}")).collect();
                    format!("incident colors {{{}}} match no allowed pattern", parts.join(", "))
                };
                offending.push(CircleDiagnosis { circle, reason });
            }
        }
        Ok(EpmReport { epm: offending.is_empty(), offending })
    }

    /// Sum over perfect matchings of the matched annihilations applied to `initial`.
    pub fn pm_sum_state(&self, initial: &FockState) -> Result<FockState> {
        let report = self.is_epm()?;
        if !report.epm {
            return Err(Error::Precondition(format!(
                "graph is not EPM ({} offending circle(s))",
                report.offending.len()
            )));
        }
        self.pm_contribution(initial)
    }

    /// The PM part of the final state, without the EPM precondition.
    pub fn pm_contribution(&self, initial: &FockState) -> Result<FockState> {
        let dims = initial.dims();
        let mut acc = FockState::zero(dims.spatial, dims.internal)?;
        for pm in self.enumerate_perfect_matchings() {
            let mut st = initial.clone();
            for &(d, e) in &pm.edges {
                let edge = &self.dots[d].edges[e];
                st = st.apply_annihilation(edge.circle, &edge.color.resolve(self.d)?)?;
            }
            // identical copies: count each multiset once per ordering of copies
            let mult = copy_orderings(&pm);
            acc = acc.add(&st.scaled(self.pm_weight(&pm) * mult))?;
        }
        Ok(acc)
    }

    /// Relabels circles: circle `c` becomes `sigma[c]`. `sigma` covers the
    /// system circles, or all circles with every ancilla fixed.
    pub fn permute_circle_labels(&self, sigma: &[usize]) -> Result<SculptingBigraph> {
        let n = self.n_system;
        if sigma.len() != n && sigma.len() != self.circle_count() {
            return Err(Error::InvalidArgument(format!(
                "permutation has length {}, expected {} or {}",
                sigma.len(),
                n,
                self.circle_count()
            )));
        }
        if let Some(k) = (n..sigma.len()).find(|&k| sigma[k] != k) {
            return Err(Error::InvalidArgument(format!("permutation moves ancilla circle {k}")));
        }
        let mut seen = vec![false; n];
        for &s in &sigma[..n] {
            if s >= n || seen[s] {
                return Err(Error::InvalidArgument("not a permutation of the system circles".into()));
            }
            seen[s] = true;
        }
        let map = |c: usize| if c < n { sigma[c] } else { c };
        let dots = self
            .dots
            .iter()
            .map(|d| Dot {
                multiplicity: d.multiplicity,
                edges: d.edges.iter().map(|e| Edge { circle: map(e.circle), ..e.clone() }).collect(),
            })
            .collect();
        SculptingBigraph::new(self.n_system, self.n_ancilla, self.d, dots)
    }

    fn circle_label(&self, c: usize) -> String {
        if c < self.n_system {
            format!("{}", c + 1)
        } else {
            format!("A{}", c - self.n_system + 1)
        }
    }

    /// Graphviz rendering. Directed mode also draws the creation side: one
    /// source point per initial boson with an arrow into its circle.
    pub fn export_dot(&self, directed: bool) -> String {
        let (kw, arrow) = if directed { ("digraph", "->") } else { ("graph", "--") };
        let mut s = format!("{kw} sculpting {{\n");
        if self.dots.is_empty() {
            s.push_str("}\n");
            return s;
        }
        s.push_str("  node [shape=circle];\n");
        for c in 0..self.circle_count() {
            let _ = writeln!(s, "  c{c} [label=\"{}\"];", self.circle_label(c));
        }
        for (i, dot) in self.dots.iter().enumerate() {
            if dot.multiplicity > 1 {
                let _ = writeln!(s, "  d{i} [shape=point, width=0.15, xlabel=\"x{}\"];", dot.multiplicity);
            } else {
                let _ = writeln!(s, "  d{i} [shape=point, width=0.15];");
            }
        }
        if directed {
            for c in 0..self.circle_count() {
                let bosons = if c < self.n_system { self.d } else { 1 };
                for b in 0..bosons {
                    let level = if c < self.n_system { b } else { 0 };
                    let _ = writeln!(s, "  s{c}_{b} [shape=point, width=0.08];");
                    let _ = writeln!(s, "  s{c}_{b} -> c{c} [label=\"{level}\"];");
                }
            }
        }
        for (i, dot) in self.dots.iter().enumerate() {
            for e in &dot.edges {
                let (color, style, tag) = match e.color.qubit_named() {
                    EdgeColor::Red => ("red", "solid", String::new()),
                    EdgeColor::Blue => ("blue", "solid", String::new()),
                    EdgeColor::Black => ("black", "solid", String::new()),
                    EdgeColor::Dotted => ("black", "dashed", String::new()),
                    EdgeColor::Fourier(k) => ("darkgreen", "solid", format!(" ~{k}")),
                    EdgeColor::Level(l) => ("gray40", "solid", format!(" |{l}>")),
                };
                let (from, to) = if directed {
                    (format!("c{}", e.circle), format!("d{i}"))
                } else {
                    (format!("d{i}"), format!("c{}", e.circle))
                };
                let _ = writeln!(
                    s,
                    "  {from} {arrow} {to} [color={color}, style={style}, label=\"{}{tag}\"];",
                    fmt_complex(e.amplitude)
                );
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Distinct orderings of copies that realize the same matching multiset.
fn copy_orderings(pm: &PerfectMatching) -> f64 {
    let mut groups: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for &(d, e) in &pm.edges {
        *groups.entry(d).or_default().entry(e).or_insert(0) += 1;
    }
    let fact = |n: usize| (1..=n).map(|x| x as f64).product::<f64>();
    groups
        .values()
        .map(|g| fact(g.values().sum()) / g.values().map(|&n| fact(n)).product::<f64>())
        .product()
}

fn palette(d: usize) -> Result<Vec<(EdgeColor, InternalVector)>> {
    let colors: Vec<EdgeColor> = if d == 2 {
        vec![EdgeColor::Black, EdgeColor::Dotted, EdgeColor::Red, EdgeColor::Blue]
    } else {
        (0..d).map(EdgeColor::Level).chain((0..d).map(EdgeColor::Fourier)).collect()
    };
    colors.into_iter().map(|c| Ok((c, c.resolve(d)?))).collect()
}

#[derive(Serialize, Deserialize)]
struct EdgeRepr {
    circle: usize,
    re: f64,
    im: f64,
    color: EdgeColor,
}

#[derive(Serialize, Deserialize)]
struct DotRepr {
    mult: usize,
    edges: Vec<EdgeRepr>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    dots: Vec<DotRepr>,
}

impl Serialize for SculptingBigraph {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let dots = self
            .dots
            .iter()
            .map(|d| DotRepr {
                mult: d.multiplicity,
                edges: d
                    .edges
                    .iter()
                    .map(|e| EdgeRepr { circle: e.circle, re: e.amplitude.re, im: e.amplitude.im, color: e.color })
                    .collect(),
            })
            .collect();
        GraphRepr { n: self.n_system, k: self.n_ancilla, d: self.d, dots }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SculptingBigraph {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let r = GraphRepr::deserialize(deserializer)?;
        let dots = r
            .dots
            .into_iter()
            .map(|d| Dot {
                multiplicity: d.mult,
                edges: d
                    .edges
                    .into_iter()
                    .map(|e| Edge::new(e.circle, Complex64::new(e.re, e.im), e.color))
                    .collect(),
            })
            .collect();
        SculptingBigraph::new(r.n, r.k, r.d, dots).map_err(serde::de::Error::custom)
    }
}
