//! Synthesis of sculpting bigraphs from a target state.
//!
//! 1. every nonzero target term becomes a skeleton: one dot per circle,
//!    each with a single edge whose color leaves the term's local state;
//! 2. skeleton dots are identified across terms so that the union graph has
//!    as few perfect matchings and edges as possible;
//! 3. edge weights are fitted by multistart Levenberg–Marquardt so that the
//!    bunched part of the final state vanishes and the rest matches the target;
//! 4. on failure, extra ancilla circles are added and the fit is retried.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bigraph::{Dot, Edge, EdgeColor, SculptingBigraph};
use crate::engine::{apply_sculpting, check_no_bunching};
use crate::entanglement::{classify, to_logical_state, Classification, LocalBasis, LogicalState};
use crate::error::{Error, Result};
use crate::fock::{FockState, OccupationConfig};

const SOLVED_RESIDUAL: f64 = 1e-8;
const SOLVED_FIDELITY: f64 = 1.0 - 1e-8;
const MIN_SUCCESS: f64 = 1e-6;
const JACOBIAN_STEP: f64 = 1e-6;
const BATCH: usize = 8;
const EXACT_DOT_LIMIT: usize = 6;
const EXACT_COMBINATION_LIMIT: f64 = 1e6;
const MAX_RETRY_ROUNDS: usize = 3;

/// How logical values are carried by the bosons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// `0 ↔ |+⟩`, `1 ↔ |−⟩`
    PlusMinus,
    /// `0 ↔ |0⟩`, `1 ↔ |1⟩`
    Computational,
}

impl Encoding {
    fn basis(self) -> LocalBasis {
        match self {
            Encoding::PlusMinus => LocalBasis::PlusMinus,
            Encoding::Computational => LocalBasis::Computational,
        }
    }

    /// Edge color whose annihilation leaves local value `v` on a system circle.
    fn skeleton_color(self, v: usize) -> EdgeColor {
        match (self, v) {
            (Encoding::PlusMinus, 0) => EdgeColor::Red,
            (Encoding::PlusMinus, _) => EdgeColor::Blue,
            (Encoding::Computational, 0) => EdgeColor::Dotted,
            (Encoding::Computational, _) => EdgeColor::Black,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TargetSpec {
    pub target: LogicalState,
    #[serde(default)]
    pub ancillas: usize,
    #[serde(default = "default_colors")]
    pub allowed_colors: Vec<EdgeColor>,
    #[serde(default = "default_encoding")]
    pub encoding: Encoding,
}

fn default_colors() -> Vec<EdgeColor> {
    vec![EdgeColor::Red, EdgeColor::Blue, EdgeColor::Black, EdgeColor::Dotted]
}

fn default_encoding() -> Encoding {
    Encoding::PlusMinus
}

impl TargetSpec {
    pub fn new(target: LogicalState, ancillas: usize) -> Self {
        TargetSpec { target, ancillas, allowed_colors: default_colors(), encoding: Encoding::PlusMinus }
    }

    pub fn with_encoding(mut self, encoding: Encoding) -> Self {
        self.encoding = encoding;
        self
    }

    pub fn parties(&self) -> usize {
        self.target.parties()
    }
}

/// One edge per dot; dot `j < N` sits on circle `j`, dot `N+k` on ancilla `N+k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Skeleton {
    pub digits: Vec<usize>,
    pub amplitude: Complex64,
    pub edges: Vec<(usize, EdgeColor)>,
}

pub fn pms_from_target(t: &TargetSpec) -> Result<Vec<Skeleton>> {
    let n = t.parties();
    if t.target.local_dim() != 2 {
        return Err(Error::UnsupportedTarget(format!("only qubit targets are searched, got d={}", t.target.local_dim())));
    }
    if t.ancillas > 0 && !t.allowed_colors.contains(&EdgeColor::Black) {
        return Err(Error::UnsupportedTarget("ancilla edges need BLACK among the allowed colors".into()));
    }
    let mut out = Vec::new();
    for (i, a) in t.target.amps().iter().enumerate() {
        if a.norm() < 1e-12 {
            continue;
        }
        let digits: Vec<usize> = (0..n).map(|p| (i >> (n - 1 - p)) & 1).collect();
        let mut edges = Vec::with_capacity(n + t.ancillas);
        for (j, &v) in digits.iter().enumerate() {
            let color = t.encoding.skeleton_color(v);
            if !t.allowed_colors.contains(&color) {
                return Err(Error::UnsupportedTarget(format!("term {digits:?} needs {color:?} on party {}", j + 1)));
            }
            edges.push((j, color));
        }
        for k in 0..t.ancillas {
            edges.push((n + k, EdgeColor::Black));
        }
        out.push(Skeleton { digits, amplitude: *a, edges });
    }
    if out.is_empty() {
        return Err(Error::UnsupportedTarget("target has no nonzero terms".into()));
    }
    Ok(out)
}

/// PM count, edge count, sorted incidence. Lower is better.
type Score = (usize, usize, Vec<Vec<(usize, EdgeColor)>>);

/// Graph structure with free weights: `dots[i]` lists `(circle, color)` edges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CandidateGraph {
    pub n_system: usize,
    pub n_ancilla: usize,
    pub dots: Vec<Vec<(usize, EdgeColor)>>,
}

impl CandidateGraph {
    pub fn edge_count(&self) -> usize {
        self.dots.iter().map(Vec::len).sum()
    }

    /// Builds a graph, normalizing each dot's weights. `weights` follows the
    /// edge order of `dots`.
    pub fn with_weights(&self, weights: &[Complex64]) -> Result<SculptingBigraph> {
        if weights.len() != self.edge_count() {
            return Err(Error::DimensionMismatch { expected: format!("{} weights", self.edge_count()), found: weights.len().to_string() });
        }
        let mut it = weights.iter();
        let mut dots = Vec::with_capacity(self.dots.len());
        for (i, dot) in self.dots.iter().enumerate() {
            let w: Vec<Complex64> = dot.iter().map(|_| *it.next().expect("length checked")).collect();
            let norm = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-300 {
                return Err(Error::Normalization { what: format!("candidate dot {i} weights"), norm_sqr: 0.0 });
            }
            dots.push(Dot::new(dot.iter().zip(&w).map(|(&(c, col), x)| Edge::new(c, x / norm, col)).collect()));
        }
        SculptingBigraph::new(self.n_system, self.n_ancilla, 2, dots)
    }

    pub fn uniform(&self) -> Result<SculptingBigraph> {
        self.with_weights(&vec![Complex64::new(1.0, 0.0); self.edge_count()])
    }

    fn score(&self) -> Score {
        let pms = self.uniform().map(|g| g.enumerate_perfect_matchings().len()).unwrap_or(usize::MAX);
        let mut incidence = self.dots.clone();
        incidence.sort();
        (pms, self.edge_count(), incidence)
    }

    /// Adds an ancilla circle with one level-0 boson, a new dot that has a
    /// BLACK edge to it plus every color already used at each system circle,
    /// and BLACK edges from every existing dot to the new ancilla.
    fn with_extra_ancilla(&self) -> CandidateGraph {
        let new_circle = self.n_system + self.n_ancilla;
        let mut used: BTreeSet<(usize, EdgeColor)> = BTreeSet::new();
        for dot in &self.dots {
            for &(c, col) in dot {
                if c < self.n_system {
                    used.insert((c, col));
                }
            }
        }
        let mut dots: Vec<Vec<(usize, EdgeColor)>> = self
            .dots
            .iter()
            .map(|d| {
                let mut d = d.clone();
                d.push((new_circle, EdgeColor::Black));
                d.sort();
                d
            })
            .collect();
        let mut fresh: Vec<(usize, EdgeColor)> = used.into_iter().collect();
        fresh.push((new_circle, EdgeColor::Black));
        fresh.sort();
        dots.push(fresh);
        CandidateGraph { n_system: self.n_system, n_ancilla: self.n_ancilla + 1, dots }
    }

    /// Swaps RED and BLUE on one dot.
    fn with_swapped_dot(&self, i: usize) -> CandidateGraph {
        let mut g = self.clone();
        for e in &mut g.dots[i] {
            e.1 = match e.1 {
                EdgeColor::Red => EdgeColor::Blue,
                EdgeColor::Blue => EdgeColor::Red,
                c => c,
            };
        }
        g.dots[i].sort();
        g.dots[i].dedup();
        g
    }
}

fn union_graph(n: usize, k: usize, skeletons: &[Skeleton], perms: &[Vec<usize>]) -> CandidateGraph {
    let m = n + k;
    let mut sets: Vec<BTreeSet<(usize, EdgeColor)>> = vec![BTreeSet::new(); m];
    for (sk, perm) in skeletons.iter().zip(perms) {
        for (dot, &edge) in sk.edges.iter().enumerate() {
            sets[perm[dot]].insert(edge);
        }
    }
    CandidateGraph { n_system: n, n_ancilla: k, dots: sets.into_iter().map(|s| s.into_iter().collect()).collect() }
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..m).collect();
    heap_permute(m, &mut p, &mut out);
    out.sort();
    out
}

fn heap_permute(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        out.push(p.clone());
        return;
    }
    for i in 0..k {
        heap_permute(k - 1, p, out);
        if k.is_multiple_of(2) {
            p.swap(i, k - 1);
        } else {
            p.swap(0, k - 1);
        }
    }
}

/// Identifies skeleton dots across terms. Candidates are ranked by
/// (perfect-matching count, edge count, sorted incidence lists).
pub fn candidate_bigraph(skeletons: &[Skeleton], n_system: usize, n_ancilla: usize) -> Result<CandidateGraph> {
    let m = n_system + n_ancilla;
    if skeletons.is_empty() {
        return Err(Error::InvalidArgument("no skeletons".into()));
    }
    if skeletons.iter().any(|s| s.edges.len() != m) {
        return Err(Error::InvalidArgument("skeletons have inconsistent dot counts".into()));
    }
    let s = skeletons.len();
    let identity: Vec<usize> = (0..m).collect();
    let factorial: f64 = (1..=m).map(|x| x as f64).product();
    let exact = m <= EXACT_DOT_LIMIT && factorial.powi(s as i32 - 1) <= EXACT_COMBINATION_LIMIT;
    if exact {
        let perms = permutations(m);
        let mut best: Option<(Score, CandidateGraph)> = None;
        let mut idx = vec![0usize; s - 1];
        loop {
            let mut chosen = vec![identity.clone()];
            chosen.extend(idx.iter().map(|&i| perms[i].clone()));
            let g = union_graph(n_system, n_ancilla, skeletons, &chosen);
            let sc = g.score();
            if best.as_ref().is_none_or(|(b, _)| sc < *b) {
                best = Some((sc, g));
            }
            let mut pos = idx.len();
            loop {
                if pos == 0 {
                    return Ok(best.expect("at least one candidate").1);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < perms.len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }
    // greedy: add skeletons one at a time, each with its best permutation
    let perms = if m <= 7 { Some(permutations(m)) } else { None };
    let mut chosen = vec![identity.clone()];
    for sk in 1..s {
        let eval = |p: &Vec<usize>| {
            let mut c = chosen.clone();
            c.push(p.clone());
            union_graph(n_system, n_ancilla, &skeletons[..=sk], &c).score()
        };
        let best = match &perms {
            Some(all) => all.iter().min_by(|a, b| eval(a).cmp(&eval(b))).expect("nonempty").clone(),
            None => {
                let mut p = identity.clone();
                let mut cur = eval(&p);
                loop {
                    let mut improved = false;
                    for i in 0..m {
                        for j in i + 1..m {
                            p.swap(i, j);
                            let sc = eval(&p);
                            if sc < cur {
                                cur = sc;
                                improved = true;
                            } else {
                                p.swap(i, j);
                            }
                        }
                    }
                    if !improved {
                        break p;
                    }
                }
            }
        };
        chosen.push(best);
    }
    Ok(union_graph(n_system, n_ancilla, skeletons, &chosen))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SearchStatus {
    Solved,
    Failed,
    BudgetExhausted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchOptions {
    pub starts: usize,
    pub seed: u64,
    pub time_limit: Duration,
    pub max_iterations: usize,
    /// Try RED/BLUE swaps per dot when the plain candidate fails.
    pub color_search: bool,
    pub retry_rounds: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            starts: 64,
            seed: 0,
            time_limit: Duration::from_secs(30),
            max_iterations: 200,
            color_search: false,
            retry_rounds: MAX_RETRY_ROUNDS,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchResult {
    pub status: SearchStatus,
    pub graph: Option<SculptingBigraph>,
    /// Bunched (non-perfect-matching) norm relative to the final-state norm.
    pub residual: f64,
    pub fidelity: f64,
    pub success: f64,
    pub starts_run: usize,
    pub first_solved_start: Option<usize>,
    pub retry_rounds: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub no_bunching: bool,
    /// Bunched norm relative to the norm of the whole final state.
    pub residual: f64,
    pub fidelity: f64,
    pub success: f64,
    pub classification: Option<Classification>,
}

impl VerifyReport {
    /// A vanishing final state is not a solution even if nothing bunches.
    pub fn solved(&self) -> bool {
        self.residual < SOLVED_RESIDUAL && self.fidelity > SOLVED_FIDELITY && self.success > MIN_SUCCESS
    }
}

fn final_state(g: &SculptingBigraph) -> Result<FockState> {
    apply_sculpting(&g.to_sculpting_operator()?, &g.initial_state()?)
}

/// Norm of the bunched part of `g`'s final state, which is the summed
/// contribution of every collective path that is not a perfect matching.
pub fn bunching_residual(g: &SculptingBigraph) -> Result<f64> {
    let f = final_state(g)?;
    Ok(check_no_bunching(&f, g.n_system(), g.n_ancilla()).residual())
}

/// Full pipeline check, independent of the solver's objective.
pub fn verify_candidate(g: &SculptingBigraph, t: &TargetSpec) -> Result<VerifyReport> {
    let f = final_state(g)?;
    let n = g.n_system();
    let report = check_no_bunching(&f, n, g.n_ancilla());
    let total = f.norm_sqr().sqrt();
    let residual = if total > 0.0 { (report.residual() / total).abs() } else { 0.0 };
    let kept = f.filter(|c| c.is_one_per_mode(n));
    if kept.is_zero() {
        return Ok(VerifyReport { no_bunching: report.passed(), residual, fidelity: 0.0, success: 0.0, classification: None });
    }
    let (logical, success) = to_logical_state(&kept, n, g.n_ancilla(), t.encoding.basis())?;
    let fidelity = logical.fidelity_up_to_phase(&t.target)?;
    let classification = if n >= 2 { Some(classify(&logical)?) } else { None };
    Ok(VerifyReport { no_bunching: report.passed(), residual, fidelity, success, classification })
}

/// Residual evaluation for one candidate structure.
struct Problem<'a> {
    cand: &'a CandidateGraph,
    target: &'a TargetSpec,
    bunched_index: BTreeMap<OccupationConfig, usize>,
    basis_vectors: Vec<crate::fock::InternalVector>,
}

impl<'a> Problem<'a> {
    fn new(cand: &'a CandidateGraph, target: &'a TargetSpec) -> Result<Self> {
        // generic weights expose every bunched configuration that can occur
        let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_b0c5);
        let w: Vec<Complex64> = (0..cand.edge_count())
            .map(|_| Complex64::new(rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let f = final_state(&cand.with_weights(&w)?)?;
        let bunched_index = f
            .terms()
            .filter(|(c, _)| !c.is_one_per_mode(cand.n_system))
            .enumerate()
            .map(|(i, (c, _))| (c.clone(), i))
            .collect();
        Ok(Problem { cand, target, bunched_index, basis_vectors: target.encoding.basis().vectors(2)? })
    }

    fn params_to_weights(x: &[f64]) -> Vec<Complex64> {
        x.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    /// Returns `(residual vector, success probability)`.
    fn residuals(&self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        let g = self.cand.with_weights(&Self::params_to_weights(x)).ok()?;
        let f = final_state(&g).ok()?;
        let n = self.cand.n_system;
        let total = f.norm_sqr().sqrt();
        let dim = self.target.target.amps().len();
        let mut r = vec![0.0; 2 * self.bunched_index.len() + 1 + 2 * dim];
        if total < 1e-14 {
            // zero final state: maximal fidelity penalty, nothing bunched
            for (i, t) in self.target.target.amps().iter().enumerate() {
                let k = 2 * self.bunched_index.len() + 1 + 2 * i;
                r[k] = t.re;
                r[k + 1] = t.im;
            }
            return Some((r, 0.0));
        }
        let mut overflow = 0.0;
        let mut logical = vec![Complex64::new(0.0, 0.0); dim];
        let mut levels = vec![0usize; n];
        for (cfg, a) in f.terms() {
            if cfg.is_one_per_mode(n) {
                for (m, _) in cfg.iter() {
                    levels[m.spatial] = m.internal;
                }
                for (i, slot) in logical.iter_mut().enumerate() {
                    let mut coeff = *a;
                    for (p, &lvl) in levels.iter().enumerate() {
                        let s = (i >> (n - 1 - p)) & 1;
                        coeff *= self.basis_vectors[s].components()[lvl].conj();
                    }
                    *slot += coeff;
                }
            } else {
                match self.bunched_index.get(cfg) {
                    Some(&k) => {
                        r[2 * k] = a.re / total;
                        r[2 * k + 1] = a.im / total;
                    }
                    None => overflow += a.norm_sqr(),
                }
            }
        }
        r[2 * self.bunched_index.len()] = overflow.sqrt() / total;
        let lnorm = logical.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let base = 2 * self.bunched_index.len() + 1;
        let t = self.target.target.amps();
        if lnorm < 1e-14 {
            for (i, tv) in t.iter().enumerate() {
                r[base + 2 * i] = tv.re;
                r[base + 2 * i + 1] = tv.im;
            }
            return Some((r, 0.0));
        }
        let overlap: Complex64 = t.iter().zip(&logical).map(|(a, b)| a.conj() * b).sum();
        let phase = if overlap.norm() > 0.0 { overlap / overlap.norm() } else { Complex64::new(1.0, 0.0) };
        for (i, (l, tv)) in logical.iter().zip(t).enumerate() {
            let d = l / lnorm - phase * tv;
            r[base + 2 * i] = d.re;
            r[base + 2 * i + 1] = d.im;
        }
        Some((r, lnorm * lnorm))
    }
}

struct LmOutcome {
    x: Vec<f64>,
    cost: f64,
    aborted: bool,
}

/// Levenberg–Marquardt on `½‖r(x)‖²` with a central-difference Jacobian.
fn levenberg_marquardt<F>(f: F, x0: Vec<f64>, max_iter: usize, deadline: Instant) -> LmOutcome
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let p = x0.len();
    let mut x = x0;
    let Some(mut r) = f(&x) else {
        return LmOutcome { x, cost: f64::INFINITY, aborted: false };
    };
    let mut cost = r.iter().map(|v| v * v).sum::<f64>();
    let mut lambda = 1e-3;
    for _ in 0..max_iter {
        if Instant::now() >= deadline {
            return LmOutcome { x, cost, aborted: true };
        }
        if cost < 1e-26 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(r.len(), p);
        let mut xp = x.clone();
        for k in 0..p {
            let orig = xp[k];
            xp[k] = orig + JACOBIAN_STEP;
            let Some(rp) = f(&xp) else { return LmOutcome { x, cost, aborted: false } };
            xp[k] = orig - JACOBIAN_STEP;
            let Some(rm) = f(&xp) else { return LmOutcome { x, cost, aborted: false } };
            xp[k] = orig;
            for i in 0..r.len() {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * JACOBIAN_STEP);
            }
        }
        let rv = DVector::from_vec(r.clone());
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * rv;
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for k in 0..p {
                a[(k, k)] += lambda * (jtj[(k, k)] + 1e-9);
            }
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&(-&g)),
                None => match a.lu().solve(&(-&g)) {
                    Some(s) => s,
                    None => {
                        lambda *= 4.0;
                        continue;
                    }
                },
            };
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if let Some(rc) = f(&cand) {
                let cc = rc.iter().map(|v| v * v).sum::<f64>();
                if cc < cost {
                    let small = step.norm() < 1e-15 * (1.0 + DVector::from_vec(x.clone()).norm());
                    x = cand;
                    r = rc;
                    let improvement = cost - cc;
                    cost = cc;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if small || improvement < 1e-30 {
                        return LmOutcome { x, cost, aborted: false };
                    }
                    break;
                }
            }
            lambda *= 4.0;
        }
        if !accepted {
            break;
        }
    }
    LmOutcome { x, cost, aborted: false }
}

struct StartOutcome {
    index: usize,
    cost: f64,
    weights: Vec<Complex64>,
    report: Option<VerifyReport>,
    aborted: bool,
}

fn run_start(problem: &Problem<'_>, opts: &SearchOptions, index: usize, deadline: Instant) -> StartOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(index as u64);
    let p = 2 * problem.cand.edge_count();
    let x0: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let resid = |x: &[f64]| problem.residuals(x).map(|(r, _)| r);
    let lm = levenberg_marquardt(resid, x0, opts.max_iterations, deadline);
    let mut x = lm.x;
    let mut cost = lm.cost;
    let mut aborted = lm.aborted;
    let verify = |x: &[f64]| {
        problem
            .cand
            .with_weights(&Problem::params_to_weights(x))
            .ok()
            .and_then(|g| verify_candidate(&g, problem.target).ok())
    };
    let mut report = verify(&x);
    if !aborted && report.as_ref().is_some_and(VerifyReport::solved) {
        // among exact solutions prefer a higher success probability
        for eps in [1e-1, 1e-2, 0.0] {
            let polish = |x: &[f64]| {
                problem.residuals(x).map(|(mut r, s)| {
                    r.push(eps * (1.0 - s));
                    r
                })
            };
            let out = levenberg_marquardt(polish, x.clone(), opts.max_iterations, deadline);
            if out.aborted {
                aborted = true;
                break;
            }
            let rep = verify(&out.x);
            if rep.as_ref().is_some_and(VerifyReport::solved) || eps > 0.0 {
                x = out.x;
                cost = problem.residuals(&x).map(|(r, _)| r.iter().map(|v| v * v).sum()).unwrap_or(f64::INFINITY);
                report = rep;
            }
        }
        if !report.as_ref().is_some_and(VerifyReport::solved) {
            // polishing drifted off the solution set; fall back to the plain fit
            let out = levenberg_marquardt(resid, x.clone(), opts.max_iterations, deadline);
            x = out.x;
            cost = out.cost;
            report = verify(&x);
        }
    }
    StartOutcome { index, cost, weights: Problem::params_to_weights(&x), report, aborted }
}

/// Fits weights on a fixed candidate structure by multistart descent.
pub fn solve_weights(cand: &CandidateGraph, t: &TargetSpec, opts: &SearchOptions) -> Result<SearchResult> {
    let started = Instant::now();
    let deadline = started + opts.time_limit;
    let problem = Problem::new(cand, t)?;
    let mut outcomes: Vec<StartOutcome> = Vec::new();
    let mut exhausted = false;
    let mut next = 0;
    while next < opts.starts {
        if Instant::now() >= deadline {
            exhausted = true;
            break;
        }
        let end = (next + BATCH).min(opts.starts);
        let mut batch: Vec<StartOutcome> = (next..end).into_par_iter().map(|i| run_start(&problem, opts, i, deadline)).collect();
        batch.sort_by_key(|o| o.index);
        if batch.iter().any(|o| o.aborted) {
            exhausted = true;
        }
        outcomes.extend(batch.into_iter().filter(|o| !o.aborted));
        next = end;
        if exhausted || outcomes.iter().any(|o| o.report.as_ref().is_some_and(VerifyReport::solved)) {
            break;
        }
    }
    let first_solved = outcomes.iter().find(|o| o.report.as_ref().is_some_and(VerifyReport::solved));
    let best = first_solved.or_else(|| {
        outcomes.iter().min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.index.cmp(&b.index)))
    });
    let status = if first_solved.is_some() {
        SearchStatus::Solved
    } else if exhausted {
        SearchStatus::BudgetExhausted
    } else {
        SearchStatus::Failed
    };
    let (graph, residual, fidelity, success) = match best {
        Some(o) => {
            let g = cand.with_weights(&o.weights).ok();
            match &o.report {
                Some(r) => (g, r.residual, r.fidelity, r.success),
                None => (g, f64::INFINITY, 0.0, 0.0),
            }
        }
        None => (None, f64::INFINITY, 0.0, 0.0),
    };
    Ok(SearchResult {
        status,
        graph,
        residual,
        fidelity,
        success,
        starts_run: outcomes.len(),
        first_solved_start: first_solved.map(|o| o.index),
        retry_rounds: 0,
    })
}

/// Full search: skeletons, candidate, weight fit, then the optional color
/// swaps and extra-ancilla retries.
pub fn search(t: &TargetSpec, opts: &SearchOptions) -> Result<SearchResult> {
    let skeletons = pms_from_target(t)?;
    let mut cand = candidate_bigraph(&skeletons, t.parties(), t.ancillas)?;
    let mut best = solve_weights(&cand, t, opts)?;
    if best.status == SearchStatus::Solved {
        return Ok(best);
    }
    if opts.color_search {
        for i in 0..cand.dots.len() {
            let variant = cand.with_swapped_dot(i);
            if variant == cand {
                continue;
            }
            let r = solve_weights(&variant, t, opts)?;
            if r.status == SearchStatus::Solved {
                return Ok(r);
            }
        }
    }
    for round in 1..=opts.retry_rounds.min(MAX_RETRY_ROUNDS) {
        cand = cand.with_extra_ancilla();
        let mut r = solve_weights(&cand, t, opts)?;
        r.retry_rounds = round;
        let solved = r.status == SearchStatus::Solved;
        if solved || r.residual < best.residual {
            best = r;
        }
        if solved || best.status == SearchStatus::BudgetExhausted {
            break;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entanglement::{ghz_target, w_target};

    #[test]
    fn skeleton_counts() {
        assert_eq!(pms_from_target(&TargetSpec::new(ghz_target(2, 2).unwrap(), 0)).unwrap().len(), 2);
        assert_eq!(pms_from_target(&TargetSpec::new(ghz_target(3, 2).unwrap(), 0)).unwrap().len(), 2);
        let w = pms_from_target(&TargetSpec::new(w_target(3).unwrap(), 1)).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|s| s.edges[3] == (3, EdgeColor::Black)));
    }

    #[test]
    fn disallowed_colors_are_unsupported() {
        let mut t = TargetSpec::new(ghz_target(2, 2).unwrap(), 0);
        t.allowed_colors = vec![EdgeColor::Red];
        assert!(matches!(pms_from_target(&t), Err(Error::UnsupportedTarget(_))));
        let q = TargetSpec::new(ghz_target(2, 3).unwrap(), 0);
        assert!(matches!(pms_from_target(&q), Err(Error::UnsupportedTarget(_))));
    }

    #[test]
    fn bell_candidate_is_crossed_pair() {
        let t = TargetSpec::new(ghz_target(2, 2).unwrap(), 0);
        let c = candidate_bigraph(&pms_from_target(&t).unwrap(), 2, 0).unwrap();
        assert_eq!(c.edge_count(), 4);
        let g = c.uniform().unwrap();
        assert_eq!(g.enumerate_perfect_matchings().len(), 2);
        assert!(g.is_epm().unwrap().epm);
    }

    #[test]
    fn ghz3_candidate_is_ring() {
        let t = TargetSpec::new(ghz_target(3, 2).unwrap(), 0);
        let c = candidate_bigraph(&pms_from_target(&t).unwrap(), 3, 0).unwrap();
        assert_eq!(c.edge_count(), 6);
        let g = c.uniform().unwrap();
        assert_eq!(g.enumerate_perfect_matchings().len(), 2);
        for dot in &c.dots {
            assert_ne!(dot[0].0, dot[1].0, "each dot spans two circles");
        }
    }

    #[test]
    fn product_target_has_single_skeleton_graph() {
        let t = TargetSpec::new(LogicalState::basis_state(2, &[0, 1]).unwrap(), 0);
        let sk = pms_from_target(&t).unwrap();
        let c = candidate_bigraph(&sk, 2, 0).unwrap();
        assert_eq!(c.edge_count(), 2);
        let r = solve_weights(&c, &t, &SearchOptions { starts: 8, ..Default::default() }).unwrap();
        assert_eq!(r.status, SearchStatus::Solved);
    }

    #[test]
    fn permutation_generator() {
        let p = permutations(4);
        assert_eq!(p.len(), 24);
        let set: BTreeSet<_> = p.iter().cloned().collect();
        assert_eq!(set.len(), 24);
    }

    #[test]
    fn zeroed_dot_is_a_normalization_error() {
        let t = TargetSpec::new(ghz_target(2, 2).unwrap(), 0);
        let c = candidate_bigraph(&pms_from_target(&t).unwrap(), 2, 0).unwrap();
        let mut w = vec![Complex64::new(1.0, 0.0); c.edge_count()];
        w[0] = Complex64::new(0.0, 0.0);
        w[1] = Complex64::new(0.0, 0.0);
        assert!(matches!(c.with_weights(&w), Err(Error::Normalization { .. })));
    }
}
