//! Built-in sculpting schemes with their closed-form expectations.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use serde::Serialize;

use crate::bigraph::{Dot, Edge, EdgeColor, SculptingBigraph};
use crate::engine::{
    apply_sculpting, check_no_bunching, maximally_symmetric_state, SculptingOperator, SubtractionOperator,
    SubtractionTerm,
};
use crate::entanglement::{
    classify, ghz_target, to_logical_state, type5_target, w_target, Classification, LocalBasis, LogicalState,
};
use crate::error::{Error, Result};
use crate::fock::{FockState, InternalVector};

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SchemeDescriptor {
    pub name: String,
    pub params: SchemeParams,
    pub graph: Option<SculptingBigraph>,
    pub operator: SculptingOperator,
    pub ancilla_levels: Vec<usize>,
    pub expected_state: LogicalState,
    pub local_basis: LocalBasis,
    pub expected_success: f64,
}

impl SchemeDescriptor {
    fn from_graph(
        name: &str,
        params: SchemeParams,
        graph: SculptingBigraph,
        expected_state: LogicalState,
        local_basis: LocalBasis,
        expected_success: f64,
    ) -> Result<Self> {
        let operator = graph.to_sculpting_operator()?;
        Ok(SchemeDescriptor {
            name: name.to_string(),
            params,
            ancilla_levels: vec![0; graph.n_ancilla()],
            graph: Some(graph),
            operator,
            expected_state,
            local_basis,
            expected_success,
        })
    }

    pub fn initial_state(&self) -> Result<FockState> {
        maximally_symmetric_state(self.operator.n_system(), self.operator.internal_dim(), &self.ancilla_levels)
    }
}

fn c(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn ring_graph(n: usize, d: usize) -> Result<SculptingBigraph> {
    let (plus, minus) = if d == 2 { (EdgeColor::Red, EdgeColor::Blue) } else { (EdgeColor::Fourier(0), EdgeColor::Fourier(d - 1)) };
    let dots = (0..n)
        .map(|j| {
            Dot::with_multiplicity(
                d - 1,
                vec![Edge::new(j, c(FRAC_1_SQRT_2), plus), Edge::new((j + 1) % n, c(-FRAC_1_SQRT_2), minus)],
            )
        })
        .collect();
    SculptingBigraph::new(n, 0, d, dots)
}

pub fn bell_scheme() -> Result<SchemeDescriptor> {
    SchemeDescriptor::from_graph(
        "bell",
        SchemeParams { n: 2, d: 2, alpha: None, beta: None },
        ring_graph(2, 2)?,
        ghz_target(2, 2)?,
        LocalBasis::PlusMinus,
        0.5,
    )
}

pub fn ghz_scheme(n: usize) -> Result<SchemeDescriptor> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("GHZ needs N >= 2, got {n}")));
    }
    SchemeDescriptor::from_graph(
        "ghz",
        SchemeParams { n, d: 2, alpha: None, beta: None },
        ring_graph(n, 2)?,
        ghz_target(n, 2)?,
        LocalBasis::PlusMinus,
        0.5f64.powi(n as i32 - 1),
    )
}

/// The dense GHZ operator: factor `l` is
/// `Σ_j (a_{j,0} + e^{2πi(j−l)/N} a_{j,1}) / √(2N)`.
pub fn ghz_original_operator(n: usize) -> Result<SculptingOperator> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("GHZ needs N >= 2, got {n}")));
    }
    let w = 1.0 / (n as f64).sqrt();
    let factors = (0..n)
        .map(|l| {
            let terms = (0..n)
                .map(|j| {
                    let phase = Complex64::from_polar(1.0, 2.0 * PI * (j as f64 - l as f64) / n as f64);
                    // a_ψ = Σ_s conj(ψ_s) a_s, so ψ carries the conjugate phase
                    let psi = InternalVector::normalized(vec![c(1.0), phase.conj()])?;
                    Ok(SubtractionTerm::new(j, c(w), psi))
                })
                .collect::<Result<Vec<_>>>()?;
            SubtractionOperator::new(terms)
        })
        .collect::<Result<Vec<_>>>()?;
    SculptingOperator::new(factors, n, 0, 2)
}

/// Optimal W weights `(√((N−1)/N), 1/√N)`.
pub fn w_optimal_weights(n: usize) -> (f64, f64) {
    (((n as f64 - 1.0) / n as f64).sqrt(), 1.0 / (n as f64).sqrt())
}

pub fn w_scheme(n: usize, alpha: f64, beta: f64) -> Result<SchemeDescriptor> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("W needs N >= 2, got {n}")));
    }
    let norm = alpha * alpha + beta * beta;
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::Normalization { what: "W weights alpha, beta".into(), norm_sqr: norm });
    }
    let ancilla = n;
    let mut dots: Vec<Dot> = (0..n)
        .map(|j| Dot::new(vec![Edge::new(j, c(alpha), EdgeColor::Red), Edge::new(ancilla, c(beta), EdgeColor::Black)]))
        .collect();
    let w = 1.0 / (n as f64).sqrt();
    dots.push(Dot::new((0..n).map(|j| Edge::new(j, c(w), EdgeColor::Blue)).collect()));
    let graph = SculptingBigraph::new(n, 1, 2, dots)?;
    let success = (alpha.abs().powi(n as i32 - 1) * beta.abs()).powi(2);
    SchemeDescriptor::from_graph(
        "w",
        SchemeParams { n, d: 2, alpha: Some(alpha), beta: Some(beta) },
        graph,
        w_target(n)?,
        LocalBasis::PlusMinus,
        success,
    )
}

/// Three parties, three ancillas `A, B, C` at circles 3, 4, 5.
pub fn type5_scheme() -> Result<SchemeDescriptor> {
    let h = FRAC_1_SQRT_2;
    let t = 1.0 / 3f64.sqrt();
    let (a, b, cc) = (3, 4, 5);
    let dots = vec![
        Dot::new(vec![Edge::new(0, c(h), EdgeColor::Red), Edge::new(a, c(h), EdgeColor::Black)]),
        Dot::new(vec![Edge::new(1, c(h), EdgeColor::Red), Edge::new(b, c(h), EdgeColor::Black)]),
        Dot::new(vec![Edge::new(2, c(h), EdgeColor::Red), Edge::new(cc, c(h), EdgeColor::Black)]),
        Dot::new(vec![Edge::new(cc, c(h), EdgeColor::Black), Edge::new(0, c(-h), EdgeColor::Blue)]),
        Dot::new(vec![
            Edge::new(a, c(t), EdgeColor::Black),
            Edge::new(b, c(t), EdgeColor::Black),
            Edge::new(1, c(-t), EdgeColor::Blue),
        ]),
        Dot::new(vec![
            Edge::new(b, c(t), EdgeColor::Black),
            Edge::new(cc, c(t), EdgeColor::Black),
            Edge::new(2, c(-t), EdgeColor::Blue),
        ]),
    ];
    let graph = SculptingBigraph::new(3, 3, 2, dots)?;
    SchemeDescriptor::from_graph(
        "type5",
        SchemeParams { n: 3, d: 2, alpha: None, beta: None },
        graph,
        type5_target(),
        LocalBasis::PlusMinus,
        5.0 / 144.0,
    )
}

/// `d · ((d−1)! / (√2^{d−1} √d^{d−2}))^{2N}`.
pub fn qudit_ghz_success(n: usize, d: usize) -> f64 {
    let df = d as f64;
    let fact: f64 = (1..d).map(|x| x as f64).product();
    let per_mode = fact / (2f64.sqrt().powi(d as i32 - 1) * df.sqrt().powi(d as i32 - 2));
    df * per_mode.powi(2 * n as i32)
}

pub fn qudit_ghz_scheme(n: usize, d: usize) -> Result<SchemeDescriptor> {
    if n < 2 || d < 2 {
        return Err(Error::InvalidArgument(format!("qudit GHZ needs N >= 2 and d >= 2, got N={n}, d={d}")));
    }
    SchemeDescriptor::from_graph(
        "qudit-ghz",
        SchemeParams { n, d, alpha: None, beta: None },
        ring_graph(n, d)?,
        ghz_target(n, d)?,
        LocalBasis::Fourier,
        qudit_ghz_success(n, d),
    )
}

pub const SCHEME_NAMES: [&str; 5] = ["bell", "ghz", "w", "type5", "qudit-ghz"];

/// Looks a scheme up by CLI name with optional overrides.
pub fn scheme_by_name(
    name: &str,
    n: Option<usize>,
    d: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
) -> Result<SchemeDescriptor> {
    match name {
        "bell" => bell_scheme(),
        "ghz" => ghz_scheme(n.unwrap_or(3)),
        "w" => {
            let n = n.unwrap_or(3);
            let (a0, b0) = w_optimal_weights(n);
            let (a, b) = match (alpha, beta) {
                (None, None) => (a0, b0),
                (Some(a), None) => (a, (1.0 - a * a).max(0.0).sqrt()),
                (None, Some(b)) => ((1.0 - b * b).max(0.0).sqrt(), b),
                (Some(a), Some(b)) => (a, b),
            };
            w_scheme(n, a, b)
        }
        "type5" => type5_scheme(),
        "qudit-ghz" | "qudit_ghz" => qudit_ghz_scheme(n.unwrap_or(2), d.unwrap_or(3)),
        other => Err(Error::InvalidArgument(format!(
            "unknown scheme '{other}', expected one of {}",
            SCHEME_NAMES.join(", ")
        ))),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SchemeReport {
    pub name: String,
    pub params: SchemeParams,
    pub success: f64,
    pub expected_success: f64,
    pub fidelity: f64,
    pub classification: Classification,
    pub basis: LocalBasis,
    pub logical_state: LogicalState,
    pub final_state: FockState,
}

pub fn run_scheme(desc: &SchemeDescriptor) -> Result<SchemeReport> {
    let init = desc.initial_state()?;
    let fin = apply_sculpting(&desc.operator, &init)?;
    let n = desc.operator.n_system();
    let k = desc.operator.n_ancilla();
    let report = check_no_bunching(&fin, n, k);
    if !report.passed() {
        return Err(Error::NoBunching(report.violations));
    }
    let (logical, success) = to_logical_state(&fin, n, k, desc.local_basis)?;
    let fidelity = logical.fidelity_up_to_phase(&desc.expected_state)?;
    let classification = classify(&logical)?;
    Ok(SchemeReport {
        name: desc.name.clone(),
        params: desc.params.clone(),
        success,
        expected_success: desc.expected_success,
        fidelity,
        classification,
        basis: desc.local_basis,
        logical_state: logical,
        final_state: fin,
    })
}
