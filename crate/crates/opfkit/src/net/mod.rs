//! Grid data model: buses, generators, lines, and the matrices built from them.
//!
//! A [`Network`] is the immutable triple (buses, generators, admittance data)
//! plus the line list it was built from. All quantities are stored per unit
//! on `base_mva`; angles are radians. Bus ids are 1-based in case files and
//! JSON, 0-based internally (`Bus::index`).

mod parse;
mod write;

pub use parse::{parse_case, parse_case_with_warnings, CaseError};
pub use write::{network_from_json, network_to_json, write_case};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default voltage band applied when a case file omits bus voltage limits.
pub const DEFAULT_V_MIN: f64 = 0.94;
/// Upper counterpart of [`DEFAULT_V_MIN`].
pub const DEFAULT_V_MAX: f64 = 1.06;

/// A network node. Demands are per unit; `v_min`/`v_max` bound the voltage
/// magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// External 1-based id as it appears in case files.
    pub id: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub p_demand: f64,
    pub q_demand: f64,
    pub is_slack: bool,
}

/// A dispatchable injection attached to one bus. Ramp limits are per stage
/// and optional; cost coefficients are in currency per p.u.^2 / p.u. / flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    /// External 1-based id of the host bus.
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub ramp_down: Option<f64>,
    pub ramp_up: Option<f64>,
    pub cost_quad: f64,
    pub cost_lin: f64,
    pub cost_const: f64,
}

/// A series branch between two buses, stored as series conductance and
/// susceptance (the inverse of r + jx). `s_max` is the apparent-power limit
/// in p.u.; `None` means unlimited.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// External 1-based id of the from-bus.
    pub from: usize,
    /// External 1-based id of the to-bus.
    pub to: usize,
    pub g: f64,
    pub b: f64,
    pub s_max: Option<f64>,
}

impl Line {
    /// Series admittance from resistance and reactance.
    pub fn from_impedance(from: usize, to: usize, r: f64, x: f64, s_max: Option<f64>) -> Self {
        let d = r * r + x * x;
        Line { from, to, g: r / d, b: -x / d, s_max }
    }
}

/// Validated grid model. Construct with [`Network::new`] or via the parser;
/// all fields are immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
    pub base_mva: f64,
}

/// Violation of a [`Network`] structural invariant.
#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("network must contain at least one bus")]
    Empty,
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("line {0}-{1}: dangling endpoint")]
    DanglingEndpoint(usize, usize),
    #[error("line {0}-{1}: from and to bus coincide")]
    SelfLoop(usize, usize),
    #[error("duplicate line between buses {0} and {1}")]
    DuplicateLine(usize, usize),
    #[error("no slack bus")]
    NoSlack,
    #[error("more than one slack bus")]
    MultipleSlack,
    #[error("bus {0}: invalid voltage band")]
    BadVoltageBand(usize),
    #[error("generator at bus {0}: empty box or bad ramp bounds")]
    BadGeneratorBounds(usize),
    #[error("generator at bus {0}: unknown bus")]
    GeneratorBusUnknown(usize),
    #[error("more than one generator at bus {0}")]
    DuplicateGenerator(usize),
    #[error("network is not connected")]
    Disconnected,
}

impl Network {
    /// Validates and wraps the raw tables. See [`NetworkError`] for the
    /// checked invariants.
    pub fn new(
        buses: Vec<Bus>,
        generators: Vec<Generator>,
        lines: Vec<Line>,
        base_mva: f64,
    ) -> Result<Self, NetworkError> {
        let net = Network { buses, generators, lines, base_mva };
        net.validate()?;
        Ok(net)
    }

    /// Wraps the tables without running the validator. Used for network
    /// fragments produced by partitioning, which may be internally
    /// disconnected or slack-free.
    pub(crate) fn from_parts_unchecked(
        buses: Vec<Bus>,
        generators: Vec<Generator>,
        lines: Vec<Line>,
        base_mva: f64,
    ) -> Self {
        Network { buses, generators, lines, base_mva }
    }

    fn validate(&self) -> Result<(), NetworkError> {
        if self.buses.is_empty() {
            return Err(NetworkError::Empty);
        }
        let mut seen = std::collections::HashSet::new();
        for b in &self.buses {
            if !seen.insert(b.id) {
                return Err(NetworkError::DuplicateBus(b.id));
            }
            if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
                return Err(NetworkError::BadVoltageBand(b.id));
            }
        }
        match self.buses.iter().filter(|b| b.is_slack).count() {
            0 => return Err(NetworkError::NoSlack),
            1 => {}
            _ => return Err(NetworkError::MultipleSlack),
        }
        let mut pairs = std::collections::HashSet::new();
        for l in &self.lines {
            if l.from == l.to {
                return Err(NetworkError::SelfLoop(l.from, l.to));
            }
            if self.index_of(l.from).is_none() || self.index_of(l.to).is_none() {
                return Err(NetworkError::DanglingEndpoint(l.from, l.to));
            }
            let key = (l.from.min(l.to), l.from.max(l.to));
            if !pairs.insert(key) {
                return Err(NetworkError::DuplicateLine(key.0, key.1));
            }
        }
        let mut gen_bus = std::collections::HashSet::new();
        for g in &self.generators {
            if self.index_of(g.bus).is_none() {
                return Err(NetworkError::GeneratorBusUnknown(g.bus));
            }
            if !gen_bus.insert(g.bus) {
                return Err(NetworkError::DuplicateGenerator(g.bus));
            }
            if g.p_min > g.p_max || g.q_min > g.q_max {
                return Err(NetworkError::BadGeneratorBounds(g.bus));
            }
            if let (Some(rd), Some(ru)) = (g.ramp_down, g.ramp_up) {
                if !(rd <= 0.0 && 0.0 <= ru) {
                    return Err(NetworkError::BadGeneratorBounds(g.bus));
                }
            }
        }
        if !self.is_connected() {
            return Err(NetworkError::Disconnected);
        }
        Ok(())
    }

    /// Number of buses.
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Number of lines.
    pub fn n_line(&self) -> usize {
        self.lines.len()
    }

    /// Number of generators.
    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    /// 0-based position of the external bus id, if present.
    pub fn index_of(&self, bus_id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == bus_id)
    }

    /// 0-based index of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.is_slack).expect("validated network has a slack bus")
    }

    /// 0-based bus index hosting generator `g`.
    pub fn gen_bus_index(&self, g: usize) -> usize {
        self.index_of(self.generators[g].bus).expect("validated generator bus")
    }

    /// Generator index at 0-based bus index, if any.
    pub fn gen_at_bus(&self, bus_idx: usize) -> Option<usize> {
        let id = self.buses[bus_idx].id;
        self.generators.iter().position(|g| g.bus == id)
    }

    /// Per-bus active demand vector (0-based order).
    pub fn p_demand(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_bus(), self.buses.iter().map(|b| b.p_demand))
    }

    /// Per-bus reactive demand vector (0-based order).
    pub fn q_demand(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_bus(), self.buses.iter().map(|b| b.q_demand))
    }

    fn is_connected(&self) -> bool {
        let n = self.n_bus();
        if n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for l in &self.lines {
            let (Some(i), Some(j)) = (self.index_of(l.from), self.index_of(l.to)) else {
                return false;
            };
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }
}

/// Dense bus admittance matrix Y = G + iB, split into its real and imaginary
/// parts. Both parts are symmetric: the model carries no phase shifters or
/// shunts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g_matrix: DMatrix<f64>,
    pub b_matrix: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.g_matrix.nrows()
    }
}

/// Builds the bus admittance matrix: diagonal entries sum the series
/// admittances of incident lines, off-diagonals carry the negated series
/// admittance of the connecting line.
pub fn build_admittance(net: &Network) -> AdmittanceMatrix {
    let n = net.n_bus();
    let mut g = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    for l in &net.lines {
        let i = net.index_of(l.from).expect("valid endpoint");
        let j = net.index_of(l.to).expect("valid endpoint");
        g[(i, i)] += l.g;
        g[(j, j)] += l.g;
        g[(i, j)] -= l.g;
        g[(j, i)] -= l.g;
        b[(i, i)] += l.b;
        b[(j, j)] += l.b;
        b[(i, j)] -= l.b;
        b[(j, i)] -= l.b;
    }
    AdmittanceMatrix { g_matrix: g, b_matrix: b }
}

/// Oriented incidence matrix (one row per line: +1 at the from-bus, -1 at
/// the to-bus) and the diagonal branch susceptance matrix, in line-list
/// order.
pub fn incidence_and_branch_susceptance(net: &Network) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = (net.n_bus(), net.n_line());
    let mut a = DMatrix::zeros(m, n);
    let mut b_br = DMatrix::zeros(m, m);
    for (k, l) in net.lines.iter().enumerate() {
        a[(k, net.index_of(l.from).expect("valid endpoint"))] = 1.0;
        a[(k, net.index_of(l.to).expect("valid endpoint"))] = -1.0;
        b_br[(k, k)] = l.b;
    }
    (a, b_br)
}

/// Condition number of the DC bus matrix B with the slack row and column
/// removed. Finite for connected networks; used as a numerical
/// well-posedness check.
pub fn reduced_b_condition(net: &Network) -> f64 {
    let y = build_admittance(net);
    let slack = net.slack_index();
    let red = remove_row_col(&y.b_matrix, slack);
    if red.nrows() == 0 {
        return 1.0;
    }
    let svd = red.svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn remove_row_col(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    m.clone().remove_row(k).remove_column(k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus() -> Network {
        Network::new(
            vec![
                Bus { id: 1, v_min: 0.9, v_max: 1.1, p_demand: 0.0, q_demand: 0.0, is_slack: true },
                Bus { id: 2, v_min: 0.9, v_max: 1.1, p_demand: 1.0, q_demand: 0.2, is_slack: false },
            ],
            vec![Generator {
                bus: 1,
                p_min: 0.0,
                p_max: 3.0,
                q_min: -1.0,
                q_max: 1.0,
                ramp_down: None,
                ramp_up: None,
                cost_quad: 0.0,
                cost_lin: 100.0,
                cost_const: 0.0,
            }],
            vec![Line { from: 1, to: 2, g: 1.0, b: -5.0, s_max: None }],
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn admittance_single_line() {
        let net = two_bus();
        let y = build_admittance(&net);
        let (g, b) = (1.0, -5.0);
        assert_eq!(y.g_matrix, DMatrix::from_row_slice(2, 2, &[g, -g, -g, g]));
        assert_eq!(y.b_matrix, DMatrix::from_row_slice(2, 2, &[b, -b, -b, b]));
    }

    #[test]
    fn admittance_no_lines_is_zero() {
        let net = Network::new(
            vec![Bus { id: 1, v_min: 0.9, v_max: 1.1, p_demand: 0.0, q_demand: 0.0, is_slack: true }],
            vec![],
            vec![],
            100.0,
        )
        .unwrap();
        let y = build_admittance(&net);
        assert_eq!(y.g_matrix, DMatrix::zeros(1, 1));
        assert_eq!(y.b_matrix, DMatrix::zeros(1, 1));
    }

    #[test]
    fn incidence_single_line() {
        let net = two_bus();
        let (a, b_br) = incidence_and_branch_susceptance(&net);
        assert_eq!(a, DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert_eq!(b_br[(0, 0)], -5.0);
    }

    #[test]
    fn add_remove_line_restores_admittance_bitwise() {
        let mut net = two_bus();
        let before = build_admittance(&net);
        net.lines.push(Line { from: 2, to: 1, g: 0.3, b: -2.0, s_max: None });
        let during = build_admittance(&net);
        assert_ne!(before, during);
        net.lines.pop();
        let after = build_admittance(&net);
        assert_eq!(before, after);
    }

    #[test]
    fn disconnected_rejected() {
        let r = Network::new(
            vec![
                Bus { id: 1, v_min: 0.9, v_max: 1.1, p_demand: 0.0, q_demand: 0.0, is_slack: true },
                Bus { id: 2, v_min: 0.9, v_max: 1.1, p_demand: 0.0, q_demand: 0.0, is_slack: false },
            ],
            vec![],
            vec![],
            100.0,
        );
        assert!(matches!(r, Err(NetworkError::Disconnected)));
    }
}
