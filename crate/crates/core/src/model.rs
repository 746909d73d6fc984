//! Players, utilities, the linear influence structure and the scenario a
//! designer plays against.

use serde::{Deserialize, Serialize};

use crate::error::{MechError, Result};
use crate::report::{Check, DiagnosticsReport};

/// Lower clamp applied to every investment produced by a solver. Log utilities
/// are singular at zero.
pub const X_MIN: f64 = 1e-9;

/// A strictly concave, differentiable utility of a scalar investment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Utility {
    /// `alpha * ln(x)` on `x > 0`.
    Log { alpha: f64 },
    /// `alpha * x^rho` on `x > 0`, `0 < rho < 1`.
    Power { alpha: f64, rho: f64 },
    /// `slope * x - curvature * x^2 / 2` on `0 <= x < slope / curvature`.
    Quadratic { slope: f64, curvature: f64 },
}

impl Utility {
    pub fn log(alpha: f64) -> Self {
        Utility::Log { alpha }
    }

    pub fn power(alpha: f64, rho: f64) -> Self {
        Utility::Power { alpha, rho }
    }

    pub fn quadratic(slope: f64, curvature: f64) -> Self {
        Utility::Quadratic { slope, curvature }
    }

    pub fn family(&self) -> &'static str {
        match self {
            Utility::Log { .. } => "log",
            Utility::Power { .. } => "power",
            Utility::Quadratic { .. } => "quadratic",
        }
    }

    pub fn is_log(&self) -> bool {
        matches!(self, Utility::Log { .. })
    }

    /// Parameter constraints of the family; `None` when they hold.
    pub fn parameter_violation(&self) -> Option<String> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match *self {
            Utility::Log { alpha } if !ok(alpha) => {
                Some(format!("log weight alpha > 0 (got {alpha})"))
            }
            Utility::Power { alpha, .. } if !ok(alpha) => {
                Some(format!("power weight alpha > 0 (got {alpha})"))
            }
            Utility::Power { rho, .. } if !(rho > 0.0 && rho < 1.0) => {
                Some(format!("power exponent 0 < rho < 1 (got {rho})"))
            }
            Utility::Quadratic { slope, .. } if !ok(slope) => {
                Some(format!("quadratic slope a > 0 (got {slope})"))
            }
            Utility::Quadratic { curvature, .. } if !ok(curvature) => {
                Some(format!("quadratic curvature b > 0 (got {curvature})"))
            }
            _ => None,
        }
    }

    /// Supremum of the valid domain (`+inf` for Log and Power).
    pub fn domain_upper(&self) -> f64 {
        match *self {
            Utility::Quadratic { slope, curvature } => slope / curvature,
            _ => f64::INFINITY,
        }
    }

    pub fn in_domain(&self, x: f64) -> bool {
        match self {
            Utility::Log { .. } | Utility::Power { .. } => x > 0.0 && x.is_finite(),
            Utility::Quadratic { .. } => x >= 0.0 && x < self.domain_upper(),
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if self.in_domain(x) {
            return Ok(());
        }
        let bound = match self {
            Utility::Log { .. } | Utility::Power { .. } => "x > 0".to_string(),
            Utility::Quadratic { .. } => format!("0 <= x < a/b = {}", self.domain_upper()),
        };
        Err(MechError::Domain(format!(
            "{} utility requires {bound}, got x = {x}",
            self.family()
        )))
    }

    pub fn value(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match *self {
            Utility::Log { alpha } => alpha * x.ln(),
            Utility::Power { alpha, rho } => alpha * x.powf(rho),
            Utility::Quadratic { slope, curvature } => slope * x - 0.5 * curvature * x * x,
        })
    }

    pub fn marginal(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match *self {
            Utility::Log { alpha } => alpha / x,
            Utility::Power { alpha, rho } => alpha * rho * x.powf(rho - 1.0),
            Utility::Quadratic { slope, curvature } => slope - curvature * x,
        })
    }

    /// Second derivative; negative everywhere on the domain.
    pub fn curvature(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match *self {
            Utility::Log { alpha } => -alpha / (x * x),
            Utility::Power { alpha, rho } => alpha * rho * (rho - 1.0) * x.powf(rho - 2.0),
            Utility::Quadratic { curvature, .. } => -curvature,
        })
    }

    /// The unique `x` with `marginal(x) == m`.
    pub fn inverse_marginal(&self, m: f64) -> Result<f64> {
        let range_err = |detail: String| MechError::MarginalRange {
            marginal: m,
            detail,
        };
        if !(m > 0.0) || !m.is_finite() {
            return Err(range_err(
                "marginal must be positive; incentive at or above cost gives unbounded demand"
                    .into(),
            ));
        }
        match *self {
            Utility::Log { alpha } => Ok(alpha / m),
            Utility::Power { alpha, rho } => Ok((m / (alpha * rho)).powf(1.0 / (rho - 1.0))),
            Utility::Quadratic { slope, curvature } => {
                if m > slope {
                    Err(range_err(format!(
                        "quadratic marginal is at most a = {slope}"
                    )))
                } else {
                    Ok((slope - m) / curvature)
                }
            }
        }
    }

    /// Demand at net marginal cost `m`: the inverse marginal, or zero when
    /// `m` exceeds the largest marginal utility (corner solution).
    pub(crate) fn demand(&self, m: f64) -> Result<f64> {
        match *self {
            Utility::Quadratic { slope, .. } if m > slope => Ok(0.0),
            _ => self.inverse_marginal(m),
        }
    }

    /// The same family with the utility multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        match *self {
            Utility::Log { alpha } => Utility::Log { alpha: alpha * c },
            Utility::Power { alpha, rho } => Utility::Power {
                alpha: alpha * c,
                rho,
            },
            Utility::Quadratic { slope, curvature } => Utility::Quadratic {
                slope: slope * c,
                curvature: curvature * c,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlayerSpec {
    pub utility: Utility,
    /// Monetary cost per unit investment (`beta_i`).
    pub cost_factor: f64,
}

impl PlayerSpec {
    pub fn new(utility: Utility, cost_factor: f64) -> Self {
        PlayerSpec {
            utility,
            cost_factor,
        }
    }

    pub fn log(alpha: f64, cost_factor: f64) -> Self {
        Self::new(Utility::log(alpha), cost_factor)
    }
}

/// Square matrix `W` of spillovers: `W[i][j]` is the effect of unit `j`'s
/// investment on unit `i`. Row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl InfluenceMatrix {
    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1.0;
        }
        InfluenceMatrix { n, entries }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut entries = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(MechError::Dimension {
                    expected: n,
                    got: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Ok(InfluenceMatrix { n, entries })
    }

    /// Two players with `W_12 = w12`, `W_21 = w21`.
    pub fn pair(w12: f64, w21: f64) -> Self {
        InfluenceMatrix {
            n: 2,
            entries: vec![1.0, w12, w21, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.n.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| self.get(i, j) == if i == j { 1.0 } else { 0.0 }))
    }

    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// `(W x)_i`.
    pub fn effective_at(&self, x: &[f64], i: usize) -> f64 {
        let row = &self.entries[i * self.n..(i + 1) * self.n];
        row.iter().zip(x).map(|(w, xj)| w * xj).sum()
    }

    /// `sum_{j != i} W_ij x_j`: the spillover player `i` receives from others.
    pub fn spillover(&self, x: &[f64], i: usize) -> f64 {
        (0..self.n)
            .filter(|&j| j != i)
            .map(|j| self.get(i, j) * x[j])
            .sum()
    }

    fn violation(&self) -> Option<String> {
        for i in 0..self.n {
            for j in 0..self.n {
                let w = self.get(i, j);
                if i == j && w != 1.0 {
                    return Some(format!("diagonal must be 1 (W_{}{} = {w})", i + 1, j + 1));
                }
                if i != j && !(0.0..=1.0).contains(&w) {
                    return Some(format!(
                        "off-diagonal must lie in [0, 1] (W_{}{} = {w})",
                        i + 1,
                        j + 1
                    ));
                }
            }
        }
        None
    }
}

/// Effective investments `W x`.
pub fn effective_investment(w: &InfluenceMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.dim() {
        return Err(MechError::Dimension {
            expected: w.dim(),
            got: x.len(),
        });
    }
    if let Some(bad) = x.iter().position(|&v| !(v >= 0.0)) {
        return Err(MechError::Domain(format!(
            "investments must be non-negative (x_{} = {})",
            bad + 1,
            x[bad]
        )));
    }
    Ok((0..w.dim()).map(|i| w.effective_at(x, i)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum DesignerObjective {
    /// Social welfare `sum_i U_i`.
    Welfare,
    /// `F(x) = sum_i gamma_i x_i`.
    LinearGlobal { gamma: Vec<f64> },
}

impl DesignerObjective {
    pub fn is_welfare(&self) -> bool {
        matches!(self, DesignerObjective::Welfare)
    }

    pub fn gamma(&self) -> Option<&[f64]> {
        match self {
            DesignerObjective::LinearGlobal { gamma } => Some(gamma),
            DesignerObjective::Welfare => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub players: Vec<PlayerSpec>,
    pub influence: InfluenceMatrix,
    pub objective: DesignerObjective,
    pub budget: f64,
    pub success_threshold: Option<f64>,
}

impl Scenario {
    /// Separable scenario (`W = I`) with Log utilities.
    pub fn separable_log(
        alpha: &[f64],
        beta: &[f64],
        objective: DesignerObjective,
        budget: f64,
    ) -> Self {
        let players = alpha
            .iter()
            .zip(beta)
            .map(|(&a, &b)| PlayerSpec::log(a, b))
            .collect::<Vec<_>>();
        Scenario {
            influence: InfluenceMatrix::identity(players.len()),
            players,
            objective,
            budget,
            success_threshold: None,
        }
    }

    pub fn n(&self) -> usize {
        self.players.len()
    }

    pub fn betas(&self) -> Vec<f64> {
        self.players.iter().map(|p| p.cost_factor).collect()
    }

    /// Log weights, if every player has a Log utility.
    pub fn log_alphas(&self) -> Option<Vec<f64>> {
        self.players
            .iter()
            .map(|p| match p.utility {
                Utility::Log { alpha } => Some(alpha),
                _ => None,
            })
            .collect()
    }

    pub fn all_log(&self) -> bool {
        self.players.iter().all(|p| p.utility.is_log())
    }

    pub fn with_objective(&self, objective: DesignerObjective) -> Self {
        Scenario {
            objective,
            ..self.clone()
        }
    }

    pub fn with_influence(&self, influence: InfluenceMatrix) -> Self {
        Scenario {
            influence,
            ..self.clone()
        }
    }

    pub fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() == self.n() {
            Ok(())
        } else {
            Err(MechError::Dimension {
                expected: self.n(),
                got: v.len(),
            })
        }
    }

    /// Designer objective at `x`: `F(x)` or `sum_i U_i((Wx)_i)`.
    pub fn objective_value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        match &self.objective {
            DesignerObjective::LinearGlobal { gamma } => {
                Ok(gamma.iter().zip(x).map(|(g, v)| g * v).sum())
            }
            DesignerObjective::Welfare => (0..self.n())
                .map(|i| {
                    self.players[i]
                        .utility
                        .value(self.influence.effective_at(x, i))
                })
                .sum(),
        }
    }
}

/// Checks every structural invariant of a scenario. Violations are report
/// entries; the first failing check names the violated invariant.
pub fn validate_scenario(s: &Scenario) -> DiagnosticsReport {
    let mut report = DiagnosticsReport::new();
    let n = s.n();

    report.push(if n == 0 {
        Check::fail("players", "players must be nonempty")
    } else {
        Check::pass("players", format!("{n} players"))
    });

    let bad_param = s.players.iter().enumerate().find_map(|(i, p)| {
        p.utility
            .parameter_violation()
            .map(|v| format!("player {}: {v}", i + 1))
    });
    report.push(match bad_param {
        Some(v) => Check::fail("utility_parameters", v),
        None => Check::pass("utility_parameters", "all utility parameters valid"),
    });

    let bad_cost = s
        .players
        .iter()
        .position(|p| !(p.cost_factor > 0.0 && p.cost_factor.is_finite()));
    report.push(match bad_cost {
        Some(i) => Check::fail(
            "cost_factor",
            format!(
                "cost_factor > 0 violated by player {} (beta = {})",
                i + 1,
                s.players[i].cost_factor
            ),
        ),
        None => Check::pass("cost_factor", "cost_factor > 0 for all players"),
    });

    report.push(if s.influence.dim() != n {
        Check::fail(
            "influence",
            format!(
                "influence dimension {} must equal player count {n}",
                s.influence.dim()
            ),
        )
    } else {
        match s.influence.violation() {
            Some(v) => Check::fail("influence", v),
            None => Check::pass("influence", "unit diagonal, off-diagonal in [0, 1]"),
        }
    });

    report.push(match &s.objective {
        DesignerObjective::Welfare => Check::pass("objective", "welfare"),
        DesignerObjective::LinearGlobal { gamma } if gamma.len() != n => Check::fail(
            "objective",
            format!("gamma length {} != N = {n}", gamma.len()),
        ),
        DesignerObjective::LinearGlobal { gamma } => match gamma.iter().position(|&g| !(g > 0.0)) {
            Some(i) => Check::fail(
                "objective",
                format!("gamma_{} = {} must be > 0", i + 1, gamma[i]),
            ),
            None => Check::pass("objective", "linear global objective with positive weights"),
        },
    });

    report.push(if s.budget > 0.0 && s.budget.is_finite() {
        Check::pass("budget", format!("B = {}", s.budget))
    } else {
        Check::fail("budget", format!("budget > 0 violated (B = {})", s.budget))
    });

    report
}
