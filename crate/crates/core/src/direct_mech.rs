//! One-shot mechanisms: the designer solves the alignment system for
//! investments, incentive factors and the budget multiplier directly from the
//! players' reported utilities.
//!
//! Both mechanisms reduce to a scalar root-find on the budget residual
//! `sum_i p_i(lambda) x_i(p(lambda)) - B`, where `x` is the game's Nash
//! equilibrium at the incentives `p(lambda)`:
//!
//! * global objective (M2): `p_i = (dF/dx_i) / lambda = gamma_i / lambda`;
//! * welfare (M1): `lambda p = W^T (beta - p)`, i.e. `(W^T + lambda I) p = W^T beta`,
//!   which is the alignment condition once the interior first-order
//!   conditions `U_j' = beta_j - p_j` are substituted. With `W = I` this is
//!   `p_i = beta_i / (1 + lambda)`.
//!
//! The spend is decreasing in `lambda` in both cases, so bisection is used.

use nalgebra::DVector;

use crate::error::{MechError, Result};
use crate::game::{best_response, player_cost, solve_ne, GameState, NeSolveConfig};
use crate::model::{DesignerObjective, Scenario};

#[derive(Clone, Debug, PartialEq)]
pub struct MechanismSolution {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: f64,
    pub objective_value: f64,
    pub budget_spend: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MisreportOutcome {
    pub cost_truthful: f64,
    pub cost_misreport: f64,
    /// `cost_truthful - cost_misreport`; positive means misreporting pays.
    pub advantage: f64,
}

const LAMBDA_HI: f64 = 1e6;
const P_CAP: f64 = 0.99;
const MAX_BRACKET_ADJUST: usize = 60;
const MAX_BISECTIONS: usize = 300;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Incentive factors as a function of the budget multiplier.
trait PriceRule {
    fn prices(&self, s: &Scenario, lambda: f64) -> Result<Vec<f64>>;
}

struct GlobalPrices<'a>(&'a [f64]);

impl PriceRule for GlobalPrices<'_> {
    fn prices(&self, _: &Scenario, lambda: f64) -> Result<Vec<f64>> {
        Ok(self.0.iter().map(|g| g / lambda).collect())
    }
}

struct WelfarePrices;

impl PriceRule for WelfarePrices {
    fn prices(&self, s: &Scenario, lambda: f64) -> Result<Vec<f64>> {
        welfare_prices(s, lambda)
    }
}

/// Solution of `(W^T + lambda I) p = W^T beta`.
pub fn welfare_prices(s: &Scenario, lambda: f64) -> Result<Vec<f64>> {
    let beta = s.betas();
    if s.influence.is_identity() {
        return Ok(beta.iter().map(|b| b / (1.0 + lambda)).collect());
    }
    let wt = s.influence.to_dmatrix().transpose();
    let n = s.n();
    let rhs = &wt * DVector::from_vec(beta);
    let a = wt + nalgebra::DMatrix::<f64>::identity(n, n) * lambda;
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let p = a
        .lu()
        .solve(&rhs)
        .filter(|p| p.iter().all(|v| v.is_finite()));
    match p {
        Some(p) if smin > f64::EPSILON * smax => Ok(p.iter().copied().collect()),
        _ => Err(MechError::Numerical(format!(
            "W^T + lambda I is singular at lambda = {lambda} (condition estimate {:e})",
            smax / smin
        ))),
    }
}

/// Budget spend at `lambda`, or `None` when some incentive reaches its cost
/// factor (demand unbounded, spend treated as +inf).
fn spend_at(
    s: &Scenario,
    rule: &dyn PriceRule,
    lambda: f64,
    ne: &NeSolveConfig,
) -> Result<Option<(f64, Vec<f64>, Vec<f64>)>> {
    let p = rule.prices(s, lambda)?;
    if p.iter()
        .zip(s.players.iter())
        .any(|(pi, pl)| *pi >= pl.cost_factor)
    {
        return Ok(None);
    }
    let x = solve_ne(s, &p, ne)?;
    Ok(Some((dot(&p, &x), p, x)))
}

fn solve_budget(
    s: &Scenario,
    rule: &dyn PriceRule,
    lambda_lo_init: f64,
    pole: f64,
    tol: f64,
) -> Result<MechanismSolution> {
    if !(tol > 0.0) {
        return Err(MechError::InvalidConfig(format!(
            "tol must be > 0 (got {tol})"
        )));
    }
    let ne = NeSolveConfig {
        tol: (tol * 1e-2).max(1e-14),
        ..Default::default()
    };
    let b = s.budget;

    // Lower end: spend must exceed B. Shrink toward the pole where p -> beta.
    let mut lo = lambda_lo_init;
    let mut tries = 0;
    loop {
        match spend_at(s, rule, lo, &ne)? {
            Some((spend, ..)) if spend > b => break,
            Some(_) => lo = pole + 0.5 * (lo - pole),
            None => lo = lo + (lo - pole).max(lo * 0.01),
        }
        tries += 1;
        if tries > MAX_BRACKET_ADJUST || !(lo > 0.0) {
            return Err(MechError::Infeasible(format!(
                "budget B = {b} cannot be spent: no multiplier with spend above B near lambda = {lo:e}"
            )));
        }
    }

    let mut hi = LAMBDA_HI.max(lo * 2.0);
    let mut tries = 0;
    loop {
        match spend_at(s, rule, hi, &ne)? {
            Some((spend, ..)) if spend < b => break,
            _ => hi *= 10.0,
        }
        tries += 1;
        if tries > MAX_BRACKET_ADJUST {
            return Err(MechError::Infeasible(format!(
                "no sign change in the budget residual up to lambda = {hi:e}"
            )));
        }
    }

    let mut best: Option<(f64, f64, Vec<f64>, Vec<f64>)> = None;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match spend_at(s, rule, mid, &ne)? {
            Some((spend, p, x)) => {
                let r = spend - b;
                if best
                    .as_ref()
                    .map_or(true, |bst| r.abs() < (bst.1 - b).abs())
                {
                    best = Some((mid, spend, p, x));
                }
                if r.abs() < tol * 1e-3 {
                    break;
                }
                if r > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            None => lo = mid,
        }
    }

    let (lambda, spend, p, x) =
        best.ok_or_else(|| MechError::Infeasible("empty bisection bracket".into()))?;
    if (spend - b).abs() >= tol {
        return Err(MechError::Convergence {
            iterations: MAX_BISECTIONS,
            residual: (spend - b).abs(),
        });
    }
    Ok(MechanismSolution {
        objective_value: s.objective_value(&x)?,
        x,
        p,
        lambda,
        budget_spend: spend,
    })
}

/// Mechanism with a global linear objective: `p_i lambda = gamma_i` and the
/// budget holds with equality.
pub fn solve_m2(s: &Scenario, tol: f64) -> Result<MechanismSolution> {
    let gamma = match &s.objective {
        DesignerObjective::LinearGlobal { gamma } => gamma.clone(),
        DesignerObjective::Welfare => {
            return Err(MechError::UnsupportedModel(
                "the global-objective mechanism needs a linear_global objective".into(),
            ))
        }
    };
    s.check_dim(&gamma)?;
    // Largest incentive reaches P_CAP * beta_i at lambda_lo.
    let pole = gamma
        .iter()
        .zip(s.players.iter())
        .map(|(g, p)| g / p.cost_factor)
        .fold(0.0, f64::max);
    solve_budget(s, &GlobalPrices(&gamma), pole / P_CAP, pole, tol)
}

/// Welfare-maximizing mechanism: alignment condition plus active budget.
pub fn solve_m1(s: &Scenario, tol: f64) -> Result<MechanismSolution> {
    if !s.objective.is_welfare() {
        return Err(MechError::UnsupportedModel(
            "the welfare mechanism needs a welfare objective".into(),
        ));
    }
    // With W = I the incentives reach P_CAP * beta at 1/P_CAP - 1.
    solve_budget(s, &WelfarePrices, 1.0 / P_CAP - 1.0, 0.0, tol)
}

/// Solves whichever direct mechanism matches the scenario's objective.
pub fn solve_direct(s: &Scenario, tol: f64) -> Result<MechanismSolution> {
    match s.objective {
        DesignerObjective::Welfare => solve_m1(s, tol),
        DesignerObjective::LinearGlobal { .. } => solve_m2(s, tol),
    }
}

/// Residuals of `(1/p_i) dF/dx_i = lambda` for every player.
pub fn m2_stationarity_residuals(s: &Scenario, sol: &MechanismSolution) -> Result<Vec<f64>> {
    let gamma = s
        .objective
        .gamma()
        .ok_or_else(|| MechError::UnsupportedModel("linear_global objective required".into()))?;
    Ok(gamma
        .iter()
        .zip(&sol.p)
        .map(|(g, p)| g / p - sol.lambda)
        .collect())
}

/// Residuals of the welfare alignment condition
/// `(beta_i - p_i)/p_i + (1/p_i) sum_{j != i} dU_j/dx_i = lambda`, with the
/// cross-partials taken from the true marginals at `(W x)_j`.
pub fn m1_alignment_residuals(s: &Scenario, sol: &MechanismSolution) -> Result<Vec<f64>> {
    let n = s.n();
    let marginals: Vec<f64> = (0..n)
        .map(|j| {
            s.players[j]
                .utility
                .marginal(s.influence.effective_at(&sol.x, j))
        })
        .collect::<Result<_>>()?;
    Ok((0..n)
        .map(|i| {
            let pi = sol.p[i];
            let cross: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| marginals[j] * s.influence.get(j, i))
                .sum();
            (s.players[i].cost_factor - pi) / pi + cross / pi - sol.lambda
        })
        .collect())
}

/// Cost player `i` realizes when the designer runs the direct mechanism on a
/// report that scales player `i`'s utility by `report_scale`, and the player
/// then plays its true best response to the announced incentives.
pub fn misreport_gain(s: &Scenario, i: usize, report_scale: f64) -> Result<MisreportOutcome> {
    if !(report_scale > 0.0) {
        return Err(MechError::InvalidConfig(format!(
            "report scale must be > 0 (got {report_scale})"
        )));
    }
    if i >= s.n() {
        return Err(MechError::Dimension {
            expected: s.n(),
            got: i + 1,
        });
    }
    let cost_truthful = realized_cost(s, i, 1.0)?;
    let cost_misreport = realized_cost(s, i, report_scale)?;
    Ok(MisreportOutcome {
        cost_truthful,
        cost_misreport,
        advantage: cost_truthful - cost_misreport,
    })
}

const MISREPORT_TOL: f64 = 1e-12;

fn realized_cost(s: &Scenario, i: usize, scale: f64) -> Result<f64> {
    let mut reported = s.clone();
    reported.players[i].utility = s.players[i].utility.scaled(scale);
    let sol = solve_direct(&reported, MISREPORT_TOL)?;
    let mut state = GameState::new(sol.x, sol.p);
    state.x[i] = best_response(s, &state, i)?;
    player_cost(s, &state, i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const ALPHA: [f64; 6] = [0.9, 0.7, 0.6, 0.8, 0.2, 0.4];
    const GAMMA: [f64; 6] = [0.8, 0.4, 0.5, 0.2, 0.3, 0.1];

    fn welfare() -> Scenario {
        Scenario::separable_log(&ALPHA, &[3.0; 6], DesignerObjective::Welfare, 3.0)
    }

    fn global() -> Scenario {
        Scenario::separable_log(
            &ALPHA,
            &[3.0; 6],
            DesignerObjective::LinearGlobal {
                gamma: GAMMA.to_vec(),
            },
            3.0,
        )
    }

    /// Bisection on the closed-form separable Log residual, independent of
    /// the NE solver path.
    fn m2_oracle_lambda() -> f64 {
        let r = |l: f64| -> f64 {
            GAMMA
                .iter()
                .zip(ALPHA)
                .map(|(g, a)| (g / l) * a / (3.0 - g / l))
                .sum::<f64>()
                - 3.0
        };
        let (mut lo, mut hi) = (0.39, 0.392);
        assert!(r(lo) > 0.0 && r(hi) < 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if r(mid) > 0.0 {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn m2_matches_scalar_oracle() {
        let sol = solve_m2(&global(), 1e-12).unwrap();
        let l = m2_oracle_lambda();
        assert_relative_eq!(sol.lambda, l, epsilon = 1e-10);
        assert_relative_eq!(sol.lambda, 0.391_443_201, epsilon = 1e-8);
        assert_relative_eq!(sol.x[0], 0.9 / (3.0 - 0.8 / l), epsilon = 1e-9);
        assert!((sol.objective_value - 1.1743).abs() < 1e-4);
        assert!((sol.budget_spend - 3.0).abs() < 1e-12);
        for r in m2_stationarity_residuals(&global(), &sol).unwrap() {
            assert!(r.abs() < 1e-11);
        }
    }

    #[test]
    fn m2_single_player() {
        let s = Scenario::separable_log(
            &[1.0],
            &[2.0],
            DesignerObjective::LinearGlobal { gamma: vec![1.0] },
            1.0,
        );
        let sol = solve_m2(&s, 1e-12).unwrap();
        assert_relative_eq!(sol.lambda, 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.p[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.objective_value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn m2_small_budget_approaches_no_mechanism() {
        let mut s = global();
        s.budget = 1e-6;
        let sol = solve_m2(&s, 1e-12).unwrap();
        for (x, a) in sol.x.iter().zip(ALPHA) {
            assert!((x - a / 3.0).abs() < 1e-5);
        }
        assert!(sol.p.iter().all(|&p| p < 1e-5));
    }

    #[test]
    fn m1_closed_form() {
        let sol = solve_m1(&welfare(), 1e-12).unwrap();
        assert_relative_eq!(sol.lambda, 1.2, epsilon = 1e-10);
        for (i, (&x, &p)) in sol.x.iter().zip(&sol.p).enumerate() {
            assert_relative_eq!(p, 3.0 / 2.2, epsilon = 1e-10);
            assert_relative_eq!(x, ALPHA[i] * 2.2 / 3.6, epsilon = 1e-10);
        }
        assert!((sol.budget_spend - 3.0).abs() < 1e-12);
        for r in m1_alignment_residuals(&welfare(), &sol).unwrap() {
            assert!(r.abs() < 1e-10);
        }
    }

    #[test]
    fn m1_single_player() {
        let s = Scenario::separable_log(&[1.0], &[2.0], DesignerObjective::Welfare, 1.0);
        let sol = solve_m1(&s, 1e-12).unwrap();
        assert_relative_eq!(sol.lambda, 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.p[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn mechanisms_reject_wrong_objective() {
        assert!(matches!(
            solve_m1(&global(), 1e-9),
            Err(MechError::UnsupportedModel(_))
        ));
        assert!(matches!(
            solve_m2(&welfare(), 1e-9),
            Err(MechError::UnsupportedModel(_))
        ));
    }

    #[test]
    fn misreport_examples() {
        let s = welfare();
        let under = misreport_gain(&s, 0, 0.5).unwrap();
        assert!((under.cost_truthful - 1.4380).abs() < 1e-4);
        assert!((under.cost_misreport - 1.3815).abs() < 1e-4);
        assert!(under.advantage > 0.0);

        let same = misreport_gain(&s, 0, 1.0).unwrap();
        assert_eq!(same.advantage, 0.0);

        let over = misreport_gain(&s, 0, 2.0).unwrap();
        assert!((over.cost_misreport - 1.5238).abs() < 1e-4);
        assert!(over.advantage < 0.0);
    }

    #[test]
    fn misreport_closed_forms() {
        // Designer believes alpha_1 = 0.45: lambda = (3.6 - 0.45) / 3.
        let lt = (3.6 - 0.45) / 3.0;
        let pt = 3.0 / (1.0 + lt);
        let x: f64 = 0.9 / (3.0 - pt);
        let cost = 3.0 * x - 0.9 * x.ln() - pt * x;
        let out = misreport_gain(&welfare(), 0, 0.5).unwrap();
        assert_relative_eq!(out.cost_misreport, cost, epsilon = 1e-10);
    }
}
