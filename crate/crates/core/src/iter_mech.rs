//! Iterative mechanisms: the designer adjusts the budget multiplier from the
//! observed spend and announces incentives; players answer with relaxed best
//! responses. Nobody reports a utility, so there is nothing to misreport.

use serde::{Deserialize, Serialize};

use crate::direct_mech::welfare_prices;
use crate::error::{MechError, Result};
use crate::game::{best_response, player_cost, player_costs, GameState};
use crate::model::{DesignerObjective, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    /// Welfare objective; incentives from `(W^T + lambda I) p = W^T beta`.
    Im1,
    /// Linear global objective; incentives `gamma_i / lambda`.
    Im2,
}

/// How the multiplier increment is projected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaProjection {
    /// `lambda + kappa (spend - B)`, floored at `lambda_min`.
    Signed,
    /// `lambda + kappa [spend - B]^+`: the multiplier never decreases.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Players respond to the incentives announced in the same step.
    DesignerFirst,
    /// Players respond to the previous step's incentives.
    Simultaneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IterationConfig {
    pub kappa_d: f64,
    pub phi: f64,
    /// `None` derives the start from the initial incentives.
    pub lambda_init: Option<f64>,
    pub lambda_min: f64,
    pub p_cap_fraction: f64,
    pub max_iters: usize,
    pub conv_tol: f64,
    pub projection: LambdaProjection,
    pub order: UpdateOrder,
    pub fail_on_max_iters: bool,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            kappa_d: 0.05,
            phi: 0.3,
            lambda_init: None,
            lambda_min: 1e-6,
            p_cap_fraction: 0.99,
            max_iters: 1000,
            conv_tol: 1e-8,
            projection: LambdaProjection::Signed,
            order: UpdateOrder::DesignerFirst,
            fail_on_max_iters: false,
        }
    }
}

impl IterationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MechError::InvalidConfig(m));
        if !(self.phi > 0.0 && self.phi < 1.0) {
            return bad(format!(
                "relaxation phi must lie in (0, 1) (got {})",
                self.phi
            ));
        }
        if !(self.kappa_d > 0.0) {
            return bad(format!("kappa_d must be > 0 (got {})", self.kappa_d));
        }
        if !(self.lambda_min > 0.0) {
            return bad(format!("lambda_min must be > 0 (got {})", self.lambda_min));
        }
        if !(self.p_cap_fraction > 0.0 && self.p_cap_fraction < 1.0) {
            return bad(format!(
                "p_cap_fraction must lie in (0, 1) (got {})",
                self.p_cap_fraction
            ));
        }
        if !(self.conv_tol > 0.0) {
            return bad(format!("conv_tol must be > 0 (got {})", self.conv_tol));
        }
        if let Some(l) = self.lambda_init {
            if !(l > 0.0) {
                return bad(format!("lambda_init must be > 0 (got {l})"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub n: usize,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: f64,
    /// `dot(p, x)`.
    pub budget_spend: f64,
    pub objective: f64,
    pub player_costs: Vec<f64>,
}

impl StepRecord {
    /// Record for state `(x, p, lambda)` at iteration `n`.
    pub fn new(s: &Scenario, n: usize, x: Vec<f64>, p: Vec<f64>, lambda: f64) -> Result<Self> {
        let budget_spend = budget_spend(&p, &x)?;
        let objective = s.objective_value(&x)?;
        let state = GameState::new(x, p);
        let player_costs = player_costs(s, &state)?;
        Ok(StepRecord {
            n,
            x: state.x,
            p: state.p,
            lambda,
            budget_spend,
            objective,
            player_costs,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub scenario_id: String,
    /// `None` for the fixed-incentive baseline.
    pub mechanism: Option<Mechanism>,
    pub config: IterationConfig,
    pub steps: Vec<StepRecord>,
    pub converged_at: Option<usize>,
}

impl Trajectory {
    pub fn last(&self) -> &StepRecord {
        self.steps
            .last()
            .expect("trajectory has at least the initial step")
    }
}

/// `sum_i p_i x_i`.
pub fn budget_spend(p: &[f64], x: &[f64]) -> Result<f64> {
    if p.len() != x.len() {
        return Err(MechError::Dimension {
            expected: p.len(),
            got: x.len(),
        });
    }
    Ok(p.iter().zip(x).map(|(a, b)| a * b).sum())
}

fn next_lambda(s: &Scenario, prev: &StepRecord, cfg: &IterationConfig) -> f64 {
    let mut inc = cfg.kappa_d * (prev.budget_spend - s.budget);
    if cfg.projection == LambdaProjection::Literal {
        inc = inc.max(0.0);
    }
    (prev.lambda + inc).max(cfg.lambda_min)
}

fn designer_prices(
    s: &Scenario,
    mech: Mechanism,
    lambda: f64,
    cfg: &IterationConfig,
) -> Result<Vec<f64>> {
    let raw = match (mech, &s.objective) {
        (Mechanism::Im2, DesignerObjective::LinearGlobal { gamma }) => {
            s.check_dim(gamma)?;
            gamma.iter().map(|g| g / lambda).collect()
        }
        (Mechanism::Im1, DesignerObjective::Welfare) => welfare_prices(s, lambda)?,
        (Mechanism::Im2, DesignerObjective::Welfare) => {
            return Err(MechError::UnsupportedModel(
                "IM2 needs a linear_global objective".into(),
            ))
        }
        (Mechanism::Im1, DesignerObjective::LinearGlobal { .. }) => {
            return Err(MechError::UnsupportedModel(
                "IM1 needs a welfare objective".into(),
            ))
        }
    };
    Ok(raw
        .iter()
        .zip(s.players.iter())
        .map(|(p, pl)| p.min(cfg.p_cap_fraction * pl.cost_factor))
        .collect())
}

/// `x_i <- phi x_i + (1 - phi) BR_i(p)` for every player, all against the
/// previous investments.
fn relaxed_responses(s: &Scenario, x: &[f64], p: &[f64], phi: f64) -> Result<Vec<f64>> {
    let state = GameState::new(x.to_vec(), p.to_vec());
    (0..s.n())
        .map(|i| Ok(phi * x[i] + (1.0 - phi) * best_response(s, &state, i)?))
        .collect()
}

/// One designer/player round of either mechanism.
pub fn step(
    s: &Scenario,
    prev: &StepRecord,
    cfg: &IterationConfig,
    mech: Mechanism,
) -> Result<StepRecord> {
    step_with_order(s, prev, cfg, mech, cfg.order)
}

fn step_with_order(
    s: &Scenario,
    prev: &StepRecord,
    cfg: &IterationConfig,
    mech: Mechanism,
    order: UpdateOrder,
) -> Result<StepRecord> {
    s.check_dim(&prev.x)?;
    s.check_dim(&prev.p)?;
    let lambda = next_lambda(s, prev, cfg);
    let p = designer_prices(s, mech, lambda, cfg)?;
    let faced = match order {
        UpdateOrder::DesignerFirst => &p,
        UpdateOrder::Simultaneous => &prev.p,
    };
    let x = relaxed_responses(s, &prev.x, faced, cfg.phi)?;
    StepRecord::new(s, prev.n + 1, x, p, lambda)
}

/// IM2 round: multiplier update, `p_i = min(gamma_i / lambda, cap beta_i)`,
/// relaxed player responses.
pub fn im2_step(s: &Scenario, prev: &StepRecord, cfg: &IterationConfig) -> Result<StepRecord> {
    step(s, prev, cfg, Mechanism::Im2)
}

/// IM1 round: as IM2 but incentives solve `(W^T + lambda I) p = W^T beta`.
pub fn im1_step(s: &Scenario, prev: &StepRecord, cfg: &IterationConfig) -> Result<StepRecord> {
    step(s, prev, cfg, Mechanism::Im1)
}

/// Multiplier at which the designer's own rule reproduces the mean initial
/// incentive: `mean(gamma)/mean(p0)` for IM2, `mean(beta)/mean(p0) - 1` for IM1.
pub fn default_lambda_init(s: &Scenario, mech: Mechanism, p0: &[f64], lambda_min: f64) -> f64 {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let p_mean = mean(p0);
    let l = match mech {
        Mechanism::Im2 => mean(s.objective.gamma().unwrap_or(&[])) / p_mean,
        Mechanism::Im1 => mean(&s.betas()) / p_mean - 1.0,
    };
    if l.is_finite() && l > lambda_min {
        l
    } else {
        1.0_f64.max(lambda_min)
    }
}

fn check_initial(s: &Scenario, x0: &[f64], p0: &[f64]) -> Result<()> {
    s.check_dim(x0)?;
    s.check_dim(p0)?;
    if let Some(i) = x0.iter().position(|&v| !(v > 0.0)) {
        return Err(MechError::Domain(format!(
            "initial investments must be interior (x0_{} = {})",
            i + 1,
            x0[i]
        )));
    }
    Ok(())
}

fn step_change(a: &StepRecord, b: &StepRecord) -> f64 {
    let dx =
        a.x.iter()
            .zip(&b.x)
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max);
    dx.max((a.lambda - b.lambda).abs())
}

/// First `n` with `max(|x(n) - x(n-1)|_inf, |lambda(n) - lambda(n-1)|) < tol`.
pub fn detect_convergence(t: &Trajectory, tol: f64) -> Option<usize> {
    t.steps
        .windows(2)
        .position(|w| step_change(&w[0], &w[1]) < tol)
        .map(|k| t.steps[k + 1].n)
}

/// Runs a mechanism from `(x0, p0)` until the convergence predicate holds or
/// `max_iters` rounds have been played. The first player update responds to
/// `p0` as announced; the designer's rule sets the incentives from then on.
pub fn run_mechanism(
    s: &Scenario,
    cfg: &IterationConfig,
    mech: Mechanism,
    x0: &[f64],
    p0: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    check_initial(s, x0, p0)?;
    let lambda0 = cfg
        .lambda_init
        .unwrap_or_else(|| default_lambda_init(s, mech, p0, cfg.lambda_min));
    let mut steps = vec![StepRecord::new(s, 0, x0.to_vec(), p0.to_vec(), lambda0)?];
    let mut converged_at = None;
    for k in 0..cfg.max_iters {
        let order = if k == 0 {
            UpdateOrder::Simultaneous
        } else {
            cfg.order
        };
        let next = step_with_order(s, steps.last().unwrap(), cfg, mech, order)?;
        let done = step_change(steps.last().unwrap(), &next) < cfg.conv_tol;
        steps.push(next);
        if done {
            converged_at = Some(steps.len() - 1);
            break;
        }
    }
    finish(cfg, Some(mech), steps, converged_at)
}

/// Player dynamics under incentives held fixed at `p`: the no-mechanism
/// baseline. The multiplier column is recorded as zero.
pub fn run_fixed_incentives(
    s: &Scenario,
    cfg: &IterationConfig,
    x0: &[f64],
    p: &[f64],
) -> Result<Trajectory> {
    cfg.validate()?;
    check_initial(s, x0, p)?;
    let mut steps = vec![StepRecord::new(s, 0, x0.to_vec(), p.to_vec(), 0.0)?];
    let mut converged_at = None;
    for _ in 0..cfg.max_iters {
        let prev = steps.last().unwrap();
        let x = relaxed_responses(s, &prev.x, p, cfg.phi)?;
        let next = StepRecord::new(s, prev.n + 1, x, p.to_vec(), 0.0)?;
        let done = step_change(prev, &next) < cfg.conv_tol;
        steps.push(next);
        if done {
            converged_at = Some(steps.len() - 1);
            break;
        }
    }
    finish(cfg, None, steps, converged_at)
}

fn finish(
    cfg: &IterationConfig,
    mechanism: Option<Mechanism>,
    steps: Vec<StepRecord>,
    converged_at: Option<usize>,
) -> Result<Trajectory> {
    if converged_at.is_none() && cfg.fail_on_max_iters {
        let n = steps.len();
        let residual = if n >= 2 {
            step_change(&steps[n - 2], &steps[n - 1])
        } else {
            f64::NAN
        };
        return Err(MechError::Convergence {
            iterations: cfg.max_iters,
            residual,
        });
    }
    let scenario_id = match mechanism {
        Some(Mechanism::Im1) => "im1",
        Some(Mechanism::Im2) => "im2",
        None => "fixed-incentives",
    };
    Ok(Trajectory {
        scenario_id: scenario_id.to_string(),
        mechanism,
        config: cfg.clone(),
        steps,
        converged_at,
    })
}

/// First step after which every investment profile stays within
/// `frac * |target|_inf` of `target` (sup-norm).
pub fn steps_to_within(t: &Trajectory, target: &[f64], frac: f64) -> Option<usize> {
    let scale = target.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let within = |x: &[f64]| {
        x.iter()
            .zip(target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            <= frac * scale
    };
    let last_outside = t.steps.iter().rposition(|st| !within(&st.x));
    match last_outside {
        None => Some(t.steps[0].n),
        Some(k) if k + 1 < t.steps.len() => Some(t.steps[k + 1].n),
        Some(_) => None,
    }
}

/// Player `i`'s instantaneous costs at one step of an honest run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProbeStep {
    pub n: usize,
    /// Cost at the relaxed action actually played.
    pub cost_honest: f64,
    /// Cost at the relaxed action shifted by `delta`.
    pub cost_deviated: f64,
    /// Cost at the best-response target.
    pub target_honest: f64,
    /// Cost at the best-response target shifted by `delta`.
    pub target_deviated: f64,
}

/// Along an honest trajectory, compares player `i`'s instantaneous cost with
/// and without misrepresenting its action as `x_i + delta`, everything else
/// held at the recorded step. Both the played (relaxed) action and the
/// best-response target are evaluated.
pub fn cheat_probe(
    s: &Scenario,
    honest: &Trajectory,
    i: usize,
    delta: f64,
) -> Result<Vec<ProbeStep>> {
    if i >= s.n() {
        return Err(MechError::Dimension {
            expected: s.n(),
            got: i + 1,
        });
    }
    honest
        .steps
        .iter()
        .skip(1)
        .map(|rec| {
            let mut st = GameState::new(rec.x.clone(), rec.p.clone());
            let cost_at = |st: &mut GameState, v: f64| -> Result<f64> {
                if !(v > 0.0) {
                    return Err(MechError::Domain(format!(
                        "step {}: deviated investment x_{} = {v} leaves the domain",
                        rec.n,
                        i + 1
                    )));
                }
                st.x[i] = v;
                player_cost(s, st, i)
            };
            let played = rec.x[i];
            let target = best_response(s, &st, i)?;
            Ok(ProbeStep {
                n: rec.n,
                cost_honest: cost_at(&mut st, played)?,
                cost_deviated: cost_at(&mut st, played + delta)?,
                target_honest: cost_at(&mut st, target)?,
                target_deviated: cost_at(&mut st, target + delta)?,
            })
        })
        .collect()
}
