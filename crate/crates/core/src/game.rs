//! The investment game: player costs, best responses, Nash equilibria and the
//! diagonal-strict-concavity check for equilibrium uniqueness.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MechError, Result};
use crate::model::{Scenario, X_MIN};
use crate::report::{Check, DiagnosticsReport, Verdict};

/// Investments and incentive factors of all players.
#[derive(Clone, Debug, PartialEq)]
pub struct GameState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

impl GameState {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Self {
        GameState { x, p }
    }

    fn check(&self, s: &Scenario) -> Result<()> {
        s.check_dim(&self.x)?;
        s.check_dim(&self.p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeSolveConfig {
    pub max_iters: usize,
    /// Sup-norm tolerance on the best-response residual.
    pub tol: f64,
    /// Weight of the new best response in each damped update.
    pub damping: f64,
}

impl Default for NeSolveConfig {
    fn default() -> Self {
        NeSolveConfig {
            max_iters: 10_000,
            tol: 1e-10,
            damping: 0.5,
        }
    }
}

impl NeSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(MechError::InvalidConfig(format!(
                "tol must be > 0 (got {})",
                self.tol
            )));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(MechError::InvalidConfig(format!(
                "damping must lie in (0, 1) (got {})",
                self.damping
            )));
        }
        Ok(())
    }
}

/// `J_i = beta_i x_i - U_i((Wx)_i) - p_i x_i`.
pub fn player_cost(s: &Scenario, state: &GameState, i: usize) -> Result<f64> {
    state.check(s)?;
    let player = &s.players[i];
    let xe = s.influence.effective_at(&state.x, i);
    let u = player.utility.value(xe)?;
    Ok(player.cost_factor * state.x[i] - u - state.p[i] * state.x[i])
}

/// Costs of every player at `state`.
pub fn player_costs(s: &Scenario, state: &GameState) -> Result<Vec<f64>> {
    (0..s.n()).map(|i| player_cost(s, state, i)).collect()
}

/// Cost-minimizing investment of player `i` given the others' investments.
///
/// The first-order condition fixes the effective investment at the inverse
/// marginal of `beta_i - p_i`; the player supplies whatever the spillover from
/// the others does not, clamped at [`X_MIN`].
pub fn best_response(s: &Scenario, state: &GameState, i: usize) -> Result<f64> {
    state.check(s)?;
    let player = &s.players[i];
    let net = player.cost_factor - state.p[i];
    if !(net > 0.0) {
        return Err(MechError::MarginalRange {
            marginal: net,
            detail: format!(
                "player {}: incentive p = {} at or above cost beta = {}",
                i + 1,
                state.p[i],
                player.cost_factor
            ),
        });
    }
    let target = player.utility.demand(net)?;
    Ok((target - s.influence.spillover(&state.x, i)).max(X_MIN))
}

fn best_responses(s: &Scenario, x: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let state = GameState::new(x.to_vec(), p.to_vec());
    (0..s.n()).map(|i| best_response(s, &state, i)).collect()
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Nash equilibrium of the game at incentives `p`, by damped simultaneous
/// best-response iteration. Separable games are solved in one pass.
pub fn solve_ne(s: &Scenario, p: &[f64], cfg: &NeSolveConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    s.check_dim(p)?;
    let n = s.n();
    let mut x = vec![X_MIN; n];
    let first = best_responses(s, &x, p)?;
    if s.influence.is_identity() {
        return Ok(first);
    }
    x = first;

    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let br = best_responses(s, &x, p)?;
        residual = sup_dist(&br, &x);
        if residual < cfg.tol {
            // Interior first-order conditions must hold too, not only the
            // fixed-point residual.
            let g = pseudo_gradient(s, &GameState::new(br.clone(), p.to_vec()))?;
            let interior_grad = (0..n)
                .filter(|&i| br[i] > X_MIN)
                .map(|i| g[i].abs())
                .fold(0.0, f64::max);
            if interior_grad < cfg.tol {
                return Ok(br);
            }
        }
        for (xi, bi) in x.iter_mut().zip(&br) {
            *xi = (1.0 - cfg.damping) * *xi + cfg.damping * bi;
        }
    }
    Err(MechError::Convergence {
        iterations: cfg.max_iters,
        residual,
    })
}

/// `g_i = dJ_i/dx_i = beta_i - p_i - U_i'((Wx)_i)`.
pub fn pseudo_gradient(s: &Scenario, state: &GameState) -> Result<Vec<f64>> {
    state.check(s)?;
    (0..s.n())
        .map(|i| {
            let player = &s.players[i];
            let xe = s.influence.effective_at(&state.x, i);
            Ok(player.cost_factor - state.p[i] - player.utility.marginal(xe)?)
        })
        .collect()
}

/// Jacobian `G(x)` of the pseudo-gradient: analytic for all-Log scenarios,
/// central finite differences otherwise.
pub fn jacobian(s: &Scenario, state: &GameState) -> Result<DMatrix<f64>> {
    if s.all_log() {
        jacobian_analytic(s, state)
    } else {
        jacobian_fd(s, state)
    }
}

/// `G_ij = -U_i''((Wx)_i) W_ij`.
pub fn jacobian_analytic(s: &Scenario, state: &GameState) -> Result<DMatrix<f64>> {
    state.check(s)?;
    let n = s.n();
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        let xe = s.influence.effective_at(&state.x, i);
        let c = -s.players[i].utility.curvature(xe)?;
        for j in 0..n {
            g[(i, j)] = c * s.influence.get(i, j);
        }
    }
    Ok(g)
}

const FD_STEP: f64 = 1e-6;

pub fn jacobian_fd(s: &Scenario, state: &GameState) -> Result<DMatrix<f64>> {
    state.check(s)?;
    let n = s.n();
    let mut g = DMatrix::zeros(n, n);
    let mut probe = state.clone();
    for j in 0..n {
        let xj = state.x[j];
        probe.x[j] = xj + FD_STEP;
        let plus = pseudo_gradient(s, &probe)?;
        probe.x[j] = xj - FD_STEP;
        let minus = pseudo_gradient(s, &probe)?;
        probe.x[j] = xj;
        for i in 0..n {
            g[(i, j)] = (plus[i] - minus[i]) / (2.0 * FD_STEP);
        }
    }
    Ok(g)
}

/// Box `[0, x_max]^N` standing in for the strategy set:
/// `x_max = 10 * max_i inverse_marginal(u_i, 0.01 beta_i)`, capped by the
/// utility's domain.
pub fn strategy_box_upper(s: &Scenario) -> f64 {
    s.players
        .iter()
        .map(|p| {
            let far = p
                .utility
                .demand(0.01 * p.cost_factor)
                .map(|v| 10.0 * v)
                .unwrap_or(f64::INFINITY);
            let far = if far > 0.0 { far } else { f64::INFINITY };
            far.min(p.utility.domain_upper())
        })
        .fold(0.0, f64::max)
}

/// Latin-hypercube sample of `k` interior investment profiles in the strategy
/// box; deterministic for a given seed.
pub fn default_samples(s: &Scenario, k: usize, seed: u64) -> Vec<GameState> {
    let n = s.n();
    let upper = strategy_box_upper(s);
    let lower = 1e-3 * upper;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut strata: Vec<f64> = (0..k)
                .map(|m| {
                    let u = (m as f64 + rng.gen::<f64>()) / k as f64;
                    lower + u * (upper - lower)
                })
                .collect();
            strata.shuffle(&mut rng);
            strata
        })
        .collect();
    (0..k)
        .map(|m| GameState::new(columns.iter_mut().map(|c| c[m]).collect(), vec![0.0; n]))
        .collect()
}

const PSD_TOL: f64 = 1e-10;

/// Checks positive definiteness of `G(x) + G(x)^T` at every sample. A pass is
/// sampled evidence of a unique equilibrium, not a proof.
pub fn check_uniqueness(s: &Scenario, samples: &[GameState]) -> Result<DiagnosticsReport> {
    let mut report = DiagnosticsReport::new();
    // (sample index, min eigenvalue, min eigenvalue relative to matrix scale)
    let mut worst: Option<(usize, f64, f64)> = None;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;

    for (k, sample) in samples.iter().enumerate() {
        let g = match jacobian(s, sample) {
            Ok(g) => g,
            Err(MechError::Domain(_)) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let sym = &g + g.transpose();
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(MechError::Numerical(format!(
                "non-finite G + G^T at sample {k}"
            )));
        }
        let scale = sym.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        let min = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if !min.is_finite() {
            return Err(MechError::Numerical(format!(
                "eigensolve failed at sample {k}"
            )));
        }
        evaluated += 1;
        let rel = min / scale;
        if worst.map_or(true, |(_, _, w)| rel < w) {
            worst = Some((k, min, rel));
        }
    }

    let check = match worst {
        None => Check::new(
            "diagonal_strict_concavity",
            Verdict::Inconclusive,
            "no sample inside the utility domains",
        ),
        Some((_, min, rel)) if rel > PSD_TOL => Check::pass(
            "diagonal_strict_concavity",
            format!("G + G^T positive definite at all {evaluated} samples (sampled evidence, not proof)"),
        )
        .with_value(min),
        Some((k, min, rel)) if rel >= -PSD_TOL => Check::new(
            "diagonal_strict_concavity",
            Verdict::Inconclusive,
            format!("inconclusive (PSD, not PD) at sample {k}: min eigenvalue {min:e}"),
        )
        .with_value(min),
        Some((k, min, _)) => Check::fail(
            "diagonal_strict_concavity",
            format!("indefinite at sample {k}: min eigenvalue {min:e}"),
        )
        .with_value(min),
    };
    report.push(check);
    if skipped > 0 {
        report.push(Check::new(
            "uniqueness_samples",
            Verdict::Inconclusive,
            format!(
                "{skipped} of {} samples outside the utility domains were skipped",
                samples.len()
            ),
        ));
    }
    Ok(report)
}

/// Smallest eigenvalue of `G(x) + G(x)^T`.
pub fn min_eigenvalue_at(s: &Scenario, state: &GameState) -> Result<f64> {
    let g = jacobian(s, state)?;
    let eig = SymmetricEigen::new(&g + g.transpose());
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}
