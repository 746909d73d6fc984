//! Continuous-time versions of the iterative mechanisms for Log utilities,
//! their Lyapunov functions and a fixed-step RK4 integrator.
//!
//! The multiplier moves with the budget violation `sum_i p_i x_i - B`, the
//! exact continuous counterpart of the discrete update, and players follow
//! their cost gradients:
//!
//! ```text
//! IM2: dlambda/dt = k_l (sum_i gamma_i x_i - lambda B) / lambda
//!      dx_i/dt    = k_i (alpha_i / (Wx)_i + gamma_i / lambda - beta_i)
//! IM1: dlambda/dt = k_l (sum_i beta_i x_i - (1 + lambda) B) / (1 + lambda)
//!      dx_i/dt    = k_i (alpha_i / x_i + beta_i / (1 + lambda) - beta_i)
//! ```
//!
//! The equilibria coincide with the direct mechanisms' solutions.

use serde::{Deserialize, Serialize};

use crate::direct_mech::{solve_m1, solve_m2};
use crate::error::{MechError, Result};
use crate::iter_mech::Mechanism;
use crate::model::{DesignerObjective, Scenario, X_MIN};

/// Multiplier floor below which an integration aborts.
pub const LAMBDA_MIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OdeState {
    pub x: Vec<f64>,
    pub lambda: f64,
}

impl OdeState {
    pub fn new(x: Vec<f64>, lambda: f64) -> Self {
        OdeState { x, lambda }
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.push(self.lambda);
        v
    }

    fn from_flat(v: &[f64]) -> Self {
        let (x, l) = v.split_at(v.len() - 1);
        OdeState::new(x.to_vec(), l[0])
    }

    fn is_interior(&self) -> bool {
        self.lambda > LAMBDA_MIN && self.x.iter().all(|&v| v > X_MIN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub kappa_lambda: f64,
    /// Per-player gains; `None` means all ones.
    pub kappa_x: Option<Vec<f64>>,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        OdeConfig {
            kappa_lambda: 1.0,
            kappa_x: None,
            dt: 1e-3,
            t_end: 50.0,
            record_every: 100,
        }
    }
}

impl OdeConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(MechError::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be > 0 (got {})", self.dt));
        }
        if !(self.t_end >= 0.0) {
            return bad(format!("t_end must be >= 0 (got {})", self.t_end));
        }
        if self.record_every == 0 {
            return bad("record_every must be >= 1".into());
        }
        if !(self.kappa_lambda > 0.0) {
            return bad(format!(
                "kappa_lambda must be > 0 (got {})",
                self.kappa_lambda
            ));
        }
        if let Some(k) = &self.kappa_x {
            if k.len() != n {
                return Err(MechError::Dimension {
                    expected: n,
                    got: k.len(),
                });
            }
            if k.iter().any(|&v| !(v > 0.0)) {
                return bad("kappa_x entries must be > 0".into());
            }
        }
        Ok(())
    }

    fn kappa(&self, i: usize) -> f64 {
        self.kappa_x.as_ref().map_or(1.0, |k| k[i])
    }
}

/// Model data the flows need, extracted once.
struct LogModel<'a> {
    s: &'a Scenario,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Option<&'a [f64]>,
}

impl<'a> LogModel<'a> {
    fn new(s: &'a Scenario, mech: Mechanism) -> Result<Self> {
        let alpha = s.log_alphas().ok_or_else(|| {
            MechError::UnsupportedModel("continuous-time analysis needs Log utilities".into())
        })?;
        let gamma = match (mech, &s.objective) {
            (Mechanism::Im2, DesignerObjective::LinearGlobal { gamma }) => {
                s.check_dim(gamma)?;
                Some(gamma.as_slice())
            }
            (Mechanism::Im1, DesignerObjective::Welfare) => {
                if !s.influence.is_identity() {
                    return Err(MechError::UnsupportedModel(
                        "continuous-time IM1 needs W = identity".into(),
                    ));
                }
                None
            }
            (Mechanism::Im2, _) => {
                return Err(MechError::UnsupportedModel(
                    "continuous-time IM2 needs a linear_global objective".into(),
                ))
            }
            (Mechanism::Im1, _) => {
                return Err(MechError::UnsupportedModel(
                    "continuous-time IM1 needs a welfare objective".into(),
                ))
            }
        };
        Ok(LogModel {
            s,
            alpha,
            beta: s.betas(),
            gamma,
        })
    }

    /// Incentive of player `i` and the scale dividing the budget violation.
    fn price(&self, i: usize, lambda: f64) -> f64 {
        match self.gamma {
            Some(g) => g[i] / lambda,
            None => self.beta[i] / (1.0 + lambda),
        }
    }

    fn denom(&self, lambda: f64) -> f64 {
        match self.gamma {
            Some(_) => lambda,
            None => 1.0 + lambda,
        }
    }

    /// `sum_i p_i x_i - B`.
    fn budget_violation(&self, st: &OdeState) -> f64 {
        let spend: f64 =
            st.x.iter()
                .enumerate()
                .map(|(i, x)| self.price(i, st.lambda) * x)
                .sum();
        spend - self.s.budget
    }

    /// `alpha_i / (Wx)_i + p_i - beta_i = -dJ_i/dx_i`.
    fn player_residual(&self, st: &OdeState, i: usize) -> f64 {
        let xe = self.s.influence.effective_at(&st.x, i);
        self.alpha[i] / xe + self.price(i, st.lambda) - self.beta[i]
    }

    fn rhs(&self, st: &OdeState, cfg: &OdeConfig) -> OdeState {
        // (sum_i w_i x_i - d B) / d with d = lambda or 1 + lambda.
        let l_dot = cfg.kappa_lambda * self.budget_violation(st);
        let x_dot = (0..st.x.len())
            .map(|i| cfg.kappa(i) * self.player_residual(st, i))
            .collect();
        OdeState::new(x_dot, l_dot)
    }

    fn lyapunov(&self, st: &OdeState) -> f64 {
        let v = self.budget_violation(st);
        let r: f64 = (0..st.x.len())
            .map(|i| self.player_residual(st, i).powi(2))
            .sum();
        0.5 * v * v + 0.5 * r
    }

    fn check(&self, st: &OdeState) -> Result<()> {
        self.s.check_dim(&st.x)?;
        if st.is_interior() && self.denom(st.lambda) > 0.0 {
            Ok(())
        } else {
            Err(MechError::Domain(format!(
                "state must be interior (x > {X_MIN}, lambda > {LAMBDA_MIN})"
            )))
        }
    }
}

fn rhs_checked(s: &Scenario, mech: Mechanism, st: &OdeState, cfg: &OdeConfig) -> Result<OdeState> {
    let m = LogModel::new(s, mech)?;
    m.check(st)?;
    cfg.validate(s.n())?;
    Ok(m.rhs(st, cfg))
}

/// Continuous-time IM2 flow (global linear objective).
pub fn ode_rhs_im2(s: &Scenario, st: &OdeState, cfg: &OdeConfig) -> Result<OdeState> {
    rhs_checked(s, Mechanism::Im2, st, cfg)
}

/// Continuous-time IM1 flow (welfare objective, `W = I`).
pub fn ode_rhs_im1(s: &Scenario, st: &OdeState, cfg: &OdeConfig) -> Result<OdeState> {
    rhs_checked(s, Mechanism::Im1, st, cfg)
}

pub fn ode_rhs(s: &Scenario, mech: Mechanism, st: &OdeState, cfg: &OdeConfig) -> Result<OdeState> {
    rhs_checked(s, mech, st, cfg)
}

fn lyapunov_checked(s: &Scenario, mech: Mechanism, st: &OdeState) -> Result<f64> {
    let m = LogModel::new(s, mech)?;
    m.check(st)?;
    Ok(m.lyapunov(st))
}

/// `1/2 (sum_i p_i x_i - B)^2 + 1/2 sum_i (alpha_i/x_i + p_i - beta_i)^2` with
/// `p_i = gamma_i / lambda`.
pub fn lyapunov_im2(s: &Scenario, st: &OdeState) -> Result<f64> {
    lyapunov_checked(s, Mechanism::Im2, st)
}

/// As [`lyapunov_im2`] with `p_i = beta_i / (1 + lambda)`.
pub fn lyapunov_im1(s: &Scenario, st: &OdeState) -> Result<f64> {
    lyapunov_checked(s, Mechanism::Im1, st)
}

pub fn lyapunov(s: &Scenario, mech: Mechanism, st: &OdeState) -> Result<f64> {
    lyapunov_checked(s, mech, st)
}

/// Rest point of the flow: the matching direct mechanism's solution.
pub fn equilibrium(s: &Scenario, mech: Mechanism) -> Result<OdeState> {
    LogModel::new(s, mech)?;
    let sol = match mech {
        Mechanism::Im2 => solve_m2(s, 1e-13)?,
        Mechanism::Im1 => solve_m1(s, 1e-13)?,
    };
    Ok(OdeState::new(sol.x, sol.lambda))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OdeSample {
    pub t: f64,
    pub state: OdeState,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OdeTrajectory {
    pub mechanism: Option<Mechanism>,
    pub samples: Vec<OdeSample>,
}

fn rk4_step(f: &dyn Fn(&[f64]) -> Vec<f64>, y: &[f64], h: f64) -> Vec<f64> {
    let axpy = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        a.iter().zip(k).map(|(u, v)| u + c * v).collect()
    };
    let k1 = f(y);
    let k2 = f(&axpy(y, &k1, 0.5 * h));
    let k3 = f(&axpy(y, &k2, 0.5 * h));
    let k4 = f(&axpy(y, &k3, h));
    (0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// Classical fixed-step RK4 from `init` to `t_end`, sampled every
/// `record_every` steps and at the final time.
pub fn integrate(
    s: &Scenario,
    mech: Mechanism,
    init: &OdeState,
    cfg: &OdeConfig,
) -> Result<OdeTrajectory> {
    let m = LogModel::new(s, mech)?;
    cfg.validate(s.n())?;
    m.check(init)?;

    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let f = |y: &[f64]| m.rhs(&OdeState::from_flat(y), cfg).to_flat();
    let mut y = init.to_flat();
    let mut samples = vec![OdeSample {
        t: 0.0,
        state: init.clone(),
    }];
    for k in 1..=steps {
        y = rk4_step(&f, &y, cfg.dt);
        let t = k as f64 * cfg.dt;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MechError::Numerical(format!("non-finite state at t = {t}")));
        }
        let st = OdeState::from_flat(&y);
        if !st.is_interior() {
            return Err(MechError::Integration {
                t,
                detail: format!("x_min = {X_MIN}, lambda_min = {LAMBDA_MIN}"),
            });
        }
        if k % cfg.record_every == 0 || k == steps {
            samples.push(OdeSample { t, state: st });
        }
    }
    Ok(OdeTrajectory {
        mechanism: Some(mech),
        samples,
    })
}

/// Least-squares fit of `|x(t) - x*| <= alpha |x(0) - x*| e^{-beta t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExponentialFit {
    pub alpha: f64,
    pub beta: f64,
    pub r2: f64,
}

const FIT_FLOOR: f64 = 1e-8;
const FIT_MIN_SAMPLES: usize = 10;

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Fits `ln |x(t) - x*|` linearly in `t` over the samples whose distance lies
/// in `[1e-8, d0 / 2]`.
pub fn fit_exponential_rate(traj: &OdeTrajectory, target: &OdeState) -> Result<ExponentialFit> {
    let first = traj.samples.first().ok_or(MechError::InsufficientData {
        usable: 0,
        needed: FIT_MIN_SAMPLES,
    })?;
    let last = traj.samples.last().unwrap();
    let d0 = euclid(&first.state.x, &target.x);
    let d_end = euclid(&last.state.x, &target.x);
    if !(d_end < d0) {
        return Err(MechError::Precondition(format!(
            "trajectory does not approach the target (initial distance {d0:e}, terminal {d_end:e})"
        )));
    }
    let pts: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter_map(|smp| {
            let d = euclid(&smp.state.x, &target.x);
            (d >= FIT_FLOOR && d <= 0.5 * d0).then(|| (smp.t, d.ln()))
        })
        .collect();
    if pts.len() < FIT_MIN_SAMPLES {
        return Err(MechError::InsufficientData {
            usable: pts.len(),
            needed: FIT_MIN_SAMPLES,
        });
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let y_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * t_mean;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - y_mean).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    Ok(ExponentialFit {
        alpha: intercept.exp() / d0,
        beta: -slope,
        r2: if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        },
    })
}
