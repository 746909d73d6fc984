#![allow(dead_code)]

use incentive_mech::model::{DesignerObjective, InfluenceMatrix, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALPHA: [f64; 6] = [0.9, 0.7, 0.6, 0.8, 0.2, 0.4];
pub const GAMMA: [f64; 6] = [0.8, 0.4, 0.5, 0.2, 0.3, 0.1];
pub const BETA: f64 = 3.0;
pub const BUDGET: f64 = 3.0;

pub fn use_case_global() -> Scenario {
    Scenario::separable_log(
        &ALPHA,
        &[BETA; 6],
        DesignerObjective::LinearGlobal {
            gamma: GAMMA.to_vec(),
        },
        BUDGET,
    )
}

pub fn use_case_welfare() -> Scenario {
    Scenario::separable_log(&ALPHA, &[BETA; 6], DesignerObjective::Welfare, BUDGET)
}

pub fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max)
}

/// Separable Log, linear objective: the budget equation
/// `sum_i gamma_i (alpha_i / (beta_i lambda - gamma_i)) = B` solved by plain
/// bisection in `lambda`, then `x_i = alpha_i / (beta_i - gamma_i / lambda)`.
pub fn m2_closed_form(alpha: &[f64], beta: &[f64], gamma: &[f64], budget: f64) -> (f64, Vec<f64>) {
    let spend = |l: f64| -> f64 {
        (0..alpha.len())
            .map(|i| gamma[i] / l * alpha[i] / (beta[i] - gamma[i] / l))
            .sum()
    };
    let mut lo = (0..alpha.len())
        .map(|i| gamma[i] / beta[i])
        .fold(0.0, f64::max)
        * (1.0 + 1e-12);
    let mut hi = 1e6;
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if spend(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let l = 0.5 * (lo + hi);
    let x = (0..alpha.len())
        .map(|i| alpha[i] / (beta[i] - gamma[i] / l))
        .collect();
    (l, x)
}

/// Two-player Log game with influence `[[1, w12], [w21, 1]]` at zero
/// incentives.
#[derive(Clone, Copy, Debug)]
pub struct PairGame {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub w12: f64,
    pub w21: f64,
}

impl PairGame {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        PairGame {
            alpha: [rng.gen_range(0.8..1.5), rng.gen_range(0.8..1.5)],
            beta: [rng.gen_range(1.0..2.0), rng.gen_range(1.0..2.0)],
            w12: rng.gen_range(0.0..0.2),
            w21: rng.gen_range(0.0..0.2),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::separable_log(
            &self.alpha,
            &self.beta,
            DesignerObjective::LinearGlobal {
                gamma: vec![1.0, 1.0],
            },
            1.0,
        )
        .with_influence(InfluenceMatrix::pair(self.w12, self.w21))
    }

    fn cost(&self, i: usize, own: f64, other: f64) -> f64 {
        let w = if i == 0 { self.w12 } else { self.w21 };
        self.beta[i] * own - self.alpha[i] * (own + w * other).ln()
    }

    /// Grid-search equilibrium on `{0.01, 0.011, ..., 2}`: alternate exact
    /// grid best responses until neither player moves.
    pub fn grid_ne(&self) -> [f64; 2] {
        let grid: Vec<f64> = (0..=1990).map(|k| 0.01 + k as f64 * 1e-3).collect();
        let argmin = |i: usize, other: f64| -> f64 {
            *grid
                .iter()
                .min_by(|a, b| {
                    self.cost(i, **a, other)
                        .total_cmp(&self.cost(i, **b, other))
                })
                .unwrap()
        };
        let mut x = [1.0, 1.0];
        for _ in 0..200 {
            let x0 = argmin(0, x[1]);
            let x1 = argmin(1, x0);
            if x0 == x[0] && x1 == x[1] {
                break;
            }
            x = [x0, x1];
        }
        x
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_incentive-mech")
}
