//! Scenario files: obstacle map, goal, start states and tuning.

use std::fs;
use std::path::Path;

use cadp_core::cbf::Barrier;
use cadp_core::horizon::{ConstantCost, HorizonConfig};
use cadp_core::robot::{assemble_safe_set, Circle, ObstacleMap, RobotChain, RobotParams, RobotSafeSet, ScenarioLimits};
use cadp_core::sim::SafetyMonitor;
use cadp_core::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::BenchError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub c: [f64; 2],
    pub r: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsSpec {
    pub s_bar: f64,
    pub omega_bar: f64,
    pub zeta: f64,
    pub rho: f64,
    pub d_tol: f64,
    pub t_final: f64,
    pub alpha: f64,
}

impl Default for LimitsSpec {
    fn default() -> Self {
        let d = ScenarioLimits::default();
        Self {
            s_bar: d.s_bar,
            omega_bar: d.omega_bar,
            zeta: d.zeta,
            rho: d.rho,
            d_tol: d.d_tol,
            t_final: d.t_final,
            alpha: d.alpha,
        }
    }
}

/// Running-cost weights. The target state is `[goal, 0, 0, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSpec {
    /// Diagonal of `Q`.
    pub q: [f64; 5],
    /// Diagonal of `R_v`.
    pub r_v: [f64; 2],
    pub r_delta: f64,
}

impl Default for WeightsSpec {
    fn default() -> Self {
        Self {
            q: [1.0, 1.0, 0.0, 16.0, 160.0],
            r_v: [80.0, 80.0],
            r_delta: 0.2e10,
        }
    }
}

impl WeightsSpec {
    pub fn q_matrix(&self) -> Matrix<5, 5> {
        Matrix::<5, 5>::from_diagonal(&Vector::<5>::from(self.q))
    }

    pub fn r_matrix(&self) -> Matrix<2, 2> {
        Matrix::<2, 2>::from_diagonal(&Vector::<2>::from(self.r_v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonSpec {
    pub horizon: f64,
    pub planning_step: f64,
    pub update_period: f64,
    pub eta: f64,
    pub riemann_scaling: bool,
    /// Richardson refinement of the policy Jacobians.
    pub richardson: bool,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self {
            horizon: 20.0,
            planning_step: 0.05,
            update_period: 0.05,
            eta: 1.0,
            riemann_scaling: false,
            richardson: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSpec {
    pub zoh_rate: f64,
    pub substeps: usize,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            zoh_rate: 100.0,
            substeps: 5,
        }
    }
}

/// Extra starts drawn uniformly from `region = [x_min, y_min, x_max, y_max]`
/// at rest with uniform heading, rejected until every chain value is positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomStarts {
    pub count: usize,
    pub region: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub obstacles: Vec<ObstacleSpec>,
    pub goal: [f64; 2],
    #[serde(default)]
    pub starts: Vec<[f64; 5]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_starts: Option<RandomStarts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[f64; 4]>,
    #[serde(default)]
    pub limits: LimitsSpec,
    #[serde(default)]
    pub weights: WeightsSpec,
    #[serde(default)]
    pub horizon: HorizonSpec,
    #[serde(default)]
    pub sim: SimSpec,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut scenario: Scenario = serde_json::from_str(&text).map_err(|e| BenchError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if scenario.name.is_empty() {
            scenario.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        scenario.world()?;
        Ok(scenario)
    }

    pub fn map(&self) -> Result<ObstacleMap, BenchError> {
        let circles = self
            .obstacles
            .iter()
            .map(|o| Circle {
                center: Vector::<2>::from(o.c),
                radius: o.r,
            })
            .collect();
        Ok(ObstacleMap::new(circles, self.bounds)?)
    }

    pub fn limits(&self) -> ScenarioLimits {
        let l = &self.limits;
        ScenarioLimits {
            s_bar: l.s_bar,
            omega_bar: l.omega_bar,
            zeta: l.zeta,
            rho: l.rho,
            goal: Vector::<2>::from(self.goal),
            d_tol: l.d_tol,
            t_final: l.t_final,
            alpha: l.alpha,
        }
    }

    pub fn horizon_config(&self) -> HorizonConfig {
        let h = &self.horizon;
        HorizonConfig {
            horizon: h.horizon,
            planning_step: h.planning_step,
            update_period: h.update_period,
            eta: h.eta,
            slack_weight: self.weights.r_delta,
            riemann_scaling: h.riemann_scaling,
        }
    }

    pub fn target(&self) -> Vector<5> {
        Vector::<5>::new(self.goal[0], self.goal[1], 0.0, 0.0, 0.0)
    }

    pub fn running_cost(&self) -> ConstantCost<5, 2> {
        ConstantCost::tracking(self.weights.q_matrix(), &self.target(), self.weights.r_matrix())
    }

    /// `ψ₀` and its degree-one chain for this map.
    pub fn world(&self) -> Result<(Arc<RobotSafeSet>, RobotChain), BenchError> {
        Ok(assemble_safe_set(&self.map()?, &self.limits(), &RobotParams::default())?)
    }

    /// Listed starts followed by `random_starts` drawn from `seed`.
    pub fn all_starts(&self, seed: u64) -> Result<Vec<[f64; 5]>, BenchError> {
        let (_, chain) = self.world()?;
        let mut starts = self.starts.clone();
        for (i, s) in starts.iter().enumerate() {
            if !is_safe_start(&chain, s)? {
                return Err(BenchError::UnsafeStart(i));
            }
        }
        if let Some(random) = self.random_starts {
            let [x0, y0, x1, y1] = random.region;
            if !(x1 > x0 && y1 > y0) {
                return Err(BenchError::Config("random start region is empty".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut attempts = 0usize;
            while starts.len() < self.starts.len() + random.count {
                attempts += 1;
                if attempts > 100_000 {
                    return Err(BenchError::Config("could not sample safe random starts".into()));
                }
                let s = [
                    rng.random_range(x0..x1),
                    rng.random_range(y0..y1),
                    rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
                    0.0,
                    0.0,
                ];
                let goal_gap = ((s[0] - self.goal[0]).powi(2) + (s[1] - self.goal[1]).powi(2)).sqrt();
                if goal_gap > self.limits.d_tol && is_safe_start(&chain, &s)? {
                    starts.push(s);
                }
            }
        }
        Ok(starts)
    }
}

fn is_safe_start(chain: &RobotChain, s: &[f64; 5]) -> Result<bool, BenchError> {
    let x = Vector::<5>::from(*s);
    let values = chain.chain_values(&x)?;
    Ok(values.iter().all(|v| *v > 0.0) && chain.level(0).value(&x) > 0.0)
}
