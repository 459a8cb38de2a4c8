//! The six trial metrics, their normalization and the safety audit.
//!
//! SI is 0 on arrival and 1 otherwise, so for every metric smaller is better
//! and the normalized value `(max − x)/(max − min)` maps best to 1.

use cadp_core::{Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::scenario::Scenario;
use crate::trace::TraceRow;
use crate::BenchError;

/// Slack allowed on the audited bounds for integration error.
pub const AUDIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricInputs {
    pub goal: [f64; 2],
    pub target: Vector<5>,
    pub q: Matrix<5, 5>,
    pub r_v: Matrix<2, 2>,
    pub d_tol: f64,
    pub t_final: f64,
    /// Drop control differences that land on a policy-update tick from CD.
    pub cd_skip_updates: bool,
}

impl MetricInputs {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            goal: s.goal,
            target: s.target(),
            q: s.weights.q_matrix(),
            r_v: s.weights.r_matrix(),
            d_tol: s.limits.d_tol,
            t_final: s.limits.t_final,
            cd_skip_updates: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct TrialMetrics {
    pub SI: f64,
    pub AT: f64,
    pub TC: f64,
    pub CM: f64,
    pub CD: f64,
    pub CI: f64,
}

impl TrialMetrics {
    pub const NAMES: [&'static str; 6] = ["SI", "AT", "TC", "CM", "CD", "CI"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.SI, self.AT, self.TC, self.CM, self.CD, self.CI]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            SI: a[0],
            AT: a[1],
            TC: a[2],
            CM: a[3],
            CD: a[4],
            CI: a[5],
        }
    }

    pub fn reached(&self) -> bool {
        self.SI == 0.0
    }
}

fn norm2(a: [f64; 2]) -> f64 {
    (a[0] * a[0] + a[1] * a[1]).sqrt()
}

/// Computes SI, AT, TC, CM, CD and CI from a trace.
///
/// Arrival means `‖q − q_d‖ ≤ d_tol` from some logged time through `T_f`; AT
/// is the first time of that final stay, or `T_f` when there is none. A trace
/// that ends before `T_f` never counts as arrived.
pub fn compute_metrics(rows: &[TraceRow], inputs: &MetricInputs) -> Result<TrialMetrics, BenchError> {
    let last = rows.last().ok_or(BenchError::EmptyLog)?;
    let complete = last.t >= inputs.t_final - 1e-9;

    let inside = |r: &TraceRow| norm2([r.qx - inputs.goal[0], r.qy - inputs.goal[1]]) <= inputs.d_tol;
    let stay_start = rows.iter().rposition(|r| !inside(r)).map_or(0, |i| i + 1);
    let (si, at) = if complete && stay_start < rows.len() {
        (0.0, rows[stay_start].t)
    } else {
        (1.0, inputs.t_final)
    };

    let integrand = |r: &TraceRow| {
        let e = Vector::<5>::from(r.state()) - inputs.target;
        let v = Vector::<2>::from(r.v());
        e.dot(&(inputs.q * e)) + v.dot(&(inputs.r_v * v))
    };
    let tc = rows
        .windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (integrand(&w[0]) + integrand(&w[1])))
        .sum();

    let cm = rows.iter().map(|r| norm2(r.v())).fold(0.0, f64::max);
    let cd = rows
        .windows(2)
        .filter(|w| !(inputs.cd_skip_updates && w[1].is_update()))
        .map(|w| norm2([w[1].v_r - w[0].v_r, w[1].v_l - w[0].v_l]) / (w[1].t - w[0].t))
        .fold(0.0, f64::max);
    let ci = rows
        .iter()
        .map(|r| norm2([r.v_r - r.vd_r, r.v_l - r.vd_l]))
        .fold(0.0, f64::max);

    Ok(TrialMetrics {
        SI: si,
        AT: at,
        TC: tc,
        CM: cm,
        CD: cd,
        CI: ci,
    })
}

/// Min-max normalization per metric over the whole pool; 1 is best, 0 worst.
/// A column whose values are all equal normalizes to 1.
pub fn normalize_metrics(all: &[TrialMetrics]) -> Vec<TrialMetrics> {
    let columns: Vec<[f64; 6]> = all.iter().map(TrialMetrics::to_array).collect();
    let mut lo = [f64::INFINITY; 6];
    let mut hi = [f64::NEG_INFINITY; 6];
    for c in &columns {
        for j in 0..6 {
            lo[j] = lo[j].min(c[j]);
            hi[j] = hi[j].max(c[j]);
        }
    }
    columns
        .iter()
        .map(|c| {
            let mut n = [1.0; 6];
            for j in 0..6 {
                if hi[j] > lo[j] {
                    n[j] = (hi[j] - c[j]) / (hi[j] - lo[j]);
                }
            }
            TrialMetrics::from_array(n)
        })
        .collect()
}

/// Extremes of the safety-relevant signals over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyAudit {
    pub min_psi0: f64,
    pub max_abs_s: f64,
    pub max_abs_omega: f64,
    pub min_constraint: f64,
}

impl SafetyAudit {
    pub fn of(rows: &[TraceRow]) -> Self {
        rows.iter().fold(
            SafetyAudit {
                min_psi0: f64::INFINITY,
                max_abs_s: 0.0,
                max_abs_omega: 0.0,
                min_constraint: f64::INFINITY,
            },
            |a, r| SafetyAudit {
                min_psi0: a.min_psi0.min(r.psi0),
                max_abs_s: a.max_abs_s.max(r.s.abs()),
                max_abs_omega: a.max_abs_omega.max(r.omega.abs()),
                min_constraint: a.min_constraint.min(r.constraint),
            },
        )
    }

    /// Human-readable violations of `ψ₀ ≥ 0`, `|s| ≤ s̄`, `|ω| ≤ ω̄`.
    pub fn violations(&self, s_bar: f64, omega_bar: f64) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.min_psi0 >= -AUDIT_TOLERANCE) {
            out.push(format!("min psi0 = {:e}", self.min_psi0));
        }
        if !(self.max_abs_s <= s_bar + AUDIT_TOLERANCE) {
            out.push(format!("max |s| = {}", self.max_abs_s));
        }
        if !(self.max_abs_omega <= omega_bar + AUDIT_TOLERANCE) {
            out.push(format!("max |omega| = {}", self.max_abs_omega));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, qx: f64, v: f64, update: bool) -> TraceRow {
        TraceRow {
            t,
            qx,
            qy: 0.0,
            gamma: 0.0,
            s: 0.0,
            omega: 0.0,
            v_r: v,
            v_l: v,
            delta: 0.0,
            psi0: 1.0,
            solve_ms: update.then_some(1.0),
            vd_r: 0.0,
            vd_l: 0.0,
            constraint: 1.0,
            update: update as u8,
        }
    }

    fn inputs() -> MetricInputs {
        MetricInputs {
            goal: [0.0, 0.0],
            target: Vector::<5>::zeros(),
            q: Matrix::<5, 5>::identity(),
            r_v: Matrix::<2, 2>::identity(),
            d_tol: 0.25,
            t_final: 1.0,
            cd_skip_updates: true,
        }
    }

    #[test]
    fn arrival_is_the_start_of_the_final_stay() {
        let rows: Vec<_> = [0.0, 0.1, 0.5, 0.1, 0.0]
            .iter()
            .enumerate()
            .map(|(i, q)| row(i as f64 * 0.25, *q, 0.0, false))
            .collect();
        let m = compute_metrics(&rows, &inputs()).unwrap();
        assert_eq!((m.SI, m.AT), (0.0, 0.75));
    }

    #[test]
    fn update_ticks_are_left_out_of_cd() {
        let rows = vec![row(0.0, 0.0, 0.0, true), row(0.5, 0.0, 1.0, true), row(1.0, 0.0, 1.5, false)];
        let m = compute_metrics(&rows, &inputs()).unwrap();
        assert!((m.CD - 0.5f64.hypot(0.5) / 0.5).abs() < 1e-15);
        let all = compute_metrics(&rows, &MetricInputs { cd_skip_updates: false, ..inputs() }).unwrap();
        assert!((all.CD - 2f64.sqrt() / 0.5).abs() < 1e-15);
    }
}
