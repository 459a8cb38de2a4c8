//! Differential-drive ground robot with circular obstacles and speed limits.
//!
//! State `x = [q_x, q_y, γ, s, ω]`: position of a point `l_d` ahead of the
//! axle, heading, forward speed and turn rate. Inputs are the two wheel motor
//! voltages `v = [v_r, v_l]`.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::cbf::{soft_min_weights, AnalyticBarrier, Barrier, HigherOrderChain, LinearClassK, SharedBarrier};
use crate::plant::ContinuousDynamics;
use crate::{Error, Matrix, Vector};

/// Physical constants of the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotParams {
    /// Motor torque constant [N·m/A].
    pub k_m: f64,
    /// Wheel radius [m].
    pub r: f64,
    /// Half the axle length [m].
    pub l: f64,
    /// Offset of the point of interest ahead of the axle [m].
    pub l_d: f64,
    /// Armature resistance [Ω].
    pub r_a: f64,
    pub mass: f64,
    pub inertia: f64,
    /// Back-EMF constant [V·s/rad].
    pub k_b: f64,
    /// Viscous wheel friction [N·m·s].
    pub eps3: f64,
    pub c2: f64,
    pub c4: f64,
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for RobotParams {
    fn default() -> Self {
        Self {
            k_m: 0.1,
            r: 0.1,
            l: 0.5,
            l_d: 0.25,
            r_a: 0.27,
            mass: 10.0,
            inertia: 0.83,
            k_b: 0.0487,
            eps3: 0.01,
            c2: 0.4581,
            c4: 0.3477,
            eps1: 0.4,
            eps2: 0.4,
        }
    }
}

impl RobotParams {
    /// Linear damping of the forward speed.
    pub fn c1(&self) -> f64 {
        2.0 * self.k_b * self.k_m / (self.mass * self.r * self.r_a) + 2.0 * self.eps3 / (self.mass * self.r)
    }

    /// Linear damping of the turn rate.
    pub fn c3(&self) -> f64 {
        self.k_b * self.k_m * self.l * self.l / (self.inertia * self.r * self.r * self.r_a)
            + self.l * self.eps3 / (self.inertia * self.r * self.r)
    }

    /// Voltage-to-acceleration map `M`.
    pub fn input_gain(&self) -> Matrix<2, 2> {
        let k = self.k_m / (self.r * self.r_a);
        Matrix::<2, 2>::new(
            k / self.mass,
            k / self.mass,
            k * self.l / self.inertia,
            -k * self.l / self.inertia,
        )
    }
}

/// Named view of the state vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub qx: f64,
    pub qy: f64,
    pub gamma: f64,
    pub s: f64,
    pub omega: f64,
}

impl From<RobotState> for Vector<5> {
    fn from(r: RobotState) -> Self {
        Vector::<5>::new(r.qx, r.qy, r.gamma, r.s, r.omega)
    }
}

impl From<&Vector<5>> for RobotState {
    fn from(x: &Vector<5>) -> Self {
        Self {
            qx: x[0],
            qy: x[1],
            gamma: x[2],
            s: x[3],
            omega: x[4],
        }
    }
}

/// The two damping terms `[f_4, f_5]` and their derivatives in `s` and `ω`.
fn damping(x: &Vector<5>, p: &RobotParams) -> ([f64; 2], [f64; 2]) {
    let (s, w) = (x[3], x[4]);
    let ts = libm::tanh(s / p.eps1);
    let tw = libm::tanh(w / p.eps2);
    let (c1, c3) = (p.c1(), p.c3());
    let value = [-c1 * s - p.c2 * s * s * ts, -c3 * w - p.c4 * w * w * tw];
    let slope = [
        -c1 - p.c2 * (2.0 * s * ts + s * s * (1.0 - ts * ts) / p.eps1),
        -c3 - p.c4 * (2.0 * w * tw + w * w * (1.0 - tw * tw) / p.eps2),
    ];
    (value, slope)
}

pub fn robot_f(x: &Vector<5>, p: &RobotParams) -> Vector<5> {
    let (sin, cos) = libm::sincos(x[2]);
    let (s, w) = (x[3], x[4]);
    let ([f4, f5], _) = damping(x, p);
    Vector::<5>::new(s * cos - p.l_d * w * sin, s * sin + p.l_d * w * cos, w, f4, f5)
}

pub fn robot_g(p: &RobotParams) -> Matrix<5, 2> {
    let mut g = Matrix::<5, 2>::zeros();
    g.fixed_view_mut::<2, 2>(3, 0).copy_from(&p.input_gain());
    g
}

/// `∂f/∂x`.
pub fn robot_f_jacobian(x: &Vector<5>, p: &RobotParams) -> Matrix<5, 5> {
    let (sin, cos) = libm::sincos(x[2]);
    let (s, w) = (x[3], x[4]);
    let (_, [d4, d5]) = damping(x, p);
    let mut j = Matrix::<5, 5>::zeros();
    j[(0, 2)] = -s * sin - p.l_d * w * cos;
    j[(0, 3)] = cos;
    j[(0, 4)] = -p.l_d * sin;
    j[(1, 2)] = s * cos - p.l_d * w * sin;
    j[(1, 3)] = sin;
    j[(1, 4)] = p.l_d * cos;
    j[(2, 4)] = 1.0;
    j[(3, 3)] = d4;
    j[(4, 4)] = d5;
    j
}

/// The robot as a continuous plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPlant {
    pub params: RobotParams,
    input: Matrix<5, 2>,
}

impl RobotPlant {
    pub fn new(params: RobotParams) -> Self {
        Self {
            params,
            input: robot_g(&params),
        }
    }
}

impl Default for RobotPlant {
    fn default() -> Self {
        Self::new(RobotParams::default())
    }
}

impl ContinuousDynamics<5, 2> for RobotPlant {
    fn drift(&self, x: &Vector<5>) -> Vector<5> {
        robot_f(x, &self.params)
    }
    fn input_matrix(&self, _x: &Vector<5>) -> Matrix<5, 2> {
        self.input
    }
    fn drift_jacobian(&self, x: &Vector<5>) -> Matrix<5, 5> {
        robot_f_jacobian(x, &self.params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Circle {
    pub center: Vector<2>,
    pub radius: f64,
}

/// Circular obstacles and an optional workspace rectangle `[x_min, y_min, x_max, y_max]`.
///
/// The rectangle is informational; it does not enter the safe set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleMap {
    pub circles: Vec<Circle>,
    pub bounds: Option<[f64; 4]>,
}

impl ObstacleMap {
    pub fn new(circles: Vec<Circle>, bounds: Option<[f64; 4]>) -> Result<Self, Error> {
        if circles.iter().any(|c| !(c.radius > 0.0) || !c.center.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidConfig("obstacle radii must be positive and centers finite"));
        }
        Ok(Self { circles, bounds })
    }
}

/// Limits, goal and barrier tuning of one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioLimits {
    /// Forward speed bound `s̄` [m/s].
    pub s_bar: f64,
    /// Turn rate bound `ω̄` [rad/s].
    pub omega_bar: f64,
    /// Relative-degree lift gain for the obstacle barriers.
    pub zeta: f64,
    /// Soft-minimum sharpness.
    pub rho: f64,
    pub goal: Vector<2>,
    /// Arrival tolerance around the goal [m].
    pub d_tol: f64,
    /// Trial length [s].
    pub t_final: f64,
    /// Gain `κ` of the outer class-K function `α(z) = κz`.
    pub alpha: f64,
}

impl Default for ScenarioLimits {
    fn default() -> Self {
        Self {
            s_bar: 1.5,
            omega_bar: 0.5,
            zeta: 0.5,
            rho: 750.0,
            goal: Vector::<2>::zeros(),
            d_tol: 0.25,
            t_final: 120.0,
            alpha: 1.0,
        }
    }
}

impl ScenarioLimits {
    pub fn validate(&self) -> Result<(), Error> {
        let positive = [self.s_bar, self.omega_bar, self.zeta, self.rho, self.d_tol, self.t_final, self.alpha];
        if positive.iter().all(|v| *v > 0.0 && v.is_finite()) && self.goal.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("scenario limits must be positive and finite"))
        }
    }
}

/// `φ = ‖q − c‖² − r²` and its gradient.
pub fn obstacle_phi(circle: &Circle, x: &Vector<5>) -> (f64, Vector<5>) {
    let dx = x[0] - circle.center[0];
    let dy = x[1] - circle.center[1];
    let phi = dx * dx + dy * dy - circle.radius * circle.radius;
    (phi, Vector::<5>::new(2.0 * dx, 2.0 * dy, 0.0, 0.0, 0.0))
}

/// `h = L_fφ + ζφ` for one obstacle, given `f(x)` and `∂f/∂x`.
///
/// `∇h = (∂f/∂x)ᵀ∇φ + ∇²φ·f + ζ∇φ` with `∇²φ = diag(2, 2, 0, 0, 0)`.
fn lifted_obstacle(circle: &Circle, zeta: f64, x: &Vector<5>, f: &Vector<5>, jf: &Matrix<5, 5>) -> (f64, Vector<5>) {
    let (phi, grad_phi) = obstacle_phi(circle, x);
    let h = grad_phi.dot(f) + zeta * phi;
    let mut grad = jf.tr_mul(&grad_phi) + grad_phi * zeta;
    grad[0] += 2.0 * f[0];
    grad[1] += 2.0 * f[1];
    (h, grad)
}

/// `(h_s, ∇h_s)` and `(h_ω, ∇h_ω)` for `h_s = s̄² − s²`, `h_ω = ω̄² − ω²`.
pub fn velocity_barriers(x: &Vector<5>, limits: &ScenarioLimits) -> [(f64, Vector<5>); 2] {
    let (s, w) = (x[3], x[4]);
    [
        (
            limits.s_bar * limits.s_bar - s * s,
            Vector::<5>::new(0.0, 0.0, 0.0, -2.0 * s, 0.0),
        ),
        (
            limits.omega_bar * limits.omega_bar - w * w,
            Vector::<5>::new(0.0, 0.0, 0.0, 0.0, -2.0 * w),
        ),
    ]
}

/// `ψ₀`: soft minimum of the lifted obstacle barriers and the two speed barriers.
///
/// Evaluates `f` and `∂f/∂x` once per call and shares them across members,
/// which is what makes the closed loop affordable.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotSafeSet {
    pub map: ObstacleMap,
    pub limits: ScenarioLimits,
    pub params: RobotParams,
}

impl RobotSafeSet {
    /// Number of composed barriers `n_h`.
    pub fn len(&self) -> usize {
        self.map.circles.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[h_1(x), …, h_{n_h}(x)]`, obstacles first.
    pub fn member_values(&self, x: &Vector<5>) -> Vec<f64> {
        self.members(x).into_iter().map(|(h, _)| h).collect()
    }

    pub fn members(&self, x: &Vector<5>) -> Vec<(f64, Vector<5>)> {
        let f = robot_f(x, &self.params);
        let jf = robot_f_jacobian(x, &self.params);
        let mut out = Vec::with_capacity(self.len());
        out.extend(
            self.map
                .circles
                .iter()
                .map(|c| lifted_obstacle(c, self.limits.zeta, x, &f, &jf)),
        );
        out.extend(velocity_barriers(x, &self.limits));
        out
    }

    /// The same members as independent analytic barriers.
    pub fn member_barriers(&self) -> Vec<SharedBarrier<5>> {
        let mut out: Vec<SharedBarrier<5>> = Vec::with_capacity(self.len());
        for circle in self.map.circles.iter().copied() {
            let (p, zeta) = (self.params, self.limits.zeta);
            let eval = move |x: &Vector<5>| {
                lifted_obstacle(&circle, zeta, x, &robot_f(x, &p), &robot_f_jacobian(x, &p))
            };
            out.push(Arc::new(AnalyticBarrier {
                value: move |x: &Vector<5>| eval(x).0,
                gradient: move |x: &Vector<5>| eval(x).1,
            }));
        }
        for index in 0..2 {
            let limits = self.limits;
            out.push(Arc::new(AnalyticBarrier {
                value: move |x: &Vector<5>| velocity_barriers(x, &limits)[index].0,
                gradient: move |x: &Vector<5>| velocity_barriers(x, &limits)[index].1,
            }));
        }
        out
    }
}

impl Barrier<5> for RobotSafeSet {
    fn value(&self, x: &Vector<5>) -> f64 {
        self.value_and_gradient(x).0
    }

    fn gradient(&self, x: &Vector<5>) -> Vector<5> {
        self.value_and_gradient(x).1
    }

    fn value_and_gradient(&self, x: &Vector<5>) -> (f64, Vector<5>) {
        let members = self.members(x);
        let values: Vec<f64> = members.iter().map(|(h, _)| *h).collect();
        let mut weights = alloc::vec![0.0; values.len()];
        let psi = soft_min_weights(&values, self.limits.rho, &mut weights);
        let grad = weights
            .iter()
            .zip(&members)
            .fold(Vector::<5>::zeros(), |acc, (w, (_, g))| acc + g * *w);
        (psi, grad)
    }
}

/// The robot's barrier chain: `ψ₀` from [`RobotSafeSet`], degree one.
pub type RobotChain = HigherOrderChain<5, 2, RobotPlant, LinearClassK>;

/// Builds `ψ₀` and the degree-one chain whose affine terms constrain `[v; δ]`.
pub fn assemble_safe_set(
    map: &ObstacleMap,
    limits: &ScenarioLimits,
    params: &RobotParams,
) -> Result<(Arc<RobotSafeSet>, RobotChain), Error> {
    limits.validate()?;
    let set = Arc::new(RobotSafeSet {
        map: map.clone(),
        limits: *limits,
        params: *params,
    });
    let chain = HigherOrderChain::new(
        set.clone(),
        RobotPlant::new(*params),
        alloc::vec![LinearClassK(limits.alpha)],
    )?;
    Ok((set, chain))
}
