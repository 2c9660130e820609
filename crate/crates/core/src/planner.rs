//! Leader-side trajectory optimization: quadratic stage and terminal costs,
//! the barrier-penalized horizon objective with a dynamics-consistency
//! penalty on the follower prediction, costate-based control refinement,
//! and the receding-horizon guidance loop.

use crate::dynamics::{
    joint_step, leader_step, DynamicsConfig, FollowerControl, JointState, LeaderControl,
};
use crate::env::{self, Workspace};
use crate::error::CoreError;
use crate::follower::{best_response, myopic_cost, myopic_policy, FollowerType};
use crate::net::MlpParams;
use nalgebra::{Matrix2, Matrix3, Matrix5, SMatrix, Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};

type Matrix3x2 = SMatrix<f64, 3, 2>;

/// Weights of the leader's cost. All matrices must be symmetric PSD.
#[derive(Debug, Clone)]
pub struct LeaderCostParams {
    pub q1: Matrix5<f64>,
    pub q2: Matrix2<f64>,
    pub r: Matrix2<f64>,
    pub qf1: Matrix5<f64>,
    pub qf2: Matrix2<f64>,
    /// Barrier weight.
    pub nu: f64,
    /// Dynamics-consistency penalty weight.
    pub mu: f64,
}

impl Default for LeaderCostParams {
    fn default() -> Self {
        let q1 = Matrix5::identity() * 2.0;
        let q2 = Matrix2::identity() * 5.0;
        Self {
            q1,
            q2,
            r: Matrix2::identity(),
            qf1: q1 * 5.0,
            qf2: q2 * 5.0,
            nu: 0.5,
            mu: 50.0,
        }
    }
}

/// Horizon length and solver budgets for both solve stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub horizon_steps: usize,
    pub max_time_steps: usize,
    pub ocp_max_iter: usize,
    pub ocp_grad_tol: f64,
    pub ocp_init_step: f64,
    pub ocp_min_step: f64,
    pub pmp_sweeps: usize,
    /// Iteration cap of each per-control Hamiltonian minimization.
    pub pmp_step_iters: usize,
    pub pmp_tol: f64,
    /// The leader starts at the follower's position plus this offset,
    /// projected to feasibility.
    pub leader_start_offset: [f64; 2],
    /// Initial follower heading used by the command-line entry points.
    pub start_heading: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon_steps: 10,
            max_time_steps: 150,
            ocp_max_iter: 150,
            ocp_grad_tol: 1e-4,
            ocp_init_step: 0.1,
            ocp_min_step: 1e-12,
            pmp_sweeps: 4,
            pmp_step_iters: 50,
            pmp_tol: 1e-7,
            leader_start_offset: [0.5, 0.5],
            start_heading: 0.0,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.horizon_steps == 0 {
            return Err(CoreError::InvalidConfig("horizon_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// One receding-horizon solve: the optimized control sequence, the
/// predicted joint trajectory, and the penalized objective.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub controls: Vec<LeaderControl>,
    pub predicted: Vec<JointState>,
    pub objective: f64,
    /// True once a refinement pass improved this plan.
    pub refined: bool,
    /// Descent iterations spent by the first-stage solver.
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerminationReason {
    Reached,
    Timeout,
    Trapped,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Reached => "reached",
            Self::Timeout => "timeout",
            Self::Trapped => "trapped",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CoreError> {
        match s {
            "reached" => Ok(Self::Reached),
            "timeout" => Ok(Self::Timeout),
            "trapped" => Ok(Self::Trapped),
            other => Err(CoreError::Malformed(format!("unknown termination reason {other:?}"))),
        }
    }
}

/// Per-step planner diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiag {
    pub objective_initial: f64,
    pub objective_refined: f64,
    pub ocp_iterations: usize,
    pub refine_improved: bool,
}

/// A recorded guidance (or zero-guidance) run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<JointState>,
    pub leader_controls: Vec<LeaderControl>,
    pub follower_controls: Vec<FollowerControl>,
    pub stage_costs: Vec<f64>,
    pub reason: TerminationReason,
    pub guided: bool,
    pub diags: Vec<StepDiag>,
}

fn target_state(dest: Vector2<f64>) -> Vector5<f64> {
    Vector5::new(dest.x, dest.y, dest.x, dest.y, 0.0)
}

/// Stage cost `||x - x_d||^2_Q1 + ||p_L - p_F||^2_Q2 + ||u||^2_R`.
pub fn leader_stage_cost(
    x: &JointState,
    ul: &LeaderControl,
    params: &LeaderCostParams,
    dest: Vector2<f64>,
) -> f64 {
    let dx = x.as_vector() - target_state(dest);
    let gap = x.leader_pos - x.follower_pos;
    (params.q1 * dx).dot(&dx) + (params.q2 * gap).dot(&gap) + (params.r * ul.velocity).dot(&ul.velocity)
}

/// Terminal cost with the terminal weights.
pub fn leader_terminal_cost(x: &JointState, params: &LeaderCostParams, dest: Vector2<f64>) -> f64 {
    let dx = x.as_vector() - target_state(dest);
    let gap = x.leader_pos - x.follower_pos;
    (params.qf1 * dx).dot(&dx) + (params.qf2 * gap).dot(&gap)
}

/// Gradient of the stage cost with respect to the joint state.
fn stage_grad_x(x: &JointState, params: &LeaderCostParams, dest: Vector2<f64>) -> Vector5<f64> {
    quad_grad_x(x, &params.q1, &params.q2, dest)
}

fn terminal_grad_x(x: &JointState, params: &LeaderCostParams, dest: Vector2<f64>) -> Vector5<f64> {
    quad_grad_x(x, &params.qf1, &params.qf2, dest)
}

fn quad_grad_x(
    x: &JointState,
    q1: &Matrix5<f64>,
    q2: &Matrix2<f64>,
    dest: Vector2<f64>,
) -> Vector5<f64> {
    let mut g = 2.0 * (q1 * (x.as_vector() - target_state(dest)));
    let dgap = 2.0 * (q2 * (x.leader_pos - x.follower_pos));
    g[0] += dgap.x;
    g[1] += dgap.y;
    g[2] -= dgap.x;
    g[3] -= dgap.y;
    g
}

/// Barrier value and its state gradient at one joint state.
fn barrier_value_grad(x: &JointState, ws: &Workspace, nu: f64) -> (f64, Vector5<f64>) {
    let mut val = 0.0;
    let mut g = Vector5::zeros();
    for obs in &ws.obstacles {
        let (vl, gl) = env::barrier_point_grad(x.leader_pos, obs, nu);
        let (vf, gf) = env::barrier_point_grad(x.follower_pos, obs, nu);
        val += vl + vf;
        if val.is_infinite() {
            return (f64::INFINITY, Vector5::zeros());
        }
        g[0] += gl.x;
        g[1] += gl.y;
        g[2] += gf.x;
        g[3] += gf.y;
    }
    (val, g)
}

/// Follower prediction through the response model, without angle wrapping:
/// inside a planning horizon the heading is treated as a free real variable
/// so the objective stays smooth.
fn follower_pred(y: &Vector3<f64>, b: &FollowerControl, dt: f64) -> Vector3<f64> {
    let phi = y.z + b.turn_rate * dt;
    Vector3::new(y.x + b.speed * dt * phi.cos(), y.y + b.speed * dt * phi.sin(), phi)
}

/// Prediction plus Jacobians wrt the follower state (holding `b`) and wrt
/// the response components.
fn follower_pred_jac(
    y: &Vector3<f64>,
    b: &FollowerControl,
    dt: f64,
) -> (Vector3<f64>, Matrix3<f64>, Matrix3x2) {
    let phi = y.z + b.turn_rate * dt;
    let (s, c) = phi.sin_cos();
    let pred = Vector3::new(y.x + b.speed * dt * c, y.y + b.speed * dt * s, phi);
    #[rustfmt::skip]
    let p = Matrix3::new(
        1.0, 0.0, -b.speed * dt * s,
        0.0, 1.0,  b.speed * dt * c,
        0.0, 0.0,  1.0,
    );
    #[rustfmt::skip]
    let bb = Matrix3x2::new(
        dt * c, -b.speed * dt * dt * s,
        dt * s,  b.speed * dt * dt * c,
        0.0,     dt,
    );
    (pred, p, bb)
}

fn follower_vec(x: &JointState) -> Vector3<f64> {
    Vector3::new(x.follower_pos.x, x.follower_pos.y, x.follower_heading)
}

fn joint_from(leader: Vector2<f64>, y: &Vector3<f64>) -> JointState {
    JointState::new(leader, Vector2::new(y.x, y.y), y.z)
}

/// Assembles the penalized horizon objective and its analytic gradient for
/// a fixed initial state and response model.
struct Horizon<'a> {
    x0: &'a JointState,
    w: &'a MlpParams,
    params: &'a LeaderCostParams,
    ws: &'a Workspace,
    dt: f64,
    u_max: f64,
    steps: usize,
}

impl<'a> Horizon<'a> {
    fn leader_rollout(&self, u: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
        let mut l = Vec::with_capacity(self.steps + 1);
        l.push(self.x0.leader_pos);
        for ut in u {
            l.push(l.last().unwrap() + ut * self.dt);
        }
        l
    }

    /// Rolls the follower forward through the response model (mu-residual
    /// zero by construction).
    fn follower_rollout(&self, u: &[Vector2<f64>]) -> Vec<Vector3<f64>> {
        let l = self.leader_rollout(u);
        let mut y = Vec::with_capacity(self.steps + 1);
        y.push(follower_vec(self.x0));
        for t in 0..self.steps {
            let x_t = joint_from(l[t], &y[t]);
            let b = self.w.forward(&x_t, &LeaderControl { velocity: u[t] }, self.u_max);
            y.push(follower_pred(&y[t], &b, self.dt));
        }
        y
    }

    /// Penalized objective. `y` has `steps + 1` entries with `y[0]` pinned
    /// to the initial follower state. Barrier violations yield infinity.
    fn objective(&self, u: &[Vector2<f64>], y: &[Vector3<f64>]) -> f64 {
        let l = self.leader_rollout(u);
        let mut total = 0.0;
        for t in 0..self.steps {
            let x_t = joint_from(l[t], &y[t]);
            let ul = LeaderControl { velocity: u[t] };
            let barrier = env::barrier_cost(&x_t, self.ws, self.params.nu);
            if barrier.is_infinite() {
                return f64::INFINITY;
            }
            total += leader_stage_cost(&x_t, &ul, self.params, self.ws.destination) + barrier;
            let b = self.w.forward(&x_t, &ul, self.u_max);
            let r = y[t + 1] - follower_pred(&y[t], &b, self.dt);
            total += self.params.mu * r.norm_squared();
        }
        let x_t = joint_from(l[self.steps], &y[self.steps]);
        let barrier = env::barrier_cost(&x_t, self.ws, self.params.nu);
        if barrier.is_infinite() {
            return f64::INFINITY;
        }
        total + leader_terminal_cost(&x_t, self.params, self.ws.destination) + barrier
    }

    /// Objective with exact gradients wrt the controls and the free
    /// follower states `y[1..]`. Gradients are meaningless when the value
    /// is infinite.
    fn objective_grad(
        &self,
        u: &[Vector2<f64>],
        y: &[Vector3<f64>],
    ) -> (f64, Vec<Vector2<f64>>, Vec<Vector3<f64>>) {
        let t_n = self.steps;
        let l = self.leader_rollout(u);
        let mut gl = vec![Vector2::zeros(); t_n + 1];
        let mut gy = vec![Vector3::zeros(); t_n + 1];
        let mut gu = vec![Vector2::zeros(); t_n];
        let mut total = 0.0;
        let dest = self.ws.destination;
        for t in 0..t_n {
            let x_t = joint_from(l[t], &y[t]);
            let ul = LeaderControl { velocity: u[t] };
            let (bval, bgrad) = barrier_value_grad(&x_t, self.ws, self.params.nu);
            if bval.is_infinite() {
                return (f64::INFINITY, gu, gy[1..].to_vec());
            }
            total += leader_stage_cost(&x_t, &ul, self.params, dest) + bval;
            let sg = stage_grad_x(&x_t, self.params, dest) + bgrad;
            gl[t] += Vector2::new(sg[0], sg[1]);
            gy[t] += Vector3::new(sg[2], sg[3], sg[4]);
            gu[t] += 2.0 * (self.params.r * u[t]);

            let (b, gin) = self.w.forward_with_input_grad(&x_t, &ul, self.u_max);
            let (pred, p_y, p_b) = follower_pred_jac(&y[t], &b, self.dt);
            let r = y[t + 1] - pred;
            total += self.params.mu * r.norm_squared();
            let two_mu_r = 2.0 * self.params.mu * r;
            gy[t + 1] += two_mu_r;
            // back through the prediction: direct state path plus the
            // response model's dependence on every input block
            let bt_r: Vector2<f64> = p_b.transpose() * two_mu_r;
            let g_l = gin.fixed_view::<2, 2>(0, 0);
            let g_y = gin.fixed_view::<2, 3>(0, 2);
            let g_u = gin.fixed_view::<2, 2>(0, 5);
            gy[t] -= p_y.transpose() * two_mu_r + g_y.transpose() * bt_r;
            gl[t] -= g_l.transpose() * bt_r;
            gu[t] -= g_u.transpose() * bt_r;
        }
        let x_t = joint_from(l[t_n], &y[t_n]);
        let (bval, bgrad) = barrier_value_grad(&x_t, self.ws, self.params.nu);
        if bval.is_infinite() {
            return (f64::INFINITY, gu, gy[1..].to_vec());
        }
        total += leader_terminal_cost(&x_t, self.params, dest) + bval;
        let tg = terminal_grad_x(&x_t, self.params, dest) + bgrad;
        gl[t_n] += Vector2::new(tg[0], tg[1]);
        gy[t_n] += Vector3::new(tg[2], tg[3], tg[4]);

        // leader positions are an exact function of earlier controls
        let mut suffix = Vector2::zeros();
        for t in (0..t_n).rev() {
            suffix += gl[t + 1];
            gu[t] += suffix * self.dt;
        }
        (total, gu, gy[1..].to_vec())
    }
}

fn clamp_control(u: Vector2<f64>, u_max: f64) -> Vector2<f64> {
    Vector2::new(u.x.clamp(-u_max, u_max), u.y.clamp(-u_max, u_max))
}

/// The penalized horizon objective for external callers (tests, tools).
/// `follower_seq` lists the free follower states `y_1 ... y_T`.
pub fn penalized_objective(
    controls: &[LeaderControl],
    follower_seq: &[Vector3<f64>],
    x0: &JointState,
    w: &MlpParams,
    params: &LeaderCostParams,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
) -> f64 {
    assert_eq!(controls.len(), follower_seq.len(), "controls and follower states must align");
    let h = Horizon {
        x0,
        w,
        params,
        ws,
        dt: dyn_cfg.dt,
        u_max: dyn_cfg.u_max,
        steps: controls.len(),
    };
    let u: Vec<Vector2<f64>> = controls.iter().map(|c| c.velocity).collect();
    let mut y = Vec::with_capacity(follower_seq.len() + 1);
    y.push(follower_vec(x0));
    y.extend_from_slice(follower_seq);
    h.objective(&u, &y)
}

/// Gradient companion of [`penalized_objective`], exposed for the
/// finite-difference contract.
pub fn penalized_objective_grad(
    controls: &[LeaderControl],
    follower_seq: &[Vector3<f64>],
    x0: &JointState,
    w: &MlpParams,
    params: &LeaderCostParams,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
) -> (f64, Vec<Vector2<f64>>, Vec<Vector3<f64>>) {
    let h = Horizon {
        x0,
        w,
        params,
        ws,
        dt: dyn_cfg.dt,
        u_max: dyn_cfg.u_max,
        steps: controls.len(),
    };
    let u: Vec<Vector2<f64>> = controls.iter().map(|c| c.velocity).collect();
    let mut y = Vec::with_capacity(follower_seq.len() + 1);
    y.push(follower_vec(x0));
    y.extend_from_slice(follower_seq);
    h.objective_grad(&u, &y)
}

fn build_result(
    h: &Horizon,
    u: Vec<Vector2<f64>>,
    y: &[Vector3<f64>],
    objective: f64,
    refined: bool,
    iterations: usize,
) -> PlanResult {
    let l = h.leader_rollout(&u);
    let predicted = l.iter().zip(y.iter()).map(|(lp, yp)| joint_from(*lp, yp)).collect();
    PlanResult {
        controls: u.into_iter().map(|v| LeaderControl { velocity: v }).collect(),
        predicted,
        objective,
        refined,
        iterations,
    }
}

/// Solves the penalized horizon problem by projected gradient descent over
/// the leader controls and the free follower-state sequence.
pub fn solve_ocp(
    x0: &JointState,
    w: &MlpParams,
    params: &LeaderCostParams,
    cfg: &PlanConfig,
    dyn_cfg: &DynamicsConfig,
    ws: &Workspace,
    warm_start: Option<&PlanResult>,
) -> Result<PlanResult, CoreError> {
    if !env::outside_safety_regions(x0.leader_pos, ws)
        || !env::outside_safety_regions(x0.follower_pos, ws)
    {
        return Err(CoreError::InfeasibleStart(format!(
            "leader {:?} / follower {:?} not strictly outside every safety region",
            x0.leader_pos, x0.follower_pos
        )));
    }
    let t_n = cfg.horizon_steps;
    let h = Horizon { x0, w, params, ws, dt: dyn_cfg.dt, u_max: dyn_cfg.u_max, steps: t_n };

    // Initialization candidates: shifted previous solution, a fresh
    // model rollout under zero controls, and a frozen follower (always
    // feasible from a strictly feasible start).
    let mut candidates: Vec<(Vec<Vector2<f64>>, Vec<Vector3<f64>>)> = Vec::new();
    if let Some(prev) = warm_start {
        if prev.controls.len() == t_n && prev.predicted.len() == t_n + 1 {
            let u: Vec<Vector2<f64>> =
                (0..t_n).map(|t| prev.controls[(t + 1).min(t_n - 1)].velocity).collect();
            let mut y = vec![follower_vec(x0)];
            for t in 1..=t_n {
                y.push(follower_vec(&prev.predicted[(t + 1).min(t_n)]));
            }
            candidates.push((u, y));
        }
    }
    let zero_u = vec![Vector2::zeros(); t_n];
    candidates.push((zero_u.clone(), h.follower_rollout(&zero_u)));
    candidates.push((zero_u.clone(), vec![follower_vec(x0); t_n + 1]));

    let mut best: Option<(f64, Vec<Vector2<f64>>, Vec<Vector3<f64>>)> = None;
    for (u, y) in candidates {
        let obj = h.objective(&u, &y);
        if obj.is_finite() && best.as_ref().map_or(true, |(b, _, _)| obj < *b) {
            best = Some((obj, u, y));
        }
    }
    let (mut obj, mut u, mut y) =
        best.expect("frozen-follower initialization is always feasible");

    let init_obj = obj;
    let mut step = cfg.ocp_init_step;
    let mut iterations = 0usize;
    while iterations < cfg.ocp_max_iter {
        let (obj_now, gu, gy) = h.objective_grad(&u, &y);
        debug_assert!(obj_now.is_finite());
        let mut pg: f64 = 0.0;
        for t in 0..t_n {
            let proj = clamp_control(u[t] - gu[t], dyn_cfg.u_max);
            pg = pg.max((u[t] - proj).amax()).max(gy[t].amax());
        }
        if pg < cfg.ocp_grad_tol {
            break;
        }
        let mut accepted = false;
        while step >= cfg.ocp_min_step {
            let cu: Vec<Vector2<f64>> =
                (0..t_n).map(|t| clamp_control(u[t] - gu[t] * step, dyn_cfg.u_max)).collect();
            let cy: Vec<Vector3<f64>> = std::iter::once(y[0])
                .chain((0..t_n).map(|t| y[t + 1] - gy[t] * step))
                .collect();
            let cobj = h.objective(&cu, &cy);
            if cobj < obj {
                u = cu;
                y = cy;
                obj = cobj;
                step = (step * 1.5).min(1.0);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    debug_assert!(obj <= init_obj);
    Ok(build_result(&h, u, &y, obj, false, iterations))
}

/// Backward costate recursion along a rolled-out trajectory.
fn costates(
    states: &[JointState],
    u: &[Vector2<f64>],
    w: &MlpParams,
    params: &LeaderCostParams,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
) -> Vec<Vector5<f64>> {
    let t_n = u.len();
    let dest = ws.destination;
    let mut lam = vec![Vector5::zeros(); t_n + 1];
    let (_, bg) = barrier_value_grad(&states[t_n], ws, params.nu);
    lam[t_n] = terminal_grad_x(&states[t_n], params, dest) + bg;
    for t in (1..t_n).rev() {
        let ul = LeaderControl { velocity: u[t] };
        let (b, gin) = w.forward_with_input_grad(&states[t], &ul, dyn_cfg.u_max);
        let y_t = follower_vec(&states[t]);
        let (_, p_y, p_b) = follower_pred_jac(&y_t, &b, dyn_cfg.dt);
        let fjac = f_jacobian(&p_y, &p_b, &gin);
        let (_, bg) = barrier_value_grad(&states[t], ws, params.nu);
        lam[t] = stage_grad_x(&states[t], params, dest) + bg + fjac.transpose() * lam[t + 1];
    }
    lam
}

/// Jacobian of the aggregated dynamics wrt the joint state.
fn f_jacobian(
    p_y: &Matrix3<f64>,
    p_b: &Matrix3x2,
    gin: &SMatrix<f64, 2, 7>,
) -> Matrix5<f64> {
    let mut j = Matrix5::zeros();
    j.fixed_view_mut::<2, 2>(0, 0).copy_from(&Matrix2::identity());
    let g_l = gin.fixed_view::<2, 2>(0, 0);
    let g_y = gin.fixed_view::<2, 3>(0, 2);
    j.fixed_view_mut::<3, 2>(2, 0).copy_from(&(p_b * g_l));
    j.fixed_view_mut::<3, 3>(2, 2).copy_from(&(p_y + p_b * g_y));
    j
}

/// Minimizes the Hamiltonian at one step over the leader control box by
/// projected gradient with step halving. The barrier term is constant in
/// the control and omitted.
fn minimize_hamiltonian(
    x_t: &JointState,
    u_init: Vector2<f64>,
    lam_next: &Vector5<f64>,
    w: &MlpParams,
    params: &LeaderCostParams,
    cfg: &PlanConfig,
    dyn_cfg: &DynamicsConfig,
    ws: &Workspace,
) -> Vector2<f64> {
    let dest = ws.destination;
    let lam_l = Vector2::new(lam_next[0], lam_next[1]);
    let lam_y = Vector3::new(lam_next[2], lam_next[3], lam_next[4]);
    let y_t = follower_vec(x_t);
    let ham = |uv: Vector2<f64>| -> f64 {
        let ul = LeaderControl { velocity: uv };
        let b = w.forward(x_t, &ul, dyn_cfg.u_max);
        let pred = follower_pred(&y_t, &b, dyn_cfg.dt);
        let leader_next = x_t.leader_pos + uv * dyn_cfg.dt;
        leader_stage_cost(x_t, &ul, params, dest) + lam_l.dot(&leader_next) + lam_y.dot(&pred)
    };
    let ham_grad = |uv: Vector2<f64>| -> Vector2<f64> {
        let ul = LeaderControl { velocity: uv };
        let (b, gin) = w.forward_with_input_grad(x_t, &ul, dyn_cfg.u_max);
        let (_, _, p_b) = follower_pred_jac(&y_t, &b, dyn_cfg.dt);
        let g_u = gin.fixed_view::<2, 2>(0, 5);
        2.0 * (params.r * uv) + lam_l * dyn_cfg.dt + g_u.transpose() * (p_b.transpose() * lam_y)
    };

    let mut u = clamp_control(u_init, dyn_cfg.u_max);
    let mut h_val = ham(u);
    let mut step = 0.1;
    for _ in 0..cfg.pmp_step_iters {
        let g = ham_grad(u);
        let proj = clamp_control(u - g, dyn_cfg.u_max);
        if (u - proj).amax() < 1e-10 {
            break;
        }
        let mut accepted = false;
        while step >= 1e-12 {
            let cand = clamp_control(u - g * step, dyn_cfg.u_max);
            let ch = ham(cand);
            if ch < h_val {
                u = cand;
                h_val = ch;
                step = (step * 1.5).min(1.0);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    u
}

/// Refines a plan through the necessary-condition system: forward rollout,
/// backward costates, and per-step Hamiltonian minimization, keeping the
/// result only when the penalized objective improves.
pub fn pmp_refine(
    plan: &PlanResult,
    x0: &JointState,
    w: &MlpParams,
    params: &LeaderCostParams,
    cfg: &PlanConfig,
    dyn_cfg: &DynamicsConfig,
    ws: &Workspace,
) -> PlanResult {
    let t_n = plan.controls.len();
    let h = Horizon { x0, w, params, ws, dt: dyn_cfg.dt, u_max: dyn_cfg.u_max, steps: t_n };
    let mut u: Vec<Vector2<f64>> = plan.controls.iter().map(|c| c.velocity).collect();
    let mut best = plan.clone();
    for _ in 0..cfg.pmp_sweeps {
        let y = h.follower_rollout(&u);
        let l = h.leader_rollout(&u);
        let states: Vec<JointState> =
            l.iter().zip(y.iter()).map(|(lp, yp)| joint_from(*lp, yp)).collect();
        if states.iter().any(|s| env::barrier_cost(s, ws, params.nu).is_infinite()) {
            break;
        }
        let lam = costates(&states, &u, w, params, ws, dyn_cfg);
        let mut change: f64 = 0.0;
        for t in 0..t_n {
            let refined =
                minimize_hamiltonian(&states[t], u[t], &lam[t + 1], w, params, cfg, dyn_cfg, ws);
            change = change.max((refined - u[t]).amax());
            u[t] = refined;
        }
        let y_new = h.follower_rollout(&u);
        let obj = h.objective(&u, &y_new);
        if obj < best.objective {
            best = build_result(&h, u.clone(), &y_new, obj, true, plan.iterations);
        }
        if change < cfg.pmp_tol {
            break;
        }
    }
    best
}

fn reached(x: &JointState, ws: &Workspace) -> bool {
    (x.follower_pos - ws.destination).norm() <= ws.goal_radius
}

/// Receding-horizon guidance: plan, refine, announce the first control,
/// observe the follower's true best response, advance the real dynamics.
pub fn guide(
    ftype: &FollowerType,
    x_init: &JointState,
    w_theta: &MlpParams,
    cfg: &PlanConfig,
    params: &LeaderCostParams,
    dyn_cfg: &DynamicsConfig,
    ws: &Workspace,
) -> Result<Trajectory, CoreError> {
    cfg.validate()?;
    if !env::is_feasible(x_init.leader_pos, ws) || !env::is_feasible(x_init.follower_pos, ws) {
        return Err(CoreError::InfeasibleStart(format!(
            "leader {:?} / follower {:?}",
            x_init.leader_pos, x_init.follower_pos
        )));
    }
    let mut traj = Trajectory {
        states: vec![*x_init],
        leader_controls: Vec::new(),
        follower_controls: Vec::new(),
        stage_costs: Vec::new(),
        reason: TerminationReason::Timeout,
        guided: true,
        diags: Vec::new(),
    };
    if reached(x_init, ws) {
        traj.reason = TerminationReason::Reached;
        return Ok(traj);
    }
    let mut warm: Option<PlanResult> = None;
    for _ in 0..cfg.max_time_steps {
        let x = *traj.states.last().unwrap();
        let plan = solve_ocp(&x, w_theta, params, cfg, dyn_cfg, ws, warm.as_ref())?;
        let refined = pmp_refine(&plan, &x, w_theta, params, cfg, dyn_cfg, ws);
        let ul = refined.controls[0];
        let uf = match best_response(&x, &ul, ftype, ws, dyn_cfg.dt) {
            Ok(uf) => uf,
            Err(CoreError::FollowerTrapped) => {
                traj.reason = TerminationReason::Trapped;
                return Ok(traj);
            }
            Err(e) => return Err(e),
        };
        let next = joint_step(&x, &ul, &uf, dyn_cfg.dt);
        traj.leader_controls.push(ul);
        traj.follower_controls.push(uf);
        traj.stage_costs.push(leader_stage_cost(&x, &ul, params, ws.destination));
        traj.diags.push(StepDiag {
            objective_initial: plan.objective,
            objective_refined: refined.objective,
            ocp_iterations: plan.iterations,
            refine_improved: refined.objective < plan.objective,
        });
        traj.states.push(next);
        warm = Some(refined);
        if reached(&next, ws) {
            traj.reason = TerminationReason::Reached;
            break;
        }
    }
    Ok(traj)
}

/// Zero-guidance rollout: the follower repeatedly applies its myopic
/// policy. Leader fields stay empty.
pub fn run_unguided(
    ftype: &FollowerType,
    start: Vector2<f64>,
    heading: f64,
    cfg: &PlanConfig,
    dyn_cfg: &DynamicsConfig,
    ws: &Workspace,
) -> Result<Trajectory, CoreError> {
    if !env::is_feasible(start, ws) {
        return Err(CoreError::InfeasibleStart(format!("follower {start:?}")));
    }
    // The leader slot is never read by the myopic policy; park it on the
    // follower so recorded states stay well-formed.
    let mut traj = Trajectory {
        states: vec![JointState::new(start, start, heading)],
        leader_controls: Vec::new(),
        follower_controls: Vec::new(),
        stage_costs: Vec::new(),
        reason: TerminationReason::Timeout,
        guided: false,
        diags: Vec::new(),
    };
    if reached(&traj.states[0], ws) {
        traj.reason = TerminationReason::Reached;
        return Ok(traj);
    }
    for _ in 0..cfg.max_time_steps {
        let x = *traj.states.last().unwrap();
        let uf = match myopic_policy(&x, ftype, ws, dyn_cfg.dt) {
            Ok(uf) => uf,
            Err(CoreError::FollowerTrapped) => {
                traj.reason = TerminationReason::Trapped;
                return Ok(traj);
            }
            Err(e) => return Err(e),
        };
        let cost = myopic_cost(&uf, &x, ftype, ws, dyn_cfg.dt);
        let (fp, fh) = crate::dynamics::follower_step(x.follower_pos, x.follower_heading, &uf, dyn_cfg.dt);
        let next = JointState::new(fp, fp, fh);
        traj.follower_controls.push(uf);
        traj.stage_costs.push(cost);
        traj.states.push(next);
        if reached(&next, ws) {
            traj.reason = TerminationReason::Reached;
            break;
        }
        // A stationary optimal control away from the goal means the
        // follower is stuck for good.
        if fp == x.follower_pos && fh == x.follower_heading {
            traj.reason = TerminationReason::Trapped;
            break;
        }
    }
    Ok(traj)
}

pub const TRAJECTORY_HEADER: &str = "t,pLx,pLy,pFx,pFy,phi,uLx,uLy,vF,wF,stage_cost,reason";

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.follower_controls.len()
    }

    /// CSV with one row per state; control columns hold the control applied
    /// at that state (empty on the final row), and the termination reason
    /// sits on the last row. Floats round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        let n = self.states.len();
        for (t, s) in self.states.iter().enumerate() {
            let leader_cols = if self.guided {
                format!("{},{}", s.leader_pos.x, s.leader_pos.y)
            } else {
                ",".to_string()
            };
            let (ctrl_cols, cost_col) = if t + 1 < n {
                let ul = if self.guided {
                    let u = &self.leader_controls[t];
                    format!("{},{}", u.velocity.x, u.velocity.y)
                } else {
                    ",".to_string()
                };
                let uf = &self.follower_controls[t];
                (
                    format!("{},{},{}", ul, uf.speed, uf.turn_rate),
                    format!("{}", self.stage_costs[t]),
                )
            } else {
                (",,,".to_string(), String::new())
            };
            let reason = if t + 1 == n { self.reason.as_str() } else { "" };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t, leader_cols, s.follower_pos.x, s.follower_pos.y, s.follower_heading,
                ctrl_cols, format_args!("{cost_col},{reason}"),
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CoreError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == TRAJECTORY_HEADER => {}
            other => {
                return Err(CoreError::Malformed(format!("bad trajectory header: {other:?}")));
            }
        }
        let mut states = Vec::new();
        let mut leader_controls = Vec::new();
        let mut follower_controls = Vec::new();
        let mut stage_costs = Vec::new();
        let mut reason = None;
        let mut guided = true;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 12 {
                return Err(CoreError::Malformed(format!(
                    "trajectory row {}: expected 12 fields, got {}",
                    i + 2,
                    f.len()
                )));
            }
            let num = |s: &str| -> Result<f64, CoreError> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CoreError::Malformed(format!("trajectory row {}: {e}", i + 2)))
            };
            guided = !f[1].trim().is_empty();
            let leader = if guided {
                Vector2::new(num(f[1])?, num(f[2])?)
            } else {
                Vector2::new(num(f[3])?, num(f[4])?)
            };
            states.push(JointState::new(leader, Vector2::new(num(f[3])?, num(f[4])?), num(f[5])?));
            if !f[8].trim().is_empty() {
                if guided {
                    leader_controls.push(LeaderControl::new(num(f[6])?, num(f[7])?));
                }
                follower_controls.push(FollowerControl::new(num(f[8])?, num(f[9])?));
                stage_costs.push(num(f[10])?);
            }
            if !f[11].trim().is_empty() {
                reason = Some(TerminationReason::parse(f[11].trim())?);
            }
        }
        let reason =
            reason.ok_or_else(|| CoreError::Malformed("missing termination reason".into()))?;
        if states.len() != follower_controls.len() + 1 {
            return Err(CoreError::Malformed(format!(
                "{} states do not match {} controls",
                states.len(),
                follower_controls.len()
            )));
        }
        Ok(Self { states, leader_controls, follower_controls, stage_costs, reason, guided, diags: Vec::new() })
    }

    /// Replays the recorded controls through the dynamics and checks every
    /// recorded state against the replay within `tol`.
    pub fn replay_consistent(&self, dt: f64, tol: f64) -> bool {
        for t in 0..self.follower_controls.len() {
            let x = &self.states[t];
            let next = &self.states[t + 1];
            if self.guided {
                let sim = joint_step(x, &self.leader_controls[t], &self.follower_controls[t], dt);
                if (sim.leader_pos - next.leader_pos).amax() > tol
                    || (sim.follower_pos - next.follower_pos).amax() > tol
                    || (sim.follower_heading - next.follower_heading).abs() > tol
                {
                    return false;
                }
            } else {
                let (fp, fh) = crate::dynamics::follower_step(
                    x.follower_pos,
                    x.follower_heading,
                    &self.follower_controls[t],
                    dt,
                );
                if (fp - next.follower_pos).amax() > tol
                    || (fh - next.follower_heading).abs() > tol
                {
                    return false;
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn open_ws() -> Workspace {
        Workspace { obstacles: vec![], ..Workspace::default() }
    }

    fn at_destination(ws: &Workspace) -> JointState {
        JointState::new(ws.destination, ws.destination, 0.0)
    }

    #[test]
    fn stage_cost_examples() {
        let ws = open_ws();
        let p = LeaderCostParams::default();
        let xd = at_destination(&ws);
        assert_eq!(leader_stage_cost(&xd, &LeaderControl::zero(), &p, ws.destination), 0.0);

        // unit offset of the leader x: 2 from Q1 plus 5 from Q2
        let mut x = xd;
        x.leader_pos.x += 1.0;
        assert_relative_eq!(
            leader_stage_cost(&x, &LeaderControl::zero(), &p, ws.destination),
            7.0,
            epsilon = 1e-12
        );

        assert_relative_eq!(
            leader_stage_cost(&xd, &LeaderControl::new(1.0, 0.0), &p, ws.destination),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn terminal_cost_examples() {
        let ws = open_ws();
        let p = LeaderCostParams::default();
        let xd = at_destination(&ws);
        assert_eq!(leader_terminal_cost(&xd, &p, ws.destination), 0.0);

        let mut x = xd;
        x.leader_pos.x += 1.0;
        assert_relative_eq!(leader_terminal_cost(&x, &p, ws.destination), 35.0, epsilon = 1e-12);

        let mut scaled = LeaderCostParams::default();
        scaled.qf1 *= 3.0;
        scaled.qf2 *= 3.0;
        assert_relative_eq!(
            leader_terminal_cost(&x, &scaled, ws.destination),
            105.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mu_term_vanishes_on_exact_rollout() {
        let ws = open_ws();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let w = MlpParams::init(&mut rng::stream(41, &[rng::tags::INIT]));
        let x0 = JointState::new(Vector2::new(2.0, 2.0), Vector2::new(1.5, 2.0), 0.3);
        let h = Horizon {
            x0: &x0,
            w: &w,
            params: &params,
            ws: &ws,
            dt: dyn_cfg.dt,
            u_max: dyn_cfg.u_max,
            steps: 4,
        };
        let u = vec![Vector2::new(0.5, -0.2); 4];
        let y = h.follower_rollout(&u);
        let with_mu = h.objective(&u, &y);
        let mut no_mu_params = params.clone();
        no_mu_params.mu = 0.0;
        let h0 = Horizon { params: &no_mu_params, ..h };
        assert_relative_eq!(with_mu, h0.objective(&u, &y), epsilon = 1e-10);
    }

    #[test]
    fn objective_zero_at_destination_fixed_point() {
        let ws = open_ws();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let w = MlpParams::zeros(); // b == 0: the follower stays put
        let x0 = at_destination(&ws);
        let obj = penalized_objective(
            &[LeaderControl::zero()],
            &[follower_vec(&x0)],
            &x0,
            &w,
            &params,
            &ws,
            &dyn_cfg,
        );
        assert_relative_eq!(obj, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn follower_state_perturbation_adds_exactly_mu_delta_sq() {
        // zero all cost weights except mu so the change isolates the penalty
        let ws = open_ws();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams {
            q1: Matrix5::zeros(),
            q2: Matrix2::zeros(),
            r: Matrix2::zeros(),
            qf1: Matrix5::zeros(),
            qf2: Matrix2::zeros(),
            nu: 0.5,
            mu: 50.0,
        };
        let w = MlpParams::init(&mut rng::stream(42, &[rng::tags::INIT]));
        let x0 = JointState::new(Vector2::new(3.0, 3.0), Vector2::new(2.5, 3.0), -0.2);
        let h = Horizon {
            x0: &x0,
            w: &w,
            params: &params,
            ws: &ws,
            dt: dyn_cfg.dt,
            u_max: dyn_cfg.u_max,
            steps: 3,
        };
        let u = vec![Vector2::new(0.2, 0.1); 3];
        let y = h.follower_rollout(&u);
        let base = h.objective(&u, &y);
        assert_relative_eq!(base, 0.0, epsilon = 1e-12);
        let delta = 0.07;
        let mut y2 = y.clone();
        y2[3].x += delta; // last state: no downstream residual changes
        assert_relative_eq!(h.objective(&u, &y2), 50.0 * delta * delta, epsilon = 1e-10);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let ws = Workspace::default();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let w = MlpParams::init(&mut rng::stream(43, &[rng::tags::INIT]));
        let mut r = rng::stream(44, &[7]);
        let steps = 3;
        for _ in 0..4 {
            // feasible joint state with margin
            let x0 = loop {
                let lp = Vector2::new(r.gen::<f64>() * 10.0, r.gen::<f64>() * 10.0);
                let fp = Vector2::new(r.gen::<f64>() * 10.0, r.gen::<f64>() * 10.0);
                let margin_ok = ws.obstacles.iter().all(|o| {
                    env::scaled_distance(lp, o) > o.safety_dist + 0.2
                        && env::scaled_distance(fp, o) > o.safety_dist + 0.2
                });
                if margin_ok {
                    break JointState::new(lp, fp, r.gen::<f64>() * 2.0 - 1.0);
                }
            };
            let u: Vec<LeaderControl> = (0..steps)
                .map(|_| LeaderControl::new(r.gen::<f64>() - 0.5, r.gen::<f64>() - 0.5))
                .collect();
            let h = Horizon {
                x0: &x0,
                w: &w,
                params: &params,
                ws: &ws,
                dt: dyn_cfg.dt,
                u_max: dyn_cfg.u_max,
                steps,
            };
            let uv: Vec<Vector2<f64>> = u.iter().map(|c| c.velocity).collect();
            let mut y = h.follower_rollout(&uv);
            for yt in y.iter_mut().skip(1) {
                yt.x += 0.01 * (r.gen::<f64>() - 0.5);
                yt.y += 0.01 * (r.gen::<f64>() - 0.5);
                yt.z += 0.01 * (r.gen::<f64>() - 0.5);
            }
            let yfree: Vec<Vector3<f64>> = y[1..].to_vec();
            let (obj, gu, gy) =
                penalized_objective_grad(&u, &yfree, &x0, &w, &params, &ws, &dyn_cfg);
            assert!(obj.is_finite());
            let scale = gu
                .iter()
                .map(|g| g.amax())
                .chain(gy.iter().map(|g| g.amax()))
                .fold(0.0, f64::max);
            let floor = 1e-5 * scale.max(1.0);
            let hstep = 1e-6;
            let eval = |u2: &[LeaderControl], y2: &[Vector3<f64>]| {
                penalized_objective(u2, y2, &x0, &w, &params, &ws, &dyn_cfg)
            };
            for t in 0..steps {
                for k in 0..2 {
                    let mut up = u.clone();
                    let mut un = u.clone();
                    up[t].velocity[k] += hstep;
                    un[t].velocity[k] -= hstep;
                    let fd = (eval(&up, &yfree) - eval(&un, &yfree)) / (2.0 * hstep);
                    let rel = (fd - gu[t][k]).abs() / (fd.abs() + gu[t][k].abs()).max(floor);
                    assert!(rel < 1e-5, "du[{t}][{k}]: fd {fd} vs {}", gu[t][k]);
                }
                for k in 0..3 {
                    let mut yp = yfree.clone();
                    let mut yn = yfree.clone();
                    yp[t][k] += hstep;
                    yn[t][k] -= hstep;
                    let fd = (eval(&u, &yp) - eval(&u, &yn)) / (2.0 * hstep);
                    let rel = (fd - gy[t][k]).abs() / (fd.abs() + gy[t][k].abs()).max(floor);
                    assert!(rel < 1e-5, "dy[{t}][{k}]: fd {fd} vs {}", gy[t][k]);
                }
            }
        }
    }

    #[test]
    fn solver_converges_to_known_optimum_at_destination() {
        let ws = open_ws();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let cfg = PlanConfig { horizon_steps: 5, ocp_max_iter: 400, ..PlanConfig::default() };
        let w = MlpParams::zeros();
        let x0 = at_destination(&ws);
        // junk warm start to force real descent
        let junk = PlanResult {
            controls: vec![LeaderControl::new(1.0, -1.0); 5],
            predicted: vec![JointState::new(ws.destination, ws.destination + Vector2::new(0.4, 0.1), 0.5); 6],
            objective: f64::INFINITY,
            refined: false,
            iterations: 0,
        };
        let plan = solve_ocp(&x0, &w, &params, &cfg, &dyn_cfg, &ws, Some(&junk)).unwrap();
        assert!(plan.objective < 1e-3, "objective = {}", plan.objective);
        for c in &plan.controls {
            assert!(c.velocity.amax() <= dyn_cfg.u_max);
        }
        assert_eq!(plan.predicted[0], x0);
    }

    #[test]
    fn solver_rejects_infeasible_start() {
        let ws = Workspace::default();
        let x0 = JointState::new(ws.obstacles[0].center, Vector2::new(5.0, 5.0), 0.0);
        let err = solve_ocp(
            &x0,
            &MlpParams::zeros(),
            &LeaderCostParams::default(),
            &PlanConfig::default(),
            &DynamicsConfig::default(),
            &ws,
            None,
        );
        assert!(matches!(err, Err(CoreError::InfeasibleStart(_))));
    }

    #[test]
    fn costates_match_hand_derived_lq_backward_pass() {
        // Two steps, no obstacles, zero response model: f is the identity
        // on the follower block and the integrator on the leader block, so
        // lambda_1 = grad g(x_1) + lambda_2 with lambda_2 the terminal
        // gradient. States under zero control never move.
        let ws = open_ws();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let w = MlpParams::zeros();
        let x = JointState::new(Vector2::new(4.0, 6.0), Vector2::new(3.0, 5.0), 0.7);
        let states = vec![x, x, x];
        let u = vec![Vector2::zeros(); 2];
        let lam = costates(&states, &u, &w, &params, &ws, &dyn_cfg);

        let dest = ws.destination;
        let dx = x.as_vector() - target_state(dest);
        let gap = x.leader_pos - x.follower_pos;
        let mut lam2_hand = 2.0 * (params.qf1 * dx);
        let dg = 2.0 * (params.qf2 * gap);
        lam2_hand[0] += dg.x;
        lam2_hand[1] += dg.y;
        lam2_hand[2] -= dg.x;
        lam2_hand[3] -= dg.y;
        let mut lam1_hand = 2.0 * (params.q1 * dx);
        let dg1 = 2.0 * (params.q2 * gap);
        lam1_hand[0] += dg1.x;
        lam1_hand[1] += dg1.y;
        lam1_hand[2] -= dg1.x;
        lam1_hand[3] -= dg1.y;
        let lam1_hand = lam1_hand + lam2_hand;

        for i in 0..5 {
            assert_relative_eq!(lam[2][i], lam2_hand[i], epsilon = 1e-12);
            assert_relative_eq!(lam[1][i], lam1_hand[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn refine_never_increases_objective() {
        let ws = Workspace::default();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let cfg = PlanConfig { ocp_max_iter: 30, ..PlanConfig::default() };
        let w = MlpParams::init(&mut rng::stream(45, &[rng::tags::INIT]));
        let x0 = JointState::new(Vector2::new(1.0, 0.8), Vector2::new(0.5, 0.5), 0.4);
        let plan = solve_ocp(&x0, &w, &params, &cfg, &dyn_cfg, &ws, None).unwrap();
        let refined = pmp_refine(&plan, &x0, &w, &params, &cfg, &dyn_cfg, &ws);
        assert!(refined.objective <= plan.objective);
        for c in &refined.controls {
            assert!(c.velocity.amax() <= dyn_cfg.u_max + 1e-12);
        }
    }

    #[test]
    fn refine_fixed_point_leaves_stationary_plan_unchanged() {
        let ws = open_ws();
        let dyn_cfg = DynamicsConfig::default();
        let params = LeaderCostParams::default();
        let cfg = PlanConfig { horizon_steps: 4, ocp_max_iter: 800, ocp_grad_tol: 1e-10, ..PlanConfig::default() };
        let w = MlpParams::zeros();
        let x0 = at_destination(&ws);
        let plan = solve_ocp(&x0, &w, &params, &cfg, &dyn_cfg, &ws, None).unwrap();
        let refined = pmp_refine(&plan, &x0, &w, &params, &cfg, &dyn_cfg, &ws);
        for (a, b) in plan.controls.iter().zip(&refined.controls) {
            assert_relative_eq!(a.velocity.x, b.velocity.x, epsilon = 1e-9);
            assert_relative_eq!(a.velocity.y, b.velocity.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn guide_immediate_reach_inside_goal() {
        let ws = open_ws();
        let x0 = JointState::new(
            ws.destination + Vector2::new(0.3, 0.0),
            ws.destination + Vector2::new(0.0, 0.2),
            0.0,
        );
        let traj = guide(
            &crate::follower::builtin_types()[0],
            &x0,
            &MlpParams::zeros(),
            &PlanConfig::default(),
            &LeaderCostParams::default(),
            &DynamicsConfig::default(),
            &ws,
        )
        .unwrap();
        assert_eq!(traj.reason, TerminationReason::Reached);
        assert_eq!(traj.steps(), 0);
    }

    #[test]
    fn unguided_immediate_reach_and_open_field_run() {
        let ws = open_ws();
        let cfg = PlanConfig::default();
        let dyn_cfg = DynamicsConfig::default();
        let t = &crate::follower::builtin_types()[3];
        let inside = run_unguided(t, ws.destination + Vector2::new(0.1, 0.0), 0.0, &cfg, &dyn_cfg, &ws).unwrap();
        assert_eq!(inside.reason, TerminationReason::Reached);
        assert_eq!(inside.steps(), 0);

        let run = run_unguided(t, Vector2::new(7.0, 7.0), 0.8, &cfg, &dyn_cfg, &ws).unwrap();
        assert_eq!(run.reason, TerminationReason::Reached);
        assert!(run.replay_consistent(dyn_cfg.dt, 1e-12));
    }

    #[test]
    fn trajectory_csv_round_trip() {
        let ws = open_ws();
        let cfg = PlanConfig::default();
        let dyn_cfg = DynamicsConfig::default();
        let t = &crate::follower::builtin_types()[3];
        let run = run_unguided(t, Vector2::new(7.0, 7.0), 0.8, &cfg, &dyn_cfg, &ws).unwrap();
        let text = run.to_csv();
        let back = Trajectory::from_csv(&text).unwrap();
        assert_eq!(back.states, run.states);
        assert_eq!(back.follower_controls, run.follower_controls);
        assert_eq!(back.reason, run.reason);
        assert!(!back.guided);
        assert!(back.replay_consistent(dyn_cfg.dt, 1e-12));
    }
}
