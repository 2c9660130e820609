//! Ground-truth follower decision model: the typed myopic cost, its exact
//! best response, the zero-guidance policy, and the type registry.

use crate::dynamics::{leader_step, FollowerControl, JointState, LeaderControl};
use crate::env::{scaled_distance, sensing_penalty, Workspace};
use crate::error::CoreError;
use nalgebra::Vector2;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Cost weights `[c1, c2, c3, c4]` identifying one follower variant:
/// destination pull, guidance pull, control effort, sensing sharpness.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FollowerType {
    pub id: u8,
    pub c: [f64; 4],
}

impl FollowerType {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.c.iter().any(|&v| !(v > 0.0)) {
            return Err(CoreError::InvalidConfig(format!(
                "follower type {} has non-positive cost weights {:?}",
                self.id, self.c
            )));
        }
        Ok(())
    }
}

/// The five built-in variants. Ids 2-3 follow the leader closely and sense
/// far; 4-5 move cheaply and sense late.
pub fn builtin_types() -> Vec<FollowerType> {
    vec![
        FollowerType { id: 1, c: [1.0, 8.0, 1.0, 0.8] },
        FollowerType { id: 2, c: [1.0, 10.0, 2.0, 0.7] },
        FollowerType { id: 3, c: [1.0, 10.0, 2.0, 0.6] },
        FollowerType { id: 4, c: [1.0, 5.0, 0.5, 1.0] },
        FollowerType { id: 5, c: [1.0, 5.0, 0.3, 1.2] },
    ]
}

/// Probabilities over the registered types.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TypeDistribution(pub Vec<f64>);

impl TypeDistribution {
    pub fn validate(&self, n_types: usize) -> Result<(), CoreError> {
        if self.0.len() != n_types {
            return Err(CoreError::InvalidConfig(format!(
                "distribution has {} entries for {} types",
                self.0.len(),
                n_types
            )));
        }
        if self.0.iter().any(|&p| p < 0.0) {
            return Err(CoreError::InvalidConfig("negative type probability".into()));
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidConfig(format!("type probabilities sum to {sum}")));
        }
        Ok(())
    }
}

pub fn default_distribution() -> TypeDistribution {
    TypeDistribution(vec![0.2, 0.3, 0.1, 0.3, 0.1])
}

/// Registered follower types plus the leader's prior over them.
#[derive(Debug, Clone)]
pub struct FollowerFamily {
    pub types: Vec<FollowerType>,
    pub dist: TypeDistribution,
}

impl FollowerFamily {
    pub fn standard() -> Self {
        Self { types: builtin_types(), dist: default_distribution() }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.types.is_empty() {
            return Err(CoreError::InvalidConfig("no follower types registered".into()));
        }
        for t in &self.types {
            t.validate()?;
        }
        self.dist.validate(self.types.len())
    }

    pub fn by_id(&self, id: u8) -> Result<&FollowerType, CoreError> {
        self.types.iter().find(|t| t.id == id).ok_or(CoreError::UnknownType(id))
    }

    /// Categorical draw from the type distribution.
    pub fn sample_type(&self, rng: &mut impl Rng) -> &FollowerType {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (t, &p) in self.types.iter().zip(&self.dist.0) {
            acc += p;
            if u < acc {
                return t;
            }
        }
        self.types.last().expect("non-empty family")
    }
}

/// The follower's ground-truth myopic cost of a candidate control, based on
/// one-step predictions of both agents. Returns the barrier-violated signal
/// (`f64::INFINITY`) when the predicted position reaches a safety boundary.
pub fn follower_cost(
    uf: &FollowerControl,
    x: &JointState,
    ul: &LeaderControl,
    ftype: &FollowerType,
    ws: &Workspace,
    dt: f64,
) -> f64 {
    let guidance = Some((leader_step(x.leader_pos, ul, dt), ftype.c[1]));
    let phi = x.follower_heading + uf.turn_rate * dt;
    cost_with_heading(uf.speed, uf.turn_rate, phi.cos(), phi.sin(), x, guidance, ftype, ws, dt)
}

/// Shared cost kernel. `guidance` carries the leader's predicted position
/// and c2; `None` drops the guidance term entirely (zero-guidance policy).
#[allow(clippy::too_many_arguments)]
fn cost_with_heading(
    v: f64,
    w: f64,
    cos_phi: f64,
    sin_phi: f64,
    x: &JointState,
    guidance: Option<(Vector2<f64>, f64)>,
    ftype: &FollowerType,
    ws: &Workspace,
    dt: f64,
) -> f64 {
    let [c1, _, c3, c4] = ftype.c;
    let pf = x.follower_pos + Vector2::new(cos_phi, sin_phi) * (v * dt);
    let to_dest = pf - ws.destination;
    let mut cost = c1 * to_dest.norm_squared() + c3 * (v * v + w * w);
    if let Some((pl_plus, c2)) = guidance {
        cost += c2 * (pl_plus - pf).norm_squared();
    }
    for obs in &ws.obstacles {
        let arg = c4 * (scaled_distance(pf, obs) - obs.safety_dist);
        let h = sensing_penalty(arg);
        if h.is_infinite() {
            return f64::INFINITY;
        }
        cost += h;
    }
    cost
}

const GRID_N: usize = 41;
const REFINE_MAX_ITER: usize = 200;
const REFINE_MIN_STEP: f64 = 1e-5;
const FD_STEP: f64 = 1e-6;

/// Grid coordinate for index `i` in `0..GRID_N`, spanning [-1, 1].
fn grid_value(i: usize) -> f64 {
    -1.0 + 2.0 * i as f64 / (GRID_N - 1) as f64
}

/// Minimizes the myopic cost over the control box: a coarse 41 x 41 scan
/// followed by projected steepest descent with finite-difference gradients
/// and step halving. The returned cost never exceeds any coarse grid point.
fn minimize_cost(
    x: &JointState,
    guidance: Option<(Vector2<f64>, f64)>,
    ftype: &FollowerType,
    ws: &Workspace,
    dt: f64,
) -> Result<FollowerControl, CoreError> {
    let eval_dir = |v: f64, w: f64, cos_phi: f64, sin_phi: f64| -> f64 {
        cost_with_heading(v, w, cos_phi, sin_phi, x, guidance, ftype, ws, dt)
    };
    let eval = |v: f64, w: f64| -> f64 {
        let phi = x.follower_heading + w * dt;
        eval_dir(v, w, phi.cos(), phi.sin())
    };

    let mut best_cost = f64::INFINITY;
    let mut best = FollowerControl::zero();
    for wi in 0..GRID_N {
        let w = grid_value(wi);
        let phi = x.follower_heading + w * dt;
        let (sin_phi, cos_phi) = phi.sin_cos();
        for vi in 0..GRID_N {
            let v = grid_value(vi);
            let c = eval_dir(v, w, cos_phi, sin_phi);
            if c < best_cost {
                best_cost = c;
                best = FollowerControl::new(v, w);
            }
        }
    }
    if best_cost.is_infinite() {
        return Err(CoreError::FollowerTrapped);
    }

    // Projected descent along the normalized finite-difference gradient.
    // Normalizing makes the iterates invariant to a uniform positive
    // scaling of the cost weights.
    let mut step = 0.1;
    for _ in 0..REFINE_MAX_ITER {
        let gv = (eval(best.speed + FD_STEP, best.turn_rate)
            - eval(best.speed - FD_STEP, best.turn_rate))
            / (2.0 * FD_STEP);
        let gw = (eval(best.speed, best.turn_rate + FD_STEP)
            - eval(best.speed, best.turn_rate - FD_STEP))
            / (2.0 * FD_STEP);
        let norm = gv.abs().max(gw.abs());
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        let (dv, dw) = (-gv / norm, -gw / norm);
        let mut moved = false;
        while step >= REFINE_MIN_STEP {
            let cand =
                FollowerControl::new(best.speed + step * dv, best.turn_rate + step * dw).clamped();
            let c = eval(cand.speed, cand.turn_rate);
            if c < best_cost {
                best = cand;
                best_cost = c;
                step = (step * 2.0).min(0.25);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(best)
}

/// The follower's exact best response to the leader's announced action.
pub fn best_response(
    x: &JointState,
    ul: &LeaderControl,
    ftype: &FollowerType,
    ws: &Workspace,
    dt: f64,
) -> Result<FollowerControl, CoreError> {
    let guidance = Some((leader_step(x.leader_pos, ul, dt), ftype.c[1]));
    minimize_cost(x, guidance, ftype, ws, dt)
}

/// Zero-guidance policy: the best response with the guidance term removed.
/// Reads no leader quantity at all.
pub fn myopic_policy(
    x: &JointState,
    ftype: &FollowerType,
    ws: &Workspace,
    dt: f64,
) -> Result<FollowerControl, CoreError> {
    minimize_cost(x, None, ftype, ws, dt)
}

/// The cost the zero-guidance follower assigns to a control (no c2 term).
pub fn myopic_cost(
    uf: &FollowerControl,
    x: &JointState,
    ftype: &FollowerType,
    ws: &Workspace,
    dt: f64,
) -> f64 {
    let phi = x.follower_heading + uf.turn_rate * dt;
    cost_with_heading(uf.speed, uf.turn_rate, phi.cos(), phi.sin(), x, None, ftype, ws, dt)
}
