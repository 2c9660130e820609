//! Workspace geometry: obstacle definitions, scaled distances, feasibility
//! tests, and the barrier / sensing cost primitives shared by the planner
//! and the follower oracle.

use crate::dynamics::JointState;
use crate::error::CoreError;
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// Serializes `Vector2<f64>` as a plain `[x, y]` array.
pub(crate) mod vec2_serde {
    use nalgebra::Vector2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector2<f64>, D::Error> {
        let [x, y] = <[f64; 2]>::deserialize(d)?;
        Ok(Vector2::new(x, y))
    }
}

/// Which norm defines an obstacle's level sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    LInf,
}

/// One obstacle: a level set `||Lambda (p - center)||_l <= safety_dist`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    #[serde(with = "vec2_serde")]
    pub center: Vector2<f64>,
    pub safety_dist: f64,
    #[serde(with = "vec2_serde")]
    pub scaling: Vector2<f64>,
    pub norm_order: NormOrder,
}

impl Obstacle {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.safety_dist > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "obstacle safety_dist must be > 0, got {}",
                self.safety_dist
            )));
        }
        if !(self.scaling.x > 0.0 && self.scaling.y > 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "obstacle scaling components must be > 0, got [{}, {}]",
                self.scaling.x, self.scaling.y
            )));
        }
        Ok(())
    }
}

/// The planning arena: bounds, obstacles, destination and goal radius.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    #[serde(with = "vec2_serde")]
    pub bounds_min: Vector2<f64>,
    #[serde(with = "vec2_serde")]
    pub bounds_max: Vector2<f64>,
    pub obstacles: Vec<Obstacle>,
    #[serde(with = "vec2_serde")]
    pub destination: Vector2<f64>,
    pub goal_radius: f64,
}

impl Default for Workspace {
    /// A 10 x 10 arena with four square obstacles and destination [9, 9].
    fn default() -> Self {
        let square = |cx: f64, cy: f64| Obstacle {
            center: Vector2::new(cx, cy),
            safety_dist: 1.0,
            scaling: Vector2::new(1.0, 1.0),
            norm_order: NormOrder::LInf,
        };
        Self {
            bounds_min: Vector2::new(0.0, 0.0),
            bounds_max: Vector2::new(10.0, 10.0),
            obstacles: vec![square(3.0, 2.5), square(2.5, 7.0), square(6.5, 5.5), square(8.5, 2.0)],
            destination: Vector2::new(9.0, 9.0),
            goal_radius: 0.5,
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.bounds_min.x < self.bounds_max.x && self.bounds_min.y < self.bounds_max.y) {
            return Err(CoreError::InvalidConfig("workspace bounds are empty".into()));
        }
        if !(self.goal_radius > 0.0) {
            return Err(CoreError::InvalidConfig("goal_radius must be > 0".into()));
        }
        for obs in &self.obstacles {
            obs.validate()?;
        }
        if !is_feasible(self.destination, self) {
            return Err(CoreError::InvalidConfig(
                "destination must lie inside the bounds and outside every safety region".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= self.bounds_min.x
            && p.x <= self.bounds_max.x
            && p.y >= self.bounds_min.y
            && p.y <= self.bounds_max.y
    }
}

/// Norm of the componentwise-scaled offset `Lambda .* (p - center)`.
pub fn scaled_distance(p: Vector2<f64>, obs: &Obstacle) -> f64 {
    let dx = obs.scaling.x * (p.x - obs.center.x);
    let dy = obs.scaling.y * (p.y - obs.center.y);
    match obs.norm_order {
        NormOrder::L2 => dx.hypot(dy),
        NormOrder::LInf => dx.abs().max(dy.abs()),
    }
}

/// Gradient of `scaled_distance` with respect to `p`. For the max norm the
/// subgradient concentrates on the dominating coordinate (x wins ties).
pub fn scaled_distance_grad(p: Vector2<f64>, obs: &Obstacle) -> Vector2<f64> {
    let dx = obs.scaling.x * (p.x - obs.center.x);
    let dy = obs.scaling.y * (p.y - obs.center.y);
    match obs.norm_order {
        NormOrder::L2 => {
            let d = dx.hypot(dy);
            if d == 0.0 {
                Vector2::zeros()
            } else {
                Vector2::new(obs.scaling.x * dx / d, obs.scaling.y * dy / d)
            }
        }
        NormOrder::LInf => {
            if dx.abs() >= dy.abs() {
                Vector2::new(obs.scaling.x * dx.signum(), 0.0)
            } else {
                Vector2::new(0.0, obs.scaling.y * dy.signum())
            }
        }
    }
}

/// Log-barrier contribution of one agent position against one obstacle.
/// Returns `f64::INFINITY` on or inside the safety boundary; callers treat
/// that value as an infeasible cost.
pub fn barrier_point(p: Vector2<f64>, obs: &Obstacle, nu: f64) -> f64 {
    let margin = scaled_distance(p, obs) - obs.safety_dist;
    if margin <= 0.0 {
        f64::INFINITY
    } else {
        -nu * margin.ln()
    }
}

/// Value and gradient of [`barrier_point`]. The gradient is undefined on a
/// violated boundary; the value alone signals that case.
pub fn barrier_point_grad(p: Vector2<f64>, obs: &Obstacle, nu: f64) -> (f64, Vector2<f64>) {
    let margin = scaled_distance(p, obs) - obs.safety_dist;
    if margin <= 0.0 {
        (f64::INFINITY, Vector2::zeros())
    } else {
        (-nu * margin.ln(), scaled_distance_grad(p, obs) * (-nu / margin))
    }
}

/// Summed log barrier over all obstacles and both agents.
pub fn barrier_cost(x: &JointState, ws: &Workspace, nu: f64) -> f64 {
    let mut total = 0.0;
    for obs in &ws.obstacles {
        total += barrier_point(x.leader_pos, obs, nu);
        total += barrier_point(x.follower_pos, obs, nu);
        if total.is_infinite() {
            return f64::INFINITY;
        }
    }
    total
}

/// The follower's sensing cost: `-10 ln(arg)` on `(0, 1]`, zero beyond 1,
/// and the barrier-violated signal for non-positive arguments.
pub fn sensing_penalty(arg: f64) -> f64 {
    if arg <= 0.0 {
        f64::INFINITY
    } else if arg <= 1.0 {
        -10.0 * arg.ln()
    } else {
        0.0
    }
}

/// True iff `p` is inside the bounds and strictly outside every safety region.
pub fn is_feasible(p: Vector2<f64>, ws: &Workspace) -> bool {
    ws.contains(p) && outside_safety_regions(p, ws)
}

/// True iff `p` is strictly outside every obstacle's safety region
/// (bounds are not checked).
pub fn outside_safety_regions(p: Vector2<f64>, ws: &Workspace) -> bool {
    ws.obstacles.iter().all(|obs| scaled_distance(p, obs) > obs.safety_dist)
}
