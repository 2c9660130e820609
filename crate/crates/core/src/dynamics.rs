//! Discrete-time motion models: single-integrator leader, unicycle follower
//! with mixed discretization, and the aggregated joint step.

use nalgebra::{Vector2, Vector5};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Step length and leader control bound. One instance is shared by the
/// oracle, the sampler, the trainers and the planner.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Discretization step in seconds.
    pub dt: f64,
    /// Per-axis bound of the leader velocity box.
    pub u_max: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { dt: 0.2, u_max: 2.0 }
    }
}

/// Joint state `[p^L, p^F, phi^F]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub leader_pos: Vector2<f64>,
    pub follower_pos: Vector2<f64>,
    pub follower_heading: f64,
}

impl JointState {
    pub fn new(leader_pos: Vector2<f64>, follower_pos: Vector2<f64>, heading: f64) -> Self {
        Self { leader_pos, follower_pos, follower_heading: heading }
    }

    pub fn as_vector(&self) -> Vector5<f64> {
        Vector5::new(
            self.leader_pos.x,
            self.leader_pos.y,
            self.follower_pos.x,
            self.follower_pos.y,
            self.follower_heading,
        )
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self {
            leader_pos: Vector2::new(v[0], v[1]),
            follower_pos: Vector2::new(v[2], v[3]),
            follower_heading: v[4],
        }
    }
}

/// Leader velocity command, bounded to `[-u_max, u_max]` per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderControl {
    pub velocity: Vector2<f64>,
}

impl LeaderControl {
    pub fn new(vx: f64, vy: f64) -> Self {
        Self { velocity: Vector2::new(vx, vy) }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn clamped(&self, u_max: f64) -> Self {
        Self::new(self.velocity.x.clamp(-u_max, u_max), self.velocity.y.clamp(-u_max, u_max))
    }
}

/// Follower command `[v^F, omega^F]`, both in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerControl {
    pub speed: f64,
    pub turn_rate: f64,
}

impl FollowerControl {
    pub fn new(speed: f64, turn_rate: f64) -> Self {
        Self { speed, turn_rate }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn clamped(&self) -> Self {
        Self::new(self.speed.clamp(-1.0, 1.0), self.turn_rate.clamp(-1.0, 1.0))
    }

    pub fn in_bounds(&self) -> bool {
        self.speed.abs() <= 1.0 && self.turn_rate.abs() <= 1.0
    }
}

/// Normalizes an angle into `(-pi, pi]`.
pub fn wrap_angle(phi: f64) -> f64 {
    let r = phi.rem_euclid(2.0 * PI); // in [0, 2*pi)
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Single-integrator leader: `x + u * dt`.
pub fn leader_step(pos: Vector2<f64>, u: &LeaderControl, dt: f64) -> Vector2<f64> {
    pos + u.velocity * dt
}

/// Unicycle follower with mixed discretization: the heading is advanced
/// first and the linear velocity is applied along the new heading.
pub fn follower_step(
    pos: Vector2<f64>,
    heading: f64,
    u: &FollowerControl,
    dt: f64,
) -> (Vector2<f64>, f64) {
    let phi = wrap_angle(heading + u.turn_rate * dt);
    let next = pos + Vector2::new(phi.cos(), phi.sin()) * (u.speed * dt);
    (next, phi)
}

/// Advances both agents one step. The follower's dynamics do not depend on
/// the leader's state or control.
pub fn joint_step(x: &JointState, ul: &LeaderControl, uf: &FollowerControl, dt: f64) -> JointState {
    let leader = leader_step(x.leader_pos, ul, dt);
    let (fp, fh) = follower_step(x.follower_pos, x.follower_heading, uf, dt);
    JointState::new(leader, fp, fh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn leader_zero_control_is_fixed_point() {
        let p = Vector2::new(0.0, 0.0);
        assert_eq!(leader_step(p, &LeaderControl::zero(), 0.2), p);
    }

    #[test]
    fn leader_step_integrates_velocity() {
        let p = leader_step(Vector2::new(0.0, 0.0), &LeaderControl::new(1.0, 0.0), 0.2);
        assert_relative_eq!(p.x, 0.2, epsilon = 1e-15);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-15);

        let q = leader_step(Vector2::new(9.0, 9.0), &LeaderControl::new(-1.0, -1.0), 0.2);
        assert_relative_eq!(q.x, 8.8, epsilon = 1e-15);
        assert_relative_eq!(q.y, 8.8, epsilon = 1e-15);
    }

    #[test]
    fn follower_zero_control_is_fixed_point() {
        let (p, h) = follower_step(Vector2::new(0.0, 0.0), 0.0, &FollowerControl::zero(), 0.2);
        assert_eq!(p, Vector2::new(0.0, 0.0));
        assert_eq!(h, 0.0);
    }

    #[test]
    fn follower_moves_along_heading() {
        let (p, h) = follower_step(Vector2::new(0.0, 0.0), 0.0, &FollowerControl::new(1.0, 0.0), 0.2);
        assert_relative_eq!(p.x, 0.2, epsilon = 1e-15);
        assert_relative_eq!(p.y, 0.0, epsilon = 1e-15);
        assert_eq!(h, 0.0);
    }

    #[test]
    fn follower_turns_before_moving() {
        // p+ = 0.2 * [cos 0.2, sin 0.2], phi+ = 0.2
        let (p, h) = follower_step(Vector2::new(0.0, 0.0), 0.0, &FollowerControl::new(1.0, 1.0), 0.2);
        assert_relative_eq!(p.x, 0.19601331556824833, epsilon = 1e-15);
        assert_relative_eq!(p.y, 0.03973386615901225, epsilon = 1e-15);
        assert_relative_eq!(h, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn heading_wraps_past_pi() {
        let x = JointState::new(Vector2::zeros(), Vector2::zeros(), PI);
        let next = joint_step(&x, &LeaderControl::zero(), &FollowerControl::new(0.0, 1.0), 0.2);
        assert_relative_eq!(next.follower_heading, -PI + 0.2, epsilon = 1e-12);
    }

    #[test]
    fn joint_step_composes_componentwise() {
        let x = JointState::new(Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0), 0.5);
        let ul = LeaderControl::new(0.7, -0.3);
        let uf = FollowerControl::new(0.4, -0.9);
        let next = joint_step(&x, &ul, &uf, 0.2);
        assert_eq!(next.leader_pos, leader_step(x.leader_pos, &ul, 0.2));
        let (fp, fh) = follower_step(x.follower_pos, x.follower_heading, &uf, 0.2);
        assert_eq!(next.follower_pos, fp);
        assert_eq!(next.follower_heading, fh);
    }

    #[test]
    fn zero_controls_leave_state_unchanged() {
        let x = JointState::new(Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0), 1.1);
        let next = joint_step(&x, &LeaderControl::zero(), &FollowerControl::zero(), 0.2);
        assert_eq!(next, x);
    }

    #[test]
    fn state_vector_round_trip() {
        let x = JointState::new(Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0), -0.7);
        assert_eq!(JointState::from_vector(&x.as_vector()), x);
    }

    proptest! {
        #[test]
        fn wrap_stays_in_half_open_interval(phi in -100.0f64..100.0) {
            let w = wrap_angle(phi);
            prop_assert!(w > -PI && w <= PI, "wrap({phi}) = {w}");
        }

        #[test]
        fn leader_step_is_linear_in_state(
            ax in -10.0f64..10.0, ay in -10.0f64..10.0,
            bx in -10.0f64..10.0, by in -10.0f64..10.0,
            ux in -2.0f64..2.0, uy in -2.0f64..2.0,
        ) {
            let u = LeaderControl::new(ux, uy);
            let a = Vector2::new(ax, ay);
            let b = Vector2::new(bx, by);
            let lhs = leader_step(a + b, &u, 0.2) - leader_step(a, &u, 0.2);
            prop_assert!((lhs - b).norm() < 1e-12);
        }

        #[test]
        fn follower_displacement_bounded_by_speed(
            px in -10.0f64..10.0, py in -10.0f64..10.0,
            phi in -3.0f64..3.0,
            v in -1.0f64..1.0, w in -1.0f64..1.0,
        ) {
            let (p, _) = follower_step(Vector2::new(px, py), phi, &FollowerControl::new(v, w), 0.2);
            let moved = (p - Vector2::new(px, py)).norm();
            prop_assert!(moved <= v.abs() * 0.2 + 1e-12);
        }
    }
}
