//! Best-response dataset generation with importance sampling near
//! obstacles, train/test splitting, and the dataset CSV format.

use crate::dynamics::{DynamicsConfig, FollowerControl, JointState, LeaderControl};
use crate::env::{is_feasible, scaled_distance, Workspace};
use crate::error::CoreError;
use crate::follower::{best_response, FollowerType};
use crate::net::BrSample;
use crate::parallel::map_ordered;
use nalgebra::Vector2;
use rand::Rng;
use std::f64::consts::PI;

const MAX_REJECTIONS: usize = 10_000;

/// How many samples to draw uniformly over the free space (`k1`) and how
/// many inside the near-obstacle band (`k2`).
#[derive(Debug, Clone, Copy)]
pub struct SamplePlan {
    pub k1: usize,
    pub k2: usize,
    pub kappa: f64,
    /// Band width beyond the safety distance for near-obstacle draws.
    pub band: f64,
    /// Leader positions are drawn within this radius of the follower.
    pub leader_radius: f64,
}

impl SamplePlan {
    /// Splits a total budget by the ratio `kappa = k1 / k2`:
    /// `k2 = round(total / (1 + kappa))`, `k1 = total - k2`.
    /// The band is the region where the type's sensing term is active,
    /// `1 / c4` beyond the safety distance.
    pub fn for_type(total: usize, kappa: f64, ftype: &FollowerType, leader_radius: f64) -> Self {
        let k2 = (total as f64 / (1.0 + kappa)).round() as usize;
        Self { k1: total - k2, k2, kappa, band: 1.0 / ftype.c[3], leader_radius }
    }
}

/// The state/action part of a sample, before the oracle labels it.
#[derive(Debug, Clone, Copy)]
struct Query {
    state: JointState,
    leader_control: LeaderControl,
}

fn draw_feasible_follower(ws: &Workspace, rng: &mut impl Rng) -> Result<Vector2<f64>, CoreError> {
    let span = ws.bounds_max - ws.bounds_min;
    for _ in 0..MAX_REJECTIONS {
        let p = ws.bounds_min + Vector2::new(rng.gen::<f64>() * span.x, rng.gen::<f64>() * span.y);
        if is_feasible(p, ws) {
            return Ok(p);
        }
    }
    Err(CoreError::WorkspaceTooConstrained(MAX_REJECTIONS))
}

/// Uniform draw over the annulus `d < scaled_distance <= d + band` of one
/// obstacle, intersected with the feasible set.
fn draw_banded_follower(
    ws: &Workspace,
    obs_idx: usize,
    band: f64,
    rng: &mut impl Rng,
) -> Result<Vector2<f64>, CoreError> {
    let obs = &ws.obstacles[obs_idx];
    let outer = obs.safety_dist + band;
    let half_x = outer / obs.scaling.x;
    let half_y = outer / obs.scaling.y;
    for _ in 0..MAX_REJECTIONS {
        let p = obs.center
            + Vector2::new(
                (rng.gen::<f64>() * 2.0 - 1.0) * half_x,
                (rng.gen::<f64>() * 2.0 - 1.0) * half_y,
            );
        let d = scaled_distance(p, obs);
        if d > obs.safety_dist && d <= outer && is_feasible(p, ws) {
            return Ok(p);
        }
    }
    Err(CoreError::WorkspaceTooConstrained(MAX_REJECTIONS))
}

fn draw_leader_near(
    follower: Vector2<f64>,
    radius: f64,
    ws: &Workspace,
    rng: &mut impl Rng,
) -> Result<Vector2<f64>, CoreError> {
    for _ in 0..MAX_REJECTIONS {
        // uniform over the disk
        let r = radius * rng.gen::<f64>().sqrt();
        let theta = rng.gen::<f64>() * 2.0 * PI;
        let p = follower + Vector2::new(r * theta.cos(), r * theta.sin());
        if is_feasible(p, ws) {
            return Ok(p);
        }
    }
    Err(CoreError::WorkspaceTooConstrained(MAX_REJECTIONS))
}

fn draw_query(
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    plan: &SamplePlan,
    near_obstacle: bool,
    rng: &mut impl Rng,
) -> Result<Query, CoreError> {
    let follower = if near_obstacle {
        let obs_idx = rng.gen_range(0..ws.obstacles.len());
        draw_banded_follower(ws, obs_idx, plan.band, rng)?
    } else {
        draw_feasible_follower(ws, rng)?
    };
    // gen() is in [0, 1), so this lands in (-pi, pi]
    let heading = PI - rng.gen::<f64>() * 2.0 * PI;
    let leader = draw_leader_near(follower, plan.leader_radius, ws, rng)?;
    let u = dyn_cfg.u_max;
    let leader_control = LeaderControl::new(
        (rng.gen::<f64>() * 2.0 - 1.0) * u,
        (rng.gen::<f64>() * 2.0 - 1.0) * u,
    );
    Ok(Query { state: JointState::new(leader, follower, heading), leader_control })
}

/// Draws `k1 + k2` labeled best-response samples for one follower type.
/// Inputs are drawn sequentially from `rng`; the oracle labels them in
/// input order (labeling is pure, so it can run on worker threads).
pub fn sample_dataset(
    ftype: &FollowerType,
    plan: &SamplePlan,
    ws: &Workspace,
    dyn_cfg: &DynamicsConfig,
    rng: &mut impl Rng,
) -> Result<Vec<BrSample>, CoreError> {
    if plan.k2 > 0 && ws.obstacles.is_empty() {
        return Err(CoreError::InvalidConfig(
            "near-obstacle samples requested but the workspace has no obstacles".into(),
        ));
    }
    let mut queries = Vec::with_capacity(plan.k1 + plan.k2);
    for _ in 0..plan.k1 {
        queries.push(draw_query(ws, dyn_cfg, plan, false, rng)?);
    }
    for _ in 0..plan.k2 {
        queries.push(draw_query(ws, dyn_cfg, plan, true, rng)?);
    }
    let labeled = map_ordered(&queries, |q| {
        best_response(&q.state, &q.leader_control, ftype, ws, dyn_cfg.dt).map(|response| BrSample {
            state: q.state,
            leader_control: q.leader_control,
            response,
        })
    });
    labeled.into_iter().collect()
}

/// Order-preserving disjoint split: the first `round(n * fraction)` samples
/// train, the rest test.
pub fn split(data: &[BrSample], fraction: f64) -> Result<(Vec<BrSample>, Vec<BrSample>), CoreError> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(CoreError::InvalidConfig(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = data.len();
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(CoreError::EmptySplit { n, fraction });
    }
    Ok((data[..n_train].to_vec(), data[n_train..].to_vec()))
}

pub const DATASET_HEADER: &str = "pLx,pLy,pFx,pFy,phi,uLx,uLy,vF,wF";

/// Serializes a dataset to CSV. Floats print in shortest round-trip form,
/// so load(dump(d)) reproduces every bit.
pub fn to_csv(data: &[BrSample]) -> String {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for s in data {
        let x = &s.state;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            x.leader_pos.x,
            x.leader_pos.y,
            x.follower_pos.x,
            x.follower_pos.y,
            x.follower_heading,
            s.leader_control.velocity.x,
            s.leader_control.velocity.y,
            s.response.speed,
            s.response.turn_rate,
        ));
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<BrSample>, CoreError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == DATASET_HEADER => {}
        other => {
            return Err(CoreError::Malformed(format!("bad dataset header: {other:?}")));
        }
    }
    let mut data = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CoreError::Malformed(format!("dataset row {}: {e}", i + 2)))?;
        if fields.len() != 9 {
            return Err(CoreError::Malformed(format!(
                "dataset row {}: expected 9 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        data.push(BrSample {
            state: JointState::new(
                Vector2::new(fields[0], fields[1]),
                Vector2::new(fields[2], fields[3]),
                fields[4],
            ),
            leader_control: LeaderControl::new(fields[5], fields[6]),
            response: FollowerControl::new(fields[7], fields[8]),
        });
    }
    Ok(data)
}
