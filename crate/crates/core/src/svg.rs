//! Diagnostic SVG rendering of workspaces and trajectories. Hand-built
//! shapes only; figures are for inspection, not publication.

use crate::env::{scaled_distance, sensing_penalty, NormOrder, Workspace};
use crate::follower::FollowerType;
use crate::planner::Trajectory;
use std::fmt::Write;

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 24.0;
const LEADER_COLOR: &str = "#1f77b4";
const FOLLOWER_COLOR: &str = "#ff7f0e";

struct Frame {
    min_x: f64,
    max_y: f64,
    scale: f64,
}

impl Frame {
    fn new(ws: &Workspace) -> Self {
        let span_x = ws.bounds_max.x - ws.bounds_min.x;
        let span_y = ws.bounds_max.y - ws.bounds_min.y;
        let scale = (CANVAS - 2.0 * MARGIN) / span_x.max(span_y);
        Self { min_x: ws.bounds_min.x, max_y: ws.bounds_max.y, scale }
    }

    fn x(&self, wx: f64) -> f64 {
        MARGIN + (wx - self.min_x) * self.scale
    }

    fn y(&self, wy: f64) -> f64 {
        MARGIN + (self.max_y - wy) * self.scale
    }
}

/// Renders the workspace with any number of trajectories. When `sensing`
/// is given, the background shades the follower's sensing cost field for
/// that type.
pub fn render(ws: &Workspace, trajectories: &[&Trajectory], sensing: Option<&FollowerType>) -> String {
    let f = Frame::new(ws);
    let mut s = String::new();
    let w = f.x(ws.bounds_max.x) + MARGIN;
    let h = f.y(ws.bounds_min.y) + MARGIN;
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);

    if let Some(t) = sensing {
        shade_sensing(&mut s, ws, &f, t);
    }

    // arena border
    let _ = write!(
        s,
        r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444" stroke-width="1.5"/>"#,
        f.x(ws.bounds_min.x),
        f.y(ws.bounds_max.y),
        (ws.bounds_max.x - ws.bounds_min.x) * f.scale,
        (ws.bounds_max.y - ws.bounds_min.y) * f.scale,
    );

    for obs in &ws.obstacles {
        let hx = obs.safety_dist / obs.scaling.x * f.scale;
        let hy = obs.safety_dist / obs.scaling.y * f.scale;
        match obs.norm_order {
            NormOrder::LInf => {
                let _ = write!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9e9e9e" stroke="#616161"/>"#,
                    f.x(obs.center.x) - hx,
                    f.y(obs.center.y) - hy,
                    2.0 * hx,
                    2.0 * hy,
                );
            }
            NormOrder::L2 => {
                let _ = write!(
                    s,
                    r#"<ellipse cx="{:.1}" cy="{:.1}" rx="{:.1}" ry="{:.1}" fill="#9e9e9e" stroke="#616161"/>"#,
                    f.x(obs.center.x),
                    f.y(obs.center.y),
                    hx,
                    hy,
                );
            }
        }
    }

    // goal region and destination
    let _ = write!(
        s,
        r#"<circle cx="{:.1}" cy="{:.1}" r="{:.1}" fill="none" stroke="#2e7d32" stroke-dasharray="4 3"/>"#,
        f.x(ws.destination.x),
        f.y(ws.destination.y),
        ws.goal_radius * f.scale,
    );
    let _ = write!(
        s,
        r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="#2e7d32"/>"#,
        f.x(ws.destination.x),
        f.y(ws.destination.y),
    );

    for traj in trajectories {
        if traj.guided {
            polyline(&mut s, &f, traj, Agent::Leader);
        }
        polyline(&mut s, &f, traj, Agent::Follower);
    }
    s.push_str("</svg>");
    s
}

enum Agent {
    Leader,
    Follower,
}

fn polyline(s: &mut String, f: &Frame, traj: &Trajectory, agent: Agent) {
    let (color, pick): (&str, fn(&crate::dynamics::JointState) -> (f64, f64)) = match agent {
        Agent::Leader => (LEADER_COLOR, |x| (x.leader_pos.x, x.leader_pos.y)),
        Agent::Follower => (FOLLOWER_COLOR, |x| (x.follower_pos.x, x.follower_pos.y)),
    };
    let mut points = String::new();
    for st in &traj.states {
        let (x, y) = pick(st);
        let _ = write!(points, "{:.1},{:.1} ", f.x(x), f.y(y));
    }
    let _ = write!(
        s,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
        points.trim_end()
    );
    if let Some(first) = traj.states.first() {
        let (x, y) = pick(first);
        let _ = write!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#, f.x(x), f.y(y));
    }
}

/// Per-cell shading of the sensing cost field, capped for display.
fn shade_sensing(s: &mut String, ws: &Workspace, f: &Frame, ftype: &FollowerType) {
    const CELLS: usize = 100;
    const CAP: f64 = 25.0;
    let c4 = ftype.c[3];
    let dx = (ws.bounds_max.x - ws.bounds_min.x) / CELLS as f64;
    let dy = (ws.bounds_max.y - ws.bounds_min.y) / CELLS as f64;
    for i in 0..CELLS {
        for j in 0..CELLS {
            let cx = ws.bounds_min.x + (i as f64 + 0.5) * dx;
            let cy = ws.bounds_min.y + (j as f64 + 0.5) * dy;
            let p = nalgebra::Vector2::new(cx, cy);
            let mut v: f64 = 0.0;
            for obs in &ws.obstacles {
                v += sensing_penalty(c4 * (scaled_distance(p, obs) - obs.safety_dist));
            }
            if v <= 0.0 {
                continue;
            }
            let k = (v.min(CAP) / CAP * 200.0) as u8;
            let _ = write!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.2}" height="{:.2}" fill="rgb(255,{},{})"/>"#,
                f.x(cx - 0.5 * dx),
                f.y(cy + 0.5 * dy),
                dx * f.scale,
                dy * f.scale,
                255 - k,
                (255 - k).saturating_sub(30),
            );
        }
    }
}
