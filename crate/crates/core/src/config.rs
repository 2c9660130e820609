//! The run configuration: one JSON document with full defaults covering
//! workspace geometry, dynamics, costs, follower types, training and
//! planning. Unknown keys are rejected everywhere.

use crate::dynamics::DynamicsConfig;
use crate::env::Workspace;
use crate::error::CoreError;
use crate::follower::{builtin_types, default_distribution, FollowerFamily, FollowerType, TypeDistribution};
use crate::meta::MetaConfig;
use crate::planner::{LeaderCostParams, PlanConfig};
use nalgebra::{DMatrix, Matrix2, Matrix5};
use serde::{Deserialize, Serialize};

/// Leader cost weights in plain nested-array form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeaderCostConfig {
    pub q1: Vec<Vec<f64>>,
    pub q2: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub qf1: Vec<Vec<f64>>,
    pub qf2: Vec<Vec<f64>>,
    pub nu: f64,
    pub mu: f64,
}

fn matrix_rows<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> Vec<Vec<f64>> {
    (0..N).map(|i| (0..N).map(|j| m[(i, j)]).collect()).collect()
}

impl Default for LeaderCostConfig {
    fn default() -> Self {
        let p = LeaderCostParams::default();
        Self {
            q1: matrix_rows(&p.q1),
            q2: matrix_rows(&p.q2),
            r: matrix_rows(&p.r),
            qf1: matrix_rows(&p.qf1),
            qf2: matrix_rows(&p.qf2),
            nu: p.nu,
            mu: p.mu,
        }
    }
}

fn check_weight_matrix(name: &str, rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>, CoreError> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(CoreError::InvalidConfig(format!("{name} must be {n}x{n}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if !m.iter().all(|v| v.is_finite()) {
        return Err(CoreError::InvalidConfig(format!("{name} has non-finite entries")));
    }
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-9 {
        return Err(CoreError::InvalidConfig(format!("{name} is not symmetric")));
    }
    let eig = m.clone().symmetric_eigenvalues();
    if eig.iter().any(|&e| e < -1e-9) {
        return Err(CoreError::InvalidConfig(format!("{name} is not positive semidefinite")));
    }
    Ok(m)
}

impl LeaderCostConfig {
    pub fn to_params(&self) -> Result<LeaderCostParams, CoreError> {
        let q1 = check_weight_matrix("q1", &self.q1, 5)?;
        let q2 = check_weight_matrix("q2", &self.q2, 2)?;
        let r = check_weight_matrix("r", &self.r, 2)?;
        let qf1 = check_weight_matrix("qf1", &self.qf1, 5)?;
        let qf2 = check_weight_matrix("qf2", &self.qf2, 2)?;
        if !(self.nu > 0.0 && self.mu > 0.0) {
            return Err(CoreError::InvalidConfig("nu and mu must be > 0".into()));
        }
        Ok(LeaderCostParams {
            q1: Matrix5::from_fn(|i, j| q1[(i, j)]),
            q2: Matrix2::from_fn(|i, j| q2[(i, j)]),
            r: Matrix2::from_fn(|i, j| r[(i, j)]),
            qf1: Matrix5::from_fn(|i, j| qf1[(i, j)]),
            qf2: Matrix2::from_fn(|i, j| qf2[(i, j)]),
            nu: self.nu,
            mu: self.mu,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FollowerTypesConfig {
    pub types: Vec<FollowerType>,
    pub distribution: Vec<f64>,
}

impl Default for FollowerTypesConfig {
    fn default() -> Self {
        Self { types: builtin_types(), distribution: default_distribution().0 }
    }
}

impl FollowerTypesConfig {
    pub fn to_family(&self) -> Result<FollowerFamily, CoreError> {
        let family = FollowerFamily {
            types: self.types.clone(),
            dist: TypeDistribution(self.distribution.clone()),
        };
        family.validate()?;
        Ok(family)
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub workspace: Workspace,
    pub dynamics: DynamicsConfig,
    pub leader_cost: LeaderCostConfig,
    pub follower_types: FollowerTypesConfig,
    pub meta: MetaConfig,
    pub plan: PlanConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        self.workspace.validate()?;
        if !(self.dynamics.dt > 0.0 && self.dynamics.u_max > 0.0) {
            return Err(CoreError::InvalidConfig("dt and u_max must be > 0".into()));
        }
        self.leader_cost.to_params()?;
        self.follower_types.to_family()?;
        self.meta.validate()?;
        self.plan.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, CoreError> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| CoreError::InvalidConfig(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
