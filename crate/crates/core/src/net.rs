//! The parameterized best-response model `b(x, u^L; w)`: a fixed 7-50-50-2
//! feedforward network (rectifier hidden units, tanh output) with exact
//! analytic gradients with respect to both parameters and inputs.

use crate::dynamics::{FollowerControl, JointState, LeaderControl};
use crate::error::CoreError;
use crate::parallel::{fixed_chunks, map_ordered};
use nalgebra::SMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const INPUT_DIM: usize = 7;
pub const HIDDEN: usize = 50;
pub const OUTPUT_DIM: usize = 2;
pub const ARCH: [usize; 4] = [INPUT_DIM, HIDDEN, HIDDEN, OUTPUT_DIM];

/// Batch gradients are accumulated over this many fixed chunks so that the
/// reduction order (and therefore every bit of the result) is independent
/// of the worker count.
const GRAD_CHUNKS: usize = 8;

/// One observed interaction: the follower's exact best response to a
/// state/leader-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrSample {
    pub state: JointState,
    pub leader_control: LeaderControl,
    pub response: FollowerControl,
}

/// Network weights and biases. The same container doubles as a gradient,
/// which keeps the elementwise update arithmetic in one place.
///
/// Layout: `w[k]` is row-major `(fan_out x fan_in)` for layer `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    w: [Vec<f64>; 3],
    b: [Vec<f64>; 3],
}

/// Layer sizes as (fan_in, fan_out) triples.
const LAYERS: [(usize, usize); 3] =
    [(INPUT_DIM, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, OUTPUT_DIM)];

impl MlpParams {
    pub fn zeros() -> Self {
        Self {
            w: [
                vec![0.0; LAYERS[0].0 * LAYERS[0].1],
                vec![0.0; LAYERS[1].0 * LAYERS[1].1],
                vec![0.0; LAYERS[2].0 * LAYERS[2].1],
            ],
            b: [vec![0.0; LAYERS[0].1], vec![0.0; LAYERS[1].1], vec![0.0; LAYERS[2].1]],
        }
    }

    /// Symmetric uniform fan-in initialization, `U(-1/sqrt(n_in), 1/sqrt(n_in))`.
    pub fn init(rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros();
        for k in 0..3 {
            let bound = 1.0 / (LAYERS[k].0 as f64).sqrt();
            for v in p.w[k].iter_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
            for v in p.b[k].iter_mut() {
                *v = (rng.gen::<f64>() * 2.0 - 1.0) * bound;
            }
        }
        p
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        for k in 0..3 {
            if self.w[k].len() != LAYERS[k].0 * LAYERS[k].1 || self.b[k].len() != LAYERS[k].1 {
                return Err(CoreError::ShapeMismatch {
                    expected: ARCH.to_vec(),
                    got: vec![self.w[k].len(), self.b[k].len()],
                });
            }
            if let Some(i) = self.w[k].iter().position(|v| !v.is_finite()) {
                return Err(CoreError::NonFiniteParam(format!("w[{k}][{i}]")));
            }
            if let Some(i) = self.b[k].iter().position(|v| !v.is_finite()) {
                return Err(CoreError::NonFiniteParam(format!("b[{k}][{i}]")));
            }
        }
        Ok(())
    }

    /// `self - step * grad`, elementwise.
    pub fn sgd_step(&self, grad: &MlpParams, step: f64) -> MlpParams {
        let mut out = self.clone();
        for k in 0..3 {
            for (o, g) in out.w[k].iter_mut().zip(&grad.w[k]) {
                *o -= step * g;
            }
            for (o, g) in out.b[k].iter_mut().zip(&grad.b[k]) {
                *o -= step * g;
            }
        }
        out
    }

    /// `self += other * weight`, elementwise.
    pub fn add_scaled(&mut self, other: &MlpParams, weight: f64) {
        for k in 0..3 {
            for (o, g) in self.w[k].iter_mut().zip(&other.w[k]) {
                *o += weight * g;
            }
            for (o, g) in self.b[k].iter_mut().zip(&other.b[k]) {
                *o += weight * g;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for k in 0..3 {
            self.w[k].iter_mut().for_each(|v| *v *= s);
            self.b[k].iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Total parameter count (flat view used by gradient diagnostics).
    pub fn flat_len(&self) -> usize {
        LAYERS.iter().map(|(i, o)| i * o + o).sum()
    }

    pub fn flat_get(&self, mut idx: usize) -> f64 {
        for k in 0..3 {
            let (n_in, n_out) = LAYERS[k];
            if idx < n_in * n_out {
                return self.w[k][idx];
            }
            idx -= n_in * n_out;
            if idx < n_out {
                return self.b[k][idx];
            }
            idx -= n_out;
        }
        panic!("flat index out of range");
    }

    pub fn flat_add(&mut self, mut idx: usize, delta: f64) {
        for k in 0..3 {
            let (n_in, n_out) = LAYERS[k];
            if idx < n_in * n_out {
                self.w[k][idx] += delta;
                return;
            }
            idx -= n_in * n_out;
            if idx < n_out {
                self.b[k][idx] += delta;
                return;
            }
            idx -= n_out;
        }
        panic!("flat index out of range");
    }

    /// Normalized inputs: positions / 10, heading / pi, leader control / u_max.
    pub fn normalize_input(x: &JointState, ul: &LeaderControl, u_max: f64) -> [f64; INPUT_DIM] {
        [
            x.leader_pos.x / 10.0,
            x.leader_pos.y / 10.0,
            x.follower_pos.x / 10.0,
            x.follower_pos.y / 10.0,
            x.follower_heading / PI,
            ul.velocity.x / u_max,
            ul.velocity.y / u_max,
        ]
    }

    fn forward_raw(&self, inp: &[f64; INPUT_DIM]) -> Activations {
        let mut a1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let row = &self.w[0][j * INPUT_DIM..(j + 1) * INPUT_DIM];
            let mut z = self.b[0][j];
            for i in 0..INPUT_DIM {
                z += row[i] * inp[i];
            }
            a1[j] = if z > 0.0 { z } else { 0.0 };
        }
        let mut a2 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let row = &self.w[1][j * HIDDEN..(j + 1) * HIDDEN];
            let mut z = self.b[1][j];
            for i in 0..HIDDEN {
                z += row[i] * a1[i];
            }
            a2[j] = if z > 0.0 { z } else { 0.0 };
        }
        let mut out = [0.0; OUTPUT_DIM];
        for o in 0..OUTPUT_DIM {
            let row = &self.w[2][o * HIDDEN..(o + 1) * HIDDEN];
            let mut z = self.b[2][o];
            for i in 0..HIDDEN {
                z += row[i] * a2[i];
            }
            out[o] = z.tanh();
        }
        Activations { inp: *inp, a1, a2, out }
    }

    /// Predicted follower response, each component in `(-1, 1)`.
    pub fn forward(&self, x: &JointState, ul: &LeaderControl, u_max: f64) -> FollowerControl {
        let act = self.forward_raw(&Self::normalize_input(x, ul, u_max));
        FollowerControl::new(act.out[0], act.out[1])
    }

    /// Mean squared residual over the dataset.
    pub fn task_loss(&self, data: &[BrSample], u_max: f64) -> Result<f64, CoreError> {
        Ok(self.loss_and_grad_impl(data, u_max, false)?.0)
    }

    /// Exact backpropagated gradient of [`Self::task_loss`].
    pub fn loss_grad(&self, data: &[BrSample], u_max: f64) -> Result<MlpParams, CoreError> {
        Ok(self.loss_and_grad(data, u_max)?.1)
    }

    /// Loss and gradient in one pass.
    pub fn loss_and_grad(
        &self,
        data: &[BrSample],
        u_max: f64,
    ) -> Result<(f64, MlpParams), CoreError> {
        let (loss, grad) = self.loss_and_grad_impl(data, u_max, true)?;
        Ok((loss, grad.expect("gradient requested")))
    }

    fn loss_and_grad_impl(
        &self,
        data: &[BrSample],
        u_max: f64,
        want_grad: bool,
    ) -> Result<(f64, Option<MlpParams>), CoreError> {
        if data.is_empty() {
            return Err(CoreError::EmptyDataset);
        }
        let chunks = fixed_chunks(data.len(), GRAD_CHUNKS);
        let parts = map_ordered(&chunks, |range| {
            let mut grad = want_grad.then(MlpParams::zeros);
            let mut loss_sum = 0.0;
            for s in &data[range.clone()] {
                loss_sum += self.accumulate_sample(s, u_max, grad.as_mut());
            }
            (loss_sum, grad)
        });
        let inv_n = 1.0 / data.len() as f64;
        let mut loss = 0.0;
        let mut total = want_grad.then(MlpParams::zeros);
        for (l, g) in parts {
            loss += l;
            if let (Some(total), Some(g)) = (total.as_mut(), g.as_ref()) {
                total.add_scaled(g, 1.0);
            }
        }
        if let Some(total) = total.as_mut() {
            total.scale(inv_n);
        }
        Ok((loss * inv_n, total))
    }

    /// Adds one sample's squared-residual gradient into `grad` (unscaled)
    /// and returns the sample's squared residual.
    fn accumulate_sample(&self, s: &BrSample, u_max: f64, grad: Option<&mut MlpParams>) -> f64 {
        let inp = Self::normalize_input(&s.state, &s.leader_control, u_max);
        let act = self.forward_raw(&inp);
        let r = [act.out[0] - s.response.speed, act.out[1] - s.response.turn_rate];
        let loss = r[0] * r[0] + r[1] * r[1];
        let Some(grad) = grad else { return loss };

        // delta3 = dL/dz3 through the tanh output
        let mut d3 = [0.0; OUTPUT_DIM];
        for o in 0..OUTPUT_DIM {
            d3[o] = 2.0 * r[o] * (1.0 - act.out[o] * act.out[o]);
        }
        for o in 0..OUTPUT_DIM {
            let row = &mut grad.w[2][o * HIDDEN..(o + 1) * HIDDEN];
            for i in 0..HIDDEN {
                row[i] += d3[o] * act.a2[i];
            }
            grad.b[2][o] += d3[o];
        }
        // rectifier subgradient at 0 taken as 0: active iff a > 0
        let mut d2 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            if act.a2[j] > 0.0 {
                let mut acc = 0.0;
                for o in 0..OUTPUT_DIM {
                    acc += self.w[2][o * HIDDEN + j] * d3[o];
                }
                d2[j] = acc;
            }
        }
        for j in 0..HIDDEN {
            if d2[j] != 0.0 {
                let row = &mut grad.w[1][j * HIDDEN..(j + 1) * HIDDEN];
                for i in 0..HIDDEN {
                    row[i] += d2[j] * act.a1[i];
                }
                grad.b[1][j] += d2[j];
            }
        }
        let mut d1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            if act.a1[j] > 0.0 {
                let mut acc = 0.0;
                for k in 0..HIDDEN {
                    acc += self.w[1][k * HIDDEN + j] * d2[k];
                }
                d1[j] = acc;
            }
        }
        for j in 0..HIDDEN {
            if d1[j] != 0.0 {
                let row = &mut grad.w[0][j * INPUT_DIM..(j + 1) * INPUT_DIM];
                for i in 0..INPUT_DIM {
                    row[i] += d1[j] * inp[i];
                }
                grad.b[0][j] += d1[j];
            }
        }
        loss
    }

    /// Jacobian of the output with respect to the raw `(x, u^L)` inputs,
    /// including the input-normalization scaling. Column order matches
    /// [`Self::normalize_input`].
    pub fn input_grad(
        &self,
        x: &JointState,
        ul: &LeaderControl,
        u_max: f64,
    ) -> SMatrix<f64, OUTPUT_DIM, INPUT_DIM> {
        self.forward_with_input_grad(x, ul, u_max).1
    }

    /// Forward pass and input Jacobian sharing one evaluation.
    pub fn forward_with_input_grad(
        &self,
        x: &JointState,
        ul: &LeaderControl,
        u_max: f64,
    ) -> (FollowerControl, SMatrix<f64, OUTPUT_DIM, INPUT_DIM>) {
        let inp = Self::normalize_input(x, ul, u_max);
        let act = self.forward_raw(&inp);
        let scale =
            [0.1, 0.1, 0.1, 0.1, 1.0 / PI, 1.0 / u_max, 1.0 / u_max];
        let mut jac = SMatrix::<f64, OUTPUT_DIM, INPUT_DIM>::zeros();
        for o in 0..OUTPUT_DIM {
            let s3 = 1.0 - act.out[o] * act.out[o];
            let mut u2 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                if act.a2[j] > 0.0 {
                    u2[j] = self.w[2][o * HIDDEN + j] * s3;
                }
            }
            let mut u1 = [0.0; HIDDEN];
            for j in 0..HIDDEN {
                if act.a1[j] > 0.0 {
                    let mut acc = 0.0;
                    for k in 0..HIDDEN {
                        acc += self.w[1][k * HIDDEN + j] * u2[k];
                    }
                    u1[j] = acc;
                }
            }
            for i in 0..INPUT_DIM {
                let mut acc = 0.0;
                for j in 0..HIDDEN {
                    acc += self.w[0][j * INPUT_DIM + i] * u1[j];
                }
                jac[(o, i)] = acc * scale[i];
            }
        }
        (FollowerControl::new(act.out[0], act.out[1]), jac)
    }

    pub fn to_checkpoint(&self, meta: CheckpointMeta) -> Checkpoint {
        let weights = (0..3)
            .map(|k| {
                let (n_in, n_out) = LAYERS[k];
                (0..n_out).map(|o| self.w[k][o * n_in..(o + 1) * n_in].to_vec()).collect()
            })
            .collect();
        Checkpoint {
            arch: ARCH.to_vec(),
            weights,
            biases: self.b.iter().map(|b| b.clone()).collect(),
            meta,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CoreError> {
        if ck.arch != ARCH {
            return Err(CoreError::ShapeMismatch { expected: ARCH.to_vec(), got: ck.arch.clone() });
        }
        if ck.weights.len() != 3 || ck.biases.len() != 3 {
            return Err(CoreError::ShapeMismatch {
                expected: ARCH.to_vec(),
                got: vec![ck.weights.len(), ck.biases.len()],
            });
        }
        let mut p = Self::zeros();
        for k in 0..3 {
            let (n_in, n_out) = LAYERS[k];
            if ck.weights[k].len() != n_out || ck.weights[k].iter().any(|r| r.len() != n_in) {
                return Err(CoreError::ShapeMismatch {
                    expected: vec![n_out, n_in],
                    got: vec![ck.weights[k].len()],
                });
            }
            if ck.biases[k].len() != n_out {
                return Err(CoreError::ShapeMismatch {
                    expected: vec![n_out],
                    got: vec![ck.biases[k].len()],
                });
            }
            for (o, row) in ck.weights[k].iter().enumerate() {
                p.w[k][o * n_in..(o + 1) * n_in].copy_from_slice(row);
            }
            p.b[k].copy_from_slice(&ck.biases[k]);
        }
        p.validate()?;
        Ok(p)
    }
}

struct Activations {
    inp: [f64; INPUT_DIM],
    a1: [f64; HIDDEN],
    a2: [f64; HIDDEN],
    out: [f64; OUTPUT_DIM],
}

/// JSON checkpoint: `{"arch": [7,50,50,2], "weights": [...], "biases": [...],
/// "meta": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub arch: Vec<usize>,
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub kind: String,
    pub iterations: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;
    use rand::Rng;

    fn sample_state(rng: &mut impl Rng) -> (JointState, LeaderControl) {
        let x = JointState::new(
            Vector2::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0),
            Vector2::new(rng.gen::<f64>() * 10.0, rng.gen::<f64>() * 10.0),
            (rng.gen::<f64>() * 2.0 - 1.0) * PI,
        );
        let ul = LeaderControl::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0);
        (x, ul)
    }

    fn random_batch(seed: u64, n: usize) -> Vec<BrSample> {
        let mut r = rng::stream(seed, &[99]);
        (0..n)
            .map(|_| {
                let (state, leader_control) = sample_state(&mut r);
                let response = FollowerControl::new(
                    r.gen::<f64>() * 1.8 - 0.9,
                    r.gen::<f64>() * 1.8 - 0.9,
                );
                BrSample { state, leader_control, response }
            })
            .collect()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::zeros();
        let (x, ul) = sample_state(&mut rng::stream(1, &[0]));
        let out = p.forward(&x, &ul, 2.0);
        assert_eq!(out, FollowerControl::zero());
        let jac = p.input_grad(&x, &ul, 2.0);
        assert_eq!(jac, SMatrix::<f64, 2, 7>::zeros());
    }

    #[test]
    fn forward_is_pure_and_in_range() {
        let p = MlpParams::init(&mut rng::stream(3, &[rng::tags::INIT]));
        let (x, ul) = sample_state(&mut rng::stream(4, &[0]));
        let a = p.forward(&x, &ul, 2.0);
        let b = p.forward(&x, &ul, 2.0);
        assert_eq!(a, b);
        assert!(a.speed.abs() < 1.0 && a.turn_rate.abs() < 1.0);
    }

    #[test]
    fn task_loss_examples() {
        let p = MlpParams::zeros();
        let mut s = random_batch(5, 1);
        s[0].response = FollowerControl::zero();
        assert_eq!(p.task_loss(&s, 2.0).unwrap(), 0.0);

        // prediction - label = [0.1, 0] -> loss 0.01
        s[0].response = FollowerControl::new(-0.1, 0.0);
        assert_relative_eq!(p.task_loss(&s, 2.0).unwrap(), 0.01, epsilon = 1e-15);
    }

    #[test]
    fn task_loss_order_invariant() {
        let p = MlpParams::init(&mut rng::stream(6, &[rng::tags::INIT]));
        let mut batch = random_batch(7, 33);
        let a = p.task_loss(&batch, 2.0).unwrap();
        batch.reverse();
        let b = p.task_loss(&batch, 2.0).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let p = MlpParams::zeros();
        assert!(matches!(p.task_loss(&[], 2.0), Err(CoreError::EmptyDataset)));
        assert!(matches!(p.loss_grad(&[], 2.0), Err(CoreError::EmptyDataset)));
    }

    #[test]
    fn zero_loss_batch_has_zero_gradient() {
        let p = MlpParams::zeros();
        let mut batch = random_batch(8, 4);
        for s in &mut batch {
            s.response = FollowerControl::zero();
        }
        let g = p.loss_grad(&batch, 2.0).unwrap();
        assert_eq!(g, MlpParams::zeros());
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let p = MlpParams::init(&mut rng::stream(9, &[rng::tags::INIT]));
        let batch = random_batch(10, 2);
        let g = p.loss_grad(&batch, 2.0).unwrap();
        let g0 = p.loss_grad(&batch[..1], 2.0).unwrap();
        let g1 = p.loss_grad(&batch[1..], 2.0).unwrap();
        for i in (0..g.flat_len()).step_by(37) {
            assert_relative_eq!(
                g.flat_get(i),
                0.5 * (g0.flat_get(i) + g1.flat_get(i)),
                epsilon = 1e-14,
                max_relative = 1e-12
            );
        }
    }

    /// Guarded relative error against a scale floor, so dead coordinates
    /// with exactly-zero analytic and finite-difference values compare as 0.
    pub(crate) fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(floor)
    }

    #[test]
    fn parameter_gradient_matches_central_differences() {
        let p = MlpParams::init(&mut rng::stream(11, &[rng::tags::INIT]));
        let batch = random_batch(12, 3);
        let g = p.loss_grad(&batch, 2.0).unwrap();
        let scale = (0..g.flat_len()).map(|i| g.flat_get(i).abs()).fold(0.0, f64::max);
        let floor = 1e-6 * scale.max(1.0);
        let h = 1e-6;
        for i in (0..p.flat_len()).step_by(53) {
            let mut pp = p.clone();
            pp.flat_add(i, h);
            let mut pm = p.clone();
            pm.flat_add(i, -h);
            let fd = (pp.task_loss(&batch, 2.0).unwrap() - pm.task_loss(&batch, 2.0).unwrap())
                / (2.0 * h);
            assert!(
                rel_err(fd, g.flat_get(i), floor) < 1e-6,
                "param {i}: fd = {fd}, analytic = {}",
                g.flat_get(i)
            );
        }
    }

    #[test]
    fn input_jacobian_matches_central_differences() {
        let p = MlpParams::init(&mut rng::stream(13, &[rng::tags::INIT]));
        let (x, ul) = sample_state(&mut rng::stream(14, &[0]));
        let jac = p.input_grad(&x, &ul, 2.0);
        let scale = jac.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let floor = 1e-6 * scale.max(1.0);
        let h = 1e-6;
        for col in 0..INPUT_DIM {
            let perturb = |delta: f64| -> [f64; 2] {
                let mut xs = x;
                let mut uls = ul;
                match col {
                    0 => xs.leader_pos.x += delta,
                    1 => xs.leader_pos.y += delta,
                    2 => xs.follower_pos.x += delta,
                    3 => xs.follower_pos.y += delta,
                    4 => xs.follower_heading += delta,
                    5 => uls.velocity.x += delta,
                    _ => uls.velocity.y += delta,
                }
                let out = p.forward(&xs, &uls, 2.0);
                [out.speed, out.turn_rate]
            };
            let up = perturb(h);
            let dn = perturb(-h);
            for row in 0..OUTPUT_DIM {
                let fd = (up[row] - dn[row]) / (2.0 * h);
                assert!(
                    rel_err(fd, jac[(row, col)], floor) < 1e-6,
                    "jac[{row},{col}]: fd = {fd}, analytic = {}",
                    jac[(row, col)]
                );
            }
        }
    }

    #[test]
    fn frozen_input_column_is_zero() {
        // Zero first-layer weights on the heading column: its Jacobian
        // column must vanish.
        let mut p = MlpParams::init(&mut rng::stream(15, &[rng::tags::INIT]));
        for j in 0..HIDDEN {
            p.w[0][j * INPUT_DIM + 4] = 0.0;
        }
        let (x, ul) = sample_state(&mut rng::stream(16, &[0]));
        let jac = p.input_grad(&x, &ul, 2.0);
        assert_eq!(jac[(0, 4)], 0.0);
        assert_eq!(jac[(1, 4)], 0.0);
    }

    #[test]
    fn sgd_step_identities() {
        let p = MlpParams::init(&mut rng::stream(17, &[rng::tags::INIT]));
        let g = MlpParams::init(&mut rng::stream(18, &[rng::tags::INIT]));
        assert_eq!(p.sgd_step(&MlpParams::zeros(), 0.3), p);
        assert_eq!(p.sgd_step(&g, 0.0), p);
        let twice = p.sgd_step(&g, 0.25).sgd_step(&g, 0.25);
        let once = p.sgd_step(&g, 0.5);
        for i in (0..p.flat_len()).step_by(101) {
            assert_relative_eq!(twice.flat_get(i), once.flat_get(i), epsilon = 1e-15);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_shape_rejection() {
        let p = MlpParams::init(&mut rng::stream(19, &[rng::tags::INIT]));
        let ck = p.to_checkpoint(CheckpointMeta { seed: 19, kind: "test".into(), iterations: 0 });
        let json = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(MlpParams::from_checkpoint(&back).unwrap(), p);

        let mut bad = ck.clone();
        bad.arch = vec![7, 64, 64, 2];
        assert!(matches!(
            MlpParams::from_checkpoint(&bad),
            Err(CoreError::ShapeMismatch { .. })
        ));

        let mut nonfinite = ck.clone();
        nonfinite.weights[1][3][4] = f64::NAN;
        assert!(matches!(
            MlpParams::from_checkpoint(&nonfinite),
            Err(CoreError::NonFiniteParam(_))
        ));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = MlpParams::init(&mut rng::stream(21, &[rng::tags::INIT]));
        let b = MlpParams::init(&mut rng::stream(21, &[rng::tags::INIT]));
        assert_eq!(a, b);
    }
}
