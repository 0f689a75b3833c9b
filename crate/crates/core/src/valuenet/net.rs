//! Attention-pooled value network with hand-rolled exact gradients.
//!
//! Per pedestrian row: an embedding MLP, a pairwise-feature MLP off the
//! embedding, and an attention-score MLP fed with the embedding concatenated
//! with the mean-pooled embedding of all rows. The softmax-weighted sum of
//! pairwise features joins the robot self-state as input to the value head.
//! All math is 64-bit, parameters live in one flat vector, and the backward
//! pass is analytic (checked against finite differences in the tests).

use super::feature::{RotatedFeature, FEATURE_DIM, SELF_STATE_DIM};
use crate::seed;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network shape: {0}")]
    InvalidShape(String),
    #[error("non-finite input feature")]
    NonFiniteInput,
    #[error("forward pass needs at least one feature row")]
    EmptyInput,
    #[error("tape does not match this network (tape for {tape_params} params, net has {net_params})")]
    TapeMismatch { tape_params: usize, net_params: usize },
    #[error("gradient length {got} does not match parameter count {expected}")]
    GradientMismatch { got: usize, expected: usize },
}

/// Layer widths of the four MLPs, each listed input-first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub embed: Vec<usize>,
    pub pairwise: Vec<usize>,
    pub attention: Vec<usize>,
    pub value: Vec<usize>,
}

impl NetShape {
    pub fn standard() -> Self {
        NetShape {
            embed: vec![FEATURE_DIM, 150, 100],
            pairwise: vec![100, 100, 50],
            attention: vec![200, 100, 100, 1],
            value: vec![56, 150, 100, 100, 1],
        }
    }

    pub fn embed_dim(&self) -> usize {
        *self.embed.last().unwrap()
    }

    pub fn pairwise_dim(&self) -> usize {
        *self.pairwise.last().unwrap()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let check = |name: &str, dims: &[usize]| {
            if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
                return Err(NetError::InvalidShape(format!(
                    "{name} must list at least input and output widths, all nonzero: {dims:?}"
                )));
            }
            Ok(())
        };
        check("embed", &self.embed)?;
        check("pairwise", &self.pairwise)?;
        check("attention", &self.attention)?;
        check("value", &self.value)?;
        if self.embed[0] != FEATURE_DIM {
            return Err(NetError::InvalidShape(format!(
                "embed input must be {FEATURE_DIM}, got {}",
                self.embed[0]
            )));
        }
        if self.pairwise[0] != self.embed_dim() {
            return Err(NetError::InvalidShape(format!(
                "pairwise input {} must match embed output {}",
                self.pairwise[0],
                self.embed_dim()
            )));
        }
        if self.attention[0] != 2 * self.embed_dim() {
            return Err(NetError::InvalidShape(format!(
                "attention input {} must be twice the embed output {}",
                self.attention[0],
                self.embed_dim()
            )));
        }
        if *self.attention.last().unwrap() != 1 {
            return Err(NetError::InvalidShape(
                "attention must end in a scalar score".into(),
            ));
        }
        if self.value[0] != SELF_STATE_DIM + self.pairwise_dim() {
            return Err(NetError::InvalidShape(format!(
                "value input {} must be self state {SELF_STATE_DIM} plus pairwise output {}",
                self.value[0],
                self.pairwise_dim()
            )));
        }
        if *self.value.last().unwrap() != 1 {
            return Err(NetError::InvalidShape(
                "value head must end in a scalar".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.plans().1
    }

    /// Named parameter tensors as ranges into the flat parameter vector.
    pub fn tensor_ranges(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let (plans, _) = self.plans();
        let names = ["embed", "pairwise", "attention", "value"];
        let mut out = Vec::new();
        for (name, plan) in names.iter().zip(&plans) {
            for (l, layer) in plan.iter().enumerate() {
                out.push((format!("{name}.{l}.weight"), layer.w_off..layer.b_off));
                out.push((
                    format!("{name}.{l}.bias"),
                    layer.b_off..layer.b_off + layer.out_dim,
                ));
            }
        }
        out
    }

    /// Layer descriptors for the four MLPs plus the total parameter count.
    fn plans(&self) -> ([Vec<Layer>; 4], usize) {
        let mut offset = 0;
        // The embedding keeps a rectifier on its output; the other MLPs end
        // linearly (scores and values are unbounded).
        let embed = plan_mlp(&self.embed, true, &mut offset);
        let pairwise = plan_mlp(&self.pairwise, false, &mut offset);
        let attention = plan_mlp(&self.attention, false, &mut offset);
        let value = plan_mlp(&self.value, false, &mut offset);
        ([embed, pairwise, attention, value], offset)
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
    relu: bool,
}

fn plan_mlp(dims: &[usize], relu_last: bool, offset: &mut usize) -> Vec<Layer> {
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for (l, pair) in dims.windows(2).enumerate() {
        let (in_dim, out_dim) = (pair[0], pair[1]);
        let w_off = *offset;
        let b_off = w_off + in_dim * out_dim;
        *offset = b_off + out_dim;
        layers.push(Layer {
            w_off,
            b_off,
            in_dim,
            out_dim,
            relu: l + 2 < dims.len() || relu_last,
        });
    }
    layers
}

/// Dot product over 32 independent accumulator lanes combined in a fixed
/// tree: bit-deterministic, and wide enough to keep several vector FMAs in
/// flight.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 32];
    let mut chunks_a = a.chunks_exact(32);
    let mut chunks_b = b.chunks_exact(32);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for k in 0..32 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    let mut lanes = [0.0f64; 4];
    for (k, lane) in lanes.iter_mut().enumerate() {
        let part = &acc[k * 8..(k + 1) * 8];
        *lane = ((part[0] + part[1]) + (part[2] + part[3]))
            + ((part[4] + part[5]) + (part[6] + part[7]));
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail
}

fn affine_forward(params: &[f64], layer: &Layer, input: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.reserve(layer.out_dim);
    let w = &params[layer.w_off..layer.w_off + layer.in_dim * layer.out_dim];
    let b = &params[layer.b_off..layer.b_off + layer.out_dim];
    for o in 0..layer.out_dim {
        let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
        let acc = b[o] + dot(row, input);
        out.push(if layer.relu { acc.max(0.0) } else { acc });
    }
}

/// One MLP application; returns all activations with `acts[0]` = input.
fn mlp_forward(params: &[f64], plan: &[Layer], input: &[f64]) -> Vec<Vec<f64>> {
    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(plan.len() + 1);
    acts.push(input.to_vec());
    for layer in plan {
        let mut out = Vec::new();
        affine_forward(params, layer, acts.last().unwrap(), &mut out);
        acts.push(out);
    }
    acts
}

/// Backpropagates `d_out` through one MLP, accumulating parameter gradients
/// into `grad` and returning the gradient with respect to the input.
fn mlp_backward(
    params: &[f64],
    plan: &[Layer],
    acts: &[Vec<f64>],
    d_out: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let mut d_next = d_out.to_vec();
    for (l, layer) in plan.iter().enumerate().rev() {
        let output = &acts[l + 1];
        let input = &acts[l];
        // Rectifier derivative off the cached post-activation.
        if layer.relu {
            for (d, a) in d_next.iter_mut().zip(output) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let w = &params[layer.w_off..layer.w_off + layer.in_dim * layer.out_dim];
        let gw = &mut grad[layer.w_off..layer.w_off + layer.in_dim * layer.out_dim];
        let mut d_input = vec![0.0; layer.in_dim];
        let input = &input[..layer.in_dim];
        for o in 0..layer.out_dim {
            let dz = d_next[o];
            if dz != 0.0 {
                let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for ((g, di), (wi, xi)) in grow
                    .iter_mut()
                    .zip(d_input.iter_mut())
                    .zip(row.iter().zip(input))
                {
                    *g += dz * xi;
                    *di += dz * wi;
                }
            }
        }
        let gb = &mut grad[layer.b_off..layer.b_off + layer.out_dim];
        for (g, dz) in gb.iter_mut().zip(&d_next) {
            *g += dz;
        }
        d_next = d_input;
    }
    d_next
}

/// Row-major matrix buffer for the batched passes.
#[derive(Debug, Clone)]
struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// All activation matrices of one batched MLP application; `acts[0]` is the
/// input.
fn batched_mlp_forward(params: &[f64], plan: &[Layer], input: Mat) -> Vec<Mat> {
    let mut acts = Vec::with_capacity(plan.len() + 1);
    acts.push(input);
    for layer in plan {
        let prev = acts.last().unwrap();
        let mut out = Mat::zeros(prev.rows, layer.out_dim);
        let w = &params[layer.w_off..layer.w_off + layer.in_dim * layer.out_dim];
        let b = &params[layer.b_off..layer.b_off + layer.out_dim];
        for m in 0..prev.rows {
            let x = prev.row(m);
            let out_row = out.row_mut(m);
            for o in 0..layer.out_dim {
                let acc = b[o] + dot(&w[o * layer.in_dim..(o + 1) * layer.in_dim], x);
                out_row[o] = if layer.relu { acc.max(0.0) } else { acc };
            }
        }
        acts.push(out);
    }
    acts
}

/// Batched mirror of [`mlp_backward`]: accumulates parameter gradients and
/// returns the gradient with respect to the input matrix.
fn batched_mlp_backward(
    params: &[f64],
    plan: &[Layer],
    acts: &[Mat],
    d_out: Mat,
    grad: &mut [f64],
) -> Mat {
    let mut d_next = d_out;
    for (l, layer) in plan.iter().enumerate().rev() {
        let output = &acts[l + 1];
        let input = &acts[l];
        if layer.relu {
            for (d, a) in d_next.data.iter_mut().zip(&output.data) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let w = &params[layer.w_off..layer.w_off + layer.in_dim * layer.out_dim];
        let (gw, rest) = grad[layer.w_off..].split_at_mut(layer.in_dim * layer.out_dim);
        let gb = &mut rest[..layer.out_dim];
        let mut d_input = Mat::zeros(input.rows, layer.in_dim);
        for m in 0..input.rows {
            let dz_row = d_next.row(m);
            let x = input.row(m);
            let dprev = d_input.row_mut(m);
            for o in 0..layer.out_dim {
                let dz = dz_row[o];
                if dz != 0.0 {
                    gb[o] += dz;
                    let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for ((g, di), (wi, xi)) in grow
                        .iter_mut()
                        .zip(dprev.iter_mut())
                        .zip(row.iter().zip(x))
                    {
                        *g += dz * xi;
                        *di += dz * wi;
                    }
                }
            }
        }
        d_next = d_input;
    }
    d_next
}

/// Intermediates of one batched forward pass.
struct BatchPass {
    offsets: Vec<usize>,
    embed_acts: Vec<Mat>,
    pairwise_acts: Vec<Mat>,
    attention_acts: Vec<Mat>,
    value_acts: Vec<Mat>,
    softmax: Vec<f64>,
    values: Vec<f64>,
}

/// Cached intermediate activations of one forward pass, sufficient for exact
/// backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    param_count: usize,
    n_rows: usize,
    embed_acts: Vec<Vec<Vec<f64>>>,
    pairwise_acts: Vec<Vec<Vec<f64>>>,
    attention_acts: Vec<Vec<Vec<f64>>>,
    value_acts: Vec<Vec<f64>>,
    softmax: Vec<f64>,
    pub value: f64,
}

/// The value function approximator. Parameters and Adam moments live in flat
/// vectors so updates, checkpoints, and gradient checks all see one layout.
#[derive(Debug, Clone)]
pub struct ValueNet {
    shape: NetShape,
    plans: [Vec<Layer>; 4],
    params: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

impl ValueNet {
    /// Fresh network with uniform fan-in-scaled initialization.
    pub fn init(shape: NetShape, seed_value: u64) -> Result<Self, NetError> {
        shape.validate()?;
        let (plans, count) = shape.plans();
        let mut params = vec![0.0; count];
        let mut rng = seed::stream_rng(seed_value, "net-init", 0);
        for plan in &plans {
            for layer in plan {
                let bound = 1.0 / (layer.in_dim as f64).sqrt();
                for p in &mut params[layer.w_off..layer.b_off + layer.out_dim] {
                    *p = rng.gen_range(-bound..=bound);
                }
            }
        }
        Ok(ValueNet {
            shape,
            plans,
            adam_m: vec![0.0; count],
            adam_v: vec![0.0; count],
            adam_step: 0,
            params,
        })
    }

    /// Rebuilds a network from checkpointed parts.
    pub fn from_parts(
        shape: NetShape,
        params: Vec<f64>,
        adam_m: Vec<f64>,
        adam_v: Vec<f64>,
        adam_step: u64,
    ) -> Result<Self, NetError> {
        shape.validate()?;
        let (plans, count) = shape.plans();
        for (name, v) in [("params", &params), ("adam_m", &adam_m), ("adam_v", &adam_v)] {
            if v.len() != count {
                return Err(NetError::InvalidShape(format!(
                    "{name} holds {} values but the shape needs {count}",
                    v.len()
                )));
            }
        }
        Ok(ValueNet {
            shape,
            plans,
            params,
            adam_m,
            adam_v,
            adam_step,
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn adam_moments(&self) -> (&[f64], &[f64], u64) {
        (&self.adam_m, &self.adam_v, self.adam_step)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Direct parameter access for test scaffolding.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Value of the state described by `rows`, plus the tape for backprop.
    ///
    /// Rows are canonicalized (sorted) internally, which makes the output
    /// exactly invariant to pedestrian ordering.
    pub fn forward(&self, rows: &[RotatedFeature]) -> Result<(f64, ForwardTape), NetError> {
        if rows.is_empty() {
            return Err(NetError::EmptyInput);
        }
        if rows.iter().any(|r| !r.is_finite()) {
            return Err(NetError::NonFiniteInput);
        }
        let mut sorted: Vec<&RotatedFeature> = rows.iter().collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let n = sorted.len();
        let [embed_plan, pairwise_plan, attention_plan, value_plan] = &self.plans;
        let embed_dim = self.shape.embed_dim();

        let embed_acts: Vec<Vec<Vec<f64>>> = sorted
            .iter()
            .map(|r| mlp_forward(&self.params, embed_plan, &r.0))
            .collect();
        let mut pooled = vec![0.0; embed_dim];
        for acts in &embed_acts {
            for (g, e) in pooled.iter_mut().zip(acts.last().unwrap()) {
                *g += e;
            }
        }
        for g in &mut pooled {
            *g /= n as f64;
        }

        let pairwise_acts: Vec<Vec<Vec<f64>>> = embed_acts
            .iter()
            .map(|acts| mlp_forward(&self.params, pairwise_plan, acts.last().unwrap()))
            .collect();

        let attention_acts: Vec<Vec<Vec<f64>>> = embed_acts
            .iter()
            .map(|acts| {
                let mut joint = acts.last().unwrap().clone();
                joint.extend_from_slice(&pooled);
                mlp_forward(&self.params, attention_plan, &joint)
            })
            .collect();

        let scores: Vec<f64> = attention_acts
            .iter()
            .map(|acts| acts.last().unwrap()[0])
            .collect();
        let max_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut softmax: Vec<f64> = scores.iter().map(|s| (s - max_score).exp()).collect();
        let total: f64 = softmax.iter().sum();
        for w in &mut softmax {
            *w /= total;
        }

        let pairwise_dim = self.shape.pairwise_dim();
        let mut crowd = vec![0.0; pairwise_dim];
        for (w, acts) in softmax.iter().zip(&pairwise_acts) {
            for (c, h) in crowd.iter_mut().zip(acts.last().unwrap()) {
                *c += w * h;
            }
        }

        let mut joint = sorted[0].0[..SELF_STATE_DIM].to_vec();
        joint.extend_from_slice(&crowd);
        let value_acts = mlp_forward(&self.params, value_plan, &joint);
        let value = value_acts.last().unwrap()[0];

        Ok((
            value,
            ForwardTape {
                param_count: self.params.len(),
                n_rows: n,
                embed_acts,
                pairwise_acts,
                attention_acts,
                value_acts,
                softmax,
                value,
            },
        ))
    }

    /// Value only.
    pub fn value(&self, rows: &[RotatedFeature]) -> Result<f64, NetError> {
        Ok(self.forward(rows)?.0)
    }

    /// Exact gradient of `upstream * value` with respect to every parameter.
    pub fn backward(&self, tape: &ForwardTape, upstream: f64) -> Result<Vec<f64>, NetError> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(tape, upstream, &mut grad)?;
        Ok(grad)
    }

    /// As [`backward`](Self::backward) but accumulating into `grad`.
    pub fn backward_into(
        &self,
        tape: &ForwardTape,
        upstream: f64,
        grad: &mut [f64],
    ) -> Result<(), NetError> {
        if tape.param_count != self.params.len() {
            return Err(NetError::TapeMismatch {
                tape_params: tape.param_count,
                net_params: self.params.len(),
            });
        }
        if grad.len() != self.params.len() {
            return Err(NetError::GradientMismatch {
                got: grad.len(),
                expected: self.params.len(),
            });
        }
        if upstream == 0.0 {
            return Ok(());
        }
        let [embed_plan, pairwise_plan, attention_plan, value_plan] = &self.plans;
        let n = tape.n_rows;
        let embed_dim = self.shape.embed_dim();
        let pairwise_dim = self.shape.pairwise_dim();

        // Value head.
        let d_joint = mlp_backward(
            &self.params,
            value_plan,
            &tape.value_acts,
            &[upstream],
            grad,
        );
        let d_crowd = &d_joint[SELF_STATE_DIM..];

        // Softmax-weighted sum: split into per-row weight and feature grads.
        let mut d_weights = vec![0.0; n];
        for (i, acts) in tape.pairwise_acts.iter().enumerate() {
            let h = acts.last().unwrap();
            d_weights[i] = d_crowd.iter().zip(h).map(|(d, h)| d * h).sum();
        }
        let weighted_sum: f64 = d_weights
            .iter()
            .zip(&tape.softmax)
            .map(|(d, w)| d * w)
            .sum();
        let d_scores: Vec<f64> = d_weights
            .iter()
            .zip(&tape.softmax)
            .map(|(d, w)| w * (d - weighted_sum))
            .collect();

        let mut d_embed = vec![vec![0.0; embed_dim]; n];
        let mut d_pooled = vec![0.0; embed_dim];

        for i in 0..n {
            // Pairwise features.
            let mut d_h = vec![0.0; pairwise_dim];
            for (d, dc) in d_h.iter_mut().zip(d_crowd) {
                *d = tape.softmax[i] * dc;
            }
            let d_e =
                mlp_backward(&self.params, pairwise_plan, &tape.pairwise_acts[i], &d_h, grad);
            for (acc, d) in d_embed[i].iter_mut().zip(&d_e) {
                *acc += d;
            }

            // Attention score: input was [e_i ; pooled].
            let d_att_in = mlp_backward(
                &self.params,
                attention_plan,
                &tape.attention_acts[i],
                &[d_scores[i]],
                grad,
            );
            for (acc, d) in d_embed[i].iter_mut().zip(&d_att_in[..embed_dim]) {
                *acc += d;
            }
            for (acc, d) in d_pooled.iter_mut().zip(&d_att_in[embed_dim..]) {
                *acc += d;
            }
        }

        // The mean pool feeds every row's attention input.
        let inv_n = 1.0 / n as f64;
        for row in &mut d_embed {
            for (acc, dp) in row.iter_mut().zip(&d_pooled) {
                *acc += dp * inv_n;
            }
        }

        for i in 0..n {
            mlp_backward(
                &self.params,
                embed_plan,
                &tape.embed_acts[i],
                &d_embed[i],
                grad,
            );
        }
        Ok(())
    }

    /// Values of several states in one batched pass. Equivalent to calling
    /// [`value`](Self::value) per sample, with each layer's weights staying
    /// cache-resident across the whole batch.
    pub fn values_batched(&self, samples: &[&[RotatedFeature]]) -> Result<Vec<f64>, NetError> {
        Ok(self.forward_batched(samples)?.values)
    }

    /// Mean-squared-error loss and gradient over a regression batch
    /// `(rows, target)`, computed with batched forward and backward passes.
    /// Matches the per-sample route up to floating-point summation order.
    pub fn regression_grad(
        &self,
        batch: &[(&[RotatedFeature], f64)],
    ) -> Result<(f64, Vec<f64>), NetError> {
        let samples: Vec<&[RotatedFeature]> = batch.iter().map(|(rows, _)| *rows).collect();
        let pass = self.forward_batched(&samples)?;
        let b = batch.len() as f64;
        let mut loss = 0.0;
        let upstream: Vec<f64> = pass
            .values
            .iter()
            .zip(batch.iter().map(|(_, y)| *y))
            .map(|(v, y)| {
                let err = v - y;
                loss += err * err;
                2.0 * err / b
            })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.backward_batched(&pass, &upstream, &mut grad);
        Ok((loss / b, grad))
    }

    fn forward_batched(&self, samples: &[&[RotatedFeature]]) -> Result<BatchPass, NetError> {
        let [embed_plan, pairwise_plan, attention_plan, value_plan] = &self.plans;
        let embed_dim = self.shape.embed_dim();
        let pairwise_dim = self.shape.pairwise_dim();
        let b = samples.len();

        // Stack canonically-sorted rows of every sample.
        let mut offsets = Vec::with_capacity(b + 1);
        offsets.push(0usize);
        let mut stacked = Mat::zeros(samples.iter().map(|s| s.len()).sum(), FEATURE_DIM);
        let mut r = 0;
        for rows in samples {
            if rows.is_empty() {
                return Err(NetError::EmptyInput);
            }
            if rows.iter().any(|row| !row.is_finite()) {
                return Err(NetError::NonFiniteInput);
            }
            let mut sorted: Vec<&RotatedFeature> = rows.iter().collect();
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for row in sorted {
                stacked.row_mut(r).copy_from_slice(&row.0);
                r += 1;
            }
            offsets.push(r);
        }

        let embed_acts = batched_mlp_forward(&self.params, embed_plan, stacked);
        let embeddings = embed_acts.last().unwrap();

        let mut pooled = Mat::zeros(b, embed_dim);
        for s in 0..b {
            let span = offsets[s]..offsets[s + 1];
            let n = span.len() as f64;
            let target = pooled.row_mut(s);
            for r in span {
                for (t, e) in target.iter_mut().zip(embeddings.row(r)) {
                    *t += e;
                }
            }
            for t in target.iter_mut() {
                *t /= n;
            }
        }

        let pairwise_acts =
            batched_mlp_forward(&self.params, pairwise_plan, embeddings.clone());

        let mut attention_in = Mat::zeros(embeddings.rows, 2 * embed_dim);
        for s in 0..b {
            for r in offsets[s]..offsets[s + 1] {
                let row = attention_in.row_mut(r);
                row[..embed_dim].copy_from_slice(embeddings.row(r));
                row[embed_dim..].copy_from_slice(pooled.row(s));
            }
        }
        let attention_acts = batched_mlp_forward(&self.params, attention_plan, attention_in);
        let scores = attention_acts.last().unwrap();

        let mut softmax = vec![0.0; embeddings.rows];
        for s in 0..b {
            let span = offsets[s]..offsets[s + 1];
            let max = span
                .clone()
                .map(|r| scores.row(r)[0])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for r in span.clone() {
                let w = (scores.row(r)[0] - max).exp();
                softmax[r] = w;
                total += w;
            }
            for r in span {
                softmax[r] /= total;
            }
        }

        let features = pairwise_acts.last().unwrap();
        let mut value_in = Mat::zeros(b, SELF_STATE_DIM + pairwise_dim);
        for s in 0..b {
            let first_row = offsets[s];
            let span = offsets[s]..offsets[s + 1];
            let row = value_in.row_mut(s);
            row[..SELF_STATE_DIM]
                .copy_from_slice(&embed_acts[0].row(first_row)[..SELF_STATE_DIM]);
            for r in span {
                let w = softmax[r];
                for (c, h) in row[SELF_STATE_DIM..].iter_mut().zip(features.row(r)) {
                    *c += w * h;
                }
            }
        }
        let value_acts = batched_mlp_forward(&self.params, value_plan, value_in);
        let values = value_acts
            .last()
            .unwrap()
            .data
            .iter()
            .copied()
            .collect::<Vec<f64>>();

        Ok(BatchPass {
            offsets,
            embed_acts,
            pairwise_acts,
            attention_acts,
            value_acts,
            softmax,
            values,
        })
    }

    fn backward_batched(&self, pass: &BatchPass, upstream: &[f64], grad: &mut [f64]) {
        let [embed_plan, pairwise_plan, attention_plan, value_plan] = &self.plans;
        let embed_dim = self.shape.embed_dim();
        let pairwise_dim = self.shape.pairwise_dim();
        let b = pass.offsets.len() - 1;
        let total_rows = *pass.offsets.last().unwrap();

        let mut d_value_out = Mat::zeros(b, 1);
        for (s, &u) in upstream.iter().enumerate() {
            d_value_out.row_mut(s)[0] = u;
        }
        let d_value_in =
            batched_mlp_backward(&self.params, value_plan, &pass.value_acts, d_value_out, grad);

        let features = pass.pairwise_acts.last().unwrap();
        // Split the crowd-feature gradient into per-row weight and feature
        // gradients, then back through the softmax.
        let mut d_features = Mat::zeros(total_rows, pairwise_dim);
        let mut d_scores = Mat::zeros(total_rows, 1);
        for s in 0..b {
            let d_crowd = &d_value_in.row(s)[SELF_STATE_DIM..];
            let span = pass.offsets[s]..pass.offsets[s + 1];
            let mut weighted = 0.0;
            for r in span.clone() {
                let dw = dot(d_crowd, features.row(r));
                d_scores.row_mut(r)[0] = dw;
                weighted += dw * pass.softmax[r];
            }
            for r in span {
                let w = pass.softmax[r];
                let raw = d_scores.row(r)[0];
                d_scores.row_mut(r)[0] = w * (raw - weighted);
                for (d, dc) in d_features.row_mut(r).iter_mut().zip(d_crowd) {
                    *d = w * dc;
                }
            }
        }

        let mut d_embed = batched_mlp_backward(
            &self.params,
            pairwise_plan,
            &pass.pairwise_acts,
            d_features,
            grad,
        );
        let d_attention_in = batched_mlp_backward(
            &self.params,
            attention_plan,
            &pass.attention_acts,
            d_scores,
            grad,
        );

        let mut d_pooled = Mat::zeros(b, embed_dim);
        for s in 0..b {
            let span = pass.offsets[s]..pass.offsets[s + 1];
            for r in span {
                let att_row = d_attention_in.row(r);
                for (acc, d) in d_embed.row_mut(r).iter_mut().zip(&att_row[..embed_dim]) {
                    *acc += d;
                }
                for (acc, d) in d_pooled.row_mut(s).iter_mut().zip(&att_row[embed_dim..]) {
                    *acc += d;
                }
            }
        }
        for s in 0..b {
            let span = pass.offsets[s]..pass.offsets[s + 1];
            let inv_n = 1.0 / span.len() as f64;
            for r in span {
                for (acc, dp) in d_embed.row_mut(r).iter_mut().zip(d_pooled.row(s)) {
                    *acc += dp * inv_n;
                }
            }
        }
        batched_mlp_backward(&self.params, embed_plan, &pass.embed_acts, d_embed, grad);
    }

    /// One Adam step with bias correction. Learning comes entirely through
    /// this method so the moment state always matches the step counter.
    pub fn adam_update(&mut self, grad: &[f64], learn_rate: f64) -> Result<(), NetError> {
        if grad.len() != self.params.len() {
            return Err(NetError::GradientMismatch {
                got: grad.len(),
                expected: self.params.len(),
            });
        }
        self.adam_step += 1;
        let t = self.adam_step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (((p, g), m), v) in self
            .params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.adam_m)
            .zip(&mut self.adam_v)
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learn_rate * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        }
        Ok(())
    }
}
