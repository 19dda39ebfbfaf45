//! Recurrent dueling Q-network.
//!
//! `input (K+1) → LSTM (H) → { value: H → V → 1, advantage: H → A → K+1 }`,
//! recombined as `q_a = v + adv_a − mean(adv)`. Branch hidden layers use ReLU.
//! Gate rows of the LSTM matrices are stacked `[input, forget, cell, output]`.
//!
//! Every multiply in the forward and backward passes is tallied in a
//! thread-local counter (see [`multiply_count`]).

use std::cell::Cell;

use rand::Rng;

use crate::error::{Error, Result};

thread_local! {
    static MULTIPLIES: Cell<u64> = const { Cell::new(0) };
}

#[inline]
fn tally(n: usize) {
    MULTIPLIES.with(|m| m.set(m.get() + n as u64));
}

/// Multiplies performed by network code on this thread so far.
pub fn multiply_count() -> u64 {
    MULTIPLIES.with(Cell::get)
}

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetShape {
    pub inputs: usize,
    pub hidden: usize,
    pub value_width: usize,
    pub advantage_width: usize,
    pub actions: usize,
}

impl NetShape {
    /// Input and output both have `channels + 1` entries.
    pub fn for_channels(
        channels: usize,
        hidden: usize,
        value_width: usize,
        advantage_width: usize,
    ) -> Self {
        NetShape {
            inputs: channels + 1,
            hidden,
            value_width,
            advantage_width,
            actions: channels + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs == 0
            || self.hidden == 0
            || self.value_width == 0
            || self.advantage_width == 0
            || self.actions == 0
        {
            return Err(Error::Shape(format!(
                "all layer sizes must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Dot product with four independent partial sums, so the compiler can
/// keep several additions in flight.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let tail: f64 = a[chunks..]
        .iter()
        .zip(&b[chunks..])
        .map(|(x, y)| x * y)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Matrix { rows, cols, data }
    }

    /// `out = self · x` (+ `out` if `accumulate`).
    fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        tally(self.rows * self.cols);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ · y`.
    fn matvec_t_into(&self, y: &[f64], out: &mut [f64]) {
        tally(self.rows * self.cols);
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
    }

    /// `self += y ⊗ x`.
    fn add_outer(&mut self, y: &[f64], x: &[f64]) {
        tally(self.rows * self.cols);
        for (row, &yi) in self.data.chunks_exact_mut(self.cols).zip(y) {
            for (w, xv) in row.iter_mut().zip(x) {
                *w += yi * xv;
            }
        }
    }

    fn add_vec(&mut self, y: &[f64]) {
        for (w, v) in self.data.iter_mut().zip(y) {
            *w += v;
        }
    }
}

/// Names of the parameter tensors, in storage and snapshot order.
pub const TENSOR_NAMES: [&str; 11] = [
    "lstm.w_input",
    "lstm.w_recurrent",
    "lstm.bias",
    "value.hidden_w",
    "value.hidden_b",
    "value.out_w",
    "value.out_b",
    "advantage.hidden_w",
    "advantage.hidden_b",
    "advantage.out_w",
    "advantage.out_b",
];

/// All weights of one network. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    shape: NetShape,
    tensors: [Matrix; 11],
}

const W_INPUT: usize = 0;
const W_RECURRENT: usize = 1;
const BIAS: usize = 2;
const V_HIDDEN_W: usize = 3;
const V_HIDDEN_B: usize = 4;
const V_OUT_W: usize = 5;
const V_OUT_B: usize = 6;
const A_HIDDEN_W: usize = 7;
const A_HIDDEN_B: usize = 8;
const A_OUT_W: usize = 9;
const A_OUT_B: usize = 10;

fn tensor_dims(shape: &NetShape) -> [(usize, usize, usize); 11] {
    let h = shape.hidden;
    // (rows, cols, fan-in used for initialization)
    [
        (4 * h, shape.inputs, shape.inputs + h),
        (4 * h, h, shape.inputs + h),
        (4 * h, 1, shape.inputs + h),
        (shape.value_width, h, h),
        (shape.value_width, 1, h),
        (1, shape.value_width, shape.value_width),
        (1, 1, shape.value_width),
        (shape.advantage_width, h, h),
        (shape.advantage_width, 1, h),
        (shape.actions, shape.advantage_width, shape.advantage_width),
        (shape.actions, 1, shape.advantage_width),
    ]
}

impl QNetworkParams {
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let tensors = tensor_dims(&shape).map(|(r, c, _)| Matrix::zeros(r, c));
        Ok(QNetworkParams { shape, tensors })
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(shape: NetShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let tensors = tensor_dims(&shape)
            .map(|(r, c, fan_in)| Matrix::uniform(r, c, 1.0 / (fan_in as f64).sqrt(), rng));
        Ok(QNetworkParams { shape, tensors })
    }

    /// Assembles parameters from tensors listed in [`TENSOR_NAMES`] order.
    pub fn from_tensors(shape: NetShape, tensors: Vec<Matrix>) -> Result<Self> {
        shape.validate()?;
        let dims = tensor_dims(&shape);
        if tensors.len() != dims.len() {
            return Err(Error::Shape(format!(
                "expected 11 tensors, got {}",
                tensors.len()
            )));
        }
        for ((t, (r, c, _)), name) in tensors.iter().zip(dims).zip(TENSOR_NAMES) {
            if t.rows != r || t.cols != c || t.data.len() != r * c {
                return Err(Error::Shape(format!(
                    "{name}: expected {r}x{c}, got {}x{} ({} values)",
                    t.rows,
                    t.cols,
                    t.data.len()
                )));
            }
        }
        let tensors: [Matrix; 11] = tensors
            .try_into()
            .map_err(|_| Error::Shape("tensor count".into()))?;
        Ok(QNetworkParams { shape, tensors })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn tensors(&self) -> &[Matrix; 11] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Matrix; 11] {
        &mut self.tensors
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.tensors.iter().flat_map(|t| t.data.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.tensors.iter_mut().flat_map(|t| t.data.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn add_assign(&mut self, other: &QNetworkParams) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += b;
        }
    }
}

/// Recurrent state carried between steps of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }

    pub fn reset(&mut self) {
        self.hidden.fill(0.0);
        self.cell.fill(0.0);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `q_a = v + adv_a − mean(adv)`.
pub fn dueling_aggregate(value: f64, advantage: &[f64]) -> Vec<f64> {
    let mean = advantage.iter().sum::<f64>() / advantage.len() as f64;
    advantage.iter().map(|a| value + a - mean).collect()
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gates, `[i, f, g, o]` stacked.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    value_hidden: Vec<f64>,
    adv_hidden: Vec<f64>,
    q: Vec<f64>,
}

fn step(params: &QNetworkParams, input: &[f64], state: &LstmState) -> (StepCache, LstmState) {
    let t = &params.tensors;
    let h_dim = params.shape.hidden;

    let mut z = t[BIAS].data.clone();
    t[W_INPUT].matvec_into(input, &mut z);
    t[W_RECURRENT].matvec_into(&state.hidden, &mut z);

    let mut gates = z;
    for (k, g) in gates.iter_mut().enumerate() {
        *g = if k / h_dim == 2 {
            g.tanh()
        } else {
            sigmoid(*g)
        };
    }
    let (ig, rest) = gates.split_at(h_dim);
    let (fg, rest) = rest.split_at(h_dim);
    let (gg, og) = rest.split_at(h_dim);

    let cell: Vec<f64> = (0..h_dim)
        .map(|j| fg[j] * state.cell[j] + ig[j] * gg[j])
        .collect();
    let tanh_c: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
    let h: Vec<f64> = og.iter().zip(&tanh_c).map(|(o, tc)| o * tc).collect();
    tally(3 * h_dim);

    let mut value_hidden = t[V_HIDDEN_B].data.clone();
    t[V_HIDDEN_W].matvec_into(&h, &mut value_hidden);
    value_hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut value = t[V_OUT_B].data.clone();
    t[V_OUT_W].matvec_into(&value_hidden, &mut value);

    let mut adv_hidden = t[A_HIDDEN_B].data.clone();
    t[A_HIDDEN_W].matvec_into(&h, &mut adv_hidden);
    adv_hidden.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut adv = t[A_OUT_B].data.clone();
    t[A_OUT_W].matvec_into(&adv_hidden, &mut adv);

    let q = dueling_aggregate(value[0], &adv);

    let next = LstmState {
        hidden: h.clone(),
        cell,
    };
    let cache = StepCache {
        input: input.to_vec(),
        h_prev: state.hidden.clone(),
        c_prev: state.cell.clone(),
        gates,
        tanh_c,
        h,
        value_hidden,
        adv_hidden,
        q,
    };
    (cache, next)
}

fn check_input(params: &QNetworkParams, input: &[f64], state: &LstmState) -> Result<()> {
    let s = params.shape;
    if input.len() != s.inputs {
        return Err(Error::Shape(format!(
            "input has {} entries, network expects {}",
            input.len(),
            s.inputs
        )));
    }
    if state.hidden.len() != s.hidden || state.cell.len() != s.hidden {
        return Err(Error::Shape(format!(
            "state size differs from hidden size {}",
            s.hidden
        )));
    }
    Ok(())
}

/// One step: returns the Q-vector and the advanced recurrent state.
pub fn forward(
    params: &QNetworkParams,
    input: &[f64],
    state: &LstmState,
) -> Result<(Vec<f64>, LstmState)> {
    check_input(params, input, state)?;
    let (cache, next) = step(params, input, state);
    Ok((cache.q, next))
}

/// One training sequence: inputs, target Q-vectors, and the taken action.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    /// Index of the action whose target is trained; all others are masked out.
    pub actions: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Episodes trained together, each replayed from a zero recurrent state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingBatch {
    pub sequences: Vec<Sequence>,
}

impl TrainingBatch {
    pub fn validate(&self, shape: &NetShape) -> Result<()> {
        for (e, s) in self.sequences.iter().enumerate() {
            if s.targets.len() != s.inputs.len() || s.actions.len() != s.inputs.len() {
                return Err(Error::Shape(format!("sequence {e}: stream lengths differ")));
            }
            if s.inputs.iter().any(|x| x.len() != shape.inputs)
                || s.targets.iter().any(|y| y.len() != shape.actions)
                || s.actions.iter().any(|&a| a >= shape.actions)
            {
                return Err(Error::Shape(format!(
                    "sequence {e}: entry sizes mismatch the network"
                )));
            }
        }
        Ok(())
    }
}

/// Loss of a batch: for each sequence the mean over its steps of
/// `(q[a] − target[a])²`, summed over sequences.
pub fn loss(params: &QNetworkParams, batch: &TrainingBatch) -> Result<f64> {
    batch.validate(&params.shape)?;
    let mut total = 0.0;
    for seq in &batch.sequences {
        if seq.is_empty() {
            continue;
        }
        let mut state = LstmState::zeros(params.shape.hidden);
        let mut seq_loss = 0.0;
        for ((x, y), &a) in seq.inputs.iter().zip(&seq.targets).zip(&seq.actions) {
            let (cache, next) = step(params, x, &state);
            seq_loss += (cache.q[a] - y[a]).powi(2);
            state = next;
        }
        total += seq_loss / seq.len() as f64;
    }
    Ok(total)
}

/// Gradient of [`loss`] by backpropagation through time.
pub fn backward(params: &QNetworkParams, batch: &TrainingBatch) -> Result<QNetworkParams> {
    batch.validate(&params.shape)?;
    let shape = params.shape;
    let h_dim = shape.hidden;
    let t = &params.tensors;
    let mut grads = QNetworkParams::zeros(shape)?;

    for seq in &batch.sequences {
        if seq.is_empty() {
            continue;
        }
        let mut state = LstmState::zeros(h_dim);
        let mut caches = Vec::with_capacity(seq.len());
        for x in &seq.inputs {
            let (cache, next) = step(params, x, &state);
            caches.push(cache);
            state = next;
        }

        let scale = 2.0 / seq.len() as f64;
        let mut dh_next = vec![0.0; h_dim];
        let mut dc_next = vec![0.0; h_dim];
        for ((cache, y), &a) in caches.iter().zip(&seq.targets).zip(&seq.actions).rev() {
            let g = &mut grads.tensors;

            // Loss touches only the taken action.
            let mut dq = vec![0.0; shape.actions];
            dq[a] = scale * (cache.q[a] - y[a]);

            // Dueling head: q_j = v + adv_j − mean(adv).
            let dv: f64 = dq.iter().sum();
            let mean_dq = dv / shape.actions as f64;
            let dadv: Vec<f64> = dq.iter().map(|d| d - mean_dq).collect();

            let mut dh = dh_next.clone();

            g[A_OUT_W].add_outer(&dadv, &cache.adv_hidden);
            g[A_OUT_B].add_vec(&dadv);
            let mut da_hidden = vec![0.0; shape.advantage_width];
            t[A_OUT_W].matvec_t_into(&dadv, &mut da_hidden);
            for (d, &act) in da_hidden.iter_mut().zip(&cache.adv_hidden) {
                if act <= 0.0 {
                    *d = 0.0;
                }
            }
            g[A_HIDDEN_W].add_outer(&da_hidden, &cache.h);
            g[A_HIDDEN_B].add_vec(&da_hidden);
            t[A_HIDDEN_W].matvec_t_into(&da_hidden, &mut dh);

            let dv_vec = [dv];
            g[V_OUT_W].add_outer(&dv_vec, &cache.value_hidden);
            g[V_OUT_B].add_vec(&dv_vec);
            let mut dv_hidden = vec![0.0; shape.value_width];
            t[V_OUT_W].matvec_t_into(&dv_vec, &mut dv_hidden);
            for (d, &act) in dv_hidden.iter_mut().zip(&cache.value_hidden) {
                if act <= 0.0 {
                    *d = 0.0;
                }
            }
            g[V_HIDDEN_W].add_outer(&dv_hidden, &cache.h);
            g[V_HIDDEN_B].add_vec(&dv_hidden);
            t[V_HIDDEN_W].matvec_t_into(&dv_hidden, &mut dh);

            // LSTM cell.
            let (ig, rest) = cache.gates.split_at(h_dim);
            let (fg, rest) = rest.split_at(h_dim);
            let (gg, og) = rest.split_at(h_dim);
            let mut dz = vec![0.0; 4 * h_dim];
            for j in 0..h_dim {
                let tc = cache.tanh_c[j];
                let d_o = dh[j] * tc;
                let dc = dh[j] * og[j] * (1.0 - tc * tc) + dc_next[j];
                let d_i = dc * gg[j];
                let d_g = dc * ig[j];
                let d_f = dc * cache.c_prev[j];
                dc_next[j] = dc * fg[j];
                dz[j] = d_i * ig[j] * (1.0 - ig[j]);
                dz[h_dim + j] = d_f * fg[j] * (1.0 - fg[j]);
                dz[2 * h_dim + j] = d_g * (1.0 - gg[j] * gg[j]);
                dz[3 * h_dim + j] = d_o * og[j] * (1.0 - og[j]);
            }
            tally(14 * h_dim);
            g[W_INPUT].add_outer(&dz, &cache.input);
            g[W_RECURRENT].add_outer(&dz, &cache.h_prev);
            g[BIAS].add_vec(&dz);
            dh_next.fill(0.0);
            t[W_RECURRENT].matvec_t_into(&dz, &mut dh_next);
        }
    }
    Ok(grads)
}

/// Plain gradient descent. When `clip` is set and the global gradient norm
/// exceeds it, the gradient is rescaled to norm `clip` first.
pub fn optimizer_step(
    params: &QNetworkParams,
    gradients: &QNetworkParams,
    learning_rate: f64,
    clip: Option<f64>,
) -> Result<QNetworkParams> {
    if learning_rate.is_nan() || learning_rate <= 0.0 {
        return Err(Error::invalid("alpha", "learning rate must be positive"));
    }
    if params.shape != gradients.shape {
        return Err(Error::Shape(
            "gradient shape differs from parameters".into(),
        ));
    }
    let mut step = gradients.clone();
    if let Some(threshold) = clip {
        let norm = step.norm();
        if norm > threshold && norm > 0.0 {
            step.scale(threshold / norm);
        }
    }
    step.scale(-learning_rate);
    let mut next = params.clone();
    next.add_assign(&step);
    Ok(next)
}

/// Independent copy for the evaluation network.
pub fn sync_params(source: &QNetworkParams) -> QNetworkParams {
    source.clone()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
