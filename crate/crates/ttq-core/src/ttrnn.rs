//! Recurrent classifiers whose input-to-hidden and hidden-to-hidden maps are
//! TT matrices. Covers plain RNN and LSTM cells, variational dropout on both
//! maps, exact reverse-mode gradients through the TT contractions, and a
//! small deterministic training loop.
//!
//! A dense cell is the d = 1 special case (single full-rank core), which is
//! how the uncompressed baselines are run.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{DenseTensor, Real};
use crate::tt::{contract, tt_param_count, TTMatrix, TtError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TtrnnError {
    #[error("BAD_CONFIG: {0}")]
    BadConfig(String),
    #[error("SHAPE: {0}")]
    Shape(String),
    #[error("NONFINITE: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Tt(#[from] TtError),
}

impl TtrnnError {
    pub fn code(&self) -> &'static str {
        match self {
            TtrnnError::BadConfig(_) => "BAD_CONFIG",
            TtrnnError::Shape(_) => "SHAPE",
            TtrnnError::NonFinite(_) => "NONFINITE",
            TtrnnError::Tt(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    PlainRnn,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::PlainRnn => 1,
            CellKind::Lstm => 4,
        }
    }
}

/// LSTM gate order used throughout: input, forget, cell candidate, output.
pub const GATE_INPUT: usize = 0;
pub const GATE_FORGET: usize = 1;
pub const GATE_CELL: usize = 2;
pub const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TTRnnConfig {
    pub cell: CellKind,
    pub input_modes: Vec<usize>,
    pub hidden_modes: Vec<usize>,
    pub ranks_ih: Vec<usize>,
    pub ranks_hh: Vec<usize>,
    pub dropout_p: f64,
    pub classes: usize,
    pub seed: u64,
}

impl TTRnnConfig {
    pub fn validate(&self) -> Result<(), TtrnnError> {
        let d = self.input_modes.len();
        if d == 0 || self.hidden_modes.len() != d {
            return Err(TtrnnError::BadConfig(format!(
                "input modes {:?} and hidden modes {:?} must have the same nonzero length",
                self.input_modes, self.hidden_modes
            )));
        }
        if self.input_modes.iter().chain(&self.hidden_modes).any(|&m| m == 0) {
            return Err(TtrnnError::BadConfig("mode sizes must be >= 1".into()));
        }
        for (name, ranks) in [("ranks_ih", &self.ranks_ih), ("ranks_hh", &self.ranks_hh)] {
            if ranks.len() != d + 1
                || ranks[0] != 1
                || ranks[d] != 1
                || ranks.contains(&0)
            {
                return Err(TtrnnError::BadConfig(format!(
                    "{name} must be {} ranks with boundary 1, got {ranks:?}",
                    d + 1
                )));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(TtrnnError::BadConfig(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.classes < 2 {
            return Err(TtrnnError::BadConfig("need at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn input_size(&self) -> usize {
        self.input_modes.iter().product()
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_modes.iter().product()
    }
}

/// One training/evaluation item: an ordered run of feature tensors with a
/// class label. Frame shape must equal the model's input modes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence<T: Real = f64> {
    pub frames: Vec<DenseTensor<T>>,
    pub label: usize,
}

impl<T: Real> FeatureSequence<T> {
    pub fn cast<U: Real>(&self) -> FeatureSequence<U> {
        FeatureSequence {
            frames: self.frames.iter().map(|f| f.cast()).collect(),
            label: self.label,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTRnnModel<T: Real = f64> {
    pub config: TTRnnConfig,
    /// Input-to-hidden TT map, one per gate.
    pub w_ih: Vec<TTMatrix<T>>,
    /// Hidden-to-hidden TT map, one per gate.
    pub w_hh: Vec<TTMatrix<T>>,
    /// Per-gate bias over the hidden units.
    pub bias: Vec<Vec<T>>,
    /// Classifier head, `classes x hidden` row-major.
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
}

/// Cores are drawn i.i.d. normal with the per-core std chosen so the
/// reconstructed dense map has entry variance close to 2/(fan_in+fan_out):
/// a TT entry is a sum of prod(interior ranks) uncorrelated d-fold products,
/// so std = (target / prod_ranks)^(1/2d).
fn core_std(target_var: f64, ranks: &[usize], d: usize) -> f64 {
    let path_count: f64 = ranks[1..d].iter().map(|&r| r as f64).product();
    (target_var / path_count).powf(1.0 / (2.0 * d as f64))
}

pub fn init_model<T: Real>(config: TTRnnConfig) -> Result<TTRnnModel<T>, TtrnnError> {
    config.validate()?;
    let d = config.input_modes.len();
    let gates = config.cell.gates();
    let (m, h) = (config.input_size(), config.hidden_size());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let draw_tt = |row_modes: &[usize],
                       col_modes: &[usize],
                       ranks: &[usize],
                       fan_in: usize,
                       fan_out: usize,
                       rng: &mut ChaCha8Rng|
     -> Result<TTMatrix<T>, TtrnnError> {
        let std = core_std(2.0 / (fan_in + fan_out) as f64, ranks, d);
        let normal = Normal::new(0.0f64, std).expect("positive std");
        let mut tt = TTMatrix::<T>::zeros(row_modes, col_modes, ranks)?;
        for core in tt.cores_mut() {
            for v in core.as_mut_slice() {
                *v = T::of_f64(normal.sample(rng));
            }
        }
        Ok(tt)
    };

    let mut w_ih = Vec::with_capacity(gates);
    for _ in 0..gates {
        w_ih.push(draw_tt(
            &config.input_modes,
            &config.hidden_modes,
            &config.ranks_ih,
            m,
            h,
            &mut rng,
        )?);
    }
    let mut w_hh = Vec::with_capacity(gates);
    for _ in 0..gates {
        w_hh.push(draw_tt(
            &config.hidden_modes,
            &config.hidden_modes,
            &config.ranks_hh,
            h,
            h,
            &mut rng,
        )?);
    }

    let mut bias = vec![vec![T::zero(); h]; gates];
    if config.cell == CellKind::Lstm {
        bias[GATE_FORGET] = vec![T::one(); h];
    }

    let head_std = (2.0 / (h + config.classes) as f64).sqrt();
    let head_normal = Normal::new(0.0f64, head_std).expect("positive std");
    let head_w = (0..config.classes * h)
        .map(|_| T::of_f64(head_normal.sample(&mut rng)))
        .collect();
    let head_b = vec![T::zero(); config.classes];

    Ok(TTRnnModel {
        config,
        w_ih,
        w_hh,
        bias,
        head_w,
        head_b,
    })
}

/// Multiplicative dropout masks, fixed across the time steps of one sequence.
/// Kept units carry the inverted scale 1/(1-p) so expectations match the
/// mask-free pass.
#[derive(Debug, Clone)]
pub struct DropoutMasks<T: Real> {
    pub input: Vec<T>,
    pub hidden: Vec<T>,
}

pub fn sample_masks<T: Real>(config: &TTRnnConfig, rng: &mut ChaCha8Rng) -> DropoutMasks<T> {
    let p = config.dropout_p;
    let scale = 1.0 / (1.0 - p);
    let mut draw = |len: usize| -> Vec<T> {
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < p {
                    T::zero()
                } else {
                    T::of_f64(scale)
                }
            })
            .collect()
    };
    DropoutMasks {
        input: draw(config.input_size()),
        hidden: draw(config.hidden_size()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState<T: Real> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> CellState<T> {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: vec![T::zero(); hidden],
            c: vec![T::zero(); hidden],
        }
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn apply_mask<T: Real>(values: &[T], mask: Option<&[T]>) -> Vec<T> {
    match mask {
        Some(m) => values.iter().zip(m).map(|(&v, &s)| v * s).collect(),
        None => values.to_vec(),
    }
}

/// Everything the backward pass needs from one time step. The masked input
/// and previous hidden state live in stage 0 of the contraction traces.
struct StepTrace<T: Real> {
    ih_traces: Vec<contract::Trace<T>>,
    hh_traces: Vec<contract::Trace<T>>,
    /// activated gate values (plain RNN stores the single tanh output here)
    gates: Vec<Vec<T>>,
    c_prev: Vec<T>,
    tanh_c: Vec<T>,
}

impl<T: Real> TTRnnModel<T> {
    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size()
    }

    fn check_input(&self, x: &DenseTensor<T>) -> Result<(), TtrnnError> {
        if x.shape().dims() != self.config.input_modes.as_slice() {
            return Err(TtrnnError::Shape(format!(
                "frame shape {} does not match input modes {:?}",
                x.shape(),
                self.config.input_modes
            )));
        }
        Ok(())
    }

    /// Gate pre-activations `W_ih x~ + W_hh h~ + b`, with optional traces.
    fn gate_preactivations(
        &self,
        x_masked: &[T],
        h_prev_masked: &[T],
        keep_trace: bool,
    ) -> (Vec<Vec<T>>, Vec<contract::Trace<T>>, Vec<contract::Trace<T>>) {
        let gates = self.config.cell.gates();
        let mut pre = Vec::with_capacity(gates);
        let mut ih_traces = Vec::new();
        let mut hh_traces = Vec::new();
        let flag = if keep_trace { Some(()) } else { None };
        for g in 0..gates {
            let (ih, t_ih) = contract::forward(&self.w_ih[g], x_masked, flag);
            let (hh, t_hh) = contract::forward(&self.w_hh[g], h_prev_masked, flag);
            let z: Vec<T> = ih
                .iter()
                .zip(&hh)
                .zip(&self.bias[g])
                .map(|((&a, &b), &c)| a + b + c)
                .collect();
            pre.push(z);
            if keep_trace {
                ih_traces.push(t_ih.expect("trace requested"));
                hh_traces.push(t_hh.expect("trace requested"));
            }
        }
        (pre, ih_traces, hh_traces)
    }

    fn step(
        &self,
        x: &DenseTensor<T>,
        prev: &CellState<T>,
        masks: Option<&DropoutMasks<T>>,
        keep_trace: bool,
    ) -> Result<(CellState<T>, Option<StepTrace<T>>), TtrnnError> {
        self.check_input(x)?;
        let h_len = self.hidden_size();
        if prev.h.len() != h_len {
            return Err(TtrnnError::Shape(format!(
                "hidden state has {} units, model expects {h_len}",
                prev.h.len()
            )));
        }
        let x_masked = apply_mask(x.as_slice(), masks.map(|m| m.input.as_slice()));
        let h_prev_masked = apply_mask(&prev.h, masks.map(|m| m.hidden.as_slice()));
        let (mut pre, ih_traces, hh_traces) =
            self.gate_preactivations(&x_masked, &h_prev_masked, keep_trace);

        let state;
        let gates_act: Vec<Vec<T>>;
        let mut tanh_c = Vec::new();
        match self.config.cell {
            CellKind::PlainRnn => {
                let h: Vec<T> = pre.pop().expect("one gate").iter().map(|&z| z.tanh()).collect();
                gates_act = vec![h.clone()];
                state = CellState {
                    h,
                    c: vec![T::zero(); h_len],
                };
            }
            CellKind::Lstm => {
                let i: Vec<T> = pre[GATE_INPUT].iter().map(|&z| sigmoid(z)).collect();
                let f: Vec<T> = pre[GATE_FORGET].iter().map(|&z| sigmoid(z)).collect();
                let g: Vec<T> = pre[GATE_CELL].iter().map(|&z| z.tanh()).collect();
                let o: Vec<T> = pre[GATE_OUTPUT].iter().map(|&z| sigmoid(z)).collect();
                let c: Vec<T> = (0..h_len)
                    .map(|u| f[u] * prev.c[u] + i[u] * g[u])
                    .collect();
                tanh_c = c.iter().map(|&v| v.tanh()).collect();
                let h: Vec<T> = (0..h_len).map(|u| o[u] * tanh_c[u]).collect();
                gates_act = vec![i, f, g, o];
                state = CellState { h, c };
            }
        }

        let trace = if keep_trace {
            Some(StepTrace {
                ih_traces,
                hh_traces,
                gates: gates_act,
                c_prev: prev.c.clone(),
                tanh_c,
            })
        } else {
            None
        };
        Ok((state, trace))
    }

    /// One recurrence step. `masks` present means train mode.
    pub fn cell_forward(
        &self,
        x: &DenseTensor<T>,
        prev: &CellState<T>,
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<CellState<T>, TtrnnError> {
        Ok(self.step(x, prev, masks, false)?.0)
    }

    pub fn head_logits(&self, h: &[T]) -> Vec<T> {
        let hidden = self.hidden_size();
        (0..self.config.classes)
            .map(|c| {
                let mut z = self.head_b[c];
                let row = &self.head_w[c * hidden..(c + 1) * hidden];
                for (w, &hv) in row.iter().zip(h) {
                    z += *w * hv;
                }
                z
            })
            .collect()
    }

    /// Runs the recurrence over a whole sequence from the zero state and
    /// returns the classifier logits.
    pub fn sequence_forward(
        &self,
        seq: &FeatureSequence<T>,
        masks: Option<&DropoutMasks<T>>,
    ) -> Result<Vec<T>, TtrnnError> {
        if seq.frames.is_empty() {
            return Err(TtrnnError::Shape("empty sequence".into()));
        }
        let mut state = CellState::zeros(self.hidden_size());
        for frame in &seq.frames {
            state = self.cell_forward(frame, &state, masks)?;
        }
        Ok(self.head_logits(&state.h))
    }

    pub fn predict(&self, seq: &FeatureSequence<T>) -> Result<usize, TtrnnError> {
        let logits = self.sequence_forward(seq, None)?;
        Ok(argmax(&logits))
    }

    /// Fraction of sequences whose argmax logit matches the label.
    pub fn evaluate(&self, data: &[FeatureSequence<T>]) -> Result<f64, TtrnnError> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let hits: Result<Vec<bool>, TtrnnError> = data
            .par_iter()
            .map(|seq| Ok(self.predict(seq)? == seq.label))
            .collect();
        let hits = hits?;
        Ok(hits.iter().filter(|&&h| h).count() as f64 / data.len() as f64)
    }

    /// Mean softmax cross-entropy over the batch and exact gradients for
    /// every core element, bias, and head parameter.
    ///
    /// `dropout_seed` enables per-sequence variational dropout; the masks are
    /// a pure function of `(dropout_seed, index in batch)`, so repeated calls
    /// are bit-identical regardless of thread schedule.
    pub fn loss_and_grads(
        &self,
        batch: &[FeatureSequence<T>],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, TTRnnGrads<T>), TtrnnError> {
        if batch.is_empty() {
            return Err(TtrnnError::Shape("empty batch".into()));
        }
        let inv_batch = 1.0 / batch.len() as f64;
        let per_seq: Result<Vec<(f64, TTRnnGrads<T>)>, TtrnnError> = batch
            .par_iter()
            .enumerate()
            .map(|(idx, seq)| {
                let masks = dropout_seed.filter(|_| self.config.dropout_p > 0.0).map(|s| {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        s ^ (idx as u64 + 1).wrapping_mul(0x9e3779b97f4a7c15),
                    );
                    sample_masks(&self.config, &mut rng)
                });
                self.sequence_loss_and_grads(seq, masks.as_ref(), inv_batch)
            })
            .collect();
        let per_seq = per_seq?;

        let mut total = TTRnnGrads::zeros(self);
        let mut loss = 0.0;
        // fixed summation order keeps results bit-stable under parallelism
        for (l, g) in &per_seq {
            loss += l * inv_batch;
            total.add_assign(g);
        }
        if !loss.is_finite() {
            return Err(TtrnnError::NonFinite(format!(
                "loss is {loss}; diverging parameters or bad inputs"
            )));
        }
        Ok((loss, total))
    }

    fn sequence_loss_and_grads(
        &self,
        seq: &FeatureSequence<T>,
        masks: Option<&DropoutMasks<T>>,
        grad_scale: f64,
    ) -> Result<(f64, TTRnnGrads<T>), TtrnnError> {
        if seq.frames.is_empty() {
            return Err(TtrnnError::Shape("empty sequence".into()));
        }
        if seq.label >= self.config.classes {
            return Err(TtrnnError::Shape(format!(
                "label {} out of range for {} classes",
                seq.label, self.config.classes
            )));
        }
        let h_len = self.hidden_size();
        let gates = self.config.cell.gates();

        // forward with traces
        let mut state = CellState::zeros(h_len);
        let mut traces: Vec<StepTrace<T>> = Vec::with_capacity(seq.frames.len());
        for frame in &seq.frames {
            let (next, trace) = self.step(frame, &state, masks, true)?;
            traces.push(trace.expect("trace requested"));
            state = next;
        }

        let logits = self.head_logits(&state.h);
        if logits.iter().any(|z| !z.as_f64().is_finite()) {
            return Err(TtrnnError::NonFinite("non-finite logits".into()));
        }
        let probs = softmax(&logits);
        let loss = -probs[seq.label].as_f64().max(f64::MIN_POSITIVE).ln();

        let mut grads = TTRnnGrads::zeros(self);
        let scale = T::of_f64(grad_scale);

        // head backward; d_logits = (softmax - onehot) * grad_scale
        let h_last = &state.h;
        let mut dh = vec![T::zero(); h_len];
        for c in 0..self.config.classes {
            let mut d = probs[c];
            if c == seq.label {
                d -= T::one();
            }
            d *= scale;
            grads.head_b[c] += d;
            let row = &self.head_w[c * h_len..(c + 1) * h_len];
            let grow = &mut grads.head_w[c * h_len..(c + 1) * h_len];
            for u in 0..h_len {
                grow[u] += d * h_last[u];
                dh[u] += d * row[u];
            }
        }

        // backward through time
        let mut dc = vec![T::zero(); h_len];
        for trace in traces.iter().rev() {
            // d(pre-activation) per gate
            let d_pre: Vec<Vec<T>> = match self.config.cell {
                CellKind::PlainRnn => {
                    let h = &trace.gates[0];
                    vec![(0..h_len)
                        .map(|u| dh[u] * (T::one() - h[u] * h[u]))
                        .collect()]
                }
                CellKind::Lstm => {
                    let (i, f, g, o) = (
                        &trace.gates[GATE_INPUT],
                        &trace.gates[GATE_FORGET],
                        &trace.gates[GATE_CELL],
                        &trace.gates[GATE_OUTPUT],
                    );
                    let mut d_i = vec![T::zero(); h_len];
                    let mut d_f = vec![T::zero(); h_len];
                    let mut d_g = vec![T::zero(); h_len];
                    let mut d_o = vec![T::zero(); h_len];
                    let mut dc_prev = vec![T::zero(); h_len];
                    for u in 0..h_len {
                        let tc = trace.tanh_c[u];
                        d_o[u] = dh[u] * tc * o[u] * (T::one() - o[u]);
                        let dcu = dc[u] + dh[u] * o[u] * (T::one() - tc * tc);
                        d_f[u] = dcu * trace.c_prev[u] * f[u] * (T::one() - f[u]);
                        d_i[u] = dcu * g[u] * i[u] * (T::one() - i[u]);
                        d_g[u] = dcu * i[u] * (T::one() - g[u] * g[u]);
                        dc_prev[u] = dcu * f[u];
                    }
                    dc = dc_prev;
                    vec![d_i, d_f, d_g, d_o]
                }
            };

            // through the TT maps into biases, cores, and the previous state
            let mut dh_prev_masked = vec![T::zero(); h_len];
            for g in 0..gates {
                for (b, &d) in grads.bias[g].iter_mut().zip(&d_pre[g]) {
                    *b += d;
                }
                let (_dx, core_g_ih) =
                    contract::backward(&self.w_ih[g], &trace.ih_traces[g], &d_pre[g]);
                grads.accumulate_cores(true, g, &core_g_ih);
                let (dhg, core_g_hh) =
                    contract::backward(&self.w_hh[g], &trace.hh_traces[g], &d_pre[g]);
                for (a, b) in dh_prev_masked.iter_mut().zip(&dhg) {
                    *a += *b;
                }
                grads.accumulate_cores(false, g, &core_g_hh);
            }

            // undo the mask to reach the raw previous hidden state
            dh = match masks {
                Some(m) => dh_prev_masked
                    .iter()
                    .zip(&m.hidden)
                    .map(|(&d, &s)| d * s)
                    .collect(),
                None => dh_prev_masked,
            };
        }

        Ok((loss, grads))
    }
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().cloned().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.iter().map(|&e| e / sum).collect()
}

/// Gradients with the same block structure as the model parameters.
#[derive(Debug, Clone)]
pub struct TTRnnGrads<T: Real> {
    pub w_ih: Vec<Vec<Vec<T>>>,
    pub w_hh: Vec<Vec<Vec<T>>>,
    pub bias: Vec<Vec<T>>,
    pub head_w: Vec<T>,
    pub head_b: Vec<T>,
}

impl<T: Real> TTRnnGrads<T> {
    pub fn zeros(model: &TTRnnModel<T>) -> Self {
        TTRnnGrads {
            w_ih: model
                .w_ih
                .iter()
                .map(|m| m.cores().iter().map(|c| vec![T::zero(); c.len()]).collect())
                .collect(),
            w_hh: model
                .w_hh
                .iter()
                .map(|m| m.cores().iter().map(|c| vec![T::zero(); c.len()]).collect())
                .collect(),
            bias: model.bias.iter().map(|b| vec![T::zero(); b.len()]).collect(),
            head_w: vec![T::zero(); model.head_w.len()],
            head_b: vec![T::zero(); model.head_b.len()],
        }
    }

    fn accumulate_cores(&mut self, is_ih: bool, gate: usize, core_grads: &[Vec<T>]) {
        let target = if is_ih {
            &mut self.w_ih[gate]
        } else {
            &mut self.w_hh[gate]
        };
        for (dst, src) in target.iter_mut().zip(core_grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    pub fn add_assign(&mut self, other: &TTRnnGrads<T>) {
        fn add3<T: Real>(a: &mut [Vec<Vec<T>>], b: &[Vec<Vec<T>>]) {
            for (ga, gb) in a.iter_mut().zip(b) {
                for (ca, cb) in ga.iter_mut().zip(gb) {
                    for (x, y) in ca.iter_mut().zip(cb) {
                        *x += *y;
                    }
                }
            }
        }
        add3(&mut self.w_ih, &other.w_ih);
        add3(&mut self.w_hh, &other.w_hh);
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (x, y) in self.head_w.iter_mut().zip(&other.head_w) {
            *x += *y;
        }
        for (x, y) in self.head_b.iter_mut().zip(&other.head_b) {
            *x += *y;
        }
    }

    /// Canonical flat order: ih cores per gate, hh cores per gate, biases,
    /// head weights, head bias. Must match [`TTRnnModel::params_flat`].
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for gate in &self.w_ih {
            for core in gate {
                out.extend_from_slice(core);
            }
        }
        for gate in &self.w_hh {
            for core in gate {
                out.extend_from_slice(core);
            }
        }
        for b in &self.bias {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }
}

impl<T: Real> TTRnnModel<T> {
    /// Flat view of every trainable parameter, in the canonical order.
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for gate in &self.w_ih {
            for core in gate.cores() {
                out.extend_from_slice(core.as_slice());
            }
        }
        for gate in &self.w_hh {
            for core in gate.cores() {
                out.extend_from_slice(core.as_slice());
            }
        }
        for b in &self.bias {
            out.extend_from_slice(b);
        }
        out.extend_from_slice(&self.head_w);
        out.extend_from_slice(&self.head_b);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[T]) -> Result<(), TtrnnError> {
        let mut pos = 0usize;
        fn take(pos: &mut usize, len: usize, total: usize) -> Result<std::ops::Range<usize>, TtrnnError> {
            if *pos + len > total {
                return Err(TtrnnError::Shape("flat parameter vector too short".into()));
            }
            let r = *pos..*pos + len;
            *pos += len;
            Ok(r)
        }
        let total = flat.len();
        for gate in &mut self.w_ih {
            for core in gate.cores_mut() {
                let r = take(&mut pos, core.len(), total)?;
                core.as_mut_slice().copy_from_slice(&flat[r]);
            }
        }
        for gate in &mut self.w_hh {
            for core in gate.cores_mut() {
                let r = take(&mut pos, core.len(), total)?;
                core.as_mut_slice().copy_from_slice(&flat[r]);
            }
        }
        for b in &mut self.bias {
            let r = take(&mut pos, b.len(), total)?;
            b.copy_from_slice(&flat[r]);
        }
        let r = take(&mut pos, self.head_w.len(), total)?;
        self.head_w.copy_from_slice(&flat[r]);
        let r = take(&mut pos, self.head_b.len(), total)?;
        self.head_b.copy_from_slice(&flat[r]);
        if pos != flat.len() {
            return Err(TtrnnError::Shape("flat parameter vector too long".into()));
        }
        Ok(())
    }

    /// Trainable parameters inside the TT maps only (the compression
    /// headline); `total_param_count` adds biases and the head.
    pub fn tt_param_count(&self) -> u64 {
        let ih = tt_param_count(
            &self.config.input_modes,
            &self.config.hidden_modes,
            &self.config.ranks_ih,
        )
        .expect("validated config");
        let hh = tt_param_count(
            &self.config.hidden_modes,
            &self.config.hidden_modes,
            &self.config.ranks_hh,
        )
        .expect("validated config");
        (ih + hh) * self.config.cell.gates() as u64
    }

    pub fn total_param_count(&self) -> u64 {
        (self.w_ih.iter().map(|m| m.param_count()).sum::<u64>())
            + self.w_hh.iter().map(|m| m.param_count()).sum::<u64>()
            + self.bias.iter().map(|b| b.len() as u64).sum::<u64>()
            + self.head_w.len() as u64
            + self.head_b.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epochs: 50,
            lr: 1e-3,
            batch_size: 16,
            optimizer: OptimizerKind::default(),
            seed: 0,
        }
    }
}

/// One line of the exported training history.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub valid_acc: f64,
    pub seconds: f64,
}

struct OptimizerState {
    kind: OptimizerKind,
    momentum_buf: Vec<f64>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        OptimizerState {
            kind,
            momentum_buf: vec![0.0; n],
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { momentum } => {
                for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.momentum_buf) {
                    *v = momentum * *v - lr * g.as_f64();
                    *p += T::of_f64(*v);
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
                    let gf = g.as_f64();
                    self.adam_m[i] = beta1 * self.adam_m[i] + (1.0 - beta1) * gf;
                    self.adam_v[i] = beta2 * self.adam_v[i] + (1.0 - beta2) * gf * gf;
                    let mhat = self.adam_m[i] / bc1;
                    let vhat = self.adam_v[i] / bc2;
                    *p -= T::of_f64(lr * mhat / (vhat.sqrt() + eps));
                }
            }
        }
    }
}

/// Minibatch training loop. Deterministic given `(opts.seed, data)`: the
/// shuffle, the dropout streams, and the gradient reduction order are all
/// fixed.
pub fn fit<T: Real>(
    model: &mut TTRnnModel<T>,
    train: &[FeatureSequence<T>],
    valid: &[FeatureSequence<T>],
    opts: &FitOptions,
) -> Result<Vec<EpochRecord>, TtrnnError> {
    if train.is_empty() {
        return Err(TtrnnError::Shape("empty training set".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(TtrnnError::BadConfig(
            "epochs and batch size must be >= 1".into(),
        ));
    }
    let mut params = model.params_flat();
    let mut opt = OptimizerState::new(opts.optimizer, params.len());
    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..opts.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(opts.batch_size).enumerate() {
            let batch: Vec<FeatureSequence<T>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let mask_seed = opts
                .seed
                .wrapping_mul(0x0100_0000_01b3)
                .wrapping_add((epoch as u64) << 20)
                .wrapping_add(batch_idx as u64);
            let (loss, grads) = model.loss_and_grads(&batch, Some(mask_seed))?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            opt.apply(&mut params, &grads.to_flat(), opts.lr);
            model.set_params_flat(&params)?;
        }

        let train_acc = model.evaluate(train)?;
        let valid_acc = model.evaluate(valid)?;
        history.push(EpochRecord {
            epoch,
            loss: epoch_loss / seen as f64,
            train_acc,
            valid_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(history)
}

/// Serializes history records as line-delimited JSON.
pub fn history_to_jsonl(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec).expect("plain struct serializes"));
        out.push('\n');
    }
    out
}
