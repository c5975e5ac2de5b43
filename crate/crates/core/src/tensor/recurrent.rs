use super::kernels::{self, axpy, dot, gemm, sigmoid};
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    /// Gate blocks per hidden unit: GRU `[r, z, n]`, LSTM `[i, f, g, o]`.
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Bidirectional,
}

/// Weights of one direction: `w_ih [D x G*H]`, `w_hh [H x G*H]`, biases `[G*H]`.
#[derive(Clone, Copy, Debug)]
pub struct RnnParams {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

/// Values saved by the forward recursion for backpropagation through time.
struct Trace {
    order: Vec<usize>,
    /// Activated gates per frame, `[T x G*H]`.
    gates: Vec<f64>,
    /// Hidden state entering each frame, `[T x H]`.
    h_prev: Vec<f64>,
    /// LSTM cell state entering each frame and tanh of the new cell state.
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
    /// GRU recurrent candidate term `h_prev . W_hn + b_hn`.
    hn: Vec<f64>,
}

impl Tape {
    /// Runs one recurrent direction over a `[T x D]` sequence and returns the
    /// hidden states `[T x H]`, aligned with the input frames. `reverse`
    /// processes frames from last to first.
    pub fn rnn(
        &self,
        kind: CellKind,
        reverse: bool,
        input: Var,
        p: &RnnParams,
        h0: Option<&[f64]>,
    ) -> Result<Var> {
        let x = self.value(input);
        let (w_ih, w_hh) = (self.value(p.w_ih), self.value(p.w_hh));
        let (b_ih, b_hh) = (self.value(p.b_ih), self.value(p.b_hh));
        let (t_len, d) = x.dims2()?;
        if t_len == 0 {
            return Err(Error::Empty("recurrent sequence with zero frames".into()));
        }
        let (d_w, gh) = w_ih.dims2()?;
        let g = kind.gates();
        let h = gh / g;
        if d_w != d || gh % g != 0 {
            return Err(Error::dim("rnn", x.shape(), w_ih.shape()));
        }
        if w_hh.shape() != [h, gh] || b_ih.shape() != [gh] || b_hh.shape() != [gh] {
            return Err(Error::dim("rnn", w_hh.shape(), &[h, gh]));
        }
        if let Some(h0) = h0 {
            if h0.len() != h {
                return Err(Error::dim("rnn", &[h0.len()], &[h]));
            }
        }

        // Input projections for all frames at once.
        let mut xp = kernels::matmul(t_len, d, gh, x.data(), w_ih.data());
        for row in xp.chunks_exact_mut(gh) {
            row.iter_mut().zip(b_ih.data()).for_each(|(a, b)| *a += b);
        }

        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        let mut trace = Trace {
            order,
            gates: vec![0.0; t_len * gh],
            h_prev: vec![0.0; t_len * h],
            c_prev: Vec::new(),
            tanh_c: Vec::new(),
            hn: Vec::new(),
        };
        let mut out = vec![0.0; t_len * h];
        let mut h_state = h0.map_or_else(|| vec![0.0; h], <[f64]>::to_vec);
        let mut rec = vec![0.0; gh];
        match kind {
            CellKind::Lstm => {
                trace.c_prev = vec![0.0; t_len * h];
                trace.tanh_c = vec![0.0; t_len * h];
                let mut c_state = vec![0.0; h];
                for &t in &trace.order {
                    rec.copy_from_slice(b_hh.data());
                    for k in 0..h {
                        axpy(&mut rec, h_state[k], &w_hh.data()[k * gh..(k + 1) * gh]);
                    }
                    trace.h_prev[t * h..(t + 1) * h].copy_from_slice(&h_state);
                    trace.c_prev[t * h..(t + 1) * h].copy_from_slice(&c_state);
                    let a = &xp[t * gh..(t + 1) * gh];
                    let gates = &mut trace.gates[t * gh..(t + 1) * gh];
                    for j in 0..h {
                        let i_g = sigmoid(a[j] + rec[j]);
                        let f_g = sigmoid(a[h + j] + rec[h + j]);
                        let g_g = (a[2 * h + j] + rec[2 * h + j]).tanh();
                        let o_g = sigmoid(a[3 * h + j] + rec[3 * h + j]);
                        gates[j] = i_g;
                        gates[h + j] = f_g;
                        gates[2 * h + j] = g_g;
                        gates[3 * h + j] = o_g;
                        c_state[j] = f_g * c_state[j] + i_g * g_g;
                        let tc = c_state[j].tanh();
                        trace.tanh_c[t * h + j] = tc;
                        h_state[j] = o_g * tc;
                    }
                    out[t * h..(t + 1) * h].copy_from_slice(&h_state);
                }
            }
            CellKind::Gru => {
                trace.hn = vec![0.0; t_len * h];
                for &t in &trace.order {
                    rec.copy_from_slice(b_hh.data());
                    for k in 0..h {
                        axpy(&mut rec, h_state[k], &w_hh.data()[k * gh..(k + 1) * gh]);
                    }
                    trace.h_prev[t * h..(t + 1) * h].copy_from_slice(&h_state);
                    let a = &xp[t * gh..(t + 1) * gh];
                    let gates = &mut trace.gates[t * gh..(t + 1) * gh];
                    for j in 0..h {
                        let r = sigmoid(a[j] + rec[j]);
                        let z = sigmoid(a[h + j] + rec[h + j]);
                        let hn = rec[2 * h + j];
                        let n = (a[2 * h + j] + r * hn).tanh();
                        gates[j] = r;
                        gates[h + j] = z;
                        gates[2 * h + j] = n;
                        trace.hn[t * h + j] = hn;
                        h_state[j] = (1.0 - z) * n + z * h_state[j];
                    }
                    out[t * h..(t + 1) * h].copy_from_slice(&h_state);
                }
            }
        }

        let op = match kind {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        };
        let out = Tensor::new(&[t_len, h], out)?;
        self.record(
            op,
            &[input, p.w_ih, p.w_hh, p.b_ih, p.b_hh],
            out,
            Box::new(move |ctx| {
                let (x, w_ih, w_hh) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
                // Gradients w.r.t. the input-side pre-activations (dxp) and the
                // recurrent-side pre-activations (dhp); they differ only for GRU.
                let mut dxp = vec![0.0; t_len * gh];
                let mut dhp = vec![0.0; t_len * gh];
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                for &t in trace.order.iter().rev() {
                    let gates = &trace.gates[t * gh..(t + 1) * gh];
                    let hp = &trace.h_prev[t * h..(t + 1) * h];
                    let dx_row = &mut dxp[t * gh..(t + 1) * gh];
                    let dh_row = &mut dhp[t * gh..(t + 1) * gh];
                    let mut dh_prev = vec![0.0; h];
                    match kind {
                        CellKind::Lstm => {
                            let cp = &trace.c_prev[t * h..(t + 1) * h];
                            let tc = &trace.tanh_c[t * h..(t + 1) * h];
                            for j in 0..h {
                                let dh = ctx.grad[t * h + j] + dh_next[j];
                                let (i_g, f_g, g_g, o_g) =
                                    (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                                let dc = dh * o_g * (1.0 - tc[j] * tc[j]) + dc_next[j];
                                dx_row[j] = dc * g_g * i_g * (1.0 - i_g);
                                dx_row[h + j] = dc * cp[j] * f_g * (1.0 - f_g);
                                dx_row[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                                dx_row[3 * h + j] = dh * tc[j] * o_g * (1.0 - o_g);
                                dc_next[j] = dc * f_g;
                            }
                            dh_row.copy_from_slice(dx_row);
                        }
                        CellKind::Gru => {
                            let hn = &trace.hn[t * h..(t + 1) * h];
                            for j in 0..h {
                                let dh = ctx.grad[t * h + j] + dh_next[j];
                                let (r, z, n) = (gates[j], gates[h + j], gates[2 * h + j]);
                                let da_n = dh * (1.0 - z) * (1.0 - n * n);
                                let da_z = dh * (hp[j] - n) * z * (1.0 - z);
                                let da_r = da_n * hn[j] * r * (1.0 - r);
                                dx_row[j] = da_r;
                                dx_row[h + j] = da_z;
                                dx_row[2 * h + j] = da_n;
                                dh_row[j] = da_r;
                                dh_row[h + j] = da_z;
                                dh_row[2 * h + j] = da_n * r;
                                dh_prev[j] = dh * z;
                            }
                        }
                    }
                    for k in 0..h {
                        dh_prev[k] += dot(&w_hh.data()[k * gh..(k + 1) * gh], dh_row);
                    }
                    dh_next = dh_prev;
                }

                let dx = ctx.needs[0].then(|| {
                    let mut g = vec![0.0; t_len * d];
                    gemm(t_len, gh, d, 1.0, &dxp, false, w_ih.data(), true, 0.0, &mut g);
                    g
                });
                let dw_ih = ctx.needs[1].then(|| {
                    let mut g = vec![0.0; d * gh];
                    gemm(d, t_len, gh, 1.0, x.data(), true, &dxp, false, 0.0, &mut g);
                    g
                });
                let dw_hh = ctx.needs[2].then(|| {
                    let mut g = vec![0.0; h * gh];
                    gemm(h, t_len, gh, 1.0, &trace.h_prev, true, &dhp, false, 0.0, &mut g);
                    g
                });
                let db_ih = ctx.needs[3].then(|| kernels::column_sums(&dxp, gh));
                let db_hh = ctx.needs[4].then(|| kernels::column_sums(&dhp, gh));
                vec![dx, dw_ih, dw_hh, db_ih, db_hh]
            }),
        )
    }

    /// Unidirectional or bidirectional recurrent layer. For bidirectional
    /// sequences `params` holds the forward then the backward weights and the
    /// two hidden states are concatenated per frame.
    pub fn recurrent_sequence(
        &self,
        kind: CellKind,
        direction: Direction,
        input: Var,
        params: &[RnnParams],
        h0: Option<&[f64]>,
    ) -> Result<Var> {
        match (direction, params) {
            (Direction::Forward, [p]) => self.rnn(kind, false, input, p, h0),
            (Direction::Bidirectional, [fwd, bwd]) => {
                let a = self.rnn(kind, false, input, fwd, h0)?;
                let b = self.rnn(kind, true, input, bwd, h0)?;
                self.concat_cols(&[a, b])
            }
            _ => Err(Error::Config(format!(
                "{direction:?} recurrent layer given {} parameter sets",
                params.len()
            ))),
        }
    }
}
