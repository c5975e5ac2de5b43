//! Parameter-holding building blocks shared by the encoder and mask estimator.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{
    uniform, xavier_uniform, BatchNormMode, BatchStats, CellKind, Direction, ParamId, ParamStore,
    RnnParams, Tape, Tensor, Var, BATCHNORM_EPS,
};

/// Running mean and unbiased variance of one batch-norm layer, `None` until
/// the first training batch.
pub type RunningStats = Option<(Vec<f64>, Vec<f64>)>;

/// Whether batch norm layers normalize with batch or running statistics.
#[derive(Clone, Copy, Debug)]
pub enum NormPhase<'a> {
    Train,
    Eval(&'a [RunningStats]),
}

/// Fully connected layer `x W + b` with `W [in x out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        let w = store.add(
            format!("{name}.w"),
            xavier_uniform(rng, &[fan_in, fan_out], fan_in, fan_out),
        )?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]))?;
        Ok(Linear { w, b })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let y = tape.matmul(x, tape.param(store, self.w))?;
        tape.add_bias(y, tape.param(store, self.b))
    }
}

/// Parameter ids of one recurrent direction.
#[derive(Clone, Copy, Debug)]
pub struct RnnIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
}

impl RnnIds {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let g = kind.gates() * hidden;
        Ok(RnnIds {
            w_ih: store.add(format!("{name}.w_ih"), xavier_uniform(rng, &[input, g], input, g))?,
            w_hh: store.add(format!("{name}.w_hh"), xavier_uniform(rng, &[hidden, g], hidden, g))?,
            b_ih: store.add(format!("{name}.b_ih"), Tensor::zeros(&[g]))?,
            b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(&[g]))?,
        })
    }

    fn bind(&self, tape: &Tape, store: &ParamStore) -> RnnParams {
        RnnParams {
            w_ih: tape.param(store, self.w_ih),
            w_hh: tape.param(store, self.w_hh),
            b_ih: tape.param(store, self.b_ih),
            b_hh: tape.param(store, self.b_hh),
        }
    }
}

/// Bidirectional recurrent layer; output width is twice the hidden size.
#[derive(Clone, Copy, Debug)]
pub struct BiRnn {
    pub kind: CellKind,
    pub fwd: RnnIds,
    pub bwd: RnnIds,
}

impl BiRnn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        let fwd = RnnIds::new(store, rng, &format!("{name}.fwd"), kind, input, hidden)?;
        let bwd = RnnIds::new(store, rng, &format!("{name}.bwd"), kind, input, hidden)?;
        Ok(BiRnn { kind, fwd, bwd })
    }

    pub fn forward(&self, tape: &Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let params = [self.fwd.bind(tape, store), self.bwd.bind(tape, store)];
        tape.recurrent_sequence(self.kind, Direction::Bidirectional, x, &params, None)
    }
}

/// 3x3 convolution (stride 1 in time, 2 in frequency) + batch norm + ReLU.
#[derive(Clone, Copy, Debug)]
pub struct ConvBlock {
    pub kernel: ParamId,
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const CONV_STRIDE: (usize, usize) = (1, 2);
pub const CONV_PADDING: (usize, usize) = (1, 1);

impl ConvBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        index: usize,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        let (fan_in, fan_out) = (c_in * 9, c_out * 9);
        let kernel = store.add(
            format!("enc.conv{index}.kernel"),
            xavier_uniform(rng, &[c_out, c_in, 3, 3], fan_in, fan_out),
        )?;
        let gamma = store.add(format!("enc.bn{index}.gamma"), Tensor::full(&[c_out], 1.0))?;
        let beta = store.add(format!("enc.bn{index}.beta"), Tensor::zeros(&[c_out]))?;
        Ok(ConvBlock {
            kernel,
            gamma,
            beta,
        })
    }

    pub fn forward(
        &self,
        tape: &Tape,
        store: &ParamStore,
        x: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let y = tape.conv2d(x, tape.param(store, self.kernel), CONV_STRIDE, CONV_PADDING)?;
        let (y, stats) = tape.batchnorm2d(
            y,
            tape.param(store, self.gamma),
            tape.param(store, self.beta),
            mode,
            BATCHNORM_EPS,
        )?;
        Ok((tape.relu(y)?, stats))
    }
}

/// Uniform template initialization in `(-0.5, 0.5)`.
pub fn template_init<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Tensor {
    uniform(rng, &[n, dim], 0.5)
}
