use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalize each channel with statistics of the current input.
    Train,
    /// Normalize with stored running statistics; `None` means never trained.
    Eval {
        running: Option<(&'a [f64], &'a [f64])>,
    },
}

/// Per-channel statistics of one training-mode call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance over the normalized axes.
    pub var: Vec<f64>,
    pub count: usize,
}

impl BatchStats {
    /// Exponential moving average update of running statistics; the first
    /// update adopts the batch statistics directly.
    pub fn update_running(&self, running: &mut Option<(Vec<f64>, Vec<f64>)>, momentum: f64) {
        let unbias = if self.count > 1 {
            self.count as f64 / (self.count - 1) as f64
        } else {
            1.0
        };
        match running {
            None => {
                *running = Some((
                    self.mean.clone(),
                    self.var.iter().map(|v| v * unbias).collect(),
                ))
            }
            Some((mean, var)) => {
                for c in 0..mean.len() {
                    mean[c] = (1.0 - momentum) * mean[c] + momentum * self.mean[c];
                    var[c] = (1.0 - momentum) * var[c] + momentum * self.var[c] * unbias;
                }
            }
        }
    }
}

impl Tape {
    /// Batch normalization of a `[C x T x F]` input over `(T, F)` per channel.
    pub fn batchnorm2d(
        &self,
        input: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let x = self.value(input);
        let (gv, bv) = (self.value(gamma), self.value(beta));
        let &[c, t, f] = x.shape() else {
            return Err(Error::dim("batchnorm2d", x.shape(), gv.shape()));
        };
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(Error::dim("batchnorm2d", x.shape(), gv.shape()));
        }
        let n = t * f;
        if n == 0 {
            return Err(Error::Empty("batchnorm2d over an empty plane".into()));
        }

        let (mean, inv_std, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ch in 0..c {
                    let plane = &x.data()[ch * n..(ch + 1) * n];
                    let m = plane.iter().sum::<f64>() / n as f64;
                    let v = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                    mean[ch] = m;
                    var[ch] = v;
                }
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var,
                    count: n,
                };
                (mean, inv_std, Some(stats))
            }
            BatchNormMode::Eval { running } => {
                let (rm, rv) = running.ok_or_else(|| {
                    Error::State("batchnorm running statistics are uninitialized".into())
                })?;
                if rm.len() != c || rv.len() != c {
                    return Err(Error::dim("batchnorm2d", &[rm.len()], &[c]));
                }
                let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                (rm.to_vec(), inv_std, None)
            }
        };
        let train = stats.is_some();

        let mut xhat = vec![0.0; c * n];
        let mut y = vec![0.0; c * n];
        for ch in 0..c {
            let (g, b) = (gv.data()[ch], bv.data()[ch]);
            for i in ch * n..(ch + 1) * n {
                xhat[i] = (x.data()[i] - mean[ch]) * inv_std[ch];
                y[i] = g * xhat[i] + b;
            }
        }
        let out = Tensor::new(&[c, t, f], y)?;
        let var = self.record(
            "batchnorm2d",
            &[input, gamma, beta],
            out,
            Box::new(move |ctx| {
                let gamma = ctx.inputs[1].data();
                let mut dx = vec![0.0; c * n];
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ch in 0..c {
                    let range = ch * n..(ch + 1) * n;
                    let g = &ctx.grad[range.clone()];
                    let xh = &xhat[range.clone()];
                    let sum_g: f64 = g.iter().sum();
                    let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
                    dbeta[ch] = sum_g;
                    dgamma[ch] = sum_gx;
                    let scale = gamma[ch] * inv_std[ch];
                    let dxc = &mut dx[range];
                    if train {
                        let nf = n as f64;
                        for i in 0..n {
                            dxc[i] = scale / nf * (nf * g[i] - sum_g - xh[i] * sum_gx);
                        }
                    } else {
                        for i in 0..n {
                            dxc[i] = scale * g[i];
                        }
                    }
                }
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }),
        )?;
        Ok((var, stats))
    }
}
