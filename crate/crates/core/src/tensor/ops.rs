use super::kernels::{self, gemm};
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn binary_shapes(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl Tape {
    /// Matrix product `[m x k] . [k x n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k) = av.dims2()?;
        let (k2, n) = bv.dims2()?;
        if k != k2 {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let out = Tensor::new(&[m, n], kernels::matmul(m, k, n, av.data(), bv.data()))?;
        self.record(
            "matmul",
            &[a, b],
            out,
            Box::new(move |ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                let da = ctx.needs[0].then(|| {
                    let mut g = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, ctx.grad, false, b.data(), true, 0.0, &mut g);
                    g
                });
                let db = ctx.needs[1].then(|| {
                    let mut g = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, a.data(), true, ctx.grad, false, 0.0, &mut g);
                    g
                });
                vec![da, db]
            }),
        )
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        binary_shapes("add", &av, &bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.record(
            "add",
            &[a, b],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        binary_shapes("sub", &av, &bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.record(
            "sub",
            &[a, b],
            out,
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|g| -g).collect()),
                ]
            }),
        )
    }

    /// Elementwise product.
    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        binary_shapes("mul", &av, &bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(av.shape(), data)?;
        self.record(
            "mul",
            &[a, b],
            out,
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let da = ctx.needs[0].then(|| ctx.grad.iter().zip(b).map(|(g, y)| g * y).collect());
                let db = ctx.needs[1].then(|| ctx.grad.iter().zip(a).map(|(g, x)| g * x).collect());
                vec![da, db]
            }),
        )
    }

    pub fn scale(&self, a: Var, s: f64) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape(), av.data().iter().map(|x| x * s).collect())?;
        self.record(
            "scale",
            &[a],
            out,
            Box::new(move |ctx| vec![Some(ctx.grad.iter().map(|g| g * s).collect())]),
        )
    }

    /// Adds a vector along the last axis of `a`.
    pub fn add_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let n = *av.shape().last().unwrap_or(&1);
        if bv.len() != n || bv.ndim() != 1 {
            return Err(Error::dim("add_bias", av.shape(), bv.shape()));
        }
        let mut data = av.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(bv.data()).for_each(|(x, b)| *x += b);
        }
        let out = Tensor::new(av.shape(), data)?;
        self.record(
            "add_bias",
            &[a, bias],
            out,
            Box::new(move |ctx| {
                let db = ctx.needs[1].then(|| kernels::column_sums(ctx.grad, n));
                vec![Some(ctx.grad.to_vec()), db]
            }),
        )
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.len();
        let out = Tensor::scalar(av.data().iter().sum());
        self.record(
            "sum",
            &[a],
            out,
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = av.len();
        if n == 0 {
            return Err(Error::Empty("mean of an empty tensor".into()));
        }
        let out = Tensor::scalar(av.data().iter().sum::<f64>() / n as f64);
        self.record(
            "mean",
            &[a],
            out,
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0] / n as f64; n])]),
        )
    }

    fn unary(
        &self,
        op: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        // derivative expressed through (input, output)
        df: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let av = self.value(a);
        let out = Tensor::new(av.shape(), av.data().iter().map(|&x| f(x)).collect())?;
        self.record(
            op,
            &[a],
            out,
            Box::new(move |ctx| {
                let x = ctx.inputs[0].data();
                let y = ctx.output.data();
                let g = ctx
                    .grad
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        self.note_kinks(self.value(a).data());
        self.unary("relu", a, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Result<Var> {
        let av = self.value(a);
        self.note_kinks(av.data());
        let out = Tensor::new(
            av.shape(),
            av.data().iter().map(|&x| if x > 0.0 { x } else { slope * x }).collect(),
        )?;
        self.record(
            "leaky_relu",
            &[a],
            out,
            Box::new(move |ctx| {
                let g = ctx
                    .grad
                    .iter()
                    .zip(ctx.inputs[0].data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, kernels::sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        self.unary("tanh", a, f64::tanh, |_, y| 1.0 - y * y)
    }

    /// Softmax along `axis`.
    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let av = self.value(a);
        let shape = av.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Config(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut y = av.data().to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| y[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (y[idx(j)] - max).exp();
                    y[idx(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    y[idx(j)] /= total;
                }
            }
        }
        let out = Tensor::new(&shape, y)?;
        self.record(
            "softmax",
            &[a],
            out,
            Box::new(move |ctx| {
                let y = ctx.output.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let s: f64 = (0..n).map(|j| ctx.grad[idx(j)] * y[idx(j)]).sum();
                        for j in 0..n {
                            dx[idx(j)] = y[idx(j)] * (ctx.grad[idx(j)] - s);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Concatenates matrices with equal row counts along the columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let values: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let first = values
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let (rows, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(values.len());
        for v in &values {
            let (r, c) = v.dims2()?;
            if r != rows {
                return Err(Error::dim("concat_cols", first.shape(), v.shape()));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        self.record(
            "concat_cols",
            parts,
            out,
            Box::new(move |ctx| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(ctx.needs)
                    .map(|(&w, &need)| {
                        let start = offset;
                        offset += w;
                        need.then(|| {
                            let mut g = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                let row = &ctx.grad[r * total..(r + 1) * total];
                                g.extend_from_slice(&row[start..start + w]);
                            }
                            g
                        })
                    })
                    .collect()
            }),
        )
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = av.dims2()?;
        if start + len > cols {
            return Err(Error::Config(format!(
                "column slice {start}..{} exceeds {cols} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor::new(&[rows, len], data)?;
        self.record(
            "slice_cols",
            &[a],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; rows * cols];
                for r in 0..rows {
                    g[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&ctx.grad[r * len..(r + 1) * len]);
                }
                vec![Some(g)]
            }),
        )
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = av.dims2()?;
        let out = Tensor::new(&[c, r], transpose(av.data(), r, c))?;
        self.record(
            "transpose",
            &[a],
            out,
            Box::new(move |ctx| vec![Some(transpose(ctx.grad, c, r))]),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let out = (*av).clone().reshaped(shape)?;
        self.record(
            "reshape",
            &[a],
            out,
            Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
        )
    }

    /// Reorders the axes of a 3-D tensor: output axis `i` is input axis `perm[i]`.
    pub fn permute3(&self, a: Var, perm: [usize; 3]) -> Result<Var> {
        let av = self.value(a);
        let s = av.shape().to_vec();
        let mut sorted = perm;
        sorted.sort_unstable();
        if s.len() != 3 || sorted != [0, 1, 2] {
            return Err(Error::Config(format!("bad permutation {perm:?} for {s:?}")));
        }
        let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
        let in_strides = [s[1] * s[2], s[2], 1];
        let map = move |o: usize| {
            let i0 = o / (out_shape[1] * out_shape[2]);
            let i1 = (o / out_shape[2]) % out_shape[1];
            let i2 = o % out_shape[2];
            let mut idx = [0usize; 3];
            idx[perm[0]] = i0;
            idx[perm[1]] = i1;
            idx[perm[2]] = i2;
            idx[0] * in_strides[0] + idx[1] * in_strides[1] + idx[2] * in_strides[2]
        };
        let n = av.len();
        let data = (0..n).map(|o| av.data()[map(o)]).collect();
        let out = Tensor::new(&out_shape, data)?;
        self.record(
            "permute3",
            &[a],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; n];
                for (o, v) in ctx.grad.iter().enumerate() {
                    g[map(o)] = *v;
                }
                vec![Some(g)]
            }),
        )
    }
}

pub(crate) fn transpose(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}
