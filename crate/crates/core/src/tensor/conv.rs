use super::kernels::gemm;
use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Output length of a 1-D convolution axis, `None` if the window never fits.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < kernel {
        return None;
    }
    Some((len + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    c_in: usize,
    t: usize,
    f: usize,
    kt: usize,
    kf: usize,
    st: usize,
    sf: usize,
    pt: usize,
    pf: usize,
    t_out: usize,
    f_out: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c_in * self.kt * self.kf
    }

    fn positions(&self) -> usize {
        self.t_out * self.f_out
    }

    /// Calls `visit(col_row, col_pos, input_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize, usize)) {
        for c in 0..self.c_in {
            for dt in 0..self.kt {
                for df in 0..self.kf {
                    let row = (c * self.kt + dt) * self.kf + df;
                    for to in 0..self.t_out {
                        let ti = (to * self.st + dt) as isize - self.pt as isize;
                        if ti < 0 || ti >= self.t as isize {
                            continue;
                        }
                        let base = (c * self.t + ti as usize) * self.f;
                        for fo in 0..self.f_out {
                            let fi = (fo * self.sf + df) as isize - self.pf as isize;
                            if fi < 0 || fi >= self.f as isize {
                                continue;
                            }
                            visit(row, to * self.f_out + fo, base + fi as usize);
                        }
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let npos = self.positions();
        let mut cols = vec![0.0; self.patch() * npos];
        self.for_each_tap(|row, pos, idx| cols[row * npos + pos] = input[idx]);
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let npos = self.positions();
        let mut out = vec![0.0; self.c_in * self.t * self.f];
        self.for_each_tap(|row, pos, idx| out[idx] += cols[row * npos + pos]);
        out
    }
}

impl Tape {
    /// 2-D cross-correlation (no kernel flip) of a `[C_in x T x F]` input
    /// with a `[C_out x C_in x kT x kF]` kernel.
    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (x, w) = (self.value(input), self.value(kernel));
        let (&[c_in, t, f], &[c_out, c_in_k, kt, kf]) = (x.shape(), w.shape()) else {
            return Err(Error::dim("conv2d", x.shape(), w.shape()));
        };
        if c_in != c_in_k {
            return Err(Error::dim("conv2d", x.shape(), w.shape()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Config("conv2d stride must be at least 1".into()));
        }
        let t_out = conv_output_len(t, kt, stride.0, padding.0);
        let f_out = conv_output_len(f, kf, stride.1, padding.1);
        let (Some(t_out), Some(f_out)) = (t_out, f_out) else {
            return Err(Error::Config(format!(
                "conv2d output would be empty for input {:?} and kernel {:?}",
                x.shape(),
                w.shape()
            )));
        };
        let geo = Geometry {
            c_in,
            t,
            f,
            kt,
            kf,
            st: stride.0,
            sf: stride.1,
            pt: padding.0,
            pf: padding.1,
            t_out,
            f_out,
        };
        let cols = geo.im2col(x.data());
        let (patch, npos) = (geo.patch(), geo.positions());
        let mut out = vec![0.0; c_out * npos];
        gemm(c_out, patch, npos, 1.0, w.data(), false, &cols, false, 0.0, &mut out);
        let out = Tensor::new(&[c_out, t_out, f_out], out)?;
        self.record(
            "conv2d",
            &[input, kernel],
            out,
            Box::new(move |ctx| {
                let dx = ctx.needs[0].then(|| {
                    let mut dcols = vec![0.0; patch * npos];
                    gemm(
                        patch,
                        c_out,
                        npos,
                        1.0,
                        ctx.inputs[1].data(),
                        true,
                        ctx.grad,
                        false,
                        0.0,
                        &mut dcols,
                    );
                    geo.col2im(&dcols)
                });
                let dw = ctx.needs[1].then(|| {
                    let mut g = vec![0.0; c_out * patch];
                    gemm(c_out, npos, patch, 1.0, ctx.grad, false, &cols, true, 0.0, &mut g);
                    g
                });
                vec![dx, dw]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_chain_of_six_strided_layers() {
        let mut f = 257;
        let mut dims = vec![f];
        for _ in 0..6 {
            f = conv_output_len(f, 3, 2, 1).unwrap();
            dims.push(f);
        }
        assert_eq!(dims, vec![257, 129, 65, 33, 17, 9, 5]);
        assert_eq!(conv_output_len(40, 3, 1, 1), Some(40));
    }

    #[test]
    fn centre_tap_kernel_is_identity() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[1, 5, 7], |i| (i as f64 * 0.37).cos());
        let xi = tape.constant(x.clone());
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let kv = tape.constant(k);
        let y = tape.conv2d(xi, kv, (1, 1), (1, 1)).unwrap();
        assert_eq!(*tape.value(y), x);
    }

    #[test]
    fn matches_direct_cross_correlation() {
        let tape = Tape::new();
        let x = Tensor::from_fn(&[2, 4, 6], |i| ((i * 7 % 11) as f64) - 5.0);
        let k = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 5 % 13) as f64) * 0.1 - 0.6);
        let y = tape
            .conv2d(tape.constant(x.clone()), tape.constant(k.clone()), (1, 2), (1, 1))
            .unwrap();
        let y = tape.value(y);
        assert_eq!(y.shape(), &[3, 4, 3]);
        for o in 0..3 {
            for t in 0..4 {
                for f in 0..3 {
                    let mut acc = 0.0;
                    for c in 0..2 {
                        for dt in 0..3 {
                            for df in 0..3 {
                                let ti = t as isize + dt as isize - 1;
                                let fi = (f * 2) as isize + df as isize - 1;
                                if ti < 0 || ti >= 4 || fi < 0 || fi >= 6 {
                                    continue;
                                }
                                acc += x.data()[(c * 4 + ti as usize) * 6 + fi as usize]
                                    * k.data()[((o * 2 + c) * 3 + dt) * 3 + df];
                            }
                        }
                    }
                    assert!((y.data()[(o * 4 + t) * 3 + f] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_output_is_a_configuration_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 1]));
        let k = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(tape.conv2d(x, k, (1, 1), (0, 0)), Err(Error::Config(_))));
    }
}
