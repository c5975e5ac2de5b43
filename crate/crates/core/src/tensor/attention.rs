use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Projection matrices: `wq [D x D]`, `wk [Dk x D]`, `wv [Dv x D]`, `wo [D x D]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

/// Scaled dot-product attention with `heads` heads.
///
/// `query` is `[T x D]`, `keys` `[N x Dk]`, `values` `[N x Dv]`. Each head
/// works on a `D / heads` slice of the projections; head outputs are
/// concatenated and projected back to `D`. Returns the output `[T x D]` and
/// the attention weights `[heads x T x N]`.
pub fn multihead_attention(
    tape: &Tape,
    query: Var,
    keys: Var,
    values: Var,
    heads: usize,
    p: &AttentionParams,
) -> Result<(Var, Tensor)> {
    let q_shape = tape.shape(query);
    let &[t_len, d] = q_shape.as_slice() else {
        return Err(Error::dim("multihead_attention", &q_shape, &[]));
    };
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "model dimension {d} is not divisible by {heads} heads"
        )));
    }
    let n = tape.shape(keys)[0];
    if tape.shape(values)[0] != n {
        return Err(Error::dim(
            "multihead_attention",
            &tape.shape(keys),
            &tape.shape(values),
        ));
    }
    let hd = d / heads;
    let scale = 1.0 / (hd as f64).sqrt();

    let q = tape.matmul(query, p.wq)?;
    let k = tape.matmul(keys, p.wk)?;
    let v = tape.matmul(values, p.wv)?;

    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads * t_len * n);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * hd, hd)?;
        let kh = tape.slice_cols(k, h * hd, hd)?;
        let vh = tape.slice_cols(v, h * hd, hd)?;
        let scores = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, scale)?;
        let attn = tape.softmax(scores, 1)?;
        weights.extend_from_slice(tape.value(attn).data());
        outputs.push(tape.matmul(attn, vh)?);
    }
    let joined = tape.concat_cols(&outputs)?;
    let out = tape.matmul(joined, p.wo)?;
    Ok((out, Tensor::new(&[heads, t_len, n], weights)?))
}
