use super::{NumError, Var};

/// `x·W + b` with `W` stored `in×out` and `b` a `1×out` row.
#[derive(Clone, Copy)]
pub struct LinearWeights<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

#[derive(Clone, Copy)]
pub struct LayerNormWeights<'t> {
    pub gain: Var<'t>,
    pub shift: Var<'t>,
}

#[derive(Clone, Copy)]
pub struct AttentionWeights<'t> {
    pub query: LinearWeights<'t>,
    pub key: LinearWeights<'t>,
    pub value: LinearWeights<'t>,
    pub output: LinearWeights<'t>,
    pub n_heads: usize,
}

#[derive(Clone, Copy)]
pub struct FeedForwardWeights<'t> {
    pub up: LinearWeights<'t>,
    pub down: LinearWeights<'t>,
}

pub fn linear<'t>(x: Var<'t>, w: &LinearWeights<'t>) -> Result<Var<'t>, NumError> {
    x.matmul(w.weight)?.add_row(w.bias)
}

pub fn layer_norm<'t>(x: Var<'t>, w: &LayerNormWeights<'t>) -> Result<Var<'t>, NumError> {
    x.normalize_rows()?.mul_row(w.gain)?.add_row(w.shift)
}

/// Position-free scaled dot-product attention with `n_heads` heads and an
/// output projection. Inputs are `n_q×d` queries and `n_k×d` keys/values.
pub fn multi_head_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    w: &AttentionWeights<'t>,
) -> Result<Var<'t>, NumError> {
    let d = q.shape().1;
    if w.n_heads == 0 || d % w.n_heads != 0 {
        return Err(NumError::Shape(format!(
            "model width {d} not divisible by {} heads",
            w.n_heads
        )));
    }
    if k.shape() != v.shape() || k.shape().1 != d {
        return Err(NumError::Shape(format!(
            "attention q {:?}, k {:?}, v {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let dh = d / w.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let qp = linear(q, &w.query)?;
    let kp = linear(k, &w.key)?;
    let vp = linear(v, &w.value)?;
    let mut heads = Vec::with_capacity(w.n_heads);
    for h in 0..w.n_heads {
        let qh = qp.slice_cols(h * dh, dh)?;
        let kh = kp.slice_cols(h * dh, dh)?;
        let vh = vp.slice_cols(h * dh, dh)?;
        let attn = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax_rows()?;
        heads.push(attn.matmul(vh)?);
    }
    let merged = if heads.len() == 1 {
        heads[0]
    } else {
        Var::concat_cols(&heads)?
    };
    linear(merged, &w.output)
}

/// Two-layer GELU feed-forward.
pub fn feed_forward<'t>(x: Var<'t>, w: &FeedForwardWeights<'t>) -> Result<Var<'t>, NumError> {
    linear(linear(x, &w.up)?.gelu()?, &w.down)
}
