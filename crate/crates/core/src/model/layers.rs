//! Building blocks of the forward pass, expressed on a [`Graph`].

use rand::Rng;

use super::config::ViTConfig;
use crate::autodiff::{BatchNormState, Graph, Mode, Var};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Parameters of one encoder block, as tensor indices or graph variables.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub wq: Vec<T>,
    pub wk: Vec<T>,
    pub wv: Vec<T>,
    pub w_out: T,
    pub b_out: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
    pub fc1_w: T,
    pub fc1_b: T,
    pub fc2_w: T,
    pub fc2_b: T,
}

impl<T: Copy> BlockParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> BlockParams<U> {
        BlockParams {
            ln1_gamma: f(self.ln1_gamma),
            ln1_beta: f(self.ln1_beta),
            wq: self.wq.iter().map(|&t| f(t)).collect(),
            wk: self.wk.iter().map(|&t| f(t)).collect(),
            wv: self.wv.iter().map(|&t| f(t)).collect(),
            w_out: f(self.w_out),
            b_out: f(self.b_out),
            ln2_gamma: f(self.ln2_gamma),
            ln2_beta: f(self.ln2_beta),
            fc1_w: f(self.fc1_w),
            fc1_b: f(self.fc1_b),
            fc2_w: f(self.fc2_w),
            fc2_b: f(self.fc2_b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadParams<T> {
    pub fc1_w: T,
    pub fc1_b: T,
    pub bn_gamma: T,
    pub bn_beta: T,
    pub fc2_w: T,
    pub fc2_b: T,
}

impl<T: Copy> HeadParams<T> {
    pub fn map<U>(&self, f: impl Fn(T) -> U) -> HeadParams<U> {
        HeadParams {
            fc1_w: f(self.fc1_w),
            fc1_b: f(self.fc1_b),
            bn_gamma: f(self.bn_gamma),
            bn_beta: f(self.bn_beta),
            fc2_w: f(self.fc2_w),
            fc2_b: f(self.fc2_b),
        }
    }
}

/// Splits a channel-major `F × L_V` matrix into `L` flattened tiles of
/// `F_patch × S_patch`, zero-padding the channel axis to `F_pad`. Tile
/// `(s, f)` lands on row `s·(F_pad/F_patch) + f`.
pub fn patchify(x: &[f64], cfg: &ViTConfig) -> Result<Tensor> {
    if x.len() != cfg.f * cfg.l_v {
        return dim_err(format!(
            "input of {} values is not {}x{}",
            x.len(),
            cfg.f,
            cfg.l_v
        ));
    }
    if cfg.l_v % cfg.s_patch != 0 {
        return dim_err(format!("L_V = {} not divisible by S_patch = {}", cfg.l_v, cfg.s_patch));
    }
    let groups = cfg.f_pad() / cfg.f_patch;
    let mut data = Vec::with_capacity(cfg.tokens() * cfg.patch_len());
    for s in 0..cfg.l_v / cfg.s_patch {
        for fg in 0..groups {
            for ch in fg * cfg.f_patch..(fg + 1) * cfg.f_patch {
                let t0 = s * cfg.s_patch;
                if ch < cfg.f {
                    data.extend_from_slice(&x[ch * cfg.l_v + t0..ch * cfg.l_v + t0 + cfg.s_patch]);
                } else {
                    data.extend(std::iter::repeat_n(0.0, cfg.s_patch));
                }
            }
        }
    }
    Tensor::matrix(cfg.tokens(), cfg.patch_len(), data)
}

/// Patch embedding plus position embedding, then dropout. `patches` holds
/// `B·L` rows; `pos` is `L × d_embed` and is added to each sample's rows.
#[allow(clippy::too_many_arguments)]
pub fn embed<R: Rng + ?Sized>(
    g: &mut Graph,
    patches: Var,
    w: Var,
    b: Var,
    pos: Var,
    rate: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<Var> {
    let e = g.matmul(patches, w)?;
    let e = g.add_row_vec(e, b)?;
    let e = g.add_tiled(e, pos)?;
    g.dropout(e, rate, rng, mode)
}

/// `softmax(QKᵀ/√d)·V` with `d` the width of `q`; dropout on the weights.
pub fn attention<R: Rng + ?Sized>(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    rate: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<Var> {
    let d = g.value(q).cols();
    let s = g.matmul_nt(q, k)?;
    let s = g.scale(s, 1.0 / (d as f64).sqrt())?;
    let w = g.softmax_rows(s)?;
    let w = g.dropout(w, rate, rng, mode)?;
    g.matmul(w, v)
}

/// Multi-head self-attention over `x` (`B·L × d_embed`, `tokens` rows per
/// sample). Attention never mixes rows of different samples.
#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    wq: &[Var],
    wk: &[Var],
    wv: &[Var],
    w_out: Var,
    b_out: Var,
    tokens: usize,
    rate: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<Var> {
    let rows = g.value(x).rows();
    if wq.is_empty() || wq.len() != wk.len() || wq.len() != wv.len() {
        return dim_err("projection counts differ between Q, K and V");
    }
    if tokens == 0 || rows % tokens != 0 {
        return dim_err(format!("{rows} rows are not whole sequences of {tokens}"));
    }
    let batch = rows / tokens;
    let mut projected = Vec::with_capacity(wq.len());
    for h in 0..wq.len() {
        let q = g.matmul(x, wq[h])?;
        let k = g.matmul(x, wk[h])?;
        let v = g.matmul(x, wv[h])?;
        projected.push((q, k, v));
    }
    let mut per_sample = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut heads = Vec::with_capacity(projected.len());
        for &(q, k, v) in &projected {
            let dh = g.value(q).cols();
            let qb = g.slice_block(q, b * tokens, tokens, 0, dh)?;
            let kb = g.slice_block(k, b * tokens, tokens, 0, dh)?;
            let vb = g.slice_block(v, b * tokens, tokens, 0, dh)?;
            heads.push(attention(g, qb, kb, vb, rate, rng, mode)?);
        }
        per_sample.push(if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? });
    }
    let cat = if per_sample.len() == 1 {
        per_sample[0]
    } else {
        g.concat_rows(&per_sample)?
    };
    let out = g.matmul(cat, w_out)?;
    g.add_row_vec(out, b_out)
}

/// Pre-norm encoder block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
pub fn encoder_block<R: Rng + ?Sized>(
    g: &mut Graph,
    x: Var,
    p: &BlockParams<Var>,
    tokens: usize,
    rate: f64,
    rng: &mut R,
    mode: Mode,
) -> Result<Var> {
    let n = g.layer_norm(x, p.ln1_gamma, p.ln1_beta, LN_EPS)?;
    let a = multi_head_attention(g, n, &p.wq, &p.wk, &p.wv, p.w_out, p.b_out, tokens, rate, rng, mode)?;
    let x = g.add(x, a)?;
    let n = g.layer_norm(x, p.ln2_gamma, p.ln2_beta, LN_EPS)?;
    let h = g.matmul(n, p.fc1_w)?;
    let h = g.add_row_vec(h, p.fc1_b)?;
    let h = g.gelu(h)?;
    let h = g.dropout(h, rate, rng, mode)?;
    let h = g.matmul(h, p.fc2_w)?;
    let h = g.add_row_vec(h, p.fc2_b)?;
    let h = g.dropout(h, rate, rng, mode)?;
    g.add(x, h)
}

/// FC → BN → ReLU → FC on pooled features; one output column.
pub fn regression_head(
    g: &mut Graph,
    pooled: Var,
    p: &HeadParams<Var>,
    bn: &mut BatchNormState,
    mode: Mode,
) -> Result<Var> {
    let h = g.matmul(pooled, p.fc1_w)?;
    let h = g.add_row_vec(h, p.fc1_b)?;
    let h = g.batch_norm(h, p.bn_gamma, p.bn_beta, bn, mode)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, p.fc2_w)?;
    g.add_row_vec(o, p.fc2_b)
}
