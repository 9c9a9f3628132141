//! Graph-based multi-horizon forecaster: stacked TGConv blocks (dilated
//! causal convolution + dense message passing + residual) and a shared
//! per-variable linear regressor.

use crate::error::Result;
use crate::graph::ConvIds;
use crate::linalg::Mat;
use crate::tensor::{Tape, Var};

/// Parameter indices for one TGConv block. `res_w` is the 1x1 residual
/// projection, present only when input and output channel counts differ.
#[derive(Clone, Debug)]
pub struct BlockIds {
    pub conv: ConvIds,
    pub mp_w1: usize,
    pub mp_w2: usize,
    pub res_w: Option<usize>,
}

/// Parameter indices for the output regressor.
#[derive(Clone, Debug)]
pub struct RegressorIds {
    pub w: usize,
    pub b: usize,
}

/// One TGConv block: causal conv along time, message passing across
/// variables at every time step, residual add.
pub fn tgconv_block(
    tape: &mut Tape,
    vars: &[Var],
    blk: &BlockIds,
    h: Var,
    adj: Var,
) -> Result<Var> {
    let u = tape.causal_conv(h, vars[blk.conv.w], blk.conv.dilation)?;
    let u = tape.add_channel_bias(u, vars[blk.conv.b])?;
    let u = tape.relu(u);
    let v = tape.message_passing(u, adj, vars[blk.mp_w1], vars[blk.mp_w2])?;
    let res = match blk.res_w {
        Some(w) => tape.causal_conv(h, vars[w], 1)?,
        None => h,
    };
    tape.add(v, res)
}

/// Full forecast path: x [N, 1, tau] through the blocks, then the shared
/// regressor maps each variable's flattened block output to tau' steps.
pub fn forecast(
    tape: &mut Tape,
    vars: &[Var],
    blocks: &[BlockIds],
    reg: &RegressorIds,
    x: Var,
    adj: Var,
) -> Result<Var> {
    let mut h = x;
    for blk in blocks {
        h = tgconv_block(tape, vars, blk, h, adj)?;
    }
    let shape = tape.shape(h).to_vec();
    let (n, c, t) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(h, vec![n, c * t])?;
    let out = tape.matmul(flat, vars[reg.w])?;
    tape.add_bias(out, vars[reg.b])
}

/// L_F for one window: sum of squared residuals over variables, averaged
/// over the horizon steps.
pub fn forecasting_loss(tape: &mut Tape, yhat: Var, target: &Mat) -> Result<Var> {
    let y = tape.constant(vec![target.rows, target.cols], target.data.clone())?;
    let sse = tape.squared_error(yhat, y)?;
    Ok(tape.scale(sse, 1.0 / target.cols as f64))
}
