//! Window-level dynamic graph inference: per-variable temporal encoder,
//! pairwise edge generator, and edge-kind activation.

use crate::consistency::EdgeKind;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor::{Tape, Var};

/// Parameter indices for one causal convolution layer.
#[derive(Clone, Debug)]
pub struct ConvIds {
    pub w: usize,
    pub b: usize,
    pub dilation: usize,
}

/// Parameter indices for the temporal encoder.
#[derive(Clone, Debug)]
pub struct EncoderIds {
    pub convs: Vec<ConvIds>,
    pub proj_w: usize,
    pub proj_b: usize,
}

/// Parameter indices for the two-layer edge MLP.
#[derive(Clone, Debug)]
pub struct PsiIds {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Encode each variable's window row independently into an embedding.
/// x: [N, 1, tau] -> z: [N, h]. No cross-variable mixing happens here.
pub fn encode_nodes(tape: &mut Tape, vars: &[Var], enc: &EncoderIds, x: Var) -> Result<Var> {
    let mut h = x;
    for conv in &enc.convs {
        h = tape.causal_conv(h, vars[conv.w], conv.dilation)?;
        h = tape.add_channel_bias(h, vars[conv.b])?;
        h = tape.relu(h);
    }
    let last = tape.last_step(h)?;
    let proj = tape.matmul(last, vars[enc.proj_w])?;
    tape.add_bias(proj, vars[enc.proj_b])
}

/// Generate the dense directed graph from node embeddings: every ordered
/// pair (i, j), diagonal included, gets a logit from the edge MLP; the
/// activation follows the edge kind.
pub fn infer_graph(
    tape: &mut Tape,
    vars: &[Var],
    psi: &PsiIds,
    edge_kind: EdgeKind,
    z: Var,
) -> Result<Var> {
    let n = tape.shape(z)[0];
    let pairs = tape.pair_concat(z)?;
    let h1 = tape.matmul(pairs, vars[psi.w1])?;
    let h1 = tape.add_bias(h1, vars[psi.b1])?;
    let h1 = tape.relu(h1);
    let logits = tape.matmul(h1, vars[psi.w2])?;
    let logits = tape.add_bias(logits, vars[psi.b2])?;
    let logits = tape.reshape(logits, vec![n, n])?;
    Ok(match edge_kind {
        EdgeKind::Binary => tape.sigmoid(logits),
        EdgeKind::Continuous => tape.relu(logits),
    })
}

/// Threshold a probability matrix into 0/1 edges; strict comparison, so
/// theta == threshold maps to 0.
pub fn binarize(theta: &Mat, threshold: f64) -> Result<Mat> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "binarize threshold must lie in (0,1), got {threshold}"
        )));
    }
    let data = theta
        .data
        .iter()
        .map(|&p| if p > threshold { 1.0 } else { 0.0 })
        .collect();
    Mat::from_vec(theta.rows, theta.cols, data)
}
