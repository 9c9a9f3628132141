//! Tape-based reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every differentiable operation in execution order;
//! [`Tape::backward`] replays the records in reverse, accumulating gradients
//! into every node that requires them. Tensors are tiny at our scale, so
//! nodes own their value and gradient buffers directly.

use crate::error::{Error, Result};

/// Clamp applied to probabilities before logarithms in the BCE reduction.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    /// a: [R, C], bias: [C], broadcast over rows.
    AddBias(Var, Var),
    /// a: [N, C, T], bias: [C], broadcast over N and T.
    ChannelBias(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Matmul(Var, Var),
    Transpose(Var),
    Concat(Var, Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Sum(Var),
    Mean(Var),
    /// [R, C] -> [C], mean over rows.
    MeanAxis0(Var),
    /// Sum of squared differences, scalar.
    Sse(Var, Var),
    /// Masked binary cross entropy, summed over entries with mask = 1.
    /// Target and mask are constants; gradient flows through theta only.
    BceSum {
        theta: Var,
        target: Vec<f64>,
        mask: Vec<f64>,
    },
    /// input: [N, C_in, T], kernel: [C_out, C_in, K]; left zero padding,
    /// output [N, C_out, T].
    CausalConv {
        input: Var,
        kernel: Var,
        dilation: usize,
    },
    /// h: [N, C, T], adj: [N, N], w1/w2: [C, C'];
    /// out(t) = h(t) w1 + (adj^T h(t)) w2 applied per time step.
    MessagePassing {
        h: Var,
        adj: Var,
        w1: Var,
        w2: Var,
    },
    /// z: [N, h] -> [N*N, 2h]; row i*N+j is z_i || z_j.
    PairConcat(Var),
    Reshape(Var),
    /// [N, C, T] -> [N, C] at t = T-1.
    LastStep(Var),
}

struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        let grad = vec![0.0; values.len()];
        self.nodes.push(Node {
            shape,
            values,
            grad,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, needs_grad: bool) -> Result<Var> {
        if numel(&shape) != values.len() {
            return Err(Error::Config(format!(
                "leaf: shape {:?} does not match {} values",
                shape,
                values.len()
            )));
        }
        Ok(self.push(shape, values, needs_grad, Op::Leaf))
    }

    /// Constant leaf; no gradient tracked.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.push(vec![1], vec![v], false, Op::Leaf)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn values(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn grad(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].grad
    }

    fn needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::ShapeMismatch {
            op,
            lhs: self.nodes[a.0].shape.clone(),
            rhs: self.nodes[b.0].shape.clone(),
        }
    }

    // ---- elementwise and linear ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(self.shape_err("add", a, b));
        }
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, vals, ng, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(self.shape_err("sub", a, b));
        }
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, vals, ng, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(self.shape_err("mul", a, b));
        }
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, vals, ng, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(&[a]);
        self.push(shape, vals, ng, Op::Scale(a, c))
    }

    /// a: [R, C] plus bias [C] broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = match self.nodes[a.0].shape.as_slice() {
            &[r, c] => (r, c),
            _ => return Err(self.shape_err("add_bias", a, bias)),
        };
        if self.nodes[bias.0].shape != vec![c] {
            return Err(self.shape_err("add_bias", a, bias));
        }
        let mut vals = self.nodes[a.0].values.clone();
        for i in 0..r {
            for j in 0..c {
                vals[i * c + j] += self.nodes[bias.0].values[j];
            }
        }
        let ng = self.needs(&[a, bias]);
        Ok(self.push(vec![r, c], vals, ng, Op::AddBias(a, bias)))
    }

    /// a: [N, C, T] plus per-channel bias [C].
    pub fn add_channel_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, c, t) = match self.nodes[a.0].shape.as_slice() {
            &[n, c, t] => (n, c, t),
            _ => return Err(self.shape_err("add_channel_bias", a, bias)),
        };
        if self.nodes[bias.0].shape != vec![c] {
            return Err(self.shape_err("add_channel_bias", a, bias));
        }
        let mut vals = self.nodes[a.0].values.clone();
        for i in 0..n {
            for ch in 0..c {
                let b = self.nodes[bias.0].values[ch];
                let base = (i * c + ch) * t;
                for v in &mut vals[base..base + t] {
                    *v += b;
                }
            }
        }
        let ng = self.needs(&[a, bias]);
        Ok(self.push(vec![n, c, t], vals, ng, Op::ChannelBias(a, bias)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = match self.nodes[a.0].shape.as_slice() {
            &[m, k] => (m, k),
            _ => return Err(self.shape_err("matmul", a, b)),
        };
        let (k2, n) = match self.nodes[b.0].shape.as_slice() {
            &[k2, n] => (k2, n),
            _ => return Err(self.shape_err("matmul", a, b)),
        };
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut vals = vec![0.0; m * n];
        {
            let av = &self.nodes[a.0].values;
            let bv = &self.nodes[b.0].values;
            for i in 0..m {
                for kk in 0..k {
                    let x = av[i * k + kk];
                    if x == 0.0 {
                        continue;
                    }
                    let brow = &bv[kk * n..(kk + 1) * n];
                    let dst = &mut vals[i * n..(i + 1) * n];
                    for (d, &y) in dst.iter_mut().zip(brow) {
                        *d += x * y;
                    }
                }
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], vals, ng, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = match self.nodes[a.0].shape.as_slice() {
            &[r, c] => (r, c),
            _ => {
                return Err(Error::Config(format!(
                    "transpose expects a 2-d tensor, got {:?}",
                    self.nodes[a.0].shape
                )))
            }
        };
        let av = &self.nodes[a.0].values;
        let mut vals = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                vals[j * r + i] = av[i * c + j];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(vec![c, r], vals, ng, Op::Transpose(a)))
    }

    /// Concatenate two 2-d tensors along `axis` (0 = rows, 1 = cols).
    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var> {
        let (ar, ac) = match self.nodes[a.0].shape.as_slice() {
            &[r, c] => (r, c),
            _ => return Err(self.shape_err("concat", a, b)),
        };
        let (br, bc) = match self.nodes[b.0].shape.as_slice() {
            &[r, c] => (r, c),
            _ => return Err(self.shape_err("concat", a, b)),
        };
        match axis {
            0 => {
                if ac != bc {
                    return Err(self.shape_err("concat", a, b));
                }
                let mut vals = self.nodes[a.0].values.clone();
                vals.extend_from_slice(&self.nodes[b.0].values);
                let ng = self.needs(&[a, b]);
                Ok(self.push(vec![ar + br, ac], vals, ng, Op::Concat(a, b, 0)))
            }
            1 => {
                if ar != br {
                    return Err(self.shape_err("concat", a, b));
                }
                let mut vals = Vec::with_capacity(ar * (ac + bc));
                for i in 0..ar {
                    vals.extend_from_slice(&self.nodes[a.0].values[i * ac..(i + 1) * ac]);
                    vals.extend_from_slice(&self.nodes[b.0].values[i * bc..(i + 1) * bc]);
                }
                let ng = self.needs(&[a, b]);
                Ok(self.push(vec![ar, ac + bc], vals, ng, Op::Concat(a, b, 1)))
            }
            _ => Err(Error::Config(format!("concat: invalid axis {axis}"))),
        }
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0].values.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(&[a]);
        self.push(shape, vals, ng, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let vals: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs(&[a]);
        self.push(shape, vals, ng, Op::Sigmoid(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.nodes[a.0].values.iter().sum();
        let ng = self.needs(&[a]);
        self.push(vec![1], vec![s], ng, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].values.len() as f64;
        let s: f64 = self.nodes[a.0].values.iter().sum::<f64>() / n;
        let ng = self.needs(&[a]);
        self.push(vec![1], vec![s], ng, Op::Mean(a))
    }

    /// [R, C] -> [C], mean over rows.
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let (r, c) = match self.nodes[a.0].shape.as_slice() {
            &[r, c] => (r, c),
            _ => {
                return Err(Error::Config(format!(
                    "mean_axis0 expects a 2-d tensor, got {:?}",
                    self.nodes[a.0].shape
                )))
            }
        };
        let av = &self.nodes[a.0].values;
        let mut vals = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                vals[j] += av[i * c + j];
            }
        }
        for v in &mut vals {
            *v /= r as f64;
        }
        let ng = self.needs(&[a]);
        Ok(self.push(vec![c], vals, ng, Op::MeanAxis0(a)))
    }

    /// Sum of squared differences, reduced to a scalar.
    pub fn squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(self.shape_err("squared_error", a, b));
        }
        let s: f64 = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![1], vec![s], ng, Op::Sse(a, b)))
    }

    /// Masked binary cross entropy summed over entries with mask = 1.
    /// Probabilities are clamped to [BCE_EPS, 1 - BCE_EPS] before logs.
    pub fn bce_sum(&mut self, theta: Var, target: &[f64], mask: &[f64]) -> Result<Var> {
        let n = self.nodes[theta.0].values.len();
        if target.len() != n || mask.len() != n {
            return Err(Error::ShapeMismatch {
                op: "bce_sum",
                lhs: self.nodes[theta.0].shape.clone(),
                rhs: vec![target.len()],
            });
        }
        let mut s = 0.0;
        for ((&p, &t), &m) in self.nodes[theta.0]
            .values
            .iter()
            .zip(target)
            .zip(mask)
        {
            if m == 0.0 {
                continue;
            }
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            s += m * (-t * p.ln() - (1.0 - t) * (1.0 - p).ln());
        }
        let ng = self.needs(&[theta]);
        Ok(self.push(
            vec![1],
            vec![s],
            ng,
            Op::BceSum {
                theta,
                target: target.to_vec(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// Dilated causal convolution with left zero padding; output length
    /// equals input length. input: [N, C_in, T], kernel: [C_out, C_in, K].
    pub fn causal_conv(&mut self, input: Var, kernel: Var, dilation: usize) -> Result<Var> {
        if dilation == 0 {
            return Err(Error::Config("causal_conv: dilation must be >= 1".into()));
        }
        let (n, c_in, t) = match self.nodes[input.0].shape.as_slice() {
            &[n, c, t] => (n, c, t),
            _ => return Err(self.shape_err("causal_conv", input, kernel)),
        };
        let (c_out, kc, k) = match self.nodes[kernel.0].shape.as_slice() {
            &[o, c, k] => (o, c, k),
            _ => return Err(self.shape_err("causal_conv", input, kernel)),
        };
        if kc != c_in {
            return Err(self.shape_err("causal_conv", input, kernel));
        }
        if k == 0 {
            return Err(Error::Config("causal_conv: empty kernel".into()));
        }
        let iv = &self.nodes[input.0].values;
        let kv = &self.nodes[kernel.0].values;
        let mut vals = vec![0.0; n * c_out * t];
        for b in 0..n {
            for o in 0..c_out {
                let dst = &mut vals[(b * c_out + o) * t..(b * c_out + o + 1) * t];
                for c in 0..c_in {
                    let src = &iv[(b * c_in + c) * t..(b * c_in + c + 1) * t];
                    let kr = &kv[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    for (kk, &w) in kr.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let off = dilation * kk;
                        for tt in off..t {
                            dst[tt] += w * src[tt - off];
                        }
                    }
                }
            }
        }
        let ng = self.needs(&[input, kernel]);
        Ok(self.push(
            vec![n, c_out, t],
            vals,
            ng,
            Op::CausalConv {
                input,
                kernel,
                dilation,
            },
        ))
    }

    /// Dense message passing per time step:
    /// out(t) = h(t) w1 + (adj^T h(t)) w2, with h: [N, C, T].
    pub fn message_passing(&mut self, h: Var, adj: Var, w1: Var, w2: Var) -> Result<Var> {
        let (n, c, t) = match self.nodes[h.0].shape.as_slice() {
            &[n, c, t] => (n, c, t),
            _ => return Err(self.shape_err("message_passing", h, adj)),
        };
        match self.nodes[adj.0].shape.as_slice() {
            &[a, b] if a == n && b == n => {}
            _ => return Err(self.shape_err("message_passing", h, adj)),
        }
        let (cw, c_out) = match self.nodes[w1.0].shape.as_slice() {
            &[cw, co] => (cw, co),
            _ => return Err(self.shape_err("message_passing", h, w1)),
        };
        if cw != c || self.nodes[w2.0].shape != vec![c, c_out] {
            return Err(self.shape_err("message_passing", w1, w2));
        }
        let hv = &self.nodes[h.0].values;
        let av = &self.nodes[adj.0].values;
        let w1v = &self.nodes[w1.0].values;
        let w2v = &self.nodes[w2.0].values;
        let mut vals = vec![0.0; n * c_out * t];
        // agg[i][ch] = sum_j adj[j][i] h[j][ch], recomputed per time step
        let mut agg = vec![0.0; n * c];
        for tt in 0..t {
            for x in agg.iter_mut() {
                *x = 0.0;
            }
            for j in 0..n {
                for i in 0..n {
                    let e = av[j * n + i];
                    if e == 0.0 {
                        continue;
                    }
                    for ch in 0..c {
                        agg[i * c + ch] += e * hv[(j * c + ch) * t + tt];
                    }
                }
            }
            for i in 0..n {
                for ch in 0..c {
                    let hx = hv[(i * c + ch) * t + tt];
                    let gx = agg[i * c + ch];
                    if hx == 0.0 && gx == 0.0 {
                        continue;
                    }
                    let w1row = &w1v[ch * c_out..(ch + 1) * c_out];
                    let w2row = &w2v[ch * c_out..(ch + 1) * c_out];
                    for co in 0..c_out {
                        vals[(i * c_out + co) * t + tt] += hx * w1row[co] + gx * w2row[co];
                    }
                }
            }
        }
        let ng = self.needs(&[h, adj, w1, w2]);
        Ok(self.push(
            vec![n, c_out, t],
            vals,
            ng,
            Op::MessagePassing { h, adj, w1, w2 },
        ))
    }

    /// z: [N, h] -> [N*N, 2h]; row i*N+j = z_i || z_j.
    pub fn pair_concat(&mut self, z: Var) -> Result<Var> {
        let (n, h) = match self.nodes[z.0].shape.as_slice() {
            &[n, h] => (n, h),
            _ => {
                return Err(Error::Config(format!(
                    "pair_concat expects a 2-d tensor, got {:?}",
                    self.nodes[z.0].shape
                )))
            }
        };
        let zv = &self.nodes[z.0].values;
        let mut vals = Vec::with_capacity(n * n * 2 * h);
        for i in 0..n {
            for j in 0..n {
                vals.extend_from_slice(&zv[i * h..(i + 1) * h]);
                vals.extend_from_slice(&zv[j * h..(j + 1) * h]);
            }
        }
        let ng = self.needs(&[z]);
        Ok(self.push(vec![n * n, 2 * h], vals, ng, Op::PairConcat(z)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.nodes[a.0].values.len() {
            return Err(Error::Config(format!(
                "reshape: {:?} incompatible with {:?}",
                self.nodes[a.0].shape, shape
            )));
        }
        let vals = self.nodes[a.0].values.clone();
        let ng = self.needs(&[a]);
        Ok(self.push(shape, vals, ng, Op::Reshape(a)))
    }

    /// [N, C, T] -> [N, C], features at the final time step.
    pub fn last_step(&mut self, a: Var) -> Result<Var> {
        let (n, c, t) = match self.nodes[a.0].shape.as_slice() {
            &[n, c, t] => (n, c, t),
            _ => {
                return Err(Error::Config(format!(
                    "last_step expects a 3-d tensor, got {:?}",
                    self.nodes[a.0].shape
                )))
            }
        };
        let av = &self.nodes[a.0].values;
        let mut vals = vec![0.0; n * c];
        for i in 0..n {
            for ch in 0..c {
                vals[i * c + ch] = av[(i * c + ch) * t + t - 1];
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(vec![n, c], vals, ng, Op::LastStep(a)))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar loss. Gradients accumulate additively;
    /// a fresh tape starts from zero.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if numel(&self.nodes[loss.0].shape) != 1 {
            return Err(Error::NonScalarLoss(self.nodes[loss.0].shape.clone()));
        }
        self.nodes[loss.0].grad[0] += 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let contribs = self.backward_node(i);
            for (v, c) in contribs {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                for (g, d) in self.nodes[v.0].grad.iter_mut().zip(c) {
                    *g += d;
                }
            }
        }
        Ok(())
    }

    /// Gradient contributions of node `i` to its inputs.
    fn backward_node(&self, i: usize) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let g = &node.grad;
        let val = |v: Var| -> &[f64] { &self.nodes[v.0].values };
        let shp = |v: Var| -> &[usize] { &self.nodes[v.0].shape };
        match node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                vec![(a, g.clone()), (b, neg)]
            }
            Op::Mul(a, b) => {
                let da: Vec<f64> = g.iter().zip(val(b)).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(val(a)).map(|(x, y)| x * y).collect();
                vec![(a, da), (b, db)]
            }
            Op::Scale(a, c) => vec![(a, g.iter().map(|x| x * c).collect())],
            Op::AddBias(a, bias) => {
                let c = shp(bias)[0];
                let r = shp(a)[0];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        db[j] += g[i * c + j];
                    }
                }
                vec![(a, g.clone()), (bias, db)]
            }
            Op::ChannelBias(a, bias) => {
                let (n, c, t) = (shp(a)[0], shp(a)[1], shp(a)[2]);
                let mut db = vec![0.0; c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * t;
                        db[ch] += g[base..base + t].iter().sum::<f64>();
                    }
                }
                vec![(a, g.clone()), (bias, db)]
            }
            Op::Matmul(a, b) => {
                let (m, k) = (shp(a)[0], shp(a)[1]);
                let n = shp(b)[1];
                let av = val(a);
                let bv = val(b);
                // da = g b^T
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for kk in 0..k {
                        let brow = &bv[kk * n..(kk + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        da[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                // db = a^T g
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for kk in 0..k {
                        let x = av[i * k + kk];
                        if x == 0.0 {
                            continue;
                        }
                        let dst = &mut db[kk * n..(kk + 1) * n];
                        for (d, &gy) in dst.iter_mut().zip(grow) {
                            *d += x * gy;
                        }
                    }
                }
                vec![(a, da), (b, db)]
            }
            Op::Transpose(a) => {
                let (r, c) = (shp(a)[0], shp(a)[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j * r + i];
                    }
                }
                vec![(a, da)]
            }
            Op::Concat(a, b, axis) => {
                let (ar, ac) = (shp(a)[0], shp(a)[1]);
                let (br, bc) = (shp(b)[0], shp(b)[1]);
                match axis {
                    0 => {
                        let da = g[..ar * ac].to_vec();
                        let db = g[ar * ac..].to_vec();
                        vec![(a, da), (b, db)]
                    }
                    _ => {
                        let mut da = vec![0.0; ar * ac];
                        let mut db = vec![0.0; br * bc];
                        let w = ac + bc;
                        for i in 0..ar {
                            da[i * ac..(i + 1) * ac].copy_from_slice(&g[i * w..i * w + ac]);
                            db[i * bc..(i + 1) * bc].copy_from_slice(&g[i * w + ac..(i + 1) * w]);
                        }
                        vec![(a, da), (b, db)]
                    }
                }
            }
            Op::Relu(a) => {
                let da: Vec<f64> = val(a)
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| if x > 0.0 { gy } else { 0.0 })
                    .collect();
                vec![(a, da)]
            }
            Op::Sigmoid(a) => {
                let da: Vec<f64> = node
                    .values
                    .iter()
                    .zip(g)
                    .map(|(&s, &gy)| gy * s * (1.0 - s))
                    .collect();
                vec![(a, da)]
            }
            Op::Sum(a) => {
                let da = vec![g[0]; val(a).len()];
                vec![(a, da)]
            }
            Op::Mean(a) => {
                let n = val(a).len() as f64;
                let da = vec![g[0] / n; val(a).len()];
                vec![(a, da)]
            }
            Op::MeanAxis0(a) => {
                let (r, c) = (shp(a)[0], shp(a)[1]);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j] / r as f64;
                    }
                }
                vec![(a, da)]
            }
            Op::Sse(a, b) => {
                let da: Vec<f64> = val(a)
                    .iter()
                    .zip(val(b))
                    .map(|(x, y)| 2.0 * (x - y) * g[0])
                    .collect();
                let db: Vec<f64> = da.iter().map(|x| -x).collect();
                vec![(a, da), (b, db)]
            }
            Op::BceSum {
                theta,
                ref target,
                ref mask,
            } => {
                let da: Vec<f64> = val(theta)
                    .iter()
                    .zip(target)
                    .zip(mask)
                    .map(|((&p, &t), &m)| {
                        if m == 0.0 {
                            return 0.0;
                        }
                        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                        m * g[0] * (-t / pc + (1.0 - t) / (1.0 - pc))
                    })
                    .collect();
                vec![(theta, da)]
            }
            Op::CausalConv {
                input,
                kernel,
                dilation,
            } => {
                let (n, c_in, t) = (shp(input)[0], shp(input)[1], shp(input)[2]);
                let (c_out, _, k) = (shp(kernel)[0], shp(kernel)[1], shp(kernel)[2]);
                let iv = val(input);
                let kv = val(kernel);
                let mut din = vec![0.0; n * c_in * t];
                let mut dker = vec![0.0; c_out * c_in * k];
                for b in 0..n {
                    for o in 0..c_out {
                        let grow = &g[(b * c_out + o) * t..(b * c_out + o + 1) * t];
                        for c in 0..c_in {
                            let src = &iv[(b * c_in + c) * t..(b * c_in + c + 1) * t];
                            let dst = &mut din[(b * c_in + c) * t..(b * c_in + c + 1) * t];
                            for kk in 0..k {
                                let off = dilation * kk;
                                let w = kv[(o * c_in + c) * k + kk];
                                let mut acc = 0.0;
                                for tt in off..t {
                                    let gy = grow[tt];
                                    dst[tt - off] += w * gy;
                                    acc += src[tt - off] * gy;
                                }
                                dker[(o * c_in + c) * k + kk] += acc;
                            }
                        }
                    }
                }
                vec![(input, din), (kernel, dker)]
            }
            Op::MessagePassing { h, adj, w1, w2 } => {
                let (n, c, t) = (shp(h)[0], shp(h)[1], shp(h)[2]);
                let c_out = shp(w1)[1];
                let hv = val(h);
                let av = val(adj);
                let w1v = val(w1);
                let w2v = val(w2);
                let mut dh = vec![0.0; n * c * t];
                let mut dadj = vec![0.0; n * n];
                let mut dw1 = vec![0.0; c * c_out];
                let mut dw2 = vec![0.0; c * c_out];
                let mut agg = vec![0.0; n * c];
                let mut dagg = vec![0.0; n * c];
                for tt in 0..t {
                    for x in agg.iter_mut() {
                        *x = 0.0;
                    }
                    for x in dagg.iter_mut() {
                        *x = 0.0;
                    }
                    for j in 0..n {
                        for i in 0..n {
                            let e = av[j * n + i];
                            if e == 0.0 {
                                continue;
                            }
                            for ch in 0..c {
                                agg[i * c + ch] += e * hv[(j * c + ch) * t + tt];
                            }
                        }
                    }
                    for i in 0..n {
                        for ch in 0..c {
                            let hx = hv[(i * c + ch) * t + tt];
                            let gx = agg[i * c + ch];
                            let w1row = &w1v[ch * c_out..(ch + 1) * c_out];
                            let w2row = &w2v[ch * c_out..(ch + 1) * c_out];
                            let mut acc_h = 0.0;
                            let mut acc_a = 0.0;
                            for co in 0..c_out {
                                let gy = g[(i * c_out + co) * t + tt];
                                if gy == 0.0 {
                                    continue;
                                }
                                dw1[ch * c_out + co] += hx * gy;
                                dw2[ch * c_out + co] += gx * gy;
                                acc_h += w1row[co] * gy;
                                acc_a += w2row[co] * gy;
                            }
                            dh[(i * c + ch) * t + tt] += acc_h;
                            dagg[i * c + ch] = acc_a;
                        }
                    }
                    // agg = adj^T h(t): dh += adj dagg, dadj[j][i] += h_j . dagg_i
                    for j in 0..n {
                        for i in 0..n {
                            let e = av[j * n + i];
                            let mut dot = 0.0;
                            for ch in 0..c {
                                let d = dagg[i * c + ch];
                                if e != 0.0 {
                                    dh[(j * c + ch) * t + tt] += e * d;
                                }
                                dot += hv[(j * c + ch) * t + tt] * d;
                            }
                            dadj[j * n + i] += dot;
                        }
                    }
                }
                vec![(h, dh), (adj, dadj), (w1, dw1), (w2, dw2)]
            }
            Op::PairConcat(z) => {
                let (n, h) = (shp(z)[0], shp(z)[1]);
                let mut dz = vec![0.0; n * h];
                for i in 0..n {
                    for j in 0..n {
                        let base = (i * n + j) * 2 * h;
                        for x in 0..h {
                            dz[i * h + x] += g[base + x];
                            dz[j * h + x] += g[base + h + x];
                        }
                    }
                }
                vec![(z, dz)]
            }
            Op::Reshape(a) => vec![(a, g.clone())],
            Op::LastStep(a) => {
                let (n, c, t) = (shp(a)[0], shp(a)[1], shp(a)[2]);
                let mut da = vec![0.0; n * c * t];
                for i in 0..n {
                    for ch in 0..c {
                        da[(i * c + ch) * t + t - 1] = g[i * c + ch];
                    }
                }
                vec![(a, da)]
            }
        }
    }
}

/// Dilated causal convolution of a 1-d sequence with a 1-d kernel,
/// `r_t = sum_k f(k) h_{t - d k}` with zero reads left of the origin.
pub fn dilated_causal_conv1d(
    tape: &mut Tape,
    h: Var,
    kernel: Var,
    dilation: usize,
) -> Result<Var> {
    let t = tape.values(h).len();
    let k = tape.values(kernel).len();
    let h3 = tape.reshape(h, vec![1, 1, t])?;
    let k3 = tape.reshape(kernel, vec![1, 1, k])?;
    let out = tape.causal_conv(h3, k3, dilation)?;
    tape.reshape(out, vec![t])
}
