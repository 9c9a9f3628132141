//! Model assembly: parameter initialization, per-window forward pass, and
//! window representations for the replay selector.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::consistency::EdgeKind;
use crate::data::MtsWindow;
use crate::error::{Error, Result};
use crate::forecaster::{self, BlockIds, RegressorIds};
use crate::graph::{self, ConvIds, EncoderIds, PsiIds};
use crate::linalg::Mat;
use crate::params::ParamStore;
use crate::tensor::{Tape, Var};

/// Encoder convolution stack: (channels out, kernel, dilation) per layer.
const ENCODER_LAYERS: [(usize, usize, usize); 3] = [(8, 2, 2), (16, 3, 2), (32, 3, 2)];

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub n_vars: usize,
    pub tau: usize,
    pub horizon: usize,
    pub embedding_width: usize,
    pub psi_hidden: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub edge_kind: EdgeKind,
}

impl ModelConfig {
    fn encoder_receptive_field() -> usize {
        1 + ENCODER_LAYERS
            .iter()
            .map(|&(_, k, d)| (k - 1) * d)
            .sum::<usize>()
    }

    fn forecaster_receptive_field(&self) -> usize {
        1 + self
            .dilations
            .iter()
            .map(|&d| (self.kernel_size - 1) * d)
            .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vars == 0 || self.tau == 0 || self.horizon == 0 {
            return Err(Error::Config("n_vars, tau and horizon must be >= 1".into()));
        }
        if self.embedding_width == 0 || self.psi_hidden == 0 || self.channels == 0 {
            return Err(Error::Config("model widths must be >= 1".into()));
        }
        if self.kernel_size == 0 {
            return Err(Error::Config("kernel size must be >= 1".into()));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::Config(
                "dilation schedule must be non-empty with entries >= 1".into(),
            ));
        }
        let enc_rf = Self::encoder_receptive_field();
        if self.tau < enc_rf {
            return Err(Error::Config(format!(
                "input window tau={} is below the encoder receptive field {}",
                self.tau, enc_rf
            )));
        }
        let f_rf = self.forecaster_receptive_field();
        if self.tau < f_rf {
            return Err(Error::Config(format!(
                "input window tau={} is below the forecaster receptive field {}",
                self.tau, f_rf
            )));
        }
        Ok(())
    }
}

struct NetIds {
    enc: EncoderIds,
    psi: PsiIds,
    blocks: Vec<BlockIds>,
    reg: RegressorIds,
}

pub struct ForwardOut {
    pub z: Var,
    pub adj: Var,
    pub yhat: Var,
}

pub struct SkiclModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    ids: NetIds,
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

impl SkiclModel {
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();

        // encoder
        let mut convs = Vec::new();
        let mut c_in = 1usize;
        for (li, &(c_out, k, d)) in ENCODER_LAYERS.iter().enumerate() {
            let w = params.add(
                &format!("enc.conv{li}.w"),
                vec![c_out, c_in, k],
                uniform_init(&mut rng, c_out * c_in * k, c_in * k),
            )?;
            let b = params.add(&format!("enc.conv{li}.b"), vec![c_out], vec![0.0; c_out])?;
            convs.push(ConvIds { w, b, dilation: d });
            c_in = c_out;
        }
        let h = cfg.embedding_width;
        let proj_w = params.add(
            "enc.proj.w",
            vec![c_in, h],
            uniform_init(&mut rng, c_in * h, c_in),
        )?;
        let proj_b = params.add("enc.proj.b", vec![h], vec![0.0; h])?;
        let enc = EncoderIds {
            convs,
            proj_w,
            proj_b,
        };

        // edge MLP; the output bias starts negative so an untrained model
        // proposes few edges
        let ph = cfg.psi_hidden;
        let w1 = params.add(
            "psi.w1",
            vec![2 * h, ph],
            uniform_init(&mut rng, 2 * h * ph, 2 * h),
        )?;
        let b1 = params.add("psi.b1", vec![ph], vec![0.0; ph])?;
        let w2 = params.add("psi.w2", vec![ph, 1], uniform_init(&mut rng, ph, ph))?;
        let b2 = params.add("psi.b2", vec![1], vec![-1.0])?;
        let psi = PsiIds { w1, b1, w2, b2 };

        // TGConv blocks
        let mut blocks = Vec::new();
        let c = cfg.channels;
        let k = cfg.kernel_size;
        let mut block_in = 1usize;
        for (bi, &d) in cfg.dilations.iter().enumerate() {
            let w = params.add(
                &format!("block{bi}.conv.w"),
                vec![c, block_in, k],
                uniform_init(&mut rng, c * block_in * k, block_in * k),
            )?;
            let b = params.add(&format!("block{bi}.conv.b"), vec![c], vec![0.0; c])?;
            let mp_w1 = params.add(
                &format!("block{bi}.mp.w1"),
                vec![c, c],
                uniform_init(&mut rng, c * c, c),
            )?;
            let mp_w2 = params.add(
                &format!("block{bi}.mp.w2"),
                vec![c, c],
                uniform_init(&mut rng, c * c, c),
            )?;
            let res_w = if block_in != c {
                Some(params.add(
                    &format!("block{bi}.res.w"),
                    vec![c, block_in, 1],
                    uniform_init(&mut rng, c * block_in, block_in),
                )?)
            } else {
                None
            };
            blocks.push(BlockIds {
                conv: ConvIds { w, b, dilation: d },
                mp_w1,
                mp_w2,
                res_w,
            });
            block_in = c;
        }

        let flat = c * cfg.tau;
        let reg_w = params.add(
            "reg.w",
            vec![flat, cfg.horizon],
            uniform_init(&mut rng, flat * cfg.horizon, flat),
        )?;
        let reg_b = params.add("reg.b", vec![cfg.horizon], vec![0.0; cfg.horizon])?;
        let reg = RegressorIds { w: reg_w, b: reg_b };

        Ok(SkiclModel {
            cfg,
            params,
            ids: NetIds {
                enc,
                psi,
                blocks,
                reg,
            },
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.num_values()
    }

    /// Full forward pass for one window given registered parameter vars.
    pub fn forward_window(&self, tape: &mut Tape, vars: &[Var], x: &Mat) -> Result<ForwardOut> {
        if x.rows != self.cfg.n_vars || x.cols != self.cfg.tau {
            return Err(Error::Config(format!(
                "window shape {}x{} does not match model N={} tau={}",
                x.rows, x.cols, self.cfg.n_vars, self.cfg.tau
            )));
        }
        let x3 = tape.constant(vec![x.rows, 1, x.cols], x.data.clone())?;
        let z = graph::encode_nodes(tape, vars, &self.ids.enc, x3)?;
        let adj = graph::infer_graph(tape, vars, &self.ids.psi, self.cfg.edge_kind, z)?;
        let yhat = forecaster::forecast(tape, vars, &self.ids.blocks, &self.ids.reg, x3, adj)?;
        Ok(ForwardOut { z, adj, yhat })
    }

    /// Inferred graph and forecast as plain matrices (no gradients).
    pub fn predict(&self, x: &Mat) -> Result<(Mat, Mat)> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape, false);
        let out = self.forward_window(&mut tape, &vars, x)?;
        let n = self.cfg.n_vars;
        let adj = Mat::from_vec(n, n, tape.values(out.adj).to_vec())?;
        let yhat = Mat::from_vec(n, self.cfg.horizon, tape.values(out.yhat).to_vec())?;
        Ok((adj, yhat))
    }

    /// Per-window replay representation: mean over variables of the node
    /// embeddings. One row per window, in the given order.
    pub fn representations(&self, windows: &[MtsWindow]) -> Result<Mat> {
        let h = self.cfg.embedding_width;
        let mut out = Mat::zeros(windows.len(), h);
        for (wi, w) in windows.iter().enumerate() {
            let mut tape = Tape::new();
            let vars = self.params.register(&mut tape, false);
            let x3 = tape.constant(vec![w.input.rows, 1, w.input.cols], w.input.data.clone())?;
            let z = graph::encode_nodes(&mut tape, &vars, &self.ids.enc, x3)?;
            let r = tape.mean_axis0(z)?;
            out.data[wi * h..(wi + 1) * h].copy_from_slice(tape.values(r));
        }
        Ok(out)
    }

    pub fn encoder_ids(&self) -> &EncoderIds {
        &self.ids.enc
    }

    pub fn psi_ids(&self) -> &PsiIds {
        &self.ids.psi
    }

    pub fn block_ids(&self) -> &[BlockIds] {
        &self.ids.blocks
    }

    pub fn regressor_ids(&self) -> &RegressorIds {
        &self.ids.reg
    }
}
