//! Consistency regularizers tying the learned graph to per-regime
//! structural knowledge. Binary priors use masked BCE normalized by the
//! observed-entry count; continuous priors use masked MSE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Binary,
    Continuous,
}

/// Per-regime prior adjacency with an observation mask (1 = observed).
#[derive(Clone, Debug)]
pub struct StructuralKnowledge {
    pub a: Mat,
    pub edge_kind: EdgeKind,
    pub mask: Mat,
    pub regime: usize,
}

impl StructuralKnowledge {
    pub fn fully_observed(a: Mat, edge_kind: EdgeKind, regime: usize) -> Self {
        let mask = Mat::from_vec(a.rows, a.cols, vec![1.0; a.rows * a.cols])
            .expect("mask matches prior shape");
        StructuralKnowledge {
            a,
            edge_kind,
            mask,
            regime,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.a.rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.rows != self.a.cols {
            return Err(Error::Config(format!(
                "structural knowledge must be square, got {}x{}",
                self.a.rows, self.a.cols
            )));
        }
        if self.mask.rows != self.a.rows || self.mask.cols != self.a.cols {
            return Err(Error::Config("mask shape differs from prior shape".into()));
        }
        for &m in &self.mask.data {
            if m != 0.0 && m != 1.0 {
                return Err(Error::Config(format!("mask entry {m} is not 0/1")));
            }
        }
        for (&v, &m) in self.a.data.iter().zip(&self.mask.data) {
            if m == 0.0 {
                continue;
            }
            match self.edge_kind {
                EdgeKind::Binary => {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Config(format!(
                            "binary prior entry {v} is not 0/1"
                        )));
                    }
                }
                EdgeKind::Continuous => {
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::Config(format!(
                            "continuous prior entry {v} is negative or non-finite"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn observed_count(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m == 1.0).count()
    }
}

/// L_G between a learned graph on the tape and the regime prior, restricted
/// to observed entries and normalized by their count.
pub fn consistency_loss(
    tape: &mut Tape,
    adj: Var,
    adj_kind: EdgeKind,
    prior: &StructuralKnowledge,
) -> Result<Var> {
    if adj_kind != prior.edge_kind {
        return Err(Error::Config(format!(
            "edge kind mismatch: learned graph is {adj_kind:?}, prior is {:?}",
            prior.edge_kind
        )));
    }
    let n = prior.n_vars();
    if tape.shape(adj) != [n, n] {
        return Err(Error::Config(format!(
            "learned graph shape {:?} vs prior {n}x{n}",
            tape.shape(adj)
        )));
    }
    let count = prior.observed_count();
    if count == 0 {
        return Ok(tape.scalar(0.0));
    }
    match prior.edge_kind {
        EdgeKind::Binary => {
            let s = tape.bce_sum(adj, &prior.a.data, &prior.mask.data)?;
            Ok(tape.scale(s, 1.0 / count as f64))
        }
        EdgeKind::Continuous => {
            let target = tape.constant(vec![n, n], prior.a.data.clone())?;
            let mask = tape.constant(vec![n, n], prior.mask.data.clone())?;
            let diff = tape.sub(adj, target)?;
            let masked = tape.mul(diff, mask)?;
            let sq = tape.mul(masked, masked)?;
            let s = tape.sum(sq);
            Ok(tape.scale(s, 1.0 / count as f64))
        }
    }
}

/// L_total = L_F + lambda * L_G.
pub fn total_loss(tape: &mut Tape, lf: Var, lg: Var, lambda: f64) -> Result<Var> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    let scaled = tape.scale(lg, lambda);
    tape.add(lf, scaled)
}
