//! Message-passing layers and the three-layer stack.
//!
//! Each layer computes `h_v' = relu(self term + aggregated neighbor term + b)`.
//! The three families differ only in the aggregator: neighbor mean with a
//! separate self weight (SAGE), symmetric-normalized sum with self-loops
//! (GCN), and single-head attention over the node and its neighbors (GAT).
//! A node without neighbors therefore depends on its own row only.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Adjacency;
use crate::tensor::{ParamId, ParamStore, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "sage")]
    SageMean,
    #[serde(rename = "gcn")]
    Gcn,
    #[serde(rename = "gat")]
    Gat,
}

impl LayerKind {
    pub const ALL: [LayerKind; 3] = [LayerKind::SageMean, LayerKind::Gcn, LayerKind::Gat];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::SageMean => "sage",
            LayerKind::Gcn => "gcn",
            LayerKind::Gat => "gat",
        }
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sage" | "graphsage" => Ok(LayerKind::SageMean),
            "gcn" => Ok(LayerKind::Gcn),
            "gat" => Ok(LayerKind::Gat),
            other => Err(Error::InvalidArgument(format!(
                "unknown layer kind `{other}` (expected sage, gcn or gat)"
            ))),
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `relu(h·W_self + mean_{u∈N(v)}(h_u)·W_neigh + b)`.
///
/// The neighbor mean is taken after the projection, which is the same map and
/// cheaper when the input is wide.
pub fn sage_layer(tape: &mut Tape, h: Var, adj: &Arc<Adjacency>, w_self: Var, w_neigh: Var, b: Var) -> Var {
    let own = tape.matmul(h, w_self);
    let projected = tape.matmul(h, w_neigh);
    let neigh = tape.mean_aggregate(projected, adj);
    let sum = tape.add(own, neigh);
    let out = tape.add_bias(sum, b);
    tape.relu(out)
}

/// `relu(D^{-1/2}(A+I)D^{-1/2}·h·W + b)`.
pub fn gcn_layer(tape: &mut Tape, h: Var, adj: &Arc<Adjacency>, w: Var, b: Var) -> Var {
    let z = tape.matmul(h, w);
    let prop = tape.gcn_propagate(z, adj);
    let out = tape.add_bias(prop, b);
    tape.relu(out)
}

/// `relu(Σ_{u∈N(v)∪{v}} α_uv·h_u·W + b)` with single-head attention.
pub fn gat_layer(tape: &mut Tape, h: Var, adj: &Arc<Adjacency>, w: Var, att: Var, b: Var) -> Var {
    let z = tape.matmul(h, w);
    let agg = tape.gat_attend(z, att, adj);
    let out = tape.add_bias(agg, b);
    tape.relu(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Sage {
        w_self: ParamId,
        w_neigh: ParamId,
        bias: ParamId,
    },
    Gcn {
        w: ParamId,
        bias: ParamId,
    },
    Gat {
        w: ParamId,
        att: ParamId,
        bias: ParamId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnStack {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub layers: Vec<LayerParams>,
}

impl GnnStack {
    pub const LAYERS: usize = 3;

    /// Registers Glorot-initialized weights (zero biases) under `gnn.<layer>.*`.
    pub fn new(
        kind: LayerKind,
        input_dim: usize,
        hidden_dim: usize,
        dropout: f64,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(Self::LAYERS);
        for l in 0..Self::LAYERS {
            let din = if l == 0 { input_dim } else { hidden_dim };
            let name = |p: &str| format!("gnn.{l}.{p}");
            let params = match kind {
                LayerKind::SageMean => LayerParams::Sage {
                    w_self: store.add(name("w_self"), Tensor::glorot(din, hidden_dim, rng)),
                    w_neigh: store.add(name("w_neigh"), Tensor::glorot(din, hidden_dim, rng)),
                    bias: store.add(name("bias"), Tensor::zeros(&[hidden_dim])),
                },
                LayerKind::Gcn => LayerParams::Gcn {
                    w: store.add(name("w"), Tensor::glorot(din, hidden_dim, rng)),
                    bias: store.add(name("bias"), Tensor::zeros(&[hidden_dim])),
                },
                LayerKind::Gat => {
                    let w = store.add(name("w"), Tensor::glorot(din, hidden_dim, rng));
                    let a = Tensor::glorot(2 * hidden_dim, 1, rng).into_data();
                    LayerParams::Gat {
                        w,
                        att: store.add(name("att"), Tensor::from_vec(vec![2 * hidden_dim], a)),
                        bias: store.add(name("bias"), Tensor::zeros(&[hidden_dim])),
                    }
                }
            };
            layers.push(params);
        }
        Self {
            kind,
            input_dim,
            hidden_dim,
            dropout,
            layers,
        }
    }

    /// Looks up the parameters of an existing stack by name.
    pub fn from_store(
        kind: LayerKind,
        input_dim: usize,
        hidden_dim: usize,
        dropout: f64,
        store: &ParamStore,
    ) -> Result<Self> {
        let find = |l: usize, p: &str| {
            let name = format!("gnn.{l}.{p}");
            store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let mut layers = Vec::with_capacity(Self::LAYERS);
        for l in 0..Self::LAYERS {
            layers.push(match kind {
                LayerKind::SageMean => LayerParams::Sage {
                    w_self: find(l, "w_self")?,
                    w_neigh: find(l, "w_neigh")?,
                    bias: find(l, "bias")?,
                },
                LayerKind::Gcn => LayerParams::Gcn {
                    w: find(l, "w")?,
                    bias: find(l, "bias")?,
                },
                LayerKind::Gat => LayerParams::Gat {
                    w: find(l, "w")?,
                    att: find(l, "att")?,
                    bias: find(l, "bias")?,
                },
            });
        }
        Ok(Self {
            kind,
            input_dim,
            hidden_dim,
            dropout,
            layers,
        })
    }

    /// One layer without dropout.
    pub fn layer(&self, l: usize, tape: &mut Tape, store: &ParamStore, h: Var, adj: &Arc<Adjacency>) -> Var {
        match self.layers[l] {
            LayerParams::Sage { w_self, w_neigh, bias } => {
                let (ws, wn, b) = (
                    tape.param(store, w_self),
                    tape.param(store, w_neigh),
                    tape.param(store, bias),
                );
                sage_layer(tape, h, adj, ws, wn, b)
            }
            LayerParams::Gcn { w, bias } => {
                let (w, b) = (tape.param(store, w), tape.param(store, bias));
                gcn_layer(tape, h, adj, w, b)
            }
            LayerParams::Gat { w, att, bias } => {
                let (w, a, b) = (tape.param(store, w), tape.param(store, att), tape.param(store, bias));
                gat_layer(tape, h, adj, w, a, b)
            }
        }
    }

    /// Runs all layers; dropout follows every layer but the last, in training only.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        features: Var,
        adj: &Arc<Adjacency>,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let x = tape.value(features);
        if x.shape().len() != 2 || x.cols() != self.input_dim || x.rows() != adj.len() {
            return Err(Error::Shape(format!(
                "stack expects [{}, {}] features, got {:?}",
                adj.len(),
                self.input_dim,
                x.shape()
            )));
        }
        let mut h = features;
        for l in 0..self.layers.len() {
            h = self.layer(l, tape, store, h, adj);
            if l + 1 < self.layers.len() {
                h = tape.dropout(h, self.dropout, training, rng);
            }
        }
        Ok(h)
    }
}
