//! Featurization and the GraphCliff network.

mod featurize;
mod model;
mod params;

pub use featurize::{
    atom_features, bond_features, featurize, normalized_adjacency, GraphBatch, MolGraph, EDGE_FEATURES,
    NODE_FEATURES,
};
pub use model::{
    atom_encode, chebyshev_propagate, filter_layer, gine, kept_nodes, sagpool_readout, FilterOutput, Forward, GraphCliff,
    LayerTrace,
};
pub use params::{ParamStore, ParamVars};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Version tag of the node/edge feature layout; checkpoints record it.
pub const FEATURE_SPEC_VERSION: u32 = 1;

/// Epsilon inside the layer-normalization square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Top-k self-attention pooling with a mean ∥ max readout.
    Sagpool,
    Mean,
    Sum,
    Max,
}

/// Short-range operator. Only GINE is implemented; the others exist so that
/// configurations naming them fail loudly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShortFilter {
    Gine,
    Gcn,
    Gat,
    Gin,
}

/// Long-range operator. Only Chebyshev propagation is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongFilter {
    Chebyshev,
    Gcn,
    Gat,
    Gin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hidden width `d`; filters project to `3d`.
    pub hidden: usize,
    /// Number of stacked filters.
    pub layers: usize,
    /// Chebyshev order `K` (terms `T_0..T_K`).
    pub cheb_order: usize,
    /// Fraction of nodes kept per graph by top-k pooling.
    pub pool_ratio: f64,
    pub pooling: Pooling,
    pub short_filter: ShortFilter,
    pub long_filter: LongFilter,
    /// Ablation switches. Without the short filter the projection feeds the
    /// split directly; without the long filter `Long(x2) = x2`; without the
    /// gate the fusion is `Long(x2) + v`.
    pub use_short: bool,
    pub use_long: bool,
    pub use_gate: bool,
    /// Add self-loops before normalizing the adjacency.
    pub self_loops: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 128,
            layers: 3,
            cheb_order: 3,
            pool_ratio: 0.5,
            pooling: Pooling::Sagpool,
            short_filter: ShortFilter::Gine,
            long_filter: LongFilter::Chebyshev,
            use_short: true,
            use_long: true,
            use_gate: true,
            self_loops: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one filter layer is required".into()));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return Err(Error::Config(format!("pool_ratio {} outside (0, 1]", self.pool_ratio)));
        }
        match self.short_filter {
            ShortFilter::Gine => {}
            ShortFilter::Gcn => return Err(Error::UnsupportedFilter("GCN short")),
            ShortFilter::Gat => return Err(Error::UnsupportedFilter("GAT short")),
            ShortFilter::Gin => return Err(Error::UnsupportedFilter("GIN short")),
        }
        match self.long_filter {
            LongFilter::Chebyshev => {}
            LongFilter::Gcn => return Err(Error::UnsupportedFilter("GCN long")),
            LongFilter::Gat => return Err(Error::UnsupportedFilter("GAT long")),
            LongFilter::Gin => return Err(Error::UnsupportedFilter("GIN long")),
        }
        Ok(())
    }

    /// Width of the pooled graph representation.
    pub fn readout_width(&self) -> usize {
        match self.pooling {
            Pooling::Sagpool => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    /// The short-range-only ablation: no Chebyshev propagation.
    pub fn short_only(&self) -> Self {
        ModelConfig {
            use_long: false,
            ..*self
        }
    }
}
