use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::{uniform_weight, ParamStore, ParamVars};
use super::{GraphBatch, ModelConfig, Pooling, EDGE_FEATURES, LAYER_NORM_EPS, NODE_FEATURES};
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};
use crate::{Error, Result};

/// `h⁰ = relu(layernorm(x·W + b))`.
pub fn atom_encode<'t>(x: Var<'t>, p: &ParamVars<'t>) -> Result<Var<'t>> {
    let z = x.matmul(&p.get("encoder.weight")?)?.add_row(&p.get("encoder.bias")?)?;
    let gamma = p.get("encoder.norm.gamma")?;
    let beta = p.get("encoder.norm.beta")?;
    Ok(z.layer_norm(Some(&gamma), Some(&beta), LAYER_NORM_EPS)?.relu())
}

/// Edge-aware message passing:
/// `z'_i = ψ((1 + ε) z_i + Σ_{j→i} (z_j + φ(e_ji)))` with `φ` linear and
/// `ψ` a two-layer relu MLP.
pub fn gine<'t>(
    z: Var<'t>,
    edge_src: &Rc<[usize]>,
    edge_dst: &Rc<[usize]>,
    edge_attr: Var<'t>,
    p: &ParamVars<'t>,
    prefix: &str,
) -> Result<Var<'t>> {
    let n = z.rows();
    let edge_term = edge_attr
        .matmul(&p.get(&format!("{prefix}.edge.weight"))?)?
        .add_row(&p.get(&format!("{prefix}.edge.bias"))?)?;
    let messages = z.gather_rows(Rc::clone(edge_src))?.add(&edge_term)?;
    let aggregated = messages.scatter_add_rows(Rc::clone(edge_dst), n)?;
    let eps = p.get(&format!("{prefix}.eps"))?;
    let pre = z.add(&z.mul_scalar(&eps)?)?.add(&aggregated)?;
    let hidden = pre
        .matmul(&p.get(&format!("{prefix}.mlp1.weight"))?)?
        .add_row(&p.get(&format!("{prefix}.mlp1.bias"))?)?
        .relu();
    Ok(hidden
        .matmul(&p.get(&format!("{prefix}.mlp2.weight"))?)?
        .add_row(&p.get(&format!("{prefix}.mlp2.bias"))?)?)
}

/// `Σ_k α_k T_k` with `T_0 = x`, `T_1 = Âx`, `T_k = 2ÂT_{k-1} − T_{k-2}`.
/// The order `K` is `len(α) − 1`.
pub fn chebyshev_propagate<'t>(x2: Var<'t>, adj: &Rc<SparseMatrix>, alpha: Var<'t>) -> Result<Var<'t>> {
    let terms = alpha.value().len();
    if terms == 0 {
        return Err(Error::Config("Chebyshev coefficients are empty".into()));
    }
    let mut out = x2.mul_scalar(&alpha.select(0)?)?;
    let mut prev = x2;
    let mut cur = x2;
    for k in 1..terms {
        let next = if k == 1 {
            x2.spmm(adj)?
        } else {
            cur.spmm(adj)?.scale(2.0).sub(&prev)?
        };
        out = out.add(&next.mul_scalar(&alpha.select(k)?)?)?;
        prev = cur;
        cur = next;
    }
    Ok(out)
}

pub struct FilterOutput<'t> {
    pub out: Var<'t>,
    /// `σ(x₁)`; absent when gating is disabled.
    pub gate: Option<Var<'t>>,
    pub long: Var<'t>,
}

/// One GraphCliff filter:
/// `Z = layernorm(h)·W`, `Z' = GINE(Z)`, `[x₂ ∥ x₁ ∥ v] = Z'`,
/// `u = σ(x₁) ⊙ Long(x₂) + v`, output `h + u`.
pub fn filter_layer<'t>(
    h: Var<'t>,
    batch: &GraphBatch,
    edge_attr: Var<'t>,
    p: &ParamVars<'t>,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<FilterOutput<'t>> {
    let prefix = format!("layers.{layer}");
    let d = cfg.hidden;
    let gamma = p.get(&format!("{prefix}.norm.gamma"))?;
    let beta = p.get(&format!("{prefix}.norm.beta"))?;
    let z = h
        .layer_norm(Some(&gamma), Some(&beta), LAYER_NORM_EPS)?
        .matmul(&p.get(&format!("{prefix}.proj"))?)?;
    let z = if cfg.use_short {
        gine(z, &batch.edge_src, &batch.edge_dst, edge_attr, p, &format!("{prefix}.gine"))?
    } else {
        z
    };
    let parts = z.split_cols(&[d, d, d])?;
    let (x2, x1, v) = (parts[0], parts[1], parts[2]);
    let long = if cfg.use_long {
        chebyshev_propagate(x2, &batch.norm_adj, p.get(&format!("{prefix}.cheb.alpha"))?)?
    } else {
        x2
    };
    let (fused, gate) = if cfg.use_gate {
        let g = x1.sigmoid();
        (g.mul(&long)?, Some(g))
    } else {
        (long, None)
    };
    let u = fused.add(&v)?;
    Ok(FilterOutput {
        out: h.add(&u)?,
        gate,
        long,
    })
}

/// Nodes kept by top-k pooling, in ascending index order: per graph the
/// `ceil(ratio · n)` highest scores, ties to the lower index.
pub fn kept_nodes(scores: &[f64], node_offsets: &[usize], ratio: f64) -> Result<Vec<usize>> {
    let mut kept = Vec::new();
    for (g, w) in node_offsets.windows(2).enumerate() {
        let (start, end) = (w[0], w[1]);
        let n = end - start;
        if n == 0 {
            return Err(Error::EmptyGraph(g));
        }
        // The small offset keeps products like 0.1 * 30 from rounding up.
        let k = ((ratio * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        let mut order: Vec<usize> = (start..end).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut top = order[..k].to_vec();
        top.sort_unstable();
        kept.extend(top);
    }
    Ok(kept)
}

/// Self-attention pooling: scores `s = Â·h·w + b`, keep the top fraction of
/// each graph, scale kept rows by `tanh(s)` and read out `mean ∥ max`.
pub fn sagpool_readout<'t>(h: Var<'t>, batch: &GraphBatch, p: &ParamVars<'t>, ratio: f64) -> Result<Var<'t>> {
    let tape = h.tape();
    let scores = h
        .matmul(&p.get("pool.weight")?)?
        .spmm(&batch.norm_adj)?
        .add_row(&p.get("pool.bias")?)?;
    let kept = kept_nodes(scores.value().data(), &batch.node_offsets, ratio)?;
    tape.note_decision(&kept);
    let segments: Vec<usize> = kept.iter().map(|&i| batch.graph_id[i]).collect();
    let kept: Rc<[usize]> = kept.into();
    let weights = scores.gather_rows(Rc::clone(&kept))?.tanh();
    let scaled = h.gather_rows(Rc::clone(&kept))?.mul_col(&weights)?;
    let mean = segment_mean(scaled, &segments, batch.num_graphs)?;
    let max = scaled.segment_max(&segments, batch.num_graphs)?;
    Ok(Var::concat(&[mean, max])?)
}

fn segment_mean<'t>(x: Var<'t>, segments: &[usize], n: usize) -> Result<Var<'t>> {
    let mut counts = vec![0usize; n];
    for &s in segments {
        counts[s] += 1;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGraph(g));
    }
    let inv = Tensor::matrix(n, 1, counts.iter().map(|&c| 1.0 / c as f64).collect())?;
    let summed = x.scatter_add_rows(segments.to_vec().into(), n)?;
    Ok(summed.mul_col(&x.tape().constant(inv))?)
}

pub struct Forward<'t> {
    /// `G × 1` predictions.
    pub predictions: Var<'t>,
    /// Pooled graph representations fed to the regression head.
    pub pooled: Var<'t>,
    /// `h⁰ … h^L`.
    pub embeddings: Vec<Var<'t>>,
    pub gates: Vec<Option<Var<'t>>>,
    pub long: Vec<Var<'t>>,
}

/// Detached copy of a forward pass for analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub embeddings: Vec<Tensor>,
    pub gates: Vec<Option<Tensor>>,
    pub long: Vec<Tensor>,
    pub pooled: Tensor,
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCliff {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl GraphCliff {
    /// Fresh parameters: weights uniform in `±1/sqrt(fan_in)`, biases zero,
    /// normalization gains one, `ε = 0`, `α = (1, 0, …, 0)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.hidden;
        let wide = 3 * d;
        let mut p = ParamStore::new();
        p.insert("encoder.weight", uniform_weight(&mut rng, NODE_FEATURES, d));
        p.insert("encoder.bias", Tensor::zeros(&[d]));
        p.insert("encoder.norm.gamma", Tensor::filled(&[d], 1.0));
        p.insert("encoder.norm.beta", Tensor::zeros(&[d]));
        for l in 0..config.layers {
            let pre = format!("layers.{l}");
            p.insert(format!("{pre}.norm.gamma"), Tensor::filled(&[d], 1.0));
            p.insert(format!("{pre}.norm.beta"), Tensor::zeros(&[d]));
            p.insert(format!("{pre}.proj"), uniform_weight(&mut rng, d, wide));
            if config.use_short {
                p.insert(format!("{pre}.gine.edge.weight"), uniform_weight(&mut rng, EDGE_FEATURES, wide));
                p.insert(format!("{pre}.gine.edge.bias"), Tensor::zeros(&[wide]));
                p.insert(format!("{pre}.gine.eps"), Tensor::zeros(&[1]));
                p.insert(format!("{pre}.gine.mlp1.weight"), uniform_weight(&mut rng, wide, wide));
                p.insert(format!("{pre}.gine.mlp1.bias"), Tensor::zeros(&[wide]));
                p.insert(format!("{pre}.gine.mlp2.weight"), uniform_weight(&mut rng, wide, wide));
                p.insert(format!("{pre}.gine.mlp2.bias"), Tensor::zeros(&[wide]));
            }
            if config.use_long {
                let mut alpha = Tensor::zeros(&[config.cheb_order + 1]);
                alpha.data_mut()[0] = 1.0;
                p.insert(format!("{pre}.cheb.alpha"), alpha);
            }
        }
        if config.pooling == Pooling::Sagpool {
            p.insert("pool.weight", uniform_weight(&mut rng, d, 1));
            p.insert("pool.bias", Tensor::zeros(&[1]));
        }
        let readout = config.readout_width();
        p.insert("head.hidden.weight", uniform_weight(&mut rng, readout, d));
        p.insert("head.hidden.bias", Tensor::zeros(&[d]));
        p.insert("head.out.weight", uniform_weight(&mut rng, d, 1));
        p.insert("head.out.bias", Tensor::zeros(&[1]));
        Ok(GraphCliff { config, params: p })
    }

    /// Wraps existing parameters after checking that names and shapes match
    /// what `config` requires.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let template = GraphCliff::new(config, 0)?;
        for (name, t) in template.params.iter() {
            match params.get(name) {
                None => return Err(Error::Config(format!("missing parameter '{name}'"))),
                Some(p) if p.shape() != t.shape() => {
                    return Err(Error::Config(format!(
                        "parameter '{name}' has shape {:?}, expected {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(GraphCliff { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_scalars()
    }

    /// Runs the filter stack from given initial embeddings.
    pub fn propagate<'t>(
        &self,
        h0: Var<'t>,
        batch: &GraphBatch,
        p: &ParamVars<'t>,
    ) -> Result<(Vec<Var<'t>>, Vec<Option<Var<'t>>>, Vec<Var<'t>>)> {
        let tape = h0.tape();
        let edge_attr = tape.constant(batch.edge_features.clone());
        let mut embeddings = vec![h0];
        let mut gates = Vec::with_capacity(self.config.layers);
        let mut long = Vec::with_capacity(self.config.layers);
        let mut h = h0;
        for l in 0..self.config.layers {
            let f = filter_layer(h, batch, edge_attr, p, &self.config, l)?;
            h = f.out;
            embeddings.push(h);
            gates.push(f.gate);
            long.push(f.long);
        }
        Ok((embeddings, gates, long))
    }

    /// Graph-level representation of the final embeddings.
    pub fn readout<'t>(&self, h: Var<'t>, batch: &GraphBatch, p: &ParamVars<'t>) -> Result<Var<'t>> {
        match self.config.pooling {
            Pooling::Sagpool => sagpool_readout(h, batch, p, self.config.pool_ratio),
            Pooling::Mean => segment_mean(h, &batch.graph_id, batch.num_graphs),
            Pooling::Sum => Ok(h.scatter_add_rows(batch.graph_id.clone().into(), batch.num_graphs)?),
            Pooling::Max => Ok(h.segment_max(&batch.graph_id, batch.num_graphs)?),
        }
    }

    pub fn head<'t>(&self, pooled: Var<'t>, p: &ParamVars<'t>) -> Result<Var<'t>> {
        let hidden = pooled
            .matmul(&p.get("head.hidden.weight")?)?
            .add_row(&p.get("head.hidden.bias")?)?
            .relu();
        Ok(hidden
            .matmul(&p.get("head.out.weight")?)?
            .add_row(&p.get("head.out.bias")?)?)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, p: &ParamVars<'t>, batch: &GraphBatch) -> Result<Forward<'t>> {
        if let Some(g) = batch.node_offsets.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::EmptyGraph(g));
        }
        let x = tape.constant(batch.node_features.clone());
        let h0 = atom_encode(x, p)?;
        let (embeddings, gates, long) = self.propagate(h0, batch, p)?;
        let last = *embeddings.last().expect("at least h0");
        let pooled = self.readout(last, batch, p)?;
        let predictions = self.head(pooled, p)?;
        Ok(Forward {
            predictions,
            pooled,
            embeddings,
            gates,
            long,
        })
    }

    pub fn trace(&self, batch: &GraphBatch) -> Result<LayerTrace> {
        let tape = Tape::new();
        let p = self.params.attach_frozen(&tape);
        let f = self.forward(&tape, &p, batch)?;
        let val = |v: &Var<'_>| (*v.value()).clone();
        Ok(LayerTrace {
            embeddings: f.embeddings.iter().map(val).collect(),
            gates: f.gates.iter().map(|g| g.as_ref().map(val)).collect(),
            long: f.long.iter().map(val).collect(),
            pooled: val(&f.pooled),
            predictions: f.predictions.value().data().to_vec(),
        })
    }

    pub fn predict(&self, batch: &GraphBatch) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.params.attach_frozen(&tape);
        let f = self.forward(&tape, &p, batch)?;
        let out = f.predictions.value().data().to_vec();
        Ok(out)
    }
}
