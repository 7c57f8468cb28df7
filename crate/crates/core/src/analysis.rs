//! Diagnostics on trained models: hop-wise sensitivity, Dirichlet energy,
//! layer Jacobian spectra, embedding-vs-fingerprint distance fits and
//! per-atom gate scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chem::Molecule;
use crate::cliff::CompoundRecord;
use crate::fingerprint::{ecfp, tanimoto, FpConfig};
use crate::graphnn::{atom_encode, featurize, filter_layer, GraphBatch, GraphCliff, MolGraph};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// `Σ_{(i,j)} ||h_i − h_j||²` over undirected edges, each counted once.
pub fn dirichlet_energy(h: &Tensor, edges: &[(usize, usize)]) -> f64 {
    edges
        .iter()
        .map(|&(i, j)| h.row(i).iter().zip(h.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopConfig {
    /// Perturbation magnitude.
    pub eps: f64,
    pub k_max: usize,
    /// Random directions per source node.
    pub trials: usize,
    pub seed: u64,
}

impl Default for HopConfig {
    fn default() -> Self {
        HopConfig {
            eps: 1e-3,
            k_max: 5,
            trials: 8,
            seed: 0,
        }
    }
}

/// Uniform direction on the unit sphere.
fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Final-layer embeddings for stacked copies of one graph whose initial
/// embeddings are given row-block by row-block.
fn propagate_frozen(model: &GraphCliff, batch: &GraphBatch, h0: Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let p = model.params.attach_frozen(&tape);
    let (emb, _, _) = model.propagate(tape.constant(h0), batch, &p)?;
    Ok((*emb.last().expect("h0 present").value()).clone())
}

/// Initial embeddings `h⁰` of a batch.
pub fn initial_embeddings(model: &GraphCliff, batch: &GraphBatch) -> Result<Tensor> {
    let tape = Tape::new();
    let p = model.params.attach_frozen(&tape);
    let h0 = atom_encode(tape.constant(batch.node_features.clone()), &p)?;
    let out = (*h0.value()).clone();
    Ok(out)
}

/// Mean response at each hop distance `0..=k_max` of the final-layer
/// embeddings to a perturbation of size `eps` applied to one node's initial
/// embedding `h⁰_u`: `||h_v(perturbed) − h_v|| / eps`, averaged over nodes
/// `v` at that distance, then over sources and random directions. Hops with
/// no node pair are `None`.
pub fn hop_sensitivity(model: &GraphCliff, mol: &Molecule, cfg: &HopConfig) -> Result<Vec<Option<f64>>> {
    if !(cfg.eps > 0.0) {
        return Err(Error::Config(format!("perturbation size {} must be positive", cfg.eps)));
    }
    let n = mol.num_atoms();
    if n == 0 {
        return Err(Error::EmptyGraph(0));
    }
    let graph = featurize(mol);
    let single = GraphBatch::single(&graph, model.config.self_loops)?;
    let h0 = initial_embeddings(model, &single)?;
    let base = propagate_frozen(model, &single, h0.clone())?;
    let d = h0.cols();
    let dist: Vec<Vec<Option<usize>>> = (0..n).map(|u| mol.bfs_distances(u)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // All (source, trial) perturbations as copies of the molecule in one batch.
    let jobs: Vec<(usize, Vec<f64>)> = (0..n)
        .flat_map(|u| (0..cfg.trials).map(move |_| u))
        .map(|u| (u, unit_vector(&mut rng, d)))
        .collect();
    let mut sums = vec![0.0; cfg.k_max + 1];
    let mut counts = vec![0usize; cfg.k_max + 1];
    for chunk in jobs.chunks(64) {
        let copies: Vec<&MolGraph> = vec![&graph; chunk.len()];
        let batch = GraphBatch::from_graphs(&copies, model.config.self_loops)?;
        let mut h = Vec::with_capacity(chunk.len() * n * d);
        for (u, dir) in chunk {
            let start = h.len();
            h.extend_from_slice(h0.data());
            for (x, r) in h[start + u * d..start + (u + 1) * d].iter_mut().zip(dir) {
                *x += cfg.eps * r;
            }
        }
        let out = propagate_frozen(model, &batch, Tensor::matrix(chunk.len() * n, d, h)?)?;
        for (c, (u, _)) in chunk.iter().enumerate() {
            let mut hop_sum = vec![0.0; cfg.k_max + 1];
            let mut hop_n = vec![0usize; cfg.k_max + 1];
            for v in 0..n {
                let Some(k) = dist[*u][v] else { continue };
                if k > cfg.k_max {
                    continue;
                }
                let diff: f64 = out
                    .row(c * n + v)
                    .iter()
                    .zip(base.row(v))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                hop_sum[k] += diff / cfg.eps;
                hop_n[k] += 1;
            }
            for k in 0..=cfg.k_max {
                if hop_n[k] > 0 {
                    sums[k] += hop_sum[k] / hop_n[k] as f64;
                    counts[k] += 1;
                }
            }
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect())
}

/// Unweighted mean of per-molecule hop sensitivities; a hop is `None` only
/// if no molecule reaches it.
pub fn mean_hop_sensitivity(model: &GraphCliff, mols: &[&Molecule], cfg: &HopConfig) -> Result<Vec<Option<f64>>> {
    let per: Vec<Vec<Option<f64>>> = mols
        .par_iter()
        .map(|m| hop_sensitivity(model, m, cfg))
        .collect::<Result<_>>()?;
    Ok((0..=cfg.k_max)
        .map(|k| {
            let vals: Vec<f64> = per.iter().filter_map(|p| p[k]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect())
}

/// Dirichlet energy of `h⁰ … h^L`, averaged over molecules.
pub fn layer_dirichlet(model: &GraphCliff, mols: &[&Molecule]) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = mols
        .par_iter()
        .map(|m| {
            let g = featurize(m);
            let trace = model.trace(&GraphBatch::single(&g, model.config.self_loops)?)?;
            Ok(trace.embeddings.iter().map(|h| dirichlet_energy(h, &g.bonds)).collect())
        })
        .collect::<Result<_>>()?;
    if per.is_empty() {
        return Err(Error::Data("no molecules to analyze".into()));
    }
    let layers = per[0].len();
    Ok((0..layers)
        .map(|l| per.iter().map(|p| p[l]).sum::<f64>() / per.len() as f64)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerConfig {
    pub iters: usize,
    /// Relative change between successive estimates that counts as converged.
    pub tol: f64,
    /// Forward-difference step for Jacobian-vector products.
    pub delta: f64,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            iters: 100,
            tol: 1e-8,
            delta: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn eval_plain<F>(f: &F, x: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let y = f(&tape, tape.constant(x.clone()))?;
    let out = (*y.value()).clone();
    Ok(out)
}

/// `Jᵀu` at `x` by reverse mode.
fn vjp<F>(f: &F, x: &Tensor, u: &Tensor) -> Result<Tensor>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&tape, xv)?;
    let loss = y.mul(&tape.constant(u.clone()))?.sum();
    tape.backward(loss)?;
    Ok(tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape())))
}

/// Largest singular value of the Jacobian of `f` at `x` by power iteration
/// on `JᵀJ`: `Jv` by forward differences, `Jᵀ(Jv)` by reverse mode. The
/// estimate at each step is `||Jv||` for the current unit vector `v`.
pub fn jacobian_top_singular<F>(f: F, x: &Tensor, cfg: &PowerConfig) -> Result<SingularEstimate>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    if cfg.iters == 0 {
        return Err(Error::Config("power iteration needs at least one step".into()));
    }
    let fx = eval_plain(&f, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v = Tensor::new(x.shape().to_vec(), unit_vector(&mut rng, x.len()))?;
    let mut prev = f64::NAN;
    let mut est = 0.0;
    for it in 1..=cfg.iters {
        let shifted = Tensor::new(
            x.shape().to_vec(),
            x.data().iter().zip(v.data()).map(|(a, b)| a + cfg.delta * b).collect(),
        )?;
        let fy = eval_plain(&f, &shifted)?;
        let jv = Tensor::new(
            fx.shape().to_vec(),
            fy.data().iter().zip(fx.data()).map(|(a, b)| (a - b) / cfg.delta).collect(),
        )?;
        est = jv.norm();
        if !est.is_finite() {
            return Err(Error::NumericAbort(format!("Jacobian estimate became {est}")));
        }
        if it > 1 && (est - prev).abs() <= cfg.tol * est.abs().max(f64::MIN_POSITIVE) {
            return Ok(SingularEstimate {
                value: est,
                converged: true,
                iterations: it,
            });
        }
        prev = est;
        let w = vjp(&f, x, &jv)?;
        let wn = w.norm();
        if wn == 0.0 {
            // Jv lies in the left null space: the map is zero along v.
            return Ok(SingularEstimate {
                value: est,
                converged: est == 0.0,
                iterations: it,
            });
        }
        v = w.map(|a| a / wn);
    }
    Ok(SingularEstimate {
        value: est,
        converged: false,
        iterations: cfg.iters,
    })
}

/// Top Jacobian singular value of filter `layer` (0-based) at the
/// embeddings the model produces for `mol`.
pub fn layer_jacobian(model: &GraphCliff, mol: &Molecule, layer: usize, cfg: &PowerConfig) -> Result<SingularEstimate> {
    if layer >= model.config.layers {
        return Err(Error::Config(format!(
            "layer {layer} out of range for a {}-layer model",
            model.config.layers
        )));
    }
    let g = featurize(mol);
    let batch = GraphBatch::single(&g, model.config.self_loops)?;
    let trace = model.trace(&batch)?;
    let edge_attr = batch.edge_features.clone();
    jacobian_top_singular(
        |tape, h| {
            let p = model.params.attach_frozen(tape);
            let e = tape.constant(edge_attr.clone());
            Ok(filter_layer(h, &batch, e, &p, &model.config, layer)?.out)
        },
        &trace.embeddings[layer],
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Normalized `(ECFP dissimilarity, embedding distance)` per pair.
    pub points: Vec<(f64, f64)>,
}

fn min_max(v: &[f64]) -> Option<Vec<f64>> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi > lo).then(|| v.iter().map(|x| (x - lo) / (hi - lo)).collect())
}

/// Min-max normalizes both coordinates separately, then fits
/// `y = slope · x + intercept` by least squares. A constant `y` normalizes
/// to all zeros.
pub fn normalized_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Data("slope fit needs at least two points".into()));
    }
    let x = min_max(xs).ok_or_else(|| Error::Data("all ECFP dissimilarities are equal; slope undefined".into()))?;
    let y = min_max(ys).unwrap_or_else(|| vec![0.0; ys.len()]);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: x.into_iter().zip(y).collect(),
    })
}

/// ECFP dissimilarity against pooled-embedding distance over the given
/// record pairs.
pub fn embedding_vs_ecfp_slope(
    model: &GraphCliff,
    records: &[CompoundRecord],
    pairs: &[(usize, usize)],
    fp: &FpConfig,
) -> Result<SlopeFit> {
    let graphs: Vec<MolGraph> = records.iter().map(|r| featurize(&r.mol)).collect();
    let pooled: Vec<Tensor> = graphs
        .par_iter()
        .map(|g| Ok(model.trace(&GraphBatch::single(g, model.config.self_loops)?)?.pooled))
        .collect::<Result<_>>()?;
    let fps: Vec<_> = records.iter().map(|r| ecfp(&r.mol, fp)).collect();
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        if i >= records.len() || j >= records.len() {
            return Err(Error::Data(format!("pair ({i}, {j}) out of range")));
        }
        xs.push(1.0 - tanimoto(&fps[i], &fps[j])?);
        let d: f64 = pooled[i]
            .data()
            .iter()
            .zip(pooled[j].data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        ys.push(d);
    }
    normalized_slope(&xs, &ys)
}

/// Per-atom importance at filter `layer` (0-based): the mean gate value
/// `σ(x₁)` over features, min-max normalized over the molecule's atoms.
/// Constant scores become 0.5.
pub fn export_gate_scores(model: &GraphCliff, mol: &Molecule, layer: usize) -> Result<Vec<f64>> {
    if layer >= model.config.layers {
        return Err(Error::Config(format!(
            "layer {layer} out of range for a {}-layer model",
            model.config.layers
        )));
    }
    let g = featurize(mol);
    let trace = model.trace(&GraphBatch::single(&g, model.config.self_loops)?)?;
    let gate = trace.gates[layer]
        .as_ref()
        .ok_or_else(|| Error::Config("model was built without gating".into()))?;
    let raw: Vec<f64> = (0..gate.rows())
        .map(|i| gate.row(i).iter().sum::<f64>() / gate.cols() as f64)
        .collect();
    Ok(min_max(&raw).unwrap_or_else(|| vec![0.5; raw.len()]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoleculeGates {
    pub smiles: String,
    pub scores: Vec<f64>,
}

/// Everything `analyze` reports for one model and record set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    /// Index `k` holds the hop-`k` mean, `k = 0..=k_max`.
    pub hop_sensitivity: Vec<Option<f64>>,
    /// Mean energy of `h⁰ … h^L`.
    pub dirichlet: Vec<f64>,
    /// Per filter layer, averaged over the analyzed molecules.
    pub jacobian_sv: Vec<f64>,
    /// Per filter layer, whether the power iteration converged for every
    /// molecule.
    pub jacobian_converged: Vec<bool>,
    pub slope: Option<SlopeFit>,
    pub gate_scores: Vec<MoleculeGates>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub hop: HopConfig,
    pub power: PowerConfig,
    /// Molecules used for the per-molecule diagnostics (first `n`).
    pub max_molecules: usize,
    /// Filter layer whose gates are exported (0-based); defaults to the last.
    pub gate_layer: Option<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            hop: HopConfig::default(),
            power: PowerConfig::default(),
            max_molecules: 50,
            gate_layer: None,
        }
    }
}

/// Runs all diagnostics. `pairs` index into `records` and feed the slope
/// fit; fewer than two pairs leave the slope absent.
pub fn analyze(
    model: &GraphCliff,
    records: &[CompoundRecord],
    pairs: &[(usize, usize)],
    fp: &FpConfig,
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport> {
    if records.is_empty() {
        return Err(Error::Data("no molecules to analyze".into()));
    }
    let subset: Vec<&Molecule> = records.iter().take(cfg.max_molecules.max(1)).map(|r| &r.mol).collect();
    let hop_sensitivity = mean_hop_sensitivity(model, &subset, &cfg.hop)?;
    let dirichlet = layer_dirichlet(model, &subset)?;
    let mut jacobian_sv = Vec::with_capacity(model.config.layers);
    let mut jacobian_converged = Vec::with_capacity(model.config.layers);
    for layer in 0..model.config.layers {
        let est: Vec<SingularEstimate> = subset
            .par_iter()
            .map(|m| layer_jacobian(model, m, layer, &cfg.power))
            .collect::<Result<_>>()?;
        jacobian_sv.push(est.iter().map(|e| e.value).sum::<f64>() / est.len() as f64);
        jacobian_converged.push(est.iter().all(|e| e.converged));
    }
    let slope = if pairs.len() >= 2 {
        match embedding_vs_ecfp_slope(model, records, pairs, fp) {
            Ok(fit) => Some(fit),
            Err(Error::Data(msg)) => {
                log::warn!("slope fit skipped: {msg}");
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let gate_layer = cfg.gate_layer.unwrap_or(model.config.layers - 1);
    let gate_scores = if model.config.use_gate {
        records
            .iter()
            .map(|r| {
                Ok(MoleculeGates {
                    smiles: r.smiles.clone(),
                    scores: export_gate_scores(model, &r.mol, gate_layer)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(AnalysisReport {
        hop_sensitivity,
        dirichlet,
        jacobian_sv,
        jacobian_converged,
        slope,
        gate_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;
    use crate::graphnn::ModelConfig;
    use nalgebra::DMatrix;

    fn small(cfg: ModelConfig) -> ModelConfig {
        ModelConfig {
            hidden: 8,
            layers: 2,
            ..cfg
        }
    }

    fn linear_map(m: Tensor) -> impl for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> {
        move |tape, x| Ok(x.matmul(&tape.constant(m.clone()))?)
    }

    #[test]
    fn dirichlet_hand_values() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(dirichlet_energy(&h, &[(0, 1)]), 2.0);
        let c = Tensor::filled(&[4, 3], 0.7);
        assert_eq!(dirichlet_energy(&c, &[(0, 1), (1, 2), (2, 3)]), 0.0);
    }

    #[test]
    fn dirichlet_is_rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = 6;
            let d = 4;
            let h = DMatrix::<f64>::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
            let q = DMatrix::<f64>::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
            let rotated = &h * &q;
            let to_tensor = |m: &DMatrix<f64>| {
                Tensor::from_rows(&(0..n).map(|i| m.row(i).iter().copied().collect()).collect::<Vec<_>>()).unwrap()
            };
            let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)];
            let a = dirichlet_energy(&to_tensor(&h), &edges);
            let b = dirichlet_energy(&to_tensor(&rotated), &edges);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn jacobian_of_known_spectra() {
        let x = Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap();
        let cfg = PowerConfig::default();
        let two = jacobian_top_singular(|_, v: Var<'_>| Ok(v.scale(2.0)), &x, &cfg).unwrap();
        assert!((two.value - 2.0).abs() < 1e-6, "{two:?}");
        let diag = Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let est = jacobian_top_singular(linear_map(diag), &x, &cfg).unwrap();
        assert!((est.value - 3.0).abs() < 1e-6, "{est:?}");
        assert!(est.converged);
    }

    #[test]
    fn jacobian_matches_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(r, c) in &[(3, 3), (5, 2), (10, 10), (40, 40)] {
            let m = DMatrix::<f64>::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
            let oracle = m.singular_values().max();
            let t = Tensor::matrix(r, c, m.transpose().as_slice().to_vec()).unwrap();
            let x = Tensor::matrix(1, r, (0..r).map(|i| i as f64 * 0.1).collect()).unwrap();
            let cfg = PowerConfig {
                iters: 2000,
                tol: 1e-12,
                ..PowerConfig::default()
            };
            let est = jacobian_top_singular(linear_map(t), &x, &cfg).unwrap();
            assert!((est.value - oracle).abs() <= 1e-5 * oracle, "{r}x{c}: {} vs {oracle}", est.value);
        }
    }

    #[test]
    fn slope_hand_cases() {
        let xs = [0.1, 0.4, 0.2, 0.9];
        let fit = normalized_slope(&xs, &xs.map(|x| 5.0 * x + 1.0)).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12 && fit.intercept.abs() < 1e-12);
        let flat = normalized_slope(&xs, &[2.0; 4]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert!(normalized_slope(&[0.5, 0.5], &[0.0, 1.0]).is_err());
    }

    fn zero_filters(cfg: ModelConfig) -> GraphCliff {
        let mut model = GraphCliff::new(cfg, 1).unwrap();
        for (name, t) in model.params.iter_mut() {
            if name.starts_with("layers.") {
                t.data_mut().fill(0.0);
            }
        }
        model
    }

    #[test]
    fn zero_filters_only_move_the_source() {
        let model = zero_filters(small(ModelConfig::default()));
        let mol = parse_smiles("CCc1ccccc1OC").unwrap();
        let s = hop_sensitivity(&model, &mol, &HopConfig::default()).unwrap();
        assert!((s[0].unwrap() - 1.0).abs() < 1e-9, "{s:?}");
        for k in 1..s.len() {
            assert_eq!(s[k], Some(0.0), "hop {k}");
        }
    }

    #[test]
    fn one_gine_layer_reaches_one_hop() {
        let cfg = ModelConfig {
            layers: 1,
            use_long: false,
            use_gate: false,
            ..small(ModelConfig::default())
        };
        let model = GraphCliff::new(cfg, 2).unwrap();
        let mol = parse_smiles("CCCCCCO").unwrap();
        let s = hop_sensitivity(&model, &mol, &HopConfig::default()).unwrap();
        assert!(s[1].unwrap() > 0.0);
        for k in 2..s.len() {
            assert_eq!(s[k], Some(0.0), "hop {k}");
        }
    }

    #[test]
    fn sensitivity_is_locally_linear() {
        let model = GraphCliff::new(small(ModelConfig::default()), 3).unwrap();
        let mol = parse_smiles("c1ccccc1CC(=O)N").unwrap();
        let cfg = HopConfig {
            eps: 1e-4,
            ..HopConfig::default()
        };
        let full = hop_sensitivity(&model, &mol, &cfg).unwrap();
        let half = hop_sensitivity(&model, &mol, &HopConfig { eps: 5e-5, ..cfg }).unwrap();
        for (a, b) in full.iter().zip(&half) {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a - b).abs() <= 0.01 * a.abs().max(1e-12), "{a} vs {b}");
        }
        assert!(hop_sensitivity(&model, &mol, &HopConfig { eps: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn missing_hops_are_absent() {
        let model = GraphCliff::new(small(ModelConfig::default()), 3).unwrap();
        let s = hop_sensitivity(&model, &parse_smiles("CO").unwrap(), &HopConfig::default()).unwrap();
        assert!(s[0].is_some() && s[1].is_some());
        assert!(s[2..].iter().all(Option::is_none));
    }

    #[test]
    fn gate_scores_are_normalized() {
        let model = GraphCliff::new(small(ModelConfig::default()), 4).unwrap();
        assert_eq!(export_gate_scores(&model, &parse_smiles("C").unwrap(), 0).unwrap(), vec![0.5]);
        let mol = parse_smiles("c1ccncc1C(=O)O").unwrap();
        let a = export_gate_scores(&model, &mol, 1).unwrap();
        assert_eq!(a.len(), mol.num_atoms());
        assert!(a.iter().all(|s| (0.0..=1.0).contains(s)));
        assert_eq!(a, export_gate_scores(&model, &mol, 1).unwrap());
        assert!(export_gate_scores(&model, &mol, 2).is_err());
    }

    #[test]
    fn layer_jacobian_is_finite() {
        let model = GraphCliff::new(small(ModelConfig::default()), 6).unwrap();
        let mol = parse_smiles("CC(C)c1ccccc1").unwrap();
        for l in 0..2 {
            let est = layer_jacobian(&model, &mol, l, &PowerConfig::default()).unwrap();
            assert!(est.value.is_finite() && est.value > 0.0);
        }
    }

    #[test]
    fn long_filter_widens_the_receptive_field() {
        let full = ModelConfig {
            layers: 1,
            cheb_order: 3,
            ..small(ModelConfig::default())
        };
        let short_only = ModelConfig {
            use_long: false,
            use_gate: false,
            ..full
        };
        let mol = parse_smiles("CCCCCCCCO").unwrap();
        let cfg = HopConfig::default();
        let mut model = GraphCliff::new(full, 12).unwrap();
        // Initial α = (1, 0, 0, 0) is the identity; switch on the higher terms.
        model.params.get_mut("layers.0.cheb.alpha").unwrap().data_mut().fill(0.5);
        let a = hop_sensitivity(&model, &mol, &cfg).unwrap();
        let b = hop_sensitivity(&GraphCliff::new(short_only, 12).unwrap(), &mol, &cfg).unwrap();
        // One GINE hop plus three Chebyshev hops.
        assert!(a[4].unwrap() > 0.0 && a[5] == Some(0.0), "{a:?}");
        assert!(b[2] == Some(0.0), "{b:?}");
    }
}
