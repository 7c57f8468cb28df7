//! Training loop, metrics, checkpoints and warm starts.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cliff::{CompoundRecord, Split};
use crate::graphnn::{featurize, GraphBatch, GraphCliff, ModelConfig, MolGraph, ParamStore, FEATURE_SPEC_VERSION};
use crate::tensor::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Share of the training split held out for model selection. With 0 the
    /// training RMSE drives selection.
    pub val_frac: f64,
    /// Epochs without improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    /// Global gradient-norm clip; `None` disables.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            val_frac: 0.1,
            patience: Some(30),
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("learning rate and adam eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..0.5).contains(&self.val_frac) {
            return Err(Error::Config(format!("val_frac {} outside [0, 0.5)", self.val_frac)));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be positive".into()));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update; `grads` follows the store's order.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.dot(g)).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub feature_spec_version: u32,
    pub model: ModelConfig,
    pub seed: u64,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept; `None` for an untrained model.
    pub best_epoch: Option<usize>,
    pub arrays: Vec<ArrayInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParamStore,
}

const MAGIC: &[u8; 8] = b"GCLFCKPT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(model: &GraphCliff, seed: u64, history: Vec<EpochStats>, best_epoch: Option<usize>) -> Self {
        let arrays = model
            .params
            .iter()
            .map(|(name, t)| ArrayInfo {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        Checkpoint {
            manifest: Manifest {
                format_version: CHECKPOINT_FORMAT_VERSION,
                feature_spec_version: FEATURE_SPEC_VERSION,
                model: model.config,
                seed,
                history,
                best_epoch,
                arrays,
            },
            params: model.params.clone(),
        }
    }

    pub fn model(&self) -> Result<GraphCliff> {
        GraphCliff::from_parts(self.manifest.model, self.params.clone())
    }

    /// Layout: magic, `u64` manifest length, JSON manifest, then for every
    /// array in manifest order a `u64` element count followed by that many
    /// little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        w.write_all(MAGIC)?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for info in &self.manifest.arrays {
            let t = self
                .params
                .get(&info.name)
                .ok_or_else(|| Error::Checkpoint(format!("array '{}' missing from parameters", info.name)))?;
            w.write_all(&(t.len() as u64).to_le_bytes())?;
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::Checkpoint(format!("truncated file while reading {what}")));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8, "header")? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let read_u64 = |s: &[u8]| u64::from_le_bytes(s.try_into().expect("8 bytes"));
        let len = read_u64(take(8, "manifest length")?) as usize;
        let manifest: Manifest = serde_json::from_slice(take(len, "manifest")?)?;
        if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        if manifest.feature_spec_version != FEATURE_SPEC_VERSION {
            return Err(Error::Checkpoint(format!(
                "feature layout version {} does not match this build ({FEATURE_SPEC_VERSION})",
                manifest.feature_spec_version
            )));
        }
        let mut params = ParamStore::new();
        for info in &manifest.arrays {
            let count = read_u64(take(8, &format!("length of '{}'", info.name))?) as usize;
            let expected: usize = info.shape.iter().product();
            if count != expected {
                return Err(Error::Checkpoint(format!(
                    "array '{}' holds {count} values but its shape {:?} needs {expected}",
                    info.name, info.shape
                )));
            }
            let raw = take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?, &info.name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(info.name.clone(), Tensor::new(info.shape.clone(), data)?);
        }
        if pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after the last array listed in the manifest",
                bytes.len() - pos
            )));
        }
        Ok(Checkpoint { manifest, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Copies arrays whose names exist in `model` from `source`. A matching name
/// with a different shape is an error; arrays the model lacks are skipped
/// with a warning. Returns the names that were loaded.
pub fn warm_start(model: &mut GraphCliff, source: &ParamStore) -> Result<Vec<String>> {
    let mut loaded = Vec::new();
    for (name, t) in source.iter() {
        match model.params.get_mut(name) {
            Some(dst) if dst.shape() == t.shape() => {
                *dst = t.clone();
                loaded.push(name.to_string());
            }
            Some(dst) => {
                return Err(Error::Checkpoint(format!(
                    "warm start: '{name}' has shape {:?} in the checkpoint but {:?} in the model",
                    t.shape(),
                    dst.shape()
                )))
            }
            None => log::warn!("warm start: ignoring array '{name}' not used by this model"),
        }
    }
    Ok(loaded)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
}

fn root_mean_square(errs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = errs.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Predictions for pre-featurized graphs, batched and evaluated in parallel.
pub fn predict_graphs(model: &GraphCliff, graphs: &[MolGraph], batch_size: usize) -> Result<Vec<f64>> {
    let chunks: Vec<&[MolGraph]> = graphs.chunks(batch_size.max(1)).collect();
    let parts: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|chunk| {
            let refs: Vec<&MolGraph> = chunk.iter().collect();
            let batch = GraphBatch::from_graphs(&refs, model.config.self_loops)?;
            model.predict(&batch)
        })
        .collect::<Result<_>>()?;
    Ok(parts.concat())
}

pub fn predict(model: &GraphCliff, records: &[CompoundRecord]) -> Result<Vec<f64>> {
    let graphs: Vec<MolGraph> = records.iter().map(|r| featurize(&r.mol)).collect();
    predict_graphs(model, &graphs, 64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// `None` when no record is flagged as a cliff.
    pub rmse_cliff: Option<f64>,
    pub n: usize,
    pub n_cliff: usize,
}

/// RMSE over all records and over the cliff-flagged subset.
pub fn metrics(predictions: &[f64], records: &[CompoundRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Data("cannot evaluate an empty record set".into()));
    }
    if predictions.len() != records.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let errs = || predictions.iter().zip(records).map(|(p, r)| p - r.pki);
    let cliff_errs = || predictions.iter().zip(records).filter(|(_, r)| r.is_cliff()).map(|(p, r)| p - r.pki);
    Ok(Metrics {
        rmse: root_mean_square(errs()).expect("non-empty"),
        rmse_cliff: root_mean_square(cliff_errs()),
        n: records.len(),
        n_cliff: records.iter().filter(|r| r.is_cliff()).count(),
    })
}

pub fn evaluate(model: &GraphCliff, records: &[CompoundRecord]) -> Result<Metrics> {
    if records.is_empty() {
        return Err(Error::Data("cannot evaluate an empty record set".into()));
    }
    metrics(&predict(model, records)?, records)
}

fn rmse_on(model: &GraphCliff, graphs: &[MolGraph], labels: &[f64]) -> Result<f64> {
    let pred = predict_graphs(model, graphs, 64)?;
    Ok(root_mean_square(pred.iter().zip(labels).map(|(p, y)| p - y)).unwrap_or(0.0))
}

/// One optimizer step on a batch; returns the batch loss.
fn train_step(
    model: &mut GraphCliff,
    adam: &mut Adam,
    graphs: &[&MolGraph],
    labels: &[f64],
    grad_clip: Option<f64>,
) -> Result<f64> {
    let batch = GraphBatch::from_graphs(graphs, model.config.self_loops)?;
    let target = Tensor::matrix(labels.len(), 1, labels.to_vec())?;
    let tape = Tape::new();
    let vars = model.params.attach(&tape);
    let out = model.forward(&tape, &vars, &batch)?;
    let loss = out.predictions.mse(&target)?;
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(Error::NumericAbort(format!("loss became {value}")));
    }
    tape.backward(loss)?;
    let mut grads = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        let g = tape.grad(vars.get(name)?).unwrap_or_else(|| Tensor::zeros(t.shape()));
        if !g.is_finite() {
            return Err(Error::NumericAbort(format!("non-finite gradient for '{name}'")));
        }
        grads.push(g);
    }
    if let Some(c) = grad_clip {
        clip_global_norm(&mut grads, c);
    }
    adam.step(&mut model.params, &grads);
    Ok(value)
}

/// Trains on every record not labelled `test`. A seeded shuffle carves the
/// validation share out of those; the parameters with the lowest
/// validation RMSE (training RMSE when there is no validation set) are kept.
pub fn train_model(
    records: &[CompoundRecord],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    warm: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = GraphCliff::new(*model_cfg, cfg.seed)?;
    if let Some(ck) = warm {
        let loaded = warm_start(&mut model, &ck.params)?;
        log::info!("warm start loaded {} of {} arrays", loaded.len(), model.params.len());
    }

    let mut pool: Vec<&CompoundRecord> = records.iter().filter(|r| r.split != Some(Split::Test)).collect();
    if pool.is_empty() {
        return Err(Error::Data("no training records".into()));
    }
    pool.shuffle(&mut rng);
    let n_val = (cfg.val_frac * pool.len() as f64).round() as usize;
    let (val, train) = pool.split_at(n_val.min(pool.len() - 1));
    let train_graphs: Vec<MolGraph> = train.iter().map(|r| featurize(&r.mol)).collect();
    let train_y: Vec<f64> = train.iter().map(|r| r.pki).collect();
    let val_graphs: Vec<MolGraph> = val.iter().map(|r| featurize(&r.mol)).collect();
    let val_y: Vec<f64> = val.iter().map(|r| r.pki).collect();

    let mut adam = Adam::new(&model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let graphs: Vec<&MolGraph> = chunk.iter().map(|&i| &train_graphs[i]).collect();
            let labels: Vec<f64> = chunk.iter().map(|&i| train_y[i]).collect();
            train_step(&mut model, &mut adam, &graphs, &labels, cfg.grad_clip)
                .map_err(|e| match e {
                    Error::NumericAbort(msg) => Error::NumericAbort(format!("epoch {epoch}: {msg}")),
                    other => other,
                })?;
        }
        let train_rmse = rmse_on(&model, &train_graphs, &train_y)?;
        let val_rmse = if val.is_empty() {
            None
        } else {
            Some(rmse_on(&model, &val_graphs, &val_y)?)
        };
        if !train_rmse.is_finite() {
            return Err(Error::NumericAbort(format!("epoch {epoch}: training RMSE is {train_rmse}")));
        }
        log::info!("epoch {epoch}: train rmse {train_rmse:.4}, val rmse {val_rmse:?}");
        history.push(EpochStats {
            epoch,
            train_rmse,
            val_rmse,
        });
        let monitored = val_rmse.unwrap_or(train_rmse);
        if best.as_ref().map_or(true, |(b, _, _)| monitored < *b) {
            best = Some((monitored, epoch, model.params.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.1);
        if let Some(p) = cfg.patience {
            if epoch - best_epoch >= p {
                log::info!("stopping early at epoch {epoch}; best epoch {best_epoch}");
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(&model, cfg.seed, history.clone(), best_epoch),
        history,
    })
}

/// Writes `epoch,train_rmse,val_rmse` rows; a missing validation value is an
/// empty field.
pub fn write_history_csv(history: &[EpochStats], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_rmse", "val_rmse"])?;
    for h in history {
        out.write_record([
            h.epoch.to_string(),
            crate::format_float(h.train_rmse),
            h.val_rmse.map(crate::format_float).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Molecules with a label that is a fixed function of their graph:
/// `0.3 · aromatic atoms + 0.1 · ring atoms`. Picks `n` evenly spaced
/// compounds from `pool`, all assigned to the training split.
pub fn synthetic_task(pool: &[CompoundRecord], n: usize) -> Result<Vec<CompoundRecord>> {
    if n == 0 || n > pool.len() {
        return Err(Error::Data(format!("cannot pick {n} molecules from {}", pool.len())));
    }
    Ok((0..n)
        .map(|k| {
            let src = &pool[k * pool.len() / n];
            let mut r = src.clone();
            r.id = k;
            r.pki = synthetic_label(&r);
            r.cliff = None;
            r.split = Some(Split::Train);
            r
        })
        .collect())
}

pub fn synthetic_label(r: &CompoundRecord) -> f64 {
    0.3 * r.mol.aromatic_atom_count() as f64 + 0.1 * r.mol.ring_atom_count() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            layers: 2,
            ..ModelConfig::default()
        }
    }

    fn records() -> Vec<CompoundRecord> {
        ["CCO", "c1ccccc1", "CCN", "c1ccncc1C", "CC(=O)O", "C1CCCCC1"]
            .iter()
            .enumerate()
            .map(|(i, s)| CompoundRecord::new(i, s, i as f64 * 0.5).unwrap())
            .collect()
    }

    #[test]
    fn adam_descends_on_a_bowl() {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::vector(vec![1.0; 4]));
        for lr in [1e-3, 1e-2, 1e-1] {
            let mut q = p.clone();
            let mut adam = Adam::new(&q, lr, 0.9, 0.999, 1e-8);
            let before = q.get("w").unwrap().dot(q.get("w").unwrap());
            let grad = q.get("w").unwrap().map(|x| 2.0 * x);
            adam.step(&mut q, &[grad]);
            let after = q.get("w").unwrap().dot(q.get("w").unwrap());
            assert!(after < before, "lr {lr}");
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let out = train_model(&records(), &cfg, &tiny_model(), None).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.checkpoint.params, GraphCliff::new(tiny_model(), 5).unwrap().params);
        assert_eq!(out.checkpoint.manifest.best_epoch, None);
    }

    #[test]
    fn same_seed_same_history() {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 11,
            val_frac: 0.2,
            ..TrainConfig::default()
        };
        let a = train_model(&records(), &cfg, &tiny_model(), None).unwrap();
        let b = train_model(&records(), &cfg, &tiny_model(), None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        assert!(a.history.iter().all(|h| h.val_rmse.is_some()));
    }

    #[test]
    fn perfect_and_hand_metrics() {
        let mut recs = records();
        let y: Vec<f64> = recs.iter().map(|r| r.pki).collect();
        recs[0].cliff = Some(true);
        let m = metrics(&y, &recs).unwrap();
        assert_eq!((m.rmse, m.rmse_cliff), (0.0, Some(0.0)));

        let mut two = records()[..2].to_vec();
        two[0].pki = 1.0;
        two[1].pki = 1.0;
        let m = metrics(&[0.0, 2.0], &two).unwrap();
        assert_eq!(m.rmse, 1.0);
        assert_eq!(m.rmse_cliff, None);
        assert!(metrics(&[], &[]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let model = GraphCliff::new(tiny_model(), 3).unwrap();
        let hist = vec![EpochStats {
            epoch: 1,
            train_rmse: 0.1 + 0.2,
            val_rmse: None,
        }];
        let ck = Checkpoint::new(&model, 3, hist, Some(1));
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        for ((_, a), (_, b)) in back.params.iter().zip(ck.params.iter()) {
            let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn checkpoint_errors() {
        let model = GraphCliff::new(tiny_model(), 3).unwrap();
        let mut ck = Checkpoint::new(&model, 3, vec![], None);
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(Checkpoint::from_bytes(&extra).is_err());

        ck.manifest.feature_spec_version += 1;
        let mut bad = Vec::new();
        ck.write_to(&mut bad).unwrap();
        let err = Checkpoint::from_bytes(&bad).unwrap_err();
        assert!(err.to_string().contains("feature layout version"));
    }

    #[test]
    fn warm_start_policy() {
        let small = GraphCliff::new(tiny_model(), 1).unwrap();
        let mut target = GraphCliff::new(tiny_model().short_only(), 2).unwrap();
        let loaded = warm_start(&mut target, &small.params).unwrap();
        assert!(!loaded.iter().any(|n| n.contains("cheb")));
        assert_eq!(target.params.get("encoder.weight"), small.params.get("encoder.weight"));

        let wide = GraphCliff::new(
            ModelConfig {
                hidden: 4,
                ..tiny_model()
            },
            1,
        )
        .unwrap();
        let mut t2 = GraphCliff::new(tiny_model(), 2).unwrap();
        assert!(warm_start(&mut t2, &wide.params).is_err());
    }

    #[test]
    fn clipping_scales_to_the_bound() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn history_csv_layout() {
        let h = [
            EpochStats {
                epoch: 1,
                train_rmse: 0.5,
                val_rmse: Some(0.25),
            },
            EpochStats {
                epoch: 2,
                train_rmse: 0.5,
                val_rmse: None,
            },
        ];
        let mut out = Vec::new();
        write_history_csv(&h, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "epoch,train_rmse,val_rmse\n1,5.0000000000000000e-1,2.5000000000000000e-1\n2,5.0000000000000000e-1,\n"
        );
    }

    #[test]
    fn synthetic_labels_follow_formula() {
        let recs = records();
        let task = synthetic_task(&recs, 3).unwrap();
        assert_eq!(task.len(), 3);
        // benzene: 6 aromatic, 6 ring atoms
        let benzene = CompoundRecord::new(0, "c1ccccc1", 0.0).unwrap();
        assert!((synthetic_label(&benzene) - 2.4).abs() < 1e-12);
        assert!(synthetic_task(&recs, 7).is_err());
    }
}
