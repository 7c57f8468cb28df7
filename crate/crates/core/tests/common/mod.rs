//! Oracles and fixtures shared by the integration tests and the acceptance
//! binary.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::rc::Rc;

use graphcliff::chem::murcko_scaffold;
use graphcliff::cliff::{CliffConfig, CompoundRecord};
use graphcliff::fingerprint::{ecfp, Fingerprint};
use graphcliff::graphnn::normalized_adjacency;
use graphcliff::tensor::{grad_check_many, GradCheckConfig, GradCheckReport, Result, SparseMatrix, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/moleculeace");

pub fn corpus_file(name: &str) -> String {
    format!("{CORPUS}/{name}.csv")
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so relu and max stay clear of their kinks.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        *v = (0.1 + v.abs()) * if i % 3 == 0 { -1.0 } else { 1.0 } + 0.01 * i as f64;
    }
    t
}

/// Reduces any output to a scalar with fixed non-uniform weights so every
/// output coordinate contributes a distinct gradient.
fn weighted<'t>(out: Var<'t>) -> Result<Var<'t>> {
    let v = out.value();
    let w: Vec<f64> = (0..v.len()).map(|i| 0.3 + 0.7 * ((i * 7919) % 13) as f64 / 13.0).collect();
    let w = out.tape().constant(Tensor::new(v.shape().to_vec(), w)?);
    Ok(out.mul(&w)?.sum())
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize) -> SparseMatrix {
    let bonds: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|_| rng.gen_bool(0.5))
        .collect();
    normalized_adjacency(n, &bonds, true).unwrap()
}

type OpCase = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

/// One primitive with its inputs for a given trial.
fn op_case(name: &str, rng: &mut ChaCha8Rng) -> (OpCase, Vec<Tensor>) {
    let (r, c) = (rng.gen_range(2..5), rng.gen_range(2..5));
    match name {
        "matmul" => {
            let k = rng.gen_range(1..4);
            (
                Box::new(|_, v| weighted(v[0].matmul(&v[1])?)),
                vec![random_tensor(rng, &[r, k]), random_tensor(rng, &[k, c])],
            )
        }
        "add" => (
            Box::new(|_, v| weighted(v[0].add(&v[1])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c])],
        ),
        "sub" => (
            Box::new(|_, v| weighted(v[0].sub(&v[1])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c])],
        ),
        "mul" => (
            Box::new(|_, v| weighted(v[0].mul(&v[1])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, c])],
        ),
        "scale" => (Box::new(|_, v| weighted(v[0].scale(-1.7))), vec![random_tensor(rng, &[r, c])]),
        "add_row" => (
            Box::new(|_, v| weighted(v[0].add_row(&v[1])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[c])],
        ),
        "mul_col" => (
            Box::new(|_, v| weighted(v[0].mul_col(&v[1])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r])],
        ),
        "mul_scalar" => (
            Box::new(|_, v| weighted(v[0].mul_scalar(&v[1])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[1])],
        ),
        "select" => {
            let k = rng.gen_range(0..r);
            (
                Box::new(move |_, v| Ok(v[0].select(k)?.scale(2.5))),
                vec![random_tensor(rng, &[r])],
            )
        }
        "concat" => (
            Box::new(|_, v| weighted(Var::concat(&[v[0], v[1]])?)),
            vec![random_tensor(rng, &[r, c]), random_tensor(rng, &[r, 2])],
        ),
        "slice_cols" => (
            Box::new(move |_, v| weighted(v[0].slice_cols(1, c - 1)?)),
            vec![random_tensor(rng, &[r, c])],
        ),
        "split_cols" => (
            Box::new(|_, v| {
                let parts = v[0].split_cols(&[1, 2, 1])?;
                weighted(parts[0].mul(&parts[2])?.add(&parts[1].slice_cols(0, 1)?)?)
            }),
            vec![random_tensor(rng, &[r, 4])],
        ),
        "gather_rows" => {
            let idx: Rc<[usize]> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
            (
                Box::new(move |_, v| weighted(v[0].gather_rows(idx.clone())?)),
                vec![random_tensor(rng, &[r, c])],
            )
        }
        "scatter_add_rows" => {
            let idx: Rc<[usize]> = (0..r).map(|_| rng.gen_range(0..3)).collect();
            (
                Box::new(move |_, v| weighted(v[0].scatter_add_rows(idx.clone(), 3)?)),
                vec![random_tensor(rng, &[r, c])],
            )
        }
        "spmm" => {
            let adj = Rc::new(random_adjacency(rng, r));
            (
                Box::new(move |_, v| weighted(v[0].spmm(&adj)?)),
                vec![random_tensor(rng, &[r, c])],
            )
        }
        "segment_max" => {
            let mut seg: Vec<usize> = (0..r + 2).map(|i| i * 2 / (r + 2)).collect();
            seg.sort_unstable();
            (
                Box::new(move |_, v| weighted(v[0].segment_max(&seg, 2)?)),
                vec![away_from_zero(rng, &[r + 2, c])],
            )
        }
        "sum" => (Box::new(|_, v| Ok(v[0].sum())), vec![random_tensor(rng, &[r, c])]),
        "mean" => (Box::new(|_, v| Ok(v[0].mean())), vec![random_tensor(rng, &[r, c])]),
        "sum_rows" => (Box::new(|_, v| weighted(v[0].sum_rows())), vec![random_tensor(rng, &[r, c])]),
        "mean_rows" => (Box::new(|_, v| weighted(v[0].mean_rows())), vec![random_tensor(rng, &[r, c])]),
        "relu" => (Box::new(|_, v| weighted(v[0].relu())), vec![away_from_zero(rng, &[r, c])]),
        "tanh" => (Box::new(|_, v| weighted(v[0].tanh())), vec![random_tensor(rng, &[r, c])]),
        "sigmoid" => (Box::new(|_, v| weighted(v[0].sigmoid())), vec![random_tensor(rng, &[r, c])]),
        "layer_norm" => (
            Box::new(|_, v| weighted(v[0].layer_norm(Some(&v[1]), Some(&v[2]), 1e-5)?)),
            vec![random_tensor(rng, &[r, c + 1]), random_tensor(rng, &[c + 1]), random_tensor(rng, &[c + 1])],
        ),
        "mse" => {
            let target = random_tensor(rng, &[r, 1]);
            (Box::new(move |_, v| v[0].mse(&target)), vec![random_tensor(rng, &[r, 1])])
        }
        other => panic!("no gradient case for {other}"),
    }
}

pub const DIFFERENTIABLE_OPS: &[&str] = &[
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "add_row",
    "mul_col",
    "mul_scalar",
    "select",
    "concat",
    "slice_cols",
    "split_cols",
    "gather_rows",
    "scatter_add_rows",
    "spmm",
    "segment_max",
    "sum",
    "mean",
    "sum_rows",
    "mean_rows",
    "relu",
    "tanh",
    "sigmoid",
    "layer_norm",
    "mse",
];

/// Gradient checks of one primitive on `trials` random inputs.
pub fn check_op(name: &str, trials: usize, seed: u64) -> Vec<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| {
            let (f, inputs) = op_case(name, &mut rng);
            grad_check_many(|tape, vars| f(tape, vars), &inputs, GradCheckConfig::default()).unwrap()
        })
        .collect()
}

/// Six compounds: one benzene series with 100-fold and exactly 10-fold
/// steps, an acyclic pair that is similar only by SMILES edit distance, and
/// an unrelated ring.
pub fn hand_set() -> Vec<CompoundRecord> {
    [
        ("NCCc1ccccc1", 6.0),
        ("OCCc1ccccc1", 8.0),
        ("CCCc1ccccc1", 7.0),
        ("CCCCCCCCCCN", 9.0),
        ("CCCCCCCCCCO", 5.0),
        ("O=C(O)C1CCNCC1", 7.5),
    ]
    .iter()
    .enumerate()
    .map(|(i, (s, y))| CompoundRecord::new(i, s, *y).unwrap())
    .collect()
}

fn oracle_tanimoto(a: &Fingerprint, b: &Fingerprint) -> f64 {
    let x: BTreeSet<usize> = a.on_bits().collect();
    let y: BTreeSet<usize> = b.on_bits().collect();
    let union = x.union(&y).count();
    if union == 0 {
        0.0
    } else {
        x.intersection(&y).count() as f64 / union as f64
    }
}

fn oracle_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Brute-force annotation: every pair, every similarity recomputed from
/// scratch. Returns the similar pairs as `(i, j, sub, scaf, smiles, cliff)`
/// and per-compound flags.
pub fn oracle_cliffs(records: &[CompoundRecord], cfg: &CliffConfig) -> (Vec<(usize, usize, f64, f64, f64, bool)>, Vec<bool>) {
    let mut pairs = Vec::new();
    let mut flags = vec![false; records.len()];
    for i in 0..records.len() {
        for j in i + 1..records.len() {
            let (a, b) = (&records[i], &records[j]);
            let sub = oracle_tanimoto(&ecfp(&a.mol, &cfg.fp), &ecfp(&b.mol, &cfg.fp));
            let (sa, sb) = (murcko_scaffold(&a.mol), murcko_scaffold(&b.mol));
            let scaf = if sa.is_empty() || sb.is_empty() {
                0.0
            } else {
                oracle_tanimoto(&ecfp(&sa, &cfg.fp), &ecfp(&sb, &cfg.fp))
            };
            let longest = a.smiles.chars().count().max(b.smiles.chars().count());
            let smi = 1.0 - oracle_edit_distance(&a.smiles, &b.smiles) as f64 / longest as f64;
            if sub > cfg.sim_threshold || scaf > cfg.sim_threshold || smi > cfg.sim_threshold {
                let cliff = (b.pki - a.pki).abs() >= cfg.fold.log10() - 1e-9;
                if cliff {
                    flags[i] = true;
                    flags[j] = true;
                }
                pairs.push((i, j, sub, scaf, smi, cliff));
            }
        }
    }
    (pairs, flags)
}
