use super::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub rtol: f64,
    /// Absolute slack for gradients that are numerically zero.
    pub atol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            rtol: 1e-4,
            atol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub passed: bool,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|)` over the
    /// compared coordinates whose error exceeded `atol`.
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose ±step perturbation crossed a non-differentiable
    /// point (relu sign, max/top-k selection) and were not compared.
    pub skipped: usize,
    /// `(input, coordinate)` of the worst mismatch.
    pub worst: Option<(usize, usize)>,
}

/// Compares the reverse-mode gradient of scalar `f` at `x` with central
/// finite differences, coordinate by coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), cfg)
}

/// [`grad_check`] over several inputs at once.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<(f64, u64)> {
        let tape = Tape::with_decision_tracking();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let y = f(&tape, &vars)?;
        let v = y.value();
        if v.len() != 1 {
            return Err(TensorError::NotScalar(v.shape().to_vec()));
        }
        Ok((v.item(), tape.decision_fingerprint()))
    };

    let tape = Tape::with_decision_tracking();
    let vars: Vec<Var<'_>> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let y = f(&tape, &vars)?;
    if !y.value().is_finite() {
        return Err(TensorError::NonFinite("function value".into()));
    }
    let base_decisions = tape.decision_fingerprint();
    tape.backward(y)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| tape.grad(*v).unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();

    let mut report = GradCheckReport {
        passed: true,
        max_rel_err: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[which].data_mut()[i] = orig + cfg.step;
            let (fp, dp) = eval(&work)?;
            work[which].data_mut()[i] = orig - cfg.step;
            let (fm, dm) = eval(&work)?;
            work[which].data_mut()[i] = orig;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(TensorError::NonFinite(format!("input {which} coordinate {i}")));
            }
            if dp != base_decisions || dm != base_decisions {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[which].data()[i];
            if !a.is_finite() {
                return Err(TensorError::NonFinite(format!("gradient of input {which} coordinate {i}")));
            }
            let diff = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            if diff > cfg.atol {
                let rel = diff / scale;
                if rel > report.max_rel_err {
                    report.max_rel_err = rel;
                    report.worst = Some((which, i));
                }
                if diff > cfg.rtol * scale + cfg.atol {
                    report.passed = false;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::rc::Rc;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    fn assert_pass(r: GradCheckReport) {
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 0, "{r:?}");
    }

    #[test]
    fn sigmoid_sum_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[8]);
        let r = grad_check(|_, x| Ok(x.sigmoid().sum()), &x, GradCheckConfig::default()).unwrap();
        assert_pass(r);
    }

    #[test]
    fn relu_kink_is_excluded() {
        let x = Tensor::vector(vec![0.0, 1.0, -2.0, 0.5]);
        let r = grad_check(|_, x| Ok(x.relu().sum()), &x, GradCheckConfig::default()).unwrap();
        assert!(r.passed);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn layer_norm_square_sum_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs = vec![random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])];
        let r = grad_check_many(
            |_, v| {
                let y = v[0].layer_norm(Some(&v[1]), Some(&v[2]), 1e-5)?;
                Ok(y.mul(&y)?.sum())
            },
            &inputs,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_pass(r);
    }

    #[test]
    fn mse_of_linear_map_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, &[4, 3]);
        let x = random(&mut rng, &[5, 4]);
        let y = random(&mut rng, &[5, 3]);
        let r = grad_check(
            move |t, w| t.constant(x.clone()).matmul(&w)?.mse(&y),
            &w,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert_pass(r);
    }

    #[test]
    fn detects_wrong_gradient() {
        // Cutting the tape with a constant hides the dependence from backward.
        let x = Tensor::vector(vec![0.3, -0.7]);
        let r = grad_check(
            |t, x| {
                let frozen = t.constant((*x.value()).clone());
                Ok(frozen.mul(&x)?.sum())
            },
            &x,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn non_finite_is_an_error() {
        let x = Tensor::vector(vec![f64::NAN]);
        assert!(matches!(
            grad_check(|_, x| Ok(x.sum()), &x, GradCheckConfig::default()),
            Err(TensorError::NonFinite(_))
        ));
    }

    #[test]
    fn scatter_is_adjoint_of_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let x = random(&mut rng, &[6, 3]);
            let idx: Rc<[usize]> = (0..9).map(|_| rng.gen_range(0..6)).collect::<Vec<_>>().into();
            let v = random(&mut rng, &[9, 3]);
            let t = Tape::new();
            let gx = t.constant(x.clone()).gather_rows(Rc::clone(&idx)).unwrap().value();
            let sv = t.constant(v.clone()).scatter_add_rows(idx, 6).unwrap().value();
            assert!((gx.dot(&v) - x.dot(&sv)).abs() < 1e-12);
        }
    }
}
