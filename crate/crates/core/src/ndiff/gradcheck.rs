//! Central finite-difference verification of reverse-mode gradients.
//!
//! Callers evaluate their backward pass first and store the result in each
//! tensor's gradient buffer (see [`TensorD::accumulate_grad`]); the checker
//! then perturbs one coordinate at a time and compares.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TensorD;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Gradient magnitude below which the error is measured against this
    /// floor instead of the gradient itself.
    pub floor: f64,
    /// Upper bound on coordinates probed per tensor; `None` probes all.
    pub max_probes: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-5,
            max_probes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.max_rel_err <= self.tol)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors.iter().filter(move |t| t.max_rel_err > self.tol)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn probe_indices(t: &TensorD, grad: &[f64], opts: &GradCheckOptions, salt: u64) -> Vec<usize> {
    match opts.max_probes {
        Some(k) if k < t.len() => {
            // always include the largest analytic component
            let top = grad
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut idx: Vec<usize> = sample(&mut rng, t.len(), k).into_iter().collect();
            if !idx.contains(&top) {
                idx[0] = top;
            }
            idx.sort_unstable();
            idx
        }
        _ => (0..t.len()).collect(),
    }
}

/// Compares stored gradients of `params` against central differences of `f`.
///
/// `names` labels each tensor in the report; it must match `params` in length.
pub fn grad_check<F>(f: F, params: &[TensorD], names: &[String], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[TensorD]) -> Result<f64>,
{
    if names.len() != params.len() {
        return Err(Error::Shape(format!(
            "grad_check: {} names for {} tensors",
            names.len(),
            params.len()
        )));
    }
    let base = f(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!(
            "grad_check: objective is {base} at the evaluation point"
        )));
    }
    let mut work: Vec<TensorD> = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (ti, (p, name)) in params.iter().zip(names).enumerate() {
        let grad = p
            .grad()
            .ok_or_else(|| Error::Numeric(format!("grad_check: tensor '{name}' has no gradient")))?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "grad_check: analytic gradient of '{name}' is {} at index {i}",
                grad[i]
            )));
        }
        let mut check = TensorCheck {
            name: name.clone(),
            probes: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst_index: 0,
        };
        for i in probe_indices(p, grad, &opts, ti as u64) {
            let orig = p.values()[i];
            work[ti].values_mut()[i] = orig + opts.step;
            let plus = f(&work)?;
            work[ti].values_mut()[i] = orig - opts.step;
            let minus = f(&work)?;
            work[ti].values_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "grad_check: non-finite objective perturbing '{name}'[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let rel = relative_error(grad[i], numeric, opts.floor);
            let abs = (grad[i] - numeric).abs();
            check.probes += 1;
            check.max_abs_err = check.max_abs_err.max(abs);
            if rel > check.max_rel_err {
                check.max_rel_err = rel;
                check.worst_index = i;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tol: opts.tol, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares(ts: &[TensorD]) -> Result<f64> {
        Ok(ts.iter().flat_map(|t| t.values()).map(|v| v * v).sum())
    }

    fn with_grad(t: TensorD, g: Vec<f64>) -> TensorD {
        let mut t = t.with_requires_grad();
        t.accumulate_grad(&g).unwrap();
        t
    }

    #[test]
    fn sum_of_squares_passes() {
        let t = TensorD::vector(vec![0.5, -1.5, 2.0, 0.0]);
        let g = t.values().iter().map(|v| 2.0 * v).collect();
        let t = with_grad(t, g);
        let r = grad_check(sum_of_squares, &[t], &["theta".into()], GradCheckOptions::default()).unwrap();
        assert!(r.passed());
        assert!(r.tensors[0].max_abs_err < 1e-8);
    }

    #[test]
    fn doubled_gradient_is_reported() {
        let t = TensorD::vector(vec![0.5, -1.5, 2.0]);
        let g = t.values().iter().map(|v| 4.0 * v).collect();
        let t = with_grad(t, g);
        let r = grad_check(sum_of_squares, &[t], &["theta".into()], GradCheckOptions::default()).unwrap();
        assert!(!r.passed());
        assert!(r.max_rel_err() > 0.4);
        assert_eq!(r.failures().count(), 1);
    }

    #[test]
    fn missing_gradient_is_numeric_error() {
        let t = TensorD::vector(vec![1.0]);
        let err = grad_check(sum_of_squares, &[t], &["x".into()], GradCheckOptions::default());
        assert!(matches!(err, Err(Error::Numeric(_))));
    }

    #[test]
    fn non_finite_objective_is_located() {
        // ln(x) at x = 5e-6: the downward probe leaves the domain
        let t = with_grad(TensorD::vector(vec![5e-6]), vec![2e5]);
        let f = |ts: &[TensorD]| Ok(ts[0].values()[0].ln());
        let err = grad_check(f, &[t], &["x".into()], GradCheckOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert!(err.to_string().contains("'x'[0]"));
    }

    #[test]
    fn probe_budget_is_respected() {
        let t = TensorD::from_fn(&[50], |i| i as f64 * 0.01);
        let g = t.values().iter().map(|v| 2.0 * v).collect();
        let t = with_grad(t, g);
        let opts = GradCheckOptions {
            max_probes: Some(7),
            ..Default::default()
        };
        let r = grad_check(sum_of_squares, &[t], &["x".into()], opts).unwrap();
        assert_eq!(r.tensors[0].probes, 7);
        assert!(r.passed());
    }
}
