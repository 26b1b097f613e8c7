//! Central finite-difference checking of analytic gradients.

use super::{lit, Graph, NodeId, ParamId, ParamStore, Scalar};
use crate::rng::RngStream;
use crate::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Coordinates sampled per parameter; `None` checks all of them.
    pub coords_per_param: Option<usize>,
    pub seed: u64,
}

impl GradCheckConfig {
    /// 32-bit mode: step 1e-3, tolerance 1e-2.
    pub fn single() -> Self {
        Self {
            step: 1e-3,
            tolerance: 1e-2,
            coords_per_param: Some(16),
            seed: 0,
        }
    }

    /// 64-bit verification mode: step 1e-5, tolerance 1e-5.
    pub fn double() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-5,
            coords_per_param: Some(16),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn eval<T: Scalar, F>(store: &ParamStore<T>, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g)?;
    Ok(g.scalar(loss).to_f64().unwrap_or(f64::NAN))
}

/// Compares the analytic gradient of the scalar built by `f` against
/// central differences for every trainable parameter of `store`.
///
/// `f` must be deterministic: disable dropout or reseed its stream inside
/// the closure.
pub fn grad_check<T: Scalar, F>(store: &mut ParamStore<T>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, T>) -> Result<NodeId>,
{
    let analytic: Vec<(ParamId, Vec<T>)> = {
        let mut g = Graph::new(&*store);
        let loss = f(&mut g)?;
        let grads = g.backward(loss)?;
        store
            .iter()
            .filter(|(_, p)| p.requires_grad)
            .map(|(id, p)| {
                let gr = grads
                    .param(id)
                    .map(|s| s.to_vec())
                    .unwrap_or_else(|| vec![T::zero(); p.value.len()]);
                (id, gr)
            })
            .collect()
    };

    let mut rng = RngStream::new(cfg.seed);
    let h: T = lit(cfg.step);
    let mut entries = Vec::new();
    for (id, grad) in analytic {
        let n = grad.len();
        let coords: Vec<usize> = match cfg.coords_per_param {
            Some(k) if k < n => (0..k).map(|_| rng.index(n)).collect(),
            _ => (0..n).collect(),
        };
        for idx in coords {
            let orig = store.get(id).value[idx];
            store.get_mut(id).value[idx] = orig + h;
            let plus = eval(store, &f)?;
            store.get_mut(id).value[idx] = orig - h;
            let minus = eval(store, &f)?;
            store.get_mut(id).value[idx] = orig;
            // Divide by the step actually taken after rounding.
            let taken = ((orig + h) - (orig - h)).to_f64().unwrap_or(2.0 * cfg.step);
            let numeric = (plus - minus) / taken;
            let a = grad[idx].to_f64().unwrap_or(f64::NAN);
            let rel_error = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            entries.push(GradCheckEntry {
                param: store.get(id).name.clone(),
                index: idx,
                analytic: a,
                numeric,
                rel_error,
            });
        }
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error <= cfg.tolerance && max_rel_error.is_finite(),
        max_rel_error,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_sum_matches_hand_values() {
        let mut s = ParamStore::<f64>::new();
        let x = s.add("x", [2], vec![1.0, 2.0]).unwrap();
        let f = |g: &mut Graph<'_, f64>| {
            let xn = g.param(x);
            let sq = g.pointwise_mul(xn, xn)?;
            g.sum(sq, None)
        };
        let report = grad_check(&mut s, f, &GradCheckConfig::double()).unwrap();
        assert!(report.passed);
        assert!((report.entries[0].analytic - 2.0).abs() < 1e-12);
        assert!((report.entries[1].analytic - 4.0).abs() < 1e-12);
        // Central differences are exact on quadratics up to rounding.
        assert!((report.entries[1].numeric - 4.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let mut s = ParamStore::<f32>::new();
        s.add("x", [3], vec![0.5, 1.0, -1.0]).unwrap();
        let f = |g: &mut Graph<'_, f32>| {
            let c = g.constant([1], vec![3.0])?;
            g.sum(c, None)
        };
        let report = grad_check(&mut s, f, &GradCheckConfig::single()).unwrap();
        assert!(report.passed);
        assert!(report.entries.iter().all(|e| e.analytic == 0.0 && e.numeric == 0.0));
    }
}
