use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

/// Upper bound on coordinates probed per parameter tensor.
pub const MAX_COORDS_PER_PARAM: usize = 64;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

/// Compares reverse-mode gradients with central finite differences.
///
/// For each parameter tensor at most [`MAX_COORDS_PER_PARAM`] coordinates are
/// sampled; the relative error at a coordinate is
/// `|g_ad − g_fd| / max(|g_ad|, |g_fd|, 1e-8)`.
pub fn grad_check<F>(loss_fn: F, params: &ParamStore<f64>, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss {v} during gradient check")));
        }
        Ok(v)
    };

    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        if !g.scalar(loss).is_finite() {
            return Err(Error::NonFinite("loss during gradient check".into()));
        }
        let grads = g.backward(loss);
        params
            .ids()
            .map(|id| grads.param(id).map_or_else(|| vec![0.0; params.get(id).numel()], <[f64]>::to_vec))
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_err: 0.0, worst: None, coords_checked: 0 };
    for id in params.ids() {
        let n = params.get(id).numel();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_PARAM {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, MAX_COORDS_PER_PARAM).into_vec();
            c.sort_unstable();
            c
        };
        for c in coords {
            let orig = work.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + eps;
            let up = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - eps;
            let down = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = analytic[id.index()][c];
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((params.name(id).to_string(), c));
            }
        }
    }
    Ok(report)
}
