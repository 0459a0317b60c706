//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::Model;
use crate::params::{Grads, Role};
use crate::Result;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    pub role: Role,
    pub checked: usize,
    pub max_rel: f64,
}

/// Relative error with a floor on the denominator so that gradients that
/// are both essentially zero compare equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Compares `loss`'s analytic gradient with central differences at up to
/// `coords` random coordinates of every trainable tensor.
pub fn check<F>(model: &mut Model<f64>, coords: usize, eps: f64, seed: u64, loss: F) -> Result<Vec<GradReport>>
where
    F: Fn(&Model<f64>, Option<&mut Grads<f64>>) -> Result<f64>,
{
    let mut grads = model.new_grads();
    loss(model, Some(&mut grads))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.store.ids().collect();
    let mut reports = Vec::new();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let g = g.to_vec();
        let n = g.len();
        let picks = sample(&mut rng, n, coords.min(n));
        let mut max_rel = 0.0f64;
        for k in picks.iter() {
            let orig = model.store.value(id).data()[k];
            model.store.value_mut(id).data_mut()[k] = orig + eps;
            let up = loss(model, None)?;
            model.store.value_mut(id).data_mut()[k] = orig - eps;
            let down = loss(model, None)?;
            model.store.value_mut(id).data_mut()[k] = orig;
            max_rel = max_rel.max(relative_error(g[k], (up - down) / (2.0 * eps)));
        }
        let p = model.store.param(id);
        reports.push(GradReport {
            name: p.name.clone(),
            role: p.role,
            checked: picks.len(),
            max_rel,
        });
    }
    Ok(reports)
}
