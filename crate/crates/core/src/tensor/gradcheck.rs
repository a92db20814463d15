use rand::seq::index;

use super::graph::{Graph, Mode, Var};
use super::params::{ParamId, ParamStore};
use super::rng::{self, Stream};
use super::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    /// Above this many trainable scalars, a random subset of this size is checked.
    pub max_elements: usize,
    /// Denominator floor: errors on near-zero gradients are measured in
    /// absolute terms relative to this magnitude.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            max_elements: 1000,
            floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// differences, element by element.
///
/// The relative error of one element is `|a - n| / max(|a|, |n|, floor)`.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph) -> Result<Var>,
{
    let grads = {
        let mut g = Graph::new(store, Mode::Eval);
        let loss = f(&mut g)?;
        g.backward(loss)?
    };

    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable())
        .flat_map(|(id, p)| (0..p.tensor().numel()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = if coords.len() > opts.max_elements {
        let mut rng = rng::stream(opts.seed, Stream::GradCheck);
        index::sample(&mut rng, coords.len(), opts.max_elements)
            .into_iter()
            .map(|i| coords[i])
            .collect()
    } else {
        coords
    };

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store, Mode::Eval);
        let loss = f(&mut g)?;
        g.value(loss).item()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: chosen.len(),
    };
    for (id, i) in chosen {
        let orig = store.get(id).tensor().data()[i];
        store.get_mut(id).tensor_mut().data_mut()[i] = orig + opts.step;
        let plus = eval(store)?;
        store.get_mut(id).tensor_mut().data_mut()[i] = orig - opts.step;
        let minus = eval(store)?;
        store.get_mut(id).tensor_mut().data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * opts.step);
        // parameters never bound in the graph have zero gradient
        let analytic = grads.get(id).map_or(0.0, |g| g[i]);
        let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
        let err = (analytic - numeric).abs() / denom;
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = err;
            report.worst_param = store.get(id).name().to_string();
            report.worst_index = i;
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
