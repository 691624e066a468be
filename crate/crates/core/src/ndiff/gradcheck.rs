use rayon::prelude::*;

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Floor on the denominator of the relative error.
pub const REL_ERROR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn eval<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(store);
    let out = f(&mut g)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::shape("grad_check", "objective must be scalar"));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite("grad_check objective"));
    }
    Ok(v)
}

/// Derivative of `f` at 0 by Richardson extrapolation of central
/// differences (Ridders' method), starting at step `h` and shrinking it by
/// 1.4 per round. Returns the estimate with the smallest internal error.
pub fn ridders<F>(mut f: F, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    const SHRINK: f64 = 1.4;
    const ROUNDS: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let mut table = [[0.0f64; ROUNDS]; ROUNDS];
    let mut step = h;
    table[0][0] = (f(step)? - f(-step)?) / (2.0 * step);
    let mut best = table[0][0];
    let mut err = f64::INFINITY;
    for i in 1..ROUNDS {
        step /= SHRINK;
        table[0][i] = (f(step)? - f(-step)?) / (2.0 * step);
        let mut fac = shrink2;
        for j in 1..=i {
            table[j][i] = (table[j - 1][i] * fac - table[j - 1][i - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (table[j][i] - table[j - 1][i])
                .abs()
                .max((table[j][i] - table[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = table[j][i];
            }
        }
        if (table[i][i] - table[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    Ok(best)
}

/// Compare reverse-mode gradients of the scalar built by `f` with central
/// differences over every coordinate of `params` (all parameters when
/// empty). Each numeric derivative is a [`ridders`] extrapolation from
/// initial step `eps`.
pub fn grad_check<F>(store: &ParamStore, params: &[ParamId], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId> + Sync,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        if !g.value(out).item().is_finite() {
            return Err(Error::NonFinite("grad_check objective"));
        }
        g.backward(out)?
    };
    let ids: Vec<ParamId> = if params.is_empty() {
        store.ids().collect()
    } else {
        params.to_vec()
    };
    let coords: Vec<(ParamId, usize)> = ids
        .iter()
        .flat_map(|&id| (0..store.get(id).len()).map(move |i| (id, i)))
        .collect();

    let chunk = coords.len().div_ceil(rayon::current_num_threads().max(1) * 4).max(1);
    let results: Vec<Result<Vec<(f64, ParamId, usize)>>> = coords
        .par_chunks(chunk)
        .map(|part| {
            let mut local = store.clone();
            part.iter()
                .map(|&(id, i)| {
                    let orig = local.get(id).data()[i];
                    let numeric = ridders(
                        |h| {
                            local.get_mut(id).data_mut()[i] = orig + h;
                            eval(&local, &f)
                        },
                        eps,
                    );
                    local.get_mut(id).data_mut()[i] = orig;
                    let numeric = numeric?;
                    let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
                    Ok((relative_error(a, numeric), id, i))
                })
                .collect()
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: coords.len(),
    };
    for part in results {
        for (err, id, i) in part? {
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
