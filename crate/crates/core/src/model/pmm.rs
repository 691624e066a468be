//! Path matching: gate every historical path against the current one, keep
//! the best `k2`, then gate their clicks against the candidate.

use super::network::Dbpman;
use crate::error::{Error, Result};
use crate::ndiff::{Graph, Tensor};

/// Rank the first `valid` gates (higher first, later path first on ties)
/// and return `k2` slots; slots beyond the valid paths are `None`.
pub fn rank_paths(gates: &[f64], valid: usize, k2: usize) -> Vec<Option<usize>> {
    let valid = valid.min(gates.len());
    let mut order: Vec<usize> = (0..valid).collect();
    order.sort_by(|&a, &b| gates[b].total_cmp(&gates[a]).then(b.cmp(&a)));
    let mut out: Vec<Option<usize>> = order.into_iter().take(k2).map(Some).collect();
    out.resize(k2, None);
    out
}

/// Selection result of [`pmm_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathSelection {
    /// `k2` blocks of `gate · path`, zero blocks for empty slots.
    pub matched_paths: Vec<f64>,
    /// The anchor clicks of the chosen paths, zero vectors for empty slots.
    pub clicks: Vec<Vec<f64>>,
    pub chosen: Vec<Option<usize>>,
}

/// Choose the `k2` best-gated valid paths and scale them by their gates.
pub fn pmm_select(
    gates: &[f64],
    paths: &[Vec<f64>],
    clicks: &[Vec<f64>],
    k2: usize,
    valid_count: usize,
) -> Result<PathSelection> {
    let t = gates.len();
    if k2 > t {
        return Err(Error::InvalidArgument(format!("k2 = {k2} exceeds t = {t}")));
    }
    if paths.len() != t || clicks.len() != t {
        return Err(Error::shape("pmm_select", "gates, paths and clicks must have t entries"));
    }
    let chosen = rank_paths(gates, valid_count, k2);
    let pd = paths.first().map_or(0, Vec::len);
    let d = clicks.first().map_or(0, Vec::len);
    let mut matched_paths = Vec::with_capacity(k2 * pd);
    let mut picked = Vec::with_capacity(k2);
    for slot in &chosen {
        match *slot {
            Some(i) => {
                matched_paths.extend(paths[i].iter().map(|x| gates[i] * x));
                picked.push(clicks[i].clone());
            }
            None => {
                matched_paths.extend(std::iter::repeat_n(0.0, pd));
                picked.push(vec![0.0; d]);
            }
        }
    }
    Ok(PathSelection {
        matched_paths,
        clicks: picked,
        chosen,
    })
}

/// Similarity gate between the enhanced current path and one historical path.
pub fn pmm_gate(model: &Dbpman, current: &[f64], path: &[f64]) -> Result<f64> {
    let pd = model.config.path_dim();
    if current.len() != pd || path.len() != pd {
        return Err(Error::shape("pmm_gate", format!("inputs must have {pd} values")));
    }
    let mut g = Graph::new(&model.store);
    let a = g.constant(Tensor::row(current.to_vec()));
    let b = g.constant(Tensor::row(path.to_vec()));
    let prod = g.mul(a, b)?;
    let input = g.concat_cols(&[a, b, prod])?;
    let out = model.path_gate.forward(&mut g, input)?;
    Ok(g.value(out).item())
}

/// Gate each chosen click against the candidate and concatenate the gated
/// clicks, `k2·d` values.
pub fn candidate_activation(model: &Dbpman, candidate: &[f64], clicks: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = model.config.d;
    if candidate.len() != d || clicks.iter().any(|c| c.len() != d) || clicks.is_empty() {
        return Err(Error::shape("candidate_activation", format!("vectors must have {d} values")));
    }
    let k = clicks.len();
    let mut g = Graph::new(&model.store);
    let cand = g.constant(Tensor::row(candidate.to_vec()));
    let cand = g.repeat_rows(cand, k);
    let sc = g.constant(Tensor::matrix(k, d, clicks.concat())?);
    let prod = g.mul(cand, sc)?;
    let input = g.concat_cols(&[cand, sc, prod])?;
    let gates = model.click_gate.forward(&mut g, input)?;
    let out = g.scale_blocks(sc, gates)?;
    Ok(g.value(out).data().to_vec())
}
