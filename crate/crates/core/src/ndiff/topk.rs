use crate::error::{Error, Result};

/// Indices of the `k` largest scores, ties going to the smaller index,
/// returned in ascending index order.
pub fn topk_select(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k < 1 || k > scores.len() {
        return Err(Error::InvalidArgument(format!(
            "top-k with k = {k} over {} scores",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}
