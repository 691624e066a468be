use crate::error::{Error, Result};
use crate::ndiff::log_loss_value;

/// Mean negative log-likelihood plus `λ ·` the contrastive term when one
/// is given. Pass `None` to drop the contrastive term entirely.
pub fn total_loss(preds: &[f64], labels: &[f64], contrastive: Option<f64>, lambda: f64) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::shape("total_loss", "predictions and labels must match and be non-empty"));
    }
    if preds.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("total_loss predictions"));
    }
    let main = log_loss_value(preds, labels);
    Ok(main + contrastive.map_or(0.0, |c| lambda * c))
}
