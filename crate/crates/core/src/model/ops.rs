//! Single-example forms of the network's building blocks, operating on
//! plain vectors. Training uses the batched graph code in
//! [`network`](super::network); these exist for inspection and testing.

use super::example::{EncodedExample, EventRows, TrainingExample};
use super::network::{Dbpman, ForwardTrace};
use crate::behavior::BehaviorEvent;
use crate::error::{Error, Result};
use crate::ndiff::{Graph, Tensor};

/// Sum of the item, category, behavior-type, time and position embeddings.
pub fn embed_behavior(model: &Dbpman, event: &BehaviorEvent) -> Result<Vec<f64>> {
    let rows = EventRows::of(event, &model.config.vocab);
    Ok(model.embed_values(&[rows])?.into_data())
}

/// Enhance one path given its `l` behavior embeddings and the anchor
/// embedding. Returns `k1·d` values.
pub fn pem_enhance(model: &Dbpman, path: &[Vec<f64>], anchor: &[f64]) -> Result<Vec<f64>> {
    let (l, d) = (model.config.l, model.config.d);
    if path.len() != l || path.iter().any(|e| e.len() != d) || anchor.len() != d {
        return Err(Error::shape("pem_enhance", format!("expected {l} × {d} path and {d} anchor")));
    }
    let mut g = Graph::new(&model.store);
    let events = g.constant(Tensor::matrix(l, d, path.concat())?);
    let anchor = g.constant(Tensor::row(anchor.to_vec()));
    let out = model.pem(&mut g, events, anchor, 1)?;
    Ok(g.value(out.enhanced).data().to_vec())
}

/// Click probability and intermediate values for one example.
pub fn predict_ctr(model: &Dbpman, example: &TrainingExample) -> Result<(f64, ForwardTrace)> {
    let enc = EncodedExample::new(example, &model.config)?;
    let trace = model.trace(&enc)?;
    Ok((trace.probability, trace))
}
