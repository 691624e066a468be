//! Path augmentation: random masking of historical paths and the InfoNCE
//! objective that pulls two views of the same path together.

use rand::seq::index::sample;
use rand::Rng;

use super::example::{EncodedExample, EventRows};
use super::network::{infonce, PamViews};
use crate::behavior::{BehaviorEvent, BehaviorPath};
use crate::error::{Error, Result};
use crate::ndiff::{Graph, Tensor};

/// Number of positions masked per view of a length-`l` path.
pub fn mask_count(l: usize, ratio: f64) -> usize {
    ((ratio * l as f64).ceil() as usize).min(l)
}

/// Choose which of `l` positions to mask. When masking would erase every
/// real (non-pad) position, one of them is restored at random.
pub fn mask_positions<R: Rng + ?Sized>(is_real: &[bool], ratio: f64, rng: &mut R) -> Vec<bool> {
    let l = is_real.len();
    let mut mask = vec![false; l];
    for i in sample(rng, l, mask_count(l, ratio)) {
        mask[i] = true;
    }
    let real: Vec<usize> = (0..l).filter(|&i| is_real[i]).collect();
    if !real.is_empty() && real.iter().all(|&i| mask[i]) {
        mask[real[rng.random_range(0..real.len())]] = false;
    }
    mask
}

fn masked_path<R: Rng + ?Sized>(path: &BehaviorPath, ratio: f64, rng: &mut R) -> BehaviorPath {
    let real: Vec<bool> = path.events.iter().map(|e| !e.is_pad()).collect();
    let mask = mask_positions(&real, ratio, rng);
    let events = path
        .events
        .iter()
        .zip(&mask)
        .map(|(e, &m)| if m { BehaviorEvent::PAD } else { *e })
        .collect();
    BehaviorPath {
        events,
        ..path.clone()
    }
}

/// Two independently masked copies of `path`.
pub fn pam_views<R: Rng + ?Sized>(
    path: &BehaviorPath,
    mask_ratio: f64,
    rng: &mut R,
) -> Result<(BehaviorPath, BehaviorPath)> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(Error::InvalidArgument("mask ratio must be in [0, 1)".into()));
    }
    let a = masked_path(path, mask_ratio, rng);
    let b = masked_path(path, mask_ratio, rng);
    Ok((a, b))
}

fn mask_rows<R: Rng + ?Sized>(events: &[EventRows], ratio: f64, rng: &mut R) -> Vec<EventRows> {
    let real: Vec<bool> = events.iter().map(|e| !e.is_pad()).collect();
    let mask = mask_positions(&real, ratio, rng);
    events
        .iter()
        .zip(mask)
        .map(|(e, m)| if m { EventRows::PAD } else { *e })
        .collect()
}

/// Augmented views for the valid historical paths of a batch, at most
/// `max_paths` of them (a uniform sample when there are more).
pub fn batch_views<R: Rng + ?Sized>(
    batch: &[&EncodedExample],
    l: usize,
    mask_ratio: f64,
    max_paths: usize,
    rng: &mut R,
) -> PamViews {
    let mut candidates: Vec<(usize, usize)> = batch
        .iter()
        .enumerate()
        .flat_map(|(b, ex)| (0..ex.valid_count).map(move |i| (b, i)))
        .collect();
    if candidates.len() > max_paths {
        let mut keep: Vec<usize> = sample(rng, candidates.len(), max_paths).into_vec();
        keep.sort_unstable();
        candidates = keep.into_iter().map(|i| candidates[i]).collect();
    }
    let mut views = PamViews::default();
    for (b, i) in candidates {
        let path = batch[b].path(i, l);
        views.view_a.extend(mask_rows(path, mask_ratio, rng));
        views.view_b.extend(mask_rows(path, mask_ratio, rng));
        views.anchors.push(batch[b].anchors[i]);
    }
    views
}

/// InfoNCE over `n` pairs of view embeddings with cosine similarity.
pub fn infonce_loss(za: &[Vec<f64>], zb: &[Vec<f64>], tau: f64) -> Result<f64> {
    let n = za.len();
    if n < 2 || zb.len() != n {
        return Err(Error::InvalidArgument("InfoNCE needs n >= 2 matched pairs".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let d = za[0].len();
    if za.iter().chain(zb).any(|v| v.len() != d) {
        return Err(Error::shape("infonce_loss", "all embeddings must share a width"));
    }
    let store = crate::ndiff::ParamStore::new();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::matrix(n, d, za.concat())?);
    let b = g.constant(Tensor::matrix(n, d, zb.concat())?);
    let loss = infonce(&mut g, a, b, tau)?;
    Ok(g.value(loss).item())
}
