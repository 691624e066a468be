//! Plain-loop reimplementation of the network used as a test oracle. It
//! reads weights straight from the parameter store and shares no code with
//! the graph implementation.
#![allow(dead_code)]

use pathmatch::model::{Dbpman, EncodedExample, EventRows, PoolPe};
use pathmatch::ndiff::Tensor;

pub struct Oracle<'a> {
    pub m: &'a Dbpman,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Indices of the `k` largest values, ties to the lower index, ascending.
pub fn topk_by_sort(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
    let mut out = idx[..k].to_vec();
    out.sort();
    out
}

impl<'a> Oracle<'a> {
    pub fn new(m: &'a Dbpman) -> Self {
        Self { m }
    }

    fn p(&self, name: &str) -> &Tensor {
        self.m.store.get(self.m.store.id(name).unwrap_or_else(|| panic!("no {name}")))
    }

    /// `prefix` network with `depth` layers, ReLU between layers.
    pub fn mlp(&self, prefix: &str, depth: usize, sigmoid: bool, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for i in 0..depth {
            let w = self.p(&format!("{prefix}.{i}.weight"));
            let b = self.p(&format!("{prefix}.{i}.bias"));
            let mut out: Vec<f64> = (0..w.rows()).map(|r| dot(w.row_slice(r), &h) + b.data()[r]).collect();
            if i + 1 < depth {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        if sigmoid {
            h.iter_mut().for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        }
        h
    }

    pub fn row(&self, table: &str, r: usize) -> Vec<f64> {
        if r == 0 {
            vec![0.0; self.m.config.d]
        } else {
            self.p(table).row_slice(r).to_vec()
        }
    }

    pub fn embed(&self, e: &EventRows) -> Vec<f64> {
        let parts = [
            self.row("emb.item", e.item),
            self.row("emb.category", e.category),
            self.row("emb.behavior", e.behavior),
            self.row("emb.time", e.time),
            self.row("emb.position", e.position),
        ];
        (0..self.m.config.d).map(|i| parts.iter().map(|p| p[i]).sum()).collect()
    }

    pub fn candidate(&self, item: usize, cat: usize) -> Vec<f64> {
        let (a, b) = (self.row("emb.item", item), self.row("emb.category", cat));
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    /// First-level weights, second-level scores and the enhanced path.
    pub fn pem(&self, events: &[Vec<f64>], anchor: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let c = &self.m.config;
        if !c.use_pem {
            return (vec![], vec![], events[..c.k1].concat());
        }
        let weights: Vec<f64> = events
            .iter()
            .map(|e| {
                let diff: Vec<f64> = e.iter().zip(anchor).map(|(x, y)| x - y).collect();
                let input = cat(&[e, anchor, &hadamard(e, anchor), &diff]);
                self.mlp("act", c.act_hidden.len() + 1, false, &input)[0]
            })
            .collect();
        let te: Vec<Vec<f64>> = events
            .iter()
            .zip(&weights)
            .map(|(e, w)| e.iter().map(|x| w * x).collect())
            .collect();
        let scores = softmax(&self.mlp("pem_score", c.pem_hidden.len() + 1, false, &te.concat()));
        let keep = topk_by_sort(&scores, c.k1);
        let enhanced = keep
            .iter()
            .flat_map(|&j| te[j].iter().map(|x| x * scores[j]).collect::<Vec<_>>())
            .collect();
        (weights, scores, enhanced)
    }

    pub fn gate(&self, prefix: &str, a: &[f64], b: &[f64]) -> f64 {
        let depth = self.m.config.gate_hidden.len() + 1;
        self.mlp(prefix, depth, false, &cat(&[a, b, &hadamard(a, b)]))[0]
    }

    /// Probability and head input of one example.
    pub fn forward(&self, ex: &EncodedExample) -> (f64, Vec<f64>) {
        let c = &self.m.config;
        let (l, t, d, k2) = (c.l, c.t, c.d, c.k2);
        let pd = c.path_dim();
        let hist: Vec<Vec<f64>> = (0..t)
            .map(|i| {
                let events: Vec<Vec<f64>> = ex.history[i * l..(i + 1) * l].iter().map(|e| self.embed(e)).collect();
                self.pem(&events, &self.embed(&ex.anchors[i])).2
            })
            .collect();
        let cand = self.candidate(ex.cand_item, ex.cand_category);
        let (ep, ec) = if c.use_pmm {
            let cur_events: Vec<Vec<f64>> = ex.current.iter().map(|e| self.embed(e)).collect();
            let cur = self.pem(&cur_events, &cand).2;
            let gates: Vec<f64> = hist.iter().map(|p| self.gate("path_gate", &cur, p)).collect();
            let mut order: Vec<usize> = (0..ex.valid_count).collect();
            order.sort_by(|&a, &b| gates[b].partial_cmp(&gates[a]).unwrap().then(b.cmp(&a)));
            let mut ep = vec![0.0; k2 * pd];
            let mut ec = vec![0.0; k2 * d];
            for (slot, &i) in order.iter().take(k2).enumerate() {
                for (j, x) in hist[i].iter().enumerate() {
                    ep[slot * pd + j] = gates[i] * x;
                }
                let click = self.embed(&ex.anchors[i]);
                let g = self.gate("click_gate", &cand, &click);
                for (j, x) in click.iter().enumerate() {
                    ec[slot * d + j] = g * x;
                }
            }
            (ep, ec)
        } else {
            (vec![0.0; k2 * pd], vec![0.0; k2 * d])
        };
        let pe = match c.pool_pe {
            PoolPe::Concat => hist.concat(),
            PoolPe::Sum => (0..pd).map(|j| hist.iter().map(|p| p[j]).sum()).collect(),
        };
        let user = self.row("emb.user", ex.user);
        let input = cat(&[&pe, &ep, &ec, &user, &cand]);
        let prob = self.mlp("head", c.head_hidden.len() + 1, true, &input)[0];
        (prob.clamp(1e-12, 1.0 - 1e-12), input)
    }
}

/// Reference InfoNCE by explicit double loop.
pub fn infonce_double_loop(za: &[Vec<f64>], zb: &[Vec<f64>], tau: f64) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let na = (dot(a, a) + 1e-24).sqrt();
        let nb = (dot(b, b) + 1e-24).sqrt();
        dot(a, b) / (na * nb)
    };
    let n = za.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos = (cos(&za[i], &zb[i]) / tau).exp();
        let mut denom = 0.0;
        for j in 0..n {
            denom += (cos(&za[i], &zb[j]) / tau).exp();
        }
        total -= (pos / denom).ln();
    }
    total / n as f64
}

/// Reference mean negative log-likelihood with the 1e-12 clamp.
pub fn nll(preds: &[f64], labels: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&p, &y) in preds.iter().zip(labels) {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        s -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    s / preds.len() as f64
}
