//! The path-matching network, batched over examples.
//!
//! Shapes below use `B` for the batch size, `d` for the embedding width,
//! `l` for the path length, `t` for historical paths per example and `k1`,
//! `k2` for the two top-k widths.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, PoolPe};
use super::example::{EncodedExample, EventRows};
use super::pmm::rank_paths;
use crate::error::{Error, Result};
use crate::ndiff::{
    checkpoint, topk_select, GaussianInit, Graph, MlpParams, NodeId, OutputActivation, ParamId,
    ParamStore, Tensor, PROB_CLAMP,
};

/// Guard added inside the norm before cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTables {
    pub user: ParamId,
    pub item: ParamId,
    pub category: ParamId,
    pub behavior: ParamId,
    pub time: ParamId,
    pub position: ParamId,
}

impl EmbeddingTables {
    pub fn all(&self) -> [ParamId; 6] {
        [self.user, self.item, self.category, self.behavior, self.time, self.position]
    }
}

const TABLE_NAMES: [&str; 6] = [
    "emb.user",
    "emb.item",
    "emb.category",
    "emb.behavior",
    "emb.time",
    "emb.position",
];

/// Model configuration plus all trainable parameters.
#[derive(Debug, Clone)]
pub struct Dbpman {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub tables: EmbeddingTables,
    /// First-level activation `a(e, anchor)`.
    pub act: MlpParams,
    /// Second-level score over the `l` behaviors of a path.
    pub pem_score: MlpParams,
    /// Current-vs-historical path gate.
    pub path_gate: MlpParams,
    /// Candidate-vs-chosen-click gate.
    pub click_gate: MlpParams,
    pub head: MlpParams,
}

/// Output of the path-enhancing step for `N` paths.
#[derive(Debug, Clone)]
pub struct PemOut {
    /// `[N, k1·d]`
    pub enhanced: NodeId,
    /// `[N·l, 1]` first-level weights.
    pub weights: Option<NodeId>,
    /// `[N, l]` second-level scores.
    pub scores: Option<NodeId>,
    /// `N · k1` kept behavior indices, ascending per path.
    pub selected: Vec<usize>,
}

/// Graph handles for one batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// `[B, 1]`
    pub prob: NodeId,
    pub head_input: NodeId,
    /// `[B·t, k1·d]`
    pub hist: PemOut,
    /// `[B, k1·d]`; absent without path matching.
    pub current: Option<PemOut>,
    /// `[B·t, 1]`
    pub path_gates: Option<NodeId>,
    /// `[B·k2, 1]`
    pub click_gates: Option<NodeId>,
    /// `[B, k2·k1·d]`
    pub matched_paths: NodeId,
    /// `[B, k2·d]`
    pub matched_clicks: NodeId,
    /// Per example, the `k2` chosen historical path indices in rank order.
    pub chosen: Vec<Vec<Option<usize>>>,
}

/// Two masked views of `M` historical paths plus their anchor clicks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PamViews {
    pub view_a: Vec<EventRows>,
    pub view_b: Vec<EventRows>,
    pub anchors: Vec<EventRows>,
}

impl PamViews {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub main: NodeId,
    pub contrastive: Option<NodeId>,
}

/// Everything the network computed for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Enhanced historical paths, `t` vectors of `k1·d`.
    pub enhanced_paths: Vec<Vec<f64>>,
    pub enhanced_current: Option<Vec<f64>>,
    /// Second-level scores of each historical path.
    pub pem_scores: Vec<Vec<f64>>,
    pub path_gates: Vec<f64>,
    pub click_gates: Vec<f64>,
    pub chosen: Vec<Option<usize>>,
    pub matched_paths: Vec<f64>,
    pub matched_clicks: Vec<f64>,
    pub head_input: Vec<f64>,
    pub probability: f64,
}

fn rows_of(events: &[EventRows], f: impl Fn(&EventRows) -> usize) -> Vec<usize> {
    events.iter().map(f).collect()
}

impl Dbpman {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = GaussianInit::new(seed, config.init_std);
        let mut store = ParamStore::new();
        let d = config.d;
        let v = &config.vocab;
        let sizes = [
            v.users,
            v.items,
            v.categories,
            crate::behavior::BehaviorType::VOCAB,
            crate::behavior::TIME_BUCKETS + 1,
            v.positions,
        ];
        let mut ids = Vec::new();
        for (name, rows) in TABLE_NAMES.iter().zip(sizes) {
            let mut t = init.tensor(&[rows, d]);
            t.data_mut()[..d].iter_mut().for_each(|x| *x = 0.0);
            ids.push(store.insert(*name, t)?);
        }
        let tables = EmbeddingTables {
            user: ids[0],
            item: ids[1],
            category: ids[2],
            behavior: ids[3],
            time: ids[4],
            position: ids[5],
        };
        let c = &config;
        let lin = OutputActivation::Linear;
        let act = MlpParams::new(&mut store, "act", 4 * d, &c.act_hidden, 1, lin, &mut init)?;
        let pem_score =
            MlpParams::new(&mut store, "pem_score", c.l * d, &c.pem_hidden, c.l, lin, &mut init)?;
        let path_gate =
            MlpParams::new(&mut store, "path_gate", 3 * c.path_dim(), &c.gate_hidden, 1, lin, &mut init)?;
        let click_gate = MlpParams::new(&mut store, "click_gate", 3 * d, &c.gate_hidden, 1, lin, &mut init)?;
        let head = MlpParams::new(
            &mut store,
            "head",
            c.head_input_dim(),
            &c.head_hidden,
            1,
            OutputActivation::Sigmoid,
            &mut init,
        )?;
        Ok(Self {
            config,
            store,
            tables,
            act,
            pem_score,
            path_gate,
            click_gate,
            head,
        })
    }

    /// Rebuild a model around an existing parameter store, checking that it
    /// has every tensor `config` needs with the right shape.
    pub fn from_store(config: ModelConfig, store: ParamStore) -> Result<Self> {
        let reference = Self::new(config.clone(), 0)?;
        for (_, name, t) in reference.store.iter() {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if store.get(id).shape() != t.shape() {
                return Err(Error::Config(format!(
                    "{name}: shape {:?}, config expects {:?}",
                    store.get(id).shape(),
                    t.shape()
                )));
            }
        }
        let table = |i: usize| store.id(TABLE_NAMES[i]).expect("checked above");
        let tables = EmbeddingTables {
            user: table(0),
            item: table(1),
            category: table(2),
            behavior: table(3),
            time: table(4),
            position: table(5),
        };
        let c = &config;
        let lin = OutputActivation::Linear;
        Ok(Self {
            act: MlpParams::bind(&store, "act", c.act_hidden.len() + 1, lin)?,
            pem_score: MlpParams::bind(&store, "pem_score", c.pem_hidden.len() + 1, lin)?,
            path_gate: MlpParams::bind(&store, "path_gate", c.gate_hidden.len() + 1, lin)?,
            click_gate: MlpParams::bind(&store, "click_gate", c.gate_hidden.len() + 1, lin)?,
            head: MlpParams::bind(&store, "head", c.head_hidden.len() + 1, OutputActivation::Sigmoid)?,
            tables,
            config,
            store,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<checkpoint::Manifest> {
        checkpoint::save(dir, &self.store, &self.config)
    }

    /// Load a checkpoint; the model configuration comes from its manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(dir)?;
        let config: ModelConfig = serde_json::from_value(manifest.config)?;
        let mut model = Self::new(config, 0)?;
        checkpoint::load_into(dir, &mut model.store)?;
        Ok(model)
    }

    /// Sum-pooled embeddings of events, `[n, d]`. Pad events embed to zero.
    pub fn embed_events(&self, g: &mut Graph<'_>, events: &[EventRows]) -> Result<NodeId> {
        let t = &self.tables;
        let parts = [
            g.gather(t.item, rows_of(events, |e| e.item))?,
            g.gather(t.category, rows_of(events, |e| e.category))?,
            g.gather(t.behavior, rows_of(events, |e| e.behavior))?,
            g.gather(t.time, rows_of(events, |e| e.time))?,
            g.gather(t.position, rows_of(events, |e| e.position))?,
        ];
        g.add_all(&parts)
    }

    /// Candidate embeddings (item + category), `[n, d]`.
    pub fn embed_candidates(&self, g: &mut Graph<'_>, items: Vec<usize>, cats: Vec<usize>) -> Result<NodeId> {
        let a = g.gather(self.tables.item, items)?;
        let b = g.gather(self.tables.category, cats)?;
        g.add(a, b)
    }

    /// Enhance `n` paths. `events` is `[n·l, d]`, `anchors` is `[n, d]`.
    pub fn pem(&self, g: &mut Graph<'_>, events: NodeId, anchors: NodeId, n: usize) -> Result<PemOut> {
        let (l, d, k1) = (self.config.l, self.config.d, self.config.k1);
        if !self.config.use_pem {
            let raw = g.reshape(events, n, l * d)?;
            let selected: Vec<usize> = (0..n).flat_map(|_| 0..k1).collect();
            let enhanced = g.select_blocks(raw, d, k1, selected.clone())?;
            return Ok(PemOut {
                enhanced,
                weights: None,
                scores: None,
                selected,
            });
        }
        let rep = g.repeat_rows(anchors, l);
        let prod = g.mul(events, rep)?;
        let diff = g.sub(events, rep)?;
        let unit_in = g.concat_cols(&[events, rep, prod, diff])?;
        let weights = self.act.forward(g, unit_in)?;
        let weighted = g.scale_blocks(events, weights)?;
        let flat = g.reshape(weighted, n, l * d)?;
        let logits = self.pem_score.forward(g, flat)?;
        let scores = g.softmax_rows(logits);
        let mut selected = Vec::with_capacity(n * k1);
        {
            let sv = g.value(scores);
            for r in 0..n {
                selected.extend(topk_select(sv.row_slice(r), k1)?);
            }
        }
        let kept_scores = g.select_blocks(scores, 1, k1, selected.clone())?;
        let kept = g.select_blocks(flat, d, k1, selected.clone())?;
        let enhanced = g.scale_blocks(kept, kept_scores)?;
        Ok(PemOut {
            enhanced,
            weights: Some(weights),
            scores: Some(scores),
            selected,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, batch: &[&EncodedExample]) -> Result<BatchForward> {
        let c = &self.config;
        let (b, t, d, k2) = (batch.len(), c.t, c.d, c.k2);
        let pd = c.path_dim();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for ex in batch {
            if ex.history.len() != t * c.l || ex.anchors.len() != t || ex.current.len() != c.l {
                return Err(Error::shape("forward", "example encoded with a different l or t"));
            }
        }

        let hist_rows: Vec<EventRows> = batch.iter().flat_map(|e| e.history.iter().copied()).collect();
        let anchor_rows: Vec<EventRows> = batch.iter().flat_map(|e| e.anchors.iter().copied()).collect();
        let hist_events = self.embed_events(g, &hist_rows)?;
        let hist_anchors = self.embed_events(g, &anchor_rows)?;
        let hist = self.pem(g, hist_events, hist_anchors, b * t)?;

        let user = g.gather(self.tables.user, batch.iter().map(|e| e.user).collect())?;
        let cand = self.embed_candidates(
            g,
            batch.iter().map(|e| e.cand_item).collect(),
            batch.iter().map(|e| e.cand_category).collect(),
        )?;

        let (current, path_gates, click_gates, matched_paths, matched_clicks, chosen) = if c.use_pmm {
            let cur_rows: Vec<EventRows> = batch.iter().flat_map(|e| e.current.iter().copied()).collect();
            let cur_events = self.embed_events(g, &cur_rows)?;
            let current = self.pem(g, cur_events, cand, b)?;

            let cur_rep = g.repeat_rows(current.enhanced, t);
            let prod = g.mul(cur_rep, hist.enhanced)?;
            let gate_in = g.concat_cols(&[cur_rep, hist.enhanced, prod])?;
            let gates = self.path_gate.forward(g, gate_in)?;

            let mut chosen = Vec::with_capacity(b);
            let mut rows = Vec::with_capacity(b * k2);
            {
                let gv = g.value(gates).data();
                for (i, ex) in batch.iter().enumerate() {
                    let pick = rank_paths(&gv[i * t..(i + 1) * t], ex.valid_count, k2);
                    rows.extend(pick.iter().map(|p| p.map(|j| i * t + j)));
                    chosen.push(pick);
                }
            }
            let picked_paths = g.select_rows(hist.enhanced, rows.clone())?;
            let picked_gates = g.select_rows(gates, rows.clone())?;
            let scaled = g.scale_blocks(picked_paths, picked_gates)?;
            let matched_paths = g.reshape(scaled, b, k2 * pd)?;

            let clicks = g.select_rows(hist_anchors, rows)?;
            let cand_rep = g.repeat_rows(cand, k2);
            let prod = g.mul(cand_rep, clicks)?;
            let click_in = g.concat_cols(&[cand_rep, clicks, prod])?;
            let click_gates = self.click_gate.forward(g, click_in)?;
            let scaled = g.scale_blocks(clicks, click_gates)?;
            let matched_clicks = g.reshape(scaled, b, k2 * d)?;
            (
                Some(current),
                Some(gates),
                Some(click_gates),
                matched_paths,
                matched_clicks,
                chosen,
            )
        } else {
            (
                None,
                None,
                None,
                g.zeros(b, k2 * pd),
                g.zeros(b, k2 * d),
                vec![vec![None; k2]; b],
            )
        };

        let pe = match c.pool_pe {
            PoolPe::Concat => g.reshape(hist.enhanced, b, t * pd)?,
            PoolPe::Sum => {
                let wide = g.reshape(hist.enhanced, b, t * pd)?;
                g.sum_blocks(wide, pd)?
            }
        };
        let head_input = g.concat_cols(&[pe, matched_paths, matched_clicks, user, cand])?;
        let prob = self.head.forward(g, head_input)?;
        // keep probabilities strictly inside (0, 1) when the sigmoid saturates
        let prob = g.clamp(prob, PROB_CLAMP, 1.0 - PROB_CLAMP);
        Ok(BatchForward {
            prob,
            head_input,
            hist,
            current,
            path_gates,
            click_gates,
            matched_paths,
            matched_clicks,
            chosen,
        })
    }

    /// InfoNCE between the enhanced embeddings of two views of each path,
    /// with the other paths of the batch as negatives.
    pub fn contrastive_loss(&self, g: &mut Graph<'_>, views: &PamViews) -> Result<Option<NodeId>> {
        let m = views.len();
        if m < 2 {
            return Ok(None);
        }
        let anchors = self.embed_events(g, &views.anchors)?;
        let ea = self.embed_events(g, &views.view_a)?;
        let eb = self.embed_events(g, &views.view_b)?;
        let za = self.pem(g, ea, anchors, m)?.enhanced;
        let zb = self.pem(g, eb, anchors, m)?.enhanced;
        Ok(Some(infonce(g, za, zb, self.config.tau)?))
    }

    /// Negative log-likelihood plus, with augmentation enabled, `λ` times
    /// the contrastive loss.
    pub fn loss(
        &self,
        g: &mut Graph<'_>,
        batch: &[&EncodedExample],
        views: Option<&PamViews>,
    ) -> Result<(LossNodes, BatchForward)> {
        let fwd = self.forward(g, batch)?;
        let labels = batch.iter().map(|e| e.label).collect();
        let main = g.log_loss(fwd.prob, labels)?;
        let contrastive = match views {
            Some(v) if self.config.use_pam => self.contrastive_loss(g, v)?,
            _ => None,
        };
        let total = match contrastive {
            Some(cl) => {
                let weighted = g.scale(cl, self.config.lambda);
                g.add(main, weighted)?
            }
            None => main,
        };
        Ok((
            LossNodes {
                total,
                main,
                contrastive,
            },
            fwd,
        ))
    }

    /// Click probabilities for `examples`, evaluated in parallel chunks.
    pub fn predict(&self, examples: &[EncodedExample], batch_size: usize) -> Result<Vec<f64>> {
        let chunks: Vec<Result<Vec<f64>>> = examples
            .par_chunks(batch_size.max(1))
            .map(|chunk| {
                let refs: Vec<&EncodedExample> = chunk.iter().collect();
                let mut g = Graph::new(&self.store);
                let fwd = self.forward(&mut g, &refs)?;
                Ok(g.value(fwd.prob).data().to_vec())
            })
            .collect();
        let mut out = Vec::with_capacity(examples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    pub fn trace(&self, example: &EncodedExample) -> Result<ForwardTrace> {
        let mut g = Graph::new(&self.store);
        let fwd = self.forward(&mut g, &[example])?;
        let c = &self.config;
        let rows = |id: NodeId| -> Vec<Vec<f64>> {
            let v = g.value(id);
            (0..v.rows()).map(|r| v.row_slice(r).to_vec()).collect()
        };
        let flat = |id: Option<NodeId>| id.map(|n| g.value(n).data().to_vec()).unwrap_or_default();
        Ok(ForwardTrace {
            enhanced_paths: rows(fwd.hist.enhanced),
            enhanced_current: fwd.current.as_ref().map(|p| g.value(p.enhanced).data().to_vec()),
            pem_scores: fwd.hist.scores.map(rows).unwrap_or_else(|| vec![Vec::new(); c.t]),
            path_gates: flat(fwd.path_gates),
            click_gates: flat(fwd.click_gates),
            chosen: fwd.chosen[0].clone(),
            matched_paths: g.value(fwd.matched_paths).data().to_vec(),
            matched_clicks: g.value(fwd.matched_clicks).data().to_vec(),
            head_input: g.value(fwd.head_input).data().to_vec(),
            probability: g.value(fwd.prob).item(),
        })
    }

    /// Values of the event embeddings, for inspection.
    pub fn embed_values(&self, events: &[EventRows]) -> Result<Tensor> {
        let mut g = Graph::new(&self.store);
        let e = self.embed_events(&mut g, events)?;
        Ok(g.value(e).clone())
    }
}

/// `-(1/n) Σ_i log softmax_j(cos(z_a[i], z_b[j]) / τ)[i]` over rows.
pub fn infonce(g: &mut Graph<'_>, za: NodeId, zb: NodeId, tau: f64) -> Result<NodeId> {
    let n = g.value(za).rows();
    let na = g.normalize_rows(za, COSINE_EPS);
    let nb = g.normalize_rows(zb, COSINE_EPS);
    let sim = g.matmul_t(na, nb)?;
    let logits = g.scale(sim, 1.0 / tau);
    let log_probs = g.log_softmax_rows(logits);
    let diag = g.pick_cols(log_probs, (0..n).collect())?;
    let mean = g.mean(diag);
    Ok(g.scale(mean, -1.0))
}
