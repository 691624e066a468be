mod common;

use common::{cat, hadamard, infonce_double_loop, nll, Oracle};
use pathmatch::behavior::{BehaviorEvent, BehaviorType};
use pathmatch::model::*;
use pathmatch::ndiff::{GaussianInit, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model with every parameter drawn from `N(0, 0.3²)`, so that all
/// branches carry visible signal.
fn random_model(cfg: ModelConfig, seed: u64) -> Dbpman {
    let mut m = Dbpman::new(cfg, seed).unwrap();
    let mut init = GaussianInit::new(seed + 100, 0.3);
    let ids: Vec<_> = m.store.ids().collect();
    for id in ids {
        let shape = m.store.get(id).shape().to_vec();
        *m.store.get_mut(id) = init.tensor(&shape);
    }
    m
}

fn set(m: &mut Dbpman, name: &str, f: impl Fn(&mut [f64])) {
    let id = m.store.id(name).unwrap();
    f(m.store.get_mut(id).data_mut());
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn encoded(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<EncodedExample> {
    encode_all(&random_examples(cfg, n, seed), cfg).unwrap()
}

// ---- embedding ----

#[test]
fn pad_event_embeds_to_zero() {
    let m = random_model(ModelConfig::miniature(), 1);
    let v = embed_behavior(&m, &BehaviorEvent::PAD).unwrap();
    assert!(v.iter().all(|&x| x == 0.0));
}

#[test]
fn event_embedding_is_the_sum_of_its_rows() {
    let mut m = random_model(ModelConfig::miniature(), 2);
    set(&mut m, "emb.item", |d| d[4 * 3..4 * 4].copy_from_slice(&[1.0, 0.0, 0.0, 0.0]));
    set(&mut m, "emb.category", |d| d[4 * 2..4 * 3].copy_from_slice(&[0.0, 2.0, 0.0, 0.0]));
    set(&mut m, "emb.behavior", |d| d[4..8].copy_from_slice(&[0.0, 0.0, 3.0, 0.0]));
    set(&mut m, "emb.time", |d| d[4 * 5..4 * 6].copy_from_slice(&[0.0, 0.0, 0.0, 4.0]));
    set(&mut m, "emb.position", |d| d[4 * 7..4 * 8].copy_from_slice(&[10.0, 10.0, 10.0, 10.0]));
    let e = BehaviorEvent {
        item_id: 3,
        category_id: 2,
        behavior_type: BehaviorType::Click,
        time_bucket: 5,
        position: 7,
    };
    assert_eq!(embed_behavior(&m, &e).unwrap(), vec![11.0, 12.0, 13.0, 14.0]);
}

#[test]
fn event_embedding_matches_lookup_oracle() {
    let cfg = ModelConfig::miniature();
    let m = random_model(cfg.clone(), 3);
    let o = Oracle::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let e = BehaviorEvent {
            item_id: rng.random_range(1..40),
            category_id: rng.random_range(1..40),
            behavior_type: [BehaviorType::Click, BehaviorType::Impression, BehaviorType::Order][rng.random_range(0..3)],
            time_bucket: rng.random_range(1..=16),
            position: rng.random_range(1..100),
        };
        let got = embed_behavior(&m, &e).unwrap();
        let want = o.embed(&EventRows::of(&e, &cfg.vocab));
        assert!(close(&got, &want, 1e-14));
    }
}

// ---- path enhancing ----

#[test]
fn uniform_activation_averages_the_path() {
    let cfg = ModelConfig {
        k1: 3,
        ..ModelConfig::miniature()
    };
    let mut m = random_model(cfg.clone(), 4);
    // a(.) outputs exactly 1 and every second-level logit is equal
    set(&mut m, "act.1.weight", |d| d.fill(0.0));
    set(&mut m, "act.1.bias", |d| d.fill(1.0));
    set(&mut m, "pem_score.0.weight", |d| d.fill(0.0));
    set(&mut m, "pem_score.0.bias", |d| d.fill(0.25));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let path: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
    let got = pem_enhance(&m, &path, &random_vec(&mut rng, 4)).unwrap();
    let want: Vec<f64> = path.concat().iter().map(|x| x / 3.0).collect();
    assert!(close(&got, &want, 1e-15));
}

#[test]
fn one_hot_score_keeps_a_single_behavior() {
    let cfg = ModelConfig {
        k1: 1,
        ..ModelConfig::miniature()
    };
    let mut m = random_model(cfg, 5);
    set(&mut m, "pem_score.0.weight", |d| d.fill(0.0));
    set(&mut m, "pem_score.0.bias", |d| d.copy_from_slice(&[0.0, 800.0, 0.0]));
    let o = Oracle::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let path: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
    let anchor = random_vec(&mut rng, 4);
    let got = pem_enhance(&m, &path, &anchor).unwrap();
    let (w, scores, _) = o.pem(&path, &anchor);
    assert_eq!(scores, vec![0.0, 1.0, 0.0]);
    let want: Vec<f64> = path[1].iter().map(|x| w[1] * x).collect();
    assert!(close(&got, &want, 1e-15));
}

#[test]
fn path_enhancing_matches_transcription() {
    let cfg = ModelConfig {
        l: 4,
        k1: 2,
        ..ModelConfig::miniature()
    };
    for seed in 0..20 {
        let m = random_model(cfg.clone(), seed);
        let o = Oracle::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 4)).collect();
        let anchor = random_vec(&mut rng, 4);
        let got = pem_enhance(&m, &path, &anchor).unwrap();
        assert!(close(&got, &o.pem(&path, &anchor).2, 1e-13), "seed {seed}");
    }
    let m = random_model(cfg, 0);
    assert!(pem_enhance(&m, &vec![vec![0.0; 4]; 3], &[0.0; 4]).is_err());
}

#[test]
fn without_path_enhancing_the_first_behaviors_pass_through() {
    let cfg = ModelConfig::miniature().with_variant(Variant::NoPem);
    let m = random_model(cfg, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let path: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 4)).collect();
    let got = pem_enhance(&m, &path, &random_vec(&mut rng, 4)).unwrap();
    assert_eq!(got, path[..2].concat());
}

#[test]
fn second_level_scores_sum_to_one() {
    let cfg = ModelConfig::miniature();
    let m = random_model(cfg.clone(), 7);
    for ex in encoded(&cfg, 10, 7) {
        let trace = m.trace(&ex).unwrap();
        for s in &trace.pem_scores {
            assert_eq!(s.len(), cfg.l);
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }
}

// ---- path matching ----

#[test]
fn zero_weight_gate_returns_its_bias() {
    let mut m = random_model(ModelConfig::miniature(), 8);
    set(&mut m, "path_gate.0.weight", |d| d.fill(0.0));
    set(&mut m, "path_gate.1.weight", |d| d.fill(0.0));
    set(&mut m, "path_gate.1.bias", |d| d.fill(-0.7));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..5 {
        let g = pmm_gate(&m, &random_vec(&mut rng, 8), &random_vec(&mut rng, 8)).unwrap();
        assert_eq!(g, -0.7);
    }
}

#[test]
fn gate_on_identical_paths_sees_their_square() {
    let m = random_model(ModelConfig::miniature(), 9);
    let o = Oracle::new(&m);
    let p: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let structural = o.mlp("path_gate", 2, false, &cat(&[&p, &p, &hadamard(&p, &p)]))[0];
    assert!((pmm_gate(&m, &p, &p).unwrap() - structural).abs() < 1e-14);
}

#[test]
fn gate_matches_transcription() {
    let m = random_model(ModelConfig::miniature(), 10);
    let o = Oracle::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let (a, b) = (random_vec(&mut rng, 8), random_vec(&mut rng, 8));
        assert!((pmm_gate(&m, &a, &b).unwrap() - o.gate("path_gate", &a, &b)).abs() < 1e-14);
    }
    assert!(pmm_gate(&m, &[0.0; 7], &[0.0; 8]).is_err());
}

#[test]
fn selection_example() {
    let p: Vec<Vec<f64>> = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
    let c: Vec<Vec<f64>> = vec![vec![7.0], vec![8.0], vec![9.0]];
    let sel = pmm_select(&[0.2, 0.9, 0.5], &p, &c, 2, 3).unwrap();
    assert_eq!(sel.chosen, vec![Some(1), Some(2)]);
    assert_eq!(sel.matched_paths, vec![0.9 * 3.0, 0.9 * 4.0, 0.5 * 5.0, 0.5 * 6.0]);
    assert_eq!(sel.clicks, vec![vec![8.0], vec![9.0]]);
    let none = pmm_select(&[0.2, 0.9, 0.5], &p, &c, 2, 0).unwrap();
    assert_eq!(none.matched_paths, vec![0.0; 4]);
    assert_eq!(none.clicks, vec![vec![0.0]; 2]);
}

proptest! {
    #[test]
    fn ranking_matches_full_sort(
        // coarse values so that ties are common
        gates in prop::collection::vec(0i32..6, 20),
        valid in 0usize..=20,
    ) {
        let g: Vec<f64> = gates.iter().map(|&x| x as f64 * 0.5).collect();
        let got = rank_paths(&g, valid, 5);
        // brute force: every valid index, larger gate first, later index first
        let mut all: Vec<(f64, usize)> = (0..valid).map(|i| (g[i], i)).collect();
        all.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut want: Vec<Option<usize>> = all.iter().take(5).map(|&(_, i)| Some(i)).collect();
        want.resize(5, None);
        prop_assert_eq!(&got, &want);
        if valid >= 5 {
            prop_assert!(got.iter().all(|s| s.is_some_and(|i| i < valid)));
        }
    }
}

#[test]
fn candidate_activation_cases() {
    let mut m = random_model(ModelConfig::miniature(), 11);
    let o = Oracle::new(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cand = random_vec(&mut rng, 4);
    let zero = candidate_activation(&m, &cand, &[vec![0.0; 4], vec![0.0; 4]]).unwrap();
    assert_eq!(zero, vec![0.0; 8]);

    let clicks = vec![random_vec(&mut rng, 4), random_vec(&mut rng, 4)];
    let got = candidate_activation(&m, &cand, &clicks).unwrap();
    let want: Vec<f64> = clicks
        .iter()
        .flat_map(|c| {
            let g = o.gate("click_gate", &cand, c);
            c.iter().map(move |x| g * x).collect::<Vec<_>>()
        })
        .collect();
    assert!(close(&got, &want, 1e-14));

    set(&mut m, "click_gate.1.weight", |d| d.fill(0.0));
    set(&mut m, "click_gate.1.bias", |d| d.fill(1.0));
    let one = candidate_activation(&m, &cand, &clicks[..1]).unwrap();
    assert_eq!(one, clicks[0]);
}

// ---- prediction ----

#[test]
fn zero_head_predicts_one_half() {
    let cfg = ModelConfig::miniature();
    let mut m = random_model(cfg.clone(), 12);
    for i in 0..3 {
        set(&mut m, &format!("head.{i}.weight"), |d| d.fill(0.0));
        set(&mut m, &format!("head.{i}.bias"), |d| d.fill(0.0));
    }
    for ex in random_examples(&cfg, 5, 12) {
        assert_eq!(predict_ctr(&m, &ex).unwrap().0, 0.5);
    }
}

#[test]
fn head_input_layout() {
    let cfg = ModelConfig::miniature();
    let m = random_model(cfg.clone(), 13);
    let o = Oracle::new(&m);
    for ex in encoded(&cfg, 6, 13) {
        let tr = m.trace(&ex).unwrap();
        let d = cfg.d;
        let user = o.row("emb.user", ex.user);
        let cand = o.candidate(ex.cand_item, ex.cand_category);
        let want = cat(&[&tr.enhanced_paths.concat(), &tr.matched_paths, &tr.matched_clicks, &user, &cand]);
        assert_eq!(tr.head_input, want);
        assert_eq!(tr.head_input.len(), cfg.head_input_dim());
        assert_eq!(tr.matched_clicks.len(), cfg.k2 * d);
        assert_eq!(tr.path_gates.len(), cfg.t);
    }
}

#[test]
fn prediction_matches_composition_oracle() {
    let base = ModelConfig::miniature();
    let mut configs: Vec<ModelConfig> = Variant::ALL.iter().map(|&v| base.clone().with_variant(v)).collect();
    configs.push(ModelConfig {
        pool_pe: PoolPe::Sum,
        ..base.clone()
    });
    for (ci, cfg) in configs.into_iter().enumerate() {
        for seed in 0..5 {
            let m = random_model(cfg.clone(), seed * 10 + ci as u64);
            let o = Oracle::new(&m);
            let examples = encoded(&cfg, 8, seed);
            let batched = m.predict(&examples, 3).unwrap();
            for (ex, &pb) in examples.iter().zip(&batched) {
                let (p, input) = o.forward(ex);
                let tr = m.trace(ex).unwrap();
                assert!(close(&tr.head_input, &input, 1e-12), "config {ci} seed {seed}");
                assert!((tr.probability - p).abs() < 1e-12);
                assert!((pb - p).abs() < 1e-12);
                assert!(p > 0.0 && p < 1.0);
            }
        }
    }
}

#[test]
fn short_histories_never_match_dummies() {
    let cfg = ModelConfig::miniature();
    let m = random_model(cfg.clone(), 14);
    for ex in encoded(&cfg, 30, 14) {
        let tr = m.trace(&ex).unwrap();
        for (slot, c) in tr.chosen.iter().enumerate() {
            match c {
                Some(i) => assert!(*i < ex.valid_count),
                None => assert!(slot >= ex.valid_count),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn probabilities_stay_inside_the_unit_interval(seed in 0u64..1000, scale in 0.01f64..3.0) {
        let cfg = ModelConfig::miniature();
        let mut m = Dbpman::new(cfg.clone(), seed).unwrap();
        let mut init = GaussianInit::new(seed, scale);
        let ids: Vec<_> = m.store.ids().collect();
        for id in ids {
            let shape = m.store.get(id).shape().to_vec();
            *m.store.get_mut(id) = init.tensor(&shape);
        }
        for p in m.predict(&encoded(&cfg, 4, seed), 4).unwrap() {
            prop_assert!(p > 0.0 && p < 1.0);
        }
    }
}

// ---- augmentation and losses ----

#[test]
fn infonce_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let za: Vec<Vec<f64>> = (0..8).map(|_| random_vec(&mut rng, 18)).collect();
        let zb: Vec<Vec<f64>> = (0..8).map(|_| random_vec(&mut rng, 18)).collect();
        for tau in [0.1, 0.5, 1.0] {
            let got = pam::infonce_loss(&za, &zb, tau).unwrap();
            let want = infonce_double_loop(&za, &zb, tau);
            assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} {want}");
            assert!(got >= 0.0);
        }
    }
}

#[test]
fn infonce_decreases_as_positive_similarity_rises() {
    // rotate z_b[0] towards z_a[0] in a plane orthogonal to every other
    // embedding, so only the positive similarity changes
    let mut za = vec![vec![0.0; 6]; 3];
    let mut zb = vec![vec![0.0; 6]; 3];
    za[0][0] = 1.0;
    za[1][2] = 1.0;
    za[1][3] = 0.5;
    za[2][3] = 1.0;
    zb[1][2] = 0.3;
    zb[1][3] = 1.0;
    zb[2][2] = 1.0;
    let mut prev = f64::INFINITY;
    for step in 0..=10 {
        let theta = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 10.0);
        zb[0][0] = theta.cos();
        zb[0][1] = theta.sin();
        let loss = pam::infonce_loss(&za, &zb, 0.2).unwrap();
        assert!(loss < prev);
        prev = loss;
    }
}

#[test]
fn total_loss_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..20 {
        let n = rng.random_range(1..50);
        let preds: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0..2) as f64).collect();
        let c = rng.random_range(0.0..5.0);
        let got = total_loss(&preds, &labels, Some(c), 0.1).unwrap();
        assert!((got - (nll(&preds, &labels) + 0.1 * c)).abs() < 1e-12);
    }
}

#[test]
fn batched_views_pair_each_valid_path_with_its_click() {
    let cfg = ModelConfig::miniature();
    let examples = encoded(&cfg, 6, 17);
    let batch: Vec<&EncodedExample> = examples.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let views = pam::batch_views(&batch, cfg.l, 0.0, 256, &mut rng);
    let total: usize = examples.iter().map(|e| e.valid_count).sum();
    assert_eq!(views.len(), total);
    assert_eq!(views.view_a, views.view_b);
    let capped = pam::batch_views(&batch, cfg.l, 0.25, 5, &mut rng);
    assert_eq!(capped.len(), 5);
    assert_eq!(capped.view_a.len(), 5 * cfg.l);
    assert!(capped.anchors.iter().all(|a| !a.is_pad()));
}

// ---- training ----

#[test]
fn miniature_gradients_match_finite_differences() {
    for seed in 0..3 {
        let report = gradcheck_miniature(seed).unwrap();
        assert!(report.max_rel_error < GRADCHECK_TOLERANCE, "seed {seed}: {report:?}");
        assert!(report.coordinates > 1000);
    }
}

fn pad_rows(m: &Dbpman) -> Vec<f64> {
    m.tables
        .all()
        .iter()
        .flat_map(|&id| m.store.get(id).row_slice(0).to_vec())
        .collect()
}

#[test]
fn pad_rows_stay_zero_through_training() {
    let cfg = ModelConfig::miniature();
    let model = Dbpman::new(cfg.clone(), 18).unwrap();
    assert!(pad_rows(&model).iter().all(|&x| x == 0.0));
    let data = encoded(&cfg, 64, 18);
    let mut trainer = Trainer::new(
        model,
        TrainConfig {
            batch_size: 8,
            lr: 0.01,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let mut steps = 0;
    while steps < 100 {
        for chunk in data.chunks(8) {
            let batch: Vec<&EncodedExample> = chunk.iter().collect();
            trainer.step(&batch).unwrap();
            steps += 1;
        }
    }
    assert!(pad_rows(&trainer.model).iter().all(|&x| x == 0.0));
    assert!(trainer.history.iter().all(|s| s.contrastive.is_some()));
}

#[test]
fn training_lowers_the_loss_on_a_fixed_batch() {
    let cfg = ModelConfig::miniature();
    let data = encoded(&cfg, 16, 19);
    let batch: Vec<&EncodedExample> = data.iter().collect();
    let mut trainer = Trainer::new(
        Dbpman::new(cfg.with_variant(Variant::NoPam), 19).unwrap(),
        TrainConfig {
            lr: 0.01,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    let first = trainer.step(&batch).unwrap().total;
    for _ in 0..200 {
        trainer.step(&batch).unwrap();
    }
    let last = trainer.history.last().unwrap().total;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert!(trainer.history.iter().all(|s| s.contrastive.is_none()));
}

#[test]
fn seeded_training_is_reproducible() {
    let cfg = ModelConfig::miniature();
    let data = encoded(&cfg, 40, 20);
    let run = || {
        let mut t = Trainer::new(
            Dbpman::new(cfg.clone(), 20).unwrap(),
            TrainConfig {
                batch_size: 8,
                epochs: 2,
                seed: 5,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        t.fit(&data).unwrap();
        (t.history.clone(), t.model.store.clone())
    };
    let (h1, s1) = run();
    let (h2, s2) = run();
    assert_eq!(h1, h2);
    assert_eq!(s1, s2);
}

#[test]
fn every_variant_shares_the_head_arity_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let base = ModelConfig::miniature();
    let full = random_model(base.clone(), 21);
    full.save(dir.path()).unwrap();
    let examples = encoded(&base, 3, 21);
    for v in Variant::ALL {
        let cfg = base.clone().with_variant(v);
        assert_eq!(cfg.head_input_dim(), base.head_input_dim());
        let fresh = Dbpman::new(cfg.clone(), 0).unwrap();
        let tr = fresh.trace(&examples[0]).unwrap();
        assert_eq!(tr.head_input.len(), base.head_input_dim());

        let mut store = ParamStore::new();
        for (_, name, t) in full.store.iter() {
            store.insert(name, t.clone()).unwrap();
        }
        let moved = Dbpman::from_store(cfg, store).unwrap();
        assert_eq!(moved.store, full.store);
    }
    let loaded = Dbpman::load(dir.path()).unwrap();
    assert_eq!(loaded.store, full.store);
    assert_eq!(loaded.config, full.config);
    assert_eq!(loaded.predict(&examples, 2).unwrap(), full.predict(&examples, 2).unwrap());
}

#[test]
fn graph_and_value_softmax_agree_for_scores() {
    // the second-level scores in a trace are a softmax of the score network
    let cfg = ModelConfig::miniature();
    let m = random_model(cfg.clone(), 22);
    let ex = &encoded(&cfg, 1, 22)[0];
    let tr = m.trace(ex).unwrap();
    let mut g = Graph::new(&m.store);
    let x = g.constant(Tensor::row(vec![0.0; 12]));
    let logits = m.pem_score.forward(&mut g, x).unwrap();
    let s = g.softmax_rows(logits);
    assert!((g.value(s).data().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    assert_eq!(tr.pem_scores.len(), cfg.t);
}
