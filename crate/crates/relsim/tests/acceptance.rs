//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use ndarray::Array1;
use rand::Rng;
use relsim::analysis::{distracting_rank_histogram, loo_agreement, permutation_pvalue, spearman, AnnotationTable};
use relsim::factdist::{self, FactDistParams, LogProbCache};
use relsim::kb::{self, CrpConfig, TripleStore};
use relsim::kge::{self, temperature_schedule, KgeConfig, NegSampler, NegSamplerConfig};
use relsim::margin::{cross_entropy_loss, softmax_margin_loss, MarginSchedule};
use relsim::redundancy::{draw_proposal_pairs, estimate_precision, estimate_recall, exact_pr, EstimatorSample, PairLabels};
use relsim::similarity::{self, baseline_similarity_matrix, kl_exact, kl_mc, BaselineEmbeddings, SimilarityMatrix};
use relsim::util::{mix_seed, rng_from};

use common::{best_f1, quick_factdist_config, shifted_kb, structured_kb, train_factdist};

fn check(criterion: u32, name: &str, pass: bool) {
    println!(
        "[{}] criterion {criterion:02}: {name}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion:02} ({name}) failed");
}

/// 20-entity, 5-relation store used by the normalization and KL criteria.
fn small_store() -> TripleStore {
    let mut rows = Vec::new();
    for k in 0..5usize {
        for i in 0..20usize {
            rows.push((format!("e{i}"), format!("r{k}"), format!("e{}", (i + 3 * k + 1) % 20)));
        }
    }
    TripleStore::from_named_triples(&rows).unwrap()
}

fn small_trained_params(max_epochs: usize, seed: u64) -> FactDistParams {
    let store = small_store();
    let split = kb::split_validation(&store, 0.15, seed).unwrap();
    let config = factdist::TrainConfig {
        embedding_dim: 8,
        hidden_dim: 16,
        learning_rate: 5e-3,
        batch_size: 32,
        max_epochs,
        patience: 8,
        seed,
        ..factdist::TrainConfig::default()
    };
    factdist::train(&split.train, &split.valid, &config).unwrap()
}

#[test]
fn criterion_01_normalization() {
    let params = small_trained_params(5, 1);
    let mut worst: f64 = 0.0;
    let mut cache = LogProbCache::new(&params);
    for r in 0..5u32 {
        let mut total = 0.0;
        for h in 0..20u32 {
            for t in 0..20u32 {
                total += cache.log_prob(h, t, r).unwrap().exp();
            }
        }
        worst = worst.max((total - 1.0).abs());
    }
    check(1, &format!("P(h,t|r) sums to 1 (worst deviation {worst:.2e})"), worst < 1e-6);
}

#[test]
fn criterion_02_gradient_oracle() {
    // fact-distribution gradients on a 5-entity fixture
    let mut params = FactDistParams::init(5, 3, 3, 4, 7);
    let batch = vec![
        kb::Triple::new(0, 0, 1),
        kb::Triple::new(2, 1, 3),
        kb::Triple::new(4, 2, 0),
        kb::Triple::new(1, 0, 4),
    ];
    let (_, grads) = factdist::nll_loss_and_grads(&params, &batch).unwrap();
    let eps = 1e-6;
    let mut worst_rel: f64 = 0.0;
    let flat_grads: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    for ti in 0..10 {
        for j in 0..flat_grads[ti].len() {
            let orig = params.tensors()[ti][j];
            params.tensors_mut()[ti][j] = orig + eps;
            let (lp, _) = factdist::nll_loss_and_grads(&params, &batch).unwrap();
            params.tensors_mut()[ti][j] = orig - eps;
            let (lm, _) = factdist::nll_loss_and_grads(&params, &batch).unwrap();
            params.tensors_mut()[ti][j] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let g = flat_grads[ti][j];
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
            worst_rel = worst_rel.max(rel);
        }
    }

    // softmax-margin gradients on a 3-class fixture
    let logits = ndarray::array![0.4, -1.2, 0.9];
    let costs = ndarray::array![0.0, 2.0, 0.5];
    let (_, grad) = softmax_margin_loss(logits.view(), 0, costs.view()).unwrap();
    for k in 0..3 {
        let mut plus = logits.clone();
        plus[k] += eps;
        let mut minus = logits.clone();
        minus[k] -= eps;
        let (lp, _) = softmax_margin_loss(plus.view(), 0, costs.view()).unwrap();
        let (lm, _) = softmax_margin_loss(minus.view(), 0, costs.view()).unwrap();
        let fd = (lp - lm) / (2.0 * eps);
        let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
        worst_rel = worst_rel.max(rel);
    }
    check(2, &format!("analytic gradients match finite differences (worst rel {worst_rel:.2e})"), worst_rel < 1e-4);
}

#[test]
fn criterion_03_kl_mc_vs_exact() {
    let params = small_trained_params(60, 3);
    let mut worst: f64 = 0.0;
    let mut self_ok = true;
    for a in 0..5u32 {
        for b in 0..5u32 {
            let mc = kl_mc(&params, a, b, 100_000, mix_seed(&[11, a as u64, b as u64])).unwrap();
            if a == b {
                self_ok &= mc == 0.0;
            } else {
                let exact = kl_exact(&params, a, b, 500).unwrap();
                worst = worst.max((mc - exact).abs());
            }
        }
    }
    check(3, &format!("MC KL within 0.05 of exact on all pairs (worst {worst:.3}), self-KL exactly 0"), worst < 0.05 && self_ok);
}

#[test]
fn criterion_04_toy_merge_directionality() {
    let base = structured_kb(100);
    let mut wins = 0;
    for seed in 0..10u64 {
        let crp = CrpConfig { alpha: 1.0, min_count: 20, seed };
        let (split, truth) = kb::crp_split(&base, &crp).unwrap();

        let params = train_factdist(&split, &quick_factdist_config(seed));
        let ours = similarity::similarity_matrix(
            &params,
            split.relation_names(),
            128,
            seed,
            "factdist",
        )
        .unwrap();
        let ours_f1 = best_f1(&ours, &truth);

        let kcfg = KgeConfig { dim: 16, epochs: 50, seed, ..KgeConfig::default() };
        let transe = kge::train_kge(&split, &kcfg, &NegSampler::Uniform).unwrap();
        let baseline = baseline_similarity_matrix(
            &BaselineEmbeddings::TransE(transe.relation_emb.clone()),
            split.relation_names(),
            "transe-cosine",
        )
        .unwrap();
        let baseline_f1 = best_f1(&baseline, &truth);

        if ours_f1 > baseline_f1 {
            wins += 1;
        }
    }
    check(4, &format!("fact-distribution merge F1 beats TransE cosine in {wins}/10 seeds"), wins >= 8);
}

#[test]
fn criterion_05_estimator_consistency() {
    // fully enumerable universe: 15 relations, 105 pairs
    let n = 15usize;
    let mut values = ndarray::Array2::from_elem((n, n), 0.0);
    let mut labels = PairLabels::new();
    for i in 0..n {
        values[[i, i]] = 1.0;
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let x = mix_seed(&[23, a as u64, b as u64]) as f64 / u64::MAX as f64;
            let s = 0.05 + 0.9 * x;
            values[[a, b]] = s;
            values[[b, a]] = s;
            labels.insert((a as u32, b as u32), if (0.4..0.6).contains(&s) { (a + b) % 2 == 0 } else { s >= 0.5 });
        }
    }
    let sim = SimilarityMatrix::from_values(
        values,
        (0..n).map(|i| format!("r{i}")).collect(),
        0,
        0,
        "universe".into(),
    )
    .unwrap();
    let lambda = 0.55;
    let (exact_p, exact_r) = exact_pr(&sim, &labels, lambda).unwrap();
    let exact_p = exact_p.unwrap();

    let mut recall_estimates = Vec::new();
    for seed in 0..200u64 {
        let batch: Vec<EstimatorSample> = draw_proposal_pairs(&sim, 1000, seed)
            .unwrap()
            .into_iter()
            .map(|(pair, q)| EstimatorSample { pair, label: labels[&pair], proposal_weight: q })
            .collect();
        recall_estimates.push(estimate_recall(&batch, |a, b| sim.get(a, b) >= lambda).unwrap());
    }
    let recall_mean = recall_estimates.iter().sum::<f64>() / recall_estimates.len() as f64;

    let mut above = Vec::new();
    for a in 0..n as u32 {
        for b in (a + 1)..n as u32 {
            if sim.get(a, b) >= lambda {
                above.push((a, b));
            }
        }
    }
    let mut rng = rng_from(&[9]);
    let precision_batch: Vec<bool> =
        (0..500).map(|_| labels[&above[rng.random_range(0..above.len())]]).collect();
    let precision_est = estimate_precision(&precision_batch).unwrap();

    let recall_err = (recall_mean - exact_r).abs();
    let precision_err = (precision_est - exact_p).abs();
    check(
        5,
        &format!("recall estimator mean within 0.05 (err {recall_err:.3}), precision within 0.05 (err {precision_err:.3})"),
        recall_err < 0.05 && precision_err < 0.05,
    );
}

#[test]
fn criterion_06_temperature_schedules() {
    let sampling = NegSamplerConfig::default();
    let mut ok = true;
    let expected = [
        (0usize, 8192.0),
        (199, 8192.0),
        (200, 4096.0),
        (399, 4096.0),
        (400, 2048.0),
        (1799, 32.0),
        (1800, 16.0),
        (5000, 16.0),
    ];
    for &(epoch, want) in &expected {
        ok &= temperature_schedule(epoch, &sampling) == want;
    }
    let margin = MarginSchedule::default();
    ok &= margin.temperature(0) == 64.0;
    ok &= (margin.temperature(1) - 51.2).abs() < 1e-12;
    ok &= (margin.temperature(2) - 40.96).abs() < 1e-12;
    ok &= margin.temperature(7) == 16.0;
    ok &= margin.temperature(1000) == 16.0;
    check(6, "annealing schedules reproduce the published sequences", ok);
}

#[test]
fn criterion_07_similarity_annealed_negatives() {
    // 8 groups x 5 shifts x 125 rows = 5000 triples: siblings within a group
    // overlap heavily in fact space yet admit distinct translation vectors,
    // so concentrating relation negatives on them carries signal.
    let base = shifted_kb(8, 5, 125);
    let split = kb::split_validation(&base, 0.1, 40).unwrap();

    let params = train_factdist(&base, &quick_factdist_config(40));
    let sim = similarity::similarity_matrix(&params, base.relation_names(), 256, 40, "factdist")
        .unwrap();

    let mut uniform_hits = 0.0;
    let mut annealed_hits = 0.0;
    for seed in 0..5u64 {
        let cfg = KgeConfig { dim: 24, epochs: 150, learning_rate: 0.05, seed, ..KgeConfig::default() };
        let uni = kge::train_kge(&split.train, &cfg, &NegSampler::Uniform).unwrap();
        let uni_report = kge::filtered_relation_ranking(&uni, &base, &split.valid).unwrap();
        uniform_hits += uni_report.hits1;

        let ann_sampler = NegSampler::Similarity {
            sim: &sim,
            cfg: NegSamplerConfig {
                temperature_init: 8192.0,
                halve_every: 15,
                temperature_floor: 8.0,
            },
        };
        let ann = kge::train_kge(&split.train, &cfg, &ann_sampler).unwrap();
        let ann_report = kge::filtered_relation_ranking(&ann, &base, &split.valid).unwrap();
        annealed_hits += ann_report.hits1;
    }
    uniform_hits /= 5.0;
    annealed_hits /= 5.0;
    check(
        7,
        &format!("annealed Hits@1 {annealed_hits:.3} >= uniform {uniform_hits:.3} (5-seed mean)"),
        annealed_hits >= uniform_hits,
    );
}

#[test]
fn criterion_08_softmax_margin_reductions() {
    let mut rng = rng_from(&[61]);
    let zero = Array1::zeros(7);
    let mut bitwise = true;
    let mut dominates = true;
    for _ in 0..10_000 {
        let logits: Array1<f64> = Array1::from_iter((0..7).map(|_| rng.random_range(-10.0..10.0)));
        let gold = rng.random_range(0..7u32);
        let (lm0, gm0) = softmax_margin_loss(logits.view(), gold, zero.view()).unwrap();
        let (lc, gc) = cross_entropy_loss(logits.view(), gold).unwrap();
        bitwise &= lm0.to_bits() == lc.to_bits();
        bitwise &= gm0.iter().zip(gc.iter()).all(|(a, b)| a.to_bits() == b.to_bits());

        let mut costs: Array1<f64> = Array1::from_iter((0..7).map(|_| rng.random_range(0.0..6.0)));
        costs[gold as usize] = 0.0;
        let (lm, _) = softmax_margin_loss(logits.view(), gold, costs.view()).unwrap();
        dominates &= lm >= lc - 1e-12;
    }
    check(8, "alpha=0 bitwise-matches cross-entropy; positive costs dominate it", bitwise && dominates);
}

#[test]
fn criterion_09_error_analysis_skew() {
    let base = structured_kb(100);
    let params = train_factdist(&base, &quick_factdist_config(90));
    let sim = similarity::similarity_matrix(&params, base.relation_names(), 256, 90, "factdist")
        .unwrap();

    let mut passes = 0;
    for seed in 0..5u64 {
        let split = kb::split_validation(&base, 0.1, seed).unwrap();
        let cfg = KgeConfig { dim: 16, epochs: 40, seed, ..KgeConfig::default() };
        let model = kge::train_kge(&split.train, &cfg, &NegSampler::Uniform).unwrap();
        let report = kge::filtered_relation_ranking(&model, &base, &split.valid).unwrap();
        let hist = distracting_rank_histogram(&report, &sim).unwrap();
        if hist.total_distractors() == 0 {
            continue;
        }
        let top3 = hist.window_mass(1, 3);
        let max_rank = hist.counts.keys().max().copied().unwrap_or(1);
        let mut dominated = true;
        for lo in 2..=max_rank {
            if hist.window_mass(lo, lo + 2) >= top3 {
                dominated = false;
                break;
            }
        }
        if dominated {
            passes += 1;
        }
    }
    check(9, &format!("ranks 1-3 dominate every other window in {passes}/5 seeds"), passes >= 4);
}

#[test]
fn criterion_10_statistical_ops() {
    let s = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let spearman_ok = (s - 0.8).abs() < 1e-12;

    let table = AnnotationTable::new(
        (0..6).map(|i| (format!("a{i}"), format!("b{i}"))).collect(),
        ndarray::Array2::from_shape_fn((6, 4), |(i, _)| (i % 5) as f64),
    )
    .unwrap();
    let loo = loo_agreement(&table).unwrap();
    let loo_ok = (loo.mean_r - 1.0).abs() < 1e-12 && loo.std == 0.0;

    // 50 pairs, model scores equal to human means
    let mut rng = rng_from(&[15]);
    let human: Vec<f64> = (0..50).map(|_| rng.random_range(0.0..4.0)).collect();
    let p = permutation_pvalue(&human, &human.clone(), 10_000, 2).unwrap();
    let p_ok = p < 0.01;

    check(
        10,
        &format!("spearman hand value, identical-subject agreement (1, 0), permutation p {p:.1e}"),
        spearman_ok && loo_ok && p_ok,
    );
}

#[test]
fn criterion_11_determinism() {
    use relsim::cli::{run_pipeline, RunConfig, Stage};

    let tmp = tempfile::tempdir().unwrap();
    let kb_path = tmp.path().join("kb.tsv");
    let store = structured_kb(20);
    let mut tsv = String::new();
    for t in store.triples() {
        tsv.push_str(&format!(
            "{}\t{}\t{}\n",
            store.entity_names()[t.head as usize],
            store.relation_names()[t.relation as usize],
            store.entity_names()[t.tail as usize]
        ));
    }
    std::fs::write(&kb_path, tsv).unwrap();

    let config: RunConfig = serde_json::from_value(serde_json::json!({
        "seed": 5,
        "data": { "input": kb_path, "valid_fraction": 0.1 },
        "factdist": {
            "embedding_dim": 8, "hidden_dim": 16, "learning_rate": 0.005,
            "batch_size": 64, "max_epochs": 3, "patience": 3,
            "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
            "seed": 0, "pretrained_init": null
        },
        "sim": { "samples": 64 },
        "kge": {
            "kind": "transe", "dim": 8, "margin": 1.0, "distance": "l1",
            "learning_rate": 0.01, "epochs": 3, "batch_size": 64,
            "seed": 0, "negative_mode": "uniform"
        },
        "redun": { "lambda": 0.5 },
        "margin": {
            "learning_rate": 0.1, "epochs": 3, "seed": 0, "alpha": 9.0,
            "schedule": { "temperature_init": 64.0, "decay": 0.8, "floor": 16.0 }
        }
    }))
    .unwrap();
    let stages = [
        Stage::Data,
        Stage::Factdist,
        Stage::Sim,
        Stage::Kge,
        Stage::Redun,
        Stage::Analyze,
        Stage::Margin,
    ];
    let run_a = tmp.path().join("run-a");
    let run_b = tmp.path().join("run-b");
    run_pipeline(&config, &stages, &run_a).unwrap();
    run_pipeline(&config, &stages, &run_b).unwrap();
    let manifest_a = std::fs::read_to_string(run_a.join("manifest-run.json")).unwrap();
    let manifest_b = std::fs::read_to_string(run_b.join("manifest-run.json")).unwrap();
    let ckpt_a = std::fs::read(run_a.join("factdist/entity_emb.bin")).ok();
    let ckpt_b = std::fs::read(run_b.join("factdist/entity_emb.bin")).ok();
    check(
        11,
        "identical configs reproduce bitwise-identical artifacts",
        manifest_a == manifest_b && ckpt_a.is_some() && ckpt_a == ckpt_b,
    );
}
