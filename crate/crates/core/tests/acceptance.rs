//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers.
//!
//! 1. Gradient correctness of the full classifier loss (64-bit check)
//! 2. Projection exactness against an independent linear scan
//! 3. Desk-scale attack efficacy on the synthetic keyword corpus
//! 4. Small-instance oracle: provably-foolable inputs are actually fooled
//! 5. α-tradeoff direction: similarity rises and token error falls with α
//! 6. Determinism: identical seeds give byte-identical reports
//! 7. Algorithmic contracts on randomized attack runs

use bsat_core::attack::{
    block_sparse_loss, run_attack, run_attack_traced, AttackConfig, AttackStatus,
};
use bsat_core::harness::{
    evaluate_attack, generate_keyword_corpus, similarity_proxy, sweep_alpha, LabeledDataset,
    SyntheticConfig,
};
use bsat_core::model::{
    evaluate_accuracy, train, ClassifierModel, FrozenModel, GraphInput, MeanPoolLinear,
    ModelConfig, TargetModel, TrainConfig,
};
use bsat_core::numerics::{grad_check, slice_dot, slice_l2_norm, Tensor};
use bsat_core::vocab::{EmbeddingTable, TokenSequence, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

// ---------------------------------------------------------------------------
// shared fixed-seed pipeline (criteria 3, 5, 7)

const CORPUS_SEED: u64 = 0;
const MODEL_SEED: u64 = 7;

struct Pipeline {
    frozen: FrozenModel<f32>,
    test: LabeledDataset,
    test_accuracy: f64,
    build_time: Duration,
}

static PIPELINE: OnceLock<Pipeline> = OnceLock::new();

fn tokenized(ds: &LabeledDataset, vocab: &Vocabulary) -> Vec<(Vec<usize>, usize)> {
    ds.records
        .iter()
        .map(|r| (vocab.tokenize(&r.text).ids, r.label))
        .collect()
}

fn train_pipeline(
    synth: &SyntheticConfig,
    epochs: usize,
    seed: u64,
) -> (FrozenModel<f32>, LabeledDataset, f64) {
    let (train_ds, test_ds) = generate_keyword_corpus(synth).expect("corpus");
    let vocab = Vocabulary::build(train_ds.texts(), 1).expect("vocab");
    let config = ModelConfig {
        vocab_size: vocab.len(),
        dim: 32,
        layers: 2,
        heads: 2,
        max_len: 24,
        classes: 2,
    };
    let mut model = ClassifierModel::<f32>::new(config, seed).expect("model");
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 1e-3,
        seed,
    };
    train(&mut model, &tokenized(&train_ds, &vocab), &cfg).expect("training");
    let acc = evaluate_accuracy(&model, &tokenized(&test_ds, &vocab)).expect("eval");
    let frozen = FrozenModel::freeze(model, vocab).expect("freeze");
    (frozen, test_ds, acc)
}

fn pipeline() -> &'static Pipeline {
    PIPELINE.get_or_init(|| {
        let start = Instant::now();
        let synth = SyntheticConfig {
            train_examples: 1000,
            test_examples: 200,
            seed: CORPUS_SEED,
            ..SyntheticConfig::default()
        };
        let (frozen, test, test_accuracy) = train_pipeline(&synth, 11, MODEL_SEED);
        Pipeline {
            frozen,
            test,
            test_accuracy,
            build_time: start.elapsed(),
        }
    })
}

// ---------------------------------------------------------------------------
// criterion 1

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let config = ModelConfig {
        vocab_size: 40,
        dim: 16,
        layers: 2,
        heads: 2,
        max_len: 8,
        classes: 3,
    };
    let mut model = ClassifierModel::<f64>::new(config, 13).unwrap();
    // A zero classification head would zero most gradients; make it live.
    for p in model.param_tensors_mut() {
        if p.shape() == [16, 3] || p.shape() == [3] {
            for (i, v) in p.data_mut().iter_mut().enumerate() {
                *v = ((i * 5 % 11) as f64 - 5.0) * 0.07;
            }
        }
    }

    let ids = [4usize, 17, 2, 30, 9, 22];
    let rows: Vec<Vec<f64>> = ids
        .iter()
        .map(|&i| model.token_embedding().row(i).to_vec())
        .collect();
    let embeddings = Tensor::from_rows(&rows).unwrap();
    let label = 1usize;

    let mut inputs = vec![embeddings];
    inputs.extend(model.param_tensors().into_iter().cloned());

    let err = grad_check(
        |tape, vars| {
            model.graph_loss(
                tape,
                GraphInput::Embeddings(vars[0]),
                &vars[1..],
                label,
                None,
            )
        },
        &inputs,
        200,
        1e-3,
        101,
    )
    .unwrap();

    let elapsed = start.elapsed();
    assert!(err < 1e-5, "max relative gradient error {err} >= 1e-5");
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 1 gradient correctness: PASS (max rel err {err:.2e} < 1e-5, {} coords, {elapsed:.1?})",
        200
    );
}

// ---------------------------------------------------------------------------
// criterion 2

#[test]
fn criterion_2_projection_exactness() {
    let start = Instant::now();
    let (rows, dim) = (5000usize, 32usize);
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut data: Vec<f32> = (0..rows * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    // Explicit tie cases: exact duplicates at known positions. The lower id
    // must win for queries matching those rows.
    let dup_pairs = [(7usize, 4096usize), (123, 2048), (999, 1000)];
    for &(src, dst) in &dup_pairs {
        let (a, b) = (src * dim, dst * dim);
        let row: Vec<f32> = data[a..a + dim].to_vec();
        data[b..b + dim].copy_from_slice(&row);
    }
    let mut special = vec![false; rows];
    special[0] = true;
    special[1] = true;
    let table = EmbeddingTable::new(Tensor::new(vec![rows, dim], data).unwrap(), special).unwrap();

    // Independent oracle: a fresh scan with freshly computed norms.
    let scan_oracle = |q: &[f32]| -> usize {
        let qn = slice_l2_norm(q);
        let mut best: Option<(usize, f32)> = None;
        for id in 0..rows {
            if table.is_special(id) {
                continue;
            }
            let r = table.row(id);
            let cos = slice_dot(q, r) / (qn * slice_l2_norm(r));
            match best {
                Some((_, b)) if cos <= b => {}
                _ => best = Some((id, cos)),
            }
        }
        best.unwrap().0
    };

    let mut queries: Vec<Vec<f32>> = (0..1000)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    for &(src, _) in &dup_pairs {
        let row: Vec<f32> = table.row(src).to_vec();
        queries.push(row.clone());
        queries.push(row.iter().map(|v| v * 3.0).collect());
    }

    let none = HashSet::new();
    let mut matches = 0usize;
    for q in &queries {
        let got = table.project_nearest(q, &none).unwrap();
        let expect = scan_oracle(q);
        assert_eq!(got, expect, "projection disagrees with the oracle scan");
        matches += 1;
    }
    for &(src, dst) in &dup_pairs {
        let got = table.project_nearest(table.row(dst), &none).unwrap();
        assert_eq!(got, src.min(dst), "tie must break to the lowest id");
    }

    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 2 projection exactness: PASS ({matches}/{} queries exact incl. ties, {elapsed:.1?})",
        queries.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 3

#[test]
fn criterion_3_desk_scale_attack_efficacy() {
    let start = Instant::now();
    let pipe = pipeline();
    assert!(
        pipe.test_accuracy >= 0.9,
        "toy classifier reached only {:.4} test accuracy",
        pipe.test_accuracy
    );

    let report = evaluate_attack(&pipe.frozen, &pipe.test, &AttackConfig::default()).unwrap();
    let agg = &report.aggregates;
    assert!(!agg.degenerate, "degenerate run");
    let after = agg.after_attack_accuracy.unwrap();
    let sim = agg.mean_similarity.unwrap();
    assert!(after <= 0.10, "after-attack accuracy {after:.4} > 0.10");
    assert!(sim >= 0.8, "mean similarity {sim:.4} < 0.8");

    let elapsed = pipe.build_time + start.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 3 desk-scale attack efficacy: PASS (clean acc {:.3}, after-attack {after:.4} <= 0.10, mean sim {sim:.4} >= 0.8, {} evaluated, {elapsed:.1?} incl. training)",
        pipe.test_accuracy, agg.evaluated
    );
}

// ---------------------------------------------------------------------------
// criterion 4

#[test]
fn criterion_4_small_instance_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cfg = AttackConfig {
        similarity_threshold: 0.0,
        ..AttackConfig::default()
    };
    let (dim, words) = (8usize, 8usize); // 8 real tokens + UNK/PAD = 10
    let mut provable = 0usize;
    let mut succeeded = 0usize;
    while provable < 50 {
        let mut rows = vec![vec![0.001; dim], vec![0.002; dim]];
        let mut special = vec![true, true];
        for _ in 0..words {
            rows.push((0..dim).map(|_| rng.random_range(-0.1..0.1)).collect());
            special.push(false);
        }
        let table = EmbeddingTable::new(Tensor::from_rows(&rows).unwrap(), special).unwrap();
        let model = MeanPoolLinear::<f64>::random(dim, 2, rng.random()).unwrap();
        let input = TokenSequence::new(vec![
            rng.random_range(2..words + 2),
            rng.random_range(2..words + 2),
        ]);
        let e = table.embed_sequence(&input).unwrap();
        let label = model.predict(&e).unwrap();

        // Exhaustive substitution proof over all token pairs (Hamming <= 2):
        // a fooling sentence must exist at non-negative similarity.
        let fooling_exists = (2..words + 2).any(|x| {
            (2..words + 2).any(|y| {
                let cand = TokenSequence::new(vec![x, y]);
                let ec = table.embed_sequence(&cand).unwrap();
                model.predict(&ec).unwrap() != label
                    && similarity_proxy(&input, &cand, &table).unwrap() >= cfg.similarity_threshold
            })
        });
        if !fooling_exists {
            continue;
        }
        provable += 1;
        let result = run_attack(&model, &table, &input, label, &cfg).unwrap();
        if result.success {
            succeeded += 1;
            let ec = table.embed_sequence(&result.adversarial).unwrap();
            assert_ne!(model.predict(&ec).unwrap(), label);
        }
    }

    let rate = succeeded as f64 / provable as f64;
    let elapsed = start.elapsed();
    assert!(
        rate >= 0.8,
        "attack succeeded on only {rate:.2} of provable instances"
    );
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 small-instance oracle: PASS ({succeeded}/{provable} provable instances fooled, rate {rate:.2} >= 0.80, {elapsed:.1?})"
    );
}

// ---------------------------------------------------------------------------
// criterion 5

/// Spearman rank correlation (average ranks for ties).
fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut out = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                out[k] = avg;
            }
            i = j + 1;
        }
        out
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..xs.len() {
        num += (rx[i] - mean) * (ry[i] - mean);
        dx += (rx[i] - mean).powi(2);
        dy += (ry[i] - mean).powi(2);
    }
    num / (dx * dy).sqrt()
}

#[test]
fn criterion_5_alpha_tradeoff_direction() {
    let start = Instant::now();
    let pipe = pipeline();
    let mut subset = pipe.test.clone();
    subset.records.truncate(120);

    let alphas = [2.0, 5.0, 8.0, 10.0];
    let rows = sweep_alpha(
        &pipe.frozen,
        &subset,
        &alphas,
        0.15,
        &AttackConfig::default(),
    )
    .unwrap();

    let ters: Vec<f64> = rows.iter().map(|r| r.mean_token_error_rate).collect();
    let sims: Vec<f64> = rows.iter().map(|r| r.mean_similarity).collect();
    for w in ters.windows(2) {
        assert!(
            w[1] <= w[0],
            "token error rate must not increase with α: {ters:?}"
        );
    }
    for w in sims.windows(2) {
        assert!(
            w[1] >= w[0],
            "similarity must not decrease with α: {sims:?}"
        );
    }
    let rho_ter = spearman(&alphas, &ters);
    let rho_sim = spearman(&alphas, &sims);
    assert!(
        rho_ter < 0.0,
        "token error rate should anti-correlate with α"
    );
    assert!(rho_sim > 0.0, "similarity should correlate with α");

    let elapsed = pipe.build_time + start.elapsed();
    assert!(elapsed < Duration::from_secs(900), "took {elapsed:?}");
    println!(
        "ACCEPTANCE 5 alpha tradeoff direction: PASS (ter {ters:?} non-increasing, sim {sims:?} non-decreasing, Spearman ter {rho_ter:.2} / sim {rho_sim:.2}, {elapsed:.1?} incl. training)"
    );
}

// ---------------------------------------------------------------------------
// criterion 6

#[test]
fn criterion_6_determinism_byte_identical_reports() {
    let start = Instant::now();
    let synth = SyntheticConfig {
        train_examples: 300,
        test_examples: 60,
        seed: 5,
        ..SyntheticConfig::default()
    };
    let run = || {
        let (frozen, test_ds, _) = train_pipeline(&synth, 5, 11);
        let report = evaluate_attack(&frozen, &test_ds, &AttackConfig::default()).unwrap();
        report.to_json().unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(
        first, second,
        "two identically seeded pipeline runs diverged"
    );
    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 6 determinism: PASS (two pipeline runs, byte-identical {}-byte reports, {elapsed:.1?})",
        first.len()
    );
}

// ---------------------------------------------------------------------------
// criterion 7

#[test]
fn criterion_7_algorithmic_contracts() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut runs = 0usize;

    for case in 0..48 {
        let dim = rng.random_range(4..10);
        let words = rng.random_range(4..12);
        let classes = rng.random_range(2..4);
        let mut rows = vec![vec![0.001; dim], vec![0.002; dim]];
        let mut special = vec![true, true];
        for _ in 0..words {
            rows.push((0..dim).map(|_| rng.random_range(-0.1..0.1)).collect());
            special.push(false);
        }
        let table = EmbeddingTable::new(Tensor::from_rows(&rows).unwrap(), special).unwrap();
        let model = MeanPoolLinear::<f64>::random(dim, classes, rng.random()).unwrap();

        let n = rng.random_range(1..6);
        let input = TokenSequence::new((0..n).map(|_| rng.random_range(2..words + 2)).collect());
        let label = if case % 3 == 0 {
            rng.random_range(0..classes) // sometimes mismatched -> skipped path
        } else {
            let e = table.embed_sequence(&input).unwrap();
            model.predict(&e).unwrap()
        };
        let cfg = AttackConfig {
            max_iterations: rng.random_range(20..120),
            similarity_threshold: [0.0, 0.5, 0.8][case % 3],
            stall_patience: rng.random_range(5..30),
            ..AttackConfig::default()
        };

        let (result, trace) = run_attack_traced(&model, &table, &input, label, &cfg).unwrap();
        runs += 1;

        // Length preservation.
        assert_eq!(result.adversarial.len(), input.len());
        // Buffer soundness: no sentence accepted twice, original never re-accepted.
        let unique: HashSet<&Vec<usize>> = trace.accepted.iter().collect();
        assert_eq!(unique.len(), trace.accepted.len(), "duplicate acceptance");
        assert!(!trace.accepted.contains(&input.ids), "original re-accepted");
        // Budget.
        assert!(result.iterations <= cfg.max_iterations);
        // Success soundness, re-verified from scratch.
        if result.success {
            assert_eq!(result.status, AttackStatus::Succeeded);
            let e_adv = table.embed_sequence(&result.adversarial).unwrap();
            assert_ne!(model.predict(&e_adv).unwrap(), label);
            let sim = similarity_proxy(&input, &result.adversarial, &table).unwrap();
            assert!(sim >= cfg.similarity_threshold);
            assert!(result.token_error_rate > 0.0);
        }
        if result.status == AttackStatus::SkippedAlreadyMisclassified {
            assert_eq!(result.adversarial, input);
            assert_eq!(result.iterations, 0);
        }
    }

    // Block-sparsity positivity: zero exactly on the zero perturbation.
    for _ in 0..50 {
        let n = rng.random_range(1..6);
        let d = rng.random_range(1..8);
        let mut r = Tensor::<f64>::zeros(vec![n, d]);
        assert_eq!(block_sparse_loss(&r), 0.0);
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..d));
        let v: f64 = rng.random_range(0.01..2.0);
        r.data_mut()[i * d + j] = v;
        assert!(block_sparse_loss(&r) > 0.0);
        assert!((block_sparse_loss(&r) - v).abs() < 1e-12);
    }

    let elapsed = start.elapsed();
    println!(
        "ACCEPTANCE 7 algorithmic contracts: PASS ({runs} randomized runs + 50 block-sparsity cases, {elapsed:.1?})"
    );
}
