//! Acceptance suite: thirteen numbered criteria covering gradient exactness,
//! metric oracles, scale-freeness, cache non-interference, aleatoric
//! recovery, epistemic invariance, deterioration monotonicity, safe
//! retrieval, schedule exactness, loss-source equivalence, map sanity, and
//! the zero-init guard. Each test prints one `criterion NN [PASS|FAIL]` line.
//!
//! The synthetic fixtures are frozen after calibration:
//!
//! * canonical ramp fixture — 2 classes in 8-d at means ±e1, sigma 0.35,
//!   boundary-ramp label noise (max_flip 0.42, width 0.65), 4000 training
//!   samples in 4 views, 2000 evaluation samples, heads of hidden width 64
//!   trained 2000 steps (batch 256, warmup 100) with the default schedule.
//!   The ramp puts ambiguity in each class interior on top of the overlap at
//!   the boundary, so squared-error training has structure to recover while
//!   plain ranking must not chase far-field noise (its leeway ties those
//!   pairs out). Retrieval checks use dedicated 6000-query/6000-database
//!   draws: the gains being resolved are about one error point, which
//!   smaller evaluation sets cannot separate from sampling noise.
//!
//! * separable fixture — same geometry with no label noise, sigma 0.6,
//!   12000 training samples in 4 views, 8000 evaluation samples. Squared
//!   error needs the larger pools here: with fewer unique samples the head
//!   memorizes per-sample loss noise near the boundary, and with a smaller
//!   evaluation set the AUROC estimate is too loose to call a 0.05 band.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uhead::cache::{build_cache, CacheBuildOptions, CacheContents, CacheReader};
use uhead::eval::{
    auroc, deterioration_sweep, id_ood_auroc, r_auroc, recall_at_1, spearman, Perturbation,
};
use uhead::head::{ActivationConfig, UncertaintyHead};
use uhead::losses::LossVariant;
use uhead::matrix::Matrix;
use uhead::optim::{AdamWConfig, CosineSchedule, OptimizerKind};
use uhead::retrieval::{clean_database, safe_retrieve, CleanMode, RetrievalPolicy};
use uhead::seeding::derive_seed;
use uhead::synth::{oracle_ceiling_r_auroc, NoiseField, SyntheticDataset, SyntheticOracle};
use uhead::trainer::{train_head, LossSource, TrainConfig};
use uhead::viz::{tsne_conditionals, tsne_embed, TsneConfig};

// Canonical ramp fixture.
const DIM: usize = 8;
const SIGMA: f64 = 0.35;
const RAMP: NoiseField = NoiseField::BoundaryRamp {
    max_flip: 0.42,
    width: 0.65,
};
const N_TRAIN: usize = 4000;
const N_EVAL: usize = 2000;
const N_RETRIEVAL: usize = 6000;
const TRAIN_VIEWS: u16 = 4;
const HIDDEN: usize = 64;
const BATCH: usize = 256;
const STEPS: usize = 2000;
const WARMUP: usize = 100;
const LEEWAY: f32 = 0.02;
const MARGIN: f32 = 0.1;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// Separable fixture (no label noise).
const SEP_SIGMA: f64 = 0.6;
const SEP_N_TRAIN: usize = 12000;
const SEP_N_EVAL: usize = 8000;

// Criterion 5's band, shared by criterion 6.
const R_AUROC_BAND: f64 = 0.05;
const SPEARMAN_FLOOR: f64 = 0.8;

fn report(id: u8, name: &str, pass: bool, detail: &str) {
    use std::io::Write;
    let verdict = if pass { "PASS" } else { "FAIL" };
    // Written straight to the process stdout rather than through print!, so
    // the verdict lines survive the harness's per-test capture and show up
    // in plain `cargo test` output, one line per criterion.
    let line = format!("criterion {id:02} [{verdict}] {name}: {detail}\n");
    std::io::stdout().write_all(line.as_bytes()).unwrap();
    assert!(pass, "criterion {id:02} ({name}) failed: {detail}");
}

fn default_schedule() -> CosineSchedule {
    CosineSchedule::new(0.0001, 0.0028, 1e-8, WARMUP, STEPS).unwrap()
}

fn fixture_oracle(noise: NoiseField, sigma: f64, seed: u64, label: &str) -> SyntheticOracle {
    SyntheticOracle::new(2, DIM, sigma, noise, derive_seed(seed, label, 0)).unwrap()
}

/// Generates a training split, writes its cache, and trains a fresh head.
fn train_on(
    dir: &Path,
    noise: NoiseField,
    sigma: f64,
    n_train: usize,
    variant: LossVariant,
    seed: u64,
    set_label: &str,
) -> UncertaintyHead {
    let oracle = fixture_oracle(noise, sigma, seed, set_label);
    let data = oracle.generate(n_train, TRAIN_VIEWS).unwrap();
    let cache_path = dir.join(format!("train-{seed}-{set_label}.cache"));
    build_cache(
        &cache_path,
        data.epochs,
        data.labels,
        2,
        Some(&oracle.bayes_classifier()),
        CacheBuildOptions {
            store_losses: true,
            store_logits: true,
        },
    )
    .unwrap();

    let mut reader = CacheReader::open(&cache_path).unwrap();
    let mut head =
        UncertaintyHead::init(DIM, HIDDEN, derive_seed(seed, "head-init", 0)).unwrap();
    let config = TrainConfig {
        loss_variant: variant,
        loss_source: LossSource::StoredLosses,
        batch_size: BATCH,
        total_steps: STEPS,
        optimizer: OptimizerKind::AdamW(AdamWConfig::default()),
        schedule: default_schedule(),
        seed: derive_seed(seed, "trainer", 0),
        checkpoint_every: 0,
    };
    train_head(&mut reader, &mut head, &config, None).unwrap();
    head
}

fn eval_split(noise: NoiseField, sigma: f64, n: usize, seed: u64, label: &str) -> SyntheticDataset {
    fixture_oracle(noise, sigma, seed, label).generate(n, 1).unwrap()
}

fn widen(values: &[f32]) -> Vec<f64> {
    values.iter().map(|&v| f64::from(v)).collect()
}

/// Canonical per-seed pipeline: L2-trained head plus its evaluation split.
fn canonical_run(dir: &Path, seed: u64) -> (UncertaintyHead, SyntheticDataset, Vec<f32>) {
    let head = train_on(
        dir,
        RAMP,
        SIGMA,
        N_TRAIN,
        LossVariant::L2Regression,
        seed,
        "canonical-train",
    );
    let eval = eval_split(RAMP, SIGMA, N_EVAL, seed, "canonical-eval");
    let uncertainties = head.predict(&eval.base_f32()).unwrap();
    (head, eval, uncertainties)
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(101, "grad-check", 0));
    let mut max_rel = 0.0f64;
    let mut trials = 0usize;
    while trials < 100 {
        let d = rng.gen_range(2..=10usize);
        let h = rng.gen_range(2..=16usize);
        let n = rng.gen_range(1..=4usize);
        let head = UncertaintyHead::init(d, h, rng.gen()).unwrap().to_f64();
        let data: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch = Matrix::from_vec(n, d, data).unwrap();
        let output_grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let trace = head.forward(&batch).unwrap();
        let analytic = head.backward(&trace, &output_grad).unwrap();
        let grads: [&[f64]; 6] = [
            analytic.w1.as_slice(),
            &analytic.b1,
            analytic.w2.as_slice(),
            &analytic.b2,
            &analytic.w3,
            std::slice::from_ref(&analytic.b3),
        ];

        let objective = |h: &UncertaintyHead<f64>| -> f64 {
            h.forward(&batch)
                .unwrap()
                .uncertainties()
                .iter()
                .zip(&output_grad)
                .map(|(u, g)| u * g)
                .sum()
        };
        let step = 1e-5;
        for t in 0..6 {
            for idx in 0..grads[t].len() {
                let mut plus = head.clone();
                plus.parameter_tensors_mut()[t][idx] += step;
                let mut minus = head.clone();
                minus.parameter_tensors_mut()[t][idx] -= step;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * step);
                let denom = grads[t][idx].abs().max(numeric.abs()).max(1e-6);
                max_rel = max_rel.max((grads[t][idx] - numeric).abs() / denom);
            }
        }
        trials += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        1,
        "analytic gradients match central differences",
        max_rel < 1e-4 && elapsed < 30.0,
        &format!("max relative error {max_rel:.3e} over 100 trials in {elapsed:.1}s"),
    );
}

#[test]
fn criterion_02_auroc_equals_pair_count_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(102, "auroc-oracle", 0));
    let mut checked = 0usize;
    let mut exact = true;
    while checked < 1000 {
        let n = rng.gen_range(2..=12usize);
        // Half-integer score grid so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=6) as f64 * 0.5).collect();
        let positives: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let n_pos = positives.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == n {
            continue;
        }
        let fast = auroc(&scores, &positives).unwrap();
        let mut numerator = 0.0f64;
        for (i, &pi) in positives.iter().enumerate() {
            if !pi {
                continue;
            }
            for (j, &pj) in positives.iter().enumerate() {
                if pj {
                    continue;
                }
                numerator += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let oracle = numerator / (n_pos as f64 * (n - n_pos) as f64);
        if fast != oracle {
            exact = false;
            break;
        }
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        2,
        "sort-based AUROC equals the exhaustive pair count",
        exact && elapsed < 10.0,
        &format!("1000 instances (n <= 12) with ties, bit-equal, in {elapsed:.1}s"),
    );
}

#[test]
fn criterion_03_scaling_losses_leaves_ranking_training_unchanged() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let oracle = fixture_oracle(RAMP, SIGMA, 103, "scale-free");
    let data = oracle.generate(400, 2).unwrap();
    let base_path = dir.path().join("base.cache");
    build_cache(
        &base_path,
        data.epochs,
        data.labels,
        2,
        Some(&oracle.bayes_classifier()),
        CacheBuildOptions {
            store_losses: true,
            store_logits: false,
        },
    )
    .unwrap();

    let mut scaled = CacheContents::read(&base_path).unwrap();
    for losses in scaled.losses.as_mut().unwrap() {
        for l in losses.iter_mut() {
            *l *= 10.0;
        }
    }
    let scaled_path = dir.path().join("scaled.cache");
    scaled.write(&scaled_path).unwrap();

    let config = TrainConfig {
        loss_variant: LossVariant::RankingMargin {
            margin: MARGIN,
            leeway: 0.0,
        },
        loss_source: LossSource::StoredLosses,
        batch_size: 100,
        total_steps: 150,
        optimizer: OptimizerKind::AdamW(AdamWConfig::default()),
        schedule: CosineSchedule::new(0.0001, 0.0028, 1e-8, 10, 150).unwrap(),
        seed: derive_seed(103, "trainer", 0),
        checkpoint_every: 0,
    };
    let mut heads = Vec::new();
    for path in [&base_path, &scaled_path] {
        let mut reader = CacheReader::open(path).unwrap();
        let mut head = UncertaintyHead::init(DIM, 16, derive_seed(103, "head-init", 0)).unwrap();
        train_head(&mut reader, &mut head, &config, None).unwrap();
        heads.push(head);
    }
    let identical = (0..6).all(|t| {
        let a = heads[0].parameter_tensors()[t];
        let b = heads[1].parameter_tensors()[t];
        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let elapsed = start.elapsed().as_secs_f64();
    report(
        3,
        "losses x10 trains a bitwise-identical ranking head (leeway 0)",
        identical && elapsed < 120.0,
        &format!("all 6 parameter tensors bit-equal in {elapsed:.1}s"),
    );
}

#[test]
fn criterion_04_training_never_touches_the_cache_or_its_recall() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = fixture_oracle(RAMP, SIGMA, 104, "non-interference");
    let data = oracle.generate(600, 2).unwrap();
    let cache_path = dir.path().join("fixed.cache");
    build_cache(
        &cache_path,
        data.epochs,
        data.labels,
        2,
        Some(&oracle.bayes_classifier()),
        CacheBuildOptions {
            store_losses: true,
            store_logits: true,
        },
    )
    .unwrap();

    let bytes_before = std::fs::read(&cache_path).unwrap();
    let mut reader = CacheReader::open(&cache_path).unwrap();
    let embeddings = reader.epoch_embeddings(0).unwrap();
    let labels = reader.epoch_labels(0).unwrap();
    let recall_before = recall_at_1(&embeddings, &labels).unwrap();

    let mut head = UncertaintyHead::init(DIM, 32, derive_seed(104, "head-init", 0)).unwrap();
    let config = TrainConfig {
        loss_variant: LossVariant::L2Regression,
        loss_source: LossSource::StoredLosses,
        batch_size: 200,
        total_steps: 300,
        optimizer: OptimizerKind::AdamW(AdamWConfig::default()),
        schedule: CosineSchedule::new(0.0001, 0.0028, 1e-8, 30, 300).unwrap(),
        seed: derive_seed(104, "trainer", 0),
        checkpoint_every: 0,
    };
    train_head(&mut reader, &mut head, &config, None).unwrap();

    let bytes_after = std::fs::read(&cache_path).unwrap();
    let mut reopened = CacheReader::open(&cache_path).unwrap();
    let embeddings_after = reopened.epoch_embeddings(0).unwrap();
    let labels_after = reopened.epoch_labels(0).unwrap();
    let recall_after = recall_at_1(&embeddings_after, &labels_after).unwrap();

    report(
        4,
        "recall@1 and cache bytes identical across head training",
        bytes_before == bytes_after && recall_before.to_bits() == recall_after.to_bits(),
        &format!("recall@1 {recall_before} before and after; file bytes unchanged"),
    );
}

#[test]
fn criterion_05_head_recovers_aleatoric_uncertainty() {
    let dir = tempfile::tempdir().unwrap();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut min_spearman = f64::INFINITY;
    let mut max_seed_seconds = 0.0f64;
    for seed in SEEDS {
        let start = Instant::now();
        let (_, eval, uncertainties) = canonical_run(dir.path(), seed);
        let base = eval.base_f32();
        let ceiling = oracle_ceiling_r_auroc(&base, &eval.labels, &eval.bayes_risk).unwrap();
        let achieved = r_auroc(&base, &eval.labels, &widen(&uncertainties)).unwrap();
        let sp = spearman(&widen(&uncertainties), &eval.bayes_risk).unwrap();
        worst_gap = worst_gap.max(ceiling - achieved);
        min_spearman = min_spearman.min(sp);
        max_seed_seconds = max_seed_seconds.max(start.elapsed().as_secs_f64());
    }
    report(
        5,
        "R-AUROC within 0.05 of the oracle ceiling, Spearman vs Bayes risk > 0.8",
        worst_gap < R_AUROC_BAND && min_spearman > SPEARMAN_FLOOR && max_seed_seconds < 300.0,
        &format!(
            "5 seeds: worst ceiling gap {worst_gap:+.4}, min Spearman {min_spearman:.3}, \
             slowest seed {max_seed_seconds:.1}s"
        ),
    );
}

#[test]
fn criterion_06_both_variants_reach_the_band_without_label_noise() {
    let dir = tempfile::tempdir().unwrap();
    let mut worst = [("squared error", f64::NEG_INFINITY), ("ranking", f64::NEG_INFINITY)];
    for seed in SEEDS {
        let eval = eval_split(NoiseField::None, SEP_SIGMA, SEP_N_EVAL, seed, "separable-eval");
        let base = eval.base_f32();
        let ceiling = oracle_ceiling_r_auroc(&base, &eval.labels, &eval.bayes_risk).unwrap();
        for (slot, variant) in [
            LossVariant::L2Regression,
            LossVariant::RankingMargin {
                margin: MARGIN,
                leeway: LEEWAY,
            },
        ]
        .into_iter()
        .enumerate()
        {
            let head = train_on(
                dir.path(),
                NoiseField::None,
                SEP_SIGMA,
                SEP_N_TRAIN,
                variant,
                seed,
                "separable-train",
            );
            let uncertainties = head.predict(&base).unwrap();
            let achieved = r_auroc(&base, &eval.labels, &widen(&uncertainties)).unwrap();
            worst[slot].1 = worst[slot].1.max(ceiling - achieved);
        }
    }
    report(
        6,
        "squared error and ranking both reach the band within 2000 steps",
        worst.iter().all(|(_, gap)| *gap < R_AUROC_BAND),
        &format!(
            "5 seeds: worst {} gap {:+.4}, worst {} gap {:+.4}",
            worst[0].0, worst[0].1, worst[1].0, worst[1].1
        ),
    );
}

#[test]
fn criterion_07_uncertainty_carries_no_set_membership_signal() {
    let dir = tempfile::tempdir().unwrap();
    let mut low = f64::INFINITY;
    let mut high = f64::NEG_INFINITY;
    for seed in SEEDS {
        let (head, _, id_uncertainties) = canonical_run(dir.path(), seed);
        // A disjoint draw from the same generator: the Bayes-risk
        // distribution matches by construction, so a purely aleatoric head
        // should score the two sets interchangeably.
        let other = eval_split(RAMP, SIGMA, N_EVAL, seed, "canonical-ood");
        let other_uncertainties = head.predict(&other.base_f32()).unwrap();
        let value = id_ood_auroc(&widen(&id_uncertainties), &widen(&other_uncertainties)).unwrap();
        low = low.min(value);
        high = high.max(value);
    }
    report(
        7,
        "ID-vs-OOD AUROC stays in [0.45, 0.55] when risk distributions match",
        low >= 0.45 && high <= 0.55,
        &format!("5 seeds: AUROC range [{low:.3}, {high:.3}]"),
    );
}

#[test]
fn criterion_08_predicted_uncertainty_grows_under_deterioration() {
    let dir = tempfile::tempdir().unwrap();
    let mut all_monotone = true;
    let mut spans = String::new();
    for seed in SEEDS {
        let (head, eval, _) = canonical_run(dir.path(), seed);
        let medians = deterioration_sweep(
            &head,
            &eval.base_f32(),
            Perturbation::GaussianNoise,
            &[0.0, 0.5, 1.0, 2.0],
            derive_seed(seed, "deterioration", 0),
        )
        .unwrap();
        let monotone = medians.windows(2).all(|w| w[0].1 <= w[1].1);
        all_monotone &= monotone;
        spans.push_str(&format!(
            " s{seed}:{:.2}->{:.2}{}",
            medians[0].1,
            medians[3].1,
            if monotone { "" } else { "(!)" }
        ));
    }
    report(
        8,
        "median uncertainty non-decreasing across noise severities",
        all_monotone,
        &format!("severities 0/0.5/1/2, medians{spans}"),
    );
}

#[test]
fn criterion_09_staged_retrieval_interventions_reduce_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut strict = 0usize;
    let mut lines = String::new();
    for seed in SEEDS {
        let (head, _, _) = canonical_run(dir.path(), seed);
        let queries = eval_split(RAMP, SIGMA, N_RETRIEVAL, seed, "retrieval-queries");
        let database = eval_split(RAMP, SIGMA, N_RETRIEVAL, seed, "retrieval-database");
        let q = queries.base_f32();
        let db = database.base_f32();
        let qu = head.predict(&q).unwrap();
        let dbu = head.predict(&db).unwrap();
        let all: Vec<usize> = (0..N_RETRIEVAL).collect();

        let stage = |reject: f64, clean: f64| -> f64 {
            let policy = RetrievalPolicy {
                query_reject_fraction: reject,
                database_clean_fraction: clean,
                clean_mode: CleanMode::GlobalQuantile,
            };
            let retained = if clean > 0.0 {
                clean_database(&db, None, &dbu, &policy).unwrap()
            } else {
                all.clone()
            };
            safe_retrieve(
                &q,
                &qu,
                Some(&queries.labels),
                &db,
                Some(&database.labels),
                &retained,
                &policy,
            )
            .unwrap()
            .error_rate
            .unwrap()
        };
        let baseline = stage(0.0, 0.0);
        let rejected = stage(0.10, 0.0);
        let cleaned = stage(0.10, 0.10);
        if baseline > rejected && rejected > cleaned {
            strict += 1;
        }
        lines.push_str(&format!(" s{seed}:{baseline:.3}>{rejected:.3}>{cleaned:.3}"));
    }
    report(
        9,
        "error rate strictly falls: baseline -> +query gate -> +database clean",
        strict >= 4,
        &format!("{strict}/5 seeds strictly decreasing;{lines}"),
    );
}

#[test]
fn criterion_10_schedule_hits_its_three_endpoints_exactly() {
    let schedule = default_schedule();
    let at_start = schedule.lr_at(0).unwrap();
    let at_peak = schedule.lr_at(WARMUP).unwrap();
    let at_end = schedule.lr_at(STEPS).unwrap();
    let exact = at_start == 0.0001
        && at_peak == 0.0028
        && at_end == 1e-8
        && at_start as f32 == 0.0001f32
        && at_peak as f32 == 0.0028f32
        && at_end as f32 == 1e-8f32;
    report(
        10,
        "lr is 0.0001 at step 0, 0.0028 after warmup, 1e-8 at the end",
        exact,
        &format!("lr(0) = {at_start}, lr({WARMUP}) = {at_peak}, lr({STEPS}) = {at_end}"),
    );
}

#[test]
fn criterion_11_stored_and_recomputed_losses_share_one_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let oracle = fixture_oracle(RAMP, SIGMA, 111, "loss-source");
    let data = oracle.generate(800, 2).unwrap();
    let cache_path = dir.path().join("both.cache");
    build_cache(
        &cache_path,
        data.epochs,
        data.labels,
        2,
        Some(&oracle.bayes_classifier()),
        CacheBuildOptions {
            store_losses: true,
            store_logits: true,
        },
    )
    .unwrap();

    let mut results = Vec::new();
    for source in [LossSource::StoredLosses, LossSource::FromLogits] {
        let mut reader = CacheReader::open(&cache_path).unwrap();
        let mut head = UncertaintyHead::init(DIM, 24, derive_seed(111, "head-init", 0)).unwrap();
        let config = TrainConfig {
            loss_variant: LossVariant::RankingMargin {
                margin: MARGIN,
                leeway: LEEWAY,
            },
            loss_source: source,
            batch_size: 200,
            total_steps: 400,
            optimizer: OptimizerKind::AdamW(AdamWConfig::default()),
            schedule: CosineSchedule::new(0.0001, 0.0028, 1e-8, 40, 400).unwrap(),
            seed: derive_seed(111, "trainer", 0),
            checkpoint_every: 0,
        };
        let log = train_head(&mut reader, &mut head, &config, None).unwrap();
        results.push((head, log));
    }
    let params_equal = (0..6).all(|t| {
        let a = results[0].0.parameter_tensors()[t];
        let b = results[1].0.parameter_tensors()[t];
        a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
    });
    let logs_equal = results[0]
        .1
        .records
        .iter()
        .zip(&results[1].1.records)
        .all(|(a, b)| {
            a.mean_loss.to_bits() == b.mean_loss.to_bits()
                && a.lr.to_bits() == b.lr.to_bits()
                && a.active_fraction.to_bits() == b.active_fraction.to_bits()
        });
    report(
        11,
        "training from stored losses == recomputing from stored logits",
        params_equal && logs_equal,
        "400-step trajectories and final parameters bit-equal",
    );
}

#[test]
fn criterion_12_map_preserves_neighborhoods_sanely() {
    let start = Instant::now();
    let n = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(112, "map-fixture", 0));
    let mut data = Vec::with_capacity(n * DIM);
    for i in 0..n {
        let center = if i < n / 2 { -4.0f32 } else { 4.0f32 };
        for d in 0..DIM {
            let jitter: f32 = rng.gen_range(-1.0..1.0);
            data.push(if d == 0 { center + jitter } else { jitter });
        }
    }
    let embeddings = Matrix::from_vec(n, DIM, data).unwrap();

    let perplexity = 30.0;
    let conditionals = tsne_conditionals(&embeddings, perplexity).unwrap();
    let mut worst_perplexity_err = 0.0f64;
    for i in 0..n {
        let row = conditionals.row(i);
        let entropy: f64 = row
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        worst_perplexity_err = worst_perplexity_err.max((entropy.exp() - perplexity).abs());
    }

    let config = TsneConfig {
        seed: derive_seed(112, "map", 0),
        ..TsneConfig::default()
    };
    let output = tsne_embed(&embeddings, &config).unwrap();
    let mut centroids = [[0.0f64; 2]; 2];
    for i in 0..n {
        let c = usize::from(i >= n / 2);
        centroids[c][0] += output.coords.row(i)[0];
        centroids[c][1] += output.coords.row(i)[1];
    }
    for c in &mut centroids {
        c[0] /= (n / 2) as f64;
        c[1] /= (n / 2) as f64;
    }
    let mut intra = 0.0f64;
    for i in 0..n {
        let c = usize::from(i >= n / 2);
        let dx = output.coords.row(i)[0] - centroids[c][0];
        let dy = output.coords.row(i)[1] - centroids[c][1];
        intra += (dx * dx + dy * dy).sqrt();
    }
    intra /= n as f64;
    let inter = ((centroids[0][0] - centroids[1][0]).powi(2)
        + (centroids[0][1] - centroids[1][1]).powi(2))
    .sqrt();

    let elapsed = start.elapsed().as_secs_f64();
    report(
        12,
        "map keeps perplexity, reduces KL, and separates clusters",
        worst_perplexity_err < 1e-3
            && output.final_kl < output.initial_kl
            && inter > 2.0 * intra
            && elapsed < 60.0,
        &format!(
            "n=500: perplexity error {worst_perplexity_err:.2e}, KL {:.3}->{:.3}, \
             centroid gap {inter:.1} vs mean spread {intra:.1}, {elapsed:.1}s",
            output.initial_kl, output.final_kl
        ),
    );
}

/// Regression test for the all-zero initialization failure: the constructor
/// refuses it, and a zero head forced through the unchecked constructor
/// cannot learn to rank because every gradient path through the zeroed
/// output weights vanishes — only the shared output bias moves, which leaves
/// all pairwise orderings tied forever.
#[test]
fn criterion_13_zero_initialization_is_rejected_and_truly_untrainable() {
    let rejected = UncertaintyHead::from_parameters(
        Matrix::filled(DIM, 16, 0.0f32),
        vec![0.0; 16],
        Matrix::filled(16, 16, 0.0),
        vec![0.0; 16],
        vec![0.0; 16],
        0.0,
        ActivationConfig::default(),
    )
    .is_err();

    let dir = tempfile::tempdir().unwrap();
    let oracle = fixture_oracle(RAMP, SIGMA, 113, "zero-init");
    let data = oracle.generate(400, 1).unwrap();
    let cache_path = dir.path().join("zero.cache");
    build_cache(
        &cache_path,
        data.epochs,
        data.labels,
        2,
        Some(&oracle.bayes_classifier()),
        CacheBuildOptions {
            store_losses: true,
            store_logits: false,
        },
    )
    .unwrap();

    let mut head = UncertaintyHead::from_parameters_unchecked(
        Matrix::filled(DIM, 16, 0.0f32),
        vec![0.0; 16],
        Matrix::filled(16, 16, 0.0),
        vec![0.0; 16],
        vec![0.0; 16],
        0.0,
        ActivationConfig::default(),
    )
    .unwrap();

    let mut reader = CacheReader::open(&cache_path).unwrap();
    let eval = eval_split(RAMP, SIGMA, 500, 113, "zero-init-eval");
    let base = eval.base_f32();
    let concordance = |head: &UncertaintyHead| -> f64 {
        let u = head.predict(&base).unwrap();
        let risks = &eval.bayes_risk;
        let mut agree = 0.0;
        let mut pairs = 0.0;
        for i in 0..u.len() {
            for j in (i + 1)..u.len() {
                if risks[i] == risks[j] {
                    continue;
                }
                pairs += 1.0;
                let higher_risk_higher_u = (risks[i] > risks[j]) == (u[i] > u[j]);
                if u[i] == u[j] {
                    agree += 0.5;
                } else if higher_risk_higher_u {
                    agree += 1.0;
                }
            }
        }
        agree / pairs
    };
    let before = concordance(&head);

    let config = TrainConfig {
        loss_variant: LossVariant::RankingMargin {
            margin: MARGIN,
            leeway: 0.0,
        },
        loss_source: LossSource::StoredLosses,
        batch_size: 100,
        total_steps: 200,
        optimizer: OptimizerKind::AdamW(AdamWConfig::default()),
        schedule: CosineSchedule::new(0.0001, 0.0028, 1e-8, 20, 200).unwrap(),
        seed: derive_seed(113, "trainer", 0),
        checkpoint_every: 0,
    };
    let log = train_head(&mut reader, &mut head, &config, None).unwrap();
    let after = concordance(&head);
    let first_loss = log.records.first().unwrap().mean_loss;
    let last_loss = log.records.last().unwrap().mean_loss;

    report(
        13,
        "all-zero init is rejected; forcing it yields no ranking improvement",
        rejected && before == 0.5 && after == 0.5 && last_loss >= first_loss,
        &format!(
            "constructor rejects zeros; concordance {before:.3} before vs {after:.3} after \
             200 steps, hinge stuck at {last_loss:.3}"
        ),
    );
}
