use super::*;
use rand::Rng;

fn sigma_zero(mut cfg: SimConfig) -> SimConfig {
    cfg.dp.sigma = 0.0;
    cfg
}

#[test]
fn data_is_deterministic_in_seed() {
    let cfg = SimConfig::small(11);
    assert_eq!(generate_data(&cfg).unwrap(), generate_data(&cfg).unwrap());
    let other = SimConfig::small(12);
    assert_ne!(generate_data(&cfg).unwrap(), generate_data(&other).unwrap());
}

#[test]
fn shard_sizes_match_spec() {
    let mut cfg = SimConfig::small(13);
    cfg.num_clients = 4;
    cfg.data.samples_per_client = SampleSpec::PerClient(vec![3, 9, 5, 7]);
    let shards = generate_data(&cfg).unwrap();
    let sizes: Vec<usize> = shards.iter().map(Shard::len).collect();
    assert_eq!(sizes, vec![3, 9, 5, 7]);
    assert_eq!(shards.iter().map(Shard::len).sum::<usize>(), 24);
}

#[test]
fn zero_noise_data_lies_on_hyperplane() {
    let mut cfg = SimConfig::small(14);
    cfg.data.noise_std = 0.0;
    let truth = true_weights(&cfg);
    let shards = generate_data(&cfg).unwrap();
    for shard in &shards {
        for (x, y) in shard.features.iter().zip(&shard.targets) {
            let dot: f64 = truth.iter().zip(x).map(|(w, xi)| w * xi).sum();
            assert!((dot - y).abs() < 1e-12);
        }
    }
}

#[test]
fn stationary_point_produces_zero_update() {
    let mut cfg = SimConfig::small(15);
    cfg.data.noise_std = 0.0;
    let truth = true_weights(&cfg);
    let shards = generate_data(&cfg).unwrap();
    // At the true weights the residuals vanish, so ΔW ≈ 0.
    let model = ToyModel::new(truth);
    let delta = local_train(&model, &shards[0], cfg.learning_rate, 1).unwrap();
    assert!(dp::l2_norm(&delta) < 1e-10);
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = SimConfig::small(16);
    let shards = generate_data(&cfg).unwrap();
    let shard = &shards[0];
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
    for _ in 0..5 {
        let w: Vec<f64> = (0..cfg.model_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = ToyModel::new(w.clone());
        let grad = model.gradient(shard);
        let h = 1e-6;
        for i in 0..cfg.model_dim {
            let mut plus = w.clone();
            plus[i] += h;
            let mut minus = w.clone();
            minus[i] -= h;
            let fd = (ToyModel::new(plus).loss(shard) - ToyModel::new(minus).loss(shard))
                / (2.0 * h);
            let denom = grad[i].abs().max(1e-8);
            assert!(
                ((grad[i] - fd) / denom).abs() <= 1e-5,
                "component {i}: {} vs fd {fd}",
                grad[i]
            );
        }
    }
}

#[test]
fn zero_learning_rate_freezes_model() {
    let cfg = SimConfig::small(17);
    let shards = generate_data(&cfg).unwrap();
    let model = ToyModel::new(vec![0.1; cfg.model_dim]);
    let delta = local_train(&model, &shards[0], 0.0, 3).unwrap();
    assert!(delta.iter().all(|&d| d == 0.0));
}

#[test]
fn empty_shard_rejected() {
    let model = ToyModel::new(vec![0.0; 2]);
    let empty = Shard {
        features: vec![],
        targets: vec![],
    };
    assert!(matches!(
        local_train(&model, &empty, 0.1, 1),
        Err(SimError::EmptyShard)
    ));
}

#[test]
fn secure_run_matches_plain_fedavg_reference() {
    let cfg = sigma_zero(SimConfig::small(18));
    let secure = run_simulation(&cfg).unwrap();
    let reference = run_reference(&cfg).unwrap();
    assert_eq!(secure.completed_rounds(), reference.completed_rounds);
    // Loss within 1% after the final round.
    let rel = (secure.final_loss - reference.final_loss).abs()
        / reference.final_loss.max(1e-12);
    assert!(rel <= 0.01, "secure {} vs reference {}", secure.final_loss, reference.final_loss);
    // Weights within accumulated fixed-point tolerance.
    let tol = cfg.rounds as f64 * cfg.num_clients as f64 * cfg.fixed.resolution();
    for (s, r) in secure.final_weights.iter().zip(&reference.final_weights) {
        assert!((s - r).abs() <= tol, "{s} vs {r} (tol {tol})");
    }
}

#[test]
fn heavy_dropout_run_completes_and_learns() {
    let mut cfg = sigma_zero(SimConfig::small(19));
    cfg.num_clients = 20;
    cfg.threshold = 4;
    cfg.dropout_rate = 0.75;
    cfg.rounds = 10;
    let report = run_simulation(&cfg).unwrap();
    assert_eq!(report.metrics.len(), 10);
    assert!(report.completed_rounds() > 0);
    assert!(
        report.final_loss < report.initial_loss,
        "loss should decrease: {} -> {}",
        report.initial_loss,
        report.final_loss
    );
}

#[test]
fn zero_rounds_is_identity() {
    let mut cfg = sigma_zero(SimConfig::small(20));
    cfg.rounds = 0;
    let report = run_simulation(&cfg).unwrap();
    assert!(report.metrics.is_empty());
    assert_eq!(report.final_weights, vec![0.0; cfg.model_dim]);
    assert_eq!(report.initial_loss, report.final_loss);
    assert_eq!(report.ledger.total(), (0.0, 0.0));
}

#[test]
fn metrics_are_byte_identical_across_replays() {
    let cfg = SimConfig::small(21);
    let mut csv_a = Vec::new();
    run_simulation(&cfg)
        .unwrap()
        .write_metrics_csv(&mut csv_a)
        .unwrap();
    let mut csv_b = Vec::new();
    run_simulation(&cfg)
        .unwrap()
        .write_metrics_csv(&mut csv_b)
        .unwrap();
    assert_eq!(csv_a, csv_b);
}

#[test]
fn ledger_totals_after_t_rounds() {
    let mut cfg = sigma_zero(SimConfig::small(22));
    cfg.rounds = 7;
    let report = run_simulation(&cfg).unwrap();
    assert_eq!(report.completed_rounds(), 7);
    let (e, d) = report.ledger.total();
    assert!((e - 7.0 * cfg.dp.epsilon).abs() < 1e-9);
    assert!((d - 7.0 * cfg.dp.delta).abs() < 1e-12);
}

#[test]
fn skipped_rounds_consume_no_budget() {
    let mut cfg = sigma_zero(SimConfig::small(23));
    cfg.num_clients = 4;
    cfg.threshold = 4;
    cfg.dropout_rate = 0.5;
    cfg.rounds = 8;
    let report = run_simulation(&cfg).unwrap();
    let completed = report.completed_rounds();
    let (e, _) = report.ledger.total();
    assert!((e - completed as f64 * cfg.dp.epsilon).abs() < 1e-9);
    // With 4 clients at 50% dropout and threshold 4, most rounds abort.
    assert!(report.skipped_rounds() > 0);
}

#[test]
fn sweep_single_rate_matches_direct_run() {
    let cfg = sigma_zero(SimConfig::small(24));
    let table = compare_dropout_sweep(&cfg, &[0.0]).unwrap();
    assert_eq!(table.rows.len(), 1);
    let direct = run_simulation(&cfg).unwrap();
    assert_eq!(table.rows[0].final_loss, direct.final_loss);
    assert_eq!(table.rows[0].completed_rounds, direct.completed_rounds());
    assert!(!table.rows[0].frequently_aborting);
}

#[test]
fn sweep_survivor_counts_track_rates() {
    let mut cfg = sigma_zero(SimConfig::small(25));
    cfg.num_clients = 20;
    cfg.threshold = 2;
    cfg.rounds = 12;
    let rates = [0.0, 0.25, 0.5, 0.75];
    let table = compare_dropout_sweep(&cfg, &rates).unwrap();
    assert_eq!(table.rows.len(), 4);
    for (row, &rate) in table.rows.iter().zip(&rates) {
        // Binomial oracle: survivors per round ~ B(m, 1−rate); the mean over
        // rounds stays within 3σ of m(1−rate).
        let m = cfg.num_clients as f64;
        let expect = m * (1.0 - rate);
        let std_round = (m * rate * (1.0 - rate)).sqrt();
        let std_mean = std_round / (cfg.rounds as f64).sqrt();
        assert!(
            (row.mean_survivors - expect).abs() <= 3.0 * std_mean.max(1e-9),
            "rate {rate}: mean {} vs expected {expect}",
            row.mean_survivors
        );
    }
}

#[test]
fn sweep_flags_infeasible_configs() {
    let mut cfg = sigma_zero(SimConfig::small(26));
    cfg.num_clients = 4;
    cfg.threshold = 4;
    cfg.rounds = 10;
    assert!(cfg.feasibility_warning().is_none());
    let table = compare_dropout_sweep(&cfg, &[0.5]).unwrap();
    assert!(table.rows[0].frequently_aborting);
    cfg.dropout_rate = 0.5;
    assert!(cfg.feasibility_warning().is_some());
}

#[test]
fn sweep_rejects_bad_rate() {
    let cfg = sigma_zero(SimConfig::small(27));
    assert!(matches!(
        compare_dropout_sweep(&cfg, &[1.5]),
        Err(SimError::Config(_))
    ));
}

#[test]
fn clipping_activity_monotone_in_clip_bound() {
    // Fraction of triggered clips is non-increasing as C grows.
    let mut fractions = Vec::new();
    for clip_bound in [0.05, 0.2, 1.0, 10.0] {
        let mut cfg = sigma_zero(SimConfig::small(28));
        cfg.rounds = 4;
        cfg.dp.clip_bound = clip_bound;
        let report = run_simulation(&cfg).unwrap();
        let mean_frac = report
            .metrics
            .iter()
            .map(|m| m.clipped_fraction)
            .sum::<f64>()
            / report.metrics.len() as f64;
        fractions.push(mean_frac);
    }
    for pair in fractions.windows(2) {
        assert!(
            pair[1] <= pair[0] + 1e-12,
            "clip fraction not monotone: {fractions:?}"
        );
    }
}

#[test]
fn transcripts_kept_on_request() {
    let mut cfg = sigma_zero(SimConfig::small(29));
    cfg.rounds = 2;
    cfg.keep_transcripts = true;
    let report = run_simulation(&cfg).unwrap();
    assert_eq!(report.transcripts.len(), 2);
    assert!(report.transcripts[0].round == 0 && report.transcripts[1].round == 1);
}

#[test]
fn config_validation_catches_mistakes() {
    let mut cfg = SimConfig::small(30);
    cfg.threshold = 100;
    assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
    let mut cfg = SimConfig::small(31);
    cfg.dropout_rate = 1.0;
    assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
    let mut cfg = SimConfig::small(32);
    cfg.data.true_weights = Some(vec![0.0; 3]);
    assert!(matches!(cfg.validate(), Err(SimError::Config(_))));
}
