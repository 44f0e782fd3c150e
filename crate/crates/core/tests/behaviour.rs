//! End-to-end behaviour of training, the stream loop and the baselines.

mod common;

use common::{gaussian_matrix, mean, random_model, rng, trained_sources};
use meta_tta::adapters::{adapt, bn_stats_adapt, state_bits, AdapterConfig};
use meta_tta::engine::{
    run_experiment, run_experiment_on, run_meta, run_single_source_baseline, run_update_ablation, EngineConfig,
    HeldOut, UpdateTarget,
};
use meta_tta::ensemble::{bn_stat_distance, BnObservation};
use meta_tta::records::{write_batch_csv, write_forgetting_csv};
use meta_tta::scenario::{
    classification_error, default_domains, default_drifting_script, domains_with_noise, held_out_test_set, make_domain,
    sample_batch, train_source, DomainParams, MixtureSpec, Scenario, ScenarioScript, Source, TrainConfig,
    DEFAULT_NOISE_SCALE, HARD_NOISE_SCALE,
};

fn pure_scenario(seed: u64, noise: f64, j: usize, batches: usize) -> Scenario {
    let domains = domains_with_noise(seed, noise).unwrap();
    let script = ScenarioScript::stationary(MixtureSpec::one_hot(domains.len(), j).unwrap(), batches).unwrap();
    Scenario::new(domains, script, 128, seed * 31 + j as u64).unwrap()
}

fn drifting(seed: u64, noise: f64) -> Scenario {
    Scenario::new(
        domains_with_noise(seed, noise).unwrap(),
        default_drifting_script(4, 20).unwrap(),
        128,
        seed,
    )
    .unwrap()
}

#[test]
fn sources_meet_the_training_bound() {
    for seed in 0..2 {
        let domains = default_domains(seed).unwrap();
        for (m, d) in trained_sources(seed, DEFAULT_NOISE_SCALE).iter().zip(&domains) {
            assert!(m.meta.train_err.unwrap() <= 0.05);
            let h = held_out_test_set(d, 2000, 1234).unwrap();
            assert!(classification_error(m, &h.x, &h.y, 128).unwrap() <= 0.05);
        }
        for m in trained_sources(seed, HARD_NOISE_SCALE).iter() {
            assert!(m.meta.train_err.unwrap() <= 0.05, "{:?}", m.meta);
        }
    }
}

#[test]
fn separable_domain_is_learned_almost_perfectly() {
    let params = DomainParams {
        noise_scale: 0.2,
        ..DomainParams::default()
    };
    let d = make_domain(9, 0, &params).unwrap();
    let m = train_source(&d, &TrainConfig::default()).unwrap();
    let h = held_out_test_set(&d, 2000, 3).unwrap();
    assert!(classification_error(&m, &h.x, &h.y, 128).unwrap() < 0.01);
}

#[test]
fn training_is_deterministic() {
    let d = &default_domains(4).unwrap()[1];
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let a = train_source(d, &cfg).unwrap();
    let b = train_source(d, &cfg).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn error_grows_with_rotation_gap() {
    let angles = [0.0f64, 25.0, 50.0];
    let mut errs = vec![Vec::new(); angles.len()];
    for seed in 0..5 {
        let at = |deg: f64| {
            let params = DomainParams {
                rotation_angle: deg.to_radians(),
                noise_scale: HARD_NOISE_SCALE,
                ..DomainParams::default()
            };
            make_domain(seed, 0, &params).unwrap()
        };
        let model = train_source(&at(0.0), &TrainConfig::default()).unwrap();
        for (i, &deg) in angles.iter().enumerate() {
            let h = held_out_test_set(&at(deg), 2000, seed).unwrap();
            errs[i].push(classification_error(&model, &h.x, &h.y, 128).unwrap());
        }
    }
    let means: Vec<f64> = errs.iter().map(|e| mean(e)).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
}

#[test]
fn pure_domain_batches_select_their_source() {
    let cfg = EngineConfig {
        adapter: AdapterConfig::none(),
        verify_updates: true,
        ..EngineConfig::default()
    };
    let (mut hits, mut total) = (0, 0);
    for seed in 0..5 {
        let models = trained_sources(seed, DEFAULT_NOISE_SCALE);
        for j in 0..4 {
            let run = run_meta(&models, &pure_scenario(seed, DEFAULT_NOISE_SCALE, j, 20), &cfg, None).unwrap();
            hits += run.batches.iter().filter(|b| b.k == j).count();
            total += run.batches.len();
            for (a, b) in run.models.iter().zip(models.iter()) {
                assert_eq!(state_bits(a), state_bits(b));
            }
        }
    }
    assert!(hits as f64 >= 0.9 * total as f64, "{hits}/{total}");
}

#[test]
fn own_source_is_the_best_single_source() {
    let (mut hits, mut total) = (0, 0);
    for seed in 0..3 {
        let models = trained_sources(seed, DEFAULT_NOISE_SCALE);
        for j in 0..4 {
            let run = run_single_source_baseline(
                &models,
                &pure_scenario(seed, DEFAULT_NOISE_SCALE, j, 20),
                &AdapterConfig::none(),
            )
            .unwrap();
            for b in &run.batches {
                assert!(b.best <= b.worst);
                hits += usize::from(b.errs[j] == b.best);
                total += 1;
            }
        }
    }
    assert!(hits as f64 >= 0.9 * total as f64, "{hits}/{total}");
}

#[test]
fn least_correlated_spares_the_matching_source() {
    let models = trained_sources(0, DEFAULT_NOISE_SCALE);
    let sc = Scenario::new(
        default_domains(0).unwrap(),
        default_drifting_script(4, 10).unwrap(),
        128,
        0,
    )
    .unwrap();
    let cfg = EngineConfig {
        verify_updates: true,
        ..EngineConfig::default()
    };
    let run = run_update_ablation(&models, &sc, &cfg, UpdateTarget::LeastCorrelated, None).unwrap();
    for b in run.batches.iter().filter(|b| b.segment != 1) {
        let own = b.pi.iter().position(|&p| p == 1.0).unwrap();
        if b.k == own {
            assert!(!b.adapted.contains(&own), "batch {}", b.t);
        }
    }
    let most = run_update_ablation(&models, &sc, &cfg, UpdateTarget::MostCorrelated, None).unwrap();
    let meta = run_meta(&models, &sc, &cfg, None).unwrap();
    assert_eq!(most.batches, meta.batches);
}

#[test]
fn updating_all_drifts_further() {
    for seed in 0..5 {
        let models = trained_sources(seed, DEFAULT_NOISE_SCALE);
        let sc = drifting(seed, DEFAULT_NOISE_SCALE);
        let held = HeldOut::for_models(&models, &sc, 500, seed).unwrap();
        let drift = |target| {
            let run = run_update_ablation(&models, &sc, &EngineConfig::default(), target, Some(&held)).unwrap();
            run.forgetting
                .iter()
                .filter(|r| r.checkpoint == 2)
                .map(|r| r.param_drift)
                .sum::<f64>()
        };
        let (all, most) = (drift(UpdateTarget::All), drift(UpdateTarget::MostCorrelated));
        assert!(all >= most, "seed {seed}: all {all} most {most}");
    }
}

#[test]
fn labels_never_reach_the_learner() {
    let models = trained_sources(1, DEFAULT_NOISE_SCALE);
    let sc = Scenario::new(
        default_domains(1).unwrap(),
        default_drifting_script(4, 5).unwrap(),
        64,
        8,
    )
    .unwrap();
    let cfg = EngineConfig {
        verify_updates: true,
        ..EngineConfig::default()
    };
    let clean = run_experiment(&models, &sc, &cfg, None).unwrap();
    let zeroed = sc.stream().map(|b| {
        b.map(|mut b| {
            b.batch.y.iter_mut().for_each(|y| *y = 0);
            b
        })
    });
    let blind = run_experiment_on(&models, zeroed, &cfg, None).unwrap();
    let mut error_columns_differ = false;
    for (a, b) in clean.records.iter().zip(&blind.records) {
        assert_eq!((&a.w_init, &a.w_star, a.k), (&b.w_init, &b.w_star, b.k));
        assert_eq!(a.alpha_best.to_bits(), b.alpha_best.to_bits());
        assert_eq!(a.entropy_final.to_bits(), b.entropy_final.to_bits());
        error_columns_differ |= a.meta_err != b.meta_err;
    }
    assert!(error_columns_differ);
    for (a, b) in clean.models.iter().zip(&blind.models) {
        assert_eq!(state_bits(a), state_bits(b));
    }
}

#[test]
fn runs_are_bitwise_reproducible() {
    let models = trained_sources(2, DEFAULT_NOISE_SCALE);
    let sc = Scenario::new(
        default_domains(2).unwrap(),
        default_drifting_script(4, 4).unwrap(),
        128,
        2,
    )
    .unwrap();
    let held = HeldOut::for_models(&models, &sc, 300, 2).unwrap();
    let csv = || {
        let exp = run_experiment(&models, &sc, &EngineConfig::default(), Some(&held)).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        write_batch_csv(&mut a, &exp.records).unwrap();
        write_forgetting_csv(&mut b, &exp.forgetting).unwrap();
        (a, b)
    };
    assert_eq!(csv(), csv());
}

#[test]
fn bn_refresh_pulls_statistics_toward_the_stream() {
    let domains = default_domains(0).unwrap();
    let cfg = AdapterConfig::bn_stats(0.1);
    let mut ok = 0;
    for seed in 0..50 {
        let mut m = random_model(seed, &[16, 32, 32, 5]);
        let probe = sample_batch(Source::Domain(&domains[2]), 128, 10_000 + seed).unwrap();
        let theta = |m: &meta_tta::MlpModel| {
            let (obs, _) = BnObservation::collect(std::slice::from_ref(m), &probe.x).unwrap();
            bn_stat_distance(&obs, 0).unwrap()
        };
        let before = theta(&m);
        for i in 0..20 {
            let b = sample_batch(Source::Domain(&domains[2]), 128, seed * 100 + i).unwrap();
            bn_stats_adapt(&mut m, &b.x, &cfg).unwrap();
        }
        ok += usize::from(theta(&m) < before);
    }
    assert!(ok >= 45, "{ok}/50");
}

#[test]
fn none_adapter_leaves_models_alone() {
    let mut m = random_model(3, &[16, 32, 5]);
    let before = state_bits(&m);
    adapt(
        &mut m,
        &gaussian_matrix(&mut rng(3), 16, 16, 1.0),
        &AdapterConfig::none(),
    )
    .unwrap();
    assert_eq!(state_bits(&m), before);
}
