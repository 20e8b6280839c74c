use fzsl_core::data::{
    load_dataset, make_synthetic, partition_even, save_dataset, DatasetPaths, SyntheticSpec,
};
use fzsl_core::fed::{
    read_checkpoint, run_federation, write_checkpoint, AggregationMode, Checkpoint,
    CheckpointPaths, FedConfig, Federation,
};
use fzsl_core::numerics::ParamSet;
use fzsl_core::{derive_rng, Dataset, Party, RngStream};

fn small() -> (Dataset, FedConfig) {
    let spec = SyntheticSpec {
        seen_count: 8,
        unseen_count: 3,
        attr_dim: 6,
        feature_dim: 10,
        rows_per_class: 12,
        noise_scale: 0.05,
    };
    let data = make_synthetic(&spec, &mut RngStream::from_seed(3, "fixture")).unwrap();
    let cfg = FedConfig {
        num_clients: 4,
        rounds: 3,
        hidden_dim: 16,
        batch_size: 16,
        cls_pretrain_epochs: 5,
        eval_epochs: 5,
        synth_per_class: 20,
        ska: fzsl_core::semantics::SkaConfig::disabled(),
        ..FedConfig::desk()
    };
    (data, cfg)
}

fn split(data: &Dataset, cfg: &FedConfig) -> Vec<fzsl_core::data::ClientPartition> {
    let mut rng = derive_rng(cfg.global_seed, 0, Party::Server, "partition");
    partition_even(data, cfg.num_clients, &mut rng).unwrap()
}

#[test]
fn zero_rounds_leave_the_initial_model() {
    let (data, mut cfg) = small();
    let parts = split(&data, &cfg);
    let fresh = Federation::new(&data, &parts, &cfg, None).unwrap();
    cfg.rounds = 0;
    let out = run_federation(&data, &parts, &cfg, None, 0, |_, _| Ok(())).unwrap();
    assert!(out.metrics.is_empty());
    assert_eq!(&out.global, fresh.global());
    for c in &out.clients {
        assert_eq!(&c.model, fresh.global());
    }
}

#[test]
fn unselected_discriminators_stay_put_and_generators_follow_the_server() {
    let (data, mut cfg) = small();
    cfg.client_fraction = 0.5;
    cfg.aggregation_mode = AggregationMode::GeneratorOnly;
    let parts = split(&data, &cfg);
    let mut fed = Federation::new(&data, &parts, &cfg, None).unwrap();
    for _ in 0..3 {
        let before: Vec<_> = fed
            .clients()
            .iter()
            .map(|c| c.model.discriminator.clone())
            .collect();
        let m = fed.run_round().unwrap();
        assert_eq!(m.selected_clients.len(), 2);
        for (i, c) in fed.clients().iter().enumerate() {
            assert_eq!(c.model.generator, fed.global().generator);
            if !m.selected_clients.contains(&i) {
                assert_eq!(c.model.discriminator, before[i], "client {i}");
            } else {
                assert_ne!(c.model.discriminator, before[i], "client {i}");
            }
        }
    }
}

#[test]
fn holistic_clients_end_each_round_identical() {
    let (data, mut cfg) = small();
    cfg.aggregation_mode = AggregationMode::Holistic;
    let parts = split(&data, &cfg);
    let mut fed = Federation::new(&data, &parts, &cfg, None).unwrap();
    fed.run_round().unwrap();
    for c in fed.clients() {
        assert_eq!(&c.model, fed.global());
    }
}

#[test]
fn metrics_are_one_based_and_evaluated_on_schedule() {
    let (data, mut cfg) = small();
    cfg.rounds = 4;
    let parts = split(&data, &cfg);
    let mut seen = Vec::new();
    let out = run_federation(&data, &parts, &cfg, None, 2, |m, fed| {
        assert_eq!(m.round, fed.round());
        seen.push(m.round);
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4]);
    let evaluated: Vec<bool> = out
        .metrics
        .iter()
        .map(|m| m.unseen_top1.is_some())
        .collect();
    assert_eq!(evaluated, vec![false, true, false, true]);
    for m in &out.metrics {
        assert!(m.mean_critic_loss.is_finite() && m.mean_generator_loss.is_finite());
        assert!(out.global.generator.all_finite());
    }
}

#[test]
fn a_saved_dataset_trains_like_the_original() {
    let (data, cfg) = small();
    let dir = tempfile::tempdir().unwrap();
    let paths = DatasetPaths::in_dir(dir.path());
    save_dataset(&data, &paths).unwrap();
    let loaded = load_dataset(&paths).unwrap();
    let a = run_federation(&data, &split(&data, &cfg), &cfg, None, 0, |_, _| Ok(())).unwrap();
    let b = run_federation(&loaded, &split(&loaded, &cfg), &cfg, None, 0, |_, _| Ok(())).unwrap();
    assert_eq!(a.global, b.global);
}

#[test]
fn checkpoint_of_a_run_restores_every_model() {
    let (data, cfg) = small();
    let out = run_federation(&data, &split(&data, &cfg), &cfg, None, 0, |_, _| Ok(())).unwrap();
    let ckpt = Checkpoint {
        round: cfg.rounds,
        config: cfg.clone(),
        arch: out.global.arch,
        clients: out.clients.iter().map(|c| c.model.clone()).collect(),
        global: out.global.clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let paths = CheckpointPaths::in_dir(dir.path());
    write_checkpoint(&paths, &ckpt).unwrap();
    let back = read_checkpoint(&paths.meta).unwrap();
    assert_eq!(back.global, out.global);
    assert_eq!(back.clients, ckpt.clients);
    assert_eq!(back.config.digest(), cfg.digest());
}

#[test]
fn a_wrong_partition_count_is_rejected() {
    let (data, cfg) = small();
    let parts = split(&data, &cfg);
    let err = Federation::new(&data, &parts[..3], &cfg, None).unwrap_err();
    assert!(
        err.to_string().contains("3 partitions for 4 clients"),
        "{err}"
    );
}
