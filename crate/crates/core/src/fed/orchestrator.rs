//! Round loop: select, train locally, aggregate, broadcast, evaluate.

use std::time::Instant;

use rayon::prelude::*;

use crate::data::{ClientPartition, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_unseen, EvalConfig, EvalReport};
use crate::numerics::{GanArch, GanModel};
use crate::rng::{derive_rng, Party};
use crate::semantics::{Conditioner, EmbeddingTable};

use super::client::{local_train, pretrain_local_classifier, ClientState, LocalLosses};
use super::config::FedConfig;
use super::server::{aggregate, broadcast, round_traffic, select_clients, Upload};

/// One line of training telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    pub selected_clients: Vec<usize>,
    pub mean_critic_loss: f64,
    pub mean_generator_loss: f64,
    pub mean_cls_loss: f64,
    pub unseen_top1: Option<f64>,
    pub transmitted_params: usize,
    pub wall_time_ms: u64,
}

/// Model shapes implied by a dataset, config and optional embedding table.
pub fn build_arch(
    dataset: &Dataset,
    config: &FedConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<GanArch> {
    let attr_dim = dataset.attr_dim();
    let embed = if config.ska.enabled {
        embeddings
            .ok_or_else(|| Error::invalid("semantic augmentation needs an embedding table"))?
            .embed_dim()
    } else {
        0
    };
    Ok(GanArch {
        feature_dim: dataset.feature_dim(),
        attr_dim,
        condition_dim: attr_dim + embed,
        noise_dim: config.noise_dim.unwrap_or(attr_dim),
        hidden_dim: config.hidden_dim,
    })
}

/// Pseudo-embeddings for every class name, used when no table is supplied.
pub fn default_embeddings(dataset: &Dataset, config: &FedConfig) -> Result<EmbeddingTable> {
    EmbeddingTable::pseudo(&dataset.class_names, config.embed_dim, config.global_seed)
}

fn eval_config(config: &FedConfig) -> EvalConfig {
    EvalConfig {
        synth_per_class: config.synth_per_class,
        epochs: config.eval_epochs,
        learning_rate: config.eval_learning_rate,
        ska: config.ska,
    }
}

fn initial_model(arch: GanArch, config: &FedConfig) -> Result<GanModel> {
    GanModel::init(
        arch,
        &mut derive_rng(config.global_seed, 0, Party::Server, "init"),
    )
}

fn make_client(
    dataset: &Dataset,
    partition: ClientPartition,
    model: GanModel,
    config: &FedConfig,
) -> Result<ClientState> {
    let id = partition.client_id;
    let mut cls_rng = derive_rng(config.global_seed, 0, Party::Client(id), "cls-pretrain");
    let head = pretrain_local_classifier(
        dataset,
        &partition,
        config.cls_pretrain_epochs,
        config.cls_learning_rate,
        config.batch_size,
        &mut cls_rng,
    )?;
    let rng = derive_rng(config.global_seed, 0, Party::Client(id), "local");
    ClientState::new(partition, model, head, config.learning_rate, rng)
}

fn train_one(
    client: &mut ClientState,
    dataset: &Dataset,
    conditioner: &Conditioner<'_>,
    config: &FedConfig,
    round: usize,
) -> Result<LocalLosses> {
    let id = client.client_id();
    client.rng = derive_rng(config.global_seed, round as u64, Party::Client(id), "local");
    local_train(client, dataset, conditioner, config)
        .map_err(|e| e.with_context(format!("round {round}, client {id}")))
}

/// A federation in progress. The server state is `global`; clients hold
/// their own models, optimizers and classifier heads.
#[derive(Debug, Clone)]
pub struct Federation<'a> {
    dataset: &'a Dataset,
    embeddings: Option<&'a EmbeddingTable>,
    config: FedConfig,
    clients: Vec<ClientState>,
    global: GanModel,
    round: usize,
}

impl<'a> Federation<'a> {
    /// Initialise the server model, copy it to every client and pretrain
    /// each client's classifier head on its own rows.
    pub fn new(
        dataset: &'a Dataset,
        partitions: &[ClientPartition],
        config: &FedConfig,
        embeddings: Option<&'a EmbeddingTable>,
    ) -> Result<Self> {
        config.validate()?;
        if partitions.len() != config.num_clients {
            return Err(Error::invalid(format!(
                "{} partitions for {} clients",
                partitions.len(),
                config.num_clients
            )));
        }
        crate::data::validate_partitions(partitions, dataset)?;
        let arch = build_arch(dataset, config, embeddings)?;
        let global = initial_model(arch, config)?;
        let make = |p: &ClientPartition| make_client(dataset, p.clone(), global.clone(), config);
        let clients = if config.parallel {
            partitions
                .par_iter()
                .map(make)
                .collect::<Result<Vec<_>>>()?
        } else {
            partitions.iter().map(make).collect::<Result<Vec<_>>>()?
        };
        Ok(Federation {
            dataset,
            embeddings,
            config: config.clone(),
            clients,
            global,
            round: 0,
        })
    }

    pub fn global(&self) -> &GanModel {
        &self.global
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn config(&self) -> &FedConfig {
        &self.config
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// One round: select, train the selected clients (concurrently when
    /// enabled), aggregate in ascending id order and broadcast to everyone.
    pub fn run_round(&mut self) -> Result<RoundMetrics> {
        let start = Instant::now();
        let round = self.round + 1;
        let cfg = &self.config;
        let selected = select_clients(
            cfg.num_clients,
            cfg.client_fraction,
            round as u64,
            cfg.global_seed,
        );
        let conditioner = Conditioner::new(
            self.dataset,
            self.embeddings,
            cfg.ska,
            &self.dataset.seen_classes,
        )?;
        let dataset = self.dataset;
        let chosen = |c: &&mut ClientState| selected.binary_search(&c.client_id()).is_ok();
        let work = |c: &mut ClientState| train_one(c, dataset, &conditioner, cfg, round);
        let losses: Vec<LocalLosses> = if cfg.parallel {
            self.clients
                .par_iter_mut()
                .filter(chosen)
                .map(work)
                .collect::<Result<_>>()?
        } else {
            self.clients
                .iter_mut()
                .filter(chosen)
                .map(work)
                .collect::<Result<_>>()?
        };

        let uploads: Vec<Upload> = self
            .clients
            .iter()
            .filter(|c| selected.binary_search(&c.client_id()).is_ok())
            .map(|c| c.upload(cfg.aggregation_mode))
            .collect();
        let update = aggregate(&uploads, cfg.aggregation_mode)?;
        broadcast(
            &update,
            cfg.aggregation_mode,
            self.clients.iter_mut().map(|c| &mut c.model),
        )?;
        self.global.generator.clone_from(&update.generator);
        if let Some(d) = &update.discriminator {
            self.global.discriminator.clone_from(d);
        }
        let transmitted = round_traffic(&uploads, &update, cfg.num_clients);
        self.round = round;

        let n = losses.len() as f64;
        let mean = |f: fn(&LocalLosses) -> f64| losses.iter().map(f).sum::<f64>() / n;
        let unseen_top1 =
            if self.config.eval_every > 0 && round.is_multiple_of(self.config.eval_every) {
                Some(self.evaluate()?.accuracy.mean)
            } else {
                None
            };
        Ok(RoundMetrics {
            round,
            mean_critic_loss: mean(|l| l.critic),
            mean_generator_loss: mean(|l| l.generator),
            mean_cls_loss: mean(|l| l.classification),
            selected_clients: selected,
            unseen_top1,
            transmitted_params: transmitted,
            wall_time_ms: start.elapsed().as_millis() as u64,
        })
    }

    /// Evaluate the current server generator on the unseen classes, with the
    /// evaluation stream of the current round.
    pub fn evaluate(&self) -> Result<EvalReport> {
        let mut rng = derive_rng(
            self.config.global_seed,
            self.round as u64,
            Party::Server,
            "eval",
        );
        evaluate_unseen(
            &self.global.generator,
            self.dataset,
            self.embeddings,
            &eval_config(&self.config),
            &mut rng,
        )
    }

    pub fn into_parts(self) -> (GanModel, Vec<ClientState>) {
        (self.global, self.clients)
    }
}

#[derive(Debug, Clone)]
pub struct FederationOutcome {
    /// Server model after the last round; the generator is what evaluation uses.
    pub global: GanModel,
    pub metrics: Vec<RoundMetrics>,
    pub clients: Vec<ClientState>,
}

/// Run `config.rounds` rounds, evaluating every `eval_every` rounds (0 never).
/// `observer` sees each round's metrics and the federation after it, e.g. to
/// write metrics lines or checkpoints as training proceeds.
pub fn run_federation(
    dataset: &Dataset,
    partitions: &[ClientPartition],
    config: &FedConfig,
    embeddings: Option<&EmbeddingTable>,
    eval_every: usize,
    mut observer: impl FnMut(&RoundMetrics, &Federation<'_>) -> Result<()>,
) -> Result<FederationOutcome> {
    let mut cfg = config.clone();
    cfg.eval_every = eval_every;
    let mut fed = Federation::new(dataset, partitions, &cfg, embeddings)?;
    let mut metrics = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let m = fed.run_round()?;
        observer(&m, &fed)?;
        metrics.push(m);
    }
    let (global, clients) = fed.into_parts();
    Ok(FederationOutcome {
        global,
        metrics,
        clients,
    })
}

/// Plain single-party training on every train row for `config.rounds ×
/// config.local_epochs` epochs, drawing from the same derived streams a
/// one-client federation would use. No selection, aggregation or broadcast.
pub fn train_centralized(
    dataset: &Dataset,
    config: &FedConfig,
    embeddings: Option<&EmbeddingTable>,
) -> Result<GanModel> {
    let mut cfg = config.clone();
    cfg.num_clients = 1;
    cfg.validate()?;
    let arch = build_arch(dataset, &cfg, embeddings)?;
    let partition = ClientPartition {
        client_id: 0,
        class_subset: dataset.seen_classes.clone(),
        row_indices: (0..dataset.train.len()).collect(),
    };
    let mut state = make_client(dataset, partition, initial_model(arch, &cfg)?, &cfg)?;
    let conditioner = Conditioner::new(dataset, embeddings, cfg.ska, &dataset.seen_classes)?;
    for round in 1..=cfg.rounds {
        state.rng = derive_rng(cfg.global_seed, round as u64, Party::Client(0), "local");
        local_train(&mut state, dataset, &conditioner, &cfg)?;
    }
    Ok(state.model)
}
