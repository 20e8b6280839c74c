use std::path::Path;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use fzsl_core::attack::{
    capture_gradients, dlg_invert, DlgConfig, LeakageReport, PrivateBatch, Victim,
};
use fzsl_core::data::{
    load_dataset, make_synthetic, partition_skew, save_dataset, ClientPartition, Dataset,
    DatasetPaths, SyntheticSpec,
};
use fzsl_core::eval::{evaluate_unseen, EvalConfig, EvalReport};
use fzsl_core::fed::{
    build_arch, default_embeddings, read_checkpoint, run_federation, write_checkpoint, Checkpoint,
    CheckpointPaths, FedConfig,
};
use fzsl_core::numerics::{mlp_init, HiddenActivation, MlpDims, OutputActivation};
use fzsl_core::semantics::{load_embedding_table, write_embedding_table, EmbeddingTable};
use fzsl_core::{derive_rng, Linear, Matrix, Party, RngStream};

use crate::args::{
    AttackArgs, Cli, Command, EvalArgs, GenDataArgs, MetricsFormat, StatsArgs, SweepArgs, TrainArgs,
};
use crate::output::{header, metrics_record, Record, RecordWriter};
use crate::plan::ExperimentPlan;

/// Run one command. Returns exit code 2 when a sweep had failing cells.
pub fn run(cli: &Cli) -> Result<ExitCode> {
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;
    let config = load_config(cli)?;
    match &cli.command {
        Command::GenData(a) => gen_data(cli, &config, a),
        Command::Train(a) => train(cli, &config, a),
        Command::Eval(a) => eval(cli, a),
        Command::Sweep(a) => return sweep(cli, &config, a),
        Command::Attack(a) => attack(cli, &config, a),
        Command::Stats(a) => stats(cli, &config, a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn load_config(cli: &Cli) -> Result<FedConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            FedConfig::parse(&text, path)?
        }
        None => FedConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.global_seed = seed;
    }
    Ok(cfg)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_data(dir: &Path) -> Result<Dataset> {
    load_dataset(&DatasetPaths::in_dir(dir))
        .with_context(|| format!("loading dataset from {}", dir.display()))
}

/// The supplied table, or pseudo-embeddings when augmentation needs one.
fn embeddings_for(
    dataset: &Dataset,
    config: &FedConfig,
    path: Option<&Path>,
) -> Result<Option<EmbeddingTable>> {
    match path {
        Some(p) => Ok(Some(load_embedding_table(p)?)),
        None if config.ska.enabled => Ok(Some(default_embeddings(dataset, config)?)),
        None => Ok(None),
    }
}

fn partitions(dataset: &Dataset, config: &FedConfig) -> Result<Vec<ClientPartition>> {
    let mut rng = derive_rng(config.global_seed, 0, Party::Server, "partition");
    Ok(config
        .split
        .partition(dataset, config.num_clients, &mut rng)?)
}

fn eval_config(config: &FedConfig) -> EvalConfig {
    EvalConfig {
        synth_per_class: config.synth_per_class,
        epochs: config.eval_epochs,
        learning_rate: config.eval_learning_rate,
        ska: config.ska,
    }
}

fn gen_data(cli: &Cli, config: &FedConfig, a: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        seen_count: a.seen,
        unseen_count: a.unseen,
        attr_dim: a.attr_dim,
        feature_dim: a.feature_dim,
        rows_per_class: a.rows_per_class,
        noise_scale: a.noise_scale,
    };
    let dataset = make_synthetic(
        &spec,
        &mut RngStream::from_seed(config.global_seed, "gen-data"),
    )?;
    save_dataset(&dataset, &DatasetPaths::in_dir(&cli.out))?;
    if let Some(d) = a.embed_dim {
        let table = EmbeddingTable::pseudo(&dataset.class_names, d, config.global_seed)?;
        write_embedding_table(&cli.out.join("classes.embed"), &table)?;
    }
    println!(
        "wrote {} train and {} test rows over {} classes to {}",
        dataset.train.len(),
        dataset.test.len(),
        dataset.num_classes(),
        cli.out.display()
    );
    Ok(())
}

/// Everything a training run produced.
struct TrainOutcome {
    final_eval: EvalReport,
    rounds: usize,
}

/// Train, streaming metrics into `out`, write the final checkpoint and
/// evaluate the final server generator.
fn train_into(
    out: &Path,
    config: &FedConfig,
    dataset: &Dataset,
    embeddings: Option<&EmbeddingTable>,
    format: MetricsFormat,
    wall_time: bool,
) -> Result<TrainOutcome> {
    config.validate()?;
    let parts = partitions(dataset, config)?;
    let digest = config.digest();
    let metrics_path = out.join(format!("metrics.{}", format.extension()));
    let mut writer = RecordWriter::create(&metrics_path, "metrics", &digest, format)?;
    let outcome = run_federation(
        dataset,
        &parts,
        config,
        embeddings,
        config.eval_every,
        |m, _| {
            writer
                .record(&metrics_record(m, wall_time))
                .map_err(|e| fzsl_core::Error::InvalidArgument(format!("{e:#}")))
        },
    )?;
    let ckpt = Checkpoint {
        round: config.rounds,
        config: config.clone(),
        arch: outcome.global.arch,
        clients: outcome.clients.iter().map(|c| c.model.clone()).collect(),
        global: outcome.global.clone(),
    };
    write_checkpoint(&CheckpointPaths::in_dir(out), &ckpt)?;
    let mut rng = derive_rng(
        config.global_seed,
        config.rounds as u64,
        Party::Server,
        "eval",
    );
    let final_eval = evaluate_unseen(
        &outcome.global.generator,
        dataset,
        embeddings,
        &eval_config(config),
        &mut rng,
    )?;
    Ok(TrainOutcome {
        final_eval,
        rounds: outcome.metrics.len(),
    })
}

fn train(cli: &Cli, config: &FedConfig, a: &TrainArgs) -> Result<()> {
    let mut config = config.clone();
    if let Some(k) = a.eval_every {
        config.eval_every = k;
    }
    let dataset = load_data(&a.data.data)?;
    let embeddings = embeddings_for(&dataset, &config, a.data.embeddings.as_deref())?;
    let res = train_into(
        &cli.out,
        &config,
        &dataset,
        embeddings.as_ref(),
        cli.metrics_format,
        a.wall_time,
    )?;
    println!(
        "trained {} rounds ({} mode); final unseen top-1 {:.4}",
        res.rounds,
        config.aggregation_mode.as_str(),
        res.final_eval.accuracy.mean
    );
    Ok(())
}

fn eval_records(report: &EvalReport, dataset: &Dataset) -> Vec<Record> {
    let mut records = vec![Record::new()
        .field("mean_top1", report.accuracy.mean)
        .field("classes", report.accuracy.per_class.len())
        .field("pseudo_digest", report.pseudo_digest.clone())
        .field("generator_digest", report.generator_digest.clone())];
    for &(class, acc) in &report.accuracy.per_class {
        records.push(
            Record::new()
                .field("class", dataset.class_names[class].clone())
                .field("id", class)
                .field("top1", acc),
        );
    }
    records
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let ckpt = read_checkpoint(&a.checkpoint)?;
    let mut cfg = ckpt.config.clone();
    cfg.global_seed = cli.seed.unwrap_or(cfg.global_seed);
    if let Some(m) = a.synth_per_class {
        cfg.synth_per_class = m;
    }
    let dataset = load_data(&a.data.data)?;
    let embeddings = embeddings_for(&dataset, &cfg, a.data.embeddings.as_deref())?;
    let arch = build_arch(&dataset, &cfg, embeddings.as_ref())?;
    if arch != ckpt.arch {
        bail!(
            "checkpoint architecture {:?} does not fit this dataset and config ({:?})",
            ckpt.arch,
            arch
        );
    }
    let mut rng = derive_rng(cfg.global_seed, ckpt.round as u64, Party::Server, "eval");
    let report = evaluate_unseen(
        &ckpt.global.generator,
        &dataset,
        embeddings.as_ref(),
        &eval_config(&cfg),
        &mut rng,
    )?;
    let format = cli.metrics_format;
    let mut lines = vec![header("eval", &cfg.digest(), format)];
    lines.extend(
        eval_records(&report, &dataset)
            .iter()
            .map(|r| r.render(format)),
    );
    write_lines(
        &cli.out.join(format!("eval.{}", format.extension())),
        &lines,
    )?;
    println!("mean unseen top-1 {:.4}", report.accuracy.mean);
    for &(class, acc) in &report.accuracy.per_class {
        println!("  {:<16} {acc:.4}", dataset.class_names[class]);
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sanitize(value: &str) -> String {
    value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn sweep(cli: &Cli, config: &FedConfig, a: &SweepArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&a.plan)
        .with_context(|| format!("reading plan {}", a.plan.display()))?;
    let plan = ExperimentPlan::parse(&text, config.clone(), &a.plan)?;
    let shared = a.data.as_deref().map(load_data).transpose()?;
    let format = cli.metrics_format;
    let mut rows = vec![header("sweep", &plan.base.digest(), format)];
    let mut failed_cells = 0usize;
    for value in plan.cells() {
        let mut scores = Vec::new();
        let mut failures = 0usize;
        for repeat in 0..plan.repeats {
            let cfg = plan.config_for(&value, repeat)?;
            let dir = cli
                .out
                .join(format!("{}={}", plan.axis.as_str(), sanitize(&value)))
                .join(format!("seed_{}", cfg.global_seed));
            let result = (|| -> Result<f64> {
                std::fs::create_dir_all(&dir)?;
                let generated;
                let dataset = match &shared {
                    Some(d) => d,
                    None => {
                        generated = make_synthetic(
                            &SyntheticSpec::default(),
                            &mut RngStream::from_seed(cfg.global_seed, "gen-data"),
                        )?;
                        &generated
                    }
                };
                let embeddings = embeddings_for(dataset, &cfg, None)?;
                let res = train_into(&dir, &cfg, dataset, embeddings.as_ref(), format, false)?;
                let mut lines = vec![header("eval", &cfg.digest(), format)];
                lines.extend(
                    eval_records(&res.final_eval, dataset)
                        .iter()
                        .map(|r| r.render(format)),
                );
                write_lines(&dir.join(format!("eval.{}", format.extension())), &lines)?;
                Ok(res.final_eval.accuracy.mean)
            })();
            match result {
                Ok(top1) => {
                    println!(
                        "{}={value} seed {}: top-1 {top1:.4}",
                        plan.axis.as_str(),
                        cfg.global_seed
                    );
                    scores.push(top1);
                }
                Err(e) => {
                    eprintln!(
                        "{}={value} seed {} failed: {e:#}",
                        plan.axis.as_str(),
                        cfg.global_seed
                    );
                    let _ = std::fs::create_dir_all(&dir);
                    let _ = std::fs::write(dir.join("error.txt"), format!("{e:#}\n"));
                    failures += 1;
                }
            }
        }
        if failures > 0 {
            failed_cells += 1;
        }
        let (mean, std) = mean_std(&scores);
        rows.push(
            Record::new()
                .field("axis", plan.axis.as_str())
                .field("value", value.clone())
                .field(
                    "mean_top1",
                    if scores.is_empty() { None } else { Some(mean) },
                )
                .field("std_top1", if scores.is_empty() { None } else { Some(std) })
                .field("runs", scores.len())
                .field("failed", failures)
                .render(format),
        );
    }
    write_lines(
        &cli.out.join(format!("summary.{}", format.extension())),
        &rows,
    )?;
    for row in &rows[1..] {
        println!("{row}");
    }
    if failed_cells > 0 {
        eprintln!("{failed_cells} sweep cell(s) had failures");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn report_records(report: &LeakageReport, steps: usize) -> Vec<Record> {
    let mut head = Record::new()
        .field("kind", report.kind.as_str())
        .field("steps", steps);
    for (name, cos) in &report.cosines {
        head = head.field(&format!("cosine_{name}"), *cos);
    }
    head = head
        .field("residual_initial", report.residuals.first().map(|r| r.1))
        .field("residual_final", report.final_residual());
    let mut out = vec![head];
    for &(step, value) in &report.residuals {
        out.push(
            Record::new()
                .field("kind", report.kind.as_str())
                .field("step", step)
                .field("best_residual", value),
        );
    }
    let row = |name: &str, m: &Matrix<f64>| {
        Record::new()
            .field("kind", report.kind.as_str())
            .field("estimate", name)
            .field("values", m.row(0).to_vec())
    };
    out.push(row("feature", &report.feature_estimate));
    out.push(row(
        match report.kind {
            fzsl_core::attack::TargetKind::FeatureAndAttribute => "attribute",
            fzsl_core::attack::TargetKind::FeatureAndLabel => "label_probs",
        },
        &report.condition_estimate,
    ));
    out
}

fn attack(cli: &Cli, config: &FedConfig, a: &AttackArgs) -> Result<()> {
    let seed = config.global_seed;
    let (dataset, critic, source) = match &a.checkpoint {
        Some(path) => {
            let data = a
                .data
                .as_ref()
                .ok_or_else(|| anyhow!("--checkpoint needs --data for the private row"))?;
            let ckpt = read_checkpoint(path)?;
            let model = ckpt
                .clients
                .get(a.client)
                .ok_or_else(|| anyhow!("checkpoint has no client {}", a.client))?;
            (
                load_data(data)?,
                model.discriminator.clone(),
                format!("checkpoint client {}", a.client),
            )
        }
        None => {
            let spec = SyntheticSpec {
                seen_count: 4,
                unseen_count: 1,
                attr_dim: 8,
                feature_dim: 16,
                rows_per_class: 4,
                noise_scale: 0.05,
            };
            let data = match &a.data {
                Some(d) => load_data(d)?,
                None => make_synthetic(&spec, &mut RngStream::from_seed(seed, "gen-data"))?,
            };
            let dims = MlpDims::new(
                data.feature_dim() + data.attr_dim(),
                config.hidden_dim.min(64),
                1,
            );
            let mut rng = derive_rng(seed, 0, Party::Client(a.client), "attack-critic");
            let critic = mlp_init(
                dims,
                HiddenActivation::LeakyRelu(0.2),
                OutputActivation::None,
                &mut rng,
            )?;
            (data, critic, "fresh critic".to_string())
        }
    };
    if a.row >= dataset.train.len() {
        bail!(
            "row {} out of range ({} training rows)",
            a.row,
            dataset.train.len()
        );
    }
    let features = dataset.train.features.select_rows(&[a.row]);
    let label = dataset.train.labels[a.row];
    let dlg = DlgConfig {
        steps: a.steps,
        learning_rate: a.lr,
        batch: 1,
        ..DlgConfig::default()
    };

    let mid = Victim::Critic {
        model: &critic,
        feature_dim: dataset.feature_dim(),
    };
    let mid_batch = PrivateBatch::Attributes {
        features: features.clone(),
        attributes: dataset.attributes_for(&[label]),
    };
    let mid_report = dlg_invert(
        &mid,
        &capture_gradients(&mid, &mid_batch)?,
        &mid_batch,
        &dlg,
        &mut derive_rng(seed, 0, Party::Server, "attack-mid"),
    )?;

    let head = Linear::init(
        dataset.feature_dim(),
        dataset.num_classes(),
        &mut derive_rng(seed, 0, Party::Client(a.client), "attack-classifier"),
    )?;
    let high = Victim::Classifier { model: &head };
    let high_batch = PrivateBatch::Labels {
        features,
        labels: vec![label],
    };
    let high_report = dlg_invert(
        &high,
        &capture_gradients(&high, &high_batch)?,
        &high_batch,
        &dlg,
        &mut derive_rng(seed, 0, Party::Server, "attack-high"),
    )?;

    let format = cli.metrics_format;
    let mut lines = vec![header("attack", &config.digest(), format)];
    for report in [&mid_report, &high_report] {
        lines.extend(
            report_records(report, a.steps)
                .iter()
                .map(|r| r.render(format)),
        );
    }
    write_lines(
        &cli.out.join(format!("attack.{}", format.extension())),
        &lines,
    )?;
    println!(
        "attacked {source}, training row {} ({} steps)",
        a.row, a.steps
    );
    for report in [&mid_report, &high_report] {
        let cos: Vec<String> = report
            .cosines
            .iter()
            .map(|(n, c)| format!("{n} {c:.4}"))
            .collect();
        println!(
            "  {:<22} cosine {}; residual {:.3e} -> {:.3e}",
            report.kind.as_str(),
            cos.join(", "),
            report.residuals.first().map_or(f64::NAN, |r| r.1),
            report.final_residual()
        );
    }
    Ok(())
}

fn stats(cli: &Cli, config: &FedConfig, a: &StatsArgs) -> Result<()> {
    let mut cfg = config.clone();
    if let Some(n) = a.clients {
        cfg.num_clients = n;
    }
    cfg.validate()?;
    let dataset = load_data(&a.data)?;
    let parts = partitions(&dataset, &cfg)?;
    let skew = partition_skew(&parts, &dataset)?;
    let format = cli.metrics_format;
    let mut lines = vec![header("stats", &cfg.digest(), format)];
    lines.push(
        Record::new()
            .field("split", format!("{:?}", cfg.split).to_lowercase())
            .field("clients", parts.len())
            .field("skew", skew)
            .render(format),
    );
    for p in &parts {
        lines.push(
            Record::new()
                .field("client", p.client_id)
                .field("classes", p.class_subset.len())
                .field("rows", p.row_indices.len())
                .field("class_ids", p.class_subset.clone())
                .render(format),
        );
    }
    write_lines(
        &cli.out.join(format!("stats.{}", format.extension())),
        &lines,
    )?;
    for line in &lines[1..] {
        println!("{line}");
    }
    Ok(())
}
