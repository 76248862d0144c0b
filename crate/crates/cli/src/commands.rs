use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use mans_core::data::load_dataset;
use mans_core::evaluation::{link_prediction, rank_queries, triple_classification};
use mans_core::features::{load_features, FeatureTable};
use mans_core::model::{export_embeddings, read_checkpoint, write_checkpoint, ModelParams};
use mans_core::rng::{derive_seed, stream};
use mans_core::training::Trainer;
use mans_core::{Dataset, LinkPredMetrics, Split};

use crate::config::RunConfig;
use crate::error::CliError;

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn load_data(config: &RunConfig) -> Result<Dataset, CliError> {
    let (train, valid, test) = config.require_data()?;
    Ok(load_dataset(train, valid, test)?)
}

/// Features from `feature_path` with missing rows filled from `seed`, or a
/// fully filled table when no file is configured.
fn load_table(config: &RunConfig, ds: &Dataset, seed: u64) -> Result<FeatureTable, CliError> {
    Ok(match &config.feature_path {
        Some(path) => load_features(path, &ds.entities, config.feature_dim, config.dim, seed)?,
        None => FeatureTable::xavier_filled(ds.n_entities(), config.feature_dim, config.dim, seed),
    })
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints")
        .join(format!("epoch_{epoch:06}.mmkc"))
}

/// Trained copies of Xavier-filled feature rows live next to their
/// checkpoint.
pub fn feature_sidecar(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".features.mmkf");
    PathBuf::from(name)
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    config.validate()?;
    let ds = load_data(config)?;
    let table = load_table(config, &ds, config.seed)?;
    let out = &config.output_dir;
    create_dir(&out.join("checkpoints"))?;
    write_text(&out.join("config.effective"), &config.to_effective())?;
    ds.write_vocab_sidecars(out)?;

    let train_config = config.train_config();
    let mut trainer = Trainer::new(&ds, table, train_config)?;
    let log_path = out.join("log.tsv");
    let log_file = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(log_file);
    let save = |trainer: &Trainer| -> Result<(), CliError> {
        let path = checkpoint_path(out, trainer.epoch());
        write_checkpoint(&path, trainer.params(), trainer.epoch() as u32, config.seed)?;
        if config.train_filled_features {
            trainer
                .features()
                .write_mmkf(&feature_sidecar(&path), &ds.entities)?;
        }
        log::info!("wrote {}", path.display());
        Ok(())
    };

    while !trainer.is_done() {
        let record = trainer.run_epoch()?;
        writeln!(log, "{}", record.to_tsv())
            .and_then(|_| log.flush())
            .map_err(|e| CliError::io(&log_path, e))?;
        log::info!(
            "epoch {}/{}: loss {:.6}{}",
            record.epoch,
            config.epochs,
            record.mean_loss,
            record
                .mean_beta3
                .map(|b| format!(", beta3 {b:.4}"))
                .unwrap_or_default()
        );
        let every = config.checkpoint_every;
        if every > 0 && record.epoch % every == 0 && !trainer.is_done() {
            save(&trainer)?;
        }
    }
    save(&trainer)?;

    let norm = config.norm;
    if config.eval_lp {
        let m = link_prediction(
            trainer.params(),
            trainer.features(),
            &ds.store,
            Split::Valid,
            norm,
        )?;
        write_text(&out.join("metrics_lp.tsv"), &m.to_tsv())?;
        println!("link prediction (valid, filtered)\n{m}");
    }
    if config.eval_tc {
        let m = triple_classification(
            trainer.params(),
            trainer.features(),
            &ds.store,
            norm,
            config.seed,
        )?;
        write_text(&out.join("metrics_tc.tsv"), &m.to_tsv())?;
        println!("triple classification (test)\n{m}");
    }
    Ok(())
}

/// A checkpoint with the feature table it was trained against.
pub struct Loaded {
    pub dataset: Dataset,
    pub params: ModelParams,
    pub table: FeatureTable,
    pub seed: u64,
}

pub fn load_checkpoint(config: &RunConfig, checkpoint: &Path) -> Result<Loaded, CliError> {
    let dataset = load_data(config)?;
    let (header, params) = read_checkpoint(checkpoint)?;
    let found = (
        header.n_entities as usize,
        header.n_relations as usize,
        header.d as usize,
        header.d_v as usize,
    );
    let expected = (
        dataset.n_entities(),
        dataset.n_relations(),
        config.dim,
        config.feature_dim,
    );
    if found != expected {
        return Err(CliError::Validation(format!(
            "checkpoint {} has shape (entities {}, relations {}, d {}, d_v {}) but config and dataset give (entities {}, relations {}, d {}, d_v {})",
            checkpoint.display(),
            found.0, found.1, found.2, found.3,
            expected.0, expected.1, expected.2, expected.3,
        )));
    }
    let sidecar = feature_sidecar(checkpoint);
    let table = if sidecar.exists() {
        load_features(
            &sidecar,
            &dataset.entities,
            config.feature_dim,
            config.dim,
            header.seed,
        )?
    } else {
        load_table(config, &dataset, header.seed)?
    };
    Ok(Loaded {
        dataset,
        params,
        table,
        seed: header.seed,
    })
}

pub fn eval_lp(
    config: &RunConfig,
    checkpoint: &Path,
    split: Split,
    out: Option<&Path>,
    ranks: Option<&Path>,
) -> Result<(), CliError> {
    let run = load_checkpoint(config, checkpoint)?;
    let ds = &run.dataset;
    let m = link_prediction(&run.params, &run.table, &ds.store, split, config.norm)?;
    let out = out.map_or_else(
        || config.output_dir.join("metrics_lp.tsv"),
        Path::to_path_buf,
    );
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(&out, &m.to_tsv())?;
    println!("link prediction ({split}, filtered)\n{m}");

    if let Some(path) = ranks {
        let queries = rank_queries(
            &run.params,
            &run.table,
            &ds.store,
            split.triples(&ds.store),
            config.norm,
        )?;
        let mut text = String::new();
        for q in queries {
            let t = q.triple;
            text.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                ds.entities.name(t.head).unwrap_or_default(),
                ds.relations.name(t.rel).unwrap_or_default(),
                ds.entities.name(t.tail).unwrap_or_default(),
                q.side,
                q.rank
            ));
        }
        write_text(path, &text)?;
    }
    Ok(())
}

pub fn eval_tc(
    config: &RunConfig,
    checkpoint: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let run = load_checkpoint(config, checkpoint)?;
    let seed = seed.unwrap_or(run.seed);
    let m = triple_classification(
        &run.params,
        &run.table,
        &run.dataset.store,
        config.norm,
        seed,
    )?;
    let out = out.map_or_else(
        || config.output_dir.join("metrics_tc.tsv"),
        Path::to_path_buf,
    );
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_text(&out, &m.to_tsv())?;
    println!("triple classification (test, corruption seed {seed})\n{m}");
    Ok(())
}

pub fn export(config: &RunConfig, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let run = load_checkpoint(config, checkpoint)?;
    export_embeddings(out, &run.params, &run.table, &run.dataset.entities)?;
    println!("wrote {}", out.display());
    Ok(())
}

/// Expands `start:end:step` (inclusive of `end` up to rounding) or a comma
/// list into individual values.
pub fn parse_grid(grid: &str) -> Result<Vec<String>, CliError> {
    let bad = || CliError::Validation(format!("cannot parse sweep values {grid:?}"));
    let parts: Vec<&str> = grid.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let (start, end, step) = (nums[0], nums[1], nums[2]);
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(bad());
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count)
            .map(|i| {
                // trims representation noise such as 0.30000000000000004
                let v = start + i as f64 * step;
                let rounded = (v * 1e9).round() / 1e9;
                rounded.to_string()
            })
            .collect());
    }
    let values: Vec<String> = grid
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(bad());
    }
    Ok(values)
}

/// Seed of sweep run `index`.
pub fn sweep_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, stream::SWEEP), index as u64)
}

pub struct SweepRow {
    pub value: String,
    pub metrics: LinkPredMetrics,
    pub seed: u64,
}

fn sweep_run(
    base: &RunConfig,
    ds: &Dataset,
    config: &RunConfig,
) -> Result<LinkPredMetrics, CliError> {
    let table = load_table(base, ds, config.seed)?;
    let mut trainer = Trainer::new(ds, table, config.train_config())?;
    while !trainer.is_done() {
        trainer.run_epoch()?;
    }
    Ok(link_prediction(
        trainer.params(),
        trainer.features(),
        &ds.store,
        Split::Valid,
        config.norm,
    )?)
}

pub fn sweep(
    config: &RunConfig,
    param: &str,
    values: &str,
    parallel: bool,
) -> Result<(), CliError> {
    if param == "seed" || config.get(param).is_none() {
        return Err(CliError::Validation(format!("cannot sweep over {param:?}")));
    }
    let values = parse_grid(values)?;
    let runs: Vec<RunConfig> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut c = config.clone();
            c.set(param, v)?;
            c.seed = sweep_seed(config.seed, i);
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_, CliError>>()?;
    let ds = load_data(config)?;
    create_dir(&config.output_dir)?;
    write_text(
        &config.output_dir.join("config.effective"),
        &config.to_effective(),
    )?;

    let run_one = |(value, c): (&String, &RunConfig)| -> Result<SweepRow, CliError> {
        let metrics = sweep_run(config, &ds, c)?;
        log::info!("{param} = {value}: valid MRR {:.4}", metrics.mrr);
        Ok(SweepRow {
            value: value.clone(),
            metrics,
            seed: c.seed,
        })
    };
    let rows: Vec<SweepRow> = if parallel {
        values
            .par_iter()
            .zip(&runs)
            .map(run_one)
            .collect::<Result<_, _>>()?
    } else {
        values
            .iter()
            .zip(&runs)
            .map(run_one)
            .collect::<Result<_, _>>()?
    };

    let mut text = String::from("value\tmrr\tmr\thits1\thits3\thits10\tseed\n");
    for r in &rows {
        let m = &r.metrics;
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.value, m.mrr, m.mr, m.hits1, m.hits3, m.hits10, r.seed
        ));
    }
    write_text(&config.output_dir.join("sweep.tsv"), &text)?;
    println!("{:<10}{:>10}{:>10}{:>10}", param, "MRR", "MR", "Hit@10");
    for r in &rows {
        println!(
            "{:<10}{:>10.4}{:>10.2}{:>10.4}",
            r.value, r.metrics.mrr, r.metrics.mr, r.metrics.hits10
        );
    }
    Ok(())
}
