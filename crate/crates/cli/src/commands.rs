use std::fs;
use std::ops::ControlFlow;
use std::path::Path;

use mgdpr_core::checkpoint;
use mgdpr_core::graph_generation::{build_day_graphs, read_graph_cache, write_graph_cache, GraphError, INDEX_FILE};
use mgdpr_core::market_data::{
    align_panel, load_dir, make_windows, split_periods, MarketPanel, Splits, MANIFEST_FILE,
};
use mgdpr_core::model::{Mgdpr, ModelConfig};
use mgdpr_core::training::{
    evaluate, prepare_examples, train_with, write_loss_trace, Example, MetricsReport, MultiSeedReport, TrainError,
};
use sha2::{Digest, Sha256};

use crate::config::{Loaded, RunConfig};
use crate::error::{CliError, EXIT_GRAPH};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_TRACE_FILE: &str = "loss_trace.csv";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";
pub const METRICS_FILE: &str = "metrics.json";

fn write_file(path: &Path, body: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut body = serde_json::to_vec_pretty(value).expect("serializable");
    body.push(b'\n');
    body
}

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let loaded = load_dir(&config.paths.data)?;
    let panel = align_panel(&loaded.series, config.data.coverage)?;
    let dir = config.panel_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::config(format!("cannot clear {}: {e}", dir.display())))?;
    }
    panel.write_cache(&dir, loaded.dropped_rows)?;
    println!(
        "N={} T={} dropped_tickers={} dropped_rows={}",
        panel.num_stocks(),
        panel.num_days(),
        panel.dropped.len(),
        loaded.dropped_rows
    );
    for (ticker, presence) in &panel.dropped {
        log::warn!("dropped {ticker}: present on {:.1}% of the calendar", presence * 100.0);
    }
    Ok(())
}

fn read_panel(config: &RunConfig) -> Result<MarketPanel, CliError> {
    let dir = config.panel_dir();
    if !dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::config(format!(
            "no panel cache in {}; run `mgdpr ingest --config <config>` first",
            dir.display()
        )));
    }
    Ok(MarketPanel::read_cache(&dir)?.0)
}

/// SHA-256 over the cached manifest and ticker files.
fn panel_fingerprint(config: &RunConfig, panel: &MarketPanel) -> Result<String, CliError> {
    let dir = config.panel_dir();
    let mut hasher = Sha256::new();
    let files = std::iter::once(MANIFEST_FILE.to_string()).chain(panel.tickers().iter().map(|t| format!("{t}.csv")));
    for name in files {
        let path = dir.join(&name);
        let bytes = fs::read(&path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// The model configuration with the panel's stock and relation counts.
fn model_config(loaded: &Loaded, panel: &MarketPanel) -> Result<ModelConfig, CliError> {
    let mut model = loaded.config.model.clone();
    if loaded.explicit.iter().any(|k| k == "model.num_stocks") && model.num_stocks != panel.num_stocks() {
        return Err(CliError::config(format!(
            "model.num_stocks is {} but the panel has {} stocks",
            model.num_stocks,
            panel.num_stocks()
        )));
    }
    model.num_stocks = panel.num_stocks();
    if model.num_relations != mgdpr_core::market_data::NUM_INDICATORS {
        return Err(CliError::config(format!(
            "model.num_relations must be {} (one per indicator)",
            mgdpr_core::market_data::NUM_INDICATORS
        )));
    }
    model.validate()?;
    Ok(model)
}

pub fn graph(loaded: &Loaded, day: Option<usize>) -> Result<(), CliError> {
    let config = &loaded.config;
    let panel = read_panel(config)?;
    let tau = model_config(loaded, &panel)?.tau;
    let days = panel.num_days();
    if days < tau + 1 {
        return Err(mgdpr_core::market_data::DataError::InsufficientData {
            needed: tau + 1,
            available: days,
        }
        .into());
    }
    let range = tau - 1..=days - 2;
    let selected: Vec<usize> = match day {
        Some(d) if !range.contains(&d) => {
            return Err(CliError::new(
                EXIT_GRAPH,
                format!("--day {d} outside the window days {}..={}", range.start(), range.end()),
            ))
        }
        Some(d) => vec![d],
        None => range.collect(),
    };
    let graphs = selected
        .iter()
        .map(|&t| {
            build_day_graphs(&panel, t, tau).map_err(|e| match e {
                GraphError::Degenerate { .. } => CliError::new(EXIT_GRAPH, format!("{e} ({})", panel.calendar()[t])),
                other => other.into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dir = config.graph_dir();
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::config(format!("cannot clear {}: {e}", dir.display())))?;
    }
    let fingerprint = panel_fingerprint(config, &panel)?;
    let index = write_graph_cache(&dir, &graphs, panel.calendar(), tau, &fingerprint)?;
    println!(
        "graphs for {} day(s) x {} relations written to {}",
        index.days.len(),
        index.relations.len(),
        dir.display()
    );
    Ok(())
}

struct Prepared {
    panel: MarketPanel,
    model: ModelConfig,
    splits: Splits,
    graphs: Vec<mgdpr_core::graph_generation::MultiRelAdjacency>,
}

fn prepare(loaded: &Loaded) -> Result<Prepared, CliError> {
    let config = &loaded.config;
    let panel = read_panel(config)?;
    let model = model_config(loaded, &panel)?;
    let dir = config.graph_dir();
    if !dir.join(INDEX_FILE).exists() {
        return Err(CliError::config(format!(
            "no graph cache in {}; run `mgdpr graph --config <config>` first",
            dir.display()
        )));
    }
    let (index, graphs) = read_graph_cache(&dir)?;
    if index.panel_fingerprint != panel_fingerprint(config, &panel)? {
        return Err(CliError::config(
            "graph cache was built from a different panel; rerun `mgdpr graph --config <config>`",
        ));
    }
    if index.tau != model.tau || index.num_stocks != model.num_stocks {
        return Err(CliError::config(format!(
            "graph cache has tau={} N={}, config needs tau={} N={}; rerun `mgdpr graph --config <config>`",
            index.tau, index.num_stocks, model.tau, model.num_stocks
        )));
    }
    let samples = make_windows(&panel, model.tau)?;
    let s = &config.split;
    let splits = split_periods(&samples, s.train, s.val, s.test)?;
    Ok(Prepared {
        panel,
        model,
        splits,
        graphs,
    })
}

fn examples(
    model: &Mgdpr,
    samples: &[mgdpr_core::market_data::WindowSample],
    graphs: &[mgdpr_core::graph_generation::MultiRelAdjacency],
) -> Result<Vec<Example>, CliError> {
    prepare_examples(model, samples, graphs).map_err(|e| match e {
        TrainError::MissingGraph(t) => CliError::config(format!(
            "graph cache lacks day {t}; rerun `mgdpr graph --config <config>` without --day"
        )),
        other => other.into(),
    })
}

pub fn train(loaded: &Loaded) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = prepare(loaded)?;
    if p.splits.train.is_empty() {
        return Err(CliError::config("the training period contains no complete samples"));
    }
    log::info!(
        "N={} T={}: {} train / {} val / {} test days",
        p.panel.num_stocks(),
        p.panel.num_days(),
        p.splits.train.len(),
        p.splits.val.len(),
        p.splits.test.len()
    );
    for &seed in &config.seeds {
        let model = Mgdpr::new(p.model.clone(), seed)?;
        let train_set = examples(&model, &p.splits.train, &p.graphs)?;
        let val_set = examples(&model, &p.splits.val, &p.graphs)?;
        let train_config = mgdpr_core::training::TrainConfig {
            seed,
            ..config.train.clone()
        };
        let outcome = train_with(model, &train_set, &val_set, &train_config, |r, _| {
            if r.epoch % 50 == 0 || r.epoch == train_config.epochs {
                log::info!("seed {seed} epoch {}: loss {:.6} val_acc {:?}", r.epoch, r.loss, r.val_acc);
            }
            Ok(ControlFlow::Continue(()))
        })?;
        let dir = config.seed_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))?;
        checkpoint::save(&outcome.best, &dir.join(CHECKPOINT_FILE))?;
        write_loss_trace(&dir.join(LOSS_TRACE_FILE), &outcome.trace)?;
        println!(
            "seed {seed}: best epoch {} of {}, checkpoint {}",
            outcome.best_epoch,
            outcome.trace.len(),
            dir.join(CHECKPOINT_FILE).display()
        );
    }
    let mut resolved = config.resolved();
    resolved.insert("model.num_stocks".into(), p.model.num_stocks.into());
    write_file(&config.paths.output.join(RESOLVED_CONFIG_FILE), &json(&resolved))
}

pub fn eval(loaded: &Loaded) -> Result<(), CliError> {
    let config = &loaded.config;
    let p = prepare(loaded)?;
    if p.splits.test.is_empty() {
        return Err(CliError::config("the test period contains no complete samples"));
    }
    let hash = config.hash();
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let path = config.seed_dir(seed).join(CHECKPOINT_FILE);
        if !path.exists() {
            return Err(CliError::checkpoint(format!(
                "no checkpoint at {}; run `mgdpr train` with this seed first",
                path.display()
            )));
        }
        let model = checkpoint::load(&path)?;
        if model.config != p.model {
            return Err(CliError::checkpoint(format!(
                "{} was trained with a different model configuration",
                path.display()
            )));
        }
        let test_set = examples(&model, &p.splits.test, &p.graphs)?;
        let report = MetricsReport::new(&config.market, config.split.test, seed, &hash, evaluate(&model, &test_set)?);
        println!(
            "seed {seed}: acc {:.4} mcc {:.4} f1 {:.4}",
            report.acc, report.mcc, report.f1
        );
        runs.push(report);
    }
    let body = if runs.len() == 1 {
        json(&runs[0])
    } else {
        let report = MultiSeedReport::new(runs);
        let s = &report.summary;
        println!(
            "{} seeds: acc {:.4}±{:.4} mcc {:.4}±{:.4} f1 {:.4}±{:.4}",
            report.runs.len(),
            s.acc.mean,
            s.acc.std,
            s.mcc.mean,
            s.mcc.std,
            s.f1.mean,
            s.f1.std
        );
        json(&report)
    };
    write_file(&config.paths.output.join(METRICS_FILE), &body)
}
