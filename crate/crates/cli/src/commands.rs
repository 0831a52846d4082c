use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use screening_core::classifier::TrainConfig;
use screening_core::corpus::{self, default_filters, screening_texts, Format, PreprocessReport};
use screening_core::simulator::{
    compare_strategies, load_oracle_corpus, random_order_he, read_summary, run_experiment, write_report,
    ExperimentConfig, ExperimentSummary, MeanSe, SimulatorError, SyntheticSpec,
};
use screening_service::{AppState, ServiceConfig};
use serde::Serialize;

use crate::{IngestArgs, ReportArgs, ServeArgs, SimulateArgs};

fn resolve_format(path: &Path, explicit: Option<Format>) -> Result<Format> {
    if let Some(f) = explicit {
        return Ok(f);
    }
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => Ok(Format::Csv),
        Some("jsonl" | "ndjson" | "json") => Ok(Format::Jsonl),
        _ => bail!("cannot infer the format of {}; pass --format csv|jsonl", path.display()),
    }
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn ingest(args: IngestArgs) -> Result<()> {
    let format = resolve_format(&args.input, args.format)?;
    let corpus = corpus::ingest(&args.input, format)?;
    let texts = screening_texts(&corpus, &default_filters())?;
    let report = PreprocessReport::new(&corpus, &texts);
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    write_jsonl(&args.out.join("corpus.jsonl"), &corpus.documents)?;
    write_jsonl(&args.out.join("texts.jsonl"), &texts)?;
    fs::write(args.out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    println!("documents          {}", report.documents);
    println!("duplicates         {}", report.duplicates);
    println!("sentences kept     {}", report.sentences_kept);
    println!("sentences dropped  {}", report.sentences_dropped);
    println!("fully dropped docs {}", report.documents_fully_dropped);
    println!("snapshot written to {}", args.out.display());
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let mut sizes = args.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let config = ExperimentConfig {
        strategies: args.strategies.clone(),
        training_sizes: sizes,
        seeds: args.seeds.clone(),
        target_ir: args.target_ir,
        batch_size: args.batch_size,
        init_size: args.init_size,
        train: TrainConfig {
            epochs: args.epochs,
            learning_rate: args.learning_rate,
            ..TrainConfig::default()
        },
        ensemble_runs: args.ensemble_runs,
    };
    config.validate()?;

    let (oracle, default_id) = match &args.corpus {
        Some(path) => {
            let oracle = load_oracle_corpus(path, resolve_format(path, args.format)?)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus").to_string();
            (oracle, stem)
        }
        None => {
            let oracle = SyntheticSpec::new(args.n, args.prevalence, args.signal, args.seed).generate()?;
            (oracle, format!("synthetic-n{}-p{}-s{}-seed{}", args.n, args.prevalence, args.signal, args.seed))
        }
    };
    let id = args.id.clone().unwrap_or(default_id);
    let started = Instant::now();
    let results = run_experiment(&oracle, &config)?;
    let summary = ExperimentSummary {
        experiment_id: id.clone(),
        n: oracle.len(),
        n_included: oracle.n_included,
        prevalence: oracle.prevalence(),
        config: config.clone(),
        comparison: compare_strategies(&results),
        no_ml_random_order: MeanSe::of(&random_order_he(&oracle, &config.seeds, config.target_ir)?),
        cells: results.cells.clone(),
    };
    let dir = args.out.join(&id);
    write_report(&dir, &summary, &results.cells)?;
    print!("{}", render_summary(&summary));
    println!("report written to {}", dir.display());
    tracing::info!(seconds = started.elapsed().as_secs_f64(), "experiment finished");
    Ok(())
}

fn fmt_mean_se(m: Option<MeanSe>) -> String {
    match m {
        None => "-".into(),
        Some(MeanSe { mean, se: Some(se), .. }) => format!("{mean:.3} ± {se:.3}"),
        Some(MeanSe { mean, se: None, .. }) => format!("{mean:.3}"),
    }
}

fn render_summary(s: &ExperimentSummary) -> String {
    let t = &s.comparison;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "experiment {}: n={} included={} (prevalence {:.3}), target IR {:.2}",
        s.experiment_id, s.n, s.n_included, s.prevalence, t.target_ir
    );
    let _ = writeln!(
        out,
        "no-model HE {:.3} (random order observed: {})",
        t.no_ml_he,
        fmt_mean_se(s.no_ml_random_order)
    );
    let _ = writeln!(out, "{:<8} {:>6} {:>16} {:>10}", "strategy", "size", "HE at target", "saved");
    for row in &t.rows {
        let saved = row
            .saved_vs_no_ml
            .map_or("-".to_string(), |e| format!("{:.1}%", 100.0 * e.relative));
        let size = row.best_training_size.map_or("-".to_string(), |s| s.to_string());
        let flag = if row.flagged { "  (target not reached on every seed)" } else { "" };
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>16} {:>10}{flag}",
            row.strategy.to_string(),
            size,
            fmt_mean_se(row.he_at_target),
            saved
        );
    }
    let _ = writeln!(out, "per training size:");
    let _ = writeln!(
        out,
        "{:<8} {:>6} {:>16} {:>9} {:>16} {:>16}",
        "strategy", "size", "HE at target", "unreached", "pool F1", "AL incl. frac"
    );
    for row in &t.rows {
        for z in &row.sizes {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>16} {:>9} {:>16} {:>16}",
                row.strategy.to_string(),
                z.training_size,
                fmt_mean_se(z.he_at_target),
                z.unreached,
                fmt_mean_se(z.pool_f1),
                fmt_mean_se(z.al_included_fraction)
            );
        }
    }
    out
}

/// Experiment summaries under `dir`: the directory itself, or its children.
fn collect_summaries(dir: &Path, found: &mut Vec<(PathBuf, ExperimentSummary)>) -> Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    match read_summary(dir) {
        Ok(s) => {
            found.push((dir.to_path_buf(), s));
            return Ok(());
        }
        Err(SimulatorError::NoResults(_)) => {}
        Err(e) => return Err(e).with_context(|| format!("cannot read results in {}", dir.display())),
    }
    let mut children: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for child in children {
        match read_summary(&child) {
            Ok(s) => found.push((child, s)),
            Err(SimulatorError::NoResults(_)) => {}
            Err(e) => return Err(e).with_context(|| format!("cannot read results in {}", child.display())),
        }
    }
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<()> {
    let mut found = Vec::new();
    for dir in &args.dirs {
        collect_summaries(dir, &mut found)?;
    }
    if found.is_empty() {
        let dirs: Vec<String> = args.dirs.iter().map(|d| d.display().to_string()).collect();
        bail!("no results found in {}", dirs.join(", "));
    }
    let mut ids = std::collections::HashSet::new();
    for (dir, s) in &found {
        if !ids.insert(s.experiment_id.clone()) {
            bail!("experiment id {} appears twice (again in {})", s.experiment_id, dir.display());
        }
    }

    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let mut table = csv::Writer::from_path(args.out.join("summary.csv"))?;
    table.write_record([
        "experiment_id",
        "strategy",
        "training_size",
        "he_mean",
        "he_se",
        "unreached",
        "validation_f1",
        "pool_f1",
        "al_included_fraction",
        "best",
    ])?;
    let mut long = csv::Writer::from_path(args.out.join("long.csv"))?;
    long.write_record(["experiment_id", "strategy", "size", "seed", "he", "ir"])?;
    let num = |m: Option<MeanSe>| m.map_or(String::new(), |m| m.mean.to_string());
    for (dir, s) in &found {
        for row in &s.comparison.rows {
            for z in &row.sizes {
                table.write_record([
                    s.experiment_id.clone(),
                    row.strategy.to_string(),
                    z.training_size.to_string(),
                    num(z.he_at_target),
                    z.he_at_target.and_then(|m| m.se).map_or(String::new(), |v| v.to_string()),
                    z.unreached.to_string(),
                    num(z.validation_f1),
                    num(z.pool_f1),
                    num(z.al_included_fraction),
                    (row.best_training_size == Some(z.training_size)).to_string(),
                ])?;
            }
        }
        let path = dir.join("long.csv");
        if path.exists() {
            let mut rdr = csv::Reader::from_path(&path)?;
            for rec in rdr.records() {
                let rec = rec?;
                let mut out = vec![s.experiment_id.as_str()];
                out.extend(rec.iter());
                long.write_record(out)?;
            }
        }
        print!("{}", render_summary(s));
        println!();
    }
    table.flush()?;
    long.flush()?;
    println!("{} experiment(s); tables written to {}", found.len(), args.out.display());
    Ok(())
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let config = ServiceConfig {
            data_dir: args.data_dir.clone(),
            token: args.token.clone(),
            ..ServiceConfig::default()
        };
        let state = AppState::new(&config)?;
        let listener = screening_service::bind(args.addr)
            .await
            .with_context(|| format!("cannot listen on {}", args.addr))?;
        println!("listening on http://{}/v1", listener.local_addr()?);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        screening_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}
