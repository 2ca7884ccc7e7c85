use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use cfx_core::classifier::{
    fit_calibrated, select_thresholds, serve_adapter, Classifier, ExternalAdapter, FitConfig,
    Model, ModelFile, ModelThresholds,
};
use cfx_core::data::{load_dataset, write_dataset, zscore_stats, Dataset, Series};
use cfx_core::engine::{
    explain, CounterfactualResult, ExplainOptions, SparsifyConfig, VariantKind, RESULT_FILE,
};
use cfx_core::io::write_json_atomic;
use cfx_core::metrics::{
    aggregate_csv, aggregate_report, decision_margin, evaluate_result, write_metrics_csv,
    EvalConfig, GroupKey, MetricsEntry, QWeights,
};
use cfx_core::proto::{mine_prototypes, MiningConfig, PrototypeDB};
use cfx_core::rules::{
    extract_rules, occlusion_tensor, write_rules_jsonl, AttributionTensor, RuleConfig,
};
use cfx_core::synth::{generate, SynthConfig};
use cfx_core::CfxError;

use crate::args::{
    AdapterServeArgs, EvaluateArgs, ExplainArgs, FitArgs, MineArgs, ModelArgs, RenderArgs,
    RulesArgs, SynthArgs,
};
use crate::render::{write_overlay, OverlayOptions};

pub const LATENCY_FILE: &str = "latency.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PAIR_TABLE_FILE: &str = "aggregate_by_pair.csv";
pub const VARIANT_TABLE_FILE: &str = "summary_by_variant.csv";

fn check_classes(what: &str, got: &[String], dataset: &Dataset) -> Result<()> {
    if got != dataset.class_names.as_slice() {
        return Err(CfxError::InvalidArgument(format!(
            "{what} classes {got:?} differ from dataset classes {:?}",
            dataset.class_names
        ))
        .into());
    }
    Ok(())
}

/// Loads the reference model or starts the adapter. Adapters without
/// explicit thresholds are calibrated on `dataset`.
pub fn load_model(args: &ModelArgs, dataset: &Dataset) -> Result<Model> {
    let explicit = args
        .thresholds
        .clone()
        .map(ModelThresholds::new)
        .transpose()?;
    if let Some(path) = &args.model {
        let file =
            ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))?;
        check_classes("model", &file.class_names, dataset)?;
        let model = file.into_model()?;
        return match explicit {
            Some(t) => Ok(model.with_thresholds(t)?),
            None => Ok(model),
        };
    }
    let command = args
        .adapter
        .as_deref()
        .expect("clap requires --model or --adapter");
    let adapter = ExternalAdapter::spawn(command)?;
    check_classes("adapter", adapter.classes(), dataset)?;
    let thresholds = match explicit {
        Some(t) => t,
        None => {
            log::info!(
                "calibrating adapter thresholds on {} records",
                dataset.len()
            );
            let probs = dataset
                .records
                .iter()
                .map(|r| adapter.predict_proba(r))
                .collect::<cfx_core::Result<Vec<_>>>()?;
            select_thresholds(&probs, &dataset.labels)?.thresholds
        }
    };
    Ok(Model::new(adapter, thresholds)?)
}

fn dataset_at(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn record<'a>(dataset: &'a Dataset, id: &str) -> Result<(usize, &'a Series)> {
    let i = dataset
        .find_record(id)
        .ok_or_else(|| CfxError::InvalidArgument(format!("record '{id}' is not in the dataset")))?;
    Ok((i, &dataset.records[i]))
}

/// A class given by name or by index.
pub fn parse_class(name: &str, class_names: &[String]) -> Result<usize> {
    if let Some(i) = class_names.iter().position(|c| c == name) {
        return Ok(i);
    }
    match name.parse::<usize>() {
        Ok(i) if i < class_names.len() => Ok(i),
        _ => Err(CfxError::UnknownClass(name.to_string()).into()),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let config = SynthConfig {
        n_per_class: args.n_per_class,
        n_timesteps: args.timesteps,
        n_channels: args.channels,
        noise: args.noise,
        n_mixed: args.n_mixed,
        normalize: !args.raw,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let dataset = generate(&config)?;
    write_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} records ({} x {}) to {}",
        dataset.len(),
        args.timesteps,
        args.channels,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let dataset = dataset_at(&args.dataset)?;
    let config = FitConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        seed: args.seed,
        ..FitConfig::default()
    };
    let file = fit_calibrated(&dataset, &config)?;
    file.save(&args.out)?;
    let model = file.clone().into_model()?;
    let exact = dataset
        .records
        .iter()
        .zip(&dataset.labels)
        .filter(|(r, l)| model.predict_labels(r).map(|p| p == **l).unwrap_or(false))
        .count();
    for (name, t) in file.class_names.iter().zip(file.thresholds.values()) {
        println!("{name:<8} threshold {t:.3}");
    }
    println!(
        "exact-match accuracy {exact}/{} on the training records",
        dataset.len()
    );
    Ok(())
}

pub fn cmd_mine(args: &MineArgs) -> Result<()> {
    let dataset = dataset_at(&args.dataset)?;
    let model = load_model(&args.model, &dataset)?;
    let config = MiningConfig {
        band: args.band,
        seed: args.seed,
        ..MiningConfig::default()
    };
    let db = mine_prototypes(&dataset, &model, &config)?;
    db.save(&args.out)?;
    for s in &db.classes {
        match (s.omitted, s.passthrough, s.dims, s.k, s.silhouette) {
            (true, _, _, _, _) => println!("{:<8} no candidates, omitted", s.class),
            (_, true, _, _, _) => println!(
                "{:<8} {} candidates stored directly",
                s.class, s.n_candidates
            ),
            (_, _, Some(d), Some(k), Some(sil)) => {
                println!(
                "{:<8} {:>4} candidates -> {} prototypes (dims {d}, k {k}, silhouette {sil:.4}{})",
                s.class,
                s.n_candidates,
                s.n_prototypes,
                if s.k_truncated { ", k range truncated" } else { "" }
            )
            }
            _ => println!("{:<8} {} prototypes", s.class, s.n_prototypes),
        }
    }
    println!(
        "wrote {} prototypes to {}",
        db.entries.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Latency<'a> {
    query_id: &'a str,
    latency_ms: f64,
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let dataset = dataset_at(&args.dataset)?;
    let db = PrototypeDB::load(&args.db)
        .with_context(|| format!("loading prototype database {}", args.db.display()))?;
    check_classes("prototype database", &db.class_names, &dataset)?;
    let model = load_model(&args.model, &dataset)?;
    let (_, query) = record(&dataset, &args.record_id)?;

    let defaults = SparsifyConfig::default();
    let options = ExplainOptions {
        target: args
            .target
            .as_deref()
            .map(|t| parse_class(t, &db.class_names))
            .transpose()?,
        band: args.band,
        sparsify: SparsifyConfig {
            initial_keep_ratio: args.keep_ratio.unwrap_or(defaults.initial_keep_ratio),
            max_keep_ratio: args.max_keep_ratio.unwrap_or(defaults.max_keep_ratio),
            min_segment_len: args.min_segment.unwrap_or(defaults.min_segment_len),
            ..defaults
        },
        ..ExplainOptions::default()
    };

    let started = Instant::now();
    let result = match explain(query, &model, &db, &options) {
        Err(CfxError::NoTarget) => {
            return Err(CfxError::NoTarget).context(
                "the record is already predicted as every class, so there is nothing to flip to",
            );
        }
        Err(e @ CfxError::TargetIsCurrent(_)) => {
            return Err(e).context("pick a --target that is not currently predicted, or omit it");
        }
        other => other?,
    };
    let latency = started.elapsed();

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    result.save(&args.out)?;
    write_json_atomic(
        &args.out.join(LATENCY_FILE),
        &Latency {
            query_id: &result.query_id,
            latency_ms: latency.as_secs_f64() * 1e3,
        },
    )?;

    println!(
        "{}: predicted {} -> target {} via prototype {} (DTW {:.3})",
        result.query_id,
        result.initial_class(),
        result.target_name(),
        result.prototype_id,
        result.prototype_distance
    );
    for v in &result.variants {
        let margin = decision_margin(&v.probs, model.thresholds(), result.target_class)?;
        println!(
            "  {:<15} valid {:<5} mask {:.4} margin {:+.4}",
            v.kind.name(),
            v.valid,
            v.mask.fraction(),
            margin
        );
    }
    if let Some(why) = &result.alignment_error {
        println!("  aligned variant skipped: {why}");
    }
    println!("  latency {:.1} ms", latency.as_secs_f64() * 1e3);

    if let Some(svg) = &args.svg {
        render_result(&result, query, &args.svg_variant, None, svg)?;
    }
    Ok(())
}

fn render_result(
    result: &CounterfactualResult,
    query: &Series,
    variant: &str,
    attribution: Option<&[f32]>,
    path: &Path,
) -> Result<()> {
    let kind: VariantKind = variant.parse()?;
    let v = result
        .variant(kind)
        .ok_or_else(|| CfxError::InvalidArgument(format!("result has no '{variant}' variant")))?;
    let options = OverlayOptions {
        title: format!(
            "{}: {} -> {} ({}, valid: {})",
            result.query_id,
            result.initial_class(),
            result.target_name(),
            kind,
            v.valid
        ),
        ..OverlayOptions::default()
    };
    write_overlay(path, query, &v.series, &v.mask, attribution, &options)
}

/// `root` itself when it holds a result, otherwise its result
/// subdirectories in name order.
pub fn result_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(CfxError::MissingFile(root.to_path_buf()).into());
    }
    if root.join(RESULT_FILE).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs = Vec::new();
    for entry in std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))? {
        let path = entry?.path();
        if path.join(RESULT_FILE).is_file() {
            dirs.push(path);
        }
    }
    if dirs.is_empty() {
        return Err(CfxError::Empty("counterfactual result directory").into());
    }
    dirs.sort();
    Ok(dirs)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let dirs = result_dirs(&args.results)?;
    let dataset = dataset_at(&args.dataset)?;
    let model = load_model(&args.model, &dataset)?;
    let weights = match &args.weights {
        Some(w) => Some(QWeights::new(w[0], w[1], w[2], w[3])?),
        None => None,
    };
    let config = EvalConfig {
        sigma_train: zscore_stats(&dataset)?.sigma,
        band: args.band,
        weights,
        seed: args.seed,
        ..EvalConfig::default()
    };

    let mut entries: Vec<MetricsEntry> = Vec::new();
    for dir in &dirs {
        let result = CounterfactualResult::load(dir)
            .with_context(|| format!("loading result {}", dir.display()))?;
        check_classes("result", &result.class_names, &dataset)?;
        let (_, query) = record(&dataset, &result.query_id)?;
        entries.extend(evaluate_result(&result, query, &model, &config)?);
    }

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_metrics_csv(&args.out.join(METRICS_FILE), &entries)?;
    let pair_keys = [
        GroupKey::InitialClass,
        GroupKey::TargetClass,
        GroupKey::Variant,
    ];
    let pairs = aggregate_report(&entries, &pair_keys)?;
    cfx_core::io::write_atomic(
        &args.out.join(PAIR_TABLE_FILE),
        &aggregate_csv(&pairs, &pair_keys)?,
    )?;
    let variant_keys = [GroupKey::Variant];
    let variants = aggregate_report(&entries, &variant_keys)?;
    cfx_core::io::write_atomic(
        &args.out.join(VARIANT_TABLE_FILE),
        &aggregate_csv(&variants, &variant_keys)?,
    )?;

    println!("{} results, {} rows", dirs.len(), entries.len());
    println!(
        "{:<15} {:>4} {:>9} {:>9} {:>9} {:>9} {:>9}",
        "variant", "n", "validity", "multi", "sparsity", "noise", "margin"
    );
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for row in &variants {
        println!(
            "{:<15} {:>4} {:>9} {:>9} {:>9} {:>9} {:>9}",
            row.key[0],
            row.n,
            fmt(row.means[0]),
            fmt(row.means[1]),
            fmt(row.means[2]),
            fmt(row.means[6]),
            fmt(row.means[8])
        );
    }
    Ok(())
}

pub fn cmd_rules(args: &RulesArgs) -> Result<()> {
    let dataset = dataset_at(&args.dataset)?;
    let model = load_model(&args.model, &dataset)?;
    let attr = match &args.attr {
        Some(path) => AttributionTensor::load(path)
            .with_context(|| format!("loading attributions {}", path.display()))?,
        None => occlusion_tensor(&dataset, &model, args.window)?,
    };
    let config = RuleConfig {
        percentile: args.percentile,
        n_perturb: args.n_perturb,
        seed: args.seed,
        ..RuleConfig::default()
    };
    let set = extract_rules(&dataset, &attr, &model, &config)?;
    write_rules_jsonl(&args.out, &set.rules)?;
    let conjuncts: usize = set.rules.iter().map(|r| r.conjuncts.len()).sum();
    let mean = if set.rules.is_empty() {
        0.0
    } else {
        conjuncts as f64 / set.rules.len() as f64
    };
    println!(
        "{} rules, {mean:.2} conjuncts per rule (threshold {:.6}, {} record/class pairs without important features)",
        set.rules.len(),
        set.threshold,
        set.empty.len()
    );
    Ok(())
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let result = CounterfactualResult::load(&args.result)
        .with_context(|| format!("loading result {}", args.result.display()))?;
    let dataset = dataset_at(&args.dataset)?;
    let (index, query) = record(&dataset, &result.query_id)?;
    let attr = match &args.attr {
        Some(path) => {
            let a = AttributionTensor::load(path)?;
            a.check_matches(&dataset)?;
            Some(a)
        }
        None => None,
    };
    let slice = attr.as_ref().map(|a| a.slice(index, result.target_class));
    render_result(&result, query, &args.variant, slice, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn cmd_adapter_serve(args: &AdapterServeArgs) -> Result<()> {
    let file = ModelFile::load(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let shape = (file.classifier.n_timesteps, file.classifier.n_channels);
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_adapter(
        &file.classifier,
        &file.class_names,
        shape,
        stdin.lock(),
        stdout.lock(),
    )?;
    std::io::stdout().flush()?;
    Ok(())
}
