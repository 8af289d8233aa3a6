use crate::config::{overlay, RunConfig};
use crate::data::{load_dataset, load_matches, read_matches, Dataset, SplitName};
use crate::error::CliError;
use crate::output::Outputs;
use serde::Serialize;
use serde_json::json;
use shotcap_core::annotation::{
    caption_stats, dataset_stats, has_errors, serialize_match, validate_match, Severity, Violation,
};
use shotcap_core::metrics::{evaluate_corpus, EvalPair, METRICS_VERSION};
use shotcap_core::pipeline::synth::{mirror_fixture, synth_generate, CORPUS_TARGETS};
use shotcap_core::pipeline::ShotSample;
use shotcap_core::tactics::{
    curves_to_csv, curves_to_svg, default_patterns, match_intensity, match_occurrences,
    patterns_from_json, TacticMapping, SMOOTHING_METHOD,
};
use shotcap_model::{
    evaluate, fit, load_checkpoint, save_checkpoint, AdamW, AdamWConfig, CaptionModel, ModelConfig,
    ModelInput, ParamStore, TrainConfig,
};
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;

#[derive(Serialize)]
struct FileReport {
    file: String,
    match_id: Option<String>,
    violations: Vec<Violation>,
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.paths.annotations()?;
    let mut files = Vec::new();
    for (path, parsed) in read_matches(&dir)? {
        let file = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        files.push(match parsed {
            Ok(m) => FileReport {
                file,
                match_id: Some(m.match_id.clone()),
                violations: validate_match(&m),
            },
            Err(e) => FileReport {
                file,
                match_id: None,
                violations: vec![Violation {
                    severity: Severity::Error,
                    rule_id: "schema".into(),
                    path: String::new(),
                    message: e.to_string(),
                }],
            },
        });
    }
    let all: Vec<&Violation> = files.iter().flat_map(|f| &f.violations).collect();
    let errors = all.iter().filter(|v| v.severity == Severity::Error).count();
    let report = json!({
        "files": files,
        "errors": errors,
        "warnings": all.len() - errors,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    if let Some(out) = &cfg.paths.out {
        let mut o = Outputs::new();
        o.json(&out.join("validation.json"), &report)?;
        o.commit();
    }
    let failed = files.iter().any(|f| has_errors(&f.violations));
    if failed {
        return Err(CliError::Domain(format!("{errors} error violation(s)")));
    }
    Ok(())
}

pub fn stats(cfg: &RunConfig, top_words: usize) -> Result<(), CliError> {
    let matches = load_matches(&cfg.paths.annotations()?)?;
    let report = dataset_stats(&matches)?;
    let captions = caption_stats(&matches, top_words).ok();
    print!("{}", report.to_table());
    if let Some(out) = &cfg.paths.out {
        let mut o = Outputs::new();
        o.json(
            &out.join("stats.json"),
            &json!({ "stats": report, "captions": captions }),
        )?;
        o.commit();
    }
    Ok(())
}

pub fn tactics(cfg: &RunConfig) -> Result<(), CliError> {
    let t = &cfg.tactics;
    let mapping = match &t.mapping {
        Some(p) => TacticMapping::from_json(&crate::data::read_text(p)?)?,
        None => TacticMapping::default(),
    };
    let patterns = match &t.patterns {
        Some(p) => patterns_from_json(&crate::data::read_text(p)?)?,
        None => default_patterns(),
    };
    let matches = load_matches(&cfg.paths.annotations()?)?;
    let dir = cfg.paths.out()?.join("tactics");
    let mut o = Outputs::new();
    let mut summary = Vec::new();
    for m in &matches {
        let curves = match_intensity(m, &mapping, &patterns, t.bin_width, t.kernel_sigma)?;
        let occurrences = match_occurrences(m, &mapping, &patterns);
        let mut counts: BTreeMap<&str, usize> = patterns
            .iter()
            .map(|p| (p.pattern_id.as_str(), 0))
            .collect();
        for occ in &occurrences {
            *counts.entry(occ.pattern_id.as_str()).or_default() += 1;
        }
        o.write(
            &dir.join(format!("{}.csv", m.match_id)),
            curves_to_csv(&curves).as_bytes(),
        )?;
        o.write(
            &dir.join(format!("{}.svg", m.match_id)),
            curves_to_svg(&curves, &format!("{} tactic intensity", m.match_id)).as_bytes(),
        )?;
        let line: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{} {}", m.match_id, line.join(" "));
        summary.push(json!({
            "match_id": m.match_id,
            "counts": counts,
            "occurrences": occurrences,
        }));
    }
    o.json(
        &dir.join("tactics.json"),
        &json!({
            "smoothing": SMOOTHING_METHOD,
            "bin_width": t.bin_width,
            "kernel_sigma": t.kernel_sigma,
            "patterns": patterns,
            "matches": summary,
        }),
    )?;
    o.commit();
    Ok(())
}

pub struct SynthArgs {
    pub samples: Option<usize>,
    pub frame_size: Option<usize>,
    pub mirror: bool,
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<(), CliError> {
    let out = cfg.paths.out()?;
    let mut sc = cfg.synth_config()?;
    if let Some(seed) = cfg.seed {
        sc.seed = seed;
    }
    let mut o = Outputs::new();
    if args.mirror {
        let matches = mirror_fixture(&CORPUS_TARGETS, sc.seed)?;
        for m in &matches {
            o.write(
                &out.join("annotations").join(format!("{}.json", m.match_id)),
                serialize_match(m).as_bytes(),
            )?;
        }
        println!(
            "wrote {} fixture matches to {}",
            matches.len(),
            out.display()
        );
        o.commit();
        return Ok(());
    }
    if let Some(n) = args.samples {
        sc.samples = n;
    }
    if let Some(n) = args.frame_size {
        sc.frame_size = n;
    }
    let corpus = synth_generate(&sc)?;
    for m in &corpus.matches {
        o.write(
            &out.join("annotations").join(format!("{}.json", m.match_id)),
            serialize_match(m).as_bytes(),
        )?;
    }
    for (i, side) in corpus.sidecars.iter().enumerate() {
        o.write(
            &out.join("modalities")
                .join(format!("{}.json", side.rally_id)),
            side.to_json().as_bytes(),
        )?;
        let clip = corpus.rally_clip(i)?;
        let mut bytes = Vec::new();
        clip.clip
            .write_to(&mut bytes)
            .map_err(|e| CliError::Io(e.to_string()))?;
        o.write(
            &out.join("clips").join(format!("{}.clip", side.rally_id)),
            &bytes,
        )?;
    }
    o.write(&out.join("vocab.json"), corpus.vocab.to_json().as_bytes())?;
    o.json(&out.join("synth.json"), &sc)?;
    println!(
        "wrote {} samples in {} rallies to {}",
        corpus.samples.len(),
        corpus.sidecars.len(),
        out.display()
    );
    o.commit();
    Ok(())
}

fn prepare_all(model: &CaptionModel, samples: &[ShotSample]) -> Result<Vec<ModelInput>, CliError> {
    samples.iter().map(|s| Ok(model.prepare(s)?)).collect()
}

/// The model configuration for a dataset: desk-scale defaults shaped by the
/// data, then the config file's `model` overrides.
fn model_config(cfg: &RunConfig, data: &Dataset, seed: u64) -> Result<ModelConfig, CliError> {
    let first = data
        .train
        .first()
        .ok_or_else(|| CliError::Domain("training split is empty".into()))?;
    let [t, h, w, c] = first.clip.shape();
    let base = ModelConfig {
        frames: t,
        height: h,
        width: w,
        channels: c,
        pose_dim: first.modalities.pose_dim(),
        seed,
        ..ModelConfig::desk(data.vocab.len(), h)
    };
    let config: ModelConfig = overlay(&base, &cfg.model, "model")?;
    config.validate()?;
    Ok(config)
}

fn frozen_digest(params: &ParamStore) -> String {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for e in params.entries().iter().filter(|e| !e.trainable) {
        e.name.hash(&mut h);
        for v in e.value.iter() {
            v.to_bits().hash(&mut h);
        }
    }
    format!("{:016x}", h.finish())
}

pub struct TrainArgs {
    pub epochs: Option<usize>,
    pub max_steps: Option<usize>,
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    let out = cfg.paths.out()?;
    let data = load_dataset(cfg, seed, None)?;
    let config = model_config(cfg, &data, seed)?;
    let mut model = CaptionModel::new(config)?;
    let train = prepare_all(&model, &data.train)?;
    let val = prepare_all(&model, &data.val)?;
    let tc = TrainConfig {
        epochs: args.epochs.unwrap_or(cfg.training.epochs),
        batch_size: cfg.training.batch_size,
        max_steps: args.max_steps.or(cfg.training.max_steps),
        seed,
        optimizer: AdamWConfig {
            lr: cfg.training.lr,
            weight_decay: cfg.training.weight_decay,
            ..AdamWConfig::default()
        },
    };
    let mut opt = AdamW::new(tc.optimizer, &model.params);
    let frozen_before = frozen_digest(&model.params);
    let mut log = String::new();
    let outcome = fit(&mut model, &mut opt, &train, &val, &tc, |rec| {
        log.push_str(&serde_json::to_string(rec).expect("record serializes"));
        log.push('\n');
    })?;
    let frozen_after = frozen_digest(&model.params);
    if frozen_before != frozen_after {
        return Err(CliError::Domain(
            "frozen parameters changed during training".into(),
        ));
    }
    let mut o = Outputs::new();
    o.write(&out.join("train_log.jsonl"), log.as_bytes())?;
    let last = out.join("last.ckpt");
    o.track(&last)?;
    save_checkpoint(&last, &model, Some(&opt), Some(&data.vocab))?;
    let mut best = model.clone();
    best.params = outcome.best_params.clone();
    let best_path = out.join("best.ckpt");
    o.track(&best_path)?;
    save_checkpoint(
        &best_path,
        &best,
        Some(&outcome.best_optimizer),
        Some(&data.vocab),
    )?;
    o.json(
        &out.join("train_summary.json"),
        &json!({
            "seed": seed,
            "model": model.config,
            "training": {
                "epochs": tc.epochs,
                "batch_size": tc.batch_size,
                "max_steps": tc.max_steps,
                "optimizer": tc.optimizer,
            },
            "samples": {"train": train.len(), "val": val.len(), "test": data.test.len()},
            "skipped": data.skipped,
            "steps": opt.step,
            "epochs": outcome.epochs,
            "best_epoch": outcome.best_epoch,
            "selection": "min validation L_total",
            "frozen_digest": frozen_after,
        }),
    )?;
    o.commit();
    for e in &outcome.epochs {
        let val = e
            .val
            .map_or_else(|| "-".to_string(), |l| format!("{:.4}", l.total));
        println!(
            "epoch {:>3} steps {:>5} train L_total {:.4} val L_total {val}",
            e.epoch, e.steps, e.train.total
        );
    }
    println!(
        "best epoch {} -> {}",
        outcome.best_epoch,
        best_path.display()
    );
    Ok(())
}

pub struct EvalArgs {
    pub checkpoint: Option<PathBuf>,
    pub split: SplitName,
    pub self_reference: bool,
}

fn checkpoint_path(cfg: &RunConfig, explicit: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => Ok(cfg.paths.out()?.join("best.ckpt")),
    }
}

fn write_report(cfg: &RunConfig, name: &str, report: &serde_json::Value) -> Result<(), CliError> {
    if let Some(out) = &cfg.paths.out {
        let mut o = Outputs::new();
        o.json(&out.join(name), report)?;
        o.commit();
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig, args: &EvalArgs) -> Result<(), CliError> {
    let seed = cfg.seed()?;
    if args.self_reference {
        let data = load_dataset(cfg, seed, None)?;
        let pairs: Vec<EvalPair> = data
            .part(args.split)
            .iter()
            .map(|s| EvalPair::from_text(&s.caption, &[&s.caption]))
            .collect();
        let metrics = evaluate_corpus(&pairs)?;
        print!("{}", metrics.to_text());
        return write_report(
            cfg,
            "eval_self_reference.json",
            &json!({
                "metrics_version": METRICS_VERSION,
                "split": args.split,
                "samples": pairs.len(),
                "metrics": metrics,
            }),
        );
    }
    let ckpt = load_checkpoint(&checkpoint_path(cfg, &args.checkpoint)?)?;
    let vocab = ckpt
        .vocab
        .ok_or_else(|| CliError::Domain("checkpoint carries no vocabulary".into()))?;
    let data = load_dataset(cfg, seed, Some(vocab))?;
    let model = ckpt.model;
    let inputs = prepare_all(&model, data.part(args.split))?;
    if inputs.is_empty() {
        return Err(CliError::Domain(format!("{:?} split is empty", args.split)));
    }
    let mut ev = evaluate(&model, &inputs, &data.vocab)?;
    print!("{}", ev.metrics.to_text());
    println!("exact    {}/{}", ev.exact_matches, ev.samples);
    if let Some(f1) = ev.semantic_f1 {
        println!("sem_f1   {f1:.4}");
    }
    ev.captions.truncate(cfg.metrics.keep_captions);
    write_report(
        cfg,
        "eval.json",
        &json!({
            "metrics_version": METRICS_VERSION,
            "split": args.split,
            "samples": ev.samples,
            "metrics": ev.metrics,
            "losses": ev.losses,
            "semantic_f1": ev.semantic_f1,
            "exact_matches": ev.exact_matches,
            "captions": ev.captions,
        }),
    )
}

pub struct CaptionArgs {
    pub checkpoint: Option<PathBuf>,
    pub rally: String,
    pub hit: usize,
    pub json: bool,
}

pub fn caption(cfg: &RunConfig, args: &CaptionArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&checkpoint_path(cfg, &args.checkpoint)?)?;
    let vocab = ckpt
        .vocab
        .ok_or_else(|| CliError::Domain("checkpoint carries no vocabulary".into()))?;
    let data = load_dataset(cfg, cfg.seed.unwrap_or(0), Some(vocab))?;
    let sample = [&data.train, &data.val, &data.test]
        .into_iter()
        .flatten()
        .find(|s| s.rally_id == args.rally && s.hit_index == args.hit)
        .ok_or_else(|| {
            CliError::Domain(format!(
                "no sample for rally {} hit {}",
                args.rally, args.hit
            ))
        })?;
    let x = ckpt.model.prepare(sample)?;
    let ids: Vec<u32> = ckpt
        .model
        .generate(&x)?
        .into_iter()
        .map(|t| t as u32)
        .collect();
    let generated = data.vocab.detokenize(&ids);
    if args.json {
        let v = json!({
            "rally_id": args.rally,
            "hit_index": args.hit,
            "shot_type": sample.shot_type,
            "reference": sample.caption,
            "generated": generated,
        });
        println!("{}", serde_json::to_string_pretty(&v).expect("serializes"));
    } else {
        println!("{generated}");
    }
    Ok(())
}
