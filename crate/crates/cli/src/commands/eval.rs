use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use serde_json::json;

use ragaxai::dataio::{load_annotations, read_feature_cache, DatasetManifest, ExpertAnnotation};
use ragaxai::evalsal::{
    annotated_seconds, bin_trend, bins_csv, precision_accuracy_bins, saliency_report, Method,
    SaliencyEvalRecord, DEFAULT_BIN_WIDTH, SECONDS,
};
use ragaxai::model::load_checkpoint;

use super::explain::{explain_clip, ExplainMethod};
use crate::{model_input, par_map, song_of_clip, write_json, write_with_header, Outcome, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodChoice {
    Gradcampp,
    Slime,
    Both,
}

impl MethodChoice {
    fn methods(self) -> Vec<ExplainMethod> {
        match self {
            MethodChoice::Gradcampp => vec![ExplainMethod::Gradcampp],
            MethodChoice::Slime => vec![ExplainMethod::Slime],
            MethodChoice::Both => vec![ExplainMethod::Gradcampp, ExplainMethod::Slime],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub method: MethodChoice,
    pub bin_width: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            method: MethodChoice::Both,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

fn eval_method(m: ExplainMethod) -> Method {
    match m {
        ExplainMethod::Gradcampp => Method::GradCamPp,
        ExplainMethod::Slime => Method::SoundLime,
    }
}

fn records_csv(records: &[SaliencyEvalRecord]) -> String {
    let mut s = String::from("clip_id,method,probability,correct");
    for t in 1..=10 {
        let _ = write!(s, ",p_at_{t}");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{},{:.6},{}", r.clip_id, r.method.tag(), r.probability, r.correct as u8);
        for p in &r.precision {
            let _ = write!(s, ",{p:.6}");
        }
        s.push('\n');
    }
    s
}

/// Precision@t of model explanations against expert annotations, the
/// precision-accuracy bins, and a summary with the random baseline.
pub fn cmd_eval_saliency(cfg: &RunConfig, opts: &EvalOptions) -> Result<Outcome> {
    let model = load_checkpoint(cfg.require(&cfg.checkpoint, "--checkpoint")?)?;
    let manifest = DatasetManifest::load(cfg.require(&cfg.manifest, "--manifest")?)?;
    let cache_dir = cfg.require(&cfg.cache_dir, "--cache-dir")?;
    let ann_path = cfg.require(&cfg.annotations, "--annotations")?;
    let annotations = load_annotations(ann_path)?;
    if annotations.is_empty() {
        bail!("{} holds no annotations", ann_path.display());
    }
    let songs: BTreeMap<&str, _> = manifest.songs.iter().map(|s| (s.song_id.as_str(), s)).collect();

    let mut outcome = Outcome::default();
    let mut clips: Vec<&ExpertAnnotation> = Vec::new();
    for ann in &annotations {
        let path = cache_dir.join(format!("{}.chrm", ann.clip_id));
        if !path.exists() || !songs.contains_key(song_of_clip(&ann.clip_id)) {
            eprintln!("warning: skipping {}: no cached features or manifest entry", ann.clip_id);
            continue;
        }
        clips.push(ann);
    }
    if clips.is_empty() {
        bail!("none of the annotated clips have cached features in {}", cache_dir.display());
    }

    let methods = opts.method.methods();
    let run = |ann: &&ExpertAnnotation| -> Result<Vec<SaliencyEvalRecord>> {
        let song = songs[song_of_clip(&ann.clip_id)];
        let path = cache_dir.join(format!("{}.chrm", ann.clip_id));
        let raw = read_feature_cache(&path).with_context(|| format!("reading {}", path.display()))?;
        let chroma = model_input(raw, Some(song.tonic_pitch_class), model.config.tonic_normalize)?;
        let label = model.class_index(&song.raga_label)?;
        methods
            .iter()
            .map(|&m| {
                let ex = explain_clip(&model, &chroma, m, &cfg.slime, None)?;
                Ok(SaliencyEvalRecord::evaluate(
                    &ann.clip_id,
                    eval_method(m),
                    &ex.saliency.seconds,
                    ann,
                    ex.class == label,
                    ex.probability as f64,
                )?)
            })
            .collect()
    };
    let results = par_map(&clips, cfg.jobs(), run)?;
    let mut records = Vec::new();
    for (ann, r) in clips.iter().zip(results) {
        match r {
            Ok(rs) => records.extend(rs),
            Err(e) => outcome.failures.push(format!("{}: {e:#}", ann.clip_id)),
        }
    }
    if records.is_empty() {
        bail!("no clip could be evaluated: {}", outcome.failures.join("; "));
    }

    let table = saliency_report(&records)?;
    write_with_header(&cfg.out_dir, "saliency_table.csv", cfg, &table.to_csv())?;
    write_with_header(&cfg.out_dir, "saliency_table.txt", cfg, &table.to_text())?;
    write_with_header(&cfg.out_dir, "saliency_records.csv", cfg, &records_csv(&records))?;

    let evaluated: Vec<&ExpertAnnotation> = clips
        .iter()
        .filter(|a| records.iter().any(|r| r.clip_id == a.clip_id))
        .copied()
        .collect();
    let baseline = evaluated
        .iter()
        .map(|a| annotated_seconds(a).len() as f64 / SECONDS as f64)
        .sum::<f64>()
        / evaluated.len() as f64;
    let mut per_method = serde_json::Map::new();
    for (m, &method) in table.methods.iter().enumerate() {
        let recs: Vec<SaliencyEvalRecord> = records.iter().filter(|r| r.method == method).cloned().collect();
        let bins = precision_accuracy_bins(&recs, opts.bin_width)?;
        write_with_header(
            &cfg.out_dir,
            &format!("precision_bins_{}.csv", method.tag()),
            cfg,
            &bins_csv(&bins),
        )?;
        let accuracy = recs.iter().filter(|r| r.correct).count() as f64 / recs.len() as f64;
        per_method.insert(
            method.tag().into(),
            json!({
                "clips": recs.len(),
                "precision_at_3": table.rows[2][m],
                "accuracy": accuracy,
                "bins": bins.len(),
                "spearman": bin_trend(&bins),
            }),
        );
    }
    write_json(
        &cfg.out_dir,
        "saliency_summary.json",
        cfg,
        json!({
            "clips": evaluated.len(),
            "skipped": annotations.len() - clips.len(),
            "random_baseline": baseline,
            "bin_width": opts.bin_width,
            "methods": per_method,
            "failures": outcome.failures,
        }),
    )?;
    Ok(outcome)
}
