use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use ragaxai::dataio::{split_dataset, DatasetManifest, Split, DEFAULT_RATIOS};
use ragaxai::dsp::Chromagram;
use ragaxai::evalsal::{classification_report, confusion_csv, confusion_matrix, Level};
use ragaxai::model::{argmax, build_model, save_checkpoint, train_with, EpochRecord, LabeledChunk, ModelConfig};

use crate::{load_labeled_chunks, write_json, write_with_header, RunConfig};

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub chunk_weighted_f1: f64,
    pub song_weighted_f1: f64,
    pub test_chunks: usize,
    pub test_songs: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_f1,val_loss,val_f1\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6}",
            r.epoch, r.train_loss, r.train_f1, r.val_loss, r.val_f1
        );
    }
    s
}

/// Song-level split, training with early stopping on the validation
/// split, and chunk- and song-level reports on the test split.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let manifest_path = cfg.require(&cfg.manifest, "--manifest")?;
    let cache_dir = cfg.require(&cfg.cache_dir, "--cache-dir")?;
    let manifest = DatasetManifest::load(manifest_path)
        .with_context(|| format!("loading {}", manifest_path.display()))?;
    let vocab = manifest.vocabulary();
    let split = split_dataset(&manifest, DEFAULT_RATIOS, cfg.seed)?;
    let mut config = ModelConfig::new(cfg.variant, vocab.len());
    if config.lstm_hidden > 0 {
        config.readout = cfg.readout;
    }
    let chunks = load_labeled_chunks(&manifest, cache_dir, config.tonic_normalize)?;
    let part = |s: Split| -> Vec<LabeledChunk> {
        chunks
            .iter()
            .filter(|c| split.get(&c.song_id) == Some(s))
            .cloned()
            .collect()
    };
    let (train, val, test) = (part(Split::Train), part(Split::Val), part(Split::Test));
    let out = &cfg.out_dir;
    write_json(out, "split.json", cfg, serde_json::to_value(&split)?)?;
    eprintln!(
        "{}: {} train / {} val / {} test chunks",
        cfg.variant,
        train.len(),
        val.len(),
        test.len()
    );
    let model = build_model(&config, vocab.clone(), cfg.seed)?;
    let model = train_with(model, &train, &val, &cfg.hyperparams, |r| {
        eprintln!(
            "epoch {:3}  loss {:.4}  f1 {:.4}  val loss {:.4}  val f1 {:.4}",
            r.epoch, r.train_loss, r.train_f1, r.val_loss, r.val_f1
        )
    })?;
    let ckpt = out.join("model.rgmd");
    save_checkpoint(&model, &ckpt)?;
    write_with_header(out, "history.csv", cfg, &history_csv(&model.history))?;

    let refs: Vec<&Chromagram> = test.iter().map(|c| &c.chroma).collect();
    let probs = model.predict_batch(&refs)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let labels: Vec<usize> = test.iter().map(|c| c.label).collect();
    let chunk_report = classification_report(&preds, &labels, &vocab, Level::Chunk)?;
    write_with_header(out, "report_chunk.txt", cfg, &chunk_report.to_text())?;
    write_with_header(out, "report_chunk.csv", cfg, &chunk_report.to_csv())?;
    let matrix = confusion_matrix(&preds, &labels, &vocab)?;
    write_with_header(out, "confusion.csv", cfg, &confusion_csv(&matrix, &vocab))?;

    let mut songs: BTreeMap<&str, (usize, Vec<Vec<f32>>)> = BTreeMap::new();
    for (c, p) in test.iter().zip(&probs) {
        songs.entry(&c.song_id).or_insert((c.label, Vec::new())).1.push(p.clone());
    }
    let (mut song_preds, mut song_labels) = (Vec::new(), Vec::new());
    for (label, ps) in songs.values() {
        song_preds.push(ragaxai::model::vote(ps).expect("every song has chunks"));
        song_labels.push(*label);
    }
    let song_report = classification_report(&song_preds, &song_labels, &vocab, Level::Song)?;
    write_with_header(out, "report_song.txt", cfg, &song_report.to_text())?;
    write_with_header(out, "report_song.csv", cfg, &song_report.to_csv())?;

    let best_epoch = model
        .history
        .iter()
        .fold((0, f64::NEG_INFINITY), |best, r| if r.val_f1 > best.1 { (r.epoch, r.val_f1) } else { best })
        .0;
    let summary = TrainSummary {
        chunk_weighted_f1: chunk_report.weighted_f1,
        song_weighted_f1: song_report.weighted_f1,
        test_chunks: test.len(),
        test_songs: song_labels.len(),
        epochs_run: model.history.len(),
        best_epoch,
    };
    write_json(out, "train_summary.json", cfg, json!({ "summary": summary, "checkpoint": "model.rgmd" }))?;
    Ok(summary)
}
