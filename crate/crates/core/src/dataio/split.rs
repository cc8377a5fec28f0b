use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{Error, Result};

/// Approximate train/validation/test shares.
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.79, 0.15, 0.06);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Song-level assignment to train/val/test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn get(&self, song_id: &str) -> Option<Split> {
        self.assignment.get(song_id).copied()
    }

    pub fn songs(&self, split: Split) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Stratified song-level split. Each class gets at least one validation
/// and one test song; the remainder goes to training.
pub fn split_dataset(
    manifest: &DatasetManifest,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitAssignment> {
    let (tr, va, te) = ratios;
    if tr <= 0.0 || va <= 0.0 || te <= 0.0 || ((tr + va + te) - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let by_class = manifest.songs_by_class();
    if let Some((label, songs)) = by_class.iter().find(|(_, v)| v.len() < 3) {
        return Err(Error::InfeasibleSplit(format!(
            "class {label} has {} song(s); at least 3 are needed for one train, one val and one test song",
            songs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    for songs in by_class.values() {
        let mut songs = songs.clone();
        songs.shuffle(&mut rng);
        let n = songs.len() as f64;
        let n_test = ((n * te).round() as usize).max(1);
        let n_val = ((n * va).round() as usize).max(1);
        for (i, id) in songs.iter().enumerate() {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            assignment.insert(id.to_string(), split);
        }
    }
    Ok(SplitAssignment { assignment, seed })
}

/// Song-level stratified k-fold assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub fold_of: BTreeMap<String, usize>,
    /// Classes with fewer songs than folds; some folds see no test song of them.
    pub relaxed_classes: Vec<String>,
}

impl FoldAssignment {
    pub fn songs_in(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Deal each class's shuffled songs round-robin across folds. The starting
/// fold rotates between classes so small classes do not pile into fold 0.
pub fn kfold_songs(manifest: &DatasetManifest, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds < 2 {
        return Err(Error::InvalidInput(format!(
            "cross-validation needs at least 2 folds, got {folds}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = BTreeMap::new();
    let mut relaxed_classes = Vec::new();
    let mut start = 0;
    for (label, songs) in manifest.songs_by_class() {
        if songs.len() < folds {
            relaxed_classes.push(label.to_string());
        }
        let mut songs = songs.clone();
        songs.shuffle(&mut rng);
        for (i, id) in songs.iter().enumerate() {
            fold_of.insert(id.to_string(), (start + i) % folds);
        }
        start = (start + songs.len()) % folds;
    }
    Ok(FoldAssignment {
        folds,
        fold_of,
        relaxed_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::SongEntry;

    fn manifest(classes: usize, per_class: usize) -> DatasetManifest {
        let mut songs = Vec::new();
        for c in 0..classes {
            for s in 0..per_class {
                songs.push(SongEntry {
                    song_id: format!("c{c:02}_s{s:02}"),
                    raga_label: format!("raga{c:02}"),
                    tonic_pitch_class: (s % 12) as u8,
                    artist: String::new(),
                    music_segments: vec![],
                    audio_path: None,
                });
            }
        }
        DatasetManifest { songs }
    }

    #[test]
    fn every_class_in_val_and_test() {
        let m = manifest(12, 10);
        let split = split_dataset(&m, DEFAULT_RATIOS, 7).unwrap();
        assert_eq!(split.assignment.len(), 120);
        for (label, songs) in m.songs_by_class() {
            let count = |s| songs.iter().filter(|id| split.get(id) == Some(s)).count();
            assert!(count(Split::Test) >= 1, "{label}");
            assert!(count(Split::Val) >= 1, "{label}");
            let n = songs.len() as f64;
            assert!((count(Split::Train) as f64 - 0.79 * n).abs() <= 1.0);
            assert!((count(Split::Val) as f64 - 0.15 * n).abs() <= 1.0);
            assert!((count(Split::Test) as f64 - 0.06 * n).abs() <= 1.0);
        }
        assert_eq!(split, split_dataset(&m, DEFAULT_RATIOS, 7).unwrap());
        assert_ne!(split, split_dataset(&m, DEFAULT_RATIOS, 8).unwrap());
    }

    #[test]
    fn two_songs_is_infeasible() {
        let m = manifest(1, 2);
        match split_dataset(&m, DEFAULT_RATIOS, 1) {
            Err(Error::InfeasibleSplit(msg)) => assert!(msg.contains("raga00")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn kfold_partitions_songs() {
        let m = manifest(3, 2);
        let f = kfold_songs(&m, 2, 0).unwrap();
        for fold in 0..2 {
            let songs = f.songs_in(fold);
            assert_eq!(songs.len(), 3);
            for c in 0..3 {
                let prefix = format!("c{c:02}");
                assert_eq!(songs.iter().filter(|s| s.starts_with(&prefix)).count(), 1);
            }
        }
        assert!(f.relaxed_classes.is_empty());
        let f = kfold_songs(&m, 6, 0).unwrap();
        assert_eq!(f.relaxed_classes.len(), 3);
        assert!(kfold_songs(&m, 1, 0).is_err());
    }
}
