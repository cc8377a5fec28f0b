use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::ExpertAnnotation;
use crate::error::{Error, Result};

/// Number of one-second bins in a clip.
pub const SECONDS: usize = 30;
/// Largest `t` for precision@t.
pub const MAX_TOP: usize = 10;
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GC")]
    GradCamPp,
    #[serde(rename = "SL")]
    SoundLime,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::GradCamPp => "GC",
            Method::SoundLime => "SL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyEvalRecord {
    pub clip_id: String,
    pub method: Method,
    /// precision@t for t = 1..=10.
    pub precision: [f64; MAX_TOP],
    pub correct: bool,
    pub probability: f64,
}

impl SaliencyEvalRecord {
    /// Scores every t in 1..=10 against an annotation.
    pub fn evaluate(
        clip_id: &str,
        method: Method,
        seconds: &[f64],
        annotation: &ExpertAnnotation,
        correct: bool,
        probability: f64,
    ) -> Result<Self> {
        let ann = annotated_seconds(annotation);
        let mut precision = [0.0; MAX_TOP];
        for (i, p) in precision.iter_mut().enumerate() {
            *p = precision_at_t(seconds, &ann, i + 1)?;
        }
        Ok(Self {
            clip_id: clip_id.to_string(),
            method,
            precision,
            correct,
            probability,
        })
    }

    /// Mean of precision@1..=10; the per-clip value used for binning.
    pub fn mean_precision(&self) -> f64 {
        self.precision.iter().sum::<f64>() / MAX_TOP as f64
    }
}

/// Seconds whose overlap with the annotated intervals is at least 0.5 s.
pub fn annotated_seconds(ann: &ExpertAnnotation) -> BTreeSet<usize> {
    (0..SECONDS)
        .filter(|&s| {
            let (lo, hi) = (s as f64, s as f64 + 1.0);
            let overlap: f64 = ann
                .intervals
                .iter()
                .map(|&[a, b]| (b.min(hi) - a.max(lo)).max(0.0))
                .sum();
            overlap >= 0.5 - 1e-9
        })
        .collect()
}

/// Seconds ordered by score, highest first, earlier second on ties.
pub fn rank_seconds(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Fraction of the top-`t` seconds that are annotated.
pub fn precision_at_t(scores: &[f64], ann_seconds: &BTreeSet<usize>, t: usize) -> Result<f64> {
    if !(1..=MAX_TOP).contains(&t) {
        return Err(Error::InvalidInput(format!(
            "t = {t} outside 1..={MAX_TOP}"
        )));
    }
    if scores.len() < t {
        return Err(Error::shape(format!("at least {t} scores"), scores.len()));
    }
    if ann_seconds.is_empty() {
        return Err(Error::InvalidInput("annotation marks no seconds".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("saliency scores".into()));
    }
    let hits = rank_seconds(scores)
        .iter()
        .take(t)
        .filter(|s| ann_seconds.contains(s))
        .count();
    Ok(hits as f64 / t as f64)
}

/// Mean precision@t per method, rows t = 1..=10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyTable {
    pub methods: Vec<Method>,
    /// `rows[t - 1][m]`.
    pub rows: Vec<Vec<f64>>,
    pub counts: Vec<usize>,
}

pub fn saliency_report(records: &[SaliencyEvalRecord]) -> Result<SaliencyTable> {
    let methods: Vec<Method> = records
        .iter()
        .map(|r| r.method)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if methods.is_empty() {
        return Err(Error::InvalidInput("no saliency records".into()));
    }
    let mut rows = vec![vec![0.0; methods.len()]; MAX_TOP];
    let mut counts = Vec::with_capacity(methods.len());
    for (m, &method) in methods.iter().enumerate() {
        let recs: Vec<_> = records.iter().filter(|r| r.method == method).collect();
        for (t, row) in rows.iter_mut().enumerate() {
            row[m] = recs.iter().map(|r| r.precision[t]).sum::<f64>() / recs.len() as f64;
        }
        counts.push(recs.len());
    }
    Ok(SaliencyTable {
        methods,
        rows,
        counts,
    })
}

impl SaliencyTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("top_seconds");
        for m in &self.methods {
            let _ = write!(s, ",{}", m.tag());
        }
        s.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            let _ = write!(s, "{}", t + 1);
            for v in row {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<12}", "top");
        for m in &self.methods {
            let _ = write!(s, "  {:>6}", m.tag());
        }
        s.push('\n');
        for (t, row) in self.rows.iter().enumerate() {
            let label = if t == 0 {
                "1 second".to_string()
            } else {
                format!("{} seconds", t + 1)
            };
            let _ = write!(s, "{label:<12}");
            for v in row {
                let _ = write!(s, "  {v:>6.2}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionBin {
    pub lower: f64,
    pub upper: f64,
    pub mean_precision: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Groups records by mean precision into bins of `bin_width` and reports
/// the classification accuracy inside each non-empty bin.
pub fn precision_accuracy_bins(
    records: &[SaliencyEvalRecord],
    bin_width: f64,
) -> Result<Vec<PrecisionBin>> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::InvalidInput(format!("bin width {bin_width}")));
    }
    let n_bins = (1.0 / bin_width).ceil() as usize;
    let mut acc = vec![(0usize, 0usize, 0f64); n_bins];
    for r in records {
        let p = r.mean_precision();
        let b = ((p / bin_width + 1e-9).floor() as usize).min(n_bins - 1);
        acc[b].0 += 1;
        acc[b].1 += r.correct as usize;
        acc[b].2 += p;
    }
    Ok(acc
        .iter()
        .enumerate()
        .filter(|(_, a)| a.0 > 0)
        .map(|(b, &(count, correct, sum))| PrecisionBin {
            lower: b as f64 * bin_width,
            upper: ((b + 1) as f64 * bin_width).min(1.0),
            mean_precision: sum / count as f64,
            accuracy: correct as f64 / count as f64,
            count,
        })
        .collect())
}

pub fn bins_csv(bins: &[PrecisionBin]) -> String {
    let mut s = String::from("bin_lower,bin_upper,mean_precision,accuracy,count\n");
    for b in bins {
        let _ = writeln!(
            s,
            "{:.2},{:.2},{:.6},{:.6},{}",
            b.lower, b.upper, b.mean_precision, b.accuracy, b.count
        );
    }
    s
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when
/// either side is constant or fewer than two points are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// Spearman correlation between bin precision and bin accuracy.
pub fn bin_trend(bins: &[PrecisionBin]) -> Option<f64> {
    let p: Vec<f64> = bins.iter().map(|b| b.mean_precision).collect();
    let a: Vec<f64> = bins.iter().map(|b| b.accuracy).collect();
    spearman(&p, &a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(intervals: &[[f64; 2]]) -> ExpertAnnotation {
        ExpertAnnotation {
            clip_id: "c".into(),
            intervals: intervals.to_vec(),
        }
    }

    fn record(method: Method, p: f64, correct: bool) -> SaliencyEvalRecord {
        SaliencyEvalRecord {
            clip_id: "c".into(),
            method,
            precision: [p; MAX_TOP],
            correct,
            probability: 0.5,
        }
    }

    #[test]
    fn overlap_rule() {
        assert_eq!(
            annotated_seconds(&ann(&[[5.0, 8.0]])),
            BTreeSet::from([5, 6, 7])
        );
        assert_eq!(annotated_seconds(&ann(&[[5.4, 6.2]])), BTreeSet::from([5]));
        assert!(annotated_seconds(&ann(&[])).is_empty());
        assert_eq!(
            annotated_seconds(&ann(&[[29.5, 30.0]])),
            BTreeSet::from([29])
        );
    }

    #[test]
    fn precision_cases() {
        let a: BTreeSet<usize> = (5..=15).collect();
        let mut scores = vec![0.0; 30];
        scores[6] = 3.0;
        scores[7] = 2.0;
        scores[20] = 1.0;
        assert!((precision_at_t(&scores, &a, 3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let ind: Vec<f64> = (0..30).map(|s| a.contains(&s) as u8 as f64).collect();
        for t in 1..=10 {
            assert_eq!(precision_at_t(&ind, &a, t).unwrap(), 1.0);
        }
        let flat = vec![1.0; 30];
        assert_eq!(
            precision_at_t(&flat, &BTreeSet::from([0, 1, 2]), 3).unwrap(),
            1.0
        );
        assert!(precision_at_t(&flat, &a, 0).is_err());
        assert!(precision_at_t(&flat, &a, 11).is_err());
        assert!(precision_at_t(&flat, &BTreeSet::new(), 1).is_err());
    }

    #[test]
    fn report_means() {
        let t = saliency_report(&[
            record(Method::GradCamPp, 0.4, true),
            record(Method::GradCamPp, 0.8, true),
        ])
        .unwrap();
        assert!((t.rows[0][0] - 0.6).abs() < 1e-12);
        let t = saliency_report(&[
            record(Method::SoundLime, 0.3, true),
            record(Method::GradCamPp, 0.2, true),
        ])
        .unwrap();
        assert_eq!(t.rows.len(), 10);
        assert_eq!(t.methods, vec![Method::GradCamPp, Method::SoundLime]);
        assert_eq!(t.to_csv().lines().count(), 11);
        assert!(saliency_report(&[]).is_err());
    }

    #[test]
    fn bins_by_precision() {
        let recs = [
            record(Method::SoundLime, 0.9, true),
            record(Method::SoundLime, 0.1, false),
        ];
        let bins = precision_accuracy_bins(&recs, DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(bins.len(), 2);
        assert_eq!(bins[0].accuracy, 0.0);
        assert_eq!(bins[1].accuracy, 1.0);
        assert_eq!(bin_trend(&bins), Some(1.0));
        let top = precision_accuracy_bins(&[record(Method::SoundLime, 1.0, true)], 0.05).unwrap();
        assert!((top[0].lower - 0.95).abs() < 1e-12);
    }

    #[test]
    fn spearman_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
        // ranks (1, 2.5, 2.5, 4) vs (1, 2, 3, 4)
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
    }
}
