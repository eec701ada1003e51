use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Average precision of `scores` ranked high to low, ties broken by index.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("one label per score required".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// Per-class average precision and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_class: BTreeMap<usize, f64>,
    #[serde(rename = "mAP")]
    pub map: f64,
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

/// `scores[c][i]` is the score of video `i` for `classes[c]`; background
/// (label 0) is never a target class.
pub fn mean_average_precision(scores: &[Vec<f64>], labels: &[usize], classes: &[usize]) -> Result<EvalResult> {
    if scores.len() != classes.len() || classes.is_empty() {
        return Err(Error::InvalidArgument("one score column per target class required".into()));
    }
    let mut per_class = BTreeMap::new();
    for (col, &class) in scores.iter().zip(classes) {
        if class == 0 {
            return Err(Error::InvalidArgument("background is not a target class".into()));
        }
        let truth: Vec<bool> = labels.iter().map(|&l| l == class).collect();
        per_class.insert(class, average_precision(col, &truth)?);
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(EvalResult { per_class, map })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub class_id: usize,
    pub score: f64,
}

pub fn write_predictions(path: &Path, rows: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn extremes() {
        assert_eq!(average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[4.0, 3.0, 2.0, 1.0], &[false, false, false, true]).unwrap(), 0.25);
        assert!(matches!(average_precision(&[1.0], &[false]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn ties_follow_index_order() {
        assert_eq!(average_precision(&[1.0, 1.0], &[true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
    }

    #[test]
    fn monotone_transform_invariance() {
        let scores = [0.3, -1.2, 2.5, 0.0, 0.7];
        let labels = [true, false, true, false, false];
        let a = average_precision(&scores, &labels).unwrap();
        let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        assert_eq!(a, average_precision(&t, &labels).unwrap());
    }

    #[test]
    fn background_excluded_from_map() {
        let labels = [1, 2, 0, 0];
        let scores = vec![vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.5]];
        let r = mean_average_precision(&scores, &labels, &[1, 2]).unwrap();
        assert_eq!(r.per_class[&1], 1.0);
        assert_eq!(r.per_class[&2], 0.25);
        assert_eq!(r.map, 0.625);
        assert!(mean_average_precision(&scores, &labels, &[0, 2]).is_err());
    }

    #[test]
    fn predictions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.csv");
        let rows = vec![
            Prediction { video_id: "a".into(), class_id: 1, score: 0.1 + 0.2 },
            Prediction { video_id: "b,c".into(), class_id: 2, score: -3.5e-9 },
        ];
        write_predictions(&path, &rows).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("video_id,class_id,score\n"));
        assert_eq!(read_predictions(&path).unwrap(), rows);
    }
}
