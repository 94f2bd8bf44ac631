//! Evaluation metrics and label mappings.
//!
//! Covers CCC, MAE, pooled accuracy, UAR (unweighted average recall),
//! confusion matrices, the 4-class age grouping, and the joint 7-class
//! age-gender mapping.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::model::Prediction;
use crate::{Error, Result};

/// Epsilon added to the CCC denominator.
pub const CCC_EPS: f64 = 1e-8;

/// Gender classes, in the fixed coding order 0/1/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenderLabel {
    Child = 0,
    Female = 1,
    Male = 2,
}

impl GenderLabel {
    pub const ALL: [GenderLabel; 3] = [GenderLabel::Child, GenderLabel::Female, GenderLabel::Male];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(GenderLabel::Child),
            1 => Ok(GenderLabel::Female),
            2 => Ok(GenderLabel::Male),
            _ => Err(Error::InvalidArgument(format!("gender index {i} not in 0..3"))),
        }
    }

    /// Strict token vocabulary: `child`, `female`, `male`.
    pub fn parse(token: &str) -> Result<Self> {
        match token {
            "child" => Ok(GenderLabel::Child),
            "female" => Ok(GenderLabel::Female),
            "male" => Ok(GenderLabel::Male),
            other => Err(Error::InvalidArgument(format!(
                "unknown gender token `{other}`; accepted tokens are child/female/male"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GenderLabel::Child => "child",
            GenderLabel::Female => "female",
            GenderLabel::Male => "male",
        }
    }
}

impl fmt::Display for GenderLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The four age classes used for categorical age reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Child = 0,
    Youth = 1,
    Adult = 2,
    Senior = 3,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 4] = [
        AgeGroup::Child,
        AgeGroup::Youth,
        AgeGroup::Adult,
        AgeGroup::Senior,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgeGroup::Child => "child",
            AgeGroup::Youth => "youth",
            AgeGroup::Adult => "adult",
            AgeGroup::Senior => "senior",
        }
    }
}

/// Upper bounds (inclusive, in rounded integer years) of the first three age
/// groups; seniors are everything above. The defaults follow the challenge
/// convention: child 0-14, youth 15-24, adult 25-54, senior 55+.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeGroupBounds {
    pub child_max: u32,
    pub youth_max: u32,
    pub adult_max: u32,
}

impl Default for AgeGroupBounds {
    fn default() -> Self {
        AgeGroupBounds {
            child_max: 14,
            youth_max: 24,
            adult_max: 54,
        }
    }
}

impl AgeGroupBounds {
    /// Map an age in years to its group. Boundaries apply to the age rounded
    /// to integer years. Negative ages are rejected.
    pub fn group(&self, age_years: f64) -> Result<AgeGroup> {
        if age_years < 0.0 || !age_years.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "age {age_years} must be finite and non-negative"
            )));
        }
        let rounded = crate::fmath::round(age_years) as u32;
        Ok(if rounded <= self.child_max {
            AgeGroup::Child
        } else if rounded <= self.youth_max {
            AgeGroup::Youth
        } else if rounded <= self.adult_max {
            AgeGroup::Adult
        } else {
            AgeGroup::Senior
        })
    }
}

/// Map an age in years to the 4-class scheme with default boundaries.
pub fn map_age_to_group(age_years: f64) -> Result<AgeGroup> {
    AgeGroupBounds::default().group(age_years)
}

/// Joint 7-class age-gender index: class 0 is child (gender-agnostic),
/// classes 1..6 enumerate {youth, adult, senior} x {female, male}.
///
/// Returns the class and a flag marking the inconsistent combination of
/// gender `child` with a non-child age group (mapped to class 0).
pub fn map_to_combined7(age_group: AgeGroup, gender: GenderLabel) -> (usize, bool) {
    match (age_group, gender) {
        (AgeGroup::Child, _) => (0, false),
        (group, GenderLabel::Child) => {
            debug_assert!(group != AgeGroup::Child);
            (0, true)
        }
        (group, gender) => {
            let row = group.index() - 1; // youth 0, adult 1, senior 2
            let col = gender.index() - 1; // female 0, male 1
            (1 + row * 2 + col, false)
        }
    }
}

pub const COMBINED7_LABELS: [&str; 7] = [
    "child",
    "youth_female",
    "youth_male",
    "adult_female",
    "adult_male",
    "senior_female",
    "senior_male",
];

/// Concordance correlation coefficient with population statistics:
/// `2 cov / (var_p + var_t + (mean_p - mean_t)^2 + eps)`.
pub fn ccc(p: &[f64], t: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), t.len());
    let n = p.len() as f64;
    let (mp, vp) = crate::tensor::mean_var(p);
    let (mt, vt) = crate::tensor::mean_var(t);
    let cov = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| (a - mp) * (b - mt))
        .sum::<f64>()
        / n;
    let gap = mp - mt;
    2.0 * cov / (vp + vt + gap * gap + CCC_EPS)
}

/// Pearson correlation with population statistics, used for property checks.
pub fn pearson(p: &[f64], t: &[f64]) -> f64 {
    let n = p.len() as f64;
    let (mp, vp) = crate::tensor::mean_var(p);
    let (mt, vt) = crate::tensor::mean_var(t);
    let cov = p
        .iter()
        .zip(t)
        .map(|(&a, &b)| (a - mp) * (b - mt))
        .sum::<f64>()
        / n;
    cov / (crate::fmath::sqrt(vp * vt) + CCC_EPS)
}

/// Square count matrix indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Per-class support (row sums).
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }

    /// Per-class recall; `None` for classes with zero support.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let support: u64 = row.iter().sum();
                if support == 0 {
                    None
                } else {
                    Some(row[i] as f64 / support as f64)
                }
            })
            .collect()
    }

    /// Pooled accuracy.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: u64 = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        correct as f64 / total as f64
    }

    /// UAR over classes with nonzero support, plus a flag set when any class
    /// was excluded for zero support.
    pub fn uar(&self) -> (f64, bool) {
        let recalls = self.recalls();
        let present: Vec<f64> = recalls.iter().filter_map(|r| *r).collect();
        let excluded = present.len() != recalls.len();
        if present.is_empty() {
            return (0.0, excluded);
        }
        (present.iter().sum::<f64>() / present.len() as f64, excluded)
    }
}

/// Full evaluation of one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub mae_years: Option<f64>,
    pub ccc: Option<f64>,
    pub gender_acc: Option<f64>,
    pub gender_uar: Option<f64>,
    pub age4_acc: Option<f64>,
    pub age4_uar: Option<f64>,
    pub combined7_acc: Option<f64>,
    pub combined7_uar: Option<f64>,
    pub gender_confusion: Option<ConfusionMatrix>,
    pub age4_confusion: Option<ConfusionMatrix>,
    pub combined7_confusion: Option<ConfusionMatrix>,
    pub gender_recalls: Vec<Option<f64>>,
    pub age4_recalls: Vec<Option<f64>>,
    /// Warnings, e.g. classes excluded from UAR for zero support.
    pub warnings: Vec<String>,
}

/// Evaluate predictions against `(age_years, gender)` ground truth.
///
/// Age metrics use the clamped prediction `clamp(age_norm, 0, 1) * 100`;
/// gender decisions take the argmax confidence with ties broken by the
/// lowest class index. Tasks without predictions (single-head models) yield
/// `None` metrics.
pub fn evaluate(preds: &[Prediction], truths: &[(f64, GenderLabel)]) -> Result<EvalReport> {
    if preds.is_empty() || preds.len() != truths.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluate: {} predictions vs {} truths (both must be nonempty and equal)",
            preds.len(),
            truths.len()
        )));
    }
    let bounds = AgeGroupBounds::default();
    let has_age = preds.iter().all(|p| p.age_norm.is_some());
    let has_gender = preds.iter().all(|p| p.gender_scores.is_some());

    let mut warnings = Vec::new();
    let mut report = EvalReport {
        n_samples: preds.len(),
        mae_years: None,
        ccc: None,
        gender_acc: None,
        gender_uar: None,
        age4_acc: None,
        age4_uar: None,
        combined7_acc: None,
        combined7_uar: None,
        gender_confusion: None,
        age4_confusion: None,
        combined7_confusion: None,
        gender_recalls: Vec::new(),
        age4_recalls: Vec::new(),
        warnings: Vec::new(),
    };

    if has_age {
        let pred_years: Vec<f64> = preds.iter().map(|p| p.age_years().unwrap()).collect();
        let true_years: Vec<f64> = truths.iter().map(|(a, _)| *a).collect();
        let mae = pred_years
            .iter()
            .zip(&true_years)
            .map(|(p, t)| crate::fmath::fabs(p - t))
            .sum::<f64>()
            / pred_years.len() as f64;
        report.mae_years = Some(mae);
        report.ccc = Some(ccc(&pred_years, &true_years));

        let mut cm4 = ConfusionMatrix::new(
            AgeGroup::ALL.iter().map(|g| g.as_str().to_string()).collect(),
        );
        for (p, t) in pred_years.iter().zip(&true_years) {
            cm4.record(bounds.group(*t)?.index(), bounds.group(*p)?.index());
        }
        let (uar, excluded) = cm4.uar();
        if excluded {
            warnings.push("age4 UAR excludes classes with zero support".to_string());
        }
        report.age4_acc = Some(cm4.accuracy());
        report.age4_uar = Some(uar);
        report.age4_recalls = cm4.recalls();
        report.age4_confusion = Some(cm4);
    }

    if has_gender {
        let mut cm = ConfusionMatrix::new(
            GenderLabel::ALL.iter().map(|g| g.as_str().to_string()).collect(),
        );
        for (p, (_, truth)) in preds.iter().zip(truths) {
            cm.record(truth.index(), p.decided_gender().unwrap().index());
        }
        let (uar, excluded) = cm.uar();
        if excluded {
            warnings.push("gender UAR excludes classes with zero support".to_string());
        }
        report.gender_acc = Some(cm.accuracy());
        report.gender_uar = Some(uar);
        report.gender_recalls = cm.recalls();
        report.gender_confusion = Some(cm);
    }

    if has_age && has_gender {
        let mut cm7 =
            ConfusionMatrix::new(COMBINED7_LABELS.iter().map(|s| s.to_string()).collect());
        for (p, (true_age, true_gender)) in preds.iter().zip(truths) {
            let (true_class, warn_t) = map_to_combined7(bounds.group(*true_age)?, *true_gender);
            let pred_group = bounds.group(p.age_years().unwrap())?;
            let (pred_class, _) = map_to_combined7(pred_group, p.decided_gender().unwrap());
            if warn_t {
                warnings.push(format!(
                    "inconsistent label: gender child with age group {}",
                    bounds.group(*true_age)?.as_str()
                ));
            }
            cm7.record(true_class, pred_class);
        }
        let (uar, excluded) = cm7.uar();
        if excluded {
            warnings.push("combined7 UAR excludes classes with zero support".to_string());
        }
        report.combined7_acc = Some(cm7.accuracy());
        report.combined7_uar = Some(uar);
        report.combined7_confusion = Some(cm7);
    }

    report.warnings = warnings;
    Ok(report)
}

impl EvalReport {
    /// Flat `key value` text rendering, one entry per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{k} {v:.6}\n"));
            }
        };
        put("mae_years", self.mae_years);
        put("ccc", self.ccc);
        put("gender_acc", self.gender_acc);
        put("gender_uar", self.gender_uar);
        put("age4_acc", self.age4_acc);
        put("age4_uar", self.age4_uar);
        put("combined7_acc", self.combined7_acc);
        put("combined7_uar", self.combined7_uar);
        out.push_str(&format!("n_samples {}\n", self.n_samples));
        for (name, cm) in [
            ("gender", &self.gender_confusion),
            ("age4", &self.age4_confusion),
            ("combined7", &self.combined7_confusion),
        ] {
            if let Some(cm) = cm {
                for (i, row) in cm.counts.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
                    out.push_str(&format!(
                        "confusion_{name}_{} {}\n",
                        cm.labels[i],
                        cells.join(",")
                    ));
                }
            }
        }
        for w in &self.warnings {
            out.push_str(&format!("warning {w}\n"));
        }
        out
    }

    /// Tidy CSV rows, one `task,metric,value` observation per row.
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::from("task,metric,value\n");
        let mut put = |task: &str, metric: &str, v: Option<f64>| {
            if let Some(v) = v {
                out.push_str(&format!("{task},{metric},{v:.6}\n"));
            }
        };
        put("age", "mae_years", self.mae_years);
        put("age", "ccc", self.ccc);
        put("gender", "acc", self.gender_acc);
        put("gender", "uar", self.gender_uar);
        put("age4", "acc", self.age4_acc);
        put("age4", "uar", self.age4_uar);
        put("combined7", "acc", self.combined7_acc);
        put("combined7", "uar", self.combined7_uar);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn age_group_boundaries() {
        assert_eq!(map_age_to_group(10.0).unwrap(), AgeGroup::Child);
        assert_eq!(map_age_to_group(24.0).unwrap(), AgeGroup::Youth);
        assert_eq!(map_age_to_group(25.0).unwrap(), AgeGroup::Adult);
        // predicted age_norm 0.61 -> 61 years -> senior
        assert_eq!(map_age_to_group(0.61 * 100.0).unwrap(), AgeGroup::Senior);
        assert!(map_age_to_group(-1.0).is_err());
    }

    #[test]
    fn combined7_enumeration() {
        assert_eq!(map_to_combined7(AgeGroup::Child, GenderLabel::Child), (0, false));
        assert_eq!(map_to_combined7(AgeGroup::Youth, GenderLabel::Female), (1, false));
        assert_eq!(map_to_combined7(AgeGroup::Youth, GenderLabel::Male), (2, false));
        assert_eq!(map_to_combined7(AgeGroup::Adult, GenderLabel::Female), (3, false));
        assert_eq!(map_to_combined7(AgeGroup::Senior, GenderLabel::Male), (6, false));
        // inconsistent: child gender outside the child age group
        assert_eq!(map_to_combined7(AgeGroup::Adult, GenderLabel::Child), (0, true));
    }

    #[test]
    fn combined7_is_a_bijection_over_valid_pairs() {
        let mut seen = [false; 7];
        for (group, gender) in [
            (AgeGroup::Child, GenderLabel::Child),
            (AgeGroup::Youth, GenderLabel::Female),
            (AgeGroup::Youth, GenderLabel::Male),
            (AgeGroup::Adult, GenderLabel::Female),
            (AgeGroup::Adult, GenderLabel::Male),
            (AgeGroup::Senior, GenderLabel::Female),
            (AgeGroup::Senior, GenderLabel::Male),
        ] {
            let (class, warn) = map_to_combined7(group, gender);
            assert!(!warn);
            assert!(!seen[class], "class {class} mapped twice");
            seen[class] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn uar_on_worked_confusion_matrix() {
        // recalls (0.8, 0.8, 0.6) -> UAR 0.7333..., ACC 22/30
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        cm.counts = vec![vec![8, 2, 0], vec![1, 8, 1], vec![0, 4, 6]];
        let recalls = cm.recalls();
        assert_eq!(recalls[0], Some(0.8));
        assert_eq!(recalls[1], Some(0.8));
        assert_eq!(recalls[2], Some(0.6));
        let (uar, excluded) = cm.uar();
        assert!(!excluded);
        assert!((uar - 0.7333).abs() < 1e-4);
        assert!((cm.accuracy() - 22.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn uar_excludes_zero_support() {
        let mut cm = ConfusionMatrix::new(vec!["a".into(), "b".into(), "c".into()]);
        cm.counts = vec![vec![3, 0, 0], vec![1, 1, 0], vec![0, 0, 0]];
        let (uar, excluded) = cm.uar();
        assert!(excluded);
        assert!((uar - (1.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ccc_worked_cases() {
        // identical non-constant sequences -> 1
        assert!((ccc(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]) - 1.0).abs() < 1e-7);
        // constant prediction -> 0 covariance -> 0
        assert!(ccc(&[0.5, 0.5, 0.5], &[0.0, 1.0, 2.0]).abs() < 1e-12);
        // [0,1] vs [1,0]: cov = -0.25, vars 0.25 each, gap 0 -> -1
        assert!((ccc(&[0.0, 1.0], &[1.0, 0.0]) + 1.0).abs() < 1e-7);
    }

    #[test]
    fn gender_tie_breaks_to_lowest_index() {
        let p = Prediction {
            age_norm: None,
            gender_scores: Some([0.4, 0.4, 0.2]),
        };
        assert_eq!(p.decided_gender(), Some(GenderLabel::Child));
    }
}
