use std::fmt;

use super::metrics::MacroScore;

/// Per-fold test accuracies of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub fold_accuracies: Vec<f64>,
}

impl CvReport {
    pub fn mean(&self) -> f64 {
        self.fold_accuracies.iter().sum::<f64>() / self.fold_accuracies.len().max(1) as f64
    }

    /// Population standard deviation across folds.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let n = self.fold_accuracies.len().max(1) as f64;
        (self.fold_accuracies.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n).sqrt()
    }
}

impl fmt::Display for CvReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fold\taccuracy")?;
        for (i, a) in self.fold_accuracies.iter().enumerate() {
            writeln!(f, "{i}\t{a:.6}")?;
        }
        writeln!(f, "mean\t{:.6}", self.mean())?;
        writeln!(f, "std\t{:.6}", self.std())
    }
}

/// Per-tag ROC-AUC and average precision with their macro means.
#[derive(Debug, Clone, PartialEq)]
pub struct TagReport {
    pub tag_names: Vec<String>,
    pub roc_auc: MacroScore,
    pub pr_auc: MacroScore,
}

impl fmt::Display for TagReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        writeln!(f, "tag\troc_auc\tpr_auc")?;
        for (i, name) in self.tag_names.iter().enumerate() {
            let roc = self.roc_auc.per_tag.get(i).copied().flatten();
            let pr = self.pr_auc.per_tag.get(i).copied().flatten();
            writeln!(f, "{name}\t{}\t{}", fmt_opt(roc), fmt_opt(pr))?;
        }
        writeln!(f, "macro\t{:.6}\t{:.6}", self.roc_auc.value, self.pr_auc.value)?;
        let skipped: Vec<&str> = self
            .roc_auc
            .skipped
            .iter()
            .filter_map(|&i| self.tag_names.get(i).map(String::as_str))
            .collect();
        writeln!(f, "skipped\t{}", skipped.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_report_statistics() {
        let r = CvReport { fold_accuracies: vec![0.5, 1.0] };
        assert_eq!(r.mean(), 0.75);
        assert_eq!(r.std(), 0.25);
        let text = r.to_string();
        assert!(text.contains("mean\t0.750000"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn tag_report_lists_skipped_tags() {
        let score = |v: Vec<Option<f64>>| MacroScore { value: 0.8, skipped: vec![1], per_tag: v };
        let r = TagReport {
            tag_names: vec!["rock".into(), "jazz".into()],
            roc_auc: score(vec![Some(0.8), None]),
            pr_auc: score(vec![Some(0.8), None]),
        };
        let text = r.to_string();
        assert!(text.contains("jazz\t-\t-"));
        assert!(text.ends_with("skipped\tjazz\n"));
    }
}
