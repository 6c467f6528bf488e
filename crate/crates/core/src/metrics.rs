//! Evaluation metrics and reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp applied before taking logs in [`logloss`].
pub const LOGLOSS_EPS: f64 = 1e-7;

/// Rank-based (Mann–Whitney) AUC; tied scores share their average rank,
/// which gives ties half credit.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::AucUndefined { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share (start + 1 + end) / 2
        let avg = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum += avg * pos_in_group as f64;
        start = end;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Mean negative log-likelihood with probabilities clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn logloss(scores: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    if scores.is_empty() {
        return 0.0;
    }
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_EPS, 1.0 - LOGLOSS_EPS);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / scores.len() as f64
}

/// `(AUC(model) − 0.5) / (AUC(base) − 0.5) − 1`.
pub fn ri_auc(model_auc: f64, base_auc: f64) -> Result<f64> {
    if base_auc <= 0.5 {
        return Err(Error::InvalidArgument(format!(
            "RI-AUC needs a baseline AUC above 0.5, got {base_auc}"
        )));
    }
    Ok((model_auc - 0.5) / (base_auc - 0.5) - 1.0)
}

/// `(X(model) − X(base)) / X(base)` as a fraction.
pub fn ri_x(model_x: f64, base_x: f64) -> Result<f64> {
    if base_x == 0.0 {
        return Err(Error::InvalidArgument("relative improvement over a zero baseline".into()));
    }
    Ok((model_x - base_x) / base_x)
}

/// Click-through rate `N_s / N_i`.
pub fn ctr(successes: u64, impressions: u64) -> Result<f64> {
    if impressions == 0 {
        return Err(Error::InvalidArgument("CTR over zero impressions".into()));
    }
    Ok(successes as f64 / impressions as f64)
}

/// Formats a fraction as a percentage with two decimals (`0.0322 → "3.22%"`).
pub fn percent(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub auc: f64,
    pub logloss: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_ctr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_arpu: Option<f64>,
}

impl EvalReport {
    pub fn new(model: impl Into<String>, scores: &[f64], labels: &[u8]) -> Result<Self> {
        let n_pos = labels.iter().filter(|&&y| y == 1).count();
        Ok(EvalReport {
            model: model.into(),
            auc: auc(scores, labels)?,
            logloss: logloss(scores, labels),
            n_pos,
            n_neg: labels.len() - n_pos,
            baseline: None,
            baseline_auc: None,
            ri_auc: None,
            ri_ctr: None,
            ri_arpu: None,
        })
    }

    pub fn with_baseline(mut self, name: impl Into<String>, base_auc: f64) -> Result<Self> {
        self.ri_auc = Some(ri_auc(self.auc, base_auc)?);
        self.baseline = Some(name.into());
        self.baseline_auc = Some(base_auc);
        Ok(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Two-column aligned text table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![
            ("model".to_string(), self.model.clone()),
            ("AUC".to_string(), format!("{:.5}", self.auc)),
            ("logloss".to_string(), format!("{:.5}", self.logloss)),
            ("positives".to_string(), self.n_pos.to_string()),
            ("negatives".to_string(), self.n_neg.to_string()),
        ];
        if let (Some(name), Some(base)) = (&self.baseline, self.baseline_auc) {
            rows.push(("baseline".into(), name.clone()));
            rows.push(("baseline AUC".into(), format!("{base:.5}")));
        }
        for (label, v) in [("RI-AUC", self.ri_auc), ("RI-CTR", self.ri_ctr), ("RI-ARPU", self.ri_arpu)] {
            if let Some(v) = v {
                rows.push((label.into(), percent(v)));
            }
        }
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        rows.iter()
            .map(|(k, v)| format!("{k:<width$}  {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn auc_basic_cases() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.4; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::AucUndefined { positives: 2, negatives: 0 })
        ));
    }

    #[test]
    fn auc_six_points_with_one_tie() {
        let scores = [0.9, 0.7, 0.5, 0.5, 0.3, 0.1];
        let labels = [1, 0, 1, 0, 1, 0];
        // positives {0.9, 0.5, 0.3} vs negatives {0.7, 0.5, 0.1}:
        // 0.9 wins 3; 0.5 wins 1, ties 1; 0.3 wins 1 -> 5.5 / 9
        let want = 5.5 / 9.0;
        assert_eq!(pair_count_auc(&scores, &labels), want);
        assert_eq!(auc(&scores, &labels).unwrap(), want);
    }

    #[test]
    fn logloss_cases() {
        assert!((logloss(&[0.5; 4], &[0, 1, 1, 0]) - std::f64::consts::LN_2).abs() < 1e-15);
        let floor = -(1.0 - LOGLOSS_EPS).ln();
        assert!((logloss(&[1.0, 0.0], &[1, 0]) - floor).abs() < 1e-18);
        // hand sum: -(ln .8 + ln .6 + ln .9 + ln .7 + ln .5) / 5
        let scores = [0.8, 0.4, 0.9, 0.3, 0.5];
        let labels = [1, 0, 1, 0, 1];
        let hand = (0.223_143_551_314_209_7
            + 0.510_825_623_765_990_7
            + 0.105_360_515_657_826_3
            + 0.356_674_943_938_732_4
            + 0.693_147_180_559_945_3)
            / 5.0;
        assert!((logloss(&scores, &labels) - hand).abs() < 1e-15);
    }

    #[test]
    fn ri_auc_reproduces_published_cells() {
        // Avazu FM row and Criteo FM row
        assert!((ri_auc(0.7856, 0.7767).unwrap() * 100.0 - 3.22).abs() <= 0.01);
        assert!((ri_auc(0.7991, 0.7893).unwrap() * 100.0 - 3.39).abs() <= 0.01);
        assert_eq!(ri_auc(0.77, 0.77).unwrap(), 0.0);
        assert!(ri_auc(0.8, 0.5).is_err());
        assert!(ri_auc(0.8, 0.45).is_err());
    }

    #[test]
    fn ri_x_cases() {
        assert_eq!(ri_x(0.3, 0.3).unwrap(), 0.0);
        assert!((ri_x(0.0212, 0.02).unwrap() - 0.06).abs() < 1e-12);
        let base = ctr(50, 1000).unwrap();
        let model = ctr(53, 1000).unwrap();
        assert!((ri_x(model, base).unwrap() - 0.06).abs() < 1e-12);
        assert_eq!(percent(ri_x(model, base).unwrap()), "6.00%");
        assert!(ri_x(1.0, 0.0).is_err());
        assert!(ctr(1, 0).is_err());
    }

    #[test]
    fn report_rendering() {
        let r = EvalReport::new("tfnet", &[0.9, 0.2, 0.6, 0.4], &[1, 0, 1, 0])
            .unwrap()
            .with_baseline("fm", 0.75)
            .unwrap();
        assert_eq!(r.ri_auc, Some(1.0));
        let table = r.to_table();
        assert!(table.contains("RI-AUC        100.00%"));
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    fn instance_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..20).prop_map(|s| s as f64 / 10.0), n),
                proptest::collection::vec(0u8..2, n),
            )
        })
    }

    proptest! {
        #[test]
        fn rank_auc_equals_pair_counting((scores, mut labels) in instance_strategy()) {
            labels[0] = 0;
            labels[1] = 1;
            prop_assert_eq!(auc(&scores, &labels).unwrap(), pair_count_auc(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_monotone_transform((scores, mut labels) in instance_strategy()) {
            labels[0] = 0;
            labels[1] = 1;
            let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&moved, &labels).unwrap());
        }

        #[test]
        fn flipping_labels_complements_auc(n in 2usize..100, seed in 0u64..1000) {
            // distinct scores: a permutation of 0..n
            let scores: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % n as u64) as f64).collect();
            let mut labels: Vec<u8> = (0..n).map(|i| ((i as u64 * 31 + seed) % 3 == 0) as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
            let a = auc(&scores, &labels).unwrap();
            let b = auc(&scores, &flipped).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn ri_auc_is_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, base in 0.51f64..1.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(ri_auc(lo, base).unwrap() <= ri_auc(hi, base).unwrap());
        }
    }
}
