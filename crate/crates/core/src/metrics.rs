//! Evaluation metrics: quadratic weighted kappa, accuracy, F1,
//! sensitivity/specificity under the {0,1} vs {2,3,4} split, and
//! rank-based AUC. All arithmetic is f64; reports round to 6 decimals.

use serde::{Deserialize, Serialize};

use crate::error::{CoreResult, PipelineError};

/// Grades {0,1} count as negative, {2,3,4} as positive.
pub const POSITIVE_GRADE_MIN: u8 = 2;

/// One evaluation's numbers. `confusion` is 5x5 for grade classification
/// or 2x2 for segmentation. Scalars are rounded to 6 decimal places at
/// construction so serialized reports carry exactly what was computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub qwk: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub auc: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub n: u64,
    /// True when F1 was 0/0 (no positives anywhere) and reported as 0.
    pub f1_degenerate: bool,
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn round6_opt(x: Option<f64>) -> Option<f64> {
    x.map(round6)
}

/// Cohen's kappa with quadratic weights w_ij = (i-j)^2/(k-1)^2 over labels
/// 0..k. The degenerate case (both raters constant and identical) is 1.0.
pub fn weighted_kappa(truth: &[u8], pred: &[u8], k: usize) -> CoreResult<f64> {
    if truth.len() != pred.len() {
        return Err(PipelineError::Data(format!(
            "kappa: length mismatch ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(PipelineError::Data("kappa: empty input".into()));
    }
    if k < 2 {
        return Err(PipelineError::Config("kappa: need at least 2 labels".into()));
    }
    let mut observed = vec![vec![0.0f64; k]; k];
    for (&t, &p) in truth.iter().zip(pred) {
        if (t as usize) >= k || (p as usize) >= k {
            return Err(PipelineError::Data(format!(
                "kappa: label out of range 0..{} (saw truth={t}, pred={p})",
                k - 1
            )));
        }
        observed[t as usize][p as usize] += 1.0;
    }
    let n = truth.len() as f64;
    let mut row = vec![0.0f64; k];
    let mut col = vec![0.0f64; k];
    for (i, r) in observed.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            row[i] += v;
            col[j] += v;
        }
    }
    let denom_scale = ((k - 1) * (k - 1)) as f64;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) * (i as f64 - j as f64)) / denom_scale;
            num += w * observed[i][j];
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        // Zero expected disagreement means both raters are constant and
        // equal; observed disagreement is then also zero. Perfect agreement.
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

/// Quadratic weighted kappa over DR grades 0..=4.
pub fn quadratic_weighted_kappa(truth: &[u8], pred: &[u8]) -> CoreResult<f64> {
    weighted_kappa(truth, pred, 5)
}

/// Sensitivity and specificity after binarizing grades ({0,1} negative,
/// {2,3,4} positive). A ratio with an empty denominator is reported as
/// `None`, never as 0.
pub fn sensitivity_specificity(
    truth: &[u8],
    pred: &[u8],
) -> CoreResult<(Option<f64>, Option<f64>)> {
    if truth.len() != pred.len() {
        return Err(PipelineError::Data(format!(
            "sensitivity/specificity: length mismatch ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(PipelineError::Data(
            "sensitivity/specificity: empty input".into(),
        ));
    }
    let (mut tp, mut tn, mut fp, mut fneg) = (0u64, 0u64, 0u64, 0u64);
    for (&t, &p) in truth.iter().zip(pred) {
        let t_pos = t >= POSITIVE_GRADE_MIN;
        let p_pos = p >= POSITIVE_GRADE_MIN;
        match (t_pos, p_pos) {
            (true, true) => tp += 1,
            (true, false) => fneg += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    let sens = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
    let spec = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    Ok((sens, spec))
}

/// F1 = 2TP / (2TP + FP + FN) over binary labels. The 0/0 case (no
/// positives in either input) is defined as 0 and flagged.
pub fn f1_score(truth: &[u8], pred: &[u8]) -> CoreResult<(f64, bool)> {
    if truth.len() != pred.len() {
        return Err(PipelineError::Data(format!(
            "f1: length mismatch ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(PipelineError::Data("f1: empty input".into()));
    }
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&t, &p) in truth.iter().zip(pred) {
        if t > 1 || p > 1 {
            return Err(PipelineError::Data(format!(
                "f1: inputs must be binary (saw truth={t}, pred={p})"
            )));
        }
        match (t, p) {
            (1, 1) => tp += 1,
            (0, 1) => fp += 1,
            (1, 0) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        return Ok((0.0, true));
    }
    Ok((2.0 * tp as f64 / denom as f64, false))
}

/// Area under the ROC curve via the rank statistic (average ranks over
/// tied scores). Errors when only one class is present.
pub fn pixel_auc(truth: &[u8], scores: &[f64]) -> CoreResult<f64> {
    if truth.len() != scores.len() {
        return Err(PipelineError::Data(format!(
            "auc: length mismatch ({} vs {})",
            truth.len(),
            scores.len()
        )));
    }
    if truth.is_empty() {
        return Err(PipelineError::Data("auc: empty input".into()));
    }
    if let Some(&bad) = truth.iter().find(|&&t| t > 1) {
        return Err(PipelineError::Data(format!(
            "auc: truth must be binary (saw {bad})"
        )));
    }
    let n_pos = truth.iter().filter(|&&t| t == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(PipelineError::Data(
            "AUC undefined: truth contains a single class".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
    // Average rank within each tie group (1-based ranks).
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = ((i + 1 + j + 1) as f64) / 2.0;
        for &idx in &order[i..=j] {
            if truth[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc =
        (rank_sum_pos - (n_pos as f64) * (n_pos as f64 + 1.0) / 2.0) / (n_pos as f64 * n_neg as f64);
    Ok(auc)
}

/// Full 5-grade classification report. `positive_scores`, when given, is a
/// per-sample probability of the positive (grade >= 2) super-class and
/// feeds the AUC; AUC is omitted when scores are absent or truth has a
/// single binarized class.
pub fn full_report(
    truth: &[u8],
    pred: &[u8],
    positive_scores: Option<&[f64]>,
) -> CoreResult<MetricsReport> {
    if truth.len() != pred.len() {
        return Err(PipelineError::Data(format!(
            "report: length mismatch ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(PipelineError::Data("report: empty input".into()));
    }
    let mut confusion = vec![vec![0u64; 5]; 5];
    for (&t, &p) in truth.iter().zip(pred) {
        if t > 4 || p > 4 {
            return Err(PipelineError::Data(format!(
                "report: grade out of range (truth={t}, pred={p})"
            )));
        }
        confusion[t as usize][p as usize] += 1;
    }
    let n = truth.len() as u64;
    let correct: u64 = (0..5).map(|i| confusion[i][i]).sum();
    let qwk = quadratic_weighted_kappa(truth, pred)?;
    let bin_truth: Vec<u8> = truth.iter().map(|&t| u8::from(t >= 2)).collect();
    let bin_pred: Vec<u8> = pred.iter().map(|&p| u8::from(p >= 2)).collect();
    let (f1, f1_degenerate) = f1_score(&bin_truth, &bin_pred)?;
    let (sensitivity, specificity) = sensitivity_specificity(truth, pred)?;
    let auc = match positive_scores {
        Some(scores) => pixel_auc(&bin_truth, scores).ok(),
        None => None,
    };
    Ok(MetricsReport {
        qwk: round6(qwk),
        accuracy: round6(correct as f64 / n as f64),
        f1: round6(f1),
        sensitivity: round6_opt(sensitivity),
        specificity: round6_opt(specificity),
        auc: round6_opt(auc),
        confusion,
        n,
        f1_degenerate,
    })
}

/// Segmentation report over flattened binary rasters: 2x2 confusion,
/// pixel accuracy, F1, sensitivity/specificity of the vessel class, binary
/// kappa, and AUC from the probability raster when both classes exist.
pub fn seg_report(
    truth: &[u8],
    pred: &[u8],
    scores: Option<&[f64]>,
) -> CoreResult<MetricsReport> {
    if truth.len() != pred.len() {
        return Err(PipelineError::Data(format!(
            "seg report: length mismatch ({} vs {})",
            truth.len(),
            pred.len()
        )));
    }
    if truth.is_empty() {
        return Err(PipelineError::Data("seg report: empty input".into()));
    }
    let mut confusion = vec![vec![0u64; 2]; 2];
    for (&t, &p) in truth.iter().zip(pred) {
        if t > 1 || p > 1 {
            return Err(PipelineError::Data(format!(
                "seg report: rasters must be binary (truth={t}, pred={p})"
            )));
        }
        confusion[t as usize][p as usize] += 1;
    }
    let n = truth.len() as u64;
    let correct = confusion[0][0] + confusion[1][1];
    let (f1, f1_degenerate) = f1_score(truth, pred)?;
    let tp = confusion[1][1];
    let fneg = confusion[1][0];
    let fp = confusion[0][1];
    let tn = confusion[0][0];
    let sensitivity = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
    let specificity = (tn + fp > 0).then(|| tn as f64 / (tn + fp) as f64);
    let qwk = weighted_kappa(truth, pred, 2)?;
    let auc = match scores {
        Some(s) => pixel_auc(truth, s).ok(),
        None => None,
    };
    Ok(MetricsReport {
        qwk: round6(qwk),
        accuracy: round6(correct as f64 / n as f64),
        f1: round6(f1),
        sensitivity: round6_opt(sensitivity),
        specificity: round6_opt(specificity),
        auc: round6_opt(auc),
        confusion,
        n,
        f1_degenerate,
    })
}

/// Arithmetic mean of per-fold reports. Scalar fields are averaged
/// (optional fields over the folds where they are present), confusion
/// matrices and n are summed.
pub fn average_reports(reports: &[MetricsReport]) -> CoreResult<MetricsReport> {
    if reports.is_empty() {
        return Err(PipelineError::Data("cannot average zero reports".into()));
    }
    let k = reports.len() as f64;
    let dim = reports[0].confusion.len();
    if reports.iter().any(|r| r.confusion.len() != dim) {
        return Err(PipelineError::Data(
            "cannot average reports with different confusion sizes".into(),
        ));
    }
    let mean_opt = |get: fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = reports.iter().filter_map(get).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let mut confusion = vec![vec![0u64; dim]; dim];
    for r in reports {
        for i in 0..dim {
            for j in 0..dim {
                confusion[i][j] += r.confusion[i][j];
            }
        }
    }
    Ok(MetricsReport {
        qwk: round6(reports.iter().map(|r| r.qwk).sum::<f64>() / k),
        accuracy: round6(reports.iter().map(|r| r.accuracy).sum::<f64>() / k),
        f1: round6(reports.iter().map(|r| r.f1).sum::<f64>() / k),
        sensitivity: round6_opt(mean_opt(|r| r.sensitivity)),
        specificity: round6_opt(mean_opt(|r| r.specificity)),
        auc: round6_opt(mean_opt(|r| r.auc)),
        confusion,
        n: reports.iter().map(|r| r.n).sum(),
        f1_degenerate: reports.iter().any(|r| r.f1_degenerate),
    })
}
