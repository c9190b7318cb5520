//! SPE scoring on the abnormal subspace, threshold selection and ROC/AUC.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::PreprocessSpec;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::models::{SubspaceModel, Variant};

/// How a model's threshold was picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    /// Empirical quantile of training scores (no labels needed).
    Quantile {
        q: f64,
    },
    /// Smallest-FPR cutoff that still flags this fraction of labeled anomalies.
    TargetTpr {
        tpr: f64,
    },
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub v_abnormal: Matrix,
    pub threshold: f64,
    pub feature_names: Vec<String>,
    pub preprocessing: PreprocessSpec,
    pub threshold_rule: ThresholdRule,
    pub variant: Option<Variant>,
    pub lambda: Option<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Largest entry of `|VᵀV − I|`.
pub fn orthonormality_error(v: &Matrix) -> f64 {
    let vtv = v.t_matmul(v).expect("VᵀV is always defined");
    vtv.max_abs_diff(&Matrix::identity(v.cols()))
}

impl DetectionModel {
    pub fn new(
        v_abnormal: Matrix,
        threshold: f64,
        feature_names: Vec<String>,
        preprocessing: PreprocessSpec,
    ) -> Result<Self> {
        let m = Self {
            v_abnormal,
            threshold,
            feature_names,
            preprocessing,
            threshold_rule: ThresholdRule::Explicit,
            variant: None,
            lambda: None,
        };
        m.validate(ORTHONORMAL_TOL)?;
        Ok(m)
    }

    pub fn from_subspace(
        model: &SubspaceModel,
        threshold: f64,
        feature_names: Vec<String>,
        preprocessing: PreprocessSpec,
    ) -> Result<Self> {
        let mut m = Self::new(
            model.v_abnormal.clone(),
            threshold,
            feature_names,
            preprocessing,
        )?;
        m.variant = Some(model.variant);
        Ok(m)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let p = self.v_abnormal.rows();
        if self.feature_names.len() != p {
            return Err(Error::InvalidModel(format!(
                "{} feature names for {p} loading rows",
                self.feature_names.len()
            )));
        }
        if self.preprocessing.p() != p {
            return Err(Error::InvalidModel(format!(
                "preprocessing has {} features, loadings have {p}",
                self.preprocessing.p()
            )));
        }
        if self.v_abnormal.cols() == 0 || self.v_abnormal.cols() > p {
            return Err(Error::InvalidModel(format!(
                "abnormal subspace of dimension {}",
                self.v_abnormal.cols()
            )));
        }
        let err = orthonormality_error(&self.v_abnormal);
        if !(err <= tol) {
            return Err(Error::InvalidModel(format!(
                "abnormal loadings are not orthonormal (max |VᵀV − I| = {err:.3e})"
            )));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.v_abnormal.rows()
    }

    pub fn d(&self) -> usize {
        self.v_abnormal.cols()
    }

    /// Scores an already-preprocessed vector.
    pub fn spe(&self, y: &[f64]) -> Result<ScoredInstance> {
        score_with(&self.v_abnormal, y, self.threshold)
    }

    pub fn score_batch(&self, data: &Matrix) -> Result<Vec<ScoredInstance>> {
        (0..data.rows()).map(|i| self.spe(data.row(i))).collect()
    }

    pub fn with_threshold(mut self, threshold: f64, rule: ThresholdRule) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be >= 0, got {threshold}"
            )));
        }
        self.threshold = threshold;
        self.threshold_rule = rule;
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub spe: f64,
    /// `sᵢ = vᵢᵀy` per abnormal component.
    pub projections: Vec<f64>,
    pub is_anomaly: bool,
}

/// `SPE = Σ (vᵢᵀy)²` over the columns of `v`.
pub fn score_with(v: &Matrix, y: &[f64], threshold: f64) -> Result<ScoredInstance> {
    if y.len() != v.rows() {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {}, model has p = {}",
            y.len(),
            v.rows()
        )));
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("input vector".into()));
    }
    let projections = v.t_matvec(y)?;
    let spe = dot(&projections, &projections);
    Ok(ScoredInstance {
        spe,
        projections,
        is_anomaly: spe > threshold,
    })
}

/// Residual form `‖y − V₁V₁ᵀy‖²`.
pub fn spe_residual(v_normal: &Matrix, y: &[f64]) -> Result<f64> {
    let s = v_normal.t_matvec(y)?;
    let proj = v_normal.matvec(&s)?;
    Ok(y.iter().zip(&proj).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Linear-interpolation quantile (`q·(n−1)` position in the sorted scores).
pub fn quantile(scores: &[f64], q: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter(
            "quantile of an empty score list".into(),
        ));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "quantile {q} outside [0, 1]"
        )));
    }
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(s[lo] + (pos - lo as f64) * (s[hi] - s[lo]))
}

/// Training-score quantile unless `override_value` is given.
pub fn choose_threshold(
    scores: &[f64],
    target_quantile: f64,
    override_value: Option<f64>,
) -> Result<f64> {
    if let Some(t) = override_value {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be >= 0, got {t}"
            )));
        }
        return Ok(t);
    }
    if !(target_quantile > 0.0 && target_quantile < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target quantile must lie in (0, 1), got {target_quantile}"
        )));
    }
    quantile(scores, target_quantile)
}

/// Highest cutoff (midway to the next lower score) that flags at least
/// `ceil(target_tpr · positives)` labeled anomalies.
pub fn threshold_for_tpr(scores: &[f64], labels: &[bool], target_tpr: f64) -> Result<f64> {
    check_labels(scores, labels)?;
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target TPR must lie in (0, 1], got {target_tpr}"
        )));
    }
    let mut pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l)
        .map(|(&s, _)| s)
        .collect();
    pos.sort_by(|a, b| b.total_cmp(a));
    let k = ((target_tpr * pos.len() as f64).ceil() as usize).clamp(1, pos.len());
    let needed = pos[k - 1];
    if needed <= 0.0 {
        return Err(Error::InvalidParameter(
            "anomalies with zero SPE cannot be flagged by any threshold".into(),
        ));
    }
    let below = scores
        .iter()
        .copied()
        .filter(|&s| s < needed)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(if below.is_finite() {
        0.5 * (below.max(0.0) + needed)
    } else {
        0.5 * needed
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
}

/// Confusion counts for `spe > τ`.
pub fn rates_at(scores: &[f64], labels: &[bool], tau: f64) -> Result<Rates> {
    check_labels(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > tau, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Rates {
        tp,
        fp,
        tn,
        fn_,
        tpr: tp as f64 / (tp + fn_) as f64,
        fpr: fp as f64 / (fp + tn) as f64,
    })
}

fn check_labels(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return Err(Error::InvalidParameter(
            "both classes must be present".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold-sweep ROC. Tied scores move together, so the trapezoid over a
/// tie block counts half, matching the Mann-Whitney statistic.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    check_labels(scores, labels)?;
    let npos = labels.iter().filter(|&&l| l).count();
    let nneg = labels.len() - npos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // twice the area in units of one (positive, negative) pair, kept integral
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += ((fp - fp0) * (tp + tp0)) as u128;
        points.push((fp as f64 / nneg as f64, tp as f64 / npos as f64));
    }
    let auc = area2 as f64 / (2 * npos * nneg) as f64;
    Ok(RocCurve { points, auc })
}

/// `row_id,spe,is_anomaly,proj_1..proj_d`.
pub fn write_scores_csv<W: Write>(scored: &[ScoredInstance], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = scored.first().map_or(0, |s| s.projections.len());
    let mut header = vec!["row_id".to_string(), "spe".into(), "is_anomaly".into()];
    header.extend((1..=d).map(|i| format!("proj_{i}")));
    w.write_record(&header)?;
    for (i, s) in scored.iter().enumerate() {
        let mut rec = vec![
            i.to_string(),
            format!("{:?}", s.spe),
            (s.is_anomaly as u8).to_string(),
        ];
        rec.extend(s.projections.iter().map(|x| format!("{x:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(v: Matrix, tau: f64) -> DetectionModel {
        let names: Vec<String> = (0..v.rows()).map(|i| format!("x{i}")).collect();
        DetectionModel::new(v, tau, names.clone(), PreprocessSpec::identity(names)).unwrap()
    }

    fn e(p: usize, cols: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(p, cols.len());
        for (j, &i) in cols.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }

    #[test]
    fn spe_of_normal_and_basis_vectors() {
        let m = model(e(4, &[2, 3]), 0.5);
        let s = m.spe(&[1.0, -2.0, 0.0, 0.0]).unwrap();
        assert_eq!(s.spe, 0.0);
        assert!(!s.is_anomaly);
        let s = m.spe(&[0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!((s.spe, s.projections.clone()), (1.0, vec![1.0, 0.0]));
        assert!(s.is_anomaly);
        assert!(m.spe(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn residual_form_matches() {
        let v1 = e(4, &[0, 1]);
        let m = model(e(4, &[2, 3]), 0.0);
        let y = [0.3, -1.2, 2.0, 0.5];
        let res = spe_residual(&v1, &y).unwrap();
        assert!((res - m.spe(&y).unwrap().spe).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut v = e(3, &[0, 1]);
        v[(0, 1)] = 0.1;
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        assert!(
            DetectionModel::new(v, 0.1, names.clone(), PreprocessSpec::identity(names)).is_err()
        );
    }

    #[test]
    fn quantile_linear_interpolation() {
        let s: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((choose_threshold(&s, 0.95, None).unwrap() - 95.05).abs() < 1e-12);
        assert_eq!(choose_threshold(&s, 0.95, Some(3.0)).unwrap(), 3.0);
        assert!(choose_threshold(&[], 0.5, None).is_err());
        assert!(choose_threshold(&s, 1.0, None).is_err());
    }

    #[test]
    fn auc_separated_and_tied() {
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap().auc, 0.0);
        let tied = roc_auc(&[1.0; 4], &labels).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn auc_matches_mann_whitney() {
        let scores: [f64; 8] = [0.3, 0.3, 0.5, 0.1, 0.7, 0.3, 0.9, 0.5];
        let labels = [true, false, true, false, false, true, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    wins += match scores[i].total_cmp(&scores[j]) {
                        std::cmp::Ordering::Greater => 1.0,
                        std::cmp::Ordering::Equal => 0.5,
                        std::cmp::Ordering::Less => 0.0,
                    };
                }
            }
        }
        let auc = roc_auc(&scores, &labels).unwrap().auc;
        assert!((auc - wins / pairs).abs() < 1e-15);
    }

    #[test]
    fn target_tpr_threshold() {
        let scores = [0.1, 0.2, 0.3, 1.0, 2.0];
        let labels = [false, false, false, true, true];
        let t = threshold_for_tpr(&scores, &labels, 1.0).unwrap();
        assert!((t - 0.65).abs() < 1e-12);
        let r = rates_at(&scores, &labels, t).unwrap();
        assert_eq!((r.tpr, r.fpr), (1.0, 0.0));
        let t = threshold_for_tpr(&scores, &labels, 0.5).unwrap();
        assert!((t - 1.5).abs() < 1e-12);
    }

    #[test]
    fn scores_csv_layout() {
        let m = model(e(3, &[1, 2]), 0.5);
        let scored = m
            .score_batch(&Matrix::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        write_scores_csv(&scored, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "row_id,spe,is_anomaly,proj_1,proj_2\n0,1.0,1,1.0,0.0\n"
        );
    }
}
