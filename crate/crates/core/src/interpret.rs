//! Explaining anomalies through their abnormal-component projections.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::detector::DetectionModel;
use crate::error::{Error, Result};

pub const DEFAULT_RENDER_CUTOFF: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    High,
    Low,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::High => Polarity::Low,
            Polarity::Low => Polarity::High,
        }
    }

    fn letter(self) -> char {
        match self {
            Polarity::High => 'H',
            Polarity::Low => 'L',
        }
    }
}

/// Marks with one-based component indices, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub marks: Vec<(usize, Polarity)>,
}

impl Signature {
    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }
}

/// `1H 2L`; empty signatures print as `-`.
impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.marks.is_empty() {
            return f.write_str("-");
        }
        for (k, (i, pol)) in self.marks.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{i}{}", pol.letter())?;
        }
        Ok(())
    }
}

/// `iH` when `sᵢ ≥ √(τ/2)`, `iL` when `sᵢ ≤ −√(τ/2)`.
pub fn signature_of(projections: &[f64], tau: f64) -> Signature {
    let cut = (tau.max(0.0) / 2.0).sqrt();
    let marks = projections
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| {
            if s >= cut {
                Some((i + 1, Polarity::High))
            } else if s <= -cut {
                Some((i + 1, Polarity::Low))
            } else {
                None
            }
        })
        .collect();
    Signature { marks }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    /// One-based.
    pub component: usize,
    pub projection: f64,
    /// `sᵢ² / SPE`.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationReport {
    pub spe: f64,
    pub ranked_contributions: Vec<Contribution>,
    pub signature: Signature,
    pub rendered_components: Vec<String>,
}

impl InterpretationReport {
    pub fn top_component(&self) -> Option<usize> {
        self.ranked_contributions.first().map(|c| c.component)
    }
}

pub fn interpret(model: &DetectionModel, y: &[f64]) -> Result<InterpretationReport> {
    interpret_with_cutoff(model, y, DEFAULT_RENDER_CUTOFF)
}

pub fn interpret_with_cutoff(
    model: &DetectionModel,
    y: &[f64],
    cutoff: f64,
) -> Result<InterpretationReport> {
    let scored = model.spe(y)?;
    let rendered_components = render_all(model, cutoff)?;
    if scored.spe == 0.0 {
        return Ok(InterpretationReport {
            spe: 0.0,
            ranked_contributions: Vec::new(),
            signature: Signature::default(),
            rendered_components,
        });
    }
    let mut ranked: Vec<Contribution> = scored
        .projections
        .iter()
        .enumerate()
        .map(|(i, &s)| Contribution {
            component: i + 1,
            projection: s,
            share: s * s / scored.spe,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.share
            .total_cmp(&a.share)
            .then(a.component.cmp(&b.component))
    });
    Ok(InterpretationReport {
        spe: scored.spe,
        ranked_contributions: ranked,
        signature: signature_of(&scored.projections, model.threshold),
        rendered_components,
    })
}

pub fn render_all(model: &DetectionModel, cutoff: f64) -> Result<Vec<String>> {
    (0..model.d())
        .map(|j| render_component(&model.v_abnormal.column(j), &model.feature_names, cutoff))
        .collect()
}

/// `0.7095 A - 0.7047 B`: entries with `|coef| ≥ cutoff`, largest first, four decimals.
pub fn render_component(v: &[f64], names: &[String], cutoff: f64) -> Result<String> {
    if v.len() != names.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} loadings, {} names",
            v.len(),
            names.len()
        )));
    }
    if !(cutoff >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cutoff must be >= 0, got {cutoff}"
        )));
    }
    let mut terms: Vec<(usize, f64)> = v
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, c)| c.abs() >= cutoff && *c != 0.0)
        .collect();
    if terms.is_empty() {
        return Ok("(no dominant features)".to_string());
    }
    terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    let mut out = String::new();
    for (k, &(i, c)) in terms.iter().enumerate() {
        let mag = format!("{:.4}", c.abs());
        match (k, c < 0.0) {
            (0, false) => out.push_str(&mag),
            (0, true) => {
                out.push('-');
                out.push_str(&mag);
            }
            (_, false) => {
                out.push_str(" + ");
                out.push_str(&mag);
            }
            (_, true) => {
                out.push_str(" - ");
                out.push_str(&mag);
            }
        }
        out.push(' ');
        out.push_str(&names[i]);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureGroup {
    pub signature: Signature,
    pub members: Vec<usize>,
    pub count: usize,
    /// Fraction of members carrying each `(component, polarity)` mark.
    pub mark_frequencies: Vec<MarkFrequency>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkFrequency {
    pub component: usize,
    pub polarity: Polarity,
    pub fraction: f64,
}

/// Exact-match grouping; largest groups first, ties broken by signature order.
/// `ids[k]` names `reports[k]` in the output.
pub fn group_by_signature(
    reports: &[InterpretationReport],
    ids: &[usize],
) -> Result<Vec<SignatureGroup>> {
    if reports.len() != ids.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reports, {} ids",
            reports.len(),
            ids.len()
        )));
    }
    let mut by_sig: BTreeMap<&Signature, Vec<usize>> = BTreeMap::new();
    for (r, &id) in reports.iter().zip(ids) {
        by_sig.entry(&r.signature).or_default().push(id);
    }
    let mut groups: Vec<SignatureGroup> = by_sig
        .into_iter()
        .map(|(sig, members)| SignatureGroup {
            signature: sig.clone(),
            count: members.len(),
            members,
            mark_frequencies: sig
                .marks
                .iter()
                .map(|&(component, polarity)| MarkFrequency {
                    component,
                    polarity,
                    fraction: 1.0,
                })
                .collect(),
        })
        .collect();
    groups.sort_by(|a, b| b.count.cmp(&a.count).then(a.signature.cmp(&b.signature)));
    Ok(groups)
}

/// Per-mark frequency over an arbitrary set of signatures, e.g. anomalies of
/// one known category.
pub fn mark_frequencies(signatures: &[&Signature]) -> Vec<MarkFrequency> {
    let mut counts: BTreeMap<(usize, Polarity), usize> = BTreeMap::new();
    for s in signatures {
        for &m in &s.marks {
            *counts.entry(m).or_default() += 1;
        }
    }
    let n = signatures.len().max(1) as f64;
    let mut out: Vec<MarkFrequency> = counts
        .into_iter()
        .map(|((component, polarity), c)| MarkFrequency {
            component,
            polarity,
            fraction: c as f64 / n,
        })
        .collect();
    out.sort_by(|a, b| {
        b.fraction
            .total_cmp(&a.fraction)
            .then(a.component.cmp(&b.component))
    });
    out
}

/// Anomaly × component projection grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub row_ids: Vec<usize>,
    /// `values[r][j]` is the projection of row `r` on component `j + 1`.
    pub values: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn from_reports(reports: &[InterpretationReport], ids: &[usize], d: usize) -> Self {
        let values = reports
            .iter()
            .map(|r| {
                let mut row = vec![0.0; d];
                for c in &r.ranked_contributions {
                    row[c.component - 1] = c.projection;
                }
                row
            })
            .collect();
        Self {
            row_ids: ids.to_vec(),
            values,
        }
    }

    pub fn d(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["row_id".to_string()];
        header.extend((1..=self.d()).map(|j| format!("component_{j}")));
        w.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(&self.values) {
            let mut rec = vec![id.to_string()];
            rec.extend(row.iter().map(|x| format!("{x:?}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Standalone SVG: one cell per value, blue for negative, red for positive.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 24;
        const LEFT: usize = 60;
        const TOP: usize = 24;
        let d = self.d();
        let width = LEFT + CELL * d.max(1) + 8;
        let height = TOP + CELL * self.values.len().max(1) + 8;
        let scale = self
            .values
            .iter()
            .flatten()
            .fold(0.0f64, |m, x| m.max(x.abs()))
            .max(1e-12);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             font-family=\"monospace\" font-size=\"10\">\n"
        );
        for j in 0..d {
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                LEFT + j * CELL + CELL / 2,
                TOP - 8,
                j + 1
            ));
        }
        for (r, (id, row)) in self.row_ids.iter().zip(&self.values).enumerate() {
            let y = TOP + r * CELL;
            s.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{id}</text>\n",
                LEFT - 6,
                y + CELL / 2 + 3
            ));
            for (j, &v) in row.iter().enumerate() {
                s.push_str(&format!(
                    "<rect x=\"{}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{}\"><title>{v:.4}</title></rect>\n",
                    LEFT + j * CELL,
                    diverging(v / scale)
                ));
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

/// White at 0, red towards +1, blue towards −1.
fn diverging(t: f64) -> String {
    let t = t.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{fade:02x}{fade:02x}")
    } else {
        format!("#{fade:02x}{fade:02x}ff")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PreprocessSpec;
    use crate::matrix::Matrix;

    fn names(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    fn coord_model(p: usize, d: usize, tau: f64) -> DetectionModel {
        let mut v = Matrix::zeros(p, d);
        for j in 0..d {
            v[(j, j)] = 1.0;
        }
        let n: Vec<String> = (0..p).map(|i| format!("f{i}")).collect();
        DetectionModel::new(v, tau, n.clone(), PreprocessSpec::identity(n)).unwrap()
    }

    #[test]
    fn signature_marks() {
        let s = signature_of(&[0.6, -0.6, 0.1], 0.5);
        assert_eq!(s.marks, vec![(1, Polarity::High), (2, Polarity::Low)]);
        assert_eq!(s.to_string(), "1H 2L");
        assert!(signature_of(&[0.1, -0.2], 0.5).is_empty());
    }

    #[test]
    fn render_matches_table_style() {
        let n = names(&["A", "B", "C", "D", "E", "F", "G"]);
        let v = [0.7095, -0.7047, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            render_component(&v, &n, 0.1).unwrap(),
            "0.7095 A - 0.7047 B"
        );
        let e6 = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(render_component(&e6, &n, 0.1).unwrap(), "1.0000 F");
        let small = [0.05, 0.04, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            render_component(&small, &n, 0.1).unwrap(),
            "(no dominant features)"
        );
        let neg = [-0.8, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(
            render_component(&neg, &n, 0.1).unwrap(),
            "-0.8000 A + 0.6000 B"
        );
    }

    #[test]
    fn zero_vector_gives_empty_report() {
        let m = coord_model(4, 2, 0.5);
        let r = interpret(&m, &[0.0; 4]).unwrap();
        assert!(r.ranked_contributions.is_empty() && r.signature.is_empty());
        assert_eq!(r.rendered_components.len(), 2);
    }

    #[test]
    fn basis_aligned_vector_has_single_share() {
        let m = coord_model(4, 3, 0.5);
        let r = interpret(&m, &[0.0, 3.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.top_component(), Some(2));
        assert_eq!(r.ranked_contributions[0].share, 1.0);
        assert_eq!(r.signature.to_string(), "2H");
    }

    #[test]
    fn shares_sum_to_one() {
        let m = coord_model(5, 3, 0.5);
        let r = interpret(&m, &[0.3, -1.0, 2.0, 9.0, 0.0]).unwrap();
        let total: f64 = r.ranked_contributions.iter().map(|c| c.share).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(r
            .ranked_contributions
            .windows(2)
            .all(|w| w[0].share >= w[1].share));
    }

    #[test]
    fn grouping() {
        let m = coord_model(3, 2, 0.5);
        let ys = [[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        let reports: Vec<_> = ys.iter().map(|y| interpret(&m, y).unwrap()).collect();
        let groups = group_by_signature(&reports, &[10, 11, 12]).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(
            (groups[0].count, groups[0].members.clone()),
            (2, vec![10, 11])
        );
        assert_eq!(groups[1].signature.to_string(), "2L");
        assert!(group_by_signature(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn heatmap_exports() {
        let m = coord_model(3, 2, 0.5);
        let r = interpret(&m, &[1.0, -0.5, 0.0]).unwrap();
        let h = Heatmap::from_reports(&[r], &[7], 2);
        assert_eq!(h.values, vec![vec![1.0, -0.5]]);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "row_id,component_1,component_2\n7,1.0,-0.5\n"
        );
        let svg = h.to_svg();
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("#ff0000") && svg.contains("#8080ff"));
    }
}
