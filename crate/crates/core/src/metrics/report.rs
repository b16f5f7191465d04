//! Per-subject metric rows and their per-stage summary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{dice, hd95};
use crate::error::{Error, Result};
use crate::volume::LabelVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreReg,
    Affine,
    Deformable,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::PreReg, Stage::Affine, Stage::Deformable];
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::PreReg => "pre_reg",
            Stage::Affine => "affine",
            Stage::Deformable => "deformable",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub stage: Stage,
    pub structure: String,
    pub dice: f64,
    /// `None` when either segmentation of the structure is empty.
    pub hd95_mm: Option<f64>,
    pub folding_ratio: f64,
}

/// Dice and HD95 of every named structure between the reference labels and
/// a subject's labels brought onto the reference grid.
pub fn evaluate_labels(
    subject_id: &str,
    stage: Stage,
    reference: &LabelVolume,
    warped: &LabelVolume,
    structures: &[String],
    folding_ratio: f64,
) -> Result<Vec<SubjectMetrics>> {
    reference.grid().ensure_same(warped.grid(), "reference and warped labels")?;
    structures
        .iter()
        .map(|name| {
            let id_ref = reference.id_of(name).ok_or_else(|| Error::MissingStructure(format!("{name} (reference)")))?;
            let id_sub = warped.id_of(name).ok_or_else(|| Error::MissingStructure(format!("{name} (subject {subject_id})")))?;
            let a = reference.indicator(id_ref);
            let b = warped.indicator(id_sub);
            let hd = if a.is_empty() || b.is_empty() { None } else { Some(hd95(&a, &b)?) };
            Ok(SubjectMetrics { subject_id: subject_id.to_string(), stage, structure: name.clone(), dice: dice(&a, &b)?, hd95_mm: hd, folding_ratio })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StructureSummary {
    pub structure: String,
    pub n: usize,
    pub dice_mean: f64,
    pub dice_sd: f64,
    pub hd95_mean: f64,
    pub hd95_sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSummary {
    pub stage: Stage,
    pub structures: Vec<StructureSummary>,
    /// Mean over structures of the per-structure means.
    pub mean_dice: f64,
    pub mean_hd95: f64,
    pub folding_mean: f64,
    pub folding_sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegistrationReport {
    pub stages: Vec<StageSummary>,
}

/// Mean and population standard deviation; NaN for no values.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

fn mean_finite(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    mean_sd(&v).0
}

pub fn report(rows: &[SubjectMetrics]) -> RegistrationReport {
    let mut by_stage: BTreeMap<Stage, BTreeMap<&str, Vec<&SubjectMetrics>>> = BTreeMap::new();
    for r in rows {
        by_stage.entry(r.stage).or_default().entry(&r.structure).or_default().push(r);
    }
    let stages = by_stage
        .into_iter()
        .map(|(stage, per_structure)| {
            let mut folding: BTreeMap<&str, f64> = BTreeMap::new();
            let structures: Vec<StructureSummary> = per_structure
                .iter()
                .map(|(name, rs)| {
                    let mut rs = rs.clone();
                    rs.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
                    for r in &rs {
                        folding.insert(&r.subject_id, r.folding_ratio);
                    }
                    let d: Vec<f64> = rs.iter().map(|r| r.dice).collect();
                    let h: Vec<f64> = rs.iter().filter_map(|r| r.hd95_mm).collect();
                    let (dice_mean, dice_sd) = mean_sd(&d);
                    let (hd95_mean, hd95_sd) = mean_sd(&h);
                    StructureSummary { structure: name.to_string(), n: rs.len(), dice_mean, dice_sd, hd95_mean, hd95_sd }
                })
                .collect();
            let f: Vec<f64> = folding.values().copied().collect();
            let (folding_mean, folding_sd) = mean_sd(&f);
            StageSummary {
                stage,
                mean_dice: mean_finite(structures.iter().map(|s| s.dice_mean)),
                mean_hd95: mean_finite(structures.iter().map(|s| s.hd95_mean)),
                structures,
                folding_mean,
                folding_sd,
            }
        })
        .collect();
    RegistrationReport { stages }
}

impl RegistrationReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageSummary> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Aligned plain-text table, one row per stage.
    pub fn to_text(&self) -> String {
        let names: BTreeSet<&str> = self.stages.iter().flat_map(|s| s.structures.iter().map(|x| x.structure.as_str())).collect();
        let mut header = vec!["stage".to_string()];
        header.extend(names.iter().map(|n| format!("{n} dice")));
        header.extend(["mean dice".into(), "mean hd95 (mm)".into(), "folding".into()]);
        let mut table = vec![header];
        for s in &self.stages {
            let mut row = vec![s.stage.to_string()];
            for n in &names {
                row.push(match s.structures.iter().find(|x| x.structure == *n) {
                    Some(x) => format!("{:.3} ± {:.3}", x.dice_mean, x.dice_sd),
                    None => "-".into(),
                });
            }
            row.push(format!("{:.3}", s.mean_dice));
            row.push(format!("{:.2}", s.mean_hd95));
            row.push(format!("{:.4} ± {:.4}", s.folding_mean, s.folding_sd));
            table.push(row);
        }
        let widths: Vec<usize> = (0..table[0].len()).map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &table {
            let cells: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

/// `subject_id,stage,structure,dice,hd95_mm,folding_ratio`; an undefined
/// HD95 is written as an empty cell.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[SubjectMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Csv(e.to_string());
    w.write_record(["subject_id", "stage", "structure", "dice", "hd95_mm", "folding_ratio"]).map_err(err)?;
    for r in rows {
        w.write_record([
            r.subject_id.clone(),
            r.stage.to_string(),
            r.structure.clone(),
            r.dice.to_string(),
            r.hd95_mm.map(|h| h.to_string()).unwrap_or_default(),
            r.folding_ratio.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::ImageGrid;

    fn row(id: &str, stage: Stage, structure: &str, dice: f64) -> SubjectMetrics {
        SubjectMetrics { subject_id: id.into(), stage, structure: structure.into(), dice, hd95_mm: Some(2.0), folding_ratio: 0.0 }
    }

    #[test]
    fn single_subject_has_zero_sd() {
        let r = report(&[row("a", Stage::Affine, "liver", 0.8)]);
        let s = &r.stage(Stage::Affine).unwrap().structures[0];
        assert_eq!((s.dice_mean, s.dice_sd), (0.8, 0.0));
    }

    #[test]
    fn population_sd() {
        let r = report(&[row("a", Stage::Deformable, "liver", 0.6), row("b", Stage::Deformable, "liver", 0.8)]);
        let s = &r.stage(Stage::Deformable).unwrap().structures[0];
        assert!((s.dice_mean - 0.7).abs() < 1e-12 && (s.dice_sd - 0.1).abs() < 1e-12);
        assert!(r.to_text().contains("0.700 ± 0.100"));
    }

    #[test]
    fn labels_to_rows_and_csv() {
        let g = ImageGrid::axis_aligned([4, 4, 1], [1.0; 3], [0.0; 3]).unwrap();
        let names = BTreeMap::from([(1u16, "liver".to_string()), (2, "spleen".to_string())]);
        let a = LabelVolume::new(g.clone(), (0..16).map(|o| if o < 8 { 1 } else { 0 }).collect(), names.clone()).unwrap();
        let b = LabelVolume::new(g.clone(), (0..16).map(|o| if (4..12).contains(&o) { 1 } else { 0 }).collect(), names).unwrap();
        let rows = evaluate_labels("s1", Stage::PreReg, &a, &b, &["liver".into(), "spleen".into()], 0.0).unwrap();
        assert_eq!(rows[0].dice, 0.5);
        assert_eq!(rows[1].dice, 1.0);
        assert_eq!(rows[1].hd95_mm, None);
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("subject_id,stage,structure,dice,hd95_mm,folding_ratio\ns1,pre_reg,liver,0.5,"));
        assert!(evaluate_labels("s1", Stage::PreReg, &a, &b, &["kidney".into()], 0.0).is_err());
    }
}
