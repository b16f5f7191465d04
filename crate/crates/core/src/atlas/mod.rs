//! Group atlases from registrations to a common reference: voxelwise
//! means of the warped images and soft label maps, the mean inverse
//! transformation, and unbiasing through it.
//!
//! Subjects are always reduced in ascending id order, one voxel at a time,
//! so results do not depend on the thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::GroupSpec;
use crate::error::{Error, Result};
use crate::transform::{exp_velocity, warp_scalar, AffineTransform, DisplacementField, Transform, TransformChain, VelocityField, WarpedLabels};
use crate::volume::{ImageGrid, ScalarVolume};
use crate::Vec3;

/// Subjects whose inverse misses by more than this (voxels) are left out of
/// the mean inverse field.
pub const MAX_INVERSE_RESIDUAL: f64 = 0.5;

/// One subject registered to the reference: `φ(x) = A(x + exp(v)(x))`.
#[derive(Clone, Debug)]
pub struct SubjectRegistration {
    pub id: String,
    pub affine: AffineTransform,
    pub velocity: VelocityField,
    /// `φ` as one displacement on the reference grid.
    pub total_field: DisplacementField,
    /// `I ∘ φ`.
    pub warped_image: ScalarVolume,
    /// Soft indicator of each structure after warping, by name.
    pub warped_labels: BTreeMap<String, ScalarVolume>,
}

/// Names the soft maps of `w` with the label names (background is
/// `"background"`).
pub fn soft_labels_by_name(w: &WarpedLabels) -> BTreeMap<String, ScalarVolume> {
    w.soft
        .iter()
        .map(|(id, map)| {
            let name = w.hard.names().get(id).cloned().unwrap_or_else(|| if *id == 0 { "background".into() } else { format!("label_{id}") });
            (name, map.clone())
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct CohortRegistration {
    pub reference_id: String,
    pub group: Option<GroupSpec>,
    grid: ImageGrid,
    subjects: Vec<SubjectRegistration>,
}

impl CohortRegistration {
    /// Checks that everything lives on `grid` and sorts subjects by id.
    pub fn new(reference_id: impl Into<String>, group: Option<GroupSpec>, grid: ImageGrid, mut subjects: Vec<SubjectRegistration>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::Empty("cohort registration"));
        }
        for s in &subjects {
            grid.ensure_same(s.total_field.grid(), "reference grid and subject field")?;
            grid.ensure_same(s.warped_image.grid(), "reference grid and warped image")?;
            for m in s.warped_labels.values() {
                grid.ensure_same(m.grid(), "reference grid and warped label map")?;
            }
        }
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidArgument(format!("duplicate subject id `{}`", w[0].id)));
        }
        Ok(Self { reference_id: reference_id.into(), group, grid, subjects })
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn subjects(&self) -> &[SubjectRegistration] {
        &self.subjects
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.id.clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnatomicalAtlas {
    pub volume: ScalarVolume,
    pub group: Option<GroupSpec>,
    pub n_subjects: usize,
    pub unbiased: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityAtlas {
    pub structure: String,
    /// Values in `[0, 1]`.
    pub volume: ScalarVolume,
    pub group: Option<GroupSpec>,
    pub n_subjects: usize,
    pub unbiased: bool,
}

/// Which part of each `φ_i` is inverted before averaging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseVariant {
    /// `φ⁻¹ = exp(-v) ∘ A⁻¹`.
    #[default]
    Full,
    /// `exp(-v)` alone.
    DeformableOnly,
}

#[derive(Clone, Debug)]
pub struct MeanInverseField {
    pub field: DisplacementField,
    pub n_subjects: usize,
    pub variant: InverseVariant,
    pub included: Vec<String>,
    /// Subjects left out, with their inversion residual in voxels.
    pub excluded: Vec<(String, f64)>,
}

fn mean_of(grid: &ImageGrid, maps: &[&ScalarVolume]) -> ScalarVolume {
    let n = maps.len() as f64;
    let values = (0..grid.len())
        .into_par_iter()
        .map(|o| maps.iter().fold(0.0, |acc, m| acc + m.values()[o]) / n)
        .collect();
    ScalarVolume::from_parts(grid.clone(), values)
}

/// Voxelwise mean of the warped images.
pub fn build_initial_atlas(reg: &CohortRegistration) -> Result<AnatomicalAtlas> {
    let maps: Vec<&ScalarVolume> = reg.subjects.iter().map(|s| &s.warped_image).collect();
    for m in &maps {
        reg.grid.ensure_same(m.grid(), "reference grid and warped image")?;
    }
    Ok(AnatomicalAtlas { volume: mean_of(&reg.grid, &maps), group: reg.group, n_subjects: maps.len(), unbiased: false })
}

/// Voxelwise mean of one structure's warped soft maps.
pub fn build_label_atlas(reg: &CohortRegistration, structure: &str) -> Result<ProbabilityAtlas> {
    let maps = reg
        .subjects
        .iter()
        .map(|s| s.warped_labels.get(structure).ok_or_else(|| Error::MissingStructure(format!("{structure} (subject {})", s.id))))
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_of(&reg.grid, &maps);
    let volume = ScalarVolume::from_parts(reg.grid.clone(), mean.into_values().into_iter().map(|v| v.clamp(0.0, 1.0)).collect());
    Ok(ProbabilityAtlas { structure: structure.to_string(), volume, group: reg.group, n_subjects: maps.len(), unbiased: false })
}

/// `φ⁻¹` of one subject as a displacement on the reference grid, with the
/// largest `‖φ(φ⁻¹(y)) - y‖` in voxels over the points whose affine
/// pre-image stays on the grid.
pub fn subject_inverse(s: &SubjectRegistration, grid: &ImageGrid, variant: InverseVariant) -> Result<(DisplacementField, f64)> {
    let u = exp_velocity(&s.velocity, grid);
    let w = exp_velocity(&s.velocity.negated(), grid);
    let a = match variant {
        InverseVariant::Full => s.affine,
        InverseVariant::DeformableOnly => AffineTransform::identity(),
    };
    let a_inv = a.invert()?;
    let sp = grid.spacing();
    let per_voxel: Vec<(Vec3, Option<f64>)> = (0..grid.len())
        .into_par_iter()
        .map(|o| {
            let y = grid.voxel_center(o);
            let y0 = a_inv.apply(&y);
            let z = w.apply(&y0);
            let residual = grid.contains_index(&grid.index_from_world(&y0)).then(|| (a.apply(&u.apply(&z)) - y).component_div(&sp).norm());
            (z - y, residual)
        })
        .collect();
    let residual = per_voxel.iter().filter_map(|p| p.1).fold(0.0, f64::max);
    let field = DisplacementField::new(grid.clone(), per_voxel.into_iter().map(|p| p.0).collect())?;
    Ok((field, residual))
}

/// `Φ = (1/n) Σ φ_i⁻¹` as a componentwise mean of inverse displacements.
/// Subjects whose inverse residual exceeds [`MAX_INVERSE_RESIDUAL`] are
/// dropped with a warning; it is an error if none remain.
pub fn mean_inverse_field(reg: &CohortRegistration, variant: InverseVariant) -> Result<MeanInverseField> {
    let mut kept = Vec::new();
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for s in &reg.subjects {
        let (inv, residual) = subject_inverse(s, &reg.grid, variant)?;
        if residual > MAX_INVERSE_RESIDUAL {
            log::warn!("subject {}: inverse residual {residual:.3} voxels, left out of the mean inverse field", s.id);
            excluded.push((s.id.clone(), residual));
        } else {
            kept.push(inv);
            included.push(s.id.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Empty("set of invertible subject transforms"));
    }
    let field = mean_displacement(&reg.grid, &kept)?;
    Ok(MeanInverseField { field, n_subjects: kept.len(), variant, included, excluded })
}

/// Componentwise mean, summed in slice order at every voxel.
pub fn mean_displacement(grid: &ImageGrid, fields: &[DisplacementField]) -> Result<DisplacementField> {
    if fields.is_empty() {
        return Err(Error::Empty("field list"));
    }
    for f in fields {
        grid.ensure_same(f.grid(), "reference grid and displacement field")?;
    }
    let n = fields.len() as f64;
    let vectors = (0..grid.len())
        .into_par_iter()
        .map(|o| fields.iter().fold(Vec3::zeros(), |acc, f| acc + f.vectors()[o]) / n)
        .collect();
    DisplacementField::new(grid.clone(), vectors)
}

fn resample(vol: &ScalarVolume, phi: &MeanInverseField) -> Result<ScalarVolume> {
    vol.grid().ensure_same(phi.field.grid(), "atlas and mean inverse field")?;
    warp_scalar(vol, &TransformChain(vec![Transform::Displacement(phi.field.clone())]), vol.grid())
}

/// `A_u = A_init ∘ Φ`.
pub fn unbias(a: &AnatomicalAtlas, phi: &MeanInverseField) -> Result<AnatomicalAtlas> {
    Ok(AnatomicalAtlas { volume: resample(&a.volume, phi)?, unbiased: true, ..a.clone() })
}

/// As [`unbias`] for a probability atlas; values stay in `[0, 1]`.
pub fn unbias_probability(a: &ProbabilityAtlas, phi: &MeanInverseField) -> Result<ProbabilityAtlas> {
    let v = resample(&a.volume, phi)?;
    let volume = ScalarVolume::from_parts(v.grid().clone(), v.into_values().into_iter().map(|x| x.clamp(0.0, 1.0)).collect());
    Ok(ProbabilityAtlas { volume, unbiased: true, ..a.clone() })
}

/// Sidecar written next to each atlas volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub structure: Option<String>,
    pub group: Option<String>,
    pub reference_id: String,
    pub n_subjects: usize,
    pub subject_ids: Vec<String>,
    pub unbiased: bool,
    pub inverse_variant: Option<InverseVariant>,
    pub excluded_from_mean_inverse: Vec<String>,
    pub config_hash: String,
}
