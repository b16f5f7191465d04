//! Synthetic whole-body-like phantoms with analytic geometry, seeded
//! cohorts and random smooth diffeomorphisms, all bit-reproducible.
//!
//! Label ids: 0 background (and lean tissue), 1 subcutaneous fat,
//! 2 visceral fat, 3 liver, 4 spleen, 5 pancreas, 6 left kidney,
//! 7 right kidney.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Sex, SubjectRecord};
use crate::error::{Error, Result};
use crate::transform::{exp_velocity, AffineTransform, BSplineLattice, DisplacementField, Transform, TransformChain, VelocityField};
use crate::volume::{ImageGrid, LabelVolume, ScalarVolume};
use crate::Vec3;

pub const SUBCUTANEOUS: u16 = 1;
pub const VISCERAL: u16 = 2;
pub const ORGAN_NAMES: [&str; 5] = ["liver", "spleen", "pancreas", "kidney_left", "kidney_right"];

/// Label id → name for every phantom label map.
pub fn label_names() -> BTreeMap<u16, String> {
    let mut m = BTreeMap::from([(SUBCUTANEOUS, "subcutaneous_fat".to_string()), (VISCERAL, "visceral_fat".to_string())]);
    for (i, n) in ORGAN_NAMES.iter().enumerate() {
        m.insert(3 + i as u16, n.to_string());
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    fn level(&self, p: &Vec3) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2)).sum()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.level(p) <= 1.0
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radii.iter().product::<f64>()
    }

    fn surface_point(&self, theta: f64, phi: f64) -> Vec3 {
        Vec3::new(
            self.center[0] + self.radii[0] * theta.sin() * phi.cos(),
            self.center[1] + self.radii[1] * theta.sin() * phi.sin(),
            self.center[2] + self.radii[2] * theta.cos(),
        )
    }

    fn shifted(&self, d: Vec3) -> Self {
        Self { center: [self.center[0] + d.x, self.center[1] + d.y, self.center[2] + d.z], radii: self.radii }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: f64,
    pub lean: f64,
    pub subcutaneous: f64,
    pub visceral: f64,
    /// In [`ORGAN_NAMES`] order.
    pub organs: [f64; 5],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Outer body ellipsoid radii (mm), centered on the grid.
    pub body_radii: [f64; 3],
    pub fat_thickness: f64,
    pub visceral_blobs: usize,
    /// Blob radius range (mm).
    pub blob_radius: [f64; 2],
    /// In [`ORGAN_NAMES`] order, centers relative to the grid center.
    pub organs: Vec<Ellipsoid>,
    pub intensities: Intensities,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let e = |c: [f64; 3], r: [f64; 3]| Ellipsoid { center: c, radii: r };
        Self {
            dims: [64, 48, 96],
            spacing: [2.0, 3.0, 2.0],
            body_radii: [50.0, 56.0, 74.0],
            fat_thickness: 7.0,
            visceral_blobs: 40,
            blob_radius: [4.0, 8.0],
            organs: vec![
                e([-14.0, 3.0, 24.0], [22.0, 20.0, 19.0]),
                e([26.0, 8.0, 26.0], [9.0, 12.0, 11.0]),
                e([5.0, -10.0, -5.0], [17.0, 10.0, 8.0]),
                e([24.0, 22.0, -13.0], [8.0, 11.0, 15.0]),
                e([-24.0, 22.0, -13.0], [8.0, 11.0, 15.0]),
            ],
            intensities: Intensities { background: 0.0, lean: 0.35, subcutaneous: 1.0, visceral: 0.85, organs: [0.55, 0.65, 0.45, 0.75, 0.75] },
            noise_sd: 0.02,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn grid(&self) -> Result<ImageGrid> {
        let origin = [0, 1, 2].map(|a| -((self.dims[a] - 1) as f64) * self.spacing[a] / 2.0);
        ImageGrid::axis_aligned(self.dims, self.spacing, origin)
    }

    fn inner(&self) -> Ellipsoid {
        Ellipsoid { center: [0.0; 3], radii: self.body_radii.map(|r| r - self.fat_thickness) }
    }

    /// Checks radii, organ containment in the inner body and pairwise
    /// organ separation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("phantom spec: {m}")));
        if self.organs.len() != ORGAN_NAMES.len() {
            return bad(format!("{} organs given, {} expected", self.organs.len(), ORGAN_NAMES.len()));
        }
        if !(self.fat_thickness > 0.0) || self.body_radii.iter().any(|&r| !(r > self.fat_thickness)) {
            return bad("body radii must exceed a positive fat thickness".into());
        }
        if !(self.noise_sd >= 0.0) || !(self.blob_radius[0] > 0.0 && self.blob_radius[1] >= self.blob_radius[0]) {
            return bad("noise sd and blob radii must be non-negative and ordered".into());
        }
        if self.organs.iter().any(|o| o.radii.iter().any(|&r| !(r > 0.0))) {
            return bad("organ radii must be positive".into());
        }
        let inner = self.inner();
        // dense sampling of each organ surface
        let n = 48;
        for (i, o) in self.organs.iter().enumerate() {
            for a in 0..=n {
                for b in 0..2 * n {
                    let p = o.surface_point(std::f64::consts::PI * a as f64 / n as f64, std::f64::consts::PI * b as f64 / n as f64);
                    if inner.level(&p) >= 1.0 {
                        return bad(format!("{} reaches outside the body", ORGAN_NAMES[i]));
                    }
                }
            }
        }
        for i in 0..self.organs.len() {
            for j in i + 1..self.organs.len() {
                if overlap(&self.organs[i], &self.organs[j]) {
                    return bad(format!("{} and {} overlap", ORGAN_NAMES[i], ORGAN_NAMES[j]));
                }
            }
        }
        Ok(())
    }
}

/// Sampled test on a fine lattice over the intersection of bounding boxes.
fn overlap(a: &Ellipsoid, b: &Ellipsoid) -> bool {
    let lo = [0, 1, 2].map(|k| (a.center[k] - a.radii[k]).max(b.center[k] - b.radii[k]));
    let hi = [0, 1, 2].map(|k| (a.center[k] + a.radii[k]).min(b.center[k] + b.radii[k]));
    if (0..3).any(|k| lo[k] > hi[k]) {
        return false;
    }
    let n = 40;
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let t = |lo: f64, hi: f64, s: usize| lo + (hi - lo) * s as f64 / n as f64;
                let p = Vec3::new(t(lo[0], hi[0], i), t(lo[1], hi[1], j), t(lo[2], hi[2], k));
                if a.contains(&p) && b.contains(&p) {
                    return true;
                }
            }
        }
    }
    false
}

/// The continuous phantom: tissue class at any world point.
#[derive(Clone, Debug)]
pub struct PhantomGeometry {
    body: Ellipsoid,
    inner: Ellipsoid,
    blobs: Vec<(Vec3, f64)>,
    organs: Vec<Ellipsoid>,
    intensities: Intensities,
}

impl PhantomGeometry {
    pub fn new(spec: &PhantomSpec) -> Result<Self> {
        spec.validate()?;
        let inner = spec.inner();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_b10b);
        let blobs = (0..spec.visceral_blobs)
            .map(|_| loop {
                let u = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.7..0.7));
                if u.norm() < 0.85 {
                    let c = Vec3::new(u.x * inner.radii[0], u.y * inner.radii[1], u.z * inner.radii[2]);
                    break (c, rng.random_range(spec.blob_radius[0]..=spec.blob_radius[1]));
                }
            })
            .collect();
        Ok(Self {
            body: Ellipsoid { center: [0.0; 3], radii: spec.body_radii },
            inner,
            blobs,
            organs: spec.organs.clone(),
            intensities: spec.intensities.clone(),
        })
    }

    pub fn label_at(&self, p: &Vec3) -> u16 {
        if !self.body.contains(p) {
            return 0;
        }
        if !self.inner.contains(p) {
            return SUBCUTANEOUS;
        }
        if let Some(i) = self.organs.iter().position(|o| o.contains(p)) {
            return 3 + i as u16;
        }
        if self.blobs.iter().any(|(c, r)| (p - c).norm() <= *r) {
            return VISCERAL;
        }
        0
    }

    /// Noise-free intensity.
    pub fn intensity_at(&self, p: &Vec3) -> f64 {
        let it = &self.intensities;
        match self.label_at(p) {
            0 if self.body.contains(p) => it.lean,
            0 => it.background,
            SUBCUTANEOUS => it.subcutaneous,
            VISCERAL => it.visceral,
            l => it.organs[(l - 3) as usize],
        }
    }

    pub fn organs(&self) -> &[Ellipsoid] {
        &self.organs
    }
}

fn noise(grid: &ImageGrid, sd: f64, seed: u64) -> Vec<f64> {
    if sd == 0.0 {
        return vec![0.0; grid.len()];
    }
    // one stream per z-slab keeps generation parallel and reproducible
    let slab = grid.dims()[0] * grid.dims()[1];
    (0..grid.dims()[2])
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            (0..slab).map(move |_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e * sd
            })
        })
        .collect()
}

/// Image and labels of `spec` on its own grid, with the geometry pulled
/// back through `chain` (`out(x) = phantom(chain(x))`). The noise comes
/// from `noise_seed`, the geometry from `spec.seed`.
pub fn render(spec: &PhantomSpec, chain: &TransformChain, noise_seed: u64) -> Result<(ScalarVolume, LabelVolume)> {
    let geom = PhantomGeometry::new(spec)?;
    let grid = spec.grid()?;
    let pts: Vec<Vec3> = (0..grid.len()).into_par_iter().map(|o| chain.apply(&grid.voxel_center(o))).collect();
    let labels: Vec<u16> = pts.par_iter().map(|p| geom.label_at(p)).collect();
    let n = noise(&grid, spec.noise_sd, noise_seed);
    let values: Vec<f64> = pts.par_iter().zip(&n).map(|(p, e)| geom.intensity_at(p) + e).collect();
    Ok((ScalarVolume::new(grid.clone(), values)?, LabelVolume::new(grid, labels, label_names())?))
}

/// Piecewise-constant tissue image plus seeded Gaussian noise, and labels.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(ScalarVolume, LabelVolume)> {
    render(spec, &TransformChain::identity(), spec.seed)
}

/// Seeded smooth velocity whose exponential reaches `amplitude_voxels` at
/// its largest displacement and does not fold. Control points sit
/// `smoothness_mm` apart; the field vanishes at the grid faces.
pub fn random_smooth_warp(grid: &ImageGrid, amplitude_voxels: f64, smoothness_mm: f64, seed: u64) -> Result<VelocityField> {
    if !(amplitude_voxels >= 0.0) || !(smoothness_mm > 0.0) {
        return Err(Error::InvalidArgument("warp amplitude must be ≥ 0 and smoothness > 0".into()));
    }
    let template = BSplineLattice::covering(grid, Vec3::repeat(smoothness_mm))?;
    if amplitude_voxels == 0.0 {
        return Ok(VelocityField::new(template));
    }
    const ATTEMPTS: usize = 5;
    for attempt in 0..ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);
        // a sine window fades the field out toward the grid faces
        let [na, nb, nc] = template.dims();
        let mut coeffs = Vec::with_capacity(template.len());
        for c in 0..nc {
            for b in 0..nb {
                for a in 0..na {
                    let idx = grid.index_from_world(&template.node_world(a, b, c));
                    let w: f64 = (0..3).map(|k| (std::f64::consts::PI * (idx[k] / (grid.dims()[k] - 1).max(1) as f64).clamp(0.0, 1.0)).sin()).product();
                    let e = Vec3::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                    coeffs.push(e * w);
                }
            }
        }
        let base = template.with_coeffs(coeffs);
        // fixed-point on the scale: the exponential is close to linear in it
        let mut scale = amplitude_voxels * grid.min_spacing() / base.max_coeff_norm().max(1e-12);
        let mut v = VelocityField::new(base.clone());
        for _ in 0..8 {
            v = VelocityField::new(base.with_coeffs(base.coeffs().iter().map(|c| c * scale).collect()));
            let m = exp_velocity(&v, grid).max_norm_voxels();
            if (m - amplitude_voxels).abs() < 0.02 * amplitude_voxels {
                break;
            }
            scale *= amplitude_voxels / m;
        }
        let u = exp_velocity(&v, grid);
        if u.folding_ratio(None)? == 0.0 {
            return Ok(v);
        }
        log::warn!("random warp draw {attempt} folds at amplitude {amplitude_voxels}; redrawing");
    }
    Err(Error::FoldingPersisted(ATTEMPTS))
}

/// A phantom and a copy deformed by a known transform.
#[derive(Clone, Debug)]
pub struct PlantedPair {
    pub fixed: ScalarVolume,
    pub fixed_labels: LabelVolume,
    pub moving: ScalarVolume,
    pub moving_labels: LabelVolume,
    pub velocity: VelocityField,
    /// Translation (mm) applied before the warp.
    pub translation: Vec3,
    /// The exact pull-back `fixed → moving` a registration should recover.
    pub truth: DisplacementField,
}

/// `moving(y) = phantom(exp(v)(y + t))` with `v` from
/// [`random_smooth_warp`] and `t` given in voxels, so the ideal
/// registration is `x ↦ exp(-v)(x) - t`. The moving copy gets its own noise.
pub fn planted_pair(spec: &PhantomSpec, amplitude_voxels: f64, smoothness_mm: f64, translation_voxels: Vec3, seed: u64) -> Result<PlantedPair> {
    let grid = spec.grid()?;
    let velocity = random_smooth_warp(&grid, amplitude_voxels, smoothness_mm, seed)?;
    let t = translation_voxels.component_mul(&grid.spacing());
    let u = exp_velocity(&velocity, &grid);
    let chain = TransformChain(vec![Transform::Displacement(u), Transform::Affine(AffineTransform::from_translation(t))]);
    let (fixed, fixed_labels) = make_phantom(spec)?;
    let (moving, moving_labels) = render(spec, &chain, spec.seed.wrapping_add(seed).wrapping_add(1))?;
    let inv = exp_velocity(&velocity.negated(), &grid);
    let truth = DisplacementField::new(grid, inv.vectors().iter().map(|d| d - t).collect())?;
    Ok(PlantedPair { fixed, fixed_labels, moving, moving_labels, velocity, translation: t, truth })
}

/// Per-subject jitter applied by [`make_cohort`] (standard deviations, mm).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Variation {
    pub body_radius_sd: f64,
    /// Shared shift of the whole organ block, per axis.
    pub organ_center_sd: f64,
    pub fat_thickness_sd: f64,
    /// Give each subject its own noise and visceral-blob draw.
    pub reseed: bool,
}

impl Default for Variation {
    fn default() -> Self {
        Self { body_radius_sd: 2.0, organ_center_sd: 2.0, fat_thickness_sd: 1.5, reseed: true }
    }
}

impl Variation {
    pub fn none() -> Self {
        Self { body_radius_sd: 0.0, organ_center_sd: 0.0, fat_thickness_sd: 0.0, reseed: false }
    }
}

#[derive(Clone, Debug)]
pub struct CohortMember {
    pub spec: PhantomSpec,
    pub image: ScalarVolume,
    pub labels: LabelVolume,
    pub record: SubjectRecord,
}

/// Subject id used by [`make_cohort`].
pub fn subject_id(i: usize) -> String {
    format!("sub-{:03}", i + 1)
}

fn jittered(base: &PhantomSpec, var: &Variation, rng: &mut ChaCha8Rng, subject_seed: u64) -> PhantomSpec {
    let n = |rng: &mut ChaCha8Rng, sd: f64| if sd > 0.0 { Normal::new(0.0, sd).expect("sd > 0").sample(rng) } else { 0.0 };
    // invalid draws (organs pushed through the body wall) are redrawn
    for _ in 0..100 {
        let mut s = base.clone();
        let db = n(rng, var.body_radius_sd);
        s.body_radii = base.body_radii.map(|r| r + db);
        s.fat_thickness = (base.fat_thickness + n(rng, var.fat_thickness_sd)).max(0.5 * base.fat_thickness);
        let shift = Vec3::new(n(rng, var.organ_center_sd), n(rng, var.organ_center_sd), n(rng, var.organ_center_sd));
        s.organs = base.organs.iter().map(|o| o.shifted(shift)).collect();
        if var.reseed {
            s.seed = subject_seed;
        }
        if s.validate().is_ok() {
            return s;
        }
    }
    base.clone()
}

/// `n` jittered phantoms with phenotypes consistent with their anatomy: BMI
/// and body fat grow with the fat-shell thickness.
pub fn make_cohort(n: usize, base: &PhantomSpec, var: &Variation, seed: u64) -> Result<Vec<CohortMember>> {
    if n == 0 {
        return Err(Error::Empty("phantom cohort"));
    }
    base.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // draw everything sequentially, then render in parallel
    let drafts: Vec<(PhantomSpec, f64, f64)> = (0..n)
        .map(|i| {
            let subject_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            let s = jittered(base, var, &mut rng, subject_seed);
            let age: f64 = rng.random_range(45.0..75.0);
            let height: f64 = 172.0 + 8.0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) * if var.reseed { 1.0 } else { 0.0 };
            (s, age.round(), (height * 10.0).round() / 10.0)
        })
        .collect();
    drafts
        .into_par_iter()
        .enumerate()
        .map(|(i, (spec, age, height))| {
            let (image, labels) = make_phantom(&spec)?;
            let bmi = 14.0 + 1.4 * spec.fat_thickness;
            let id = subject_id(i);
            let record = SubjectRecord {
                id: id.clone(),
                sex: if i % 2 == 0 { Sex::Female } else { Sex::Male },
                age,
                height_cm: height,
                weight_kg: bmi * (height / 100.0).powi(2),
                bmi,
                body_fat_pct: (10.0 + 2.5 * spec.fat_thickness).min(60.0),
                cancer: false,
                disease: false,
                operation: false,
                image: format!("{id}_image.nii.gz"),
                labels: vec![format!("{id}_labels.nii.gz")],
            };
            Ok(CohortMember { spec, image, labels, record })
        })
        .collect()
}
