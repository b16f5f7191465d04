//! Synthetic cohorts through the library: organs move with their drawn
//! jitter, and warped labels keep their invariants.

use bodyatlas::cohort::{select_groups, select_reference};
use bodyatlas::phantom::{make_cohort, random_smooth_warp, PhantomSpec, Variation, ORGAN_NAMES};
use bodyatlas::transform::{exp_velocity, warp_labels, AffineTransform, TransformChain};
use bodyatlas::Vec3;

fn small() -> PhantomSpec {
    PhantomSpec { dims: [32, 24, 48], spacing: [4.0, 6.0, 4.0], ..Default::default() }
}

#[test]
fn organ_centroids_follow_the_drawn_shift() {
    let base = small();
    let var = Variation { body_radius_sd: 0.0, fat_thickness_sd: 0.0, organ_center_sd: 3.0, reseed: false };
    let n = 50;
    let cohort = make_cohort(n, &base, &var, 4).unwrap();
    let liver = cohort[0].labels.id_of("liver").unwrap();
    let k = ORGAN_NAMES.iter().position(|n| *n == "liver").unwrap();
    let (_, base_labels) = bodyatlas::phantom::make_phantom(&base).unwrap();
    let c0 = base_labels.indicator(liver).center_of_mass().unwrap();
    let mut spread = Vec3::zeros();
    for m in &cohort {
        let shift = Vec3::from(m.spec.organs[k].center) - Vec3::from(base.organs[k].center);
        let moved = m.labels.indicator(liver).center_of_mass().unwrap() - c0;
        assert!((moved - shift).norm() < 1.0, "{}: centroid moved {moved:?}, organs shifted {shift:?}", m.record.id);
        spread += shift.component_mul(&shift);
    }
    // draws crossing the body wall are redrawn, which narrows the spread
    let sd = (spread / n as f64).map(f64::sqrt);
    assert!(sd.iter().all(|&s| s > 1.0 && s < 4.5), "{sd:?}");
}

#[test]
fn default_cohort_groups_and_references() {
    let cohort = make_cohort(12, &small(), &Variation::default(), 9).unwrap();
    let records: Vec<_> = cohort.iter().map(|m| m.record.clone()).collect();
    let p = select_groups(&records);
    let grouped: usize = p.groups.values().map(Vec::len).sum();
    assert_eq!(grouped + p.excluded.len(), 12);
    for members in p.groups.values().filter(|m| !m.is_empty()) {
        let r = select_reference(members).unwrap();
        assert!(members.iter().any(|m| m.id == r.id));
    }
}

#[test]
fn warped_labels_are_a_partition() {
    let cohort = make_cohort(1, &small(), &Variation::none(), 2).unwrap();
    let labels = &cohort[0].labels;
    let grid = labels.grid().clone();
    let v = random_smooth_warp(&grid, 2.0, 40.0, 3).unwrap();
    let chain = TransformChain::affine_then_field(AffineTransform::from_translation(Vec3::new(3.0, -2.0, 5.0)), exp_velocity(&v, &grid));
    let w = warp_labels(labels, &chain, &grid).unwrap();
    for o in 0..grid.len() {
        let sum: f64 = w.soft.values().map(|s| s.values()[o]).sum();
        assert!((sum - 1.0).abs() < 1e-9, "soft maps sum to {sum}");
        let best = w.soft.iter().map(|(id, s)| (s.values()[o], *id)).fold((f64::NEG_INFINITY, 0u16), |a, b| if b.0 > a.0 { b } else { a });
        assert_eq!(w.hard.labels()[o], best.1);
    }
    // identity reproduces the map exactly
    let same = warp_labels(labels, &TransformChain::identity(), &grid).unwrap();
    assert_eq!(same.hard.labels(), labels.labels());
}
