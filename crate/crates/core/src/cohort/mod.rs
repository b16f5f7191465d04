//! Subject selection: health filtering, BMI × sex groups and reference
//! choice by distance to the group's median phenotype.

mod table;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::percentile;

pub use table::{read_subjects, write_exclusions, write_subjects};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BmiCategory {
    Normal,
    Overweight,
    Obese,
}

impl BmiCategory {
    pub const ALL: [BmiCategory; 3] = [BmiCategory::Normal, BmiCategory::Overweight, BmiCategory::Obese];

    /// Half-open range `[lo, hi)`; obese is unbounded above.
    pub fn range(self) -> (f64, f64) {
        match self {
            BmiCategory::Normal => (18.5, 25.0),
            BmiCategory::Overweight => (25.0, 30.0),
            BmiCategory::Obese => (30.0, f64::INFINITY),
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
        })
    }
}

impl fmt::Display for BmiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BmiCategory::Normal => "normal",
            BmiCategory::Overweight => "overweight",
            BmiCategory::Obese => "obese",
        })
    }
}

/// One of the six sex × BMI groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupSpec {
    pub sex: Sex,
    pub category: BmiCategory,
}

impl GroupSpec {
    pub fn all() -> Vec<GroupSpec> {
        [Sex::Female, Sex::Male]
            .into_iter()
            .flat_map(|sex| BmiCategory::ALL.into_iter().map(move |category| GroupSpec { sex, category }))
            .collect()
    }

    pub fn bmi_range(&self) -> (f64, f64) {
        self.category.range()
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.sex, self.category)
    }
}

impl std::str::FromStr for GroupSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupSpec::all()
            .into_iter()
            .find(|g| g.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown group `{s}` (expected e.g. female_normal)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub sex: Sex,
    pub age: f64,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub bmi: f64,
    pub body_fat_pct: f64,
    pub cancer: bool,
    pub disease: bool,
    pub operation: bool,
    pub image: String,
    pub labels: Vec<String>,
}

impl SubjectRecord {
    /// Why the phenotype values are unusable, if they are.
    pub fn invalid_reason(&self) -> Option<String> {
        let checks = [
            (self.bmi > 0.0 && self.bmi.is_finite(), "bmi must be positive"),
            (self.height_cm > 0.0 && self.height_cm.is_finite(), "height must be positive"),
            (self.weight_kg > 0.0 && self.weight_kg.is_finite(), "weight must be positive"),
            ((0.0..=100.0).contains(&self.body_fat_pct), "body fat must lie in [0, 100]"),
            (self.age.is_finite(), "age must be finite"),
        ];
        checks.iter().find(|c| !c.0).map(|c| c.1.to_string())
    }

    pub fn is_healthy(&self) -> bool {
        !(self.cancer || self.disease || self.operation)
    }

    /// age, weight, height, bmi, body fat.
    pub fn phenotype(&self) -> [f64; 5] {
        [self.age, self.weight_kg, self.height_cm, self.bmi, self.body_fat_pct]
    }
}

/// `None` below 18.5 (underweight).
pub fn bmi_category(bmi: f64) -> Result<Option<BmiCategory>> {
    if !(bmi > 0.0) || !bmi.is_finite() {
        return Err(Error::InvalidArgument(format!("bmi must be positive and finite, got {bmi}")));
    }
    Ok(BmiCategory::ALL.into_iter().find(|c| {
        let (lo, hi) = c.range();
        bmi >= lo && bmi < hi
    }))
}

pub fn select_healthy(records: &[SubjectRecord]) -> Vec<SubjectRecord> {
    records.iter().filter(|r| r.is_healthy()).cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ExclusionReason {
    /// Flags that were set, e.g. `cancer;operation`.
    Unhealthy(String),
    Underweight,
    Invalid(String),
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExclusionReason::Unhealthy(flags) => write!(f, "health record: {flags}"),
            ExclusionReason::Underweight => f.write_str("underweight (bmi < 18.5)"),
            ExclusionReason::Invalid(why) => write!(f, "invalid: {why}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Exclusion {
    pub id: String,
    pub reason: ExclusionReason,
}

#[derive(Clone, Debug, Default)]
pub struct Partition {
    /// All six groups, possibly empty, each sorted by id.
    pub groups: BTreeMap<GroupSpec, Vec<SubjectRecord>>,
    pub excluded: Vec<Exclusion>,
}

impl Partition {
    pub fn underweight_count(&self) -> usize {
        self.excluded.iter().filter(|e| e.reason == ExclusionReason::Underweight).count()
    }

    pub fn invalid_count(&self) -> usize {
        self.excluded.iter().filter(|e| matches!(e.reason, ExclusionReason::Invalid(_))).count()
    }

    pub fn eligible_count(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

/// Sorts records into the six groups. Invalid and underweight records are
/// listed as exclusions; health flags are not looked at here.
pub fn partition(records: &[SubjectRecord]) -> Partition {
    let mut out = Partition { groups: GroupSpec::all().into_iter().map(|g| (g, Vec::new())).collect(), excluded: Vec::new() };
    for r in records {
        if let Some(why) = r.invalid_reason() {
            out.excluded.push(Exclusion { id: r.id.clone(), reason: ExclusionReason::Invalid(why) });
            continue;
        }
        match bmi_category(r.bmi) {
            Ok(Some(category)) => out.groups.get_mut(&GroupSpec { sex: r.sex, category }).expect("all groups present").push(r.clone()),
            Ok(None) => out.excluded.push(Exclusion { id: r.id.clone(), reason: ExclusionReason::Underweight }),
            Err(e) => out.excluded.push(Exclusion { id: r.id.clone(), reason: ExclusionReason::Invalid(e.to_string()) }),
        }
    }
    for g in out.groups.values_mut() {
        g.sort_by(|a, b| a.id.cmp(&b.id));
    }
    out
}

/// Health filter followed by [`partition`]; unhealthy records join the
/// exclusion list.
pub fn select_groups(records: &[SubjectRecord]) -> Partition {
    let mut excluded = Vec::new();
    let mut healthy = Vec::new();
    for r in records {
        if r.is_healthy() {
            healthy.push(r.clone());
        } else {
            let flags: Vec<&str> = [(r.cancer, "cancer"), (r.disease, "disease"), (r.operation, "operation")].iter().filter(|f| f.0).map(|f| f.1).collect();
            excluded.push(Exclusion { id: r.id.clone(), reason: ExclusionReason::Unhealthy(flags.join(";")) });
        }
    }
    let mut p = partition(&healthy);
    excluded.append(&mut p.excluded);
    p.excluded = excluded;
    p
}

/// Median vector and per-attribute scale used by [`select_reference`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceChoice {
    pub id: String,
    /// Lower medians of age, weight, height, bmi, body fat.
    pub medians: [f64; 5],
    pub scales: [f64; 5],
    /// Normalized distance of every member, in input order.
    pub distances: Vec<(String, f64)>,
}

fn lower_median(sorted: &[f64]) -> f64 {
    sorted[(sorted.len() - 1) / 2]
}

fn scale(sorted: &[f64]) -> f64 {
    let iqr = percentile(sorted, 75.0) - percentile(sorted, 25.0);
    if iqr > 0.0 {
        return iqr;
    }
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// The member closest to the median phenotype, each attribute divided by
/// its interquartile range (standard deviation if that is zero, else 1).
/// Ties go to the lowest id.
pub fn select_reference(group: &[SubjectRecord]) -> Result<ReferenceChoice> {
    if group.is_empty() {
        return Err(Error::Empty("group"));
    }
    let mut medians = [0.0; 5];
    let mut scales = [0.0; 5];
    for a in 0..5 {
        let mut col: Vec<f64> = group.iter().map(|r| r.phenotype()[a]).collect();
        col.sort_by(f64::total_cmp);
        medians[a] = lower_median(&col);
        scales[a] = scale(&col);
    }
    let distances: Vec<(String, f64)> = group
        .iter()
        .map(|r| {
            let p = r.phenotype();
            let d2: f64 = (0..5).map(|a| ((p[a] - medians[a]) / scales[a]).powi(2)).sum();
            (r.id.clone(), d2.sqrt())
        })
        .collect();
    let best = distances
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .expect("non-empty");
    Ok(ReferenceChoice { id: best.0.clone(), medians, scales, distances })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn record(id: &str, sex: Sex, bmi: f64) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            sex,
            age: 60.0,
            height_cm: 170.0,
            weight_kg: bmi * 1.7 * 1.7,
            bmi,
            body_fat_pct: 25.0,
            cancer: false,
            disease: false,
            operation: false,
            image: format!("{id}.nii.gz"),
            labels: vec![],
        }
    }

    #[test]
    fn reference_bmis_classify() {
        assert_eq!(bmi_category(26.8).unwrap(), Some(BmiCategory::Overweight));
        assert_eq!(bmi_category(33.6).unwrap(), Some(BmiCategory::Obese));
        assert_eq!(bmi_category(23.3).unwrap(), Some(BmiCategory::Normal));
    }

    #[test]
    fn category_boundaries() {
        assert_eq!(bmi_category(25.0 - 1e-9).unwrap(), Some(BmiCategory::Normal));
        assert_eq!(bmi_category(25.0).unwrap(), Some(BmiCategory::Overweight));
        assert_eq!(bmi_category(30.0).unwrap(), Some(BmiCategory::Obese));
        assert_eq!(bmi_category(18.5).unwrap(), Some(BmiCategory::Normal));
        assert_eq!(bmi_category(17.0).unwrap(), None);
        assert!(bmi_category(0.0).is_err());
        assert!(bmi_category(-3.0).is_err());
    }

    #[test]
    fn health_filter() {
        let mut v: Vec<SubjectRecord> = (0..5).map(|i| record(&format!("s{i}"), Sex::Male, 24.0)).collect();
        v[0].cancer = true;
        v[1].disease = true;
        v[3].operation = true;
        let kept: Vec<String> = select_healthy(&v).into_iter().map(|r| r.id).collect();
        assert_eq!(kept, ["s2", "s4"]);
        let p = select_groups(&v);
        assert_eq!(p.excluded.len(), 3);
        assert_eq!(p.excluded[0].reason, ExclusionReason::Unhealthy("cancer".into()));
    }

    #[test]
    fn one_per_group() {
        let recs = vec![
            record("a", Sex::Female, 22.0),
            record("b", Sex::Female, 27.0),
            record("c", Sex::Female, 30.0),
            record("d", Sex::Male, 20.0),
            record("e", Sex::Male, 29.9),
            record("f", Sex::Male, 41.0),
            record("g", Sex::Male, 17.0),
        ];
        let p = partition(&recs);
        assert!(p.groups.values().all(|g| g.len() == 1));
        assert_eq!(p.groups[&GroupSpec { sex: Sex::Female, category: BmiCategory::Obese }][0].id, "c");
        assert_eq!(p.underweight_count(), 1);
        for g in p.groups.values() {
            assert_eq!(select_reference(g).unwrap().id, g[0].id);
        }
    }

    #[test]
    fn invalid_records_are_reported() {
        let mut r = record("x", Sex::Female, 22.0);
        r.body_fat_pct = 140.0;
        let p = partition(&[r]);
        assert_eq!(p.invalid_count(), 1);
        assert_eq!(p.eligible_count(), 0);
    }

    #[test]
    fn median_member_wins() {
        let mut g = vec![record("a", Sex::Male, 22.0), record("b", Sex::Male, 23.0), record("c", Sex::Male, 24.0)];
        g[0].age = 50.0;
        g[2].age = 70.0;
        assert_eq!(select_reference(&g).unwrap().id, "b");
        assert!(select_reference(&[]).is_err());
    }

    #[test]
    fn lower_median_and_scale_fallbacks() {
        assert_eq!(lower_median(&[1.0, 2.0, 3.0, 4.0]), 2.0);
        // IQR of [0, 0, 0, 0, 10] is zero: population sd takes over
        let s = scale(&[0.0, 0.0, 0.0, 0.0, 10.0]);
        assert!((s - 4.0).abs() < 1e-12);
        assert_eq!(scale(&[3.0, 3.0]), 1.0);
    }

    #[test]
    fn hand_built_group_of_five() {
        // attributes chosen so medians are (60, 80, 175, 26, 30) and IQRs (10, 10, 10, 2, 10)
        let rows = [
            ("p1", [50.0, 70.0, 165.0, 25.0, 20.0]),
            ("p2", [55.0, 75.0, 170.0, 25.0, 25.0]),
            ("p3", [60.0, 85.0, 175.0, 26.0, 30.0]),
            ("p4", [65.0, 80.0, 180.0, 27.0, 35.0]),
            ("p5", [70.0, 90.0, 185.0, 29.0, 40.0]),
        ];
        let g: Vec<SubjectRecord> = rows
            .iter()
            .map(|(id, p)| SubjectRecord { age: p[0], weight_kg: p[1], height_cm: p[2], bmi: p[3], body_fat_pct: p[4], ..record(id, Sex::Female, p[3]) })
            .collect();
        let c = select_reference(&g).unwrap();
        assert_eq!(c.medians, [60.0, 80.0, 175.0, 26.0, 30.0]);
        assert_eq!(c.scales, [10.0, 10.0, 10.0, 2.0, 10.0]);
        // by hand: p2 = sqrt(5 · 0.25), p3 = 0.5, p4 = sqrt(4 · 0.25)
        let want = [f64::NAN, 1.25f64.sqrt(), 0.5, 1.0];
        for i in 1..4 {
            assert!((c.distances[i].1 - want[i]).abs() < 1e-12, "{i}: {}", c.distances[i].1);
        }
        assert_eq!(c.id, "p3");
    }

    fn arb_record() -> impl Strategy<Value = SubjectRecord> {
        (0u32..10_000, any::<bool>(), 14.0f64..45.0, 30.0f64..80.0, 150.0f64..200.0, 5.0f64..50.0, 0u8..8)
            .prop_map(|(id, male, bmi, age, h, fat, flags)| SubjectRecord {
                id: format!("s{id:05}"),
                sex: if male { Sex::Male } else { Sex::Female },
                age,
                height_cm: h,
                weight_kg: bmi * (h / 100.0).powi(2),
                bmi,
                body_fat_pct: fat,
                cancer: flags & 1 != 0,
                disease: flags & 2 != 0,
                operation: flags & 4 != 0,
                image: String::new(),
                labels: vec![],
            })
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_and_exclusive(recs in proptest::collection::vec(arb_record(), 0..200)) {
            let p = partition(&recs);
            prop_assert_eq!(p.eligible_count() + p.excluded.len(), recs.len());
            for (spec, g) in &p.groups {
                for r in g {
                    prop_assert_eq!(r.sex, spec.sex);
                    let (lo, hi) = spec.bmi_range();
                    prop_assert!(r.bmi >= lo && r.bmi < hi);
                }
            }
        }

        #[test]
        fn reference_ignores_order(recs in proptest::collection::vec(arb_record(), 1..30), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(select_reference(&recs).unwrap().id, select_reference(&shuffled).unwrap().id);
        }
    }
}
