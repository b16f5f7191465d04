//! `cohort`: health filter, six sex × BMI groups, one reference per group.

use std::fmt::Write as _;
use std::fs::File;

use bodyatlas::cohort::{select_groups, select_reference, write_exclusions, write_subjects, ExclusionReason};

use super::{create_dir, load_table, Ctx};
use crate::error::CliResult;
use crate::manifest::RunManifest;

pub const PHENOTYPES: [&str; 5] = ["age", "weight_kg", "height_cm", "bmi", "body_fat_pct"];

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let cfg = ctx.config()?;
    let root = ctx.out_root()?;
    let dir = root.join("cohort");
    create_dir(&dir.join("groups"))?;
    let mut manifest = RunManifest::new("cohort", None, ctx.config_hash(), ctx.seed);
    manifest.add_input(&cfg.paths.subjects, &root)?;

    let records = load_table(cfg)?;
    let partition = select_groups(&records);
    let mut refs = String::from("group,n_subjects,reference_id,distance\n");
    let mut card = String::new();
    writeln!(card, "subjects read: {}", records.len()).unwrap();
    writeln!(card, "eligible: {}", partition.eligible_count()).unwrap();
    writeln!(card, "excluded: {} ({} underweight, {} invalid)\n", partition.excluded.len(), partition.underweight_count(), partition.invalid_count()).unwrap();
    for (spec, members) in &partition.groups {
        let path = dir.join("groups").join(format!("{spec}.csv"));
        write_subjects(File::create(&path)?, members)?;
        manifest.add_output(&path, &root)?;
        if members.is_empty() {
            writeln!(refs, "{spec},0,,").unwrap();
            writeln!(card, "{spec}: empty\n").unwrap();
            continue;
        }
        let choice = select_reference(members)?;
        let d = choice.distances.iter().find(|(id, _)| *id == choice.id).map(|x| x.1).unwrap_or(0.0);
        writeln!(refs, "{spec},{},{},{d}", members.len(), choice.id).unwrap();
        writeln!(card, "{spec}: {} subjects, reference {}", members.len(), choice.id).unwrap();
        for (a, name) in PHENOTYPES.iter().enumerate() {
            writeln!(card, "  {name:<13} median {:>8.2}  scale {:>7.2}", choice.medians[a], choice.scales[a]).unwrap();
        }
        let mut ranked = choice.distances.clone();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let top: Vec<String> = ranked.iter().take(3).map(|(id, d)| format!("{id} ({d:.3})")).collect();
        writeln!(card, "  closest: {}\n", top.join(", ")).unwrap();
    }
    let unhealthy = partition.excluded.iter().filter(|e| matches!(e.reason, ExclusionReason::Unhealthy(_))).count();
    writeln!(card, "excluded for health records: {unhealthy}").unwrap();

    let refs_path = dir.join("references.csv");
    std::fs::write(&refs_path, refs)?;
    manifest.add_output(&refs_path, &root)?;
    let excl_path = dir.join("exclusions.csv");
    write_exclusions(File::create(&excl_path)?, &partition.excluded)?;
    manifest.add_output(&excl_path, &root)?;
    let card_path = dir.join("review.txt");
    std::fs::write(&card_path, card)?;
    manifest.add_output(&card_path, &root)?;
    manifest.write(&dir.join("manifest.json"))?;
    log::info!("cohort: {} eligible subjects in {} groups", partition.eligible_count(), partition.groups.values().filter(|g| !g.is_empty()).count());
    Ok(())
}
