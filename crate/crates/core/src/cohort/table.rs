//! Subject table CSV.
//!
//! Header: `id,sex,age,height_cm,weight_kg,bmi,body_fat_pct,cancer,disease,
//! operation,image` followed by any number of label-path columns. Flags
//! accept 0/1, true/false or yes/no; empty label cells are skipped.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use super::{Exclusion, Sex, SubjectRecord};
use crate::error::{Error, Result};

const COLUMNS: [&str; 11] = ["id", "sex", "age", "height_cm", "weight_kg", "bmi", "body_fat_pct", "cancer", "disease", "operation", "image"];

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

fn flag(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" => Some(true),
        "0" | "false" | "no" | "n" | "" => Some(false),
        _ => None,
    }
}

pub fn read_subjects<R: Read>(input: R) -> Result<Vec<SubjectRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < COLUMNS.len() || header.iter().zip(COLUMNS).any(|(h, c)| h != c) {
        return Err(Error::Csv(format!("header must start with {}", COLUMNS.join(","))));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Csv(format!("row {line}: {e}")))?;
        let num = |c: usize| -> Result<f64> {
            row[c].parse::<f64>().map_err(|_| Error::Csv(format!("row {line}: column `{}` is not a number: `{}`", COLUMNS[c], &row[c])))
        };
        let boolean = |c: usize| -> Result<bool> { flag(&row[c]).ok_or_else(|| Error::Csv(format!("row {line}: column `{}` is not a flag: `{}`", COLUMNS[c], &row[c]))) };
        let sex = match row[1].to_ascii_lowercase().as_str() {
            "f" | "female" => Sex::Female,
            "m" | "male" => Sex::Male,
            other => return Err(Error::Csv(format!("row {line}: unknown sex `{other}`"))),
        };
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(Error::Csv(format!("row {line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Csv(format!("row {line}: duplicate id `{id}`")));
        }
        out.push(SubjectRecord {
            id,
            sex,
            age: num(2)?,
            height_cm: num(3)?,
            weight_kg: num(4)?,
            bmi: num(5)?,
            body_fat_pct: num(6)?,
            cancer: boolean(7)?,
            disease: boolean(8)?,
            operation: boolean(9)?,
            image: row[10].to_string(),
            labels: row.iter().skip(COLUMNS.len()).filter(|s| !s.is_empty()).map(str::to_string).collect(),
        });
    }
    Ok(out)
}

pub fn write_subjects<W: Write>(out: W, records: &[SubjectRecord]) -> Result<()> {
    let n_labels = records.iter().map(|r| r.labels.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new().flexible(false).from_writer(out);
    let mut header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..n_labels).map(|i| if i == 0 { "labels".to_string() } else { format!("labels_{}", i + 1) }));
    w.write_record(&header).map_err(csv_err)?;
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    for r in records {
        let mut row = vec![
            r.id.clone(),
            r.sex.to_string(),
            r.age.to_string(),
            r.height_cm.to_string(),
            r.weight_kg.to_string(),
            r.bmi.to_string(),
            r.body_fat_pct.to_string(),
            b(r.cancer),
            b(r.disease),
            b(r.operation),
            r.image.clone(),
        ];
        row.extend((0..n_labels).map(|i| r.labels.get(i).cloned().unwrap_or_default()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_exclusions<W: Write>(out: W, excluded: &[Exclusion]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "reason"]).map_err(csv_err)?;
    for e in excluded {
        w.write_record([e.id.as_str(), e.reason.to_string().as_str()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::tests::record;

    #[test]
    fn round_trip() {
        let mut a = record("s001", Sex::Female, 26.8);
        a.labels = vec!["s001_labels.nii.gz".into()];
        a.operation = true;
        let b = record("s002", Sex::Male, 33.6);
        let mut buf = Vec::new();
        write_subjects(&mut buf, &[a.clone(), b.clone()]).unwrap();
        let back = read_subjects(buf.as_slice()).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn schema_errors_name_the_row() {
        let head = "id,sex,age,height_cm,weight_kg,bmi,body_fat_pct,cancer,disease,operation,image\n";
        let good = "a,F,60,170,70,24.2,30,0,0,0,a.nii\n";
        let bad = "b,F,sixty,170,70,24.2,30,0,0,0,b.nii\n";
        let err = read_subjects(format!("{head}{good}{bad}").as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("age"), "{err}");
        let err = read_subjects(format!("{head}{good}{good}").as_bytes()).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
        assert!(read_subjects("id,sex\n".as_bytes()).is_err());
        let err = read_subjects(format!("{head}c,X,60,170,70,24.2,30,0,0,0,c.nii\n").as_bytes()).unwrap_err().to_string();
        assert!(err.contains("sex"), "{err}");
    }
}
