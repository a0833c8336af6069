//! Cohort CSV files.
//!
//! Columns: `time,event,selected[,subcohort],z*,w*,x*`. Covariate columns are
//! recognized by their first letter and keep their header names. A missing
//! expensive covariate is an empty cell. Without a `subcohort` column,
//! selected non-cases are taken as the subcohort.

use std::io::{Read, Write};

use cohortbayes_core::{CohortData, SubjectRecord};

use crate::error::{CliError, CliResult};

/// Header names of the three covariate blocks, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CovariateNames {
    pub z: Vec<String>,
    pub w: Vec<String>,
    pub x: Vec<String>,
}

impl CovariateNames {
    pub fn numbered(d_z: usize, d_w: usize, d_x: usize) -> Self {
        let names = |p: &str, d: usize| (1..=d).map(|k| format!("{p}{k}")).collect();
        Self {
            z: names("z", d_z),
            w: names("w", d_w),
            x: names("x", d_x),
        }
    }

    /// Names of the flattened `beta = (beta1, beta2)`.
    pub fn beta(&self) -> impl Iterator<Item = (&'static str, &str)> {
        self.z
            .iter()
            .map(|n| ("z", n.as_str()))
            .chain(self.w.iter().map(|n| ("w", n.as_str())))
    }
}

#[derive(Debug, Clone)]
pub struct CohortFile {
    pub cohort: CohortData,
    pub names: CovariateNames,
}

#[derive(Clone, Copy)]
enum Column {
    Time,
    Event,
    Selected,
    Subcohort,
    Z(usize),
    W(usize),
    X(usize),
}

fn parse_flag(cell: &str, row: usize, col: &str) -> CliResult<bool> {
    match cell.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        other => Err(CliError::input(format!("row {row}, column {col}: expected 0/1, got {other:?}"))),
    }
}

fn parse_real(cell: &str, row: usize, col: &str) -> CliResult<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| CliError::input(format!("row {row}, column {col}: not a number: {cell:?}")))
}

pub fn read_cohort<R: Read>(reader: R) -> CliResult<CohortFile> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(CliError::input)?.clone();
    let mut names = CovariateNames::default();
    let mut columns = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let col = match h.trim() {
            "time" => Column::Time,
            "event" => Column::Event,
            "selected" => Column::Selected,
            "subcohort" => Column::Subcohort,
            n if n.starts_with('z') => {
                names.z.push(n.to_string());
                Column::Z(names.z.len() - 1)
            }
            n if n.starts_with('w') => {
                names.w.push(n.to_string());
                Column::W(names.w.len() - 1)
            }
            n if n.starts_with('x') => {
                names.x.push(n.to_string());
                Column::X(names.x.len() - 1)
            }
            other => return Err(CliError::input(format!("unrecognized column {other:?}"))),
        };
        columns.push(col);
    }
    for required in ["time", "event", "selected"] {
        if !headers.iter().any(|h| h.trim() == required) {
            return Err(CliError::input(format!("missing column {required:?}")));
        }
    }
    if names.z.is_empty() {
        return Err(CliError::input("no expensive covariate (z*) columns"));
    }
    let has_subcohort = headers.iter().any(|h| h.trim() == "subcohort");

    let mut records = Vec::new();
    for (r, row) in rdr.records().enumerate() {
        let row = row.map_err(CliError::input)?;
        let line = r + 2;
        let (mut time, mut event, mut selected, mut subcohort) = (f64::NAN, false, false, false);
        let mut z = vec![None; names.z.len()];
        let mut w = vec![0.0; names.w.len()];
        let mut x = vec![0.0; names.x.len()];
        for ((cell, col), name) in row.iter().zip(&columns).zip(headers.iter()) {
            match *col {
                Column::Time => time = parse_real(cell, line, name)?,
                Column::Event => event = parse_flag(cell, line, name)?,
                Column::Selected => selected = parse_flag(cell, line, name)?,
                Column::Subcohort => subcohort = parse_flag(cell, line, name)?,
                Column::Z(k) if cell.trim().is_empty() => z[k] = None,
                Column::Z(k) => z[k] = Some(parse_real(cell, line, name)?),
                Column::W(k) => w[k] = parse_real(cell, line, name)?,
                Column::X(k) => x[k] = parse_real(cell, line, name)?,
            }
        }
        let present = z.iter().filter(|v| v.is_some()).count();
        let z = match (selected, present) {
            (true, n) if n == z.len() => Some(z.into_iter().flatten().collect()),
            (false, 0) => None,
            (true, _) => return Err(CliError::input(format!("row {line}: selected subject with empty z cells"))),
            (false, _) => return Err(CliError::input(format!("row {line}: unselected subject with z values"))),
        };
        let rec = SubjectRecord::new(time, event, z, w, x);
        records.push(if has_subcohort { rec.with_subcohort(subcohort) } else { rec });
    }
    let cohort = CohortData::new(records).map_err(CliError::input)?;
    Ok(CohortFile { cohort, names })
}

pub fn read_cohort_path(path: &std::path::Path) -> CliResult<CohortFile> {
    let file = std::fs::File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    read_cohort(std::io::BufReader::new(file))
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Writes every record; floats use the shortest representation that reads
/// back to the same value.
pub fn write_cohort<W: Write>(writer: W, cohort: &CohortData, names: &CovariateNames) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["time", "event", "selected", "subcohort"];
    header.extend(names.z.iter().map(String::as_str));
    header.extend(names.w.iter().map(String::as_str));
    header.extend(names.x.iter().map(String::as_str));
    wtr.write_record(&header).map_err(CliError::runtime)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for r in cohort.records() {
        row.clear();
        row.push(r.time.to_string());
        row.push(flag(r.event).into());
        row.push(flag(r.selected).into());
        row.push(flag(r.subcohort).into());
        match &r.z {
            Some(z) => row.extend(z.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat(String::new()).take(names.z.len())),
        }
        row.extend(r.w.iter().map(f64::to_string));
        row.extend(r.x.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(CliError::runtime)?;
    }
    wtr.flush().map_err(CliError::runtime)?;
    Ok(())
}
