//! Additive log-ratio transform of CSV columns and its inverse.
//!
//! Forward: the component columns (plus `_other`, dropped from the output)
//! become log-ratio coordinates, in place and under the same names. Other
//! columns pass through. Inverse: the coordinates become parts again and
//! `_other` is appended.

use std::io::{Read, Write};

use cohortbayes_core::compositional::{alr, alr_inverse, standardize, zero_replace};

use crate::error::{CliError, CliResult};

pub const REMAINDER: &str = "_other";

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn read_table<R: Read>(reader: R) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(CliError::input)?.iter().map(str::to_string).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()).map_err(CliError::input))
        .collect::<CliResult<_>>()?;
    Ok(Table { header, rows })
}

pub fn write_table<W: Write>(writer: W, table: &Table) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(&table.header).map_err(CliError::runtime)?;
    for r in &table.rows {
        wtr.write_record(r).map_err(CliError::runtime)?;
    }
    wtr.flush().map_err(CliError::runtime)
}

fn column(table: &Table, name: &str) -> CliResult<usize> {
    table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::input(format!("missing column {name:?}")))
}

fn number(cell: &str, row: usize, col: &str) -> CliResult<f64> {
    cell.trim()
        .parse()
        .map_err(|_| CliError::input(format!("row {}, column {col}: not a number: {cell:?}", row + 2)))
}

#[derive(Debug, Clone)]
pub struct ForwardOptions<'a> {
    pub components: &'a [String],
    pub percent: bool,
    pub detection_half: f64,
    pub reference_column: Option<&'a str>,
}

/// Returns the transformed table and the per-component standard deviations
/// (all 1 without a reference column).
pub fn forward(table: &Table, opts: &ForwardOptions) -> CliResult<(Table, Vec<f64>)> {
    if opts.components.is_empty() {
        return Err(CliError::input("no components given"));
    }
    let idx: Vec<usize> = opts.components.iter().map(|c| column(table, c)).collect::<CliResult<_>>()?;
    let other = table.header.iter().position(|h| h == REMAINDER);
    let total = if opts.percent { 100.0 } else { 1.0 };
    let mut coords = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let mut parts: Vec<f64> = idx
            .iter()
            .zip(opts.components)
            .map(|(&i, name)| number(&row[i], r, name).map(|v| v / total))
            .collect::<CliResult<_>>()?;
        let rest = match other {
            Some(o) => number(&row[o], r, REMAINDER)? / total,
            None => (1.0 - parts.iter().sum::<f64>()).max(0.0),
        };
        parts.push(rest);
        let closed = zero_replace(&parts, opts.detection_half).map_err(|e| CliError::input(format!("row {}: {e}", r + 2)))?;
        coords.push(alr(&closed).map_err(|e| CliError::input(format!("row {}: {e}", r + 2)))?);
    }
    let sd = match opts.reference_column {
        Some(name) => {
            let c = column(table, name)?;
            let mut reference = Vec::new();
            for (r, row) in table.rows.iter().enumerate() {
                if number(&row[c], r, name)? != 0.0 {
                    reference.push(r);
                }
            }
            let s = standardize(&coords, &reference).map_err(CliError::input)?;
            coords = s.scaled;
            s.sd
        }
        None => vec![1.0; opts.components.len()],
    };
    let keep: Vec<usize> = (0..table.header.len()).filter(|&i| Some(i) != other).collect();
    let rows = table
        .rows
        .iter()
        .zip(&coords)
        .map(|(row, co)| {
            let mut out = row.clone();
            for (k, &i) in idx.iter().enumerate() {
                out[i] = co[k].to_string();
            }
            keep.iter().map(|&i| out[i].clone()).collect()
        })
        .collect();
    let header = keep.iter().map(|&i| table.header[i].clone()).collect();
    Ok((Table { header, rows }, sd))
}

/// Undoes [`forward`]: rescales by `sd`, inverts, and appends `_other`.
pub fn inverse(table: &Table, components: &[String], sd: &[f64], percent: bool) -> CliResult<Table> {
    if sd.len() != components.len() {
        return Err(CliError::input(format!("{} standard deviations for {} components", sd.len(), components.len())));
    }
    let idx: Vec<usize> = components.iter().map(|c| column(table, c)).collect::<CliResult<_>>()?;
    let total = if percent { 100.0 } else { 1.0 };
    let mut header = table.header.clone();
    header.push(REMAINDER.to_string());
    let mut rows = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let coords: Vec<f64> = idx
            .iter()
            .zip(components)
            .zip(sd)
            .map(|((&i, name), s)| number(&row[i], r, name).map(|v| v * s))
            .collect::<CliResult<_>>()?;
        let parts = alr_inverse(&coords).map_err(|e| CliError::input(format!("row {}: {e}", r + 2)))?;
        let mut out = row.clone();
        for (k, &i) in idx.iter().enumerate() {
            out[i] = (parts[k] * total).to_string();
        }
        out.push((parts[components.len()] * total).to_string());
        rows.push(out);
    }
    Ok(Table { header, rows })
}

pub fn write_sd<W: Write>(writer: W, components: &[String], sd: &[f64]) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["component", "sd"]).map_err(CliError::runtime)?;
    for (c, s) in components.iter().zip(sd) {
        wtr.write_record([c.as_str(), &s.to_string()]).map_err(CliError::runtime)?;
    }
    wtr.flush().map_err(CliError::runtime)
}

/// Reads a sidecar and orders it by `components`.
pub fn read_sd<R: Read>(reader: R, components: &[String]) -> CliResult<Vec<f64>> {
    let t = read_table(reader)?;
    let (c, s) = (column(&t, "component")?, column(&t, "sd")?);
    components
        .iter()
        .map(|name| {
            let (r, row) = t
                .rows
                .iter()
                .enumerate()
                .find(|(_, row)| &row[c] == name)
                .ok_or_else(|| CliError::input(format!("sd sidecar has no row for {name:?}")))?;
            number(&row[s], r, "sd")
        })
        .collect()
}
