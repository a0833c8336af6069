//! Chains as JSON lines: a header with the configuration, then one record
//! per iteration.

use std::io::{BufRead, Write};

use cohortbayes_core::samplers::{ChainConfig, ChainOutput};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHeader {
    pub chain: usize,
    pub seed: u64,
    pub acceptance_rate: f64,
    pub parameters: Vec<String>,
    pub config: ChainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub beta: Vec<f64>,
    pub accepted: bool,
    pub log_h: f64,
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: ChainHeader,
}

pub fn write_chain<W: Write>(mut out: W, chain: usize, parameters: &[String], output: &ChainOutput) -> CliResult<()> {
    let header = HeaderLine {
        header: ChainHeader {
            chain,
            seed: output.seed,
            acceptance_rate: output.acceptance_rate,
            parameters: parameters.to_vec(),
            config: output.config.clone(),
        },
    };
    serde_json::to_writer(&mut out, &header).map_err(CliError::runtime)?;
    out.write_all(b"\n").map_err(CliError::runtime)?;
    for (i, ((beta, &accepted), &log_h)) in output.draws.iter().zip(&output.accepted).zip(&output.log_h).enumerate() {
        let rec = IterationRecord {
            iter: i + 1,
            beta: beta.clone(),
            accepted,
            log_h,
        };
        serde_json::to_writer(&mut out, &rec).map_err(CliError::runtime)?;
        out.write_all(b"\n").map_err(CliError::runtime)?;
    }
    out.flush().map_err(CliError::runtime)
}

pub fn read_chain<R: BufRead>(input: R) -> CliResult<(ChainHeader, Vec<IterationRecord>)> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| CliError::input("empty chain file"))?
        .map_err(CliError::input)?;
    let header: HeaderLine = serde_json::from_str(&first).map_err(CliError::input)?;
    let records = lines
        .map(|l| {
            let l = l.map_err(CliError::input)?;
            serde_json::from_str(&l).map_err(CliError::input)
        })
        .collect::<CliResult<Vec<IterationRecord>>>()?;
    Ok((header.header, records))
}
