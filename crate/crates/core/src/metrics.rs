//! Per-client test accuracy and its two summaries: MacroAvg (mean of
//! client accuracies) and MicroAvg (pooled correct over pooled total).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::models::{correct_count, ModelSpec};
use crate::tensor::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientScore {
    pub client_id: usize,
    pub test_size: usize,
    pub correct: usize,
    /// Fraction in `[0, 1]`.
    pub accuracy: f64,
}

impl ClientScore {
    pub fn from_counts(client_id: usize, test_size: usize, correct: usize) -> Self {
        Self {
            client_id,
            test_size,
            correct,
            accuracy: correct as f64 / test_size as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_client: Vec<ClientScore>,
    pub macro_avg: f64,
    pub micro_avg: f64,
}

impl EvalReport {
    /// Summarise already-scored clients. MacroAvg averages the `accuracy`
    /// fields as given; MicroAvg pools the integer counts.
    pub fn from_scores(per_client: Vec<ClientScore>) -> Result<Self> {
        if per_client.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        let total: usize = per_client.iter().map(|c| c.test_size).sum();
        if total == 0 {
            return Err(Error::EmptyInput("test splits"));
        }
        let correct: usize = per_client.iter().map(|c| c.correct).sum();
        let macro_avg =
            per_client.iter().map(|c| c.accuracy).sum::<f64>() / per_client.len() as f64;
        Ok(Self {
            macro_avg,
            micro_avg: correct as f64 / total as f64,
            per_client,
        })
    }

    /// Table row: one percentage per client, then MacroAvg and MicroAvg,
    /// all with two decimals.
    pub fn table_row(&self, label: &str) -> String {
        let mut row = format!("{label:<18}");
        for c in &self.per_client {
            write!(row, " {:>8.2}", 100.0 * c.accuracy).unwrap();
        }
        write!(
            row,
            " {:>8.2} {:>8.2}",
            100.0 * self.macro_avg,
            100.0 * self.micro_avg
        )
        .unwrap();
        row
    }

    pub fn table_header(&self) -> String {
        let mut row = format!("{:<18}", "");
        for c in &self.per_client {
            write!(row, " {:>8}", format!("client{}", c.client_id)).unwrap();
        }
        write!(row, " {:>8} {:>8}", "MacroAvg", "MicroAvg").unwrap();
        row
    }

    pub fn to_table(&self, label: &str) -> String {
        format!("{}\n{}\n", self.table_header(), self.table_row(label))
    }
}

/// Test-split accuracy of `w` on every client.
pub fn evaluate_all(
    spec: &ModelSpec,
    w: &ParamVector,
    population: &[ClientDataset],
) -> Result<EvalReport> {
    if population.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let scores = population
        .iter()
        .map(|d| {
            Ok(ClientScore::from_counts(
                d.client_id,
                d.test.len(),
                correct_count(spec, w, &d.test)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_scores(scores)
}
