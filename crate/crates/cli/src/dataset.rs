//! Panel CSV files: `household_id,t,<channels...>,fraud_label`, one row per
//! household and day, households in contiguous blocks with consecutive `t`.

use std::io::{Read, Write};

use thiserror::Error;
use wavefis_core::datagen::{HouseholdPanel, CHANNELS};
use wavefis_core::matrix::Matrix;
use wavefis_core::metrics::BalanceHistory;
use wavefis_core::series::{self, EconomicSeries, SeriesError, WindowGroup, WindowSpec};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must start with household_id,t and end with fraud_label, with at least one channel between")]
    BadHeader,
    #[error("line {line}: {message}")]
    BadRow { line: u64, message: String },
    #[error("dataset has no rows")]
    Empty,
    #[error("household {household}: {source}")]
    Series {
        household: u64,
        #[source]
        source: SeriesError,
    },
    #[error("dataset channels {found:?} do not match the model's {expected:?}")]
    ChannelMismatch { expected: Vec<String>, found: Vec<String> },
}

/// One household's raw history.
#[derive(Debug, Clone, PartialEq)]
pub struct Household {
    pub id: u64,
    pub series: EconomicSeries,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub channels: Vec<String>,
    pub households: Vec<Household>,
}

struct Block {
    id: u64,
    start: i64,
    values: Vec<f64>,
    labels: Vec<u8>,
}

fn row_error(line: u64, message: impl Into<String>) -> DataError {
    DataError::BadRow {
        line,
        message: message.into(),
    }
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, line: u64, what: &str) -> Result<T, DataError> {
    let raw = record.get(i).ok_or_else(|| row_error(line, format!("missing {what}")))?;
    raw.trim()
        .parse()
        .map_err(|_| row_error(line, format!("{what} {raw:?} is not valid")))
}

impl Dataset {
    pub fn read<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let n = header.len();
        if n < 4 || header[0] != "household_id" || header[1] != "t" || header[n - 1] != "fraud_label" {
            return Err(DataError::BadHeader);
        }
        let channels = header[2..n - 1].to_vec();
        let dim = channels.len();

        let mut blocks: Vec<Block> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let id: u64 = parse_field(&record, 0, line, "household_id")?;
            let t: i64 = parse_field(&record, 1, line, "t")?;
            let mut values = Vec::with_capacity(dim);
            for c in 0..dim {
                let v: f64 = parse_field(&record, 2 + c, line, &channels[c])?;
                if !v.is_finite() {
                    return Err(row_error(line, format!("{} is not finite", channels[c])));
                }
                values.push(v);
            }
            let label: u8 = parse_field(&record, n - 1, line, "fraud_label")?;
            if label > 1 {
                return Err(row_error(line, "fraud_label must be 0 or 1"));
            }
            match blocks.last_mut() {
                Some(b) if b.id == id => {
                    let expected = b.start + b.labels.len() as i64;
                    if t != expected {
                        return Err(row_error(line, format!("household {id}: expected t = {expected}, found {t}")));
                    }
                    b.values.extend(values);
                    b.labels.push(label);
                }
                _ => {
                    if blocks.iter().any(|b| b.id == id) {
                        return Err(row_error(line, format!("household {id} appears in more than one block")));
                    }
                    blocks.push(Block {
                        id,
                        start: t,
                        values,
                        labels: vec![label],
                    });
                }
            }
        }
        if blocks.is_empty() {
            return Err(DataError::Empty);
        }
        let names = series::names(&channels);
        let households = blocks
            .into_iter()
            .map(|b| {
                let rows = b.labels.len();
                let values = Matrix::from_vec(rows, dim, b.values).expect("rows × dim values");
                let series = EconomicSeries::new(values, names.clone(), b.start, "1d")
                    .map_err(|source| DataError::Series { household: b.id, source })?;
                Ok(Household {
                    id: b.id,
                    series,
                    labels: b.labels,
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(Self { channels, households })
    }

    pub fn from_panels(panels: &[HouseholdPanel]) -> Result<Self, DataError> {
        let households = panels
            .iter()
            .map(|p| {
                Ok(Household {
                    id: p.household_id,
                    series: p
                        .to_series()
                        .map_err(|source| DataError::Series { household: p.household_id, source })?,
                    labels: p.fraud_alert.clone(),
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(Self {
            channels: CHANNELS.iter().map(|c| c.to_string()).collect(),
            households,
        })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["household_id".to_string(), "t".to_string()];
        header.extend(self.channels.iter().cloned());
        header.push("fraud_label".into());
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for h in &self.households {
            for i in 0..h.series.len() {
                row.clear();
                row.push(h.id.to_string());
                row.push((h.series.start_index() + i as i64).to_string());
                row.extend(h.series.values().row(i).iter().map(|v| v.to_string()));
                row.push(h.labels[i].to_string());
                w.write_record(&row)?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn check_channels(&self, expected: &[String]) -> Result<(), DataError> {
        if self.channels != expected {
            return Err(DataError::ChannelMismatch {
                expected: expected.to_vec(),
                found: self.channels.clone(),
            });
        }
        Ok(())
    }

    /// Standardizes each household on its own history and cuts windows.
    /// Households too short for one window are skipped.
    pub fn windows(&self, spec: &WindowSpec) -> Result<Vec<WindowGroup>, DataError> {
        let mut groups = Vec::with_capacity(self.households.len());
        for h in &self.households {
            if h.series.len() < spec.window + spec.horizon {
                continue;
            }
            let (standardized, _) = series::standardize(&h.series);
            let windows = series::make_windows(&standardized, Some(&h.labels), spec)
                .map_err(|source| DataError::Series { household: h.id, source })?;
            groups.push(WindowGroup { id: h.id, windows });
        }
        Ok(groups)
    }

    /// Raw balance columns for the debt-acceleration sweep, if the dataset
    /// has a `revolving_balance` channel.
    pub fn balances(&self) -> Option<Vec<(u64, i64, Vec<f64>)>> {
        let c = self.channels.iter().position(|c| c == "revolving_balance")?;
        Some(
            self.households
                .iter()
                .map(|h| (h.id, h.series.start_index(), h.series.channel(c)))
                .collect(),
        )
    }
}

/// Borrowed views over [`Dataset::balances`].
pub fn balance_histories(balances: &[(u64, i64, Vec<f64>)]) -> Vec<BalanceHistory<'_>> {
    balances
        .iter()
        .map(|(id, start, b)| BalanceHistory {
            household_id: *id,
            start_day: *start,
            balance: b,
        })
        .collect()
}
