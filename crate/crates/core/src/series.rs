//! Multivariate economic time series, standardization and supervised windows.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("series too short: T = {0}, need at least 2 steps")]
    TooShort(usize),
    #[error("duplicate channel name {0:?}")]
    DuplicateChannel(String),
    #[error("window {window} + horizon {horizon} exceeds series length {len}")]
    WindowTooLong {
        window: usize,
        horizon: usize,
        len: usize,
    },
    #[error("window length {window} is not a multiple of 2^{depth}")]
    WindowNotDyadic { window: usize, depth: usize },
    #[error("horizon must be at least {min} for this target, got {horizon}")]
    HorizonTooShort { horizon: usize, min: usize },
    #[error("unknown channel index {0}")]
    UnknownChannel(usize),
    #[error("classification windows need a fraud label per time step")]
    MissingLabels,
    #[error("label at step {0} is not 0 or 1")]
    InvalidLabel(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl core::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(alloc::format!("unknown task {other:?}")),
        }
    }
}

/// T×d matrix of channel values plus channel metadata.
///
/// Channel names and the step label are reference counted so that the many
/// windows cut from one series share them.
#[derive(Debug, Clone, PartialEq)]
pub struct EconomicSeries {
    values: Matrix,
    channels: Arc<[String]>,
    start_index: i64,
    step: Arc<str>,
}

impl EconomicSeries {
    pub fn new(
        values: Matrix,
        channels: Arc<[String]>,
        start_index: i64,
        step: &str,
    ) -> Result<Self, SeriesError> {
        let (len, dim) = (values.rows(), values.cols());
        if len < 2 {
            return Err(SeriesError::TooShort(len));
        }
        if dim == 0 || channels.len() != dim {
            return Err(SeriesError::DimensionMismatch {
                expected: dim.max(1),
                found: channels.len(),
            });
        }
        for (i, name) in channels.iter().enumerate() {
            if channels[..i].contains(name) {
                return Err(SeriesError::DuplicateChannel(name.clone()));
            }
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self {
            values,
            channels,
            start_index,
            step: Arc::from(step),
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn shared_channels(&self) -> Arc<[String]> {
        Arc::clone(&self.channels)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn start_index(&self) -> i64 {
        self.start_index
    }

    pub fn step(&self) -> &str {
        &self.step
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.values.column(c)
    }

    /// Rows `[offset, offset + len)` as a new series sharing metadata.
    /// Lengths below 2 are allowed here; windows are validated by their
    /// producer.
    fn slice(&self, offset: usize, len: usize) -> Self {
        let dim = self.dim();
        let data = self.values.as_slice()[offset * dim..(offset + len) * dim].to_vec();
        Self {
            values: Matrix::from_vec(len, dim, data).expect("slice shape"),
            channels: Arc::clone(&self.channels),
            start_index: self.start_index + offset as i64,
            step: Arc::clone(&self.step),
        }
    }
}

/// Validates a raw T×d matrix with channel names. Never repairs data.
pub fn validate_series(raw: Matrix, names: Vec<String>) -> Result<EconomicSeries, SeriesError> {
    EconomicSeries::new(raw, names.into(), 0, "1d")
}

/// Per-channel affine map recorded by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Standardization {
    pub fn apply(&self, series: &EconomicSeries) -> EconomicSeries {
        self.map(series, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, series: &EconomicSeries) -> EconomicSeries {
        self.map(series, |v, m, s| v * s + m)
    }

    fn map(&self, series: &EconomicSeries, f: impl Fn(f64, f64, f64) -> f64) -> EconomicSeries {
        let values = Matrix::from_fn(series.len(), series.dim(), |r, c| {
            f(series.values[(r, c)], self.mean[c], self.scale[c])
        });
        EconomicSeries {
            values,
            ..series.clone()
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator n − 1); zero for n < 2.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (xs.len() - 1) as f64)
}

/// Shifts every channel to mean 0 and scales to sample sd 1. Constant
/// channels become all zeros with scale 1.
pub fn standardize(series: &EconomicSeries) -> (EconomicSeries, Standardization) {
    let dim = series.dim();
    let mut record = Standardization {
        mean: Vec::with_capacity(dim),
        scale: Vec::with_capacity(dim),
        constant: Vec::with_capacity(dim),
    };
    for c in 0..dim {
        let col = series.channel(c);
        let m = mean(&col);
        let sd = sample_std(&col);
        let constant = sd <= 1e-12 * (1.0 + m.abs());
        record.mean.push(m);
        record.scale.push(if constant { 1.0 } else { sd });
        record.constant.push(constant);
    }
    let mut out = record.apply(series);
    for (c, &is_const) in record.constant.iter().enumerate() {
        if is_const {
            out.values.set_column(c, &alloc::vec![0.0; series.len()]);
        }
    }
    (out, record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionTarget {
    /// Target channel value at the last horizon step.
    Level,
    /// Sample standard deviation of the target channel over the horizon.
    Volatility,
}

impl core::str::FromStr for RegressionTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "level" => Ok(Self::Level),
            "volatility" => Ok(Self::Volatility),
            other => Err(alloc::format!("unknown regression target {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window: usize,
    pub horizon: usize,
    /// Wavelet decomposition depth the windows must be compatible with.
    pub depth: usize,
    pub task: Task,
    pub target_channel: usize,
    pub regression_target: RegressionTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedWindow {
    pub input: EconomicSeries,
    /// Regression value, or exactly 0.0 / 1.0 for classification.
    pub target: f64,
}

impl SupervisedWindow {
    /// Absolute index of the last input step.
    pub fn end_index(&self) -> i64 {
        self.input.start_index() + self.input.len() as i64 - 1
    }
}

/// Windows cut from one entity (e.g. a household).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowGroup {
    pub id: u64,
    pub windows: Vec<SupervisedWindow>,
}

/// Checks the window/horizon/depth combination against a series length.
pub fn check_window(len: usize, window: usize, horizon: usize, depth: usize) -> Result<(), SeriesError> {
    if window == 0 || window % (1usize << depth) != 0 {
        return Err(SeriesError::WindowNotDyadic { window, depth });
    }
    if window + horizon > len {
        return Err(SeriesError::WindowTooLong {
            window,
            horizon,
            len,
        });
    }
    Ok(())
}

/// Stride-1 sliding windows. `labels` (one 0/1 per step) is required for
/// classification and ignored otherwise.
pub fn make_windows(
    series: &EconomicSeries,
    labels: Option<&[u8]>,
    spec: &WindowSpec,
) -> Result<Vec<SupervisedWindow>, SeriesError> {
    let len = series.len();
    if spec.horizon == 0 {
        return Err(SeriesError::HorizonTooShort {
            horizon: 0,
            min: 1,
        });
    }
    check_window(len, spec.window, spec.horizon, spec.depth)?;
    if spec.target_channel >= series.dim() {
        return Err(SeriesError::UnknownChannel(spec.target_channel));
    }
    let labels = match spec.task {
        Task::Classification => {
            let labels = labels.ok_or(SeriesError::MissingLabels)?;
            if labels.len() != len {
                return Err(SeriesError::DimensionMismatch {
                    expected: len,
                    found: labels.len(),
                });
            }
            if let Some(i) = labels.iter().position(|&l| l > 1) {
                return Err(SeriesError::InvalidLabel(i));
            }
            Some(labels)
        }
        Task::Regression => {
            if spec.regression_target == RegressionTarget::Volatility && spec.horizon < 2 {
                return Err(SeriesError::HorizonTooShort {
                    horizon: spec.horizon,
                    min: 2,
                });
            }
            None
        }
    };
    let target_col = series.channel(spec.target_channel);
    let count = len - spec.window - spec.horizon + 1;
    let windows = (0..count)
        .map(|offset| {
            let ahead = offset + spec.window..offset + spec.window + spec.horizon;
            let target = match (spec.task, labels) {
                (Task::Classification, Some(labels)) => {
                    f64::from(labels[ahead].iter().copied().max().unwrap_or(0))
                }
                _ => match spec.regression_target {
                    RegressionTarget::Level => target_col[ahead.end - 1],
                    RegressionTarget::Volatility => sample_std(&target_col[ahead]),
                },
            };
            SupervisedWindow {
                input: series.slice(offset, spec.window),
                target,
            }
        })
        .collect();
    Ok(windows)
}

/// Shared channel-name list for [`EconomicSeries::new`].
pub fn names<S: AsRef<str>>(list: &[S]) -> Arc<[String]> {
    list.iter().map(|s| s.as_ref().to_string()).collect::<Vec<_>>().into()
}
