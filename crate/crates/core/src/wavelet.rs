//! Periodic orthogonal DWT and time-aligned multi-scale band assembly.
//!
//! Filters are applied by correlation with periodic extension:
//!
//! ```text
//! approx[i] = Σ_k lo[k] · x[(2i + k) mod n]
//! detail[i] = Σ_k hi[k] · x[(2i + k) mod n],   hi[k] = (-1)^k lo[L-1-k]
//! ```
//!
//! For an orthonormal basis this analysis operator is an orthogonal matrix,
//! so synthesis is its transpose and the reconstruction filters equal the
//! analysis filters.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::series::EconomicSeries;

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

const DB2: [f64; 4] = [
    0.482_962_913_144_534_143_37,
    0.836_516_303_737_807_905_58,
    0.224_143_868_042_013_381_03,
    -0.129_409_522_551_260_381_17,
];

const DB4: [f64; 8] = [
    0.230_377_813_308_896_500_86,
    0.714_846_570_552_915_647_09,
    0.630_880_767_929_858_907_88,
    -0.027_983_769_416_859_854_211,
    -0.187_034_811_719_093_084_08,
    0.030_841_381_835_560_763_627,
    0.032_883_011_666_885_199_735,
    -0.010_597_401_785_069_032_105,
];

const COIF1: [f64; 6] = [
    -0.015_655_728_135_791_992_526,
    -0.072_732_619_512_526_448_024,
    0.384_864_846_864_857_747_25,
    0.852_572_020_211_600_420_45,
    0.337_897_662_457_481_769_67,
    -0.072_732_619_512_526_448_024,
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WaveletError {
    #[error("signal length {0} is odd")]
    OddLength(usize),
    #[error("signal length {len} is shorter than the filter ({filter} taps)")]
    TooShortForFilter { len: usize, filter: usize },
    #[error("approximation ({approx}) and detail ({detail}) lengths differ")]
    LengthMismatch { approx: usize, detail: usize },
    #[error("depth {depth} too deep for length {len}: level-{depth} bands would be shorter than {filter} taps")]
    DepthTooDeep {
        depth: usize,
        len: usize,
        filter: usize,
    },
    #[error("length {len} is not divisible by 2^{depth}")]
    NotDyadic { len: usize, depth: usize },
    #[error("decomposition depth must be at least 1")]
    ZeroDepth,
    #[error("inconsistent bands: {0}")]
    InconsistentBands(&'static str),
    #[error("unknown wavelet basis {0:?}")]
    UnknownBasis(alloc::string::String),
    #[error("basis {basis} violates invariant: {what}")]
    InvalidFilter {
        basis: WaveletKind,
        what: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletKind {
    Haar,
    Db2,
    Db4,
    Coif1,
}

impl WaveletKind {
    pub const ALL: [WaveletKind; 4] = [Self::Haar, Self::Db2, Self::Db4, Self::Coif1];

    pub fn name(self) -> &'static str {
        match self {
            Self::Haar => "haar",
            Self::Db2 => "db2",
            Self::Db4 => "db4",
            Self::Coif1 => "coif1",
        }
    }

    pub fn filter_len(self) -> usize {
        match self {
            Self::Haar => 2,
            Self::Db2 => 4,
            Self::Db4 => 8,
            Self::Coif1 => 6,
        }
    }
}

impl fmt::Display for WaveletKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for WaveletKind {
    type Err = WaveletError;

    fn from_str(s: &str) -> Result<Self, WaveletError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| WaveletError::UnknownBasis(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBasis {
    pub kind: WaveletKind,
    pub decomposition_low: Vec<f64>,
    pub decomposition_high: Vec<f64>,
    pub reconstruction_low: Vec<f64>,
    pub reconstruction_high: Vec<f64>,
}

impl WaveletBasis {
    pub fn new(kind: WaveletKind) -> Self {
        let lo: Vec<f64> = match kind {
            WaveletKind::Haar => vec![FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            WaveletKind::Db2 => DB2.to_vec(),
            WaveletKind::Db4 => DB4.to_vec(),
            WaveletKind::Coif1 => COIF1.to_vec(),
        };
        let len = lo.len();
        let hi: Vec<f64> = (0..len)
            .map(|k| if k % 2 == 0 { lo[len - 1 - k] } else { -lo[len - 1 - k] })
            .collect();
        Self {
            kind,
            reconstruction_low: lo.clone(),
            reconstruction_high: hi.clone(),
            decomposition_low: lo,
            decomposition_high: hi,
        }
    }

    pub fn filter_len(&self) -> usize {
        self.decomposition_low.len()
    }

    /// Checks the orthonormal filter-bank conditions: low-pass sums to √2,
    /// high-pass sums to 0, unit norm, and orthogonality to even shifts.
    pub fn check_invariants(&self) -> Result<(), WaveletError> {
        const TOL: f64 = 1e-10;
        let fail = |what| {
            Err(WaveletError::InvalidFilter {
                basis: self.kind,
                what,
            })
        };
        let lo = &self.decomposition_low;
        let hi = &self.decomposition_high;
        if (lo.iter().sum::<f64>() - core::f64::consts::SQRT_2).abs() > TOL {
            return fail("low-pass sum != sqrt(2)");
        }
        if hi.iter().sum::<f64>().abs() > TOL {
            return fail("high-pass sum != 0");
        }
        for f in [lo, hi] {
            if (f.iter().map(|c| c * c).sum::<f64>() - 1.0).abs() > TOL {
                return fail("filter norm != 1");
            }
        }
        for shift in (2..lo.len()).step_by(2) {
            let lag: f64 = (0..lo.len() - shift).map(|k| lo[k] * lo[k + shift]).sum();
            if lag.abs() > TOL {
                return fail("low-pass not orthogonal to even shifts");
            }
        }
        if self.reconstruction_low != *lo || self.reconstruction_high != *hi {
            return fail("reconstruction filters differ from analysis filters");
        }
        Ok(())
    }
}

/// One analysis step: length-n signal → (approx, detail), each n/2 long.
pub fn dwt_level(signal: &[f64], basis: &WaveletBasis) -> Result<(Vec<f64>, Vec<f64>), WaveletError> {
    let n = signal.len();
    if n % 2 != 0 {
        return Err(WaveletError::OddLength(n));
    }
    if n < basis.filter_len() {
        return Err(WaveletError::TooShortForFilter {
            len: n,
            filter: basis.filter_len(),
        });
    }
    let mut approx = vec![0.0; n / 2];
    let mut detail = vec![0.0; n / 2];
    analysis_step(signal, basis, &mut approx, &mut detail);
    Ok((approx, detail))
}

fn analysis_step(signal: &[f64], basis: &WaveletBasis, approx: &mut [f64], detail: &mut [f64]) {
    let n = signal.len();
    let lo = &basis.decomposition_low;
    let hi = &basis.decomposition_high;
    for i in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..lo.len() {
            let x = signal[(2 * i + k) % n];
            a += lo[k] * x;
            d += hi[k] * x;
        }
        approx[i] = a;
        detail[i] = d;
    }
}

/// Exact inverse of [`dwt_level`] under the same periodic convention.
pub fn idwt_level(approx: &[f64], detail: &[f64], basis: &WaveletBasis) -> Result<Vec<f64>, WaveletError> {
    if approx.len() != detail.len() {
        return Err(WaveletError::LengthMismatch {
            approx: approx.len(),
            detail: detail.len(),
        });
    }
    let n = 2 * approx.len();
    if n < basis.filter_len() {
        return Err(WaveletError::TooShortForFilter {
            len: n,
            filter: basis.filter_len(),
        });
    }
    let lo = &basis.reconstruction_low;
    let hi = &basis.reconstruction_high;
    let mut out = vec![0.0; n];
    for (i, (&a, &d)) in approx.iter().zip(detail).enumerate() {
        for k in 0..lo.len() {
            out[(2 * i + k) % n] += lo[k] * a + hi[k] * d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Approximation,
    Detail,
}

/// `A^(j)` or `D^(j)` for every channel: a (T/2^j)×d matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBand {
    pub kind: BandKind,
    pub level: usize,
    pub values: Matrix,
}

/// Checks that a length-`len` signal supports `depth` levels with `basis`.
pub fn check_depth(len: usize, depth: usize, basis: &WaveletBasis) -> Result<(), WaveletError> {
    if depth == 0 {
        return Err(WaveletError::ZeroDepth);
    }
    if depth >= usize::BITS as usize || len % (1usize << depth) != 0 {
        return Err(WaveletError::NotDyadic { len, depth });
    }
    if len >> depth < basis.filter_len() {
        return Err(WaveletError::DepthTooDeep {
            depth,
            len,
            filter: basis.filter_len(),
        });
    }
    Ok(())
}

/// Per-channel `depth`-level decomposition. Returns `[A1, D1, A2, D2, …]`,
/// each level computed from the previous approximation.
pub fn decompose(
    series: &EconomicSeries,
    basis: &WaveletBasis,
    depth: usize,
) -> Result<Vec<WaveletBand>, WaveletError> {
    decompose_matrix(series.values(), basis, depth)
}

pub fn decompose_matrix(values: &Matrix, basis: &WaveletBasis, depth: usize) -> Result<Vec<WaveletBand>, WaveletError> {
    let (len, dim) = (values.rows(), values.cols());
    check_depth(len, depth, basis)?;
    let mut bands: Vec<WaveletBand> = Vec::with_capacity(2 * depth);
    let mut current: Vec<Vec<f64>> = (0..dim).map(|c| values.column(c)).collect();
    for level in 1..=depth {
        let half = len >> level;
        let mut approx = Matrix::zeros(half, dim);
        let mut detail = Matrix::zeros(half, dim);
        let mut next = Vec::with_capacity(dim);
        for (c, signal) in current.iter().enumerate() {
            let mut a = vec![0.0; half];
            let mut d = vec![0.0; half];
            analysis_step(signal, basis, &mut a, &mut d);
            approx.set_column(c, &a);
            detail.set_column(c, &d);
            next.push(a);
        }
        bands.push(WaveletBand {
            kind: BandKind::Approximation,
            level,
            values: approx,
        });
        bands.push(WaveletBand {
            kind: BandKind::Detail,
            level,
            values: detail,
        });
        current = next;
    }
    Ok(bands)
}

/// Rebuilds the signal from the deepest approximation and every detail band.
pub fn reconstruct(bands: &[WaveletBand], basis: &WaveletBasis) -> Result<Matrix, WaveletError> {
    let depth = validate_bands(bands)?;
    let deepest = &bands[2 * (depth - 1)].values;
    let dim = deepest.cols();
    let mut current: Vec<Vec<f64>> = (0..dim).map(|c| deepest.column(c)).collect();
    for level in (1..=depth).rev() {
        let detail = &bands[2 * (level - 1) + 1].values;
        current = current
            .iter()
            .enumerate()
            .map(|(c, a)| idwt_level(a, &detail.column(c), basis))
            .collect::<Result<_, _>>()?;
    }
    let len = current.first().map_or(0, Vec::len);
    let mut out = Matrix::zeros(len, dim);
    for (c, col) in current.iter().enumerate() {
        out.set_column(c, col);
    }
    Ok(out)
}

/// Checks `[A1, D1, …, Ak, Dk]` ordering and halving lengths; returns k.
fn validate_bands(bands: &[WaveletBand]) -> Result<usize, WaveletError> {
    if bands.is_empty() || bands.len() % 2 != 0 {
        return Err(WaveletError::InconsistentBands("expected 2k bands"));
    }
    let depth = bands.len() / 2;
    let dim = bands[0].values.cols();
    let base = bands[0].values.rows() * 2;
    for (i, band) in bands.iter().enumerate() {
        let level = i / 2 + 1;
        let kind = if i % 2 == 0 {
            BandKind::Approximation
        } else {
            BandKind::Detail
        };
        if band.level != level || band.kind != kind {
            return Err(WaveletError::InconsistentBands("bands out of order"));
        }
        if band.values.cols() != dim {
            return Err(WaveletError::InconsistentBands("channel counts differ"));
        }
        if band.values.rows() << level != base {
            return Err(WaveletError::InconsistentBands("band lengths do not halve per level"));
        }
    }
    Ok(depth)
}

/// Origin of one multi-scale column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandColumn {
    pub channel: usize,
    pub kind: BandKind,
    pub level: usize,
}

/// T×(2kd) time-aligned concatenation of all bands.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleTensor {
    pub values: Matrix,
    pub band_index: Vec<BandColumn>,
    pub depth: usize,
}

impl MultiScaleTensor {
    /// Wraps an arbitrary T×d′ matrix, e.g. for exercising attention in
    /// isolation. The band index is synthesised as if d′ = 2k·d.
    pub fn from_matrix(values: Matrix, depth: usize) -> Self {
        let band_index = (0..values.cols())
            .map(|c| column_provenance(c, depth.max(1)))
            .collect();
        Self {
            values,
            band_index,
            depth,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    /// Column index of a band, the inverse of `band_index`.
    pub fn column_of(&self, channel: usize, kind: BandKind, level: usize) -> usize {
        channel * 2 * self.depth
            + 2 * (level - 1)
            + match kind {
                BandKind::Approximation => 0,
                BandKind::Detail => 1,
            }
    }
}

fn column_provenance(col: usize, depth: usize) -> BandColumn {
    let within = col % (2 * depth);
    BandColumn {
        channel: col / (2 * depth),
        kind: if within % 2 == 0 {
            BandKind::Approximation
        } else {
            BandKind::Detail
        },
        level: within / 2 + 1,
    }
}

/// Hold-upsamples every band to `target_length` (each level-j coefficient
/// repeated 2^j times) and concatenates along the feature axis. Columns
/// are ordered channel-major, then level ascending, approximation first.
pub fn assemble(bands: &[WaveletBand], target_length: usize) -> Result<MultiScaleTensor, WaveletError> {
    let depth = validate_bands(bands)?;
    let dim = bands[0].values.cols();
    if bands[0].values.rows() * 2 != target_length {
        return Err(WaveletError::InconsistentBands("bands do not match target length"));
    }
    let width = 2 * depth * dim;
    let mut values = Matrix::zeros(target_length, width);
    for (b, band) in bands.iter().enumerate() {
        let hold = 1usize << band.level;
        for c in 0..dim {
            let col = c * 2 * depth + b;
            for t in 0..target_length {
                values[(t, col)] = band.values[(t / hold, c)];
            }
        }
    }
    let band_index = (0..width).map(|c| column_provenance(c, depth)).collect();
    Ok(MultiScaleTensor {
        values,
        band_index,
        depth,
    })
}

/// `decompose` followed by `assemble` on a raw T×d window.
pub fn encode(values: &Matrix, basis: &WaveletBasis, depth: usize) -> Result<MultiScaleTensor, WaveletError> {
    let bands = decompose_matrix(values, basis, depth)?;
    assemble(&bands, values.rows())
}
