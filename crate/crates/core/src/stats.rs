//! Correlation, precision and precision-derived distances.

use std::cmp::Ordering;
use std::fmt;
use std::io::Write;

use nalgebra::DMatrix;
use thiserror::Error;

/// Precision entries smaller than this are treated as "no dependency".
pub const ZERO_PRECISION: f64 = 1e-12;
/// Largest condition number accepted before escalating the ridge.
pub const MAX_CONDITION: f64 = 1e12;
/// First ridge tried when the requested one is not enough.
pub const RIDGE_START: f64 = 1e-10;
/// Last ridge tried before giving up.
pub const RIDGE_LIMIT: f64 = 1e-2;
/// Required accuracy of `precision * (sigma + ridge * I)` against identity.
pub const INVERSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("at least 2 samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix is singular even with ridge {ridge:e}")]
    SingularEvenWithRidge { ridge: f64 },
    #[error("ridge must be finite and non-negative, got {0}")]
    BadRidge(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub matrix: DMatrix<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionMatrix {
    pub matrix: DMatrix<f64>,
    /// Ridge actually added to the diagonal before inversion.
    pub ridge: f64,
}

/// Sample covariance `Xc' Xc / (T - 1)` of the column-centered data. On
/// standard-scaled input this is the correlation matrix.
pub fn correlation(x: &DMatrix<f64>) -> Result<CorrelationMatrix, StatsError> {
    let n = x.nrows();
    if n < 2 {
        return Err(StatsError::TooFewSamples(n));
    }
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let sigma = centered.tr_mul(&centered) / (n - 1) as f64;
    let matrix = (&sigma + sigma.transpose()) * 0.5;
    Ok(CorrelationMatrix { matrix, samples: n })
}

/// Inverts `sigma + ridge * I`. If that is too ill-conditioned the ridge is
/// escalated tenfold from [`RIDGE_START`] up to [`RIDGE_LIMIT`].
pub fn precision(sigma: &CorrelationMatrix, ridge: f64) -> Result<PrecisionMatrix, StatsError> {
    let m = &sigma.matrix;
    if !m.is_square() {
        return Err(StatsError::NotSquare(m.nrows(), m.ncols()));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(StatsError::BadRidge(ridge));
    }
    let k = m.nrows();
    let mut lambda = ridge;
    loop {
        let regularized = m + DMatrix::identity(k, k) * lambda;
        if let Some(matrix) = stable_inverse(&regularized) {
            return Ok(PrecisionMatrix {
                matrix,
                ridge: lambda,
            });
        }
        if lambda >= RIDGE_LIMIT {
            return Err(StatsError::SingularEvenWithRidge { ridge: lambda });
        }
        lambda = if lambda < RIDGE_START {
            RIDGE_START
        } else {
            (lambda * 10.0).min(RIDGE_LIMIT)
        };
    }
}

fn stable_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let k = m.nrows();
    if k == 0 {
        return Some(m.clone());
    }
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let eig = m.clone().symmetric_eigenvalues();
    let largest = eig.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
    let smallest = eig.iter().fold(f64::INFINITY, |a, e| a.min(e.abs()));
    if smallest.is_nan() || smallest <= 0.0 || largest / smallest >= MAX_CONDITION {
        return None;
    }
    let inv = m.clone().try_inverse()?;
    let inv = (&inv + inv.transpose()) * 0.5;
    let residual = (&inv * m - DMatrix::<f64>::identity(k, k)).amax();
    (residual <= INVERSE_TOLERANCE).then_some(inv)
}

/// Distance between two frontier nodes. `NoDependency` compares greater
/// than every finite distance.
#[derive(Debug, Clone, Copy)]
pub enum Distance {
    Finite(f64),
    NoDependency,
}

impl Distance {
    pub fn finite(self) -> Option<f64> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::NoDependency => None,
        }
    }
}

impl Ord for Distance {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Distance::Finite(a), Distance::Finite(b)) => a.total_cmp(b),
            (Distance::Finite(_), Distance::NoDependency) => Ordering::Less,
            (Distance::NoDependency, Distance::Finite(_)) => Ordering::Greater,
            (Distance::NoDependency, Distance::NoDependency) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Distance {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Distance {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Distance {}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distance::Finite(d) => write!(f, "{d:.4}"),
            Distance::NoDependency => f.write_str("inf"),
        }
    }
}

/// Symmetric pairwise distances; the diagonal is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    values: Vec<Distance>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// `None` on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> Option<Distance> {
        (i != j).then(|| self.values[i * self.size + j])
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> Distance) -> Self {
        let mut values = vec![Distance::NoDependency; size * size];
        for i in 0..size {
            for j in (i + 1)..size {
                let d = f(i, j);
                values[i * size + j] = d;
                values[j * size + i] = d;
            }
        }
        Self { size, values }
    }

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.size {
            let row: Vec<String> = (0..self.size)
                .map(|j| match self.get(i, j) {
                    None => String::new(),
                    Some(Distance::Finite(d)) => d.to_string(),
                    Some(Distance::NoDependency) => "inf".to_string(),
                })
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `D_ij = 1 / |theta_ij|` off the diagonal.
pub fn distances(theta: &PrecisionMatrix) -> DistanceMatrix {
    let m = &theta.matrix;
    DistanceMatrix::from_fn(m.nrows(), |i, j| {
        let t = m[(i, j)].abs();
        if t < ZERO_PRECISION || !t.is_finite() {
            Distance::NoDependency
        } else {
            Distance::Finite(1.0 / t)
        }
    })
}

pub fn write_matrix_csv(m: &DMatrix<f64>, mut out: impl Write) -> std::io::Result<()> {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corr(rows: usize, cols: usize, data: &[f64]) -> CorrelationMatrix {
        CorrelationMatrix {
            matrix: DMatrix::from_row_slice(rows, cols, data),
            samples: 100,
        }
    }

    #[test]
    fn identical_columns_are_perfectly_correlated() {
        let x = DMatrix::from_column_slice(4, 2, &[-1.5, -0.5, 0.5, 1.5, -1.5, -0.5, 0.5, 1.5]);
        let scaled = crate::signals::standard_scale(&x).unwrap().data;
        let s = correlation(&scaled).unwrap();
        assert!((s.matrix[(0, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negated_column_is_anticorrelated() {
        let x = DMatrix::from_column_slice(3, 2, &[-1.0, 0.0, 1.0, 1.0, 0.0, -1.0]);
        let s = correlation(&x).unwrap();
        assert_eq!(s.matrix[(0, 1)], -1.0);
        assert_eq!(s.matrix[(1, 0)], -1.0);
    }

    #[test]
    fn orthogonal_columns_give_identity() {
        // zero-mean orthogonal columns, squared norm T - 1 = 3
        let h = 3.0_f64.sqrt() / 2.0;
        let x = DMatrix::from_column_slice(4, 2, &[h, h, -h, -h, h, -h, h, -h]);
        let s = correlation(&x).unwrap();
        assert!((s.matrix.clone() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn correlation_needs_two_rows() {
        assert_eq!(
            correlation(&DMatrix::zeros(1, 3)),
            Err(StatsError::TooFewSamples(1))
        );
    }

    #[test]
    fn identity_inverts_to_identity() {
        let p = precision(&corr(3, 3, &[1., 0., 0., 0., 1., 0., 0., 0., 1.]), 0.0).unwrap();
        assert_eq!(p.matrix, DMatrix::identity(3, 3));
        assert_eq!(p.ridge, 0.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let p = precision(&corr(2, 2, &[1.0, 0.5, 0.5, 1.0]), 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 1.0]) * (1.0 / 0.75);
        assert_eq!(p.matrix, expected);
        let d = distances(&p);
        assert_eq!(d.get(0, 1), Some(Distance::Finite(0.75 / 0.5)));
        assert_eq!(d.get(0, 0), None);
    }

    #[test]
    fn rank_deficient_gets_ridge() {
        // two samples, three variables
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, -2.0, -0.5]);
        let s = correlation(&x).unwrap();
        let p = precision(&s, 0.0).unwrap();
        assert!(p.ridge > 0.0);
        let reg = &s.matrix + DMatrix::identity(3, 3) * p.ridge;
        assert!((&p.matrix * reg - DMatrix::identity(3, 3)).amax() < INVERSE_TOLERANCE);
    }

    #[test]
    fn hopeless_matrix_errors() {
        let p = precision(&corr(2, 2, &[1e12, 0.0, 0.0, 0.0]), 0.0);
        assert!(matches!(p, Err(StatsError::SingularEvenWithRidge { .. })));
    }

    #[test]
    fn distance_drops_sign() {
        let p = PrecisionMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, -4.0, -4.0, 1.0]),
            ridge: 0.0,
        };
        assert_eq!(distances(&p).get(1, 0), Some(Distance::Finite(0.25)));
    }

    #[test]
    fn zero_precision_is_no_dependency() {
        let p = PrecisionMatrix {
            matrix: DMatrix::identity(2, 2),
            ridge: 0.0,
        };
        let d = distances(&p).get(0, 1).unwrap();
        assert_eq!(d, Distance::NoDependency);
        assert!(d > Distance::Finite(1e300));
    }
}
