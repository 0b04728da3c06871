//! Correlation matrices: the multiple-comparisons-to-control structure of an
//! experiment's z-vector, and the synthetic structures used in simulation.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ExperimentSummary;

/// Correlation matrix of the group-major z-vector, derived from control-group
/// statistics alone.
///
/// Every treatment group is compared against the same control group, so two
/// z-scores share the control mean's noise. Between groups the treatment
/// means are independent; within a group the metric covariance is taken to be
/// the control group's.
pub fn build_mcc_correlation(summary: &ExperimentSummary) -> Result<DMatrix<f64>> {
    summary.validate()?;
    let index = summary.index();
    let n = index.len();

    let se2: Vec<f64> = (0..n)
        .map(|i| {
            let (g, q) = index.unflatten(i);
            summary.cell(g, q).mean_variance() + summary.control(q).mean_variance()
        })
        .collect();

    let mut sigma = DMatrix::zeros(n, n);
    for i in 0..n {
        let (gi, qi) = index.unflatten(i);
        for j in i..n {
            let (gj, qj) = index.unflatten(j);
            let value = if i == j {
                1.0
            } else {
                let denom = (se2[i] * se2[j]).sqrt();
                if !(denom > 0.0) {
                    return Err(Error::DegenerateCorrelation { i, j });
                }
                let shared = match (gi == gj, qi == qj) {
                    (false, true) => summary.control(qi).mean_variance(),
                    (true, false) => 2.0 * summary.control_cov[(qi, qj)],
                    (false, false) => summary.control_cov[(qi, qj)],
                    (true, true) => unreachable!("distinct flat indices"),
                };
                shared / denom
            };
            sigma[(i, j)] = value;
            sigma[(j, i)] = value;
        }
    }
    Ok(sigma)
}

/// A correlation matrix plus whether it had to be repaired.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub matrix: DMatrix<f64>,
    pub projected: bool,
}

/// Returns `matrix` unchanged when it is a valid correlation matrix, else its
/// eigenvalue-clipped, rescaled projection.
pub fn ensure_correlation(matrix: DMatrix<f64>) -> Result<Correlation> {
    let n = matrix.nrows();
    let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
    let in_range = matrix.iter().all(|v| v.abs() <= 1.0);
    if n == 0 || (in_range && eig.min() >= -1e-8 * n as f64) {
        return Ok(Correlation {
            matrix,
            projected: false,
        });
    }
    Ok(Correlation {
        matrix: nearest_correlation(&matrix)?,
        projected: true,
    })
}

/// Clips negative eigenvalues to zero and rescales to unit diagonal.
pub fn nearest_correlation(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = matrix.nrows();
    let sym = (matrix + matrix.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let psd = v * DMatrix::from_diagonal(&clipped) * v.transpose();

    let scale: Vec<f64> = (0..n).map(|i| psd[(i, i)]).collect();
    if let Some(i) = scale.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Factorization(format!(
            "projection left row {i} with zero variance"
        )));
    }
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let r = (psd[(i, j)] / (scale[i] * scale[j]).sqrt()).clamp(-1.0, 1.0);
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    CompoundSymmetry,
    Toeplitz,
    Block,
}

impl StructureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StructureKind::CompoundSymmetry => "compound_symmetry",
            StructureKind::Toeplitz => "toeplitz",
            StructureKind::Block => "block",
        }
    }
}

impl std::fmt::Display for StructureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named synthetic dependence pattern.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationStructure {
    pub kind: StructureKind,
    pub rho: f64,
    /// Only used by [`StructureKind::Block`].
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    pub dimension: usize,
}

fn default_block_size() -> usize {
    5
}

impl CorrelationStructure {
    pub fn compound_symmetry(dimension: usize, rho: f64) -> Self {
        Self {
            kind: StructureKind::CompoundSymmetry,
            rho,
            block_size: default_block_size(),
            dimension,
        }
    }

    pub fn toeplitz(dimension: usize, rho: f64) -> Self {
        Self {
            kind: StructureKind::Toeplitz,
            ..Self::compound_symmetry(dimension, rho)
        }
    }

    pub fn block(dimension: usize, rho: f64, block_size: usize) -> Self {
        Self {
            kind: StructureKind::Block,
            rho,
            block_size,
            dimension,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension == 0 {
            return Err(invalid("dimension", "must be positive"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(invalid("rho", format!("{} is outside (-1, 1)", self.rho)));
        }
        // equicorrelated blocks are PSD iff rho >= -1 / (size - 1)
        let equi = match self.kind {
            StructureKind::CompoundSymmetry => Some(self.dimension),
            StructureKind::Block => {
                if self.block_size == 0 || !self.dimension.is_multiple_of(self.block_size) {
                    return Err(Error::BlockSizeMismatch {
                        dimension: self.dimension,
                        block_size: self.block_size,
                    });
                }
                Some(self.block_size)
            }
            StructureKind::Toeplitz => None,
        };
        if let Some(size) = equi.filter(|&s| s > 1) {
            if self.rho < -1.0 / (size - 1) as f64 {
                return Err(invalid(
                    "rho",
                    format!(
                        "{} makes a {size}-dimensional equicorrelated block indefinite",
                        self.rho
                    ),
                ));
            }
        }
        Ok(())
    }
}

pub fn build_structure(structure: &CorrelationStructure) -> Result<DMatrix<f64>> {
    structure.validate()?;
    let CorrelationStructure {
        kind,
        rho,
        block_size,
        dimension,
    } = *structure;
    Ok(DMatrix::from_fn(dimension, dimension, |i, j| {
        if i == j {
            return 1.0;
        }
        match kind {
            StructureKind::CompoundSymmetry => rho,
            StructureKind::Toeplitz => rho.powi(i.abs_diff(j) as i32),
            StructureKind::Block => {
                if i / block_size == j / block_size {
                    rho
                } else {
                    0.0
                }
            }
        }
    }))
}
