//! z-statistics, p-values and control-group covariance estimation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{ExperimentSummary, Sidedness};
use crate::normal;

/// The concatenated z-vector of an experiment together with its correlation
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TestStatistics {
    pub z: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub sidedness: Sidedness,
}

impl TestStatistics {
    /// Checks shape, symmetry, unit diagonal and entry range of `sigma`.
    pub fn new(z: Vec<f64>, sigma: DMatrix<f64>, sidedness: Sidedness) -> Result<Self> {
        const TOL: f64 = 1e-9;
        let n = z.len();
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "z has length {n} but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(crate::error::invalid(
                "z",
                format!("entry {i} is not finite"),
            ));
        }
        for i in 0..n {
            if (0..n).any(|j| !sigma[(i, j)].is_finite()) {
                return Err(Error::NonFiniteSigma { row: i });
            }
            if (sigma[(i, i)] - 1.0).abs() > TOL {
                return Err(crate::error::invalid(
                    "sigma",
                    format!("diagonal entry {i} is {}", sigma[(i, i)]),
                ));
            }
            for j in (i + 1)..n {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > TOL || a.abs() > 1.0 + TOL {
                    return Err(crate::error::invalid(
                        "sigma",
                        format!("entry ({i}, {j}) = {a} / {b} is not a valid correlation"),
                    ));
                }
            }
        }
        Ok(Self {
            z,
            sigma,
            sidedness,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn p_values(&self) -> PVector {
        z_to_pvalues(&self.z, self.sidedness)
    }
}

/// p-values, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PVector(Vec<f64>);

impl PVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(i) = p.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(crate::error::invalid(
                "p",
                format!("entry {i} = {} is outside [0, 1]", p[i]),
            ));
        }
        Ok(Self(p))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for PVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// z-statistics for every (treatment group, metric) pair, group-major.
pub fn compute_z_vector(summary: &ExperimentSummary) -> Result<Vec<f64>> {
    summary.validate()?;
    let index = summary.index();
    let mut z = Vec::with_capacity(index.len());
    for i in 0..index.len() {
        let (g, q) = index.unflatten(i);
        let treat = summary.cell(g, q);
        let control = summary.control(q);
        let se2 = treat.mean_variance() + control.mean_variance();
        if se2 <= 0.0 {
            return Err(Error::DegenerateCell {
                group: g,
                metric: q,
            });
        }
        z.push((treat.mean - control.mean) / se2.sqrt());
    }
    Ok(z)
}

/// p-value of a single z-score.
pub fn p_value(z: f64, sidedness: Sidedness) -> f64 {
    match sidedness {
        Sidedness::TwoSided => (2.0 * normal::upper_tail(z.abs())).min(1.0),
        Sidedness::RightSided => normal::upper_tail(z),
        Sidedness::LeftSided => normal::cdf(z),
    }
}

pub fn z_to_pvalues(z: &[f64], sidedness: Sidedness) -> PVector {
    PVector(z.iter().map(|&v| p_value(v, sidedness)).collect())
}

/// Unbiased sample covariance of the columns of `rows`.
fn sample_covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            actual: n,
        });
    }
    let m = rows[0].len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != m {
            return Err(Error::RaggedRows {
                row: r,
                expected: m,
                actual: row.len(),
            });
        }
    }

    let mut mean = vec![0.0; m];
    for row in rows {
        for (acc, x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n as f64);

    let mut cov = DMatrix::zeros(m, m);
    let mut centered = vec![0.0; m];
    for row in rows {
        for (c, (x, mu)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = x - mu;
        }
        for a in 0..m {
            for b in a..m {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    let denom = (n - 1) as f64;
    for a in 0..m {
        for b in a..m {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Covariance of the control-group metric means from unit-level rows
/// (one row per unit, one column per metric).
pub fn estimate_control_covariance(unit_rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = unit_rows.len() as f64;
    Ok(sample_covariance(unit_rows)? / n)
}

/// Same target as [`estimate_control_covariance`], computed from `buckets`
/// bucket means instead of individual units.
///
/// Units are ordered by a seeded hash of their identifier and cut into
/// `buckets` contiguous runs of near-equal size. Buckets are then ordered by
/// their first row so that one unit per bucket reproduces the ungrouped
/// estimate bit for bit.
pub fn estimate_control_covariance_grouped(
    unit_ids: &[String],
    unit_rows: &[Vec<f64>],
    buckets: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let n = unit_rows.len();
    if unit_ids.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} unit ids for {n} rows",
            unit_ids.len()
        )));
    }
    if buckets < 2 {
        return Err(crate::error::invalid("buckets", "need at least 2 buckets"));
    }
    if n < buckets {
        return Err(Error::EmptyBucket { bucket: n, buckets });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&r| (bucket_hash(&unit_ids[r], seed), r));

    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(buckets);
    let (base, extra) = (n / buckets, n % buckets);
    let mut start = 0;
    for b in 0..buckets {
        let len = base + usize::from(b < extra);
        let mut members = order[start..start + len].to_vec();
        members.sort_unstable();
        groups.push(members);
        start += len;
    }
    groups.sort_by_key(|g| g[0]);

    let m = unit_rows.first().map_or(0, Vec::len);
    let mut means = Vec::with_capacity(buckets);
    for members in &groups {
        let mut acc = vec![0.0; m];
        for &r in members {
            let row = &unit_rows[r];
            if row.len() != m {
                return Err(Error::RaggedRows {
                    row: r,
                    expected: m,
                    actual: row.len(),
                });
            }
            for (a, x) in acc.iter_mut().zip(row) {
                *a += x;
            }
        }
        let k = members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        means.push(acc);
    }
    Ok(sample_covariance(&means)? / buckets as f64)
}

/// FNV-1a over the identifier, finished with a splitmix64 round keyed by `seed`.
fn bucket_hash(id: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut x = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
