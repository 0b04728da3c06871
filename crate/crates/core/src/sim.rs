//! Monte Carlo estimation of FDR and power under synthetic dependence.
//!
//! Each replicate draws `Z ~ N(mu, Sigma)` where the first `num_signals`
//! means equal the signal size and the rest are zero, then runs every
//! requested procedure on the same draw. Replicate `r` is generated from its
//! own ChaCha stream keyed by `(seed, r)`, so results do not depend on how
//! replicates are scheduled.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fdr::{bh, by, dbh_with, DbhOptions, Integration, Method};
use crate::model::Sidedness;
use crate::sigma::{build_structure, CorrelationStructure};
use crate::stats::{z_to_pvalues, TestStatistics};

/// Stream offset that keeps calibration draws apart from evaluation draws.
const CALIBRATION_SEED_SALT: u64 = 0x5ca1_ab1e_0dd5_eed5;
pub const CALIBRATION_BRACKET: (f64, f64) = (0.0, 20.0);
pub const CALIBRATION_TOLERANCE: f64 = 0.02;
pub const CALIBRATION_MAX_ITER: usize = 20;

fn default_num_signals() -> usize {
    5
}

fn default_replicates() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub structure: CorrelationStructure,
    #[serde(default = "default_num_signals")]
    pub num_signals: usize,
    /// `mu*`; ignored by calibration.
    #[serde(default)]
    pub signal_size: f64,
    pub sidedness: Sidedness,
    pub alpha: f64,
    /// dBH tuning parameter; defaults to 1 (one-sided) or 0.95 (two-sided).
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Quadrature nodes for dBH; `None` integrates each constant piece exactly.
    #[serde(default)]
    pub quadrature_nodes: Option<usize>,
}

impl SimulationConfig {
    /// m = 50, five signals, 1000 replicates.
    pub fn new(
        structure: CorrelationStructure,
        signal_size: f64,
        sidedness: Sidedness,
        alpha: f64,
    ) -> Self {
        Self {
            structure,
            num_signals: default_num_signals(),
            signal_size,
            sidedness,
            alpha,
            gamma: None,
            replicates: default_replicates(),
            seed: 0,
            quadrature_nodes: None,
        }
    }

    pub fn m(&self) -> usize {
        self.structure.dimension
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.sidedness.default_gamma())
    }

    pub fn integration(&self) -> Integration {
        match self.quadrature_nodes {
            Some(nodes) => Integration::Quadrature { nodes },
            None => Integration::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        if self.num_signals > self.m() {
            return Err(invalid(
                "num_signals",
                format!("{} exceeds m = {}", self.num_signals, self.m()),
            ));
        }
        if self.replicates == 0 {
            return Err(invalid("replicates", "need at least one replicate"));
        }
        if !(self.signal_size.is_finite() && self.signal_size >= 0.0) {
            return Err(invalid("signal_size", "must be finite and nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(
                "alpha",
                format!("{} is outside (0, 1)", self.alpha),
            ));
        }
        let gamma = self.gamma();
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid("gamma", format!("{gamma} is outside (0, 1]")));
        }
        if self.quadrature_nodes == Some(0) {
            return Err(invalid("quadrature_nodes", "must be positive"));
        }
        Ok(())
    }

    fn mean(&self) -> DVector<f64> {
        DVector::from_fn(self.m(), |j, _| {
            if j < self.num_signals {
                self.signal_size
            } else {
                0.0
            }
        })
    }
}

/// Draws the replicate z-vectors of one configuration.
pub struct Sampler {
    root: DMatrix<f64>,
    mean: DVector<f64>,
    seed: u64,
}

impl Sampler {
    pub fn new(config: &SimulationConfig) -> Result<Self> {
        config.validate()?;
        let sigma = build_structure(&config.structure)?;
        Ok(Self {
            root: symmetric_sqrt(&sigma)?,
            mean: config.mean(),
            seed: config.seed,
        })
    }

    pub fn sample(&self, replicate: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        let noise = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.mean + &self.root * noise).iter().copied().collect()
    }
}

/// Spectral square root with negative eigenvalues clipped to zero.
pub fn symmetric_sqrt(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    if eig.eigenvalues.min() < -1e-8 * scale * matrix.nrows() as f64 {
        return Err(Error::Factorization(format!(
            "matrix is not positive semidefinite (smallest eigenvalue {})",
            eig.eigenvalues.min()
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// One multivariate normal draw; deterministic in `(config.seed, replicate)`.
pub fn sample_z(config: &SimulationConfig, replicate: u64) -> Result<Vec<f64>> {
    Ok(Sampler::new(config)?.sample(replicate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub method: Method,
    pub fdr: f64,
    pub fdr_se: f64,
    pub power: f64,
    pub power_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub config: SimulationConfig,
    pub replicates: usize,
    pub estimates: Vec<MethodEstimate>,
}

impl SimulationResult {
    pub fn get(&self, method: Method) -> Option<&MethodEstimate> {
        self.estimates.iter().find(|e| e.method == method)
    }
}

/// False-discovery proportion and true-positive fraction of one rejection set.
fn outcome(rejected: &[usize], config: &SimulationConfig) -> (f64, f64) {
    let signals = if config.signal_size > 0.0 {
        config.num_signals
    } else {
        0
    };
    let true_hits = rejected.iter().filter(|&&i| i < signals).count();
    let false_hits = rejected.len() - true_hits;
    let fdp = false_hits as f64 / rejected.len().max(1) as f64;
    let power = if signals == 0 {
        0.0
    } else {
        true_hits as f64 / signals as f64
    };
    (fdp, power)
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs every method on `config.replicates` shared draws.
pub fn estimate_fdr_power(
    config: &SimulationConfig,
    methods: &[Method],
) -> Result<SimulationResult> {
    let sampler = Sampler::new(config)?;
    let sigma = build_structure(&config.structure)?;
    let options = DbhOptions {
        integration: config.integration(),
        parallel: false,
        decisions_only: true,
    };
    let gamma = config.gamma();

    let per_replicate: Vec<Vec<(f64, f64)>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let z = sampler.sample(r);
            methods
                .iter()
                .map(|&method| {
                    let report = match method {
                        Method::Bh => bh(&z_to_pvalues(&z, config.sidedness), config.alpha)?,
                        Method::By => by(&z_to_pvalues(&z, config.sidedness), config.alpha)?,
                        Method::Dbh => {
                            let stats = TestStatistics {
                                z: z.clone(),
                                sigma: sigma.clone(),
                                sidedness: config.sidedness,
                            };
                            dbh_with(&stats, config.alpha, gamma, &options)?
                        }
                    };
                    Ok(outcome(&report.rejected, config))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let n = per_replicate.len();
    let estimates = methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let (fdr, fdr_se) = mean_and_se(per_replicate.iter().map(|row| row[k].0), n);
            let (power, power_se) = mean_and_se(per_replicate.iter().map(|row| row[k].1), n);
            MethodEstimate {
                method,
                fdr,
                fdr_se,
                power,
                power_se,
            }
        })
        .collect();
    Ok(SimulationResult {
        config: config.clone(),
        replicates: n,
        estimates,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub signal_size: f64,
    pub power: f64,
    pub iterations: usize,
}

/// Bisects the signal size until `method` reaches `target_power` within
/// [`CALIBRATION_TOLERANCE`]. `config.signal_size` is ignored.
pub fn calibrate_signal_size(
    config: &SimulationConfig,
    target_power: f64,
    method: Method,
) -> Result<Calibration> {
    if !(target_power > 0.0) {
        return Err(invalid(
            "target_power",
            format!("{target_power} must be positive"),
        ));
    }
    let mut probe = config.clone();
    probe.seed = config.seed ^ CALIBRATION_SEED_SALT;
    let mut power_at = |size: f64| -> Result<f64> {
        probe.signal_size = size;
        let result = estimate_fdr_power(&probe, &[method])?;
        Ok(result.estimates[0].power)
    };

    let (mut lo, mut hi) = CALIBRATION_BRACKET;
    let top = power_at(hi)?;
    if target_power >= 1.0 || top < target_power - CALIBRATION_TOLERANCE {
        return Err(Error::UnreachableTarget {
            target: target_power,
            achieved: top,
        });
    }

    let mut best = Calibration {
        signal_size: hi,
        power: top,
        iterations: 0,
    };
    for iteration in 1..=CALIBRATION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let power = power_at(mid)?;
        best = Calibration {
            signal_size: mid,
            power,
            iterations: iteration,
        };
        if (power - target_power).abs() <= CALIBRATION_TOLERANCE {
            break;
        }
        if power < target_power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
