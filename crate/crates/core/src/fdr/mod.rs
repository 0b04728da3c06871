//! Multiple-testing procedures and their rejection reports.

mod dbh;
mod stepup;

pub use dbh::{
    conditional_expectation_g, dbh, dbh_with, DbhOptions, Integration, DEFAULT_QUADRATURE_NODES,
};
pub use stepup::{bh, bh_q_values, bh_rejection_count, by, harmonic_number};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::stats::PVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[serde(rename = "bh")]
    Bh,
    #[serde(rename = "by")]
    By,
    #[serde(rename = "dbh")]
    Dbh,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Bh, Method::By, Method::Dbh];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bh => "bh",
            Method::By => "by",
            Method::Dbh => "dbh",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bh" => Ok(Method::Bh),
            "by" => Ok(Method::By),
            "dbh" => Ok(Method::Dbh),
            other => Err(format!("unknown method `{other}` (expected bh, by or dbh)")),
        }
    }
}

/// Outcome of one procedure on one set of hypotheses.
#[derive(Debug, Clone, PartialEq)]
pub struct RejectionReport {
    pub method: Method,
    pub alpha: f64,
    /// dBH tuning parameter; `None` for BH and BY.
    pub gamma: Option<f64>,
    /// Rejected hypothesis indices, ascending.
    pub rejected: Vec<usize>,
    pub p: PVector,
    /// BH q-values.
    pub q: Vec<f64>,
    /// Per-hypothesis conditional expectations `g*(q_i; S_i)`, dBH only.
    pub g: Option<Vec<f64>>,
}

impl RejectionReport {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn decisions(&self) -> Vec<bool> {
        let mut out = vec![false; self.len()];
        for &i in &self.rejected {
            out[i] = true;
        }
        out
    }

    pub fn is_rejected(&self, i: usize) -> bool {
        self.rejected.binary_search(&i).is_ok()
    }
}
