//! Seeded test families with exact derivatives.
//!
//! - [`MaxQuartProblem`]: `max_i g_iᵀx + ½xᵀH_ix + (c_i/24)|x|⁴`, minimized at 0 with value 0.
//! - [`EucSumProblem`]: `Σ_i |g_iᵀx + ½xᵀH_ix + (c_i/24)|x|⁴|`, same data, same minimizer.
//! - [`MaxEigProblem`]: `λ_max(A_0 + Σ x_i A_i)`.
//!
//! Problems serialize to a JSON document (see [`Problem::to_json`]) with
//! matrices stored as row-major arrays.

mod max_eig;
mod quartic;
mod schema;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Evaluation, Oracle};

pub use max_eig::MaxEigProblem;
pub use quartic::{EucSumProblem, MaxQuartProblem, QuarticPieces};
pub use schema::SCHEMA_VERSION;

/// Problem family names used in configuration files and the JSON schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    MaxQuart,
    EucSum,
    MaxEig,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::MaxQuart => "max-quart",
            Family::EucSum => "euc-sum",
            Family::MaxEig => "max-eig",
        }
    }

    /// Whether the family is convex, which selects the phase-one method and driver.
    pub fn is_convex(self) -> bool {
        !matches!(self, Family::EucSum)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-quart" => Ok(Family::MaxQuart),
            "euc-sum" => Ok(Family::EucSum),
            "max-eig" => Ok(Family::MaxEig),
            other => Err(Error::InvalidInput(format!(
                "unknown family {other:?} (expected max-quart, euc-sum or max-eig)"
            ))),
        }
    }
}

/// Any of the shipped families.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    MaxQuart(MaxQuartProblem),
    EucSum(EucSumProblem),
    MaxEig(MaxEigProblem),
}

impl Problem {
    /// Generates a problem. `k` is used by the quartic families, `m` by max-eig.
    pub fn generate(family: Family, n: usize, k: usize, m: usize, seed: u64) -> Result<Self> {
        Ok(match family {
            Family::MaxQuart => Problem::MaxQuart(MaxQuartProblem::generate(n, k, seed)?),
            Family::EucSum => Problem::EucSum(EucSumProblem::generate(n, k, seed)?),
            Family::MaxEig => Problem::MaxEig(MaxEigProblem::generate(m, n, seed)?),
        })
    }

    pub fn family(&self) -> Family {
        match self {
            Problem::MaxQuart(_) => Family::MaxQuart,
            Problem::EucSum(_) => Family::EucSum,
            Problem::MaxEig(_) => Family::MaxEig,
        }
    }

    /// Known minimum value: 0 for the quartic families, the recorded reference for max-eig.
    pub fn reference_value(&self) -> Option<f64> {
        match self {
            Problem::MaxQuart(_) | Problem::EucSum(_) => Some(0.0),
            Problem::MaxEig(p) => p.reference_value,
        }
    }

    /// Known minimizer, where one exists by construction.
    pub fn minimizer(&self) -> Option<DVector<f64>> {
        match self {
            Problem::MaxQuart(p) => Some(DVector::zeros(p.n())),
            Problem::EucSum(p) => Some(DVector::zeros(p.n())),
            Problem::MaxEig(_) => None,
        }
    }

    pub fn to_json(&self) -> String {
        schema::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        schema::from_json(text)
    }
}

impl Oracle for Problem {
    fn dim(&self) -> usize {
        match self {
            Problem::MaxQuart(p) => p.dim(),
            Problem::EucSum(p) => p.dim(),
            Problem::MaxEig(p) => p.dim(),
        }
    }

    fn evaluate(&self, x: &DVector<f64>) -> Evaluation {
        match self {
            Problem::MaxQuart(p) => p.evaluate(x),
            Problem::EucSum(p) => p.evaluate(x),
            Problem::MaxEig(p) => p.evaluate(x),
        }
    }
}

pub(crate) fn check_bundle_size(n: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidInput("dimension n must be positive".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("bundle size k must be positive".into()));
    }
    if k > n + 1 {
        return Err(Error::BundleTooLarge { k, bound: n + 1 });
    }
    Ok(())
}

#[cfg(test)]
mod tests;
