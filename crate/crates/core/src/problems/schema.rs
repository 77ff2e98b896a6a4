//! JSON layout of serialized problems.
//!
//! ```json
//! { "schema_version": 1, "family": "max-quart", "n": 10, "k": 4, "seed": 7,
//!   "g": [[...], ...], "h": [[row-major n*n], ...], "c": [...], "true_lambda": [...] }
//! { "schema_version": 1, "family": "max-eig", "m": 6, "n": 10, "seed": 1,
//!   "a": [[row-major m*m], ...], "reference_value": null, "multiplicity": null }
//! ```
//!
//! `euc-sum` uses the `max-quart` fields. `a` holds `A_0, …, A_n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{EucSumProblem, MaxEigProblem, MaxQuartProblem, Problem, QuarticPieces};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuarticFile {
    n: usize,
    k: usize,
    seed: Option<u64>,
    g: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    c: Vec<f64>,
    true_lambda: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaxEigFile {
    m: usize,
    n: usize,
    seed: Option<u64>,
    a: Vec<Vec<f64>>,
    reference_value: Option<f64>,
    multiplicity: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
enum Body {
    MaxQuart(QuarticFile),
    EucSum(QuarticFile),
    MaxEig(MaxEigFile),
}

#[derive(Serialize, Deserialize)]
struct Document {
    schema_version: u32,
    #[serde(flatten)]
    body: Body,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().iter().copied().collect()
}

fn from_row_major(rows: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * rows {
        return Err(Error::Schema(format!(
            "{what} has {} entries, expected {}",
            data.len(),
            rows * rows
        )));
    }
    Ok(DMatrix::from_row_slice(rows, rows, data))
}

fn quartic_file(p: &QuarticPieces) -> QuarticFile {
    QuarticFile {
        n: p.n(),
        k: p.k(),
        seed: p.seed,
        g: p.g.iter().map(|g| g.iter().copied().collect()).collect(),
        h: p.h.iter().map(row_major).collect(),
        c: p.c.clone(),
        true_lambda: p.true_lambda.iter().copied().collect(),
    }
}

fn quartic_pieces(f: QuarticFile) -> Result<QuarticPieces> {
    if f.g.len() != f.k {
        return Err(Error::Schema(format!("expected {} gradients, found {}", f.k, f.g.len())));
    }
    if f.g.iter().any(|g| g.len() != f.n) {
        return Err(Error::Schema(format!("gradients must have length n = {}", f.n)));
    }
    let h = f
        .h
        .iter()
        .enumerate()
        .map(|(i, h)| from_row_major(f.n, h, &format!("h[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let p = QuarticPieces {
        g: f.g.into_iter().map(DVector::from_vec).collect(),
        h,
        c: f.c,
        true_lambda: DVector::from_vec(f.true_lambda),
        seed: f.seed,
    };
    p.validate()?;
    Ok(p)
}

pub(super) fn to_json(problem: &Problem) -> String {
    let body = match problem {
        Problem::MaxQuart(p) => Body::MaxQuart(quartic_file(&p.pieces)),
        Problem::EucSum(p) => Body::EucSum(quartic_file(&p.pieces)),
        Problem::MaxEig(p) => Body::MaxEig(MaxEigFile {
            m: p.m(),
            n: p.n(),
            seed: p.seed,
            a: p.matrices.iter().map(row_major).collect(),
            reference_value: p.reference_value,
            multiplicity: p.multiplicity,
        }),
    };
    let doc = Document { schema_version: SCHEMA_VERSION, body };
    serde_json::to_string_pretty(&doc).expect("problem documents always serialize")
}

pub(super) fn from_json(text: &str) -> Result<Problem> {
    let doc: Document = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported schema_version {} (this build reads {SCHEMA_VERSION})",
            doc.schema_version
        )));
    }
    Ok(match doc.body {
        Body::MaxQuart(f) => Problem::MaxQuart(MaxQuartProblem { pieces: quartic_pieces(f)? }),
        Body::EucSum(f) => Problem::EucSum(EucSumProblem { pieces: quartic_pieces(f)? }),
        Body::MaxEig(f) => {
            if f.a.len() != f.n + 1 {
                return Err(Error::Schema(format!(
                    "expected n + 1 = {} matrices, found {}",
                    f.n + 1,
                    f.a.len()
                )));
            }
            let matrices = f
                .a
                .iter()
                .enumerate()
                .map(|(i, a)| from_row_major(f.m, a, &format!("a[{i}]")))
                .collect::<Result<Vec<_>>>()?;
            let mut p = MaxEigProblem::new(matrices)?;
            p.seed = f.seed;
            p.reference_value = f.reference_value;
            p.multiplicity = f.multiplicity;
            Problem::MaxEig(p)
        }
    })
}
