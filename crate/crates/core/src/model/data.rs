use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Counts, offsets and covariates for both outcomes on their native frameworks.
///
/// Outcome 1 is observed per area, outcome 2 per membership unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub y1: Vec<u64>,
    pub e1: Vec<f64>,
    pub y2: Vec<u64>,
    pub e2: Vec<f64>,
    /// `n × p` areal covariates, if any.
    pub x: Option<DMatrix<f64>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y1.len()
    }

    pub fn m(&self) -> usize {
        self.y2.len()
    }

    pub fn p(&self) -> usize {
        self.x.as_ref().map_or(0, DMatrix::ncols)
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let dims = [
            ("y1", self.y1.len(), n),
            ("E1", self.e1.len(), n),
            ("y2", self.y2.len(), m),
            ("E2", self.e2.len(), m),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        if let Some(x) = &self.x {
            if x.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "covariates have {} rows, expected {n}",
                    x.nrows()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite covariate value".into()));
            }
        }
        for (name, offsets) in [("E1", &self.e1), ("E2", &self.e2)] {
            if let Some(v) = offsets.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} contains non-positive offset {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Expected count `E = Σ_a ω_a N_a` from reference rates and population by age group.
pub fn compute_offsets(rates: &[f64], populations: &[f64]) -> Result<f64> {
    if rates.len() != populations.len() {
        return Err(Error::LengthMismatch(rates.len(), populations.len()));
    }
    if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidParameter(format!("rate {r} outside [0, 1]")));
    }
    if let Some(p) = populations.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidParameter(format!("population {p} is negative")));
    }
    let e: f64 = rates.iter().zip(populations).map(|(r, p)| r * p).sum();
    if e > 0.0 {
        Ok(e)
    } else {
        Err(Error::ZeroOffset)
    }
}
