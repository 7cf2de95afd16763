//! Row-addressable regression data.

use crate::error::{Error, Result};
use crate::family::{Family, Observation};

/// An in-memory table of `n` observations with `p` covariates, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
    names: Vec<String>,
}

impl Dataset {
    /// Builds a table from a response vector and a row-major covariate buffer.
    /// Covariates are named `x1..xp`.
    pub fn new(y: Vec<f64>, x: Vec<f64>, p: usize) -> Result<Self> {
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::with_names(y, x, names)
    }

    pub fn with_names(y: Vec<f64>, x: Vec<f64>, names: Vec<String>) -> Result<Self> {
        let p = names.len();
        if p == 0 {
            return Err(Error::data("dataset needs at least one covariate"));
        }
        if x.len() != y.len() * p {
            return Err(Error::DimensionMismatch {
                expected: y.len() * p,
                got: x.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite response at row {i}")));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "non-finite covariate at row {}",
                i / p
            )));
        }
        Ok(Self { y, x, p, names })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        Observation::new(self.y[i], self.row(i))
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation<'_>> + '_ {
        self.y
            .iter()
            .zip(self.x.chunks_exact(self.p))
            .map(|(&y, x)| Observation::new(y, x))
    }

    /// Verifies every response is admissible for `family`.
    pub fn check_family(&self, family: Family) -> Result<()> {
        for (i, &y) in self.y.iter().enumerate() {
            family
                .check_response(y)
                .map_err(|e| Error::data(format!("row {i}: {e}")))?;
        }
        Ok(())
    }

    fn select(&self, rows: &[usize]) -> Result<Dataset> {
        let mut y = Vec::with_capacity(rows.len());
        let mut x = Vec::with_capacity(rows.len() * self.p);
        for &i in rows {
            if i >= self.len() {
                return Err(Error::data(format!(
                    "row index {i} out of range for {} rows",
                    self.len()
                )));
            }
            y.push(self.y[i]);
            x.extend_from_slice(self.row(i));
        }
        Ok(Dataset {
            y,
            x,
            p: self.p,
            names: self.names.clone(),
        })
    }
}

/// Random and sequential row access over a dataset that may not fit in memory.
pub trait RowSource: Sync {
    fn n_rows(&self) -> usize;

    fn n_covariates(&self) -> usize;

    fn covariate_names(&self) -> Vec<String>;

    /// Materializes the given rows, in the order given.
    fn gather(&self, rows: &[usize]) -> Result<Dataset>;

    /// Visits every row in order, in one or more consecutive blocks.
    fn for_each_block(&self, f: &mut dyn FnMut(&Dataset) -> Result<()>) -> Result<()>;
}

impl RowSource for Dataset {
    fn n_rows(&self) -> usize {
        self.len()
    }

    fn n_covariates(&self) -> usize {
        self.p
    }

    fn covariate_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn gather(&self, rows: &[usize]) -> Result<Dataset> {
        self.select(rows)
    }

    fn for_each_block(&self, f: &mut dyn FnMut(&Dataset) -> Result<()>) -> Result<()> {
        f(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_keeps_order() {
        let d = Dataset::new(
            vec![1.0, 2.0, 3.0],
            vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0],
            2,
        )
        .unwrap();
        let g = d.gather(&[2, 0]).unwrap();
        assert_eq!(g.y(), &[3.0, 1.0]);
        assert_eq!(g.row(0), &[3.0, 30.0]);
        assert!(d.gather(&[3]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Dataset::new(vec![f64::NAN], vec![1.0], 1).is_err());
        assert!(Dataset::new(vec![1.0], vec![f64::INFINITY], 1).is_err());
        assert!(Dataset::new(vec![1.0], vec![1.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn logistic_response_check() {
        let d = Dataset::new(vec![0.0, 2.0], vec![1.0, 1.0], 1).unwrap();
        assert!(d.check_family(Family::Linear).is_ok());
        assert!(d.check_family(Family::Logistic).is_err());
    }
}
