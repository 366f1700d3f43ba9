//! Base regressors behind a common fit/predict contract.

mod forest;
mod krr;
mod ols;

pub use forest::{forest_fit, FittedForest, ForestParams, Node, Tree};
pub use krr::{krr_fit, krr_fit_centered, krr_from_gram, FittedKrr};
pub use ols::{ols_fit, FittedOls};

use serde::{Deserialize, Serialize};

use crate::kernels::KernelSpec;
use crate::numerics::Points;
use crate::{Error, Result};

pub trait Predictor: Send + Sync {
    fn predict(&self, x: &Points) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    Krr {
        kernel: KernelSpec,
        lambda: f64,
        center: bool,
    },
    Ols,
    Forest {
        params: ForestParams,
        seed: u64,
    },
    /// Ignores the data and predicts `value`.
    Constant { value: f64 },
    /// Predicts the training mean.
    Mean,
}

impl RegressorSpec {
    pub fn fit(&self, x: &Points, y: &[f64]) -> Result<FittedModel> {
        check_xy(x, y)?;
        Ok(match self {
            RegressorSpec::Krr {
                kernel,
                lambda,
                center,
            } => {
                let m = if *center {
                    krr_fit_centered(x, y, *kernel, *lambda)?
                } else {
                    krr_fit(x, y, *kernel, *lambda)?
                };
                FittedModel::Krr(m)
            }
            RegressorSpec::Ols => FittedModel::Ols(ols_fit(x, y)?),
            RegressorSpec::Forest { params, seed } => {
                FittedModel::Forest(forest_fit(x, y, params, *seed)?)
            }
            RegressorSpec::Constant { value } => FittedModel::Constant(*value),
            RegressorSpec::Mean => {
                if y.is_empty() {
                    return Err(Error::EmptyData("mean of no targets".into()));
                }
                FittedModel::Constant(crate::numerics::mean(y))
            }
        })
    }
}

pub(crate) fn check_xy(x: &Points, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Krr(FittedKrr),
    Ols(FittedOls),
    Forest(FittedForest),
    Constant(f64),
}

impl Predictor for FittedModel {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        match self {
            FittedModel::Krr(m) => m.predict(x),
            FittedModel::Ols(m) => m.predict(x),
            FittedModel::Forest(m) => m.predict(x),
            FittedModel::Constant(c) => Ok(vec![*c; x.nrows()]),
        }
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        (**self).predict(x)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        (**self).predict(x)
    }
}

/// Wraps a closure as a predictor.
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn predict(&self, x: &Points) -> Result<Vec<f64>> {
        Ok(x.rows().map(&self.0).collect())
    }
}
