//! Functional neural network control charts.
//!
//! Monitoring of a scalar quality characteristic adjusted for the effect of
//! functional covariates (profiles). The pipeline is:
//!
//! 1. smooth raw profiles onto a B-spline basis ([`basis`]);
//! 2. standardize them and, for the linear chart, extract multivariate
//!    functional principal components ([`fpca`], [`sof`]);
//! 3. fit a predictor of the response, either the linear scalar-on-function
//!    model or a functional neural network ([`fnn`]);
//! 4. chart the prediction residuals against empirical-quantile control
//!    limits estimated on a held-out tuning set ([`charts`]).
//!
//! [`simgen`] and [`arl`] reproduce the Monte Carlo run-length study used to
//! compare the charts, and [`io`] holds the file formats used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arl;
pub mod basis;
pub mod charts;
pub mod data;
pub mod error;
pub mod fnn;
pub mod fpca;
pub mod io;
pub mod persist;
pub mod rng;
pub mod simgen;
pub mod sof;

pub use basis::{
    BSplineBasis, FunctionalData, Grid, Penalty, QuadratureMethod, QuadratureRule, Smoother,
};

pub use data::{Dataset, ProfileSet};
pub use error::{Error, Result};

pub use fpca::{MfpcaModel, StandardizationFns};
pub use charts::{ChartKind, ChartPoint, ControlChart, Predictor};
pub use fnn::{Activation, FnnConfig, FnnModel, TrainHistory};
pub use sof::SofModel;
