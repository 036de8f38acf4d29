//! Bivariate probabilistic forecasting of daily peak and off-peak electricity
//! prices.
//!
//! The toolkit implements a two-step modeling pipeline:
//!
//! 1. a conditional-mean step: an autoregressive model with day-of-week
//!    dummies and interactions, fit per series by ordinary least squares or by
//!    the elastic net with block cross-validation ([`estimators`]);
//! 2. a residual step: six bivariate residual processes of increasing
//!    richness (Gaussian, independent jumps, bivariate Bernoulli jumps,
//!    state-dependent jump means, CCC-GARCH variances, and the combination of
//!    all three), fit by BFGS maximum likelihood ([`residual_models`],
//!    [`optimizer`]).
//!
//! Fitted models generate Monte Carlo path ensembles over multi-day horizons
//! ([`simulator`]), which are evaluated with MAE, MSE, pinball loss, the
//! energy score, and Diebold-Mariano comparisons ([`scoring`]), all driven by
//! a resumable rolling-window backtest engine ([`backtest`]).

pub mod backtest;
pub mod design_matrix;
pub mod error;
pub mod estimators;
pub mod kv;
pub mod market_data;
pub mod optimizer;
pub mod residual_models;
pub mod scoring;
pub mod simulator;

pub use error::{Error, Result};
