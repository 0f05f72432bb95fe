//! Closed-form and statistical oracles for visualizations of random networks.
//!
//! Everything here is computed along a route independent of
//! [`crate::visualize`]: explicit loops over patches and filters, Monte-Carlo
//! estimates, or dense covariance algebra.

mod checks;
mod gaussian;
mod lemma;
mod oracles;
mod stats;

pub use checks::{deconv_pool_equals_gbp_check, independence_stat_check, IndependenceProbe, IndependenceReport};
pub use gaussian::{expected_rectified_direction, rectified_gaussian_mean, StatReport};
pub use lemma::{closed_form, ThreeLayerModel};
pub use oracles::{
    gbp_normalizer, gbp_theorem1_oracle, saliency_covariance_oracle, saliency_normalizer, CovarianceOracle,
};
pub use stats::{log_log_slope, median, moments, Moments};
