use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("y = {y} lies outside the collar [0, {width}]")]
    OutOfCollar { y: f64, width: f64 },
    #[error("bracket order {requested} exceeds the chart's derivative budget {budget}")]
    OrderBudget { requested: usize, budget: usize },
    #[error("contact order exceeds K_max = {k_max} at x' = {x}, xi' = {xi}")]
    ContactOrderUnresolved { k_max: usize, x: f64, xi: f64 },
    #[error("point is not hyperbolic (r0 = {r0})")]
    NotHyperbolic { r0: f64 },
    #[error("event localization failed: {0}")]
    EventLocalization(String),
    #[error("integrator failure: {0}")]
    Integrator(String),
    #[error("grid too coarse: {0}")]
    Resolution(String),
    #[error("symbol support too close to the boundary: {0}")]
    SupportMargin(String),
    #[error("point left the glancing set (r0 = {r0}, r1 = {r1})")]
    GlidingExit { r0: f64, r1: f64 },
    #[error("parametrix ODE failed at x' = {x}, xi' = {xi}: {reason}")]
    ParametrixOde { x: f64, xi: f64, reason: String },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
