use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error(
        "bistability condition 1 - s_h < d1*b2_0/(d2*b1_0) < 1 violated: ratio = {ratio}, s_h = {s_h}"
    )]
    BistabilityCondition { ratio: f64, s_h: f64 },

    #[error("{quantity} = {value} outside its domain {domain}")]
    Domain {
        quantity: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("release rate {rate} does not exceed the minimal effective rate m* = {m_star}")]
    InfeasibleRate { rate: f64, m_star: f64 },

    #[error("horizon {horizon} is shorter than the minimal time T* = {t_star}")]
    InfeasibleHorizon { horizon: f64, t_star: f64 },

    #[error(
        "alpha = 0 admits a non-compact family of optimal (control, horizon) pairs; use alpha in (0, 1]"
    )]
    DegenerateWeight,

    #[error("integration unstable at t = {time}: {detail}; try a finer grid")]
    Instability { time: f64, detail: String },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("i/o: {0}")]
    Io(String),
}
