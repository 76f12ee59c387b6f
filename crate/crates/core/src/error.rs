use thiserror::Error;

/// Errors produced by the models, filter, smoother and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite kinematic state: {0:?}")]
    NonFiniteState([f64; 5]),

    #[error("target coincides with sensor {sensor} position")]
    ZeroRange { sensor: usize },

    #[error("class {0} is not configured")]
    UnknownClass(usize),

    #[error("degenerate SNR band [{d1}, {d2}]; use the fixed-SNR Rayleigh density instead")]
    DegenerateBand { d1: f64, d2: f64 },

    #[error("amplitude {amplitude} is below the detection threshold {tau}")]
    BelowThreshold { amplitude: f64, tau: f64 },

    #[error("non-finite likelihood for particle {particle} of class {class} and detection {detection}")]
    NonFiniteLikelihood {
        class: usize,
        particle: usize,
        detection: usize,
    },

    #[error("zero predictive intensity for particle {particle} of class {class} at scan {scan} carrying smoothed weight {weight}")]
    ZeroPredictive {
        class: usize,
        particle: usize,
        scan: usize,
        weight: f64,
    },

    #[error("smoothing inputs are not consecutive: scans {earlier} and {later}")]
    NonConsecutive { earlier: usize, later: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
