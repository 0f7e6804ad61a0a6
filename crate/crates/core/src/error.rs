use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid family: coefficient `{coefficient}` may vanish on the parameter domain")]
    VanishingCoefficient { coefficient: String },
    #[error("parameter point outside domain: {0}")]
    Domain(String),
    #[error("invalid argument `{name}`: {reason}")]
    Argument { name: &'static str, reason: String },
    #[error("floating point overflow during map evaluation")]
    Overflow,
    #[error("filtration search failed: {0}")]
    Filtration(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Argument { name, reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
