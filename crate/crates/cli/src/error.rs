use std::fmt;

/// Run failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Schema or validation failure; `field` is the dotted config path.
    Config { field: String, message: String },
    /// Numeric failure or exhausted budget during computation.
    Numeric(String),
    Io(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl fmt::Display) -> Self {
        CliError::Config { field: field.into(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Core error raised while building or validating the input named `field`.
    pub fn from_core_in(field: &str, e: henon_core::Error) -> Self {
        use henon_core::Error as E;
        match e {
            E::Overflow | E::Filtration(_) | E::Budget(_) => CliError::Numeric(e.to_string()),
            E::Argument { name, .. } if field.is_empty() => CliError::config(format!("params.{name}"), e),
            _ => CliError::config(field, e),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, message } if field.is_empty() => write!(f, "config error: {message}"),
            CliError::Config { field, message } => write!(f, "config error in `{field}`: {message}"),
            CliError::Numeric(m) => write!(f, "numeric error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Errors from the computation itself: argument errors still point at config.
impl From<henon_core::Error> for CliError {
    fn from(e: henon_core::Error) -> Self {
        CliError::from_core_in("", e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
