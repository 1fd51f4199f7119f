use serde_json::json;
use thermoflow::Error;

/// A failed run, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Backend(String),
    Compute(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Backend(_) => 2,
            Failure::Compute(_) => 3,
        }
    }

    /// `{code, message}` for stderr.
    pub fn to_json(&self) -> String {
        let (code, message) = match self {
            Failure::Config(m) => ("E_CONFIG", m),
            Failure::Backend(m) => ("E_BACKEND", m),
            Failure::Compute(m) => ("E_COMPUTE", m),
        };
        json!({ "code": code, "message": message }).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Config(_) => Failure::Config(message),
            Error::Backend(_) | Error::Diverged { .. } | Error::NonInvertible(_) => {
                Failure::Backend(message)
            }
            _ => Failure::Compute(message),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Compute(e.to_string())
    }
}

pub type Outcome = Result<(), Failure>;
