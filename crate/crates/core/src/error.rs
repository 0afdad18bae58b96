use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("filter undefined: |v_y| = {0} is too close to 1")]
    Singular(f64),
    #[error("transmission matrix is degenerate (|Q| = {0:e})")]
    Degenerate(f64),
    #[error("intensity ordering violated: {0}")]
    Ordering(String),
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_prob_open(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {p} is not in (0, 1)")))
    }
}
