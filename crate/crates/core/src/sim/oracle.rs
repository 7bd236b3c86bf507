//! Closed-form predictions for tailing size and confirmation time.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("w_confirm ({w}) exceeds the number of entities ({n})")]
    WConfirmExceedsN { w: u32, n: usize },
    #[error("approvals per record must be at least 2")]
    TooFewApprovals,
}

/// Expected steady-state tailing count `n λ T / (n - 1)` for `n` approvals per
/// record, system record rate `lambda` (records/s) and propagation delay `t`.
pub fn tailing_size(n: usize, lambda: f64, t: f64) -> Result<f64, OracleError> {
    if n < 2 {
        return Err(OracleError::TooFewApprovals);
    }
    let n = n as f64;
    Ok(n * lambda * t / (n - 1.0))
}

/// Expected number of approving records before `w` distinct entities out of
/// `entities` have approved: `N * sum_{i<w} 1/(N-i)`.
pub fn expected_approvals(entities: usize, w: u32) -> Result<f64, OracleError> {
    if w as usize > entities {
        return Err(OracleError::WConfirmExceedsN { w, n: entities });
    }
    let n = entities as f64;
    Ok(n * (0..w).map(|i| 1.0 / (n - i as f64)).sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfirmationOracle {
    pub approvals_expected: f64,
    /// Upper bound on mean confirmation time, seconds.
    pub time_bound: f64,
}

/// Expected approvals and the confirmation-time bound
/// `approvals_expected * n T / (n - 1)`.
pub fn confirmation(entities: usize, w: u32, n: usize, t: f64) -> Result<ConfirmationOracle, OracleError> {
    if n < 2 {
        return Err(OracleError::TooFewApprovals);
    }
    let a = expected_approvals(entities, w)?;
    let n = n as f64;
    Ok(ConfirmationOracle { approvals_expected: a, time_bound: a * n * t / (n - 1.0) })
}
