use super::{KgError, PathResult};

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_R_MAX: f64 = 100.0;

/// `100 / sqrt(hop_count + ε) · weight_sum`, clamped to `[0, r_max]`.
///
/// A zero-hop path (prediction equals target) scores `r_max`; an unreachable
/// target scores 0.
pub fn graph_reward(path: Option<&PathResult>, epsilon: f64, r_max: f64) -> Result<f64, KgError> {
    if !(epsilon > 0.0) {
        return Err(KgError::InvalidArgument(format!("epsilon must be > 0, got {}", epsilon)));
    }
    if !(r_max >= 0.0) {
        return Err(KgError::InvalidArgument(format!("r_max must be >= 0, got {}", r_max)));
    }
    Ok(match path {
        None => 0.0,
        Some(p) if p.hop_count == 0 => r_max,
        Some(p) => (100.0 / (p.hop_count as f64 + epsilon).sqrt() * p.weight_sum).clamp(0.0, r_max),
    })
}
