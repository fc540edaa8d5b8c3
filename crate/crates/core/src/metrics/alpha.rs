use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source–target distance at or above which the large multiplier is used.
pub const MULTIPLIER_THRESHOLD: f64 = 0.40;

/// Scaling factors derived from a source–target distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaChoice {
    pub l_st: f64,
    pub multiplier: f64,
    pub alpha_fc: f64,
    pub alpha_conv: f64,
}

/// `α_fc = m·L`, `α_conv = L/m`.
pub fn select_alphas(l_st: f64, m: f64) -> Result<AlphaChoice> {
    if !(l_st > 0.0 && l_st.is_finite()) || !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "select_alphas: L_st and m must be positive, got L_st={l_st}, m={m}"
        )));
    }
    Ok(AlphaChoice {
        l_st,
        multiplier: m,
        alpha_fc: m * l_st,
        alpha_conv: l_st / m,
    })
}

/// 4 for distant targets, 1 otherwise.
pub fn default_multiplier(l_st: f64) -> f64 {
    if l_st >= MULTIPLIER_THRESHOLD {
        4.0
    } else {
        1.0
    }
}

/// [`select_alphas`] with [`default_multiplier`].
pub fn auto_alphas(l_st: f64) -> Result<AlphaChoice> {
    select_alphas(l_st, default_multiplier(l_st))
}
