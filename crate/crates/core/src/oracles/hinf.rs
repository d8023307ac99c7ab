//! Moments of the limit `H_inf` of the position-sum martingale in the large-rate regime.

use crate::error::{LabError, Result};
use crate::model::{ModelParams, Regime};

/// The closed-form rational functions of `gamma = (lambda_p / mu - 2)^-1` for `p = 1`, taken
/// literally: `2 gamma` for the second moment and the degree-4 and degree-6 expressions. Odd
/// orders vanish by symmetry.
///
/// The second-order formula is the moment for `v = 1/2`, while the higher ones are the moments
/// for `v = 1`, so they cannot all hold at once. [`hinf_moment`] gives values tied to the
/// model parameters.
pub fn hinf_moment_displayed(k: u32, gamma: f64) -> Result<f64> {
    let g = gamma;
    match k {
        _ if k % 2 == 1 => Ok(0.0),
        2 => Ok(2.0 * g),
        4 => Ok(96.0 * g * g * (16.0 + 39.0 * g + 30.0 * g * g + 8.0 * g.powi(3))
            / (9.0 + 27.0 * g + 26.0 * g * g + 8.0 * g.powi(3))),
        6 => {
            let num = 36847.0
                + 285675.0 * g
                + 948012.0 * g.powi(2)
                + 1760420.0 * g.powi(3)
                + 2005408.0 * g.powi(4)
                + 1441120.0 * g.powi(5)
                + 642112.0 * g.powi(6)
                + 163584.0 * g.powi(7)
                + 18432.0 * g.powi(8);
            let den = (1.0 + g).powi(2)
                * (3.0 + 2.0 * g)
                * (5.0 + 4.0 * g)
                * (5.0 + 6.0 * g)
                * (5.0 + 8.0 * g)
                * (6.0 + 17.0 * g + 12.0 * g * g);
            Ok(1440.0 * g.powi(3) * num / den)
        }
        _ => Err(LabError::Unsupported(format!("H_inf moment of order {k}"))),
    }
}

/// `E_0 H_inf^k` for `p = 1`, `d = 1` in the large-rate regime, `k <= 6`.
///
/// With `v = sigma^2 / (2 mu)` the moments are `E H^2 = 4 v gamma`, `E H^4 = v^2 P_4(gamma)` and
/// `E H^6 = v^3 P_6(gamma)`, where `P_4`, `P_6` are the degree-4 and degree-6 rational
/// functions of [`hinf_moment_displayed`]. The second moment follows by direct integration of
/// the second-moment formula. All three agree with the moment recursion to high precision.
pub fn hinf_moment(k: u32, params: &ModelParams) -> Result<f64> {
    if params.p() != 1.0 {
        return Err(LabError::Unsupported(
            "H_inf moments are available for p = 1 only".into(),
        ));
    }
    if params.d() != 1 {
        return Err(LabError::Unsupported("H_inf moments are available for d = 1 only".into()));
    }
    params.require(Regime::Large)?;
    let g = params.gamma();
    let v = params.equilibrium_variance();
    match k {
        _ if k % 2 == 1 && k <= 6 => Ok(0.0),
        2 => Ok(4.0 * v * g),
        4 | 6 => Ok(v.powi(k as i32 / 2) * hinf_moment_displayed(k, g)?),
        _ => Err(LabError::Unsupported(format!("H_inf moment of order {k}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn displayed_values() {
        assert!((hinf_moment_displayed(2, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((hinf_moment_displayed(4, 0.5).unwrap() - 35.2).abs() < 1e-12);
        assert_eq!(hinf_moment_displayed(3, 0.5).unwrap(), 0.0);
        assert!(hinf_moment_displayed(8, 0.5).is_err());
    }

    #[test]
    fn preconditions() {
        let large = ModelParams::new(1, 0.5, 0.25, 1.0, 1.0).unwrap();
        assert!((hinf_moment(2, &large).unwrap() - 1.0).abs() < 1e-15);
        assert!((hinf_moment(4, &large).unwrap() - 8.8).abs() < 1e-12);
        assert_eq!(hinf_moment(5, &large).unwrap(), 0.0);
        let p_below_one = ModelParams::new(1, 0.5, 0.1, 1.0, 0.9).unwrap();
        assert!(matches!(hinf_moment(2, &p_below_one), Err(LabError::Unsupported(_))));
        let small = ModelParams::new(1, 0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(matches!(hinf_moment(2, &small), Err(LabError::Regime { .. })));
        let plane = ModelParams::new(2, 0.5, 0.25, 1.0, 1.0).unwrap();
        assert!(hinf_moment(2, &plane).is_err());
    }
}
