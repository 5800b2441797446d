use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent magnitude accepted before a weight is considered out of
/// range. `exp(700)` is about `1e304`, still finite.
pub const MAX_EXPONENT: f64 = 700.0;

/// Per-class tilt parameters `(theta_0, alpha_0, theta_1, alpha_1)`.
///
/// While optimizing, the intercepts hold the unnormalized `beta` values and
/// `normalized` is false. After finalization they hold `alpha` and the weight
/// function `exp(theta_u . t + alpha_u)` integrates to one over the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltParams {
    pub theta0: Vec<f64>,
    pub alpha0: f64,
    pub theta1: Vec<f64>,
    pub alpha1: f64,
    pub normalized: bool,
}

impl TiltParams {
    /// All-zero parameters of statistic dimension `p`: unit weights.
    pub fn zeros(p: usize) -> Self {
        Self {
            theta0: vec![0.0; p],
            alpha0: 0.0,
            theta1: vec![0.0; p],
            alpha1: 0.0,
            normalized: false,
        }
    }

    pub fn new(theta0: Vec<f64>, alpha0: f64, theta1: Vec<f64>, alpha1: f64) -> Result<Self> {
        let params = Self {
            theta0,
            alpha0,
            theta1,
            alpha1,
            normalized: true,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta0.len() != self.theta1.len() {
            return Err(Error::Shape {
                what: "theta1",
                expected: self.theta0.len(),
                found: self.theta1.len(),
            });
        }
        let all = self
            .theta0
            .iter()
            .chain(&self.theta1)
            .chain([&self.alpha0, &self.alpha1]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tilt parameters must be finite"));
        }
        Ok(())
    }

    /// Statistic dimension `p`.
    pub fn dim(&self) -> usize {
        self.theta0.len()
    }

    pub fn theta(&self, class: u8) -> &[f64] {
        if class == 0 {
            &self.theta0
        } else {
            &self.theta1
        }
    }

    pub fn intercept(&self, class: u8) -> f64 {
        if class == 0 {
            self.alpha0
        } else {
            self.alpha1
        }
    }

    /// The log-weight `theta_u . t + alpha_u`.
    pub fn exponent(&self, t: &[f64], class: u8) -> f64 {
        dot(self.theta(class), t) + self.intercept(class)
    }

    /// Flat layout `[theta0.., alpha0, theta1.., alpha1]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim() + 2);
        v.extend_from_slice(&self.theta0);
        v.push(self.alpha0);
        v.extend_from_slice(&self.theta1);
        v.push(self.alpha1);
        v
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn from_flat(flat: &[f64], normalized: bool) -> Result<Self> {
        if flat.len() < 2 || !flat.len().is_multiple_of(2) {
            return Err(Error::Shape {
                what: "flat tilt parameter vector",
                expected: 2 * (flat.len() / 2).max(1),
                found: flat.len(),
            });
        }
        let p = flat.len() / 2 - 1;
        Ok(Self {
            theta0: flat[..p].to_vec(),
            alpha0: flat[p],
            theta1: flat[p + 1..2 * p + 1].to_vec(),
            alpha1: flat[2 * p + 1],
            normalized,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks an exponent against [`MAX_EXPONENT`] and exponentiates it.
pub fn checked_exp(exponent: f64) -> Result<f64> {
    if !exponent.is_finite() || exponent.abs() > MAX_EXPONENT {
        return Err(Error::NumericRange { exponent });
    }
    Ok(exponent.exp())
}

/// Importance weight `w(x, u) = exp(theta_u . T(x) + alpha_u)` for a
/// precomputed statistic `t = T(x)`.
pub fn tilt_weight(params: &TiltParams, t: &[f64], class: u8) -> Result<f64> {
    if t.len() != params.dim() {
        return Err(Error::Shape {
            what: "statistic vector",
            expected: params.dim(),
            found: t.len(),
        });
    }
    if class > 1 {
        return Err(Error::invalid(format!("class label {class} is not 0 or 1")));
    }
    checked_exp(params.exponent(t, class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_parameters_give_unit_weight() {
        let p = TiltParams::zeros(3);
        assert_eq!(tilt_weight(&p, &[0.3, -7.0, 2.0], 1).unwrap(), 1.0);
        assert_eq!(tilt_weight(&p, &[0.3, -7.0, 2.0], 0).unwrap(), 1.0);
    }

    #[test]
    fn hand_evaluated_weights() {
        let p = TiltParams::new(vec![0.0, 0.0], 0.0, vec![0.5, -0.25], 0.1).unwrap();
        assert_relative_eq!(
            tilt_weight(&p, &[1.0, 2.0], 1).unwrap(),
            1.105_170_918_075_647_7,
            epsilon = 1e-15
        );

        let p = TiltParams::new(vec![0.5f64.ln()], (32.0f64 / 9.0).ln(), vec![0.0], 0.0).unwrap();
        assert_relative_eq!(tilt_weight(&p, &[2.0], 0).unwrap(), 8.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn overflow_reports_the_exponent() {
        let p = TiltParams::new(vec![0.0], 0.0, vec![800.0], 0.0).unwrap();
        match tilt_weight(&p, &[1.0], 1) {
            Err(Error::NumericRange { exponent }) => assert_eq!(exponent, 800.0),
            other => panic!("expected range error, got {other:?}"),
        }
        assert!(tilt_weight(&p, &[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn flat_layout_roundtrips() {
        let p = TiltParams::new(vec![1.0, 2.0], 3.0, vec![4.0, 5.0], 6.0).unwrap();
        assert_eq!(p.to_flat(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(TiltParams::from_flat(&p.to_flat(), true).unwrap(), p);
    }

    proptest! {
        #[test]
        fn weight_is_multiplicative_in_parameters(
            a in prop::collection::vec(-3.0f64..3.0, 4),
            b in prop::collection::vec(-3.0f64..3.0, 4),
            t in prop::collection::vec(-2.0f64..2.0, 1),
            class in 0u8..2,
        ) {
            let pa = TiltParams::from_flat(&a, true).unwrap();
            let pb = TiltParams::from_flat(&b, true).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ps = TiltParams::from_flat(&sum, true).unwrap();
            let lhs = tilt_weight(&ps, &t, class).unwrap();
            let rhs = tilt_weight(&pa, &t, class).unwrap() * tilt_weight(&pb, &t, class).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
        }
    }
}
