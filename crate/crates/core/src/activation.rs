use serde::{Deserialize, Serialize};

/// Scalar nonlinearity applied entrywise. Both variants are 1-Lipschitz with
/// `σ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    #[default]
    Relu,
    Tanh,
}

impl ActivationKind {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if u > 0.0 {
                    u
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => u.tanh(),
        }
    }

    /// Derivative. For ReLU the subgradient at the kink is taken to be 0.
    #[inline]
    pub fn deriv(self, u: f64) -> f64 {
        match self {
            ActivationKind::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Tanh => {
                let t = u.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for ActivationKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(ActivationKind::Relu),
            "tanh" => Ok(ActivationKind::Tanh),
            other => Err(crate::Error::Parameter(format!("unknown activation '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_maps_to_zero() {
        for act in [ActivationKind::Relu, ActivationKind::Tanh] {
            assert_eq!(act.eval(0.0), 0.0);
        }
    }

    #[test]
    fn relu_kink_derivative_is_zero() {
        assert_eq!(ActivationKind::Relu.deriv(0.0), 0.0);
        assert_eq!(ActivationKind::Relu.deriv(1e-300), 1.0);
    }

    #[test]
    fn one_lipschitz_on_sampled_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for act in [ActivationKind::Relu, ActivationKind::Tanh] {
            for _ in 0..10_000 {
                let u: f64 = rng.random_range(-5.0..5.0);
                let v: f64 = rng.random_range(-5.0..5.0);
                assert!((act.eval(u) - act.eval(v)).abs() <= (u - v).abs());
            }
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("ReLU".parse::<ActivationKind>().unwrap(), ActivationKind::Relu);
        assert_eq!("tanh".parse::<ActivationKind>().unwrap(), ActivationKind::Tanh);
        assert!("gelu".parse::<ActivationKind>().is_err());
    }
}
