//! The ten supported hidden-layer activation functions and their
//! derivatives at the pre-activation value.
//!
//! Fixed constants: ELU alpha = 1, SELU alpha = 1.6732632423543772 and
//! lambda = 1.0507009873554805, LeakyReLU negative slope = 0.01,
//! Hardshrink lambda = 0.5, GELU in its tanh approximation, Mish with a
//! numerically stable softplus. NaN inputs propagate to NaN outputs.

use crate::scalar::Scalar;

const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const LEAKY_SLOPE: f64 = 0.01;
const HARDSHRINK_LAMBDA: f64 = 0.5;
const GELU_SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
    Elu,
    Selu,
    Gelu,
    LeakyRelu,
    Hardshrink,
    Mish,
}

impl Activation {
    pub const ALL: [Activation; 10] = [
        Activation::Identity,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Relu,
        Activation::Elu,
        Activation::Selu,
        Activation::Gelu,
        Activation::LeakyRelu,
        Activation::Hardshrink,
        Activation::Mish,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Selu => "selu",
            Activation::Gelu => "gelu",
            Activation::LeakyRelu => "leakyrelu",
            Activation::Hardshrink => "hardshrink",
            Activation::Mish => "mish",
        }
    }

    /// f(x).
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        if x.is_nan() {
            return x;
        }
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > T::ZERO {
                    x
                } else {
                    T::ZERO
                }
            }
            Activation::Elu => {
                if x > T::ZERO {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Selu => {
                let lambda = T::from_f64(SELU_LAMBDA);
                if x > T::ZERO {
                    lambda * x
                } else {
                    lambda * T::from_f64(SELU_ALPHA) * x.exp_m1()
                }
            }
            Activation::Gelu => {
                let half = T::from_f64(0.5);
                half * x * (T::ONE + gelu_inner(x).tanh())
            }
            Activation::LeakyRelu => {
                if x > T::ZERO {
                    x
                } else {
                    T::from_f64(LEAKY_SLOPE) * x
                }
            }
            Activation::Hardshrink => {
                if x.abs() > T::from_f64(HARDSHRINK_LAMBDA) {
                    x
                } else {
                    T::ZERO
                }
            }
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    /// df/dx at `pre`, reusing the already-computed `out = f(pre)` where
    /// that removes transcendental calls. Agrees with [`Activation::grad`]
    /// to rounding error; the training paths all use this form, so fused
    /// and sequential backward passes stay bit-identical.
    #[inline]
    pub fn grad_with_output<T: Scalar>(self, pre: T, out: T) -> T {
        if pre.is_nan() {
            return pre;
        }
        match self {
            Activation::Sigmoid => out * (T::ONE - out),
            Activation::Tanh => T::ONE - out * out,
            Activation::Elu => {
                if pre > T::ZERO {
                    T::ONE
                } else {
                    // out = e^x - 1, so f' = e^x = out + 1
                    out + T::ONE
                }
            }
            Activation::Selu => {
                let lambda = T::from_f64(SELU_LAMBDA);
                if pre > T::ZERO {
                    lambda
                } else {
                    // out = λα(e^x - 1), so f' = λα·e^x = out + λα
                    out + lambda * T::from_f64(SELU_ALPHA)
                }
            }
            _ => self.grad(pre),
        }
    }

    /// df/dx at the pre-activation value `x`.
    #[inline]
    pub fn grad<T: Scalar>(self, x: T) -> T {
        if x.is_nan() {
            return x;
        }
        match self {
            Activation::Identity => T::ONE,
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (T::ONE - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                T::ONE - t * t
            }
            Activation::Relu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::Elu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    x.exp()
                }
            }
            Activation::Selu => {
                let lambda = T::from_f64(SELU_LAMBDA);
                if x > T::ZERO {
                    lambda
                } else {
                    lambda * T::from_f64(SELU_ALPHA) * x.exp()
                }
            }
            Activation::Gelu => {
                let half = T::from_f64(0.5);
                let t = gelu_inner(x).tanh();
                let sech2 = T::ONE - t * t;
                let three = T::from_f64(3.0);
                let inner_grad = T::from_f64(GELU_SQRT_2_OVER_PI)
                    * (T::ONE + three * T::from_f64(GELU_CUBIC) * x * x);
                half * (T::ONE + t) + half * x * sech2 * inner_grad
            }
            Activation::LeakyRelu => {
                if x > T::ZERO {
                    T::ONE
                } else {
                    T::from_f64(LEAKY_SLOPE)
                }
            }
            Activation::Hardshrink => {
                if x.abs() > T::from_f64(HARDSHRINK_LAMBDA) {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            Activation::Mish => {
                let t = softplus(x).tanh();
                t + x * (T::ONE - t * t) * sigmoid(x)
            }
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let canon = s.to_ascii_lowercase().replace(['-', '_'], "");
        Activation::ALL
            .iter()
            .copied()
            .find(|a| a.name() == canon)
            .ok_or_else(|| format!("unknown activation `{s}`"))
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// softplus(x) = ln(1 + e^x), computed as max(x, 0) + ln1p(e^-|x|).
#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    let m = if x > T::ZERO { x } else { T::ZERO };
    m + (-x.abs()).exp().ln_1p()
}

#[inline]
fn gelu_inner<T: Scalar>(x: T) -> T {
    T::from_f64(GELU_SQRT_2_OVER_PI) * (x + T::from_f64(GELU_CUBIC) * x * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_fixed_points() {
        assert_eq!(Activation::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Activation::Relu.apply(-1.0f64), 0.0);
        assert_eq!(Activation::Identity.apply(3.7f64), 3.7);
        assert_eq!(Activation::Mish.apply(0.0f64), 0.0);
        assert_eq!(Activation::Hardshrink.apply(0.3f64), 0.0);
        assert_eq!(Activation::Hardshrink.apply(0.7f64), 0.7);
        assert_eq!(Activation::Tanh.grad(0.0f64), 1.0);
        assert_eq!(Activation::LeakyRelu.grad(-2.0f64), 0.01);
        assert_eq!(Activation::LeakyRelu.apply(-2.0f64), -0.02);
        assert_eq!(Activation::Elu.grad(1.0f64), 1.0);
        // SELU on the positive branch is a plain scale.
        assert_eq!(Activation::Selu.apply(1.0f64), SELU_LAMBDA);
    }

    #[test]
    fn nan_propagates() {
        for a in Activation::ALL {
            assert!(a.apply(f64::NAN).is_nan(), "{a} apply");
            assert!(a.grad(f64::NAN).is_nan(), "{a} grad");
        }
    }

    /// 21 probe points across [-3, 3]. The midpoint of the grid would land
    /// exactly on the origin, where ReLU-family derivatives have a kink, so
    /// that one point is nudged to 0.15; none of the remaining points sit
    /// near the Hardshrink thresholds at +/-0.5 either.
    fn probe_points() -> Vec<f64> {
        (0..21)
            .map(|i| {
                let x = -3.0 + 0.3 * i as f64;
                if x.abs() < 1e-12 {
                    0.15
                } else {
                    x
                }
            })
            .collect()
    }

    #[test]
    fn gradients_match_central_differences() {
        let h = 1e-5;
        for a in Activation::ALL {
            for &x in &probe_points() {
                let fd = (a.apply(x + h) - a.apply(x - h)) / (2.0 * h);
                let an = a.grad(x);
                let err = if an == 0.0 {
                    fd.abs()
                } else {
                    (fd - an).abs() / an.abs()
                };
                assert!(err <= 1e-7, "{a} at {x}: fd {fd} vs analytic {an} (err {err})");
            }
        }
    }

    #[test]
    fn grad_with_output_matches_grad() {
        for a in Activation::ALL {
            for &x in &[-2.3f64, -0.9, -0.2, 0.3, 1.1, 2.8] {
                let out = a.apply(x);
                let direct = a.grad(x);
                let reused = a.grad_with_output(x, out);
                let err = (direct - reused).abs();
                // exp_m1-based reuse differs from a fresh exp by rounding only
                assert!(err <= 4.0 * f64::EPSILON * direct.abs().max(1.0), "{a} at {x}");
            }
            assert!(a.grad_with_output(f64::NAN, f64::NAN).is_nan());
        }
        // Sigmoid and tanh reuse is algebraically the same expression.
        for &x in &[-1.5f64, 0.4, 2.0] {
            let s = Activation::Sigmoid.apply(x);
            assert_eq!(Activation::Sigmoid.grad_with_output(x, s), s * (1.0 - s));
            let t = Activation::Tanh.apply(x);
            assert_eq!(Activation::Tanh.grad_with_output(x, t), 1.0 - t * t);
        }
    }

    #[test]
    fn f32_and_f64_agree_loosely() {
        for a in Activation::ALL {
            for &x in &[-2.5f64, -0.75, 0.4, 1.9] {
                let wide = a.apply(x);
                let narrow = a.apply(x as f32) as f64;
                assert!((wide - narrow).abs() < 1e-6, "{a} at {x}");
            }
        }
    }

    #[test]
    fn exactly_ten_variants_parse_round_trip() {
        assert_eq!(Activation::ALL.len(), 10);
        for a in Activation::ALL {
            let parsed: Activation = a.name().parse().unwrap();
            assert_eq!(parsed, a);
        }
        assert_eq!("LeakyReLU".parse::<Activation>().unwrap(), Activation::LeakyRelu);
        assert_eq!("GeLU".parse::<Activation>().unwrap(), Activation::Gelu);
        assert_eq!("SeLU".parse::<Activation>().unwrap(), Activation::Selu);
        assert!("softmax".parse::<Activation>().is_err());
    }
}
