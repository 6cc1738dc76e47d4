use nalgebra::DVector;

/// Huber loss: `x²/2` for `|x| ≤ τ`, `τ|x| - τ²/2` beyond. `τ = ∞` gives
/// the squared loss.
pub fn huber_loss(x: f64, tau: f64) -> f64 {
    let a = x.abs();
    if a <= tau {
        0.5 * x * x
    } else {
        tau * a - 0.5 * tau * tau
    }
}

/// Derivative of [`huber_loss`]: `x` clamped to `[-τ, τ]`.
pub fn huber_grad(x: f64, tau: f64) -> f64 {
    x.clamp(-tau, tau)
}

/// Element-wise clamp to `[-ϖ, ϖ]`.
pub fn winsorize(v: &DVector<f64>, varpi: f64) -> DVector<f64> {
    v.map(|x| x.clamp(-varpi, varpi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn piecewise_values() {
        assert_eq!(huber_loss(0.0, 1.0), 0.0);
        assert_eq!(huber_grad(0.0, 1.0), 0.0);
        assert_eq!(huber_loss(3.0, 1.0), 2.5);
        assert_eq!(huber_grad(3.0, 1.0), 1.0);
        assert_eq!(huber_grad(-3.0, 1.0), -1.0);
        assert_eq!(huber_loss(1e6, f64::INFINITY), 0.5e12);
    }

    #[test]
    fn winsorize_example() {
        let v = DVector::from_vec(vec![-5.0, 0.2, 7.0]);
        assert_eq!(winsorize(&v, 1.0), DVector::from_vec(vec![-1.0, 0.2, 1.0]));
    }

    proptest! {
        #[test]
        fn winsorize_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..20), w in 0.01f64..50.0) {
            let v = DVector::from_vec(v);
            let once = winsorize(&v, w);
            prop_assert_eq!(winsorize(&once, w), once.clone());
            for (a, b) in v.iter().zip(once.iter()) {
                if a.abs() <= w {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn loss_is_continuous_at_the_knee(tau in 0.01f64..10.0) {
            let eps = 1e-9 * tau;
            prop_assert!((huber_loss(tau + eps, tau) - huber_loss(tau - eps, tau)).abs() < 4.0 * eps * tau);
        }
    }
}
