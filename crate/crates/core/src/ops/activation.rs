use crate::tensor::Scalar;

#[inline]
pub(crate) fn elu<T: Scalar>(x: T, alpha: T) -> T {
    if x > T::zero() {
        x
    } else {
        alpha * x.exp_m1()
    }
}

/// Derivative of [`elu`] expressed through its input.
#[inline]
pub(crate) fn elu_grad<T: Scalar>(x: T, alpha: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        alpha * x.exp()
    }
}

/// Logistic function, evaluated without overflow for any finite input and
/// clamped so the result stays strictly inside (0, 1) at the type's precision.
#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / T::of(2.0);
    s.max(T::min_positive_value()).min(hi)
}
