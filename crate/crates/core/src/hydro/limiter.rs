use crate::lanes::Lane;

/// Zero when the arguments disagree in sign, otherwise the one of smaller
/// magnitude.
#[inline]
pub fn minmod<V: Lane>(a: V, b: V) -> V {
    let zero = V::splat(0.0);
    let same_sign = (a * b).gt(zero);
    let pick = V::select(a.abs().le(b.abs()), a, b);
    V::select(same_sign, pick, zero)
}

/// MUSCL face states `(left, right)` at the face between `u1` and `u2`.
#[inline]
pub fn reconstruct_face<V: Lane>(u0: V, u1: V, u2: V, u3: V) -> (V, V) {
    let half = V::splat(0.5);
    let d0 = u1 - u0;
    let d1 = u2 - u1;
    let d2 = u3 - u2;
    (u1 + half * minmod(d0, d1), u2 - half * minmod(d1, d2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minmod_examples() {
        assert_eq!(minmod(1.0, 2.0), 1.0);
        assert_eq!(minmod(-1.0, 2.0), 0.0);
        assert_eq!(minmod(-2.0, -3.0), -2.0);
        assert_eq!(minmod(0.0, 5.0), 0.0);
    }

    #[test]
    fn reconstruct_examples() {
        assert_eq!(reconstruct_face(3.0, 3.0, 3.0, 3.0), (3.0, 3.0));
        assert_eq!(reconstruct_face(4.0, 5.0, 6.0, 7.0), (5.5, 5.5));
    }
}
