//! Compensated and order-independent summation.

/// Neumaier-compensated sum.
pub fn compensated<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sum whose result does not depend on the order of `values`.
///
/// The slice is sorted in place (total order) before a compensated sum, so
/// any permutation of the same multiset gives a bit-identical result.
pub fn symmetric(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    compensated(values.iter().copied())
}
