//! Halton low-discrepancy sequences, used for inner-optimizer restarts and
//! candidate pools.

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// The `index`-th element (1-based internally) of the van der Corput sequence
/// in the given base.
fn van_der_corput(mut index: usize, base: usize) -> f64 {
    let mut result = 0.0;
    let mut fraction = 1.0 / base as f64;
    while index > 0 {
        result += (index % base) as f64 * fraction;
        index /= base;
        fraction /= base as f64;
    }
    result
}

/// `count` Halton points in the unit cube of the given dimension.
/// The leading index is skipped so the first point is not the origin.
pub fn halton_points(dim: usize, count: usize) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "dimension too large for the prime table");
    (1..=count)
        .map(|i| (0..dim).map(|d| van_der_corput(i, PRIMES[d])).collect())
        .collect()
}

/// Halton points scaled into a box given by per-dimension (lower, upper).
pub fn halton_in_box(bounds: &[(f64, f64)], count: usize) -> Vec<Vec<f64>> {
    halton_in_box_skip(bounds, count, 0)
}

/// As [`halton_in_box`], skipping the first `skip` sequence elements so two
/// point sets drawn from the same sequence do not overlap.
pub fn halton_in_box_skip(bounds: &[(f64, f64)], count: usize, skip: usize) -> Vec<Vec<f64>> {
    let dim = bounds.len();
    assert!(dim <= PRIMES.len(), "dimension too large for the prime table");
    (1 + skip..=count + skip)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let (lo, hi) = bounds[d];
                    lo + van_der_corput(i, PRIMES[d]) * (hi - lo)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_base2_points() {
        let pts = halton_points(1, 4);
        assert_eq!(pts[0][0], 0.5);
        assert_eq!(pts[1][0], 0.25);
        assert_eq!(pts[2][0], 0.75);
        assert_eq!(pts[3][0], 0.125);
    }

    #[test]
    fn points_stay_in_box() {
        let pts = halton_in_box(&[(-2.0, 3.0), (0.0, 1.0)], 100);
        for p in pts {
            assert!(p[0] >= -2.0 && p[0] <= 3.0);
            assert!(p[1] >= 0.0 && p[1] <= 1.0);
        }
    }
}
