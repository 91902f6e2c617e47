// Low-discrepancy sampling: Halton sequence with a seeded Cranley-Patterson
// shift, so distinct seeds give distinct but equally well spread samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Margin by which every closed box is shrunk before sampling.
pub const MARGIN: f64 = 1e-9;

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// `count` points of the shifted Halton sequence in `[0,1)^dim`.
pub fn halton(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    assert!(
        dim <= PRIMES.len(),
        "Halton sampling supports at most {} dimensions",
        PRIMES.len()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
    (0..count)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    let v = radical_inverse(i as u64 + 1, PRIMES[k]) + shift[k];
                    v - v.floor()
                })
                .collect()
        })
        .collect()
}

/// Map unit-cube samples onto a box `[lo+margin, hi-margin]` per axis.
pub fn to_box(unit: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    unit.iter()
        .zip(bounds)
        .map(|(u, &(lo, hi))| {
            let (a, b) = (lo + MARGIN, hi - MARGIN);
            a + u * (b - a)
        })
        .collect()
}

/// Samples of a box, shrunk by [`MARGIN`].
pub fn sample_box(bounds: &[(f64, f64)], count: usize, seed: u64) -> Vec<Vec<f64>> {
    halton(bounds.len(), count, seed)
        .iter()
        .map(|u| to_box(u, bounds))
        .collect()
}

/// The `2^d` corners of the shrunken box.
pub fn box_corners(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let d = bounds.len();
    (0..1usize << d)
        .map(|mask| {
            bounds
                .iter()
                .enumerate()
                .map(|(k, &(lo, hi))| {
                    if mask >> k & 1 == 1 {
                        hi - MARGIN
                    } else {
                        lo + MARGIN
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(2, 2), 0.25);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(1, 3), 1.0 / 3.0);
    }

    #[test]
    fn samples_stay_inside_shrunken_box() {
        let b = [(0.0, 1.0), (-2.0, 3.0), (0.1, 0.2)];
        for p in sample_box(&b, 500, 7) {
            for (v, (lo, hi)) in p.iter().zip(b) {
                assert!(*v >= lo + MARGIN && *v <= hi - MARGIN);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(halton(3, 20, 11), halton(3, 20, 11));
        assert_ne!(halton(3, 20, 11), halton(3, 20, 12));
    }

    #[test]
    fn one_dimensional_samples_are_well_spread() {
        let mut v: Vec<f64> = halton(1, 64, 3).into_iter().map(|p| p[0]).collect();
        v.sort_by(f64::total_cmp);
        let gap = v.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        assert!(gap < 2.0 / 64.0 + 1e-12, "{gap}");
    }

    #[test]
    fn corners_enumerate_all_vertices() {
        let c = box_corners(&[(0.0, 1.0), (2.0, 3.0)]);
        assert_eq!(c.len(), 4);
        assert!(c.iter().any(|p| p[0] > 0.5 && p[1] > 2.5));
    }
}
