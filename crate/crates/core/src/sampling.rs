//! Seeded space-filling designs.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

/// Plain Latin hypercube over the box `[lb, ub]`: every coordinate's `n`
/// equal-width strata are each hit exactly once, with a uniform draw inside
/// the stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, lb: &[f64], ub: &[f64], rng: &mut R) -> Vec<DVector<f64>> {
    let dim = lb.len();
    let mut points = vec![DVector::zeros(dim); n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        let width = (ub[d] - lb[d]) / n as f64;
        for (point, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.gen();
            point[d] = (lb[d] + (s as f64 + u) * width).clamp(lb[d], ub[d]);
        }
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_point_per_stratum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lb = [-10.0, 0.0, 5.0];
        let ub = [10.0, 1.0, 6.0];
        let pts = latin_hypercube(7, &lb, &ub, &mut rng);
        assert_eq!(pts.len(), 7);
        for d in 0..3 {
            let width = (ub[d] - lb[d]) / 7.0;
            let mut hit = [false; 7];
            for p in &pts {
                assert!(p[d] >= lb[d] && p[d] <= ub[d]);
                let s = (((p[d] - lb[d]) / width).floor() as usize).min(6);
                assert!(!hit[s]);
                hit[s] = true;
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = latin_hypercube(5, &[0.0; 2], &[1.0; 2], &mut ChaCha8Rng::seed_from_u64(9));
        let b = latin_hypercube(5, &[0.0; 2], &[1.0; 2], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
