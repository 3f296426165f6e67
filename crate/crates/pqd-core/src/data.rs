//! Toy benchmark dataset: a 2D mixture of 8 unit-weight Gaussians on a
//! circle of radius 4 with stddev 0.3. The class id of a point is its
//! mixture component.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::batch::{Condition, SampleBatch};

pub const NUM_COMPONENTS: u32 = 8;
pub const RADIUS: f64 = 4.0;
pub const COMPONENT_STDDEV: f64 = 0.3;

/// Mixture component centers, evenly spaced on the circle.
pub fn component_centers() -> Vec<[f64; 2]> {
    (0..NUM_COMPONENTS)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / NUM_COMPONENTS as f64;
            [RADIUS * theta.cos(), RADIUS * theta.sin()]
        })
        .collect()
}

/// Draws `n` points; conditions carry the component id when `labeled`.
pub fn eight_gaussians(n: usize, seed: u64, labeled: bool) -> SampleBatch {
    let centers = component_centers();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut conds = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.gen_range(0..NUM_COMPONENTS);
        let c = centers[k as usize];
        data.push(c[0] + COMPONENT_STDDEV * rng.sample::<f64, _>(StandardNormal));
        data.push(c[1] + COMPONENT_STDDEV * rng.sample::<f64, _>(StandardNormal));
        conds.push(Condition::Class(k));
    }
    let batch = SampleBatch::new(n, 2, data).expect("finite by construction");
    if labeled {
        batch.with_conditions(conds).expect("length matches")
    } else {
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_cluster_near_their_centers() {
        let b = eight_gaussians(500, 1, true);
        let centers = component_centers();
        for i in 0..b.rows() {
            let Condition::Class(k) = b.condition_of(i) else {
                panic!("expected class condition")
            };
            let c = centers[k as usize];
            let d = ((b.row(i)[0] - c[0]).powi(2) + (b.row(i)[1] - c[1]).powi(2)).sqrt();
            assert!(d < 6.0 * COMPONENT_STDDEV, "point {i} too far from center");
        }
    }

    #[test]
    fn seeded_and_unlabeled() {
        let a = eight_gaussians(32, 9, false);
        let b = eight_gaussians(32, 9, false);
        assert_eq!(a.data(), b.data());
        assert!(a.conditions().is_none());
    }
}
