//! Token-budget batches over length-sorted pairs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits item indices into batches whose summed `cost` stays within
/// `budget` (a single oversized item forms its own batch). Items are sorted
/// by cost with ties in random order, and the batch order is shuffled too,
/// both driven by `seed`.
pub fn make_batches(costs: &[usize], budget: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| costs[i]);
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut used = 0;
    for i in order {
        if !cur.is_empty() && used + costs[i] > budget {
            batches.push(std::mem::take(&mut cur));
            used = 0;
        }
        cur.push(i);
        used += costs[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches.shuffle(&mut rng);
    batches
}
