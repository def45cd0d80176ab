use super::{DataError, ResponseMatrix};
use crate::numeric::seeded_rng;
use rand::seq::{IndexedRandom, SliceRandom};

/// Items drawn for one bootstrap replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSubset {
    pub replication: usize,
    /// Selected item indices, grouped by benchmark in benchmark order.
    pub items: Vec<usize>,
    /// Benchmark index used for each selected item: the item's own
    /// benchmark, or a shuffled label when permuted.
    pub bench_of: Vec<usize>,
    pub r_k: Vec<usize>,
    pub permuted: bool,
}

impl ItemSubset {
    /// Response matrix restricted to the subset, carrying its benchmark map.
    pub fn apply(&self, rm: &ResponseMatrix) -> Result<ResponseMatrix, DataError> {
        rm.select_items_mapped(&self.items, Some(&self.bench_of))
    }

    /// Selected item count per benchmark under the subset's map.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.r_k.len()];
        for &b in &self.bench_of {
            c[b] += 1;
        }
        c
    }
}

/// Draws `r_k[k]` items without replacement from each benchmark. With
/// `permute`, benchmark labels are shuffled over the selected items, which
/// keeps every benchmark's count.
pub fn sample_item_subset(
    rm: &ResponseMatrix,
    r_k: &[usize],
    seed: u64,
    permute: bool,
) -> Result<ItemSubset, DataError> {
    if r_k.len() != rm.n_benches() {
        return Err(DataError::Invalid(format!(
            "{} per-benchmark counts for {} benchmarks",
            r_k.len(),
            rm.n_benches()
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut items = Vec::new();
    let mut bench_of = Vec::new();
    for (k, &r) in r_k.iter().enumerate() {
        let pool = rm.items_of_bench(k);
        if r > pool.len() {
            return Err(DataError::SubsetTooLarge {
                bench: rm.bench_names()[k].clone(),
                requested: r,
                available: pool.len(),
            });
        }
        let mut chosen: Vec<usize> = pool.choose_multiple(&mut rng, r).copied().collect();
        chosen.sort_unstable();
        bench_of.extend(std::iter::repeat_n(k, r));
        items.extend(chosen);
    }
    if permute {
        bench_of.shuffle(&mut rng);
    }
    Ok(ItemSubset { replication: 0, items, bench_of, r_k: r_k.to_vec(), permuted: permute })
}
