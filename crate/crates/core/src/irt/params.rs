use crate::numeric::sigmoid;
use serde::Serialize;

/// One item of the bifactor 2PL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ItemParams {
    pub a0: f64,
    pub ak: f64,
    pub b: f64,
    pub bench: usize,
}

/// `σ(a0 θ_0 + a_k θ_k(j) − b)`; `theta` has `K + 1` entries, general first.
pub fn irt_prob(item: &ItemParams, theta: &[f64]) -> f64 {
    sigmoid(item_logit(item, theta))
}

pub(crate) fn item_logit(item: &ItemParams, theta: &[f64]) -> f64 {
    item.a0 * theta[0] + item.ak * theta[1 + item.bench] - item.b
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IrtParams {
    pub items: Vec<ItemParams>,
    pub n_benches: usize,
}

impl IrtParams {
    pub fn new(a0: &[f64], ak: &[f64], b: &[f64], bench_of: &[usize]) -> Self {
        let n_benches = bench_of.iter().copied().max().map_or(0, |k| k + 1);
        let items = (0..b.len()).map(|j| ItemParams { a0: a0[j], ak: ak[j], b: b[j], bench: bench_of[j] }).collect();
        Self { items, n_benches }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Latent dimensions: general plus one per benchmark.
    pub fn dims(&self) -> usize {
        self.n_benches + 1
    }

    pub fn prob(&self, j: usize, theta: &[f64]) -> f64 {
        irt_prob(&self.items[j], theta)
    }

    pub fn a0(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.a0).collect()
    }

    pub fn ak(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.ak).collect()
    }

    pub fn b(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.b).collect()
    }
}
