#![allow(dead_code)]

use survstack::rng::SimRng;
use survstack::survdata::{SurvivalDataset, SurvivalRecord};

/// Small dataset with distinct times and at least one event.
pub fn random_dataset(n: usize, p: usize, seed: u64) -> SurvivalDataset {
    let mut rng = SimRng::new(seed, 99);
    let mut records: Vec<SurvivalRecord> = (0..n)
        .map(|i| {
            let x = (0..p).map(|_| rng.standard_normal()).collect();
            let t = (i + 1) as f64 * 0.5 + 0.1 * rng.uniform();
            SurvivalRecord::new(x, t, rng.uniform() < 0.7)
        })
        .collect();
    // shuffle so record order differs from time order
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        records.swap(i, j);
    }
    if !records.iter().any(|r| r.event) {
        records[0].event = true;
    }
    SurvivalDataset::new(records, None).unwrap()
}

/// Log partial likelihood by direct enumeration of each risk set.
pub fn brute_partial_loglik(ds: &SurvivalDataset, beta: &[f64]) -> f64 {
    let eta = |r: &SurvivalRecord| r.covariates.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
    let mut total = 0.0;
    for i in ds.records() {
        if !i.event {
            continue;
        }
        let denom: f64 = ds
            .records()
            .iter()
            .filter(|j| j.time >= i.time)
            .map(|j| eta(j).exp())
            .sum();
        total += eta(i) - denom.ln();
    }
    total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
