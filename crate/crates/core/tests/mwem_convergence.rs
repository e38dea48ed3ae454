use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use vpam::dp::PrivacyBudget;
use vpam::engine::{method_workload, run_method, EngineConfig, Method};
use vpam::eval::workload_error;
use vpam::tabular::{DiscreteDataset, Schema};

fn chained_binary(d: usize, n: usize, seed: u64) -> DiscreteDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let rows: Vec<Vec<u32>> = (0..n)
        .map(|_| {
            let mut row = Vec::with_capacity(d);
            for j in 0..d {
                let v = if j > 0 && rng.random_bool(0.6) { row[j - 1] } else { rng.random_range(0..2) };
                row.push(v);
            }
            row
        })
        .collect();
    let schema = Schema::anonymous(&vec![2; d]).unwrap().with_public_fraction(0.5).unwrap();
    DiscreteDataset::from_rows(schema, &rows).unwrap()
}

fn vpmw_error(data: &DiscreteDataset, rounds: usize) -> f64 {
    let mut config = EngineConfig::new(PrivacyBudget::from_dp(100.0, 1e-6).unwrap(), 0);
    config.rounds = rounds;
    let w = method_workload(Method::Vpmw, data, 3, false).unwrap();
    let out = run_method(Method::Vpmw, data, &w, &config).unwrap();
    workload_error(data, &out.data, 3).unwrap().total_error
}

#[test]
fn vpmw_error_falls_with_more_rounds() {
    let data = chained_binary(4, 2000, 61);
    let short = vpmw_error(&data, 100);
    let long = vpmw_error(&data, 1000);
    assert!(long < 0.05, "T=1000 error {long}");
    assert!(long < short / 1.5, "T=100 {short} vs T=1000 {long}");
}
