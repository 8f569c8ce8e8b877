//! Wall time of producing every user's full recommendation list.

use std::hint::black_box;
use std::time::Instant;

use bidistill::ranking::full_rank;
use bidistill::{Dataset, FactorModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub model: String,
    pub dim: usize,
    pub parameter_count: usize,
    pub users: usize,
    pub repetitions: usize,
    pub min_secs: f64,
    pub mean_secs: f64,
}

/// Ranks all non-training items for every user, `repetitions` times,
/// on the calling thread.
pub fn measure_latency(name: &str, model: &FactorModel, dataset: &Dataset, repetitions: usize) -> LatencyStats {
    let reps = repetitions.max(1);
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        for u in 0..dataset.n() as u32 {
            let candidates = dataset.candidates(u, None);
            black_box(full_rank(model, u, &candidates));
        }
        times.push(start.elapsed().as_secs_f64());
    }
    LatencyStats {
        model: name.to_string(),
        dim: model.dim(),
        parameter_count: model.parameter_count(),
        users: dataset.n(),
        repetitions: reps,
        min_secs: times.iter().copied().fold(f64::INFINITY, f64::min),
        mean_secs: times.iter().sum::<f64>() / reps as f64,
    }
}
