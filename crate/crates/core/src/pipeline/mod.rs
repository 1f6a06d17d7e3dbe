//! End-to-end orchestration: dataset generation, joint training, inference,
//! evaluation, ablations and the mask robustness sweep.

pub mod dataset;
pub mod eval;
pub mod metrics;
pub mod panel;
pub mod train;

use std::thread;

pub use dataset::{
    generate_dataset, load_cases, prepare, simulate_dataset, Case, DatasetConfig, Manifest, Prepared, Split,
};
pub use eval::{
    correct, correct_image, correct_scan, evaluate, robustness_sweep, sweep_means, EvalOptions, EvalReport, Method,
    MethodSummary, MetricRow, Models, Reference, ScanCorrection, SweepRow,
};
pub use metrics::{case_metrics, metal_roi, rmse_hu, ssim, CaseMetrics, Region};
pub use panel::Window;
pub use train::{train, EpochLog, TrainConfig, Trained};

/// Map `f` over `items` on all available cores. Results keep the input order,
/// and each item is processed independently, so the output does not depend
/// on the thread count.
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(items.len());
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}
