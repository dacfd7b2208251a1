//! Parameter sweeps: rerun the pipeline across fold counts or masking
//! ratios and emit one CSV row per configuration.

use zigzag_core::eval::corloc;
use zigzag_core::model::MinedInstance;

use crate::formats::round_sig;
use crate::manifest::Dataset;
use crate::pipeline::{execute_run, RunOptions};
use crate::Result;

pub const SWEEP_FOLD_COUNTS: [usize; 5] = [1, 2, 3, 4, 5];
pub const SWEEP_MASK_RATIOS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    FoldCount,
    MaskRatio,
}

impl std::str::FromStr for SweepKind {
    type Err = crate::HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(SweepKind::FoldCount),
            "tau" => Ok(SweepKind::MaskRatio),
            other => Err(crate::HarnessError::InvalidArgument(format!(
                "unknown sweep {other:?}, expected k or tau"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub k: usize,
    pub tau: f64,
    pub mean_corloc: f64,
    pub initial_corloc: f64,
}

/// Run the sweep and return one row per configuration. The fold-count sweep
/// holds tau at the base value; the mask-ratio sweep holds K.
pub fn run_sweep(dataset: &Dataset, base: &RunOptions, kind: SweepKind) -> Result<Vec<SweepRow>> {
    let configs: Vec<(usize, f64)> = match kind {
        SweepKind::FoldCount => SWEEP_FOLD_COUNTS
            .iter()
            .map(|&k| (k, base.mask_ratio))
            .filter(|&(k, _)| k <= dataset.records.len())
            .collect(),
        SweepKind::MaskRatio => {
            SWEEP_MASK_RATIOS.iter().map(|&tau| (base.fold_count, tau)).collect()
        }
    };
    let mut rows = Vec::with_capacity(configs.len());
    for (k, tau) in configs {
        let options = RunOptions { fold_count: k, mask_ratio: tau, ..base.clone() };
        let artifacts = execute_run(dataset, &options)?;
        let initial = initial_corloc(dataset, &options)?;
        rows.push(SweepRow {
            k,
            tau,
            mean_corloc: artifacts.final_corloc().unwrap_or(0.0),
            initial_corloc: initial,
        });
    }
    Ok(rows)
}

/// CorLoc of the raw heat-map mining, before any retraining, as a baseline
/// column for the sweep tables.
fn initial_corloc(dataset: &Dataset, options: &RunOptions) -> Result<f64> {
    let mining = crate::pipeline::compute_initial_mining(dataset, options.grid_step)?;
    let predictions: Vec<MinedInstance> = mining.instances.values().flatten().cloned().collect();
    let report = corloc(&predictions, &dataset.ground_truth)
        .map_err(|e| crate::HarnessError::Runtime(e.to_string()))?;
    Ok(report.mean)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,tau,mean_corloc,initial_corloc\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.k,
            round_sig(row.tau),
            round_sig(row.mean_corloc),
            round_sig(row.initial_corloc)
        ));
    }
    out
}
