use std::collections::HashSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde_json::json;

use super::report::{read_rows, summarize, write_rows, write_summary, ReportRow, SummaryRow};
use super::{io_err, run_cell_with_model, CellSpec, ExperimentError, SweepSpec};
use crate::models::save_checkpoint;

pub const ROWS_FILE: &str = "rows.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const METADATA_FILE: &str = "sweep.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub parallelism: usize,
    pub out_dir: PathBuf,
    /// Keep each trained model under `checkpoints/<cell id>.json`.
    pub save_checkpoints: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    /// One row per cell, in spec order.
    pub rows: Vec<ReportRow>,
    pub summary: Vec<SummaryRow>,
    /// Cells that were already present in the report and not re-run.
    pub resumed: usize,
    /// Curve points whose training diverged for every seed.
    pub all_seeds_diverged: Vec<String>,
}

pub fn run_sweep(spec: &SweepSpec, parallelism: usize, out_dir: &Path) -> Result<SweepOutcome, ExperimentError> {
    let opts = SweepOptions {
        parallelism,
        out_dir: out_dir.to_path_buf(),
        save_checkpoints: true,
    };
    run_sweep_with(spec, &opts, &|_, _, _| {})
}

fn metadata(spec: &SweepSpec) -> serde_json::Value {
    json!({
        "format": "attractor-sweep",
        "version": 1,
        "fingerprint": spec.fingerprint(),
        "protocol": spec.protocol(),
        "spec": spec,
        "rows": spec.row_count(),
        "columns": {
            "mean_dtw": "mean DTW over the evaluation initials",
            "se_dtw": "standard error over the evaluation initials",
            "diverged_count": "evaluation rollouts that produced a non-finite point",
            "train_diverged": "training loss became non-finite; statistics are -1 sentinels",
            "paper_mean": "published reference value, metadata only",
            "se_across_seeds": "summary only: standard error of per-seed means",
        },
        "wall_time_note": "CPU wall time, not comparable to published GPU runs",
    })
}

/// Runs every cell of `spec` not already in `out_dir/rows.csv`, appending
/// each row as it finishes. `progress` sees `(row, done, total)`.
pub fn run_sweep_with(
    spec: &SweepSpec,
    opts: &SweepOptions,
    progress: &(dyn Fn(&ReportRow, usize, usize) + Sync),
) -> Result<SweepOutcome, ExperimentError> {
    if opts.parallelism < 1 {
        return Err(ExperimentError::Config("parallelism must be at least 1".into()));
    }
    let cells = spec.cells()?;
    let fingerprint = spec.fingerprint();
    let out = &opts.out_dir;
    fs::create_dir_all(out).map_err(io_err(out))?;

    let meta_path = out.join(METADATA_FILE);
    if meta_path.exists() {
        let text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
        let found = serde_json::from_str::<serde_json::Value>(&text)
            .ok()
            .and_then(|v| v["fingerprint"].as_str().map(str::to_string))
            .unwrap_or_default();
        if found != fingerprint {
            return Err(ExperimentError::FingerprintMismatch {
                path: meta_path,
                expected: fingerprint,
                found,
            });
        }
    }

    let rows_path = out.join(ROWS_FILE);
    let mut existing = if rows_path.exists() { read_rows(&rows_path)? } else { Vec::new() };
    if let Some(bad) = existing.iter().find(|r| r.config_fingerprint != fingerprint) {
        return Err(ExperimentError::FingerprintMismatch {
            path: rows_path,
            expected: fingerprint,
            found: bad.config_fingerprint.clone(),
        });
    }
    // rewrite without any partial trailing line, keeping the first copy of each cell
    let mut seen = HashSet::new();
    existing.retain(|r| seen.insert(r.key()));
    write_rows(&rows_path, &existing)?;
    let meta = serde_json::to_string_pretty(&metadata(spec)).expect("metadata serializes");
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;

    let pending: Vec<&CellSpec> = cells
        .iter()
        .filter(|c| {
            !seen.contains(&(
                c.attractor.name().to_string(),
                c.model,
                c.dropout.to_bits(),
                c.n_train,
                c.seed,
            ))
        })
        .collect();
    let resumed = cells.len() - pending.len();
    if opts.save_checkpoints {
        let dir = out.join(CHECKPOINT_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }

    let file = OpenOptions::new().append(true).open(&rows_path).map_err(io_err(&rows_path))?;
    let writer = Mutex::new((file, resumed));
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<ExperimentError>> = Mutex::new(None);
    let new_rows = Mutex::new(Vec::new());

    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= pending.len() || failed.load(Ordering::SeqCst) {
            break;
        }
        let cell = pending[i];
        let result = run_cell_with_model(cell).and_then(|(row, model)| {
            if let (true, Some(model)) = (opts.save_checkpoints, model) {
                let path = out.join(CHECKPOINT_DIR).join(format!("{}.json", cell.id()));
                save_checkpoint(&model, &path)?;
            }
            let mut guard = writer.lock().expect("writer lock");
            let (file, done) = &mut *guard;
            file.write_all(row.to_csv_line().as_bytes())
                .and_then(|_| file.flush())
                .map_err(io_err(&rows_path))?;
            *done += 1;
            progress(&row, *done, cells.len());
            Ok(row)
        });
        match result {
            Ok(row) => new_rows.lock().expect("rows lock").push(row),
            Err(e) => {
                failed.store(true, Ordering::SeqCst);
                first_error.lock().expect("error lock").get_or_insert(e);
                break;
            }
        }
    };
    std::thread::scope(|s| {
        for _ in 1..opts.parallelism.min(pending.len().max(1)) {
            s.spawn(work);
        }
        work();
    });
    if let Some(e) = first_error.into_inner().expect("error lock") {
        return Err(e);
    }

    let mut all = existing;
    all.extend(new_rows.into_inner().expect("rows lock"));
    let order = |r: &ReportRow| {
        cells
            .iter()
            .position(|c| {
                (c.attractor.name().to_string(), c.model, c.dropout.to_bits(), c.n_train, c.seed) == r.key()
            })
            .unwrap_or(usize::MAX)
    };
    all.sort_by_key(order);
    let rows: Vec<ReportRow> = all.into_iter().filter(|r| order(r) != usize::MAX).collect();
    let summary = summarize(spec, &rows);
    write_summary(&out.join(SUMMARY_FILE), &summary)?;
    let all_seeds_diverged = summary
        .iter()
        .filter(|s| s.seeds > 0 && s.diverged_seeds == s.seeds)
        .map(|s| format!("{}/{}/dropout={}/n_train={}", s.attractor, s.model, s.dropout, s.n_train))
        .collect();
    Ok(SweepOutcome {
        rows,
        summary,
        resumed,
        all_seeds_diverged,
    })
}
