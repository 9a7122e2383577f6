//! iPEPS time evolution with per-record CTMRG measurement, incremental CSV
//! output and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dtc_core::environment::{ctmrg_converge, CtmOptions, SiteRdm};
use dtc_core::evolve::{run_floquet, EvolveOptions, MeasurePoint};
use dtc_core::model::build_floquet_schedule_sliced;
use dtc_core::observables::{measure, read_csv, write_csv, CsvSink, MeasurementRecord};
use dtc_core::state::{init_product_state, Checkpoint, UnitCell};
use dtc_core::tensor::DenseTensor;
use num_complex::Complex64 as C64;

use crate::config::RunConfig;
use crate::error::CliError;

/// Checkpoint entry holding the number of CSV rows written so far.
const ROWS_KEY: &str = "run.rows";

/// Files of one iPEPS run.
#[derive(Clone, Debug)]
pub struct IpepsPaths {
    pub csv: PathBuf,
    pub checkpoint: PathBuf,
}

/// Evolves at bond dimension `bond` for `cfg.n_cycles` periods and returns
/// every record of the run, including ones restored on resume.
pub fn run_ipeps(cfg: &RunConfig, bond: usize, paths: &IpepsPaths, resume: bool) -> Result<Vec<MeasurementRecord>, CliError> {
    run_ipeps_observed(cfg, bond, paths, resume, &mut |_, _| {})
}

/// [`run_ipeps`], also handing each new record and its one-site states to `observer`.
pub fn run_ipeps_observed(
    cfg: &RunConfig,
    bond: usize,
    paths: &IpepsPaths,
    resume: bool,
    observer: &mut dyn FnMut(&MeasurementRecord, &[SiteRdm; 2]),
) -> Result<Vec<MeasurementRecord>, CliError> {
    let schedule = build_floquet_schedule_sliced(&cfg.model, cfg.flip_slices)?;
    let ctm = CtmOptions { chi: cfg.chi_for(bond), tol: cfg.ctm_tol, max_iter: cfg.ctm_max_iter };
    let restored = if resume { restore(cfg, bond, paths)? } else { None };

    let (mut cell, start, mut records, emit_initial) = match restored {
        Some(r) => (r.cell, r.cycle, r.records, false),
        None => (init_product_state(cfg.initial_state, cfg.model.levels, bond)?, 0, Vec::new(), true),
    };
    let file = if emit_initial {
        File::create(&paths.csv).map_err(CliError::io(&paths.csv))?
    } else {
        OpenOptions::new().append(true).open(&paths.csv).map_err(CliError::io(&paths.csv))?
    };
    let mut sink = CsvSink::new(file, emit_initial)?;
    if start >= cfg.n_cycles {
        log::info!("D={bond}: checkpoint already at cycle {start}, nothing to do");
        return Ok(records);
    }

    let options = EvolveOptions { max_bond: bond, svd_cutoff: cfg.svd_cutoff, cadence: cfg.cadence, emit_initial };
    let end = cfg.n_cycles;
    let mut clock = Instant::now();
    let mut cycle_trunc = 0.0f64;
    let hook = |point: &MeasurePoint, cell: &UnitCell| -> Result<(), CliError> {
        // every measurement starts from the trivial boundary: warm starts from the
        // previous record can lock into slowly decaying modes
        let e = ctmrg_converge(cell, &ctm)?;
        let (mut rec, rdms) = measure(cell, &e, cfg.initial_state, point.cycle, point.time)?;
        rec.trunc_weight_max = point.max_truncation;
        observer(&rec, &rdms);
        sink.push(&rec)?;
        records.push(rec);
        cycle_trunc = cycle_trunc.max(point.max_truncation);
        if point.stroboscopic {
            let due = point.cycle == end || (cfg.checkpoint_interval > 0 && point.cycle % cfg.checkpoint_interval == 0);
            if due && point.cycle > start {
                save(cell, point, records.len(), &paths.checkpoint)?;
            }
            if point.cycle > start {
                let r = records.last().expect("just pushed");
                log::info!(
                    "D={bond} cycle {} wall {:.2}s max_trunc {:.3e} czz_mean {:+.6} ctm_iters {}",
                    point.cycle,
                    clock.elapsed().as_secs_f64(),
                    cycle_trunc,
                    r.czz_mean(),
                    r.ctm_iters
                );
            }
            clock = Instant::now();
            cycle_trunc = 0.0;
        }
        Ok(())
    };
    run_floquet(&mut cell, &schedule, start, end - start, &options, hook)?;
    Ok(records)
}

fn save(cell: &UnitCell, point: &MeasurePoint, rows: usize, path: &Path) -> Result<(), CliError> {
    let extra = vec![(ROWS_KEY.to_string(), DenseTensor::from_fn(&[1], |_| C64::new(rows as f64, 0.0)))];
    let ckpt = Checkpoint { cell: cell.clone(), cycle: point.cycle as u64, time: point.time, extra };
    ckpt.save(path).map_err(|e| match e {
        dtc_core::state::StateError::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        other => other.into(),
    })
}

struct Restored {
    cell: UnitCell,
    cycle: usize,
    records: Vec<MeasurementRecord>,
}

/// Loads the checkpoint and trims the CSV to the rows it accounts for.
fn restore(cfg: &RunConfig, bond: usize, paths: &IpepsPaths) -> Result<Option<Restored>, CliError> {
    if !paths.checkpoint.exists() {
        log::warn!("no checkpoint at {}, starting from the initial state", paths.checkpoint.display());
        return Ok(None);
    }
    let ckpt = Checkpoint::load(&paths.checkpoint).map_err(|e| match e {
        dtc_core::state::StateError::Io(source) => CliError::Io { path: paths.checkpoint.clone(), source },
        other => other.into(),
    })?;
    if ckpt.cell.levels != cfg.model.levels || ckpt.cell.max_bond != bond {
        return Err(CliError::Output(format!(
            "checkpoint {} has d_a={} D_max={}, the run needs d_a={} D_max={}",
            paths.checkpoint.display(),
            ckpt.cell.levels,
            ckpt.cell.max_bond,
            cfg.model.levels,
            bond
        )));
    }
    let rows = ckpt
        .extra
        .iter()
        .find(|(n, _)| n == ROWS_KEY)
        .map(|(_, t)| t.data()[0].re as usize)
        .ok_or_else(|| CliError::Output(format!("checkpoint {} has no row count", paths.checkpoint.display())))?;
    let file = File::open(&paths.csv).map_err(CliError::io(&paths.csv))?;
    let mut records = read_csv(BufReader::new(file))?;
    if records.len() < rows {
        return Err(CliError::Output(format!(
            "{} has {} rows but the checkpoint expects {rows}",
            paths.csv.display(),
            records.len()
        )));
    }
    records.truncate(rows);
    let tmp = paths.csv.with_extension("csv.tmp");
    write_csv(File::create(&tmp).map_err(CliError::io(&tmp))?, &records)?;
    std::fs::rename(&tmp, &paths.csv).map_err(CliError::io(&paths.csv))?;
    log::info!("D={bond}: resumed from cycle {} with {rows} records", ckpt.cycle);
    Ok(Some(Restored { cell: ckpt.cell, cycle: ckpt.cycle as usize, records }))
}
