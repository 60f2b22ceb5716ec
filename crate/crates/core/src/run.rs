//! Running a configured experiment end to end and writing its output files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::config::SimConfig;
use crate::metrics::{ecdf, write_ecdf_csv, write_requests_csv, Scope};
use crate::model::ClientRequest;
use crate::sim::{simulate, SimOutput};
use crate::time::SimTime;
use crate::workload::{export_trace, read_trace, replay_trace, write_trace, Generator, TimestampMode};
use crate::Error;

/// Loads the request source the config asks for: a replayed trace, or freshly
/// generated requests when the trace must also be written out.
fn materialize(cfg: &SimConfig) -> Result<Option<Vec<ClientRequest>>, Error> {
    if let Some(path) = &cfg.trace_in {
        let file = File::open(path).map_err(|source| Error::Input {
            path: path.clone(),
            source,
        })?;
        let rows = read_trace(std::io::BufReader::new(file))?;
        return Ok(Some(replay_trace(&rows, cfg.sla.get())?));
    }
    if cfg.trace_out.is_some() {
        let generator = Generator::new(cfg.workload(), cfg.seed, SimTime(cfg.end_time.get()))?;
        return Ok(Some(generator.collect()));
    }
    Ok(None)
}

/// Runs one simulation as configured. Writes the workload trace if `trace_out` is set.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput, Error> {
    cfg.validate()?;
    let settings = cfg.settings();
    match materialize(cfg)? {
        Some(requests) => {
            if let Some(path) = &cfg.trace_out {
                let rows = export_trace(&requests, TimestampMode::Creation);
                let file = create(path)?;
                write_trace(BufWriter::new(file), &rows)?;
            }
            Ok(simulate(settings, requests)?)
        }
        None => {
            let generator = Generator::new(cfg.workload(), cfg.seed, settings.end_time)?;
            Ok(simulate(settings, generator)?)
        }
    }
}

fn create(path: &Path) -> Result<File, Error> {
    File::create(path).map_err(|source| Error::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn write_with<F>(path: PathBuf, body: F) -> Result<PathBuf, Error>
where
    F: FnOnce(BufWriter<File>) -> std::io::Result<()>,
{
    let file = create(&path)?;
    body(BufWriter::new(file)).map_err(|source| Error::Output {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `report.json`, `requests.csv` and `ecdf_slowdown.csv` into `dir`; with
/// `emit_ecdf` also the stage-slowdown, wait and total-time ECDFs. Returns the
/// paths written.
pub fn write_outputs(dir: &Path, output: &SimOutput, emit_ecdf: bool) -> Result<Vec<PathBuf>, Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Output {
        path: dir.to_path_buf(),
        source,
    })?;
    let run = &output.run;
    let mut written = vec![
        write_with(dir.join("report.json"), |mut w| {
            use std::io::Write;
            w.write_all(run.report.to_json().as_bytes())?;
            w.flush()
        })?,
        write_with(dir.join("requests.csv"), |w| write_requests_csv(w, &run.records))?,
        write_with(dir.join("ecdf_slowdown.csv"), |w| write_ecdf_csv(w, &run.client_ecdf))?,
    ];
    if emit_ecdf {
        written.push(write_with(dir.join("ecdf_stage_slowdown.csv"), |w| {
            write_ecdf_csv(w, &run.stage_ecdf)
        })?);
        let clients = || run.records.iter().filter(|r| r.scope == Scope::Client);
        let waits: Vec<f64> = clients().map(|r| r.wait_us() as f64).collect();
        let totals: Vec<f64> = clients().map(|r| r.total_us() as f64).collect();
        for (name, values) in [("ecdf_wait.csv", waits), ("ecdf_total.csv", totals)] {
            let curve = ecdf(&values).unwrap_or_default();
            written.push(write_with(dir.join(name), |w| write_ecdf_csv(w, &curve))?);
        }
    }
    Ok(written)
}
