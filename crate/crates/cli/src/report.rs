//! Metadata and summary emission for experiment runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::HarnessError;

/// What a run produced: the output directory, every file written, and the
/// scalar summary metrics in emission order.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Vec<(String, String)>,
}

impl ReportBundle {
    pub fn new(output_dir: &Path) -> Self {
        Self { output_dir: output_dir.to_path_buf(), files: Vec::new(), summary: Vec::new() }
    }

    pub fn track(&mut self, path: PathBuf) -> PathBuf {
        self.files.push(path.clone());
        path
    }

    pub fn metric(&mut self, key: &str, value: String) {
        self.summary.push((key.to_string(), value));
    }

    pub fn metric_f64(&mut self, key: &str, value: f64) {
        self.metric(key, enki_core::io::format_float(value));
    }

    pub fn metric_for(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn metric_as_f64(&self, key: &str) -> Option<f64> {
        self.metric_for(key).and_then(|v| v.parse().ok())
    }
}

/// Writes the full config echo plus derived run facts as `key = value`
/// lines. The output path itself is deliberately not echoed so reruns into
/// different directories stay comparable.
pub fn write_metadata(
    bundle: &mut ReportBundle,
    cfg: &ExperimentConfig,
    derived: &[(String, String)],
) -> Result<(), HarnessError> {
    let path = bundle.track(bundle.output_dir.join("metadata.txt"));
    let mut out = BufWriter::new(File::create(path).map_err(runtime)?);
    writeln!(out, "# run metadata").map_err(runtime)?;
    for (k, v) in cfg.echo() {
        writeln!(out, "{k} = {v}").map_err(runtime)?;
    }
    writeln!(out, "rng_algorithm = {}", enki_core::rng::RNG_ALGORITHM).map_err(runtime)?;
    writeln!(out, "library_version = {}", env!("CARGO_PKG_VERSION")).map_err(runtime)?;
    for (k, v) in derived {
        writeln!(out, "{k} = {v}").map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;
    Ok(())
}

pub fn write_summary(bundle: &mut ReportBundle) -> Result<(), HarnessError> {
    let path = bundle.track(bundle.output_dir.join("summary.txt"));
    let mut out = BufWriter::new(File::create(path).map_err(runtime)?);
    for (k, v) in &bundle.summary {
        writeln!(out, "{k} = {v}").map_err(runtime)?;
    }
    out.flush().map_err(runtime)?;
    Ok(())
}

fn runtime(e: std::io::Error) -> HarnessError {
    HarnessError::Runtime(format!("i/o failure: {e}"))
}
