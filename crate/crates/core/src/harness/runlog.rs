use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub run: String,
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub penalty: f64,
    pub passes: Option<u64>,
    pub step_norm: Option<f64>,
    pub path_length: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub run: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub path_length: Option<f64>,
    pub l2_from_init: f64,
    pub param_from_init: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

/// Everything a run did, written to `run.json` once it ends.
#[derive(Clone, Debug, Serialize)]
pub struct RunLog {
    pub version: &'static str,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub error: Option<String>,
    /// Files written, relative to the output directory. After a failure
    /// these are partial.
    pub outputs: Vec<String>,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub final_metrics: BTreeMap<String, f64>,
    pub wall_clock_secs: f64,
}

impl RunLog {
    pub fn new(config: ExperimentConfig) -> Self {
        RunLog {
            version: env!("CARGO_PKG_VERSION"),
            config,
            status: RunStatus::Running,
            error: None,
            outputs: Vec::new(),
            steps: Vec::new(),
            epochs: Vec::new(),
            final_metrics: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Output directory that remembers what it has written.
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Renders into memory with `fill`, then writes atomically.
    pub fn write_with(&mut self, name: &str, fill: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        write_atomic(&self.root.join(name), &buf)?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    /// A CSV file of serializable records with the header taken from the field names.
    pub fn write_records<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<()> {
        self.write_with(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            for r in records {
                w.serialize(r)?;
            }
            w.flush()?;
            Ok(())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(&dir.path().join("nested")).unwrap();
        out.write_with("a.txt", |b| {
            b.extend_from_slice(b"x");
            Ok(())
        })
        .unwrap();
        out.write_with("a.txt", |b| {
            b.extend_from_slice(b"yz");
            Ok(())
        })
        .unwrap();
        let names: Vec<_> = fs::read_dir(out.root()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names, vec![std::ffi::OsString::from("a.txt")]);
        assert_eq!(fs::read(out.root().join("a.txt")).unwrap(), b"yz");
        assert_eq!(out.written(), ["a.txt"]);
    }

    #[test]
    fn records_become_csv_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        let rec = StepRecord {
            run: "r".into(),
            epoch: 1,
            step: 2,
            loss: 0.5,
            penalty: 0.0,
            passes: Some(2),
            step_norm: Some(1.0),
            path_length: None,
        };
        out.write_records("m.csv", &[rec]).unwrap();
        let text = fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(text, "run,epoch,step,loss,penalty,passes,step_norm,path_length\nr,1,2,0.5,0.0,2,1.0,\n");
    }
}
