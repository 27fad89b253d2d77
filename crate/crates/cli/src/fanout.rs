//! Repetitions spread over worker processes.
//!
//! The parent writes the resolved configuration into the run directory
//! and re-executes itself once per worker with a hidden unit list. Each
//! worker runs its units and leaves one JSON file per unit under
//! `parts/`; the parent reads them back in unit order, so the merged
//! result does not depend on the worker count.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Kind};
use crate::output::{read_json, write_json};

/// How the current process takes part in a run.
#[derive(Debug, Clone)]
pub enum Role {
    /// Owns the run; spreads units over at most `jobs` processes.
    Parent { jobs: usize },
    /// Runs the listed units for a parent.
    Worker { units: Vec<usize> },
}

pub struct Fanout<'a> {
    pub command: &'a str,
    pub run_dir: &'a Path,
    pub role: &'a Role,
}

fn part_path(run_dir: &Path, unit: usize) -> PathBuf {
    run_dir.join("parts").join(format!("unit_{unit}.json"))
}

/// Parses the hidden `--worker-units` list.
pub fn parse_units(raw: &str) -> Result<Vec<usize>, CliError> {
    raw.split(',')
        .map(|s| s.trim().parse().map_err(|_| CliError::config(format!("bad unit list `{raw}`"))))
        .collect()
}

impl Fanout<'_> {
    /// Runs units `0..count` and returns their results in order, or
    /// `None` in a worker, whose results go to the parent via files.
    pub fn run<T, F>(&self, count: usize, unit: F) -> Result<Option<Vec<T>>, CliError>
    where
        T: Serialize + DeserializeOwned,
        F: Fn(usize) -> Result<T, CliError>,
    {
        match self.role {
            Role::Worker { units } => {
                for &u in units {
                    if u >= count {
                        return Err(CliError::config(format!("unit {u} out of range 0..{count}")));
                    }
                    write_json(&part_path(self.run_dir, u), &unit(u)?)?;
                }
                Ok(None)
            }
            Role::Parent { jobs } if *jobs <= 1 || count <= 1 => (0..count).map(unit).collect::<Result<_, _>>().map(Some),
            Role::Parent { jobs } => self.spawn(count, (*jobs).min(count)).map(Some),
        }
    }

    fn spawn<T: DeserializeOwned>(&self, count: usize, workers: usize) -> Result<Vec<T>, CliError> {
        let exe = std::env::current_exe().map_err(|e| CliError::data(format!("cannot locate own executable: {e}")))?;
        let config = self.run_dir.join("config.json");
        let mut children = Vec::with_capacity(workers);
        for w in 0..workers {
            let units: Vec<String> = (w..count).step_by(workers).map(|u| u.to_string()).collect();
            log::info!("worker {w}: units {}", units.join(","));
            let child = Command::new(&exe)
                .arg(self.command)
                .arg("--config")
                .arg(&config)
                .arg("--worker-units")
                .arg(units.join(","))
                .arg("--worker-dir")
                .arg(self.run_dir)
                .stdout(Stdio::null())
                .spawn()
                .map_err(|e| CliError::data(format!("cannot start worker: {e}")))?;
            children.push(child);
        }
        let mut failure = None;
        for (w, mut child) in children.into_iter().enumerate() {
            let status = child.wait().map_err(|e| CliError::data(format!("worker {w}: {e}")))?;
            if !status.success() && failure.is_none() {
                let kind = match status.code() {
                    Some(1) => Kind::Config,
                    Some(3) => Kind::Check,
                    _ => Kind::Data,
                };
                failure = Some(CliError { kind, message: format!("worker {w} failed ({status})") });
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        let out = (0..count).map(|u| read_json(&part_path(self.run_dir, u))).collect::<Result<Vec<T>, _>>()?;
        let parts = self.run_dir.join("parts");
        std::fs::remove_dir_all(&parts).map_err(|e| CliError::io(&parts, e))?;
        Ok(out)
    }
}
