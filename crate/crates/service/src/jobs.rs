//! Simulation jobs: submitted over HTTP, run on the blocking pool, persisted as one JSON
//! file per job under `<data-dir>/simulations`.

use std::fs;
use std::path::{Path, PathBuf};

use doseopt::conduct::{DesignVariant, TrialDesign};
use doseopt::estimand::StrategyMap;
use doseopt::model::{DesignConfig, UtilitySpec};
use doseopt::simulator::{OperatingCharacteristics, Scenario};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Deserialize)]
pub struct SimulationRequest {
    pub scenario: Scenario,
    #[serde(default)]
    pub config: Option<DesignConfig>,
    #[serde(default)]
    pub spec: Option<UtilitySpec>,
    #[serde(default)]
    pub strategy_map: Option<StrategyMap>,
    #[serde(default)]
    pub variant: DesignVariant,
    pub reps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; capped by the service's maximum.
    #[serde(default)]
    pub parallelism: Option<usize>,
}

impl SimulationRequest {
    /// Design simulated by this request: the case-study defaults for anything omitted and
    /// the scenario's dose grid.
    pub fn design(&self) -> TrialDesign {
        let base = TrialDesign::case_study();
        TrialDesign::new(
            self.config.clone().unwrap_or(base.config),
            self.spec.clone().unwrap_or(base.spec),
            self.scenario.dose_grid.clone(),
            self.strategy_map.clone().unwrap_or(base.strategy_map),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationJob {
    pub job_id: String,
    pub status: JobStatus,
    pub variant: DesignVariant,
    pub reps: u64,
    pub seed: u64,
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OperatingCharacteristics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct JobStore {
    dir: PathBuf,
}

impl JobStore {
    /// Opens the job directory; jobs left running by a previous process are marked failed.
    pub fn open(dir: PathBuf) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        let store = JobStore { dir };
        for entry in fs::read_dir(&store.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Ok(mut job) = read_job(&path) {
                    if job.status == JobStatus::Running {
                        job.status = JobStatus::Failed;
                        job.error = Some("interrupted by a service restart".into());
                        store.save(&job)?;
                    }
                }
            }
        }
        Ok(store)
    }

    fn path(&self, job_id: &str) -> ApiResult<PathBuf> {
        if job_id.is_empty() || !job_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') {
            return Err(ApiError::not_found(format!("unknown simulation {job_id}")));
        }
        Ok(self.dir.join(format!("{job_id}.json")))
    }

    pub fn save(&self, job: &SimulationJob) -> std::io::Result<()> {
        let final_path = self.dir.join(format!("{}.json", job.job_id));
        let tmp = self.dir.join(format!("{}.json.tmp", job.job_id));
        fs::write(&tmp, serde_json::to_vec_pretty(job).map_err(std::io::Error::other)?)?;
        fs::rename(tmp, final_path)
    }

    pub fn get(&self, job_id: &str) -> ApiResult<SimulationJob> {
        let path = self.path(job_id)?;
        if !path.exists() {
            return Err(ApiError::not_found(format!("unknown simulation {job_id}")));
        }
        read_job(&path).map_err(|e| ApiError::internal(e.to_string()))
    }
}

fn read_job(path: &Path) -> std::io::Result<SimulationJob> {
    serde_json::from_slice(&fs::read(path)?).map_err(std::io::Error::other)
}
