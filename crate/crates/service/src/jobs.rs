//! Frontier jobs: a registry of job snapshots and the runner that builds a
//! frontier on the blocking pool and stores the result.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use fairplai_core::config::TrainingConfig;
use fairplai_core::frontier::{build_frontier, GridSpec};
use fairplai_core::store::Store;
use fairplai_core::TabularDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    fn rank(self) -> u8 {
        match self {
            JobStatus::Queued => 0,
            JobStatus::Running => 1,
            JobStatus::Done | JobStatus::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierJob {
    pub id: String,
    pub status: JobStatus,
    pub progress: Progress,
    /// Frontier id once done.
    pub result: Option<String>,
    pub error: Option<String>,
}

/// Job snapshots. Status only moves forward and progress never decreases.
#[derive(Debug, Default)]
pub struct JobRegistry {
    jobs: Mutex<BTreeMap<String, FrontierJob>>,
    next: AtomicU64,
}

impl JobRegistry {
    pub fn create(&self, total: usize) -> FrontierJob {
        let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
        let job = FrontierJob {
            id: format!("job-{n:06}"),
            status: JobStatus::Queued,
            progress: Progress { completed: 0, total },
            result: None,
            error: None,
        };
        self.lock().insert(job.id.clone(), job.clone());
        job
    }

    pub fn get(&self, id: &str) -> Option<FrontierJob> {
        self.lock().get(id).cloned()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, FrontierJob>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut FrontierJob)) {
        if let Some(job) = self.lock().get_mut(id) {
            f(job);
        }
    }

    pub fn advance(&self, id: &str, status: JobStatus) {
        self.update(id, |j| {
            if status.rank() > j.status.rank() {
                j.status = status;
            }
        });
    }

    pub fn set_progress(&self, id: &str, completed: usize) {
        self.update(id, |j| j.progress.completed = j.progress.completed.max(completed).min(j.progress.total));
    }

    pub fn finish(&self, id: &str, outcome: Result<String, String>) {
        self.update(id, |j| {
            if j.status.rank() == 2 {
                return;
            }
            match outcome {
                Ok(frontier) => {
                    j.status = JobStatus::Done;
                    j.progress.completed = j.progress.total;
                    j.result = Some(frontier);
                }
                Err(e) => {
                    j.status = JobStatus::Failed;
                    j.error = Some(e);
                }
            }
        });
    }
}

/// Everything a job needs, captured at submission.
pub struct JobSpec {
    pub dataset: TabularDataset,
    pub grid: GridSpec,
    pub config: TrainingConfig,
    pub seed: u64,
}

/// Build, then store the frontier and its model artifacts.
pub fn run_build(store: &Store, spec: &JobSpec, progress: &(dyn Fn(usize, usize) + Sync)) -> Result<String, String> {
    let out = build_frontier(&spec.dataset, &spec.grid, &spec.config, spec.seed, Some(progress)).map_err(|e| e.to_string())?;
    for a in &out.artifacts {
        store.put_model(a).map_err(|e| e.to_string())?;
    }
    store.put_frontier(&out.frontier).map_err(|e| e.to_string())
}

/// Queue a job; it starts when a permit frees up and runs on the blocking pool.
pub fn spawn_job(store: Arc<Store>, jobs: Arc<JobRegistry>, permits: Arc<Semaphore>, id: String, spec: JobSpec) {
    tokio::spawn(async move {
        let Ok(_permit) = permits.acquire_owned().await else {
            jobs.finish(&id, Err("job runner shut down".into()));
            return;
        };
        jobs.advance(&id, JobStatus::Running);
        let (store2, jobs2, id2) = (store.clone(), jobs.clone(), id.clone());
        let outcome = tokio::task::spawn_blocking(move || {
            let progress = |done: usize, _total: usize| jobs2.set_progress(&id2, done);
            run_build(&store2, &spec, &progress)
        })
        .await
        .unwrap_or_else(|e| Err(format!("job panicked: {e}")));
        match &outcome {
            Ok(f) => log::info!("{id}: frontier {f}"),
            Err(e) => log::warn!("{id}: {e}"),
        }
        jobs.finish(&id, outcome);
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_only_moves_forward() {
        let r = JobRegistry::default();
        let j = r.create(4);
        r.advance(&j.id, JobStatus::Running);
        r.set_progress(&j.id, 3);
        r.set_progress(&j.id, 1);
        r.advance(&j.id, JobStatus::Queued);
        let s = r.get(&j.id).unwrap();
        assert_eq!(s.status, JobStatus::Running);
        assert_eq!(s.progress.completed, 3);
        r.finish(&j.id, Ok("ab".into()));
        r.finish(&j.id, Err("late".into()));
        let s = r.get(&j.id).unwrap();
        assert_eq!((s.status, s.result.as_deref(), s.progress.completed), (JobStatus::Done, Some("ab"), 4));
    }
}
