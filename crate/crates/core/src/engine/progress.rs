use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase")]
pub enum ProgressState {
    Idle,
    DataIndexing,
    DataSampling,
    GeneratingInstructionalPrompt,
    Annotating { done: usize, total: usize },
    Done,
    Failed { reason: String },
}

impl ProgressState {
    /// Notification text shown in the sidebar.
    pub fn notification(&self) -> String {
        match self {
            ProgressState::Idle => "Ready".into(),
            ProgressState::DataIndexing => "Indexing Data IDs".into(),
            ProgressState::DataSampling => "Sampling Data".into(),
            ProgressState::GeneratingInstructionalPrompt => {
                "Generating the Instructional Prompt".into()
            }
            ProgressState::Annotating { done, total } => format!("Annotating ({done}/{total})"),
            ProgressState::Done => "Annotation Done".into(),
            ProgressState::Failed { reason } => format!("Failed: {reason}"),
        }
    }

    pub fn is_busy(&self) -> bool {
        !matches!(
            self,
            ProgressState::Idle | ProgressState::Done | ProgressState::Failed { .. }
        )
    }

    fn rank(&self) -> u8 {
        match self {
            ProgressState::Idle => 0,
            ProgressState::DataIndexing => 1,
            ProgressState::DataSampling => 2,
            ProgressState::GeneratingInstructionalPrompt => 3,
            ProgressState::Annotating { .. } => 4,
            ProgressState::Done | ProgressState::Failed { .. } => 5,
        }
    }
}

/// Shared, cheaply cloned handle to one workbook's progress.
#[derive(Debug, Clone)]
pub struct ProgressTracker {
    state: Arc<Mutex<ProgressState>>,
}

impl Default for ProgressTracker {
    fn default() -> Self {
        ProgressTracker {
            state: Arc::new(Mutex::new(ProgressState::Idle)),
        }
    }
}

impl ProgressTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self) -> ProgressState {
        self.state.lock().expect("progress lock").clone()
    }

    /// Starts a new run, discarding whatever finished before.
    pub fn reset(&self, state: ProgressState) {
        *self.state.lock().expect("progress lock") = state;
    }

    /// Moves forward within a run; backwards transitions are ignored.
    pub fn advance(&self, next: ProgressState) {
        let mut cur = self.state.lock().expect("progress lock");
        let forward = match (&*cur, &next) {
            (
                ProgressState::Annotating { done: a, .. },
                ProgressState::Annotating { done: b, .. },
            ) => b >= a,
            (c, n) => n.rank() >= c.rank(),
        };
        if forward {
            *cur = next;
        }
    }
}
