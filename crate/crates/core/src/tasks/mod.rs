//! Built-in benchmark tasks and their candidate text formats.

pub mod overlap;
pub mod packing;

use crate::error::{Error, Result};

pub use overlap::{Formulation, OverlapScore, StepFunction};
pub use packing::{Packing, Violation};

/// A parsed built-in task program.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskProgram {
    Packing(Packing),
    Step(StepFunction),
}

impl TaskProgram {
    /// Dispatches on the header line (`packing n=..` or `step m=..`).
    pub fn parse(text: &str) -> Result<Self> {
        let head = text.trim_start();
        if head.starts_with("packing") {
            Packing::parse(text).map(TaskProgram::Packing)
        } else if head.starts_with("step") {
            StepFunction::parse(text).map(TaskProgram::Step)
        } else {
            Err(Error::Format(
                "expected a `packing n=` or `step m=` program".into(),
            ))
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            TaskProgram::Packing(p) => p.to_text(),
            TaskProgram::Step(f) => f.to_text(),
        }
    }
}
