use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::PracticeExercise;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeResult {
    pub correct: bool,
    /// The chosen option's stored feedback, verbatim.
    pub feedback: String,
}

pub fn grade_answer(
    practice: &PracticeExercise,
    chosen_index: usize,
) -> Result<GradeResult, PipelineError> {
    let choice = practice
        .choices
        .get(chosen_index)
        .ok_or(PipelineError::IndexOutOfRange {
            index: chosen_index,
            len: practice.choices.len(),
        })?;
    Ok(GradeResult {
        correct: chosen_index == practice.correct_index,
        feedback: choice.feedback.clone(),
    })
}
