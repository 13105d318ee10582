#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use tutorgen_core::course_io::import_json;
use tutorgen_core::model::{ChoiceOption, Course, PracticeExercise, Section, Subsection};

pub const SAMPLE_COURSE: &str = include_str!("../../data/linear_regression.json");

pub fn sample_course() -> Course {
    import_json(SAMPLE_COURSE.as_bytes()).expect("sample course imports")
}

/// Non-blank text that exercises CSV quoting and the goal delimiter.
fn text() -> impl Strategy<Value = String> {
    "[A-Za-zé][A-Za-z0-9 ,;\"\\\\\n\r'é]{0,24}"
}

fn maybe_empty_text() -> impl Strategy<Value = String> {
    prop_oneof![Just(String::new()), text()]
}

fn exercise(id: String) -> impl Strategy<Value = PracticeExercise> {
    vec((text(), text()), 2..=6).prop_flat_map(move |pairs| {
        let n = pairs.len();
        let id = id.clone();
        (0..n).prop_map(move |correct_index| PracticeExercise {
            id: id.clone(),
            stem: format!("Which one? {}", pairs[0].0),
            choices: pairs
                .iter()
                .map(|(text, feedback)| ChoiceOption {
                    text: text.clone(),
                    feedback: feedback.clone(),
                })
                .collect(),
            correct_index,
        })
    })
}

fn subsection(si: usize, ui: usize) -> impl Strategy<Value = Subsection> {
    (text(), text(), 0usize..3).prop_flat_map(move |(title, body, n)| {
        let exercises: Vec<_> = (0..n)
            .map(|ei| exercise(format!("ex-{si}-{ui}-{ei}")))
            .collect();
        exercises.prop_map(move |example_exercises| Subsection {
            id: format!("sub-{si}-{ui}"),
            title: title.clone(),
            body: body.clone(),
            example_exercises,
        })
    })
}

fn section(si: usize) -> impl Strategy<Value = Section> {
    (
        text(),
        maybe_empty_text(),
        text(),
        vec(text(), 1..4),
        1usize..4,
    )
        .prop_flat_map(move |(title, summary, scope, goals, n)| {
            let subs: Vec<_> = (0..n).map(|ui| subsection(si, ui)).collect();
            subs.prop_map(move |subsections| Section {
                id: format!("sec-{si}"),
                title: title.clone(),
                summary: summary.clone(),
                scope: scope.clone(),
                learning_goals: goals.clone(),
                subsections,
            })
        })
}

/// Publishable courses with 1 to 4 sections.
pub fn arb_course() -> impl Strategy<Value = Course> {
    (text(), maybe_empty_text(), 1usize..5).prop_flat_map(|(title, description, n)| {
        let sections: Vec<_> = (0..n).map(section).collect();
        sections.prop_map(move |sections| {
            Course::new("course-1", title.clone(), description.clone(), sections)
        })
    })
}

/// The practice from the linear-regression demo: four pairings, the first
/// one correct.
pub fn figure_two_practice_json() -> serde_json::Value {
    serde_json::json!({
        "stem": "Imagine you're studying the effect of Gojo's screen time on the merchandise sales for Jujutsu Kaisen. Identify the dependent and independent variables.",
        "choices": [
            {"text": "Independent variable: Gojo's screen time, Dependent variable: Merchandise sales",
             "feedback": "Correct. Screen time is the factor that varies and sales respond to it."},
            {"text": "Independent variable: Gojo's popularity, Dependent variable: Merchandise sales",
             "feedback": "Try again. The scenario varies screen time, not popularity."},
            {"text": "Independent variable: Episode ratings, Dependent variable: Gojo's screen time",
             "feedback": "Try again. Ratings are not part of this scenario, and screen time is the input."},
            {"text": "Independent variable: Merchandise sales, Dependent variable: Gojo's screen time",
             "feedback": "Try again. The roles are reversed: sales are the outcome."}
        ],
        "correct_index": 0
    })
}
