//! Personalized course content generation.
//!
//! Teachers author [`model::Course`]s; students supply a [`model::Persona`].
//! Generation runs in two stages: a [`model::PersonalizedCurriculum`] that
//! keeps the teacher's section structure, then per-subsection content and
//! practice exercises conditioned on the saved curriculum.

pub mod cache;
pub mod course_io;
pub mod digest;
pub mod model;
pub mod pipeline;
pub mod provider;

pub use digest::Digest;
