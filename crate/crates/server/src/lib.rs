//! HTTP service and CLI plumbing around `tutorgen-core`: teacher course
//! management, asynchronous generation jobs, content delivery and grading.

pub mod auth;
pub mod config;
pub mod courses;
pub mod error;
pub mod jobs;
pub mod routes;
pub mod service;

pub use routes::router;
pub use service::AppState;
