//! Back end for two-round stance annotation.
//!
//! Annotators first label instances on their own, then again with the
//! sub-branch leading to them. Every dispatch and label is appended to a
//! line-delimited log, and replaying that log rebuilds the project. The
//! [`http`] module exposes the project over a JSON API.

pub mod http;
pub mod project;

pub use http::{router, serve, ApiError, AppState, AttributionSource, LabelSubmission, ThreadView};
pub use project::{
    majority, Ack, AnnotationRecord, Event, ProjectError, ProjectState, ProjectStats, Round, TaskPayload, TaskText,
    DEFAULT_QUOTA,
};
