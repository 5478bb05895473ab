//! Post-task workflow reflection from screen recordings.
//!
//! The pipeline has two model-driven phases. The first samples a recording
//! into frames ([`ingest`]) and asks a vision model to reconstruct the user's
//! actions batch by batch ([`trace`]). The second hands the merged action
//! trace to a text model which groups actions into workflows and proposes at
//! most three improvements ([`advisor`]). Model access goes through
//! [`providers`], which also ships a scripted mock so the whole pipeline can
//! run offline. [`metrics`] holds the evaluation harness.

pub mod advisor;
pub mod ingest;
pub mod response;
pub mod metrics;
pub mod providers;
pub mod trace;

pub use advisor::{SuggestionQueue, WorkflowAssessment};
pub use ingest::{Frame, FramePlan, SamplingConfig};
pub use providers::{ChatProvider, ChatRequest, MockProvider, Phase};
pub use trace::{ActionTrace, BatchObservation};
