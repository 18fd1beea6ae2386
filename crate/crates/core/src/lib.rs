//! Service layer for the chamber twin: access policies, session
//! orchestration, the append-only trace repository, the model registry and
//! the REST interface over them.

pub mod api;
pub mod auth;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod events;
pub mod executor;
pub mod models;
pub mod repository;
pub mod service;
pub mod session;

pub use auth::PolicyStore;
pub use error::CoreError;
pub use service::{Core, CoreConfig, CreateSession};
pub use session::{Session, SessionState};
