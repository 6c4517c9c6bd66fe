//! Two-stage live-chat intent prediction from browsing histories.
//!
//! Stage one classifies a user's page-view session into one of five coarse
//! intent classes with a long-sequence transformer trained from scratch.
//! Stage two conditions an LLM on the session and the predicted class to
//! generate fine-grained intent candidates, which a second LLM judges
//! against the true intent. Everything runs offline against a deterministic
//! mock gateway; real endpoints are plain configuration.

pub mod classify;
pub mod gateway;
pub mod generation;
pub mod judge;
pub mod model;
pub mod rng;
pub mod session;
pub mod synth;
pub mod text;
pub mod vocab;

pub use session::{Corpus, IntentClass, LabeledSession, Limits, Page, Session, SplitTag};
