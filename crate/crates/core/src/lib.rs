//! Route free-form customer complaints to the terminal DTMF paths of an IVR
//! menu with a chat-completion model, and evaluate how well that works.
//!
//! The pipeline mirrors how the experiment runs end to end:
//!
//! * [`menu`] parses and validates menu trees and renders them either as a
//!   descriptive outline or as a flat list of terminal paths;
//! * [`prompt`] wraps a rendered context and a caller's query into one of
//!   the two routing prompts;
//! * [`provider`] talks to a chat-completions endpoint (or a deterministic
//!   test double) with retries, rate limiting and bounded concurrency;
//! * [`datagen`] synthesizes labeled intents and paraphrases;
//! * [`router`] runs the routing experiment and parses model replies;
//! * [`eval`] scores results: accuracy, confusion matrix, per-class metrics.

pub mod datagen;
pub mod eval;
pub mod fixtures;
pub mod menu;
pub mod path;
pub mod prompt;
pub mod provider;
pub mod router;

pub use menu::{MenuNode, MenuTree, TerminalPath};
pub use path::{Digit, DtmfPath};
pub use prompt::{PromptText, RoutingCondition};
