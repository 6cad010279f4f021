//! Template-robustness harness for in-context classification.

pub mod backend;
pub mod ensemble;
pub mod error;
pub mod grammar;
pub mod metrics;
pub mod predict;
pub mod presets;
pub mod render;
pub mod rng;
pub mod runner;
pub mod select;

pub use error::{Error, Result};
pub use grammar::{Component, ComponentSet, Template};
pub use predict::{LabelDistribution, Method};
pub use render::{Demonstration, Mode, PromptContext, RenderedPrompt};
