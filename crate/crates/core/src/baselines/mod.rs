//! Non-learned baselines: a rule-based navigator, a random agent and a
//! template captioner.

pub mod captioner;
pub mod navigator;

pub use captioner::{caption_trajectory, caption_view, relation_of, Relation, TemplateBank};
pub use navigator::{random_navigate, rule_navigate};
