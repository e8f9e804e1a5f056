//! Runtime for the prompt-to-model pipeline: LLM access, card snapshots,
//! trainer protocol, run workspaces, HTTP API.

pub mod backend;
pub mod cards;
pub mod config;
pub mod evaluate;
pub mod files;
pub mod gateway;
pub mod http;
pub mod llm;
pub mod mock;
pub mod pipeline;
pub mod run;
pub mod server;
pub mod trainer;
