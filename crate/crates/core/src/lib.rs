//! Backend runtime for LLM agents embedded in existing web applications.

pub mod llm;
pub mod config;
pub mod gateway;
pub mod observation;
pub mod orchestrator;
pub mod registry;
pub mod session;
pub mod sim;
pub mod tools;
pub mod tracelog;
pub mod wire;
