pub mod backend;
pub mod cli;
pub mod drama;
pub mod engine;
pub mod export;
pub mod prompt;
pub mod service;
pub mod stats;
pub mod store;
pub mod story;
