pub mod actions;
pub mod constraints;
pub mod executor;
pub mod gateway;
pub mod template;
pub mod text;
pub mod workspace;
pub mod config;
pub mod evaluation;
pub mod planner;
pub mod research_log;
pub mod workers;
