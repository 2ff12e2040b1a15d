pub mod adaptor;
pub mod cli;
pub mod config;
pub mod guard;
pub mod profiler;
pub mod sim;
pub mod stack;
pub mod tuner;
