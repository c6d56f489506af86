pub mod cli;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod io;
pub mod pipeline;
pub mod report;
