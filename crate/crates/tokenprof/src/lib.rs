//! Load generator, mock server and orchestration for token-streaming
//! inference endpoints. Pure metric and model code lives in
//! `tokenprof-core`.

pub mod calibrate;
pub mod cli;
pub mod clock;
pub mod config;
pub mod engine;
pub mod mockserver;
pub mod run;
pub mod units;
