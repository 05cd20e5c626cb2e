pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod selftest;
pub mod tensorfile;
