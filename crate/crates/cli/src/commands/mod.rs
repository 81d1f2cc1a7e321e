pub mod benchmark;
pub mod calibrate;
pub mod report;
pub mod synthesize;
