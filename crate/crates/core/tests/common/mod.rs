#![allow(dead_code)]

pub mod estimators;
pub mod graph_oracle;
pub mod numerics_oracle;
