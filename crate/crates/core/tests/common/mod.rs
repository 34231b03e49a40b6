//! Fixtures shared by the integration suites.
#![allow(dead_code)]

pub mod grad;
pub mod scene;
