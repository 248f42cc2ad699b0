//! Checks shared by the unit-level test targets and the acceptance suite.
//! Each public function panics on failure.
#![allow(dead_code)]

pub mod grad;
pub mod oracle;
