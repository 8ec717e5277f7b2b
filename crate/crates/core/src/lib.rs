pub mod date;
pub mod design;
pub mod design_file;
pub mod error;
pub mod estimator;
pub mod outcome;
pub mod panel;
pub mod propensity;
pub mod sim;
