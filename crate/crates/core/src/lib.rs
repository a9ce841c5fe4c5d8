pub mod error;
pub mod space_form;
pub mod lifted;
pub mod flow;
pub mod frenet;
pub mod runner;
