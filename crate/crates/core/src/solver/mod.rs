//! Real-time iteration SQP: condensing, the dense QP backends and the
//! per-tick step.

pub mod active_set;
pub mod enumeration;
pub mod qp;
pub mod condense;
pub mod rti;
