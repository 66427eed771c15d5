//! FAIR research data tooling: checksummed bags, lightweight persistent
//! identifiers, a versioned entity-relationship metadata catalog and
//! automated publication flows.

pub mod bag;
pub mod catalog;
pub mod clock;
pub mod flows;
pub mod idspace;
pub mod jsonlog;
