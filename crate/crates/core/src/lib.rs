//! Gateway-side privacy enforcement for IoT data processed by cloud services.
//!
//! A service developer describes its data model in PDL, a small class-based
//! language whose stereotypes tie each attribute to the methods that use it
//! and why. From that model this crate generates the user-facing privacy
//! policy and the platform's monitoring spec. The owner's gateway (the
//! privacy enforcement point) encrypts every outgoing reading under per-field
//! epoch keys and hands keys only to audited services the owner consented to.
//! The cloud routes every attribute access through a monitor that appends to
//! an owner-confidential, hash-chained access log countersigned by a trusted
//! third party.

pub mod access_log;
pub mod audit;
pub mod canonical;
pub mod cloud;
pub mod crypto;
pub mod fixtures;
pub mod gateway;
pub mod ids;
pub mod pdl;
pub mod policy;
pub mod rng;
pub mod scenario;
pub mod testkit;
