//! Permissioned execute-order-validate ledger engine.

pub mod identity;
pub mod ledger;
pub mod ordering;
pub mod chaincode;
pub mod donation;
pub mod network;
