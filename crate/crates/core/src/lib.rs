//! Permissioned ledger engine for dairy supply-chain traceability.
//!
//! Transactions follow an execute-order-validate flow over channels with
//! their own membership, world state and hash-chained ledger. See the guide
//! in `book/` for a walkthrough.

pub mod codec;
pub mod hash;
pub mod ledger;
pub mod membership;
pub mod state;
pub mod txflow;
pub mod chaincode;
pub mod peer;
pub mod network;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/transactions.md")]
    mod transactions {}
    #[doc = include_str!("../../../book/src/provenance.md")]
    mod provenance {}
    #[doc = include_str!("../../../book/src/offers.md")]
    mod offers {}
    #[doc = include_str!("../../../book/src/qr.md")]
    mod qr {}
    #[doc = include_str!("../../../book/src/ledger-files.md")]
    mod ledger_files {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
}
