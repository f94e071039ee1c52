//! The dairy traceability contract.
//!
//! Mutating operations run inside endorsement simulations through
//! [`TraceContract`]. Queries ([`trace_back`], [`trace_forward`],
//! [`token_balance`], [`verify_qr`]) read committed state and the
//! [`ProvenanceIndex`] directly.
//!
//! State layout on the main channel:
//!
//! | key | record |
//! |-----|--------|
//! | `trace:animal:<id>` | [`Animal`] |
//! | `trace:batch:<id>` | [`Batch`] |
//! | `trace:edge:<to>:<from>` | [`ProvenanceEdge`] |
//! | `trace:token:<farm>:<output>` | [`TokenCredit`] |
//! | `trace:transfer:<output>` | [`TransferRecord`] |
//! | `trace:offer:<id>` | [`PublicOffer`] |
//!
//! A deal channel holds a single `trace:deal:<id>` record ([`Deal`]).

mod contract;
mod index;
mod qr;
mod query;
mod types;

pub use contract::{TraceContract, DEAL_OPS, MAIN_OPS};
pub use index::ProvenanceIndex;
pub use qr::{qr_digest, MalformedPayload, QrPayload, QR_PREFIX};
pub use query::{encode_qr, get_batch, token_balance, token_entry, trace_back, trace_forward, verify_qr, QueryError};
pub use types::*;
