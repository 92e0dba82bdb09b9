//! Secure equality of an encrypted tree value and a researcher's query value.
//!
//! The cloud server blinds the encrypted value with a random mask `μ`; the
//! researcher decrypts the blinded value and subtracts the query value, which
//! yields `μ` exactly when the two values are equal. A garbled equality circuit,
//! garbled by the researcher and evaluated by the server after oblivious
//! transfer of the server's input labels, then tells the server (and only the
//! server) whether the two masks coincide.

mod circuit;
mod garble;
mod masked;
mod ot;

pub use circuit::{build_equality_circuit, from_bits, to_bits, BooleanCircuit, Gate, GateKind, WireId};
pub use garble::{evaluate, garble, GarbledCircuit, GarbledTable, WireLabel, LABEL_BYTES};
pub use masked::{
    masked_equality, CsAwaitingLabels, CsMasked, GarbledOffer, MaskWidth, ResearcherSession,
    DEFAULT_MASK_BITS,
};
pub use ot::{ot_exchange, OtReceiver, OtReceiverMsg, OtSender, OtSenderMsg, OtSetup, POINT_BYTES};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CompareError {
    #[error("circuit width {0} is outside 1..=128")]
    WidthOutOfRange(u32),
    #[error("mask width {0} is outside 5..=128")]
    MaskWidthOutOfRange(u32),
    #[error("{bits}-bit masks need a modulus larger than {bits} + 5 bits, key has {key_bits}")]
    MaskTooWideForKey { bits: u32, key_bits: u64 },
    #[error("expected {expected} input bits, got {found}")]
    InputLengthMismatch { expected: usize, found: usize },
    #[error("expected {expected} OT entries, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("OT message carries an invalid group element")]
    MalformedGroupElement,
    #[error("garbled circuit does not decode: corrupt table or mismatched labels")]
    DecodeFailure,
    #[error("invalid circuit: {0}")]
    InvalidCircuit(String),
    #[error("masked value decrypts outside the mask range")]
    DecryptionMismatch,
    #[error(transparent)]
    Paillier(#[from] crate::paillier::PaillierError),
}

pub type Result<T, E = CompareError> = std::result::Result<T, E>;
