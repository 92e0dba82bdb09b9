//! The parties and their message flow.
//!
//! The certified institution (CI) builds and encrypts the index tree and
//! uploads it to the cloud server (CS). A researcher sends an encrypted query;
//! the CS walks the tree, running one masked equality test with the
//! researcher per node on a queried column, and adds the encrypted counts of
//! matched nodes on the deepest queried column. Only the researcher can
//! decrypt the result.

mod audit;
mod session;
mod tree;
mod wire;

use std::thread;

use num_bigint::BigUint;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::genomics::Dataset;
use crate::index_tree::{build_tree, QueryPredicate, TreeError};
use crate::paillier::{self, Ciphertext, PaillierError, PublicKey, DEFAULT_KEY_BITS, TEST_KEY_BITS};
use crate::secure_compare::{CompareError, MaskWidth, DEFAULT_MASK_BITS};
use crate::transport::{
    self, memory_pair, Channel, Endpoint, MessageType, Party, Transcript, TransportError,
};

pub use audit::{audit_transcript, AuditReport};
pub use session::{
    ci_upload_tree, cs_execute_query, cs_receive_tree, cs_serve_session, researcher_decrypt_result,
    researcher_encrypt_query, researcher_run_query, CsOutcome, QueryTrace, ResearcherOutcome,
    TREE_CHUNK_BYTES,
};
pub use tree::{ci_encrypt_tree, EncryptedNode, EncryptedTree};
pub use wire::{EncryptedQuery, EncryptedTerm, RemoteError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("SNP id {sid} is beyond the tree depth {depth}")]
    SidBeyondDepth { sid: u32, depth: u32 },
    #[error("expected {expected}, received {found}")]
    Unexpected { expected: MessageType, found: MessageType },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("peer reported: {0}")]
    Remote(RemoteError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Compare(#[from] CompareError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub type Result<T, E = ProtocolError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    #[default]
    Memory,
    /// Loopback TCP sockets.
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolConfig {
    pub key_bits: u64,
    pub mask_bits: u32,
    /// Seeds keys and every party's randomness. `None` draws production keys
    /// from OS entropy.
    pub seed: Option<u64>,
    pub transport: TransportKind,
    /// Keep payloads in the transcript for [`audit_transcript`].
    pub capture_payloads: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            key_bits: DEFAULT_KEY_BITS,
            mask_bits: DEFAULT_MASK_BITS,
            seed: None,
            transport: TransportKind::Memory,
            capture_payloads: false,
        }
    }
}

impl ProtocolConfig {
    /// Small seeded keys, for tests.
    pub fn seeded(seed: u64) -> Self {
        Self {
            key_bits: TEST_KEY_BITS,
            seed: Some(seed),
            ..Self::default()
        }
    }
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct QueryRun {
    pub count: u64,
    pub transcript: Transcript,
    pub trace: QueryTrace,
    pub public_key: PublicKey,
    /// The ciphertext the researcher decrypted.
    pub result: Ciphertext,
    /// Masked values the researcher decrypted, one per comparison.
    pub researcher_deltas: Vec<BigUint>,
    pub tree_nodes: usize,
}

fn channel_pair(
    kind: TransportKind,
    a: Party,
    b: Party,
    transcript: &Transcript,
) -> Result<(Box<dyn Channel>, Box<dyn Channel>)> {
    Ok(match kind {
        TransportKind::Memory => {
            let (x, y) = memory_pair(a, b, transcript);
            (Box::new(x), Box::new(y))
        }
        TransportKind::Tcp => {
            let listener = transport::listen("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let x = transport::connect(addr, Endpoint::new(a, b, transcript.clone()))?;
            let y = listener.accept(Endpoint::new(b, a, transcript.clone()))?;
            (Box::new(x), Box::new(y))
        }
    })
}

/// Picks the more informative of two failures from the ends of one exchange:
/// a closed channel is usually the echo of the other side's error.
fn merge<T, U>(mine: Result<T>, theirs: Result<U>) -> Result<(T, U)> {
    match (mine, theirs) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        (Err(ProtocolError::Transport(_)), Err(e)) => Err(e),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

/// Runs the whole flow in one process: key generation, tree build and
/// encryption, upload to the server, and one query session.
pub fn run_count_query(
    dataset: &Dataset,
    predicate: &QueryPredicate,
    config: &ProtocolConfig,
) -> Result<QueryRun> {
    let mut master = match config.seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    };
    let keys = match config.seed {
        Some(_) => paillier::keygen_with_rng(config.key_bits, &mut ChaCha20Rng::from_rng(&mut master).expect("rng"))?,
        None => paillier::keygen(config.key_bits)?,
    };
    let width = MaskWidth::for_key(config.mask_bits, keys.public())?;
    let mut ci_rng = ChaCha20Rng::from_rng(&mut master).expect("rng");
    let mut cs_rng = ChaCha20Rng::from_rng(&mut master).expect("rng");
    let mut researcher_rng = ChaCha20Rng::from_rng(&mut master).expect("rng");
    let upload_session = master.next_u64();
    let query_session = master.next_u64();

    let transcript = if config.capture_payloads {
        Transcript::capturing()
    } else {
        Transcript::new()
    };

    let plain = build_tree(dataset)?;
    let encrypted = ci_encrypt_tree(&plain, &keys, &mut ci_rng)?;
    drop(plain);

    let (mut ci, mut cs) = channel_pair(
        config.transport,
        Party::CertifiedInstitution,
        Party::CloudServer,
        &transcript,
    )?;
    let ((), stored) = thread::scope(|s| {
        let server = s.spawn(move || cs_receive_tree(&mut cs));
        let sent = ci_upload_tree(&encrypted, upload_session, &mut ci);
        drop(ci);
        merge(sent, server.join().expect("server thread panicked"))
    })?;
    drop(encrypted);

    let (mut researcher, mut cs) = channel_pair(
        config.transport,
        Party::Researcher,
        Party::CloudServer,
        &transcript,
    )?;
    let sk = keys.secret();
    let (mine, cs_outcome) = thread::scope(|s| {
        let tree = &stored;
        let server = s.spawn(move || cs_serve_session(tree, &mut cs, &mut cs_rng));
        let mine = researcher_run_query(sk, predicate, width, query_session, &mut researcher, &mut researcher_rng);
        drop(researcher);
        merge(mine, server.join().expect("server thread panicked"))
    })?;

    Ok(QueryRun {
        count: mine.count,
        transcript,
        trace: cs_outcome.trace,
        public_key: keys.public().clone(),
        result: mine.result,
        researcher_deltas: mine.deltas,
        tree_nodes: stored.node_count(),
    })
}
