//! Encrypted count queries over SNP index trees.
//!
//! A certified institution indexes genomic records in a prefix tree, encrypts
//! each node's value and count with Paillier, and hands the tree to a cloud
//! server. Researchers send encrypted conjunctive queries; the server walks the
//! tree, deciding each node comparison with a garbled-circuit equality test
//! against a masked value, and returns the encrypted count.

pub mod genomics;
pub mod index_tree;
pub mod paillier;
pub mod protocol;
pub mod secure_compare;
pub mod transport;

pub use genomics::{
    decode_genotype, encode_genotype, generate_synthetic, parse_dataset, write_dataset, Dataset,
    GenomicsError, GenotypeCode, Phenotype, Record, SnpId,
};
pub use index_tree::{
    build_tree, naive_count, sample_predicate, traverse_plaintext, tree_count_plaintext, IndexTree,
    QueryPredicate, Term, TreeError,
};
pub use paillier::{
    keygen, keygen_seeded_insecure, Ciphertext, Encryptor, Keypair, PaillierError, PublicKey,
    SecretKey,
};
pub use protocol::{
    audit_transcript, ci_encrypt_tree, cs_serve_session, researcher_run_query, run_count_query,
    EncryptedTree, ProtocolConfig, ProtocolError, QueryRun, TransportKind,
};
pub use secure_compare::{CompareError, MaskWidth};
pub use transport::{Channel, Frame, MessageType, Party, Transcript, TransportError};
