//! Leakage audit over a captured transcript.
//!
//! Every frame is decoded against its schema, so each payload byte is
//! accounted for as a plaintext sid or index, a Paillier ciphertext, or
//! garbling/OT material. Each ciphertext field must look like a randomized
//! encryption under the query key and must not equal the final count.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::One;

use crate::paillier::{Ciphertext, PublicKey};
use crate::transport::{MessageType, Party, TranscriptEntry};

use super::tree::EncryptedTree;
use super::wire;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub frames: usize,
    pub ciphertexts: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn route(kind: MessageType) -> Option<(Party, Party)> {
    use Party::*;
    Some(match kind {
        MessageType::TreeUpload => (CertifiedInstitution, CloudServer),
        MessageType::TreeAck => (CloudServer, CertifiedInstitution),
        MessageType::QueryStart
        | MessageType::GarbledCircuit
        | MessageType::OtSenderMsg => (Researcher, CloudServer),
        MessageType::MaskedValue | MessageType::OtReceiverMsg | MessageType::Result => {
            (CloudServer, Researcher)
        }
        MessageType::Error => return None,
    })
}

struct Auditor<'a> {
    pk: &'a PublicKey,
    count: BigUint,
    small: BigUint,
    report: AuditReport,
}

impl Auditor<'_> {
    fn ciphertext(&mut self, where_: &str, c: &Ciphertext) {
        self.report.ciphertexts += 1;
        let v = c.as_biguint();
        if v >= self.pk.n_squared() {
            self.fail(format!("{where_}: value outside Z_n²"));
        }
        if v <= &self.small {
            self.fail(format!("{where_}: value {v} is small enough to be a plaintext"));
        }
        if (v % self.pk.n()).is_one() {
            self.fail(format!("{where_}: ciphertext carries no randomness"));
        }
        if v == &self.count {
            self.fail(format!("{where_}: equals the final count"));
        }
    }

    fn fail(&mut self, msg: String) {
        self.report.violations.push(msg);
    }
}

/// Audits a transcript recorded with [`crate::transport::Transcript::capturing`].
pub fn audit_transcript(entries: &[TranscriptEntry], pk: &PublicKey, final_count: u64) -> AuditReport {
    let mut a = Auditor {
        pk,
        count: BigUint::from(final_count),
        small: BigUint::from(u32::MAX),
        report: AuditReport::default(),
    };
    let mut uploads: BTreeMap<u64, Vec<u8>> = BTreeMap::new();

    for (i, e) in entries.iter().enumerate() {
        a.report.frames += 1;
        let at = format!("frame {i} ({} {}→{})", e.kind, e.from, e.to);
        if let Some(expected) = route(e.kind) {
            if (e.from, e.to) != expected {
                a.fail(format!("{at}: unexpected direction"));
            }
        }
        let Some(payload) = &e.payload else {
            a.fail(format!("{at}: payload not captured"));
            continue;
        };
        let decoded: super::Result<()> = (|| {
            match e.kind {
                MessageType::TreeUpload => {
                    let (_, _, chunk) = wire::decode_tree_chunk(payload)?;
                    uploads.entry(e.session).or_default().extend_from_slice(chunk);
                }
                MessageType::TreeAck => {
                    wire::decode_tree_ack(payload)?;
                }
                MessageType::QueryStart => {
                    let (_, q) = wire::decode_query_start(payload)?;
                    for t in &q.terms {
                        a.ciphertext(&format!("{at} term sid {}", t.sid.get()), &t.enc_val);
                    }
                }
                MessageType::MaskedValue => {
                    let (_, c) = wire::decode_masked_value(payload)?;
                    a.ciphertext(&at, &c);
                }
                MessageType::GarbledCircuit => {
                    let offer = wire::decode_garbled_offer(payload)?;
                    if offer.gc.tables.len() + 1 != 2 * offer.gc.garbler_labels.len() {
                        a.fail(format!("{at}: table count does not match input width"));
                    }
                }
                MessageType::OtReceiverMsg => {
                    wire::decode_ot_receiver(payload)?;
                }
                MessageType::OtSenderMsg => {
                    wire::decode_ot_sender(payload)?;
                }
                MessageType::Result => {
                    let c = wire::decode_result(payload)?;
                    a.ciphertext(&at, &c);
                }
                MessageType::Error => {
                    wire::decode_error(payload)?;
                }
            }
            Ok(())
        })();
        if let Err(err) = decoded {
            a.fail(format!("{at}: does not decode: {err}"));
        }
    }

    for (session, bytes) in uploads {
        match EncryptedTree::from_bytes(&bytes) {
            Ok(tree) => {
                if tree.public_key() != pk {
                    a.fail(format!("upload {session}: tree under a different key"));
                }
                for (id, node) in tree.nodes().iter().enumerate() {
                    a.ciphertext(&format!("upload node {id} val"), &node.enc_val);
                    a.ciphertext(&format!("upload node {id} count"), &node.enc_count);
                }
            }
            Err(err) => a.fail(format!("upload {session}: does not decode: {err}")),
        }
    }
    a.report
}
