//! The message exchanges: tree upload (CI → CS) and one query session
//! (Researcher ↔ CS).

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};

use crate::index_tree::QueryPredicate;
use crate::paillier::{Ciphertext, PublicKey, SecretKey};
use crate::secure_compare::{CsMasked, MaskWidth, ResearcherSession};
use crate::transport::{Channel, Frame, MessageType};

use super::tree::EncryptedTree;
use super::wire::{self, EncryptedQuery, EncryptedTerm, RemoteError};
use super::{ProtocolError, Result};

/// Upload chunks stay well below the frame limit.
pub const TREE_CHUNK_BYTES: usize = 4 << 20;

fn expect(frame: Frame, kind: MessageType) -> Result<Frame> {
    if frame.kind == kind {
        return Ok(frame);
    }
    if frame.kind == MessageType::Error {
        return Err(match wire::decode_error(&frame.payload)? {
            RemoteError::SidBeyondDepth { sid, depth } => ProtocolError::SidBeyondDepth { sid, depth },
            other => ProtocolError::Remote(other),
        });
    }
    Err(ProtocolError::Unexpected {
        expected: kind,
        found: frame.kind,
    })
}

/// CI side: sends the serialized tree in chunks and waits for the node count.
pub fn ci_upload_tree<C: Channel>(tree: &EncryptedTree, session: u64, channel: &mut C) -> Result<()> {
    let bytes = tree.to_bytes();
    let chunks: Vec<&[u8]> = if bytes.is_empty() {
        vec![&[]]
    } else {
        bytes.chunks(TREE_CHUNK_BYTES).collect()
    };
    let total = chunks.len() as u32;
    for (i, chunk) in chunks.into_iter().enumerate() {
        let payload = wire::encode_tree_chunk(i as u32, total, chunk);
        channel.send(Frame::new(MessageType::TreeUpload, session, payload))?;
    }
    let ack = wire::decode_tree_ack(&expect(channel.recv()?, MessageType::TreeAck)?.payload)?;
    if ack != tree.node_count() as u64 {
        return Err(ProtocolError::Malformed(format!(
            "TREE_ACK reports {ack} nodes, {} sent",
            tree.node_count()
        )));
    }
    Ok(())
}

/// CS side: reassembles and parses the tree, then acknowledges it.
pub fn cs_receive_tree<C: Channel>(channel: &mut C) -> Result<EncryptedTree> {
    let mut bytes = Vec::new();
    let mut next = 0u32;
    let session = loop {
        let frame = expect(channel.recv()?, MessageType::TreeUpload)?;
        let (index, total, chunk) = wire::decode_tree_chunk(&frame.payload)?;
        if index != next || index >= total {
            return Err(ProtocolError::Malformed(format!("TREE_UPLOAD chunk {index} out of order")));
        }
        bytes.extend_from_slice(chunk);
        next += 1;
        if next == total {
            break frame.session;
        }
    };
    let tree = EncryptedTree::from_bytes(&bytes)?;
    let ack = wire::encode_tree_ack(tree.node_count() as u64);
    channel.send(Frame::new(MessageType::TreeAck, session, ack))?;
    Ok(tree)
}

/// Encrypts each term's value; sids stay in the clear.
pub fn researcher_encrypt_query<R: RngCore + CryptoRng + ?Sized>(
    predicate: &QueryPredicate,
    pk: &PublicKey,
    rng: &mut R,
) -> Result<EncryptedQuery> {
    let terms = predicate
        .terms()
        .iter()
        .map(|t| {
            Ok(EncryptedTerm {
                sid: t.sid,
                enc_val: pk.encrypt(&BigUint::from(t.val), rng)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EncryptedQuery { terms })
}

pub fn researcher_decrypt_result(c: &Ciphertext, sk: &SecretKey) -> Result<u64> {
    Ok(sk.decrypt_u64(c)?)
}

/// What the server saw while running one query. Node ids are preorder positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryTrace {
    pub visited: Vec<u32>,
    pub compared: Vec<(u32, bool)>,
    pub accumulated: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct CsOutcome {
    pub result: Ciphertext,
    pub trace: QueryTrace,
}

/// Runs the tree search for an already received query, performing one masked
/// equality test with the researcher per node on a queried column. Returns
/// the re-randomized encrypted count, which is also sent as RESULT.
pub fn cs_execute_query<C: Channel, R: RngCore + CryptoRng + ?Sized>(
    tree: &EncryptedTree,
    query: &EncryptedQuery,
    width: MaskWidth,
    session: u64,
    channel: &mut C,
    rng: &mut R,
) -> Result<CsOutcome> {
    let pk = tree.public_key();
    if let Some(max) = query.max_sid() {
        if max.get() > tree.depth() {
            let err = RemoteError::SidBeyondDepth {
                sid: max.get(),
                depth: tree.depth(),
            };
            channel.send(Frame::new(MessageType::Error, session, wire::encode_error(&err)))?;
            return Err(ProtocolError::SidBeyondDepth {
                sid: max.get(),
                depth: tree.depth(),
            });
        }
    }

    let mut acc = pk.encrypt(&BigUint::from(0u32), rng)?;
    let mut trace = QueryTrace::default();
    match query.max_sid() {
        None => {
            for &r in tree.roots() {
                acc = pk.add(&acc, &tree.node(r).enc_count);
                trace.accumulated.push(r);
            }
        }
        Some(max_sid) => {
            let mut stack: Vec<u32> = tree.roots().iter().rev().copied().collect();
            while let Some(id) = stack.pop() {
                let node = tree.node(id);
                trace.visited.push(id);
                if let Some(pos) = query.position(node.sid) {
                    let hit = compare(
                        pk,
                        &node.enc_val,
                        pos as u32,
                        width,
                        session,
                        id,
                        channel,
                        rng,
                    )?;
                    trace.compared.push((id, hit));
                    if !hit {
                        continue;
                    }
                    if node.sid == max_sid {
                        acc = pk.add(&acc, &node.enc_count);
                        trace.accumulated.push(id);
                        continue;
                    }
                }
                stack.extend(node.children().iter().rev());
            }
        }
    }

    let result = pk.rerandomize(&acc, rng);
    channel.send(Frame::new(MessageType::Result, session, wire::encode_result(&result)))?;
    Ok(CsOutcome { result, trace })
}

#[allow(clippy::too_many_arguments)]
fn compare<C: Channel, R: RngCore + CryptoRng + ?Sized>(
    pk: &PublicKey,
    enc_val: &Ciphertext,
    term: u32,
    width: MaskWidth,
    session: u64,
    node: u32,
    channel: &mut C,
    rng: &mut R,
) -> Result<bool> {
    let (masked, cs) = CsMasked::new(pk, enc_val, width, rng)?;
    channel.send_annotated(
        Frame::new(MessageType::MaskedValue, session, wire::encode_masked_value(term, &masked)),
        Some(node),
    )?;
    let offer = wire::decode_garbled_offer(&expect(channel.recv()?, MessageType::GarbledCircuit)?.payload)?;
    let (request, cs) = cs.receive_offer(offer, rng)?;
    channel.send_annotated(
        Frame::new(MessageType::OtReceiverMsg, session, wire::encode_ot_receiver(&request)),
        Some(node),
    )?;
    let labels = wire::decode_ot_sender(&expect(channel.recv()?, MessageType::OtSenderMsg)?.payload)?;
    Ok(cs.finish(labels)?)
}

/// Serves one query session: waits for QUERY_START, validates it and runs
/// the search.
pub fn cs_serve_session<C: Channel, R: RngCore + CryptoRng + ?Sized>(
    tree: &EncryptedTree,
    channel: &mut C,
    rng: &mut R,
) -> Result<CsOutcome> {
    let frame = expect(channel.recv()?, MessageType::QueryStart)?;
    let session = frame.session;
    let (bits, query) = wire::decode_query_start(&frame.payload)?;
    let width = match MaskWidth::for_key(bits, tree.public_key()) {
        Ok(w) => w,
        Err(e) => {
            let err = wire::encode_error(&RemoteError::MaskWidth(bits));
            channel.send(Frame::new(MessageType::Error, session, err))?;
            return Err(e.into());
        }
    };
    for t in &query.terms {
        tree.public_key().check_ciphertext(&t.enc_val)?;
    }
    cs_execute_query(tree, &query, width, session, channel, rng)
}

#[derive(Debug, Clone)]
pub struct ResearcherOutcome {
    pub count: u64,
    pub result: Ciphertext,
    /// Every decrypted masked value, in order. Kept for auditing.
    pub deltas: Vec<BigUint>,
}

/// Researcher side of one query session.
pub fn researcher_run_query<C: Channel, R: RngCore + CryptoRng + ?Sized>(
    sk: &SecretKey,
    predicate: &QueryPredicate,
    width: MaskWidth,
    session: u64,
    channel: &mut C,
    rng: &mut R,
) -> Result<ResearcherOutcome> {
    let pk = sk.public_key();
    let query = researcher_encrypt_query(predicate, &pk, rng)?;
    channel.send(Frame::new(
        MessageType::QueryStart,
        session,
        wire::encode_query_start(width.bits(), &query),
    ))?;
    let mut deltas = Vec::new();
    loop {
        let frame = channel.recv()?;
        match frame.kind {
            MessageType::MaskedValue => {
                let (term, masked) = wire::decode_masked_value(&frame.payload)?;
                let val_q = predicate
                    .terms()
                    .get(term as usize)
                    .ok_or_else(|| ProtocolError::Malformed(format!("MASKED_VALUE: no term {term}")))?
                    .val;
                let (offer, researcher) =
                    ResearcherSession::respond(sk, &masked, u32::from(val_q), width, rng)?;
                deltas.push(researcher.delta().clone());
                channel.send(Frame::new(
                    MessageType::GarbledCircuit,
                    session,
                    wire::encode_garbled_offer(&offer),
                ))?;
                let request =
                    wire::decode_ot_receiver(&expect(channel.recv()?, MessageType::OtReceiverMsg)?.payload)?;
                let response = researcher.finish(&request)?;
                channel.send(Frame::new(
                    MessageType::OtSenderMsg,
                    session,
                    wire::encode_ot_sender(&response),
                ))?;
            }
            MessageType::Result => {
                let result = wire::decode_result(&frame.payload)?;
                pk.check_ciphertext(&result)?;
                let count = researcher_decrypt_result(&result, sk)?;
                return Ok(ResearcherOutcome {
                    count,
                    result,
                    deltas,
                });
            }
            _ => {
                expect(frame, MessageType::MaskedValue)?;
            }
        }
    }
}
