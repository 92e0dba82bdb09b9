//! Payload layouts for every protocol message. All integers are big-endian;
//! ciphertexts and other variable-length fields carry a `u32` length prefix.

use crate::genomics::SnpId;
use crate::paillier::Ciphertext;
use crate::secure_compare::{
    GarbledCircuit, GarbledOffer, GarbledTable, OtReceiverMsg, OtSenderMsg, OtSetup, WireLabel,
    LABEL_BYTES, POINT_BYTES,
};

use super::{ProtocolError, Result};

#[derive(Default)]
pub(crate) struct Writer(Vec<u8>);

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.extend_from_slice(bytes);
        self
    }

    pub fn prefixed(&mut self, bytes: &[u8]) -> &mut Self {
        self.u32(bytes.len() as u32).raw(bytes)
    }

    pub fn ciphertext(&mut self, c: &Ciphertext) -> &mut Self {
        self.prefixed(&c.to_bytes_be())
    }

    pub fn finish(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.0)
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, what }
    }

    fn malformed(&self, detail: &str) -> ProtocolError {
        ProtocolError::Malformed(format!("{}: {detail}", self.what))
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(self.malformed("truncated"));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.raw(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.raw(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn prefixed(&mut self) -> Result<&'a [u8]> {
        let len = self.u32()? as usize;
        self.raw(len)
    }

    pub fn ciphertext(&mut self) -> Result<Ciphertext> {
        Ok(Ciphertext::from_bytes_be(self.prefixed()?))
    }

    /// A `u32` element count, sanity-checked against the bytes left.
    pub fn count(&mut self, min_element_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_element_bytes) > self.bytes.len() {
            return Err(self.malformed("element count exceeds payload"));
        }
        Ok(n)
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len()
    }

    pub fn end(self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(self.malformed("trailing bytes"))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedTerm {
    pub sid: SnpId,
    pub enc_val: Ciphertext,
}

/// `φ(sid, ξ(val))` terms, sids strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncryptedQuery {
    pub terms: Vec<EncryptedTerm>,
}

impl EncryptedQuery {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_sid(&self) -> Option<SnpId> {
        self.terms.last().map(|t| t.sid)
    }

    pub fn position(&self, sid: SnpId) -> Option<usize> {
        self.terms.binary_search_by_key(&sid, |t| t.sid).ok()
    }
}

/// QUERY_START: `[u8 κ][u32 n]` then per term `[u32 sid][ciphertext]`.
pub fn encode_query_start(mask_bits: u32, query: &EncryptedQuery) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(mask_bits as u8).u32(query.terms.len() as u32);
    for t in &query.terms {
        w.u32(t.sid.get()).ciphertext(&t.enc_val);
    }
    w.finish()
}

pub fn decode_query_start(payload: &[u8]) -> Result<(u32, EncryptedQuery)> {
    let mut r = Reader::new(payload, "QUERY_START");
    let mask_bits = u32::from(r.u8()?);
    let n = r.count(8)?;
    let mut terms = Vec::with_capacity(n);
    for _ in 0..n {
        let sid = SnpId(r.u32()?);
        if terms.last().is_some_and(|t: &EncryptedTerm| t.sid >= sid) || sid.get() == 0 {
            return Err(ProtocolError::Malformed(
                "QUERY_START: sids must be positive and strictly increasing".into(),
            ));
        }
        terms.push(EncryptedTerm {
            sid,
            enc_val: r.ciphertext()?,
        });
    }
    r.end()?;
    Ok((mask_bits, EncryptedQuery { terms }))
}

/// MASKED_VALUE: `[u32 term index][δ̃]`.
pub fn encode_masked_value(term: u32, masked: &Ciphertext) -> Vec<u8> {
    Writer::new().u32(term).ciphertext(masked).finish()
}

pub fn decode_masked_value(payload: &[u8]) -> Result<(u32, Ciphertext)> {
    let mut r = Reader::new(payload, "MASKED_VALUE");
    let term = r.u32()?;
    let c = r.ciphertext()?;
    r.end()?;
    Ok((term, c))
}

/// GARBLED_CIRCUIT: tables, garbler labels, output digests, then the OT point.
pub fn encode_garbled_offer(offer: &GarbledOffer) -> Vec<u8> {
    let gc = &offer.gc;
    let mut w = Writer::new();
    w.u32(gc.tables.len() as u32);
    for t in &gc.tables {
        for row in &t.0 {
            w.raw(row);
        }
    }
    w.u32(gc.garbler_labels.len() as u32);
    for l in &gc.garbler_labels {
        w.raw(&l.0);
    }
    w.u32(gc.output_decoding.len() as u32);
    for [d0, d1] in &gc.output_decoding {
        w.raw(d0).raw(d1);
    }
    w.raw(&offer.ot_setup.0);
    w.finish()
}

pub fn decode_garbled_offer(payload: &[u8]) -> Result<GarbledOffer> {
    let mut r = Reader::new(payload, "GARBLED_CIRCUIT");
    let n = r.count(4 * LABEL_BYTES)?;
    let tables = (0..n)
        .map(|_| {
            Ok(GarbledTable([
                r.array()?,
                r.array()?,
                r.array()?,
                r.array()?,
            ]))
        })
        .collect::<Result<_>>()?;
    let n = r.count(LABEL_BYTES)?;
    let garbler_labels = (0..n).map(|_| r.array().map(WireLabel)).collect::<Result<_>>()?;
    let n = r.count(2 * LABEL_BYTES)?;
    let output_decoding = (0..n)
        .map(|_| Ok([r.array()?, r.array()?]))
        .collect::<Result<_>>()?;
    let ot_setup = OtSetup(r.array::<POINT_BYTES>()?);
    r.end()?;
    Ok(GarbledOffer {
        gc: GarbledCircuit {
            tables,
            garbler_labels,
            output_decoding,
        },
        ot_setup,
    })
}

/// OT_RECEIVER_MSG: `[u32 n]` then n compressed points.
pub fn encode_ot_receiver(msg: &OtReceiverMsg) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(msg.0.len() as u32);
    msg.0.iter().for_each(|p| {
        w.raw(p);
    });
    w.finish()
}

pub fn decode_ot_receiver(payload: &[u8]) -> Result<OtReceiverMsg> {
    let mut r = Reader::new(payload, "OT_RECEIVER_MSG");
    let n = r.count(POINT_BYTES)?;
    let points = (0..n).map(|_| r.array()).collect::<Result<_>>()?;
    r.end()?;
    Ok(OtReceiverMsg(points))
}

/// OT_SENDER_MSG: `[u32 n]` then n pairs of masked labels.
pub fn encode_ot_sender(msg: &OtSenderMsg) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(msg.0.len() as u32);
    msg.0.iter().for_each(|[a, b]| {
        w.raw(a).raw(b);
    });
    w.finish()
}

pub fn decode_ot_sender(payload: &[u8]) -> Result<OtSenderMsg> {
    let mut r = Reader::new(payload, "OT_SENDER_MSG");
    let n = r.count(2 * LABEL_BYTES)?;
    let pairs = (0..n)
        .map(|_| Ok([r.array()?, r.array()?]))
        .collect::<Result<_>>()?;
    r.end()?;
    Ok(OtSenderMsg(pairs))
}

/// RESULT: the re-randomized accumulator.
pub fn encode_result(c: &Ciphertext) -> Vec<u8> {
    Writer::new().ciphertext(c).finish()
}

pub fn decode_result(payload: &[u8]) -> Result<Ciphertext> {
    let mut r = Reader::new(payload, "RESULT");
    let c = r.ciphertext()?;
    r.end()?;
    Ok(c)
}

/// TREE_UPLOAD: `[u32 chunk index][u32 chunk total][bytes]`.
pub fn encode_tree_chunk(index: u32, total: u32, bytes: &[u8]) -> Vec<u8> {
    Writer::new().u32(index).u32(total).raw(bytes).finish()
}

pub fn decode_tree_chunk(payload: &[u8]) -> Result<(u32, u32, &[u8])> {
    let mut r = Reader::new(payload, "TREE_UPLOAD");
    let index = r.u32()?;
    let total = r.u32()?;
    let rest = r.remaining();
    Ok((index, total, r.raw(rest)?))
}

/// TREE_ACK: number of nodes received.
pub fn encode_tree_ack(nodes: u64) -> Vec<u8> {
    Writer::new().u64(nodes).finish()
}

pub fn decode_tree_ack(payload: &[u8]) -> Result<u64> {
    let mut r = Reader::new(payload, "TREE_ACK");
    let n = r.u64()?;
    r.end()?;
    Ok(n)
}

/// Error reported by the peer in an ERROR frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RemoteError {
    SidBeyondDepth { sid: u32, depth: u32 },
    MaskWidth(u32),
    Other(String),
}

impl std::fmt::Display for RemoteError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RemoteError::SidBeyondDepth { sid, depth } => {
                write!(f, "SNP id {sid} is beyond the tree depth {depth}")
            }
            RemoteError::MaskWidth(bits) => write!(f, "mask width {bits} rejected"),
            RemoteError::Other(msg) => f.write_str(msg),
        }
    }
}

/// ERROR: `[u8 code]` then code-specific fields.
pub fn encode_error(e: &RemoteError) -> Vec<u8> {
    let mut w = Writer::new();
    match e {
        RemoteError::SidBeyondDepth { sid, depth } => w.u8(1).u32(*sid).u32(*depth),
        RemoteError::MaskWidth(bits) => w.u8(2).u32(*bits),
        RemoteError::Other(msg) => w.u8(3).prefixed(msg.as_bytes()),
    };
    w.finish()
}

pub fn decode_error(payload: &[u8]) -> Result<RemoteError> {
    let mut r = Reader::new(payload, "ERROR");
    let e = match r.u8()? {
        1 => RemoteError::SidBeyondDepth {
            sid: r.u32()?,
            depth: r.u32()?,
        },
        2 => RemoteError::MaskWidth(r.u32()?),
        3 => RemoteError::Other(String::from_utf8_lossy(r.prefixed()?).into_owned()),
        code => return Err(ProtocolError::Malformed(format!("ERROR: unknown code {code}"))),
    };
    r.end()?;
    Ok(e)
}
