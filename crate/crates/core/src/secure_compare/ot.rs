//! Batched 1-out-of-2 oblivious transfer of wire labels (Chou–Orlandi) over
//! the Ristretto group.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use super::garble::{WireLabel, LABEL_BYTES};
use super::{CompareError, Result};

pub const POINT_BYTES: usize = 32;

/// The sender's public point `A = aG`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtSetup(pub [u8; POINT_BYTES]);

/// One point per transfer: `bG` for choice 0, `A + bG` for choice 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtReceiverMsg(pub Vec<[u8; POINT_BYTES]>);

/// Both labels of every pair, each masked with a key only one choice can derive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtSenderMsg(pub Vec<[[u8; LABEL_BYTES]; 2]>);

fn random_scalar<R: RngCore + CryptoRng + ?Sized>(rng: &mut R) -> Scalar {
    let mut wide = [0u8; 64];
    rng.fill_bytes(&mut wide);
    Scalar::from_bytes_mod_order_wide(&wide)
}

fn decompress(bytes: &[u8; POINT_BYTES]) -> Result<RistrettoPoint> {
    CompressedRistretto(*bytes)
        .decompress()
        .ok_or(CompareError::MalformedGroupElement)
}

fn pad(index: usize, a: &[u8; POINT_BYTES], b: &[u8; POINT_BYTES], key: &RistrettoPoint) -> [u8; LABEL_BYTES] {
    let digest = Sha256::new()
        .chain_update(b"snpvault/ot")
        .chain_update((index as u64).to_be_bytes())
        .chain_update(a)
        .chain_update(b)
        .chain_update(key.compress().as_bytes())
        .finalize();
    digest[..LABEL_BYTES].try_into().expect("digest is 32 bytes")
}

fn xor(label: &WireLabel, mask: &[u8; LABEL_BYTES]) -> [u8; LABEL_BYTES] {
    let mut out = label.0;
    out.iter_mut().zip(mask).for_each(|(o, m)| *o ^= m);
    out
}

pub struct OtSender {
    a: Scalar,
    a_point: RistrettoPoint,
    a_bytes: [u8; POINT_BYTES],
    pairs: Vec<[WireLabel; 2]>,
}

impl OtSender {
    pub fn new<R: RngCore + CryptoRng + ?Sized>(pairs: Vec<[WireLabel; 2]>, rng: &mut R) -> (Self, OtSetup) {
        let a = random_scalar(rng);
        let a_point = &a * RISTRETTO_BASEPOINT_TABLE;
        let a_bytes = a_point.compress().to_bytes();
        (
            Self {
                a,
                a_point,
                a_bytes,
                pairs,
            },
            OtSetup(a_bytes),
        )
    }

    pub fn respond(&self, msg: &OtReceiverMsg) -> Result<OtSenderMsg> {
        if msg.0.len() != self.pairs.len() {
            return Err(CompareError::LengthMismatch {
                expected: self.pairs.len(),
                found: msg.0.len(),
            });
        }
        let a_a = self.a * self.a_point;
        msg.0
            .iter()
            .zip(&self.pairs)
            .enumerate()
            .map(|(i, (b_bytes, pair))| {
                let b = decompress(b_bytes)?;
                let k0 = self.a * b;
                let k1 = k0 - a_a;
                Ok([
                    xor(&pair[0], &pad(i, &self.a_bytes, b_bytes, &k0)),
                    xor(&pair[1], &pad(i, &self.a_bytes, b_bytes, &k1)),
                ])
            })
            .collect::<Result<_>>()
            .map(OtSenderMsg)
    }
}

pub struct OtReceiver {
    a_bytes: [u8; POINT_BYTES],
    choices: Vec<bool>,
    keys: Vec<RistrettoPoint>,
    sent: Vec<[u8; POINT_BYTES]>,
}

impl OtReceiver {
    pub fn new<R: RngCore + CryptoRng + ?Sized>(
        setup: &OtSetup,
        choices: &[bool],
        rng: &mut R,
    ) -> Result<(Self, OtReceiverMsg)> {
        let a_point = decompress(&setup.0)?;
        let mut keys = Vec::with_capacity(choices.len());
        let mut sent = Vec::with_capacity(choices.len());
        for &c in choices {
            let b = random_scalar(rng);
            let bg = &b * RISTRETTO_BASEPOINT_TABLE;
            let point = if c { a_point + bg } else { bg };
            keys.push(b * a_point);
            sent.push(point.compress().to_bytes());
        }
        Ok((
            Self {
                a_bytes: setup.0,
                choices: choices.to_vec(),
                keys,
                sent: sent.clone(),
            },
            OtReceiverMsg(sent),
        ))
    }

    pub fn finish(self, msg: OtSenderMsg) -> Result<Vec<WireLabel>> {
        if msg.0.len() != self.choices.len() {
            return Err(CompareError::LengthMismatch {
                expected: self.choices.len(),
                found: msg.0.len(),
            });
        }
        Ok(msg
            .0
            .iter()
            .enumerate()
            .map(|(i, cts)| {
                let mask = pad(i, &self.a_bytes, &self.sent[i], &self.keys[i]);
                xor(&WireLabel(cts[usize::from(self.choices[i])]), &mask)
            })
            .map(WireLabel)
            .collect())
    }
}

/// Runs a whole transfer locally.
pub fn ot_exchange<R: RngCore + CryptoRng + ?Sized>(
    pairs: Vec<[WireLabel; 2]>,
    choices: &[bool],
    rng: &mut R,
) -> Result<Vec<WireLabel>> {
    let (sender, setup) = OtSender::new(pairs, rng);
    let (receiver, request) = OtReceiver::new(&setup, choices, rng)?;
    receiver.finish(sender.respond(&request)?)
}
