//! Masked equality between an encrypted node value held by the cloud server
//! and a plaintext query value held by the researcher.
//!
//! The server blinds the ciphertext with a κ-bit mask μ. The researcher
//! decrypts δ = val_n + μ, computes μ' = (δ − val_q) mod 2^κ and garbles
//! `[μ' = μ]` with μ' as its input. The server fetches labels for μ by OT and
//! evaluates; only the server learns the bit.

use num_bigint::BigUint;
use num_traits::One;
use rand::{CryptoRng, Rng, RngCore};

use super::circuit::{build_equality_circuit, to_bits, BooleanCircuit};
use super::garble::{evaluate, garble, GarbledCircuit};
use super::ot::{OtReceiver, OtReceiverMsg, OtSender, OtSenderMsg, OtSetup};
use super::{CompareError, Result};
use crate::paillier::{Ciphertext, PublicKey, SecretKey};

pub const DEFAULT_MASK_BITS: u32 = 64;

/// Largest plaintext a compared value may take (genotype codes top out at 16).
const MAX_VALUE: u32 = 16;

/// Mask width κ in bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskWidth(u32);

impl MaskWidth {
    /// κ must leave room for the 5-bit values being compared.
    pub fn new(bits: u32) -> Result<Self> {
        if (5..=128).contains(&bits) {
            Ok(Self(bits))
        } else {
            Err(CompareError::MaskWidthOutOfRange(bits))
        }
    }

    /// As [`MaskWidth::new`], also requiring `κ + 5 < key_bits` so that
    /// `val + μ` never wraps modulo `n`.
    pub fn for_key(bits: u32, pk: &PublicKey) -> Result<Self> {
        let width = Self::new(bits)?;
        if u64::from(bits) + 5 >= pk.bits() {
            return Err(CompareError::MaskTooWideForKey {
                bits,
                key_bits: pk.bits(),
            });
        }
        Ok(width)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    fn modulus(self) -> BigUint {
        BigUint::one() << self.0
    }

    fn random_mask<R: RngCore + ?Sized>(self, rng: &mut R) -> u128 {
        let raw: u128 = rng.gen();
        if self.0 == 128 {
            raw
        } else {
            raw & ((1u128 << self.0) - 1)
        }
    }
}

impl Default for MaskWidth {
    fn default() -> Self {
        Self(DEFAULT_MASK_BITS)
    }
}

/// `(δ − val_q) mod 2^κ`.
pub(crate) fn unmask(delta: &BigUint, val_q: u32, width: MaskWidth) -> u128 {
    let modulus = width.modulus();
    let reduced = (delta % &modulus + &modulus - (BigUint::from(val_q) % &modulus)) % &modulus;
    u128::try_from(&reduced).expect("reduced below 2^128")
}

/// Server state after blinding: holds μ until the circuit arrives.
pub struct CsMasked {
    width: MaskWidth,
    mu: u128,
}

impl CsMasked {
    /// Returns `δ̃ = enc_val · ξ(μ)` to send to the researcher.
    pub fn new<R: RngCore + CryptoRng + ?Sized>(
        pk: &PublicKey,
        enc_val: &Ciphertext,
        width: MaskWidth,
        rng: &mut R,
    ) -> Result<(Ciphertext, Self)> {
        let mu = width.random_mask(rng);
        let enc_mu = pk.encrypt(&BigUint::from(mu), rng)?;
        Ok((pk.add(enc_val, &enc_mu), Self { width, mu }))
    }

    pub fn receive_offer<R: RngCore + CryptoRng + ?Sized>(
        self,
        offer: GarbledOffer,
        rng: &mut R,
    ) -> Result<(OtReceiverMsg, CsAwaitingLabels)> {
        let circuit = build_equality_circuit(self.width.bits())?;
        let (receiver, request) =
            OtReceiver::new(&offer.ot_setup, &to_bits(self.mu, self.width.bits()), rng)?;
        Ok((
            request,
            CsAwaitingLabels {
                circuit,
                gc: offer.gc,
                receiver,
            },
        ))
    }
}

/// Server state after requesting its input labels.
pub struct CsAwaitingLabels {
    circuit: BooleanCircuit,
    gc: GarbledCircuit,
    receiver: OtReceiver,
}

impl CsAwaitingLabels {
    /// Evaluates the circuit: `true` iff the node value equals the query value.
    pub fn finish(self, msg: OtSenderMsg) -> Result<bool> {
        let labels = self.receiver.finish(msg)?;
        Ok(evaluate(&self.circuit, &self.gc, &labels)?[0])
    }
}

/// What the researcher sends back for one comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GarbledOffer {
    pub gc: GarbledCircuit,
    pub ot_setup: OtSetup,
}

/// Researcher state between sending the circuit and answering the OT.
pub struct ResearcherSession {
    delta: BigUint,
    sender: OtSender,
}

impl ResearcherSession {
    pub fn respond<R: RngCore + CryptoRng + ?Sized>(
        sk: &SecretKey,
        masked: &Ciphertext,
        val_q: u32,
        width: MaskWidth,
        rng: &mut R,
    ) -> Result<(GarbledOffer, Self)> {
        let delta = sk.decrypt(masked)?;
        if delta > width.modulus() + (MAX_VALUE - 1) {
            return Err(CompareError::DecryptionMismatch);
        }
        let mu_prime = unmask(&delta, val_q, width);
        let circuit = build_equality_circuit(width.bits())?;
        let (gc, pairs) = garble(&circuit, &to_bits(mu_prime, width.bits()), rng)?;
        let (sender, ot_setup) = OtSender::new(pairs, rng);
        Ok((GarbledOffer { gc, ot_setup }, Self { delta, sender }))
    }

    /// The masked value the researcher saw.
    pub fn delta(&self) -> &BigUint {
        &self.delta
    }

    pub fn finish(self, msg: &OtReceiverMsg) -> Result<OtSenderMsg> {
        self.sender.respond(msg)
    }
}

/// Runs one comparison with both parties in-process.
pub fn masked_equality<R: RngCore + CryptoRng + ?Sized>(
    pk: &PublicKey,
    sk: &SecretKey,
    enc_val: &Ciphertext,
    val_q: u32,
    width: MaskWidth,
    rng: &mut R,
) -> Result<bool> {
    let (delta_tilde, cs) = CsMasked::new(pk, enc_val, width, rng)?;
    let (offer, researcher) = ResearcherSession::respond(sk, &delta_tilde, val_q, width, rng)?;
    let (request, cs) = cs.receive_offer(offer, rng)?;
    cs.finish(researcher.finish(&request)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::{keygen_seeded_insecure, Keypair, MIN_TEST_KEY_BITS, TEST_KEY_BITS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn keys() -> Keypair {
        keygen_seeded_insecure(TEST_KEY_BITS, 7).unwrap()
    }

    fn run(keys: &Keypair, val_n: u32, val_q: u32, rng: &mut ChaCha20Rng) -> bool {
        let enc = keys.public().encrypt_u64(val_n.into(), rng).unwrap();
        masked_equality(keys.public(), keys.secret(), &enc, val_q, MaskWidth::default(), rng).unwrap()
    }

    #[test]
    fn equal_and_unequal_values() {
        let keys = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(run(&keys, 6, 6, &mut rng));
        assert!(!run(&keys, 6, 16, &mut rng));
    }

    #[test]
    fn random_triples_match_plain_equality() {
        let keys = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let val_n = rng.gen_range(1..=16);
            let val_q = if rng.gen() { val_n } else { rng.gen_range(1..=16) };
            assert_eq!(run(&keys, val_n, val_q, &mut rng), val_n == val_q, "{val_n} {val_q}");
        }
    }

    #[test]
    fn masking_arithmetic_exhaustive_width_eight() {
        let width = MaskWidth::new(8).unwrap();
        for val_n in 1..=16u32 {
            for val_q in 1..=16u32 {
                for mu in 0..256u32 {
                    let delta = BigUint::from(val_n + mu);
                    assert_eq!(unmask(&delta, val_q, width) == u128::from(mu), val_n == val_q);
                }
            }
        }
    }

    #[test]
    fn masked_value_is_uniform_mod_two_to_kappa() {
        let keys = keygen_seeded_insecure(MIN_TEST_KEY_BITS, 3).unwrap();
        let width = MaskWidth::for_key(8, keys.public()).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let enc: Vec<Ciphertext> = (1..=16u64)
            .map(|v| keys.public().encrypt_u64(v, &mut rng).unwrap())
            .collect();
        let trials = 100_000usize;
        let mut bins = [0u64; 256];
        for i in 0..trials {
            let (masked, _) = CsMasked::new(keys.public(), &enc[i % 16], width, &mut rng).unwrap();
            let delta = keys.secret().decrypt(&masked).unwrap();
            bins[(delta % 256u32).to_u32_digits().first().copied().unwrap_or(0) as usize] += 1;
        }
        let expected = trials as f64 / 256.0;
        let stat: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(255.0).unwrap().cdf(stat);
        assert!(p > 0.001, "chi-square {stat}, p = {p}");
    }

    #[test]
    fn width_bounds() {
        let keys = keygen_seeded_insecure(MIN_TEST_KEY_BITS, 5).unwrap();
        assert_eq!(MaskWidth::new(4), Err(CompareError::MaskWidthOutOfRange(4)));
        assert_eq!(MaskWidth::new(129), Err(CompareError::MaskWidthOutOfRange(129)));
        assert!(MaskWidth::new(128).is_ok());
        assert!(MaskWidth::for_key(122, keys.public()).is_ok());
        assert_eq!(
            MaskWidth::for_key(123, keys.public()),
            Err(CompareError::MaskTooWideForKey { bits: 123, key_bits: 128 })
        );
    }

    #[test]
    fn full_width_mask() {
        let keys = keys();
        let width = MaskWidth::new(128).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let enc = keys.public().encrypt_u64(3, &mut rng).unwrap();
        assert!(masked_equality(keys.public(), keys.secret(), &enc, 3, width, &mut rng).unwrap());
        assert!(!masked_equality(keys.public(), keys.secret(), &enc, 4, width, &mut rng).unwrap());
    }

    #[test]
    fn oversized_plaintext_is_rejected() {
        let keys = keys();
        let width = MaskWidth::new(8).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let enc = keys.public().encrypt_u64(1 << 20, &mut rng).unwrap();
        let (masked, _) = CsMasked::new(keys.public(), &enc, width, &mut rng).unwrap();
        assert_eq!(
            ResearcherSession::respond(keys.secret(), &masked, 1, width, &mut rng).err(),
            Some(CompareError::DecryptionMismatch)
        );
    }

    #[test]
    fn researcher_sees_masked_value_only() {
        let keys = keys();
        let width = MaskWidth::default();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let enc = keys.public().encrypt_u64(6, &mut rng).unwrap();
        let (masked, cs) = CsMasked::new(keys.public(), &enc, width, &mut rng).unwrap();
        let (_, session) = ResearcherSession::respond(keys.secret(), &masked, 6, width, &mut rng).unwrap();
        assert_eq!(session.delta(), &BigUint::from(u128::from(6u32) + cs.mu));
    }
}
