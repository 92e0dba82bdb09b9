use std::sync::OnceLock;

use num_bigint::BigUint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use snpvault_core::paillier::{add_ciphertexts, decrypt, encrypt, scalar_multiply, TEST_KEY_BITS};
use snpvault_core::{keygen_seeded_insecure, Keypair};

fn keys() -> &'static Keypair {
    static KEYS: OnceLock<Keypair> = OnceLock::new();
    KEYS.get_or_init(|| keygen_seeded_insecure(TEST_KEY_BITS, 2024).unwrap())
}

fn below_n(bytes: Vec<u8>) -> BigUint {
    BigUint::from_bytes_be(&bytes) % keys().public().n()
}

proptest! {
    #[test]
    fn addition_adds_plaintexts(a in prop::collection::vec(any::<u8>(), 1..40), b in prop::collection::vec(any::<u8>(), 1..40), seed: u64) {
        let (pk, sk) = (keys().public(), keys().secret());
        let (a, b) = (below_n(a), below_n(b));
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let sum = add_ciphertexts(pk, &encrypt(pk, &a, &mut rng).unwrap(), &encrypt(pk, &b, &mut rng).unwrap());
        prop_assert_eq!(decrypt(sk, &sum).unwrap(), (a + b) % pk.n());
    }

    #[test]
    fn scaling_multiplies_plaintexts(m in prop::collection::vec(any::<u8>(), 1..40), k: u64, seed: u64) {
        let (pk, sk) = (keys().public(), keys().secret());
        let m = below_n(m);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let c = scalar_multiply(pk, &encrypt(pk, &m, &mut rng).unwrap(), &BigUint::from(k));
        prop_assert_eq!(decrypt(sk, &c).unwrap(), (m * k) % pk.n());
    }

    #[test]
    fn crt_and_public_encryption_agree_on_plaintext(m in prop::collection::vec(any::<u8>(), 1..40), seed: u64) {
        use snpvault_core::Encryptor;
        let m = below_n(m);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let fast = keys().encrypt(&m, &mut rng).unwrap();
        let slow = keys().public().encrypt(&m, &mut rng).unwrap();
        prop_assert_ne!(&fast, &slow);
        prop_assert_eq!(decrypt(keys().secret(), &fast).unwrap(), m.clone());
        prop_assert_eq!(decrypt(keys().secret(), &slow).unwrap(), m);
    }
}
