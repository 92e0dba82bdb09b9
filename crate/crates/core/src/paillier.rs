//! Paillier additively homomorphic encryption with `g = n + 1`.
//!
//! Multiplying ciphertexts adds plaintexts modulo `n`; raising a ciphertext to
//! `k` multiplies its plaintext by `k`. Encryption is probabilistic: every call
//! draws a fresh randomizer `r^n mod n²`.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

/// Smallest modulus accepted by [`keygen`], which draws from OS entropy.
pub const MIN_PRODUCTION_KEY_BITS: u64 = 1024;
/// Smallest modulus accepted anywhere, for fast seeded test runs only.
pub const MIN_TEST_KEY_BITS: u64 = 128;
pub const DEFAULT_KEY_BITS: u64 = 1024;
pub const TEST_KEY_BITS: u64 = 256;

const MILLER_RABIN_ROUNDS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PaillierError {
    #[error("{requested}-bit keys requested, at least {minimum} bits required")]
    InsufficientKeyBits { requested: u64, minimum: u64 },
    #[error("plaintext is not in [0, n)")]
    MessageOutOfRange,
    #[error("ciphertext is not in [0, n²)")]
    CiphertextOutOfRange,
    #[error("malformed key file: {0}")]
    KeyFormat(String),
}

pub type Result<T, E = PaillierError> = std::result::Result<T, E>;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext(BigUint);

impl Ciphertext {
    /// Wraps a raw value without checking it against any key.
    pub fn from_biguint(c: BigUint) -> Self {
        Self(c)
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }

    pub fn into_biguint(self) -> BigUint {
        self.0
    }

    /// Minimal big-endian bytes.
    pub fn to_bytes_be(&self) -> Vec<u8> {
        self.0.to_bytes_be()
    }

    pub fn from_bytes_be(bytes: &[u8]) -> Self {
        Self(BigUint::from_bytes_be(bytes))
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = self.0.to_str_radix(16);
        let head = &hex[..hex.len().min(16)];
        write!(f, "Ciphertext({head}…, {} bits)", self.0.bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    g: BigUint,
}

impl PublicKey {
    pub fn new(n: BigUint) -> Self {
        let n_squared = &n * &n;
        let g = &n + 1u32;
        Self { n, n_squared, g }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Uniform element of `Z_n^*`.
    fn random_unit<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// `g^m` computed as `1 + m·n`, valid for `m < n`.
    fn g_pow(&self, m: &BigUint) -> BigUint {
        (m * &self.n + 1u32) % &self.n_squared
    }

    pub fn encrypt<R: RngCore + CryptoRng + ?Sized>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        Encryptor::encrypt(self, m, rng)
    }

    pub fn encrypt_u64<R: RngCore + CryptoRng + ?Sized>(
        &self,
        m: u64,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        self.encrypt(&BigUint::from(m), rng)
    }

    /// Homomorphic addition: `c1 · c2 mod n²`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Ciphertext {
        Ciphertext((&c1.0 * &c2.0) % &self.n_squared)
    }

    /// Homomorphic scaling: `c^k mod n²`.
    pub fn scalar_mul(&self, c: &Ciphertext, k: &BigUint) -> Ciphertext {
        Ciphertext(c.0.modpow(k, &self.n_squared))
    }

    /// Multiplies in a fresh encryption of zero.
    pub fn rerandomize<R: RngCore + CryptoRng + ?Sized>(
        &self,
        c: &Ciphertext,
        rng: &mut R,
    ) -> Ciphertext {
        let r = self.random_unit(rng).modpow(&self.n, &self.n_squared);
        Ciphertext((&c.0 * r) % &self.n_squared)
    }

    pub fn check_ciphertext(&self, c: &Ciphertext) -> Result<()> {
        if c.0 < self.n_squared {
            Ok(())
        } else {
            Err(PaillierError::CiphertextOutOfRange)
        }
    }

    /// `n=<decimal>` on a single line.
    pub fn to_key_file(&self) -> String {
        format!("n={}\n", self.n)
    }

    pub fn from_key_file(text: &str) -> Result<Self> {
        let fields = KeyFields::parse(text)?;
        Ok(Self::new(fields.require("n")?))
    }
}

/// Anything able to produce Paillier encryptions under a fixed public key.
pub trait Encryptor {
    fn public_key(&self) -> &PublicKey;

    /// A uniformly random `n`-th residue `r^n mod n²`, `r ∈ Z_n^*`.
    fn randomizer<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> BigUint;

    fn encrypt<R: RngCore + CryptoRng + ?Sized>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext> {
        let pk = self.public_key();
        if m >= &pk.n {
            return Err(PaillierError::MessageOutOfRange);
        }
        let rn = self.randomizer(rng);
        Ok(Ciphertext((pk.g_pow(m) * rn) % &pk.n_squared))
    }
}

impl Encryptor for PublicKey {
    fn public_key(&self) -> &PublicKey {
        self
    }

    fn randomizer<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> BigUint {
        self.random_unit(rng).modpow(&self.n, &self.n_squared)
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    n: BigUint,
    n_squared: BigUint,
    lambda: BigUint,
    mu: BigUint,
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKey")
            .field("n_bits", &self.n.bits())
            .finish_non_exhaustive()
    }
}

impl SecretKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey::new(self.n.clone())
    }

    /// `m = L(c^λ mod n²) · μ mod n` with `L(x) = (x − 1) / n`.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint> {
        if c.0 >= self.n_squared {
            return Err(PaillierError::CiphertextOutOfRange);
        }
        let x = c.0.modpow(&self.lambda, &self.n_squared);
        if x.is_zero() {
            // c shares a factor with n; not an honest encryption.
            return Err(PaillierError::CiphertextOutOfRange);
        }
        let l = (x - 1u32) / &self.n;
        Ok((l * &self.mu) % &self.n)
    }

    /// Decrypts and narrows to `u64`, failing if the plaintext is larger.
    pub fn decrypt_u64(&self, c: &Ciphertext) -> Result<u64> {
        let m = self.decrypt(c)?;
        u64::try_from(&m).map_err(|_| PaillierError::MessageOutOfRange)
    }

    /// Three lines: `n=`, `lambda=`, `mu=`, all decimal.
    pub fn to_key_file(&self) -> String {
        format!("n={}\nlambda={}\nmu={}\n", self.n, self.lambda, self.mu)
    }

    pub fn from_key_file(text: &str) -> Result<Self> {
        let fields = KeyFields::parse(text)?;
        let n = fields.require("n")?;
        let lambda = fields.require("lambda")?;
        let mu = fields.require("mu")?;
        if n < BigUint::from(3u32) || mu >= n {
            return Err(PaillierError::KeyFormat("inconsistent key values".into()));
        }
        Ok(Self {
            n_squared: &n * &n,
            n,
            lambda,
            mu,
        })
    }
}

struct KeyFields(Vec<(String, BigUint)>);

impl KeyFields {
    fn parse(text: &str) -> Result<Self> {
        let mut fields = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| PaillierError::KeyFormat(format!("expected key=value, got {line:?}")))?;
            let value = value
                .trim()
                .parse::<BigUint>()
                .map_err(|_| PaillierError::KeyFormat(format!("{} is not a decimal integer", key.trim())))?;
            fields.push((key.trim().to_owned(), value));
        }
        Ok(Self(fields))
    }

    fn require(&self, key: &str) -> Result<BigUint> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| PaillierError::KeyFormat(format!("missing field {key}")))
    }
}

/// A freshly generated key pair that still knows the factorization of `n`.
///
/// Knowing `p` and `q` lets the holder produce randomizers through the CRT:
/// for `r ∈ Z_n^*`, `r^n mod p²` is the unique `(p−1)`-th root of unity lifting
/// `r^q mod p`, which equals `s^p mod p²` with `s = r^q mod p`. Since
/// `gcd(q, p−1) = 1`, `s` is uniform in `Z_p^*` whenever `r` is, so sampling `s`
/// directly gives exactly the distribution of `r^n mod n²` at roughly half the
/// cost.
#[derive(Clone)]
pub struct Keypair {
    public: PublicKey,
    secret: SecretKey,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    /// `(p²)^{-1} mod q²`
    p_squared_inv: BigUint,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Keypair")
            .field("n_bits", &self.public.bits())
            .finish_non_exhaustive()
    }
}

impl Keypair {
    /// Builds keys from two distinct primes with `gcd(pq, (p−1)(q−1)) = 1`.
    pub fn from_primes(p: BigUint, q: BigUint) -> Option<Self> {
        if p == q || p < BigUint::from(3u32) || q < BigUint::from(3u32) {
            return None;
        }
        let n = &p * &q;
        let p1 = &p - 1u32;
        let q1 = &q - 1u32;
        if !n.gcd(&(&p1 * &q1)).is_one() {
            return None;
        }
        let lambda = p1.lcm(&q1);
        // With g = n + 1, L(g^λ mod n²) = λ mod n.
        let mu = (&lambda % &n).modinv(&n)?;
        let public = PublicKey::new(n.clone());
        let secret = SecretKey {
            n_squared: public.n_squared.clone(),
            n,
            lambda,
            mu,
        };
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let p_squared_inv = (&p_squared % &q_squared).modinv(&q_squared)?;
        Some(Self {
            public,
            secret,
            p,
            q,
            p_squared,
            q_squared,
            p_squared_inv,
        })
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    fn crt(&self, mod_p2: &BigUint, mod_q2: &BigUint) -> BigUint {
        let a = mod_p2 % &self.q_squared;
        let diff = (mod_q2 + &self.q_squared - a) % &self.q_squared;
        let h = (diff * &self.p_squared_inv) % &self.q_squared;
        mod_p2 + h * &self.p_squared
    }

    /// Residue `s^p mod p²` for a given `s ∈ Z_p^*`, exposed for tests.
    fn lift_p(&self, s: &BigUint) -> BigUint {
        s.modpow(&self.p, &self.p_squared)
    }

    fn lift_q(&self, s: &BigUint) -> BigUint {
        s.modpow(&self.q, &self.q_squared)
    }
}

impl Encryptor for Keypair {
    fn public_key(&self) -> &PublicKey {
        &self.public
    }

    fn randomizer<R: RngCore + CryptoRng + ?Sized>(&self, rng: &mut R) -> BigUint {
        let one = BigUint::one();
        let sp = rng.gen_biguint_range(&one, &self.p);
        let sq = rng.gen_biguint_range(&one, &self.q);
        self.crt(&self.lift_p(&sp), &self.lift_q(&sq))
    }
}

/// Generates production keys from OS entropy; `key_bits` must be at least
/// [`MIN_PRODUCTION_KEY_BITS`].
pub fn keygen(key_bits: u64) -> Result<Keypair> {
    if key_bits < MIN_PRODUCTION_KEY_BITS {
        return Err(PaillierError::InsufficientKeyBits {
            requested: key_bits,
            minimum: MIN_PRODUCTION_KEY_BITS,
        });
    }
    keygen_with_rng(key_bits, &mut rand::rngs::OsRng)
}

/// Deterministic keys for tests and benchmarks. Anyone knowing the seed knows
/// the secret key: never use these to protect data.
pub fn keygen_seeded_insecure(key_bits: u64, seed: u64) -> Result<Keypair> {
    keygen_with_rng(key_bits, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn keygen_with_rng<R: RngCore + CryptoRng + ?Sized>(
    key_bits: u64,
    rng: &mut R,
) -> Result<Keypair> {
    if key_bits < MIN_TEST_KEY_BITS {
        return Err(PaillierError::InsufficientKeyBits {
            requested: key_bits,
            minimum: MIN_TEST_KEY_BITS,
        });
    }
    let p_bits = key_bits - key_bits / 2;
    let q_bits = key_bits / 2;
    loop {
        let p = random_prime(p_bits, rng);
        let q = random_prime(q_bits, rng);
        if let Some(keys) = Keypair::from_primes(p, q) {
            debug_assert_eq!(keys.public.bits(), key_bits);
            return Ok(keys);
        }
    }
}

pub fn encrypt<R: RngCore + CryptoRng + ?Sized>(
    pk: &PublicKey,
    m: &BigUint,
    rng: &mut R,
) -> Result<Ciphertext> {
    pk.encrypt(m, rng)
}

pub fn decrypt(sk: &SecretKey, c: &Ciphertext) -> Result<BigUint> {
    sk.decrypt(c)
}

pub fn add_ciphertexts(pk: &PublicKey, c1: &Ciphertext, c2: &Ciphertext) -> Ciphertext {
    pk.add(c1, c2)
}

pub fn scalar_multiply(pk: &PublicKey, c: &Ciphertext, k: &BigUint) -> Ciphertext {
    pk.scalar_mul(c, k)
}

const SMALL_PRIMES: [u32; 53] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191, 193,
    197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Random prime of exactly `bits` bits with the top two bits set, so that the
/// product of two such primes has exactly the sum of their lengths.
fn random_prime<R: RngCore + CryptoRng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 16, "prime size too small");
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, MILLER_RABIN_ROUNDS, rng) {
            return candidate;
        }
    }
}

/// Trial division by small primes, then Miller–Rabin with random bases.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n.is_even() {
        return n == &two;
    }
    for &sp in &SMALL_PRIMES {
        if (n % sp).is_zero() {
            return n == &BigUint::from(sp);
        }
    }
    if n < &BigUint::from(65_536u32) {
        // Below 256², surviving trial division already proves primality.
        return true;
    }

    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
