use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};

use crate::genomics::SnpId;
use crate::index_tree::{IndexTree, NodeId};
use crate::paillier::{Ciphertext, Encryptor, PublicKey, SecretKey};

use super::wire::{Reader, Writer};
use super::{ProtocolError, Result};

/// `σ(sid, ξ(val), ξ(count), children)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedNode {
    pub sid: SnpId,
    pub enc_val: Ciphertext,
    pub enc_count: Ciphertext,
    children: Vec<u32>,
}

impl EncryptedNode {
    /// Child ids (preorder positions).
    pub fn children(&self) -> &[u32] {
        &self.children
    }
}

/// The encrypted index tree. Nodes are stored in preorder and identified by
/// their preorder position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedTree {
    pk: PublicKey,
    depth: u32,
    nodes: Vec<EncryptedNode>,
    roots: Vec<u32>,
}

impl EncryptedTree {
    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: u32) -> &EncryptedNode {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[EncryptedNode] {
        &self.nodes
    }

    pub fn roots(&self) -> &[u32] {
        &self.roots
    }

    /// Preorder stream: `[n][u32 depth][u32 root count]`, then per node
    /// `[u32 sid][ξ(val)][ξ(count)][u32 child count]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.prefixed(&self.pk.n().to_bytes_be())
            .u32(self.depth)
            .u32(self.roots.len() as u32);
        for node in &self.nodes {
            w.u32(node.sid.get())
                .ciphertext(&node.enc_val)
                .ciphertext(&node.enc_count)
                .u32(node.children.len() as u32);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |msg: &str| ProtocolError::Malformed(format!("encrypted tree: {msg}"));
        let mut r = Reader::new(bytes, "encrypted tree");
        let pk = PublicKey::new(BigUint::from_bytes_be(r.prefixed()?));
        let depth = r.u32()?;
        let n_roots = r.u32()? as usize;

        let mut nodes: Vec<EncryptedNode> = Vec::new();
        let mut roots = Vec::with_capacity(n_roots.min(1 << 16));
        // (node id, children still to read); the sentinel root has id None.
        let mut open: Vec<(Option<u32>, usize)> = vec![(None, n_roots)];
        while let Some(top) = open.last_mut() {
            if top.1 == 0 {
                open.pop();
                continue;
            }
            top.1 -= 1;
            let parent = top.0;
            let expected_sid = parent.map_or(1, |p| nodes[p as usize].sid.get() + 1);
            let sid = SnpId(r.u32()?);
            if sid.get() != expected_sid || sid.get() > depth {
                return Err(malformed("node sid does not follow its parent"));
            }
            let enc_val = r.ciphertext()?;
            let enc_count = r.ciphertext()?;
            pk.check_ciphertext(&enc_val)?;
            pk.check_ciphertext(&enc_count)?;
            let n_children = r.u32()? as usize;
            if n_children > 0 && sid.get() == depth {
                return Err(malformed("leaf level node has children"));
            }
            let id = nodes.len() as u32;
            nodes.push(EncryptedNode {
                sid,
                enc_val,
                enc_count,
                children: Vec::new(),
            });
            match parent {
                Some(p) => nodes[p as usize].children.push(id),
                None => roots.push(id),
            }
            open.push((Some(id), n_children));
        }
        r.end()?;
        Ok(Self {
            pk,
            depth,
            nodes,
            roots,
        })
    }

    /// Decrypts every node back to `(sid, val, count)` in preorder.
    pub fn decrypt_nodes(&self, sk: &SecretKey) -> Result<Vec<(SnpId, u64, u64)>> {
        self.nodes
            .iter()
            .map(|n| Ok((n.sid, sk.decrypt_u64(&n.enc_val)?, sk.decrypt_u64(&n.enc_count)?)))
            .collect()
    }
}

/// Encrypts every node's value and count with fresh randomness, keeping sids
/// and structure. Pass a [`crate::paillier::Keypair`] to use the key holder's
/// faster encryption.
pub fn ci_encrypt_tree<E: Encryptor, R: RngCore + CryptoRng + ?Sized>(
    tree: &IndexTree,
    encryptor: &E,
    rng: &mut R,
) -> Result<EncryptedTree> {
    let order = tree.preorder();
    let positions = tree.preorder_positions();
    let mut nodes = Vec::with_capacity(order.len());
    for &id in &order {
        let node = tree.node(id);
        nodes.push(EncryptedNode {
            sid: node.sid,
            enc_val: encryptor.encrypt(&BigUint::from(node.val), rng)?,
            enc_count: encryptor.encrypt(&BigUint::from(node.count), rng)?,
            children: node
                .children()
                .iter()
                .map(|c: &NodeId| positions[c.index()])
                .collect(),
        });
    }
    Ok(EncryptedTree {
        pk: encryptor.public_key().clone(),
        depth: tree.depth() as u32,
        nodes,
        roots: tree.roots().iter().map(|r| positions[r.index()]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genomics::parse_dataset;
    use crate::index_tree::build_tree;
    use crate::paillier::{keygen_seeded_insecure, Keypair, TEST_KEY_BITS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup() -> (IndexTree, Keypair) {
        let data = parse_dataset(include_str!("../../../../data/sample10.csv").as_bytes()).unwrap();
        (build_tree(&data).unwrap(), keygen_seeded_insecure(TEST_KEY_BITS, 1).unwrap())
    }

    #[test]
    fn decrypts_to_plaintext_tree() {
        let (tree, keys) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let enc = ci_encrypt_tree(&tree, &keys, &mut rng).unwrap();
        assert_eq!(enc.node_count(), tree.node_count());
        assert_eq!(enc.depth(), 6);
        let plain: Vec<_> = tree
            .preorder()
            .into_iter()
            .map(|id| {
                let n = tree.node(id);
                (n.sid, u64::from(n.val), n.count)
            })
            .collect();
        assert_eq!(enc.decrypt_nodes(keys.secret()).unwrap(), plain);
        let level_one: Vec<u64> = enc
            .roots()
            .iter()
            .map(|&r| keys.secret().decrypt_u64(&enc.node(r).enc_count).unwrap())
            .collect();
        assert_eq!(level_one, [5, 3, 2]);
    }

    #[test]
    fn encryption_is_probabilistic_and_structure_preserving() {
        let (tree, keys) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = ci_encrypt_tree(&tree, keys.public(), &mut rng).unwrap();
        let b = ci_encrypt_tree(&tree, &keys, &mut rng).unwrap();
        assert_eq!(a.roots(), b.roots());
        for (x, y) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(x.sid, y.sid);
            assert_eq!(x.children(), y.children());
            assert_ne!(x.enc_val, y.enc_val);
            assert_ne!(x.enc_count, y.enc_count);
        }
    }

    #[test]
    fn serialization_round_trip() {
        let (tree, keys) = setup();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let enc = ci_encrypt_tree(&tree, &keys, &mut rng).unwrap();
        let bytes = enc.to_bytes();
        assert_eq!(EncryptedTree::from_bytes(&bytes).unwrap(), enc);
        // first node follows the header: sid 1
        let header = 4 + enc.public_key().n().to_bytes_be().len() + 8;
        assert_eq!(&bytes[header..header + 4], &[0, 0, 0, 1]);
        assert!(EncryptedTree::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(EncryptedTree::from_bytes(&extra).is_err());
    }
}
