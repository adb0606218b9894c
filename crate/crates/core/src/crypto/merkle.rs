//! Binary Merkle trees over session digests, used to aggregate many
//! handshakes under one location statement.
//!
//! Leaves are inserted as-is (they are already digests); interior nodes are
//! `hash(0x01 ‖ left ‖ right)`. A level of odd width duplicates its last
//! node.

use alloc::vec::Vec;

use super::{hash_parts, CryptoError, Digest, DIGEST_LEN};
use crate::bytes::{PutExt, Reader};

const NODE_PREFIX: u8 = 0x01;

/// Which side of the running hash the sibling sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleProof {
    pub leaf_index: u32,
    pub siblings: Vec<(Digest, Side)>,
}

fn parent(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[&[NODE_PREFIX], left.as_bytes(), right.as_bytes()])
}

impl MerkleTree {
    pub fn build(leaves: &[Digest]) -> Result<MerkleTree, CryptoError> {
        if leaves.is_empty() {
            return Err(CryptoError::EmptyTree);
        }
        let mut levels = alloc::vec![leaves.to_vec()];
        while levels.last().map_or(0, Vec::len) > 1 {
            let below = levels.last().unwrap();
            let next = below
                .chunks(2)
                .map(|pair| parent(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            levels.push(next);
        }
        Ok(MerkleTree { levels })
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn len(&self) -> usize {
        self.levels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn root(&self) -> Digest {
        self.levels.last().unwrap()[0]
    }

    pub fn prove(&self, index: usize) -> Result<MerkleProof, CryptoError> {
        if index >= self.len() {
            return Err(CryptoError::IndexOutOfRange);
        }
        let mut siblings = Vec::with_capacity(self.levels.len() - 1);
        let mut i = index;
        for level in &self.levels[..self.levels.len() - 1] {
            let entry = if i.is_multiple_of(2) {
                (*level.get(i + 1).unwrap_or(&level[i]), Side::Right)
            } else {
                (level[i - 1], Side::Left)
            };
            siblings.push(entry);
            i /= 2;
        }
        Ok(MerkleProof {
            leaf_index: index as u32,
            siblings,
        })
    }
}

impl MerkleProof {
    /// `index (u32) ‖ count (u8) ‖ count × (digest ‖ side)`, side 0 = left,
    /// 1 = right.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.siblings.len() * (DIGEST_LEN + 1));
        out.put_u32(self.leaf_index);
        out.push(self.siblings.len() as u8);
        for (d, side) in &self.siblings {
            out.extend_from_slice(d.as_bytes());
            out.push(match side {
                Side::Left => 0,
                Side::Right => 1,
            });
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<MerkleProof, CryptoError> {
        let mut r = Reader::new(bytes);
        let proof = Self::read(&mut r)?;
        r.finish().map_err(|_| CryptoError::Decode)?;
        Ok(proof)
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<MerkleProof, CryptoError> {
        let leaf_index = r.u32().map_err(|_| CryptoError::Decode)?;
        let count = r.u8().map_err(|_| CryptoError::Decode)?;
        let mut siblings = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let d = Digest(r.array().map_err(|_| CryptoError::Decode)?);
            let side = match r.u8().map_err(|_| CryptoError::Decode)? {
                0 => Side::Left,
                1 => Side::Right,
                _ => return Err(CryptoError::Decode),
            };
            siblings.push((d, side));
        }
        Ok(MerkleProof {
            leaf_index,
            siblings,
        })
    }

    /// Recompute the root from `leaf`. The sides must agree with the bits of
    /// `leaf_index`, and the index must fit in the proof's depth.
    pub fn compute_root(&self, leaf: &Digest) -> Option<Digest> {
        let depth = self.siblings.len();
        if depth < 32 && (self.leaf_index as u64) >> depth != 0 {
            return None;
        }
        let mut acc = *leaf;
        for (level, (sibling, side)) in self.siblings.iter().enumerate() {
            let bit = (self.leaf_index >> level) & 1;
            acc = match (side, bit) {
                (Side::Right, 0) => parent(&acc, sibling),
                (Side::Left, 1) => parent(sibling, &acc),
                _ => return None,
            };
        }
        Some(acc)
    }
}

pub fn merkle_build(leaves: &[Digest]) -> Result<MerkleTree, CryptoError> {
    MerkleTree::build(leaves)
}

pub fn merkle_root(tree: &MerkleTree) -> Digest {
    tree.root()
}

pub fn merkle_prove(tree: &MerkleTree, index: usize) -> Result<MerkleProof, CryptoError> {
    tree.prove(index)
}

pub fn merkle_verify(leaf: &Digest, proof: &MerkleProof, root: &Digest) -> bool {
    proof.compute_root(leaf).is_some_and(|r| r == *root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;

    fn leaves(n: usize) -> Vec<Digest> {
        (0..n as u32).map(|i| hash(&i.to_be_bytes())).collect()
    }

    /// Level-by-level reference: pad odd levels by copying the last node,
    /// then hash pairs with an explicit byte buffer.
    fn oracle_root(mut level: Vec<Digest>) -> Digest {
        while level.len() > 1 {
            if level.len() % 2 == 1 {
                level.push(*level.last().unwrap());
            }
            let mut next = Vec::new();
            let mut i = 0;
            while i < level.len() {
                let mut buf = Vec::new();
                buf.push(0x01);
                buf.extend_from_slice(&level[i].0);
                buf.extend_from_slice(&level[i + 1].0);
                next.push(hash(&buf));
                i += 2;
            }
            level = next;
        }
        level[0]
    }

    #[test]
    fn empty_is_error() {
        assert_eq!(merkle_build(&[]), Err(CryptoError::EmptyTree));
    }

    #[test]
    fn single_leaf_is_root() {
        let l = leaves(1);
        let t = merkle_build(&l).unwrap();
        assert_eq!(t.root(), l[0]);
        let p = t.prove(0).unwrap();
        assert!(p.siblings.is_empty());
        assert!(merkle_verify(&l[0], &p, &t.root()));
        assert_eq!(t.prove(1), Err(CryptoError::IndexOutOfRange));
    }

    #[test]
    fn two_leaves_sibling_is_other_digest() {
        let l = leaves(2);
        let t = merkle_build(&l).unwrap();
        assert_eq!(t.root(), hash_parts(&[&[1], &l[0].0, &l[1].0]));
        let p = t.prove(0).unwrap();
        assert_eq!(p.siblings, alloc::vec![(l[1], Side::Right)]);
    }

    #[test]
    fn four_leaves_client_one_gets_neighbour_and_subtree() {
        let l = leaves(4);
        let t = merkle_build(&l).unwrap();
        let h1 = hash_parts(&[&[1], &l[2].0, &l[3].0]);
        let p = t.prove(0).unwrap();
        assert_eq!(p.siblings, alloc::vec![(l[1], Side::Right), (h1, Side::Right)]);
    }

    #[test]
    fn round_trip_all_sizes() {
        for n in 1..=33 {
            let l = leaves(n);
            let t = merkle_build(&l).unwrap();
            assert_eq!(t.root(), oracle_root(l.clone()), "n={n}");
            let depth = if n == 1 { 0 } else { (n as f64).log2().ceil() as usize };
            for (i, leaf) in l.iter().enumerate() {
                let p = t.prove(i).unwrap();
                assert_eq!(p.siblings.len(), depth);
                assert!(merkle_verify(leaf, &p, &t.root()));
                assert_eq!(MerkleProof::decode(&p.encode()).unwrap(), p);
                for (j, other) in l.iter().enumerate() {
                    if other != leaf {
                        assert!(!merkle_verify(other, &p, &t.root()), "n={n} i={i} j={j}");
                    }
                }
            }
        }
    }

    /// Every single-bit corruption of every encoded proof in a 4-leaf tree
    /// either fails to decode or fails to verify.
    #[test]
    fn exhaustive_bit_corruption_n4() {
        let l = leaves(4);
        let t = merkle_build(&l).unwrap();
        for (i, leaf) in l.iter().enumerate() {
            let enc = t.prove(i).unwrap().encode();
            for byte in 0..enc.len() {
                for bit in 0..8 {
                    let mut bad = enc.clone();
                    bad[byte] ^= 1 << bit;
                    let ok = MerkleProof::decode(&bad)
                        .map(|p| merkle_verify(leaf, &p, &t.root()))
                        .unwrap_or(false);
                    assert!(!ok, "leaf {i} byte {byte} bit {bit}");
                }
            }
        }
    }

    #[test]
    fn odd_width_duplicates_last() {
        let l = leaves(3);
        let t = merkle_build(&l).unwrap();
        let p = t.prove(2).unwrap();
        assert_eq!(p.siblings[0], (l[2], Side::Right));
    }
}
