//! Key-holding side of the multi-class compressive sensing scheme.
//!
//! The encoder conceals each block with a key-derived mask and permutation
//! before measuring it with a public sensing matrix. Superusers hold both
//! class keys and recover the plaintext; semi-authorized users hold only the
//! mask key and recover a permuted copy that still supports order-free
//! statistics.

pub mod codec;
pub mod keys;
pub mod security;
pub mod transform;

pub use codec::{
    conceal, dec_semi, dec_semi_with, dec_super, dec_super_with, enc_block, enc_block_with,
    permuted_stats, BlockKind, BlockSecrets, BlockStats, CipherBlock, CipherFlags, CodecError,
    HistogramSpec, PlainBlock, TracedCipher,
};
pub use keys::{
    derive_subkeys, gen_mask, gen_permutation, keystream_bytes, keystream_bytes_at, Key, KeyError,
    MaskVector, MasterKey, Permutation, SubKeys, DEFAULT_LEVELS,
};
pub use mpcc_sparse::{DecompressedBlock, SensingMatrix};
pub use security::{
    brute_force_counts, secrecy_table, verify_perfect_secrecy, BruteForceCounts, FieldSpec,
    SecurityError,
};
pub use transform::{dct_basis, klt_train, BasisKind, OrthoBasis, TransformError};
