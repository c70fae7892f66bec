//! Secure federated aggregation over two non-colluding servers.
//!
//! The crate bundles everything needed to run (and audit) privacy-preserving
//! federated averaging rounds:
//!
//! * [`ahe`] — Paillier additively homomorphic encryption plus the fixed-point
//!   codec that maps real-valued model updates into the plaintext ring.
//! * [`bhm`] — the block-Hankel pruning codec: index-free structured
//!   compression of update matrices so that encrypted updates from different
//!   clients stay positionally aligned.
//! * [`dp`] — L2 clipping, Gaussian noise-scale derivation, Box-Muller
//!   sampling, and per-round privacy bookkeeping.
//! * [`protocol`] — the round protocol itself: client submission, server-side
//!   homomorphic aggregation, the masked-decryption handshake between the two
//!   servers, and an auditable ideal two-party functionality that unmasks the
//!   aggregate and injects the noise. Every party's view is logged to a
//!   [`protocol::RoundTranscript`] so leakage claims are testable.
//! * [`fedsim`] — a deterministic round-driven simulator with a toy linear
//!   regression task, client dropout injection, and CSV metric collection.
//! * [`cli`] — experiment config parsing and the `run` / `sweep` /
//!   `selfcheck` commands behind the `secfed` binary.
//! * [`oracle`] — independent reference computations (least-squares Hankel
//!   fit, dense linear solve) used by the self-check suite and tests.

pub mod ahe;
pub mod bhm;
pub mod cli;
pub mod dp;
pub mod fedsim;
pub mod oracle;
pub mod protocol;

pub use ahe::{keygen, Ciphertext, FixedPointParams, KeyPair, PublicKey, SecretKey};
pub use bhm::{BhmParams, BhmUpdate};
pub use dp::{DpParams, PrivacyLedger};
pub use fedsim::SimConfig;
pub use protocol::{NoiseMode, RoundTranscript};
