//! `birank`: bidirectional-likelihood reranking for cross-modal retrieval.
//!
//! The crate scores query/candidate pairs with the candidate likelihood and
//! the query likelihood of a generative model, removes the candidate prior
//! from the former (candidate prior normalization, CPN), fuses both, and
//! reranks a first-stage shortlist. Everything is checkable against exact
//! synthetic worlds where each probability can be enumerated.
//!
//! Module map:
//!
//! - [`logprob`], [`rng`], [`seq`], [`score`]: shared types and arithmetic.
//! - [`world`]: exact tabular generative worlds and brute-force oracles.
//! - [`bimodel`]: a trainable tabular bidirectional model.
//! - [`calibrate`]: CPN, score fusion and ranking.
//! - [`pipeline`]: first-stage top-K plus bidirectional rerank.
//! - [`evalkit`]: Recall@K, bias diagnostics and CSV exports.
//! - [`decode`]: prior-normalized greedy and nucleus decoding.
//! - [`cli`]: the `birank` command-line front end.

#![forbid(unsafe_code)]

pub mod bimodel;
pub mod calibrate;
pub mod cli;
pub mod decode;
pub mod error;
pub mod evalkit;
pub mod logprob;
pub mod pipeline;
pub mod rng;
pub mod score;
pub mod seq;
pub mod world;

pub use error::{Error, Result};
pub use logprob::{argmax_with_ties, log_sum_exp, LogProb, NEG_INF};
pub use rng::Rng;
pub use score::{MatrixKind, ScoreMatrix};
pub use seq::{Direction, Modality, Summary, Token, TokenSeq};
