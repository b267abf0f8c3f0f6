//! Hamiltonian tomography of spin-1/2 chains from one accessible spin.
//!
//! The couplings of an `XX` (or anisotropic `XY`) nearest-neighbour chain are
//! recovered from the time trace of `⟨X_1(t)⟩` alone, without preparing the
//! chain. The crate covers the whole loop:
//!
//! * [`model`] and [`config`]: chain, noise and sampling descriptions.
//! * [`flux`]: the exact `N`-dimensional operator-flux model of `⟨X_1(t)⟩`.
//! * [`hilbert`]: a full `2^N` simulator of the measurement protocol, with
//!   Kraus noise, shot noise and spurious couplings.
//! * [`fit`]: cosine-sum fits of the measured trace.
//! * [`inverse`]: Jacobi inverse eigenvalue reconstruction of the couplings.
//! * [`pipeline`]: end-to-end runs, random ensembles and parameter sweeps.
//!
//! The guide in `book/` walks through each step; its code listings are
//! compiled and run as doc-tests of this crate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod export;
pub mod fit;
pub mod flux;
pub mod hilbert;
pub mod inverse;
pub mod model;
pub mod pipeline;
pub mod stream;

pub use error::{Error, Result, Violation};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/flux.md")]
    mod flux {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/inversion.md")]
    mod inversion {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
