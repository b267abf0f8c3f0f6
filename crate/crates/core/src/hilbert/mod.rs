//! Full `2^N` simulation of the single-spin measurement protocol.
//!
//! Site `k` (0-based; site 0 is the measured spin) is bit `N-1-k` of a basis
//! index, so spin 1 is the most significant qubit. `|0⟩` is the `Z = +1`
//! state.

mod channels;
mod evolve;
mod hamiltonian;
mod measure;
mod protocol;
mod state;

pub use channels::{
    amplitude_damping_kraus, apply_amplitude_damping, apply_dephasing, apply_kraus,
    dephasing_kraus, kraus_completeness_error,
};
pub use evolve::{evolve_unitary, noisy_evolve, NoisyEvolver, Propagator};
pub use hamiltonian::{
    build_hamiltonian, build_hamiltonian_capped, total_z_commutator_norm, Hamiltonian,
};
pub use measure::measure_spin1;
pub use protocol::{
    protocol_series, protocol_series_with, HiddenState, ProtocolOptions, SampleSeries, SeriesMeta,
};
pub use state::{haar_state, spin1_state, DensityMatrix, Pauli};

/// Largest chain the dense simulator accepts by default.
pub const MAX_SITES: usize = 10;

#[inline]
pub(crate) fn site_mask(n_sites: usize, site: usize) -> usize {
    1 << (n_sites - 1 - site)
}
