use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use super::channels::{amplitude_damping_kraus, apply_kraus, dephasing_kraus};
use super::{build_hamiltonian, DensityMatrix, Hamiltonian};
use crate::error::{Error, Result};
use crate::model::{HamiltonianSpec, NoiseModel, NoisePolicy};

/// Eigenpairs of a real symmetric matrix. Many-body spectra are highly
/// degenerate, where nalgebra's QR iteration can return inaccurate vectors.
fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let eig = a.selfadjoint_eigendecomposition(faer::Side::Lower);
    let (s, u) = (eig.s().column_vector(), eig.u());
    (
        DVector::from_fn(n, |i, _| s.read(i)),
        DMatrix::from_fn(n, n, |i, j| u.read(i, j)),
    )
}

/// Eigendecomposition of `H`, computed once and reused for every time.
#[derive(Debug, Clone)]
pub struct Propagator {
    n_sites: usize,
    energies: DVector<f64>,
    vectors: DMatrix<f64>,
}

/// Real and imaginary parts of `U = exp(-iHt) = c - i s`; both are real
/// symmetric because `H` is.
#[derive(Debug, Clone)]
pub(crate) struct SplitUnitary {
    c: DMatrix<f64>,
    s: DMatrix<f64>,
}

impl Propagator {
    pub fn new(h: &Hamiltonian) -> Result<Self> {
        let (energies, vectors) = symmetric_eigen(&h.matrix);
        let resid = (&h.matrix * &vectors - &vectors * DMatrix::from_diagonal(&energies)).amax();
        let scale = h.matrix.amax().max(1.0);
        if !(resid <= 1e-10 * scale) {
            return Err(Error::Eigen(format!(
                "Hamiltonian eigenvectors inaccurate (residual {resid:e})"
            )));
        }
        Ok(Self {
            n_sites: h.n_sites,
            energies,
            vectors,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub(crate) fn split_unitary(&self, t: f64) -> SplitUnitary {
        let v = &self.vectors;
        let cos = DMatrix::from_diagonal(&self.energies.map(|e| (e * t).cos()));
        let sin = DMatrix::from_diagonal(&self.energies.map(|e| (e * t).sin()));
        SplitUnitary {
            c: v * cos * v.transpose(),
            s: v * sin * v.transpose(),
        }
    }

    /// `exp(-iHt) ψ`.
    pub fn evolve_state(&self, psi: &DVector<Complex64>, t: f64) -> DVector<Complex64> {
        let vt = self.vectors.transpose();
        let re = &vt * psi.map(|z| z.re);
        let im = &vt * psi.map(|z| z.im);
        let mut rot_re = DVector::zeros(re.len());
        let mut rot_im = DVector::zeros(re.len());
        for k in 0..re.len() {
            let (s, c) = (-self.energies[k] * t).sin_cos();
            rot_re[k] = c * re[k] - s * im[k];
            rot_im[k] = s * re[k] + c * im[k];
        }
        let out_re = &self.vectors * rot_re;
        let out_im = &self.vectors * rot_im;
        out_re.zip_map(&out_im, Complex64::new)
    }

    /// `U ρ U†`.
    pub fn evolve_density(&self, rho: &DensityMatrix, t: f64) -> DensityMatrix {
        let mut out = rho.clone();
        let mut ws = Workspace::new(rho.dim());
        self.split_unitary(t).conjugate(&mut out, &mut ws);
        out
    }
}

pub(crate) struct Workspace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Workspace {
    pub(crate) fn new(d: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DMatrix::zeros(d, d),
        }
    }
}

impl SplitUnitary {
    /// In place `ρ ← U ρ U†` with `U = c - i s`, `ρ = R + i I`:
    /// `U ρ = (cR + sI) + i(cI - sR) = A + iB`, then
    /// `(A + iB)(c + i s) = (Ac - Bs) + i(As + Bc)`.
    pub(crate) fn conjugate(&self, rho: &mut DensityMatrix, ws: &mut Workspace) {
        let (c, s) = (&self.c, &self.s);
        ws.a.gemm(1.0, c, &rho.re, 0.0);
        ws.a.gemm(1.0, s, &rho.im, 1.0);
        ws.b.gemm(1.0, c, &rho.im, 0.0);
        ws.b.gemm(-1.0, s, &rho.re, 1.0);
        rho.re.gemm(1.0, &ws.a, c, 0.0);
        rho.re.gemm(-1.0, &ws.b, s, 1.0);
        rho.im.gemm(1.0, &ws.a, s, 0.0);
        rho.im.gemm(1.0, &ws.b, c, 1.0);
        rho.mirror_lower();
    }
}

/// `ρ(t) = exp(-iHt) ρ exp(iHt)`.
pub fn evolve_unitary(rho: &DensityMatrix, h: &Hamiltonian, t: f64) -> Result<DensityMatrix> {
    Ok(Propagator::new(h)?.evolve_density(rho, t))
}

/// Alternates unitary intervals of length `dt` with Kraus channels placed
/// according to the noise policy.
pub struct NoisyEvolver {
    step: SplitUnitary,
    noise: NoiseModel,
    dephase: [nalgebra::Matrix2<f64>; 2],
    damp: [nalgebra::Matrix2<f64>; 4],
    n_sites: usize,
}

/// Channels chosen for one interval: `(dephasing sites, damping sites)`.
pub(crate) type Pattern = (Vec<usize>, Vec<usize>);

impl NoisyEvolver {
    pub fn new(propagator: &Propagator, noise: &NoiseModel) -> Self {
        Self {
            step: propagator.split_unitary(noise.dt),
            noise: *noise,
            dephase: dephasing_kraus(noise.gamma * noise.dt),
            damp: amplitude_damping_kraus(noise.big_gamma * noise.dt, noise.nbar),
            n_sites: propagator.n_sites,
        }
    }

    /// Intervals needed to reach `t`, rounding up.
    pub fn steps_for(&self, t: f64) -> usize {
        (t / self.noise.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn dt(&self) -> f64 {
        self.noise.dt
    }

    pub(crate) fn draw_pattern<R: Rng + ?Sized>(&self, rng: &mut R) -> Pattern {
        let n = self.n_sites;
        let dephasing = self.noise.gamma > 0.0;
        let damping = self.noise.big_gamma > 0.0;
        match self.noise.policy {
            NoisePolicy::AllSpins => (
                if dephasing { (0..n).collect() } else { vec![] },
                if damping { (0..n).collect() } else { vec![] },
            ),
            NoisePolicy::RandomSingleSpin => {
                let d = if dephasing {
                    vec![rng.random_range(0..n)]
                } else {
                    vec![]
                };
                let a = if damping {
                    vec![rng.random_range(0..n)]
                } else {
                    vec![]
                };
                (d, a)
            }
            NoisePolicy::RandomOneOf => {
                let use_dephasing = match (dephasing, damping) {
                    (true, true) => rng.random_bool(0.5),
                    (d, _) => d,
                };
                let site = rng.random_range(0..n);
                if use_dephasing {
                    (vec![site], vec![])
                } else if damping {
                    (vec![], vec![site])
                } else {
                    (vec![], vec![])
                }
            }
        }
    }

    pub(crate) fn apply_step(
        &self,
        rho: &mut DensityMatrix,
        pattern: &Pattern,
        ws: &mut Workspace,
    ) {
        self.step.conjugate(rho, ws);
        for &site in &pattern.0 {
            apply_kraus(rho, site, &self.dephase);
        }
        for &site in &pattern.1 {
            apply_kraus(rho, site, &self.damp);
        }
    }

    /// Evolve for `t` (rounded up to whole intervals). Returns the state and
    /// the time actually elapsed.
    pub fn evolve<R: Rng + ?Sized>(
        &self,
        rho: &DensityMatrix,
        t: f64,
        rng: &mut R,
    ) -> (DensityMatrix, f64) {
        let steps = self.steps_for(t);
        let mut out = rho.clone();
        let mut ws = Workspace::new(rho.dim());
        for _ in 0..steps {
            let pattern = self.draw_pattern(rng);
            self.apply_step(&mut out, &pattern, &mut ws);
        }
        (out, steps as f64 * self.noise.dt)
    }
}

/// One noise pattern applied to `rho` for time `t`.
pub fn noisy_evolve<R: Rng + ?Sized>(
    rho: &DensityMatrix,
    spec: &HamiltonianSpec,
    noise: &NoiseModel,
    t: f64,
    rng: &mut R,
) -> Result<(DensityMatrix, f64)> {
    let prop = Propagator::new(&build_hamiltonian(spec)?)?;
    Ok(NoisyEvolver::new(&prop, noise).evolve(rho, t, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{haar_state, spin1_state, Pauli};
    use crate::model::Basis;
    use crate::stream::{stream, Purpose};

    fn plus_x_times_mixed(n: usize) -> DensityMatrix {
        DensityMatrix::product_spin1(
            spin1_state(Basis::X, 1),
            &DensityMatrix::maximally_mixed(n - 1),
        )
    }

    #[test]
    fn zero_time_is_identity() {
        let h = build_hamiltonian(&HamiltonianSpec::xx(vec![1.0, 0.8])).unwrap();
        let rho = plus_x_times_mixed(3);
        let out = evolve_unitary(&rho, &h, 0.0).unwrap();
        assert!(out.max_abs_diff(&rho) < 1e-15);
    }

    #[test]
    fn eigenstates_are_stationary() {
        let h = build_hamiltonian(&HamiltonianSpec::xx(vec![1.0, 0.8])).unwrap();
        let eig = h.matrix.clone().symmetric_eigen();
        let psi = eig.eigenvectors.column(3).map(|x| Complex64::new(x, 0.0));
        let rho = DensityMatrix::from_pure(3, &psi);
        let out = evolve_unitary(&rho, &h, 2.7).unwrap();
        assert!(out.max_abs_diff(&rho) < 1e-12);
    }

    #[test]
    fn two_site_closed_form() {
        let h = build_hamiltonian(&HamiltonianSpec::xx(vec![1.0])).unwrap();
        let rho = plus_x_times_mixed(2);
        let p = Propagator::new(&h).unwrap();
        for t in [0.1, 0.7, 2.0, 3.0] {
            let out = p.evolve_density(&rho, t);
            assert!((out.expect(0, Pauli::X) - (2.0 * t).cos()).abs() < 1e-12);
            assert!((out.trace().re - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn state_and_density_evolution_agree() {
        let h = build_hamiltonian(&HamiltonianSpec::xy(
            vec![1.0, 0.6, 1.2],
            vec![0.4, 1.1, 0.9],
        ))
        .unwrap();
        let p = Propagator::new(&h).unwrap();
        let mut rng = stream(5, Purpose::Hidden, 0, 0, 0);
        let psi = haar_state(4, &mut rng);
        let rho_t = p.evolve_density(&DensityMatrix::from_pure(4, &psi), 1.3);
        let psi_t = DensityMatrix::from_pure(4, &p.evolve_state(&psi, 1.3));
        assert!(rho_t.max_abs_diff(&psi_t) < 1e-12);
    }

    #[test]
    fn noiseless_steps_match_direct_evolution() {
        let spec = HamiltonianSpec::xx(vec![1.02, 1.26, 0.94]);
        let noise = NoiseModel {
            gamma: 0.0,
            big_gamma: 0.0,
            ..NoiseModel::none()
        };
        let rho = plus_x_times_mixed(4);
        let mut rng = stream(1, Purpose::Noise, 0, 0, 0);
        let (out, t) = noisy_evolve(&rho, &spec, &noise, 1.0, &mut rng).unwrap();
        let direct = evolve_unitary(&rho, &build_hamiltonian(&spec).unwrap(), t).unwrap();
        assert!(out.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn uncoupled_all_spins_dephasing_is_exponential() {
        let spec = HamiltonianSpec {
            antiferromagnetic: false,
            ..HamiltonianSpec::xx(vec![0.0, 0.0])
        };
        let noise = NoiseModel {
            gamma: 0.5,
            big_gamma: 0.0,
            dt: 0.05,
            policy: NoisePolicy::AllSpins,
            ..NoiseModel::none()
        };
        let rho = plus_x_times_mixed(3);
        let mut rng = stream(1, Purpose::Noise, 0, 0, 0);
        let (out, t) = noisy_evolve(&rho, &spec, &noise, 1.0, &mut rng).unwrap();
        assert!((t - 1.0).abs() < 1e-12);
        assert!((out.expect(0, Pauli::X) - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn time_is_rounded_up_to_whole_intervals() {
        let prop =
            Propagator::new(&build_hamiltonian(&HamiltonianSpec::xx(vec![1.0])).unwrap()).unwrap();
        let ev = NoisyEvolver::new(
            &prop,
            &NoiseModel {
                dt: 0.1,
                ..NoiseModel::reference()
            },
        );
        assert_eq!(ev.steps_for(0.3), 3);
        assert_eq!(ev.steps_for(0.31), 4);
        assert_eq!(ev.steps_for(0.0), 0);
    }

    #[test]
    fn noisy_step_preserves_state_properties() {
        let spec = HamiltonianSpec::xx(vec![1.0, 0.7, 1.2]);
        let rho = plus_x_times_mixed(4);
        let mut rng = stream(9, Purpose::Noise, 0, 0, 0);
        let noise = NoiseModel {
            dt: 0.05,
            ..NoiseModel::reference()
        };
        let (out, _) = noisy_evolve(&rho, &spec, &noise, 1.0, &mut rng).unwrap();
        assert!((out.trace().re - 1.0).abs() < 1e-12);
        assert_eq!(out.hermiticity_error(), 0.0);
        assert!(out.min_eigenvalue() > -1e-10);
    }
}
