//! Chain models, noise parameters and sampling plans.
//!
//! All energies and rates are dimensionless multiples of a reference
//! coupling `J`; times are in units of `1/J` and `ħ = 1`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::stream::{stream, Purpose};

/// Nearest-neighbour couplings `J_1..J_{N-1}` of an `N`-site chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSet {
    pub n_sites: usize,
    pub couplings: Vec<f64>,
}

impl CouplingSet {
    /// Chain length inferred from the number of bonds.
    pub fn new(couplings: Vec<f64>) -> Self {
        Self {
            n_sites: couplings.len() + 1,
            couplings,
        }
    }

    pub fn with_sites(n_sites: usize, couplings: Vec<f64>) -> Self {
        Self { n_sites, couplings }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n_sites: self.n_sites,
            couplings: self.couplings.iter().map(|j| j * c).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// `Σ J_i (X_i X_{i+1} + Y_i Y_{i+1})`, conserves total `Z`.
    Xx(CouplingSet),
    /// `Σ (J_{X,i} X_i X_{i+1} + J_{Y,i} Y_i Y_{i+1})`.
    Xy { jx: CouplingSet, jy: CouplingSet },
}

/// Where a family of spurious terms comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TermSource {
    Fixed(Vec<f64>),
    /// Uniform in `[-scale, scale]`, drawn from the experiment seed.
    Random,
}

/// Unwanted `h_i Z_i` fields and `g_i Z_i Z_{i+1}` couplings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousTerms {
    pub z_fields: Option<TermSource>,
    pub zz_couplings: Option<TermSource>,
    pub scale: f64,
}

pub const DEFAULT_SPURIOUS_SCALE: f64 = 0.1;

impl SpuriousTerms {
    pub fn random(scale: f64) -> Self {
        Self {
            z_fields: Some(TermSource::Random),
            zz_couplings: Some(TermSource::Random),
            scale,
        }
    }

    pub fn fixed(z_fields: Vec<f64>, zz_couplings: Vec<f64>) -> Self {
        Self {
            z_fields: Some(TermSource::Fixed(z_fields)),
            zz_couplings: Some(TermSource::Fixed(zz_couplings)),
            scale: DEFAULT_SPURIOUS_SCALE,
        }
    }

    pub fn is_realized(&self) -> bool {
        !matches!(self.z_fields, Some(TermSource::Random))
            && !matches!(self.zz_couplings, Some(TermSource::Random))
    }

    /// Concrete `h_i` values, zeros when absent. `None` while unrealized.
    pub fn z_values(&self, n_sites: usize) -> Option<Vec<f64>> {
        fixed_or_zero(&self.z_fields, n_sites)
    }

    pub fn zz_values(&self, n_sites: usize) -> Option<Vec<f64>> {
        fixed_or_zero(&self.zz_couplings, n_sites - 1)
    }

    /// Replace every `Random` source by a draw from the seed's spurious stream.
    pub fn realize(&self, n_sites: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Purpose::Spurious, 0, 0, 0);
        let mut draw = |src: &Option<TermSource>, len: usize| match src {
            Some(TermSource::Random) => Some(TermSource::Fixed(
                (0..len)
                    .map(|_| {
                        if self.scale > 0.0 {
                            rng.random_range(-self.scale..=self.scale)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )),
            other => other.clone(),
        };
        let z_fields = draw(&self.z_fields, n_sites);
        let zz_couplings = draw(&self.zz_couplings, n_sites - 1);
        Self {
            z_fields,
            zz_couplings,
            scale: self.scale,
        }
    }
}

fn fixed_or_zero(src: &Option<TermSource>, len: usize) -> Option<Vec<f64>> {
    match src {
        None => Some(vec![0.0; len]),
        Some(TermSource::Fixed(v)) => Some(v.clone()),
        Some(TermSource::Random) => None,
    }
}

/// The chain Hamiltonian under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub variant: Variant,
    pub spurious: Option<SpuriousTerms>,
    /// Require every coupling to be strictly positive.
    pub antiferromagnetic: bool,
}

impl HamiltonianSpec {
    pub fn xx(couplings: Vec<f64>) -> Self {
        Self {
            variant: Variant::Xx(CouplingSet::new(couplings)),
            spurious: None,
            antiferromagnetic: true,
        }
    }

    pub fn xy(jx: Vec<f64>, jy: Vec<f64>) -> Self {
        Self {
            variant: Variant::Xy {
                jx: CouplingSet::new(jx),
                jy: CouplingSet::new(jy),
            },
            spurious: None,
            antiferromagnetic: true,
        }
    }

    pub fn with_spurious(mut self, spurious: SpuriousTerms) -> Self {
        self.spurious = Some(spurious);
        self
    }

    pub fn n_sites(&self) -> usize {
        match &self.variant {
            Variant::Xx(c) => c.n_sites,
            Variant::Xy { jx, .. } => jx.n_sites,
        }
    }

    pub fn is_xy(&self) -> bool {
        matches!(self.variant, Variant::Xy { .. })
    }

    /// True when the spec carries no spurious term with a nonzero value.
    pub fn is_spurious_free(&self) -> bool {
        match &self.spurious {
            None => true,
            Some(s) => {
                let n = self.n_sites();
                match (s.z_values(n), s.zz_values(n)) {
                    (Some(z), Some(zz)) => z.iter().chain(&zz).all(|v| *v == 0.0),
                    _ => false,
                }
            }
        }
    }

    /// Same chain with every random spurious source drawn from `seed`.
    pub fn realized(&self, seed: u64) -> Self {
        let mut out = self.clone();
        if let Some(s) = &self.spurious {
            out.spurious = Some(s.realize(self.n_sites(), seed));
        }
        out
    }

    pub fn without_spurious(&self) -> Self {
        let mut out = self.clone();
        out.spurious = None;
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    X,
    Y,
}

impl Basis {
    pub fn as_str(self) -> &'static str {
        match self {
            Basis::X => "x",
            Basis::Y => "y",
        }
    }
}

/// Shots per time point. Serialized as `"exact"` or a count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ShotsRepr", try_from = "ShotsRepr")]
pub enum Shots {
    /// Expectation values computed analytically.
    Exact,
    Count(u32),
}

impl Shots {
    pub fn is_exact(self) -> bool {
        matches!(self, Shots::Exact)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShotsRepr {
    Count(u32),
    Keyword(String),
}

impl From<Shots> for ShotsRepr {
    fn from(s: Shots) -> Self {
        match s {
            Shots::Exact => ShotsRepr::Keyword("exact".into()),
            Shots::Count(c) => ShotsRepr::Count(c),
        }
    }
}

impl TryFrom<ShotsRepr> for Shots {
    type Error = String;

    fn try_from(r: ShotsRepr) -> std::result::Result<Self, String> {
        match r {
            ShotsRepr::Count(c) => Ok(Shots::Count(c)),
            ShotsRepr::Keyword(k) if k == "exact" => Ok(Shots::Exact),
            ShotsRepr::Keyword(k) => Err(format!("expected \"exact\" or a count, got \"{k}\"")),
        }
    }
}

/// How Kraus channels are scattered over the chain in each interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    /// Dephasing on one random spin and damping on an independently chosen
    /// random spin per interval.
    RandomSingleSpin,
    /// Both channels on every spin per interval.
    AllSpins,
    /// One channel type, chosen with equal odds, on one random spin.
    RandomOneOf,
}

impl NoisePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            NoisePolicy::RandomSingleSpin => "random_single_spin",
            NoisePolicy::AllSpins => "all_spins",
            NoisePolicy::RandomOneOf => "random_one_of",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random_single_spin" => Some(Self::RandomSingleSpin),
            "all_spins" => Some(Self::AllSpins),
            "random_one_of" => Some(Self::RandomOneOf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Dephasing rate γ.
    pub gamma: f64,
    /// Amplitude damping rate Γ.
    pub big_gamma: f64,
    /// Mean thermal occupation of each spin's bath.
    pub nbar: f64,
    /// Length of one unitary + channel interval.
    pub dt: f64,
    /// Number of independent noise patterns averaged.
    pub runs: u32,
    pub policy: NoisePolicy,
}

pub const DEFAULT_NOISE_DT: f64 = PI / 250.0;
pub const DEFAULT_NOISE_RUNS: u32 = 100;

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            gamma: 0.0,
            big_gamma: 0.0,
            nbar: 0.0,
            dt: DEFAULT_NOISE_DT,
            runs: DEFAULT_NOISE_RUNS,
            policy: NoisePolicy::RandomSingleSpin,
        }
    }

    /// γ = 0.5, Γ = 0.2, n̄ = 0.01 with the default interval and 100 runs.
    pub fn reference() -> Self {
        Self {
            gamma: 0.5,
            big_gamma: 0.2,
            nbar: 0.01,
            ..Self::none()
        }
    }

    pub fn is_active(&self) -> bool {
        self.gamma > 0.0 || self.big_gamma > 0.0
    }

    pub fn p(&self) -> f64 {
        thermal_p(self.nbar)
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

/// `p = (n̄ + 1) / (2 n̄ + 1)`: weight of the decaying branch of the
/// finite-temperature damping channel.
pub fn thermal_p(nbar: f64) -> f64 {
    (nbar + 1.0) / (2.0 * nbar + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub t_max: f64,
    pub n_points: usize,
    pub n_meas: Shots,
    pub basis: Basis,
    pub seed: u64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            t_max: PI,
            n_points: 25,
            n_meas: Shots::Exact,
            basis: Basis::X,
            seed: 0,
        }
    }
}

impl SamplingPlan {
    pub fn step(&self) -> f64 {
        self.t_max / self.n_points as f64
    }

    /// Nominal grid `t_j = j * t_max / n_points`, `j = 1..=n_points`.
    pub fn times(&self) -> Vec<f64> {
        (1..=self.n_points)
            .map(|j| j as f64 * self.t_max / self.n_points as f64)
            .collect()
    }
}

/// A configuration that passed [`validate`]. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    spec: HamiltonianSpec,
    noise: NoiseModel,
    plan: SamplingPlan,
}

impl ValidatedConfig {
    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn plan(&self) -> &SamplingPlan {
        &self.plan
    }

    pub fn into_parts(self) -> (HamiltonianSpec, NoiseModel, SamplingPlan) {
        (self.spec, self.noise, self.plan)
    }

    pub fn with_plan(&self, plan: SamplingPlan) -> Result<Self> {
        validate(&self.spec, &self.noise, &plan)
    }

    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        validate(&self.spec, &noise, &self.plan)
    }

    pub fn with_spec(&self, spec: HamiltonianSpec) -> Result<Self> {
        validate(&spec, &self.noise, &self.plan)
    }
}

fn check_set(what: &'static str, set: &CouplingSet, af: bool, out: &mut Vec<Violation>) {
    if set.n_sites < 2 {
        out.push(Violation::TooFewSites(set.n_sites));
    }
    if set.couplings.len() + 1 != set.n_sites {
        out.push(Violation::DimensionMismatch {
            what,
            expected: set.n_sites.saturating_sub(1),
            found: set.couplings.len(),
        });
    }
    for (index, &value) in set.couplings.iter().enumerate() {
        if !value.is_finite() {
            out.push(Violation::NonFinite { what, index });
        } else if af && value <= 0.0 {
            out.push(Violation::NonPositiveCoupling { what, index, value });
        }
    }
}

fn check_terms(what: &'static str, src: &Option<TermSource>, len: usize, out: &mut Vec<Violation>) {
    if let Some(TermSource::Fixed(v)) = src {
        if v.len() != len {
            out.push(Violation::DimensionMismatch {
                what,
                expected: len,
                found: v.len(),
            });
        }
        for (index, x) in v.iter().enumerate() {
            if !x.is_finite() {
                out.push(Violation::NonFinite { what, index });
            }
        }
    }
}

/// Check every invariant of the three configuration parts and collect all
/// violations rather than stopping at the first.
pub fn validate(
    spec: &HamiltonianSpec,
    noise: &NoiseModel,
    plan: &SamplingPlan,
) -> Result<ValidatedConfig> {
    let mut v = Vec::new();
    let af = spec.antiferromagnetic;
    match &spec.variant {
        Variant::Xx(c) => check_set("couplings", c, af, &mut v),
        Variant::Xy { jx, jy } => {
            check_set("couplings", jx, af, &mut v);
            check_set("couplings_y", jy, af, &mut v);
            if jx.n_sites != jy.n_sites {
                v.push(Violation::DimensionMismatch {
                    what: "couplings_y",
                    expected: jx.n_sites.saturating_sub(1),
                    found: jy.couplings.len(),
                });
            }
        }
    }
    let n = spec.n_sites();
    if let Some(s) = &spec.spurious {
        check_terms("spurious_z", &s.z_fields, n, &mut v);
        check_terms("spurious_zz", &s.zz_couplings, n.saturating_sub(1), &mut v);
        if !(s.scale.is_finite() && s.scale >= 0.0) {
            v.push(Violation::InvalidScale(s.scale));
        }
    }

    for (what, value) in [
        ("gamma", noise.gamma),
        ("big_gamma", noise.big_gamma),
        ("nbar", noise.nbar),
    ] {
        if !value.is_finite() || value < 0.0 {
            v.push(Violation::NegativeRate { what, value });
        }
    }
    if noise.runs == 0 {
        v.push(Violation::ZeroRuns);
    }

    if !(plan.t_max.is_finite() && plan.t_max > 0.0) {
        v.push(Violation::InvalidWindow(plan.t_max));
    }
    if plan.n_points < 2 {
        v.push(Violation::TooFewPoints(plan.n_points));
    }
    if plan.n_meas == Shots::Count(0) {
        v.push(Violation::ZeroShots);
    }
    if noise.is_active() {
        if !(noise.dt.is_finite() && noise.dt > 0.0) {
            v.push(Violation::InvalidInterval(noise.dt));
        } else if plan.n_points > 0 && noise.dt > plan.step() * (1.0 + 1e-12) {
            v.push(Violation::IntervalExceedsStep {
                dt: noise.dt,
                step: plan.step(),
            });
        }
    }

    if v.is_empty() {
        Ok(ValidatedConfig {
            spec: spec.clone(),
            noise: *noise,
            plan: *plan,
        })
    } else {
        Err(Error::Validation(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CASE1: [f64; 5] = [1.02, 1.26, 0.94, 1.36, 0.72];

    fn violations(r: Result<ValidatedConfig>) -> Vec<Violation> {
        match r {
            Err(Error::Validation(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn case_one_is_valid() {
        let spec = HamiltonianSpec::xx(CASE1.to_vec());
        let cfg = validate(&spec, &NoiseModel::none(), &SamplingPlan::default()).unwrap();
        assert_eq!(cfg.spec().n_sites(), 6);
    }

    #[test]
    fn length_must_be_n_minus_one() {
        let spec = HamiltonianSpec {
            variant: Variant::Xx(CouplingSet::with_sites(2, vec![1.0, 1.0])),
            spurious: None,
            antiferromagnetic: true,
        };
        let v = violations(validate(
            &spec,
            &NoiseModel::none(),
            &SamplingPlan::default(),
        ));
        assert!(matches!(
            v[0],
            Violation::DimensionMismatch {
                expected: 1,
                found: 2,
                ..
            }
        ));
    }

    #[test]
    fn interval_longer_than_step_is_rejected() {
        let spec = HamiltonianSpec::xx(CASE1.to_vec());
        let noise = NoiseModel {
            dt: PI / 10.0,
            ..NoiseModel::reference()
        };
        let v = violations(validate(&spec, &noise, &SamplingPlan::default()));
        assert!(matches!(v[0], Violation::IntervalExceedsStep { .. }));
    }

    #[test]
    fn negative_coupling_needs_flag_off() {
        let mut spec = HamiltonianSpec::xx(vec![1.0, -0.5]);
        let v = violations(validate(
            &spec,
            &NoiseModel::none(),
            &SamplingPlan::default(),
        ));
        assert!(matches!(
            v[0],
            Violation::NonPositiveCoupling { index: 1, .. }
        ));
        spec.antiferromagnetic = false;
        assert!(validate(&spec, &NoiseModel::none(), &SamplingPlan::default()).is_ok());
    }

    #[test]
    fn all_violations_are_collected() {
        let spec = HamiltonianSpec::xy(vec![1.0, 1.0], vec![1.0]);
        let plan = SamplingPlan {
            n_points: 1,
            n_meas: Shots::Count(0),
            ..SamplingPlan::default()
        };
        let v = violations(validate(&spec, &NoiseModel::none(), &plan));
        assert!(v.len() >= 3, "{v:?}");
    }

    #[test]
    fn spurious_dimensions_checked() {
        let spec = HamiltonianSpec::xx(vec![1.0, 1.0])
            .with_spurious(SpuriousTerms::fixed(vec![0.1, 0.1], vec![0.0]));
        let v = violations(validate(
            &spec,
            &NoiseModel::none(),
            &SamplingPlan::default(),
        ));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn thermal_weight_limits() {
        assert_eq!(thermal_p(0.0), 1.0);
        assert!((thermal_p(1e9) - 0.5).abs() < 1e-9);
        for nbar in [0.0, 0.01, 0.3, 2.0, 1e3] {
            let p = thermal_p(nbar);
            assert!(p > 0.5 && p <= 1.0);
        }
    }

    #[test]
    fn realization_is_seeded_and_bounded() {
        let spec = HamiltonianSpec::xx(CASE1.to_vec()).with_spurious(SpuriousTerms::random(0.1));
        let a = spec.realized(11);
        assert_eq!(a, spec.realized(11));
        assert_ne!(a, spec.realized(12));
        let s = a.spurious.as_ref().unwrap();
        let z = s.z_values(6).unwrap();
        let zz = s.zz_values(6).unwrap();
        assert_eq!((z.len(), zz.len()), (6, 5));
        assert!(z.iter().chain(&zz).all(|v| v.abs() <= 0.1));
        assert!(!a.is_spurious_free());
    }

    #[test]
    fn grid_excludes_origin() {
        let t = SamplingPlan::default().times();
        assert_eq!(t.len(), 25);
        assert!((t[0] - PI / 25.0).abs() < 1e-15);
        assert!((t[24] - PI).abs() < 1e-15);
    }

    #[test]
    fn shots_serialize_as_keyword_or_count() {
        assert_eq!(serde_json::to_string(&Shots::Exact).unwrap(), "\"exact\"");
        assert_eq!(serde_json::to_string(&Shots::Count(500)).unwrap(), "500");
        assert_eq!(
            serde_json::from_str::<Shots>("\"exact\"").unwrap(),
            Shots::Exact
        );
        assert_eq!(
            serde_json::from_str::<Shots>("12").unwrap(),
            Shots::Count(12)
        );
        assert!(serde_json::from_str::<Shots>("\"lots\"").is_err());
    }
}
