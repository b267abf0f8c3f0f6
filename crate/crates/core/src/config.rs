//! TOML experiment documents with `[chain]`, `[noise]` and `[sampling]`
//! sections.
//!
//! ```toml
//! [chain]
//! variant = "xx"
//! couplings = [1.02, 1.26, 0.94, 1.36, 0.72]
//! ```
//!
//! Missing fields take their defaults; unknown keys are errors. The
//! canonical form written by [`save_config`] spells out every field, and
//! loading it back then saving again reproduces it byte for byte.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{
    validate, Basis, CouplingSet, HamiltonianSpec, NoiseModel, NoisePolicy, SamplingPlan, Shots,
    SpuriousTerms, TermSource, ValidatedConfig, Variant, DEFAULT_NOISE_DT, DEFAULT_NOISE_RUNS,
    DEFAULT_SPURIOUS_SCALE,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    chain: ChainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sampling: Option<SamplingSection>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSection {
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_sites: Option<usize>,
    couplings: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    couplings_y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spurious_z: Option<TermDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spurious_zz: Option<TermDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spurious_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    antiferromagnetic: Option<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum TermDoc {
    Values(Vec<f64>),
    Keyword(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    big_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    runs: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    policy: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_meas: Option<ShotsDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    basis: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ShotsDoc {
    Count(u32),
    Keyword(String),
}

fn term_source(field: &str, doc: Option<TermDoc>) -> Result<Option<TermSource>> {
    match doc {
        None => Ok(None),
        Some(TermDoc::Values(v)) => Ok(Some(TermSource::Fixed(v))),
        Some(TermDoc::Keyword(k)) if k == "random" => Ok(Some(TermSource::Random)),
        Some(TermDoc::Keyword(k)) => Err(Error::Parse(format!(
            "chain.{field}: expected an array or \"random\", got \"{k}\""
        ))),
    }
}

/// Parse and validate an experiment document.
pub fn load_config(text: &str) -> Result<ValidatedConfig> {
    let doc: Document = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;

    let chain = doc.chain;
    let n_sites = chain.n_sites.unwrap_or(chain.couplings.len() + 1);
    let variant = match chain.variant.as_str() {
        "xx" => {
            if chain.couplings_y.is_some() {
                return Err(Error::Parse(
                    "chain.couplings_y is only allowed with variant = \"xy\"".into(),
                ));
            }
            Variant::Xx(CouplingSet::with_sites(n_sites, chain.couplings))
        }
        "xy" => {
            let jy = chain.couplings_y.ok_or_else(|| {
                Error::Parse("chain.couplings_y is required with variant = \"xy\"".into())
            })?;
            Variant::Xy {
                jx: CouplingSet::with_sites(n_sites, chain.couplings),
                jy: CouplingSet::with_sites(n_sites, jy),
            }
        }
        other => {
            return Err(Error::Parse(format!(
                "chain.variant: expected \"xx\" or \"xy\", got \"{other}\""
            )))
        }
    };
    let z_fields = term_source("spurious_z", chain.spurious_z)?;
    let zz_couplings = term_source("spurious_zz", chain.spurious_zz)?;
    let spurious = if z_fields.is_some() || zz_couplings.is_some() {
        Some(SpuriousTerms {
            z_fields,
            zz_couplings,
            scale: chain.spurious_scale.unwrap_or(DEFAULT_SPURIOUS_SCALE),
        })
    } else {
        if chain.spurious_scale.is_some() {
            return Err(Error::Parse(
                "chain.spurious_scale given without spurious_z or spurious_zz".into(),
            ));
        }
        None
    };
    let spec = HamiltonianSpec {
        variant,
        spurious,
        antiferromagnetic: chain.antiferromagnetic.unwrap_or(true),
    };

    let mut noise = NoiseModel::none();
    if let Some(n) = doc.noise {
        noise.gamma = n.gamma.unwrap_or(0.0);
        noise.big_gamma = n.big_gamma.unwrap_or(0.0);
        noise.nbar = n.nbar.unwrap_or(0.0);
        noise.dt = n.dt.unwrap_or(DEFAULT_NOISE_DT);
        noise.runs = n.runs.unwrap_or(DEFAULT_NOISE_RUNS);
        if let Some(p) = n.policy {
            noise.policy = NoisePolicy::parse(&p).ok_or_else(|| {
                Error::Parse(format!(
                    "noise.policy: expected random_single_spin, all_spins or random_one_of, got \"{p}\""
                ))
            })?;
        }
    }

    let mut plan = SamplingPlan::default();
    if let Some(s) = doc.sampling {
        if let Some(t) = s.t_max {
            plan.t_max = t;
        }
        if let Some(n) = s.n_points {
            plan.n_points = n;
        }
        plan.n_meas = match s.n_meas {
            None => Shots::Exact,
            Some(ShotsDoc::Count(n)) => Shots::Count(n),
            Some(ShotsDoc::Keyword(k)) if k == "exact" => Shots::Exact,
            Some(ShotsDoc::Keyword(k)) => {
                return Err(Error::Parse(format!(
                    "sampling.n_meas: expected \"exact\" or an integer, got \"{k}\""
                )))
            }
        };
        plan.basis = match s.basis.as_deref() {
            None | Some("x") => Basis::X,
            Some("y") => Basis::Y,
            Some(b) => {
                return Err(Error::Parse(format!(
                    "sampling.basis: expected \"x\" or \"y\", got \"{b}\""
                )))
            }
        };
        if let Some(seed) = s.seed {
            plan.seed = seed;
        }
    }

    validate(&spec, &noise, &plan)
}

fn term_doc(src: &Option<TermSource>) -> Option<TermDoc> {
    src.as_ref().map(|s| match s {
        TermSource::Fixed(v) => TermDoc::Values(v.clone()),
        TermSource::Random => TermDoc::Keyword("random".into()),
    })
}

/// Canonical document: every field explicit, fixed key order.
pub fn save_config(cfg: &ValidatedConfig) -> Result<String> {
    let spec = cfg.spec();
    let (variant, n_sites, couplings, couplings_y) = match &spec.variant {
        Variant::Xx(c) => ("xx", c.n_sites, c.couplings.clone(), None),
        Variant::Xy { jx, jy } => (
            "xy",
            jx.n_sites,
            jx.couplings.clone(),
            Some(jy.couplings.clone()),
        ),
    };
    let sp = spec.spurious.as_ref();
    let chain = ChainSection {
        variant: variant.into(),
        n_sites: Some(n_sites),
        couplings,
        couplings_y,
        spurious_z: sp.and_then(|s| term_doc(&s.z_fields)),
        spurious_zz: sp.and_then(|s| term_doc(&s.zz_couplings)),
        spurious_scale: sp.map(|s| s.scale),
        antiferromagnetic: Some(spec.antiferromagnetic),
    };
    let n = cfg.noise();
    let noise = NoiseSection {
        gamma: Some(n.gamma),
        big_gamma: Some(n.big_gamma),
        nbar: Some(n.nbar),
        dt: Some(n.dt),
        runs: Some(n.runs),
        policy: Some(n.policy.as_str().into()),
    };
    let p = cfg.plan();
    if p.seed > i64::MAX as u64 {
        return Err(Error::Parse(format!(
            "sampling.seed {} does not fit a TOML integer",
            p.seed
        )));
    }
    let sampling = SamplingSection {
        t_max: Some(p.t_max),
        n_points: Some(p.n_points),
        n_meas: Some(match p.n_meas {
            Shots::Exact => ShotsDoc::Keyword("exact".into()),
            Shots::Count(c) => ShotsDoc::Count(c),
        }),
        basis: Some(p.basis.as_str().into()),
        seed: Some(p.seed),
    };
    let doc = Document {
        chain,
        noise: Some(noise),
        sampling: Some(sampling),
    };
    toml::to_string(&doc).map_err(|e| Error::Parse(e.to_string()))
}

/// Hex SHA-256 of the canonical document.
pub fn config_hash(cfg: &ValidatedConfig) -> Result<String> {
    let text = save_config(cfg)?;
    Ok(Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn minimal_document_fills_defaults() {
        let cfg = load_config("[chain]\nvariant = \"xx\"\ncouplings = [1.0, 1.0]\n").unwrap();
        assert_eq!(cfg.plan().t_max, PI);
        assert_eq!(cfg.plan().n_points, 25);
        assert_eq!(cfg.plan().n_meas, Shots::Exact);
        assert!(!cfg.noise().is_active());
        assert_eq!(cfg.spec().n_sites(), 3);
    }

    #[test]
    fn case_two_couplings_parse() {
        let cfg =
            load_config("[chain]\nvariant = \"xx\"\ncouplings = [1.49, 0.80, 1.02, 0.69, 1.28]\n")
                .unwrap();
        assert_eq!(
            cfg.spec().variant,
            Variant::Xx(CouplingSet::new(vec![1.49, 0.80, 1.02, 0.69, 1.28]))
        );
    }

    #[test]
    fn negative_coupling_is_a_validation_error() {
        let err = load_config("[chain]\nvariant = \"xx\"\ncouplings = [1.0, -1.0]\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let err = load_config("[chain]\nvariant = \"xx\"\ncouplings = [1.0]\ncolour = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("colour"), "{err}");
        assert!(err.contains("line"), "{err}");
        assert!(load_config("[chain]\nvariant = \"xx\"\ncouplings = [1.0]\n[extra]\n").is_err());
    }

    #[test]
    fn keywords_are_checked() {
        assert!(load_config("[chain]\nvariant = \"zz\"\ncouplings = [1.0]\n").is_err());
        assert!(load_config(
            "[chain]\nvariant = \"xx\"\ncouplings = [1.0]\n[sampling]\nn_meas = \"many\"\n"
        )
        .is_err());
        assert!(load_config(
            "[chain]\nvariant = \"xx\"\ncouplings = [1.0]\nspurious_z = \"sometimes\"\n"
        )
        .is_err());
        assert!(load_config("[chain]\nvariant = \"xy\"\ncouplings = [1.0]\n").is_err());
    }

    #[test]
    fn full_document_round_trips() {
        let text = r#"
[chain]
variant = "xy"
couplings = [1.0, 0.7, 1.2]
couplings_y = [0.9, 1.1, 0.6]
spurious_z = "random"
spurious_zz = [0.01, -0.02, 0.03]
spurious_scale = 0.05

[noise]
gamma = 0.5
big_gamma = 0.2
nbar = 0.01
runs = 10
policy = "all_spins"

[sampling]
n_points = 30
n_meas = 500
basis = "y"
seed = 42
"#;
        let cfg = load_config(text).unwrap();
        let canon = save_config(&cfg).unwrap();
        let again = load_config(&canon).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(save_config(&again).unwrap(), canon);
        assert_eq!(config_hash(&cfg).unwrap().len(), 64);
    }
}
