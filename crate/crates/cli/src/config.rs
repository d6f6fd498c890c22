//! JSON experiment configuration. Every field has a default, so `{}` is the
//! identity-channel setting with `r = 2`, randomization, `n = 10⁴`, `k = n/100`.

use mmse_bounds::bounds::BoundPath;
use mmse_bounds::estimator::{Minimizers, OutputActivation, TrainingProtocol};
use mmse_bounds::mechanism::{MechanismConfig, PostProcessing};
use mmse_bounds::scenario::{ConditionalLaw, Scenario, SupportGeometry};
use mmse_bounds::barron::MomentSource;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSpec,
    /// Support geometry for the truncation moment bounds. Defaults to
    /// separated with `γ = 1` for the identity channel, quadrature otherwise.
    pub geometry: Option<GeometrySpec>,
    pub mechanism: MechanismSpec,
    pub estimator: EstimatorSpec,
    pub bound: BoundSpec,
    pub seed: u64,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::Identity,
            geometry: None,
            mechanism: MechanismSpec::default(),
            estimator: EstimatorSpec::default(),
            bound: BoundSpec::default(),
            seed: 0,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// `X = Y`, `p = 1/2`.
    Identity,
    Custom { prior_p: f64, plus: LawSpec, minus: LawSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    PointMass { location: f64 },
    Uniform { lo: f64, hi: f64 },
    Triangular { lo: f64, hi: f64, mode: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometrySpec {
    Separated { gamma: f64 },
    Overlapping { gamma0: f64, gamma: f64 },
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaGrid {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl SigmaGrid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            SigmaGrid::List(ref v) => v.clone(),
            SigmaGrid::Range { start, stop, step } => {
                let count = ((stop - start) / step + 1e-9).floor();
                if !(count >= 0.0 && count < 1e7) {
                    return Vec::new();
                }
                (0..=count as usize).map(|i| start + step * i as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismSpec {
    pub sigma: SigmaGrid,
    pub r: f64,
    pub mode: PostProcessing,
}

impl Default for MechanismSpec {
    fn default() -> Self {
        Self { sigma: SigmaGrid::Range { start: 4.25, stop: 20.0, step: 0.25 }, r: 2.0, mode: PostProcessing::Randomize }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KRuleName {
    #[serde(rename = "n/100")]
    PerHundred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KRule {
    Fixed(usize),
    Rule(KRuleName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSpec {
    pub n: usize,
    pub k: KRule,
    pub protocol: TrainingProtocol,
    pub minimizers: Minimizers,
    /// Break repeated `x` values with `1e-12`-scale noise instead of failing.
    pub perturb_ties: bool,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            n: 10_000,
            k: KRule::Rule(KRuleName::PerHundred),
            protocol: TrainingProtocol::default(),
            minimizers: Minimizers::Combined,
            perturb_ties: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundSpec {
    pub path: BoundPath,
    pub delta: f64,
    /// Certify below the validity threshold with the unconditional Barron form.
    pub allow_unconditional: bool,
}

impl Default for BoundSpec {
    fn default() -> Self {
        Self { path: BoundPath::TanhTheta, delta: 0.05, allow_unconditional: false }
    }
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(if path.is_empty() { "." } else { &path }, e.into_inner())
        })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn k(&self) -> usize {
        match self.estimator.k {
            KRule::Fixed(k) => k,
            KRule::Rule(KRuleName::PerHundred) => self.estimator.n / 100,
        }
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.mechanism.sigma.values()
    }

    /// Checks ranges and builds the scenario once so later failures are numerical.
    pub fn validate(&self) -> Result<()> {
        let sigmas = self.sigmas();
        if sigmas.is_empty() {
            return Err(field("mechanism.sigma", "grid is empty"));
        }
        if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(field("mechanism.sigma", format!("noise levels must be positive, got {s}")));
        }
        if !(self.mechanism.r > 0.0 && self.mechanism.r.is_finite()) {
            return Err(field("mechanism.r", "must be positive"));
        }
        if self.estimator.n == 0 {
            return Err(field("estimator.n", "must be positive"));
        }
        if self.k() > self.estimator.n {
            return Err(field("estimator.k", format!("k = {} exceeds n = {}", self.k(), self.estimator.n)));
        }
        self.estimator.protocol.validate().map_err(|e| field("estimator.protocol", e))?;
        if !(self.bound.delta > 0.0 && self.bound.delta < 1.0) {
            return Err(field("bound.delta", "must lie in (0, 1)"));
        }
        if self.threads == 0 {
            return Err(field("threads", "must be at least 1"));
        }
        let sc = self.scenario()?;
        self.moment_source(&sc)?;
        Ok(())
    }

    /// Extra checks for the certificate pipeline.
    pub fn validate_certify(&self) -> Result<()> {
        self.validate()?;
        if self.k() == 0 {
            return Err(field("estimator.k", "certificates need k >= 1"));
        }
        if self.mechanism.mode != self.bound.path.mode() {
            return Err(field("mechanism.mode", format!("{:?} does not match bound path {:?}", self.mechanism.mode, self.bound.path)));
        }
        let want = match self.bound.path {
            BoundPath::IdentityEta => OutputActivation::Identity,
            BoundPath::TanhTheta => OutputActivation::Tanh,
        };
        if self.estimator.protocol.output != want {
            return Err(field("estimator.protocol.output", format!("bound path {:?} needs {want:?}", self.bound.path)));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        match &self.scenario {
            ScenarioSpec::Identity => Ok(Scenario::identity_channel()),
            ScenarioSpec::Custom { prior_p, plus, minus } => {
                let plus = law(plus).map_err(|e| field("scenario.plus", e))?;
                let minus = law(minus).map_err(|e| field("scenario.minus", e))?;
                Scenario::new(*prior_p, plus, minus).map_err(|e| field("scenario", e))
            }
        }
    }

    pub fn moment_source(&self, sc: &Scenario) -> Result<MomentSource> {
        let spec = match (self.geometry, &self.scenario) {
            (Some(g), _) => g,
            (None, ScenarioSpec::Identity) => GeometrySpec::Separated { gamma: 1.0 },
            (None, ScenarioSpec::Custom { .. }) => GeometrySpec::Numeric,
        };
        let geometry = match spec {
            GeometrySpec::Separated { gamma } => SupportGeometry::separated(sc, gamma),
            GeometrySpec::Overlapping { gamma0, gamma } => SupportGeometry::overlapping(sc, gamma0, gamma),
            GeometrySpec::Numeric => return Ok(MomentSource::Numeric),
        };
        geometry.map(MomentSource::Geometry).map_err(|e| field("geometry", e))
    }

    pub fn mechanism_at(&self, sigma: f64, mode: PostProcessing) -> Result<MechanismConfig> {
        MechanismConfig::new(sigma, self.mechanism.r, mode).map_err(|e| field("mechanism", e))
    }
}

fn law(spec: &LawSpec) -> mmse_bounds::Result<ConditionalLaw> {
    match *spec {
        LawSpec::PointMass { location } => ConditionalLaw::point_mass(location),
        LawSpec::Uniform { lo, hi } => ConditionalLaw::uniform(lo, hi),
        LawSpec::Triangular { lo, hi, mode } => ConditionalLaw::triangular(lo, hi, mode),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_setting() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.k(), 100);
        let s = cfg.sigmas();
        assert_eq!((s.len(), s[0], s[s.len() - 1]), (64, 4.25, 20.0));
        cfg.validate_certify().unwrap();
    }

    #[test]
    fn errors_name_the_field() {
        let e = ExperimentConfig::from_json(r#"{"mechanism": {"r": "two"}}"#).unwrap_err();
        assert!(e.to_string().contains("mechanism.r"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"estimator": {"k": "n/10"}}"#).unwrap_err();
        assert!(e.to_string().contains("estimator.k"), "{e}");
        let e = ExperimentConfig::from_json(r#"{"bogus": 1}"#).unwrap_err();
        assert!(matches!(e, CliError::Config(_)));
        let cfg = ExperimentConfig::from_json(r#"{"estimator": {"n": 50, "k": 60}}"#).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("estimator.k"));
        let cfg = ExperimentConfig::from_json(r#"{"mechanism": {"mode": "truncate"}}"#).unwrap();
        assert!(cfg.validate_certify().unwrap_err().to_string().contains("mechanism.mode"));
    }

    #[test]
    fn sigma_list_and_custom_scenario() {
        let text = r#"{
            "scenario": {"kind": "custom", "prior_p": 0.3,
                         "plus": {"kind": "uniform", "lo": 0.2, "hi": 1.0},
                         "minus": {"kind": "point_mass", "location": -0.5}},
            "mechanism": {"sigma": [5, 7.5]},
            "estimator": {"k": 7, "protocol": {"restarts": 2}}
        }"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.sigmas(), vec![5.0, 7.5]);
        assert_eq!(cfg.k(), 7);
        assert_eq!(cfg.estimator.protocol.restarts, 2);
        assert_eq!(cfg.estimator.protocol.gd_iterations, 100);
        let sc = cfg.scenario().unwrap();
        assert!(matches!(cfg.moment_source(&sc).unwrap(), MomentSource::Numeric));
    }
}
