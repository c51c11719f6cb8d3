//! JSON run configurations.
//!
//! A config names its design and carries a protocol block and a list of
//! scenarios. Parsing is two-pass: a loose header read picks the design, then
//! the whole document is read into the design's typed form with unknown
//! fields rejected.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "design": "two_arm",
//!   "protocol": { "stages": [{ "n0": 50, "n1": 50 }], "decision_threshold": 0.9 },
//!   "scenarios": [{ "id": "fig1", "rates": [0.4, 0.61] }],
//!   "engine": "both",
//!   "replicates": { "q": 100000, "mc": 10000 },
//!   "seed": 7
//! }
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::accuracy::{BudgetSplit, RandomEffectsPrior};
use crate::asymptotics::{Profile, Scenario};
use crate::designs::exact;
use crate::designs::{
    q_bar_estimates, q_external_data_run, q_multistage_stop_prob, q_single_arm_positive_prob, q_two_arm_power,
    BarProtocol, ExternalDataProtocol, ExternalDataScenario, SingleArmProtocol, StageSizes, TwoArmProtocol,
};
use crate::error::Result;
use crate::mc::{
    mc_bar_run, mc_external_data_run, mc_multistage_stop_prob, mc_single_arm_positive_prob, mc_two_arm_power,
    McmcConfig,
};
use crate::mvn::GenzOptions;
use crate::oc::OcEstimate;
use crate::rng::Streams;

pub const SCHEMA_VERSION: u32 = 1;

/// A config that failed to parse or validate.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn cfg_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignId {
    SingleArm,
    TwoArm,
    Multistage,
    ExternalData,
    Bar,
}

impl DesignId {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignId::SingleArm => "single_arm",
            DesignId::TwoArm => "two_arm",
            DesignId::Multistage => "multistage",
            DesignId::ExternalData => "external_data",
            DesignId::Bar => "bar",
        }
    }
}

/// Engines requested by a config or on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Q,
    Mc,
    #[default]
    Both,
}

impl Engine {
    pub fn kinds(&self) -> Vec<EngineKind> {
        match self {
            Engine::Q => vec![EngineKind::Q],
            Engine::Mc => vec![EngineKind::Mc],
            Engine::Both => vec![EngineKind::Q, EngineKind::Mc],
        }
    }
}

/// One engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Q,
    Mc,
}

impl EngineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EngineKind::Q => "q",
            EngineKind::Mc => "mc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Replicates {
    pub q: usize,
    pub mc: usize,
}

impl Default for Replicates {
    fn default() -> Self {
        Self { q: 10_000, mc: 500 }
    }
}

impl Replicates {
    pub fn get(&self, engine: EngineKind) -> usize {
        match engine {
            EngineKind::Q => self.q,
            EngineKind::Mc => self.mc,
        }
    }
}

/// Numerical settings shared by every case of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Settings {
    pub mcmc: McmcConfig,
    pub genz: GenzOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("qoc-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// OC compared between engines; defaults to the design's first OC.
    #[serde(default)]
    pub oc: Option<String>,
    /// Defaults to the config's replicate counts.
    #[serde(default)]
    pub split: Option<BudgetSplit>,
    #[serde(default)]
    pub prior: RandomEffectsPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Total sample size.
    N,
    /// Wall-clock budget in seconds per estimate.
    Budget,
    /// Single-arm response rate.
    Rate,
    /// Two-arm control rate.
    Rate0,
    /// Two-arm treatment rate.
    Rate1,
    /// Local-alternative effect `a`.
    A,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    /// Independent repeats per budget point (budget sweeps only).
    #[serde(default = "default_repeats")]
    pub repeats: usize,
}

fn default_repeats() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateScenario {
    pub id: String,
    pub rate: f64,
}

/// `ω₁ = control + a/√n` with `n` the total sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalAlternative {
    pub control: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoArmScenario {
    pub id: String,
    /// Total sample size for this scenario, split evenly between the arms
    /// (single-stage designs only).
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub rates: Option<[f64; 2]>,
    #[serde(default)]
    pub local_alternative: Option<LocalAlternative>,
}

impl TwoArmScenario {
    pub fn rates(&self, n: usize) -> std::result::Result<[f64; 2], ConfigError> {
        match (self.rates, self.local_alternative) {
            (Some(r), None) => Ok(r),
            (None, Some(la)) => Ok([la.control, la.control + la.a / (n as f64).sqrt()]),
            _ => Err(cfg_err(format!(
                "scenario `{}`: give exactly one of `rates` and `local_alternative`",
                self.id
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDataEntry {
    pub id: String,
    pub trial: Scenario,
    pub external_profile_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarEntry {
    pub id: String,
    pub profiles: Vec<Profile>,
    pub outcome: crate::asymptotics::OutcomeLaw,
}

/// Design-specific part of a config.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum DesignSpec {
    SingleArm {
        protocol: SingleArmProtocol,
        scenarios: Vec<RateScenario>,
    },
    TwoArm {
        protocol: TwoArmProtocol,
        scenarios: Vec<TwoArmScenario>,
    },
    Multistage {
        protocol: TwoArmProtocol,
        scenarios: Vec<TwoArmScenario>,
    },
    ExternalData {
        protocol: ExternalDataProtocol,
        scenarios: Vec<ExternalDataEntry>,
    },
    Bar {
        protocol: BarProtocol,
        scenarios: Vec<BarEntry>,
    },
}

impl DesignSpec {
    pub fn id(&self) -> DesignId {
        match self {
            DesignSpec::SingleArm { .. } => DesignId::SingleArm,
            DesignSpec::TwoArm { .. } => DesignId::TwoArm,
            DesignSpec::Multistage { .. } => DesignId::Multistage,
            DesignSpec::ExternalData { .. } => DesignId::ExternalData,
            DesignSpec::Bar { .. } => DesignId::Bar,
        }
    }

    fn scenario_ids(&self) -> Vec<&str> {
        match self {
            DesignSpec::SingleArm { scenarios, .. } => scenarios.iter().map(|s| s.id.as_str()).collect(),
            DesignSpec::TwoArm { scenarios, .. } | DesignSpec::Multistage { scenarios, .. } => {
                scenarios.iter().map(|s| s.id.as_str()).collect()
            }
            DesignSpec::ExternalData { scenarios, .. } => scenarios.iter().map(|s| s.id.as_str()).collect(),
            DesignSpec::Bar { scenarios, .. } => scenarios.iter().map(|s| s.id.as_str()).collect(),
        }
    }
}

/// A parsed config.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub schema: u32,
    pub description: Option<String>,
    pub spec: DesignSpec,
    pub engine: Engine,
    pub replicates: Replicates,
    pub seed: u64,
    pub settings: Settings,
    pub output: OutputSpec,
    pub audit: Option<AuditSpec>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Deserialize)]
struct Header {
    schema: u32,
    design: DesignId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc<P, S> {
    #[allow(dead_code)]
    schema: u32,
    #[allow(dead_code)]
    design: DesignId,
    #[serde(default)]
    description: Option<String>,
    protocol: P,
    scenarios: Vec<S>,
    #[serde(default)]
    engine: Engine,
    #[serde(default)]
    replicates: Replicates,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    mcmc: McmcConfig,
    #[serde(default)]
    genz: GenzOptions,
    #[serde(default)]
    output: OutputSpec,
    #[serde(default)]
    audit: Option<AuditSpec>,
    #[serde(default)]
    sweep: Option<SweepSpec>,
}

fn typed<T: DeserializeOwned>(text: &str) -> std::result::Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." || path.is_empty() {
            cfg_err(inner.to_string())
        } else {
            cfg_err(format!("field `{path}`: {inner}"))
        }
    })
}

fn finish<P, S>(doc: Doc<P, S>, spec: impl FnOnce(P, Vec<S>) -> DesignSpec) -> RunConfig {
    RunConfig {
        schema: SCHEMA_VERSION,
        description: doc.description,
        spec: spec(doc.protocol, doc.scenarios),
        engine: doc.engine,
        replicates: doc.replicates,
        seed: doc.seed,
        settings: Settings {
            mcmc: doc.mcmc,
            genz: doc.genz,
        },
        output: doc.output,
        audit: doc.audit,
        sweep: doc.sweep,
    }
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn parse(text: &str) -> std::result::Result<Self, ConfigError> {
        let header: Header = typed(text)?;
        if header.schema != SCHEMA_VERSION {
            return Err(cfg_err(format!(
                "field `schema`: unsupported schema version {}, expected {SCHEMA_VERSION}",
                header.schema
            )));
        }
        let cfg = match header.design {
            DesignId::SingleArm => finish(typed(text)?, |protocol, scenarios| DesignSpec::SingleArm { protocol, scenarios }),
            DesignId::TwoArm => finish(typed(text)?, |protocol, scenarios| DesignSpec::TwoArm { protocol, scenarios }),
            DesignId::Multistage => {
                finish(typed(text)?, |protocol, scenarios| DesignSpec::Multistage { protocol, scenarios })
            }
            DesignId::ExternalData => {
                finish(typed(text)?, |protocol, scenarios| DesignSpec::ExternalData { protocol, scenarios })
            }
            DesignId::Bar => finish(typed(text)?, |protocol, scenarios| DesignSpec::Bar { protocol, scenarios }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
    }

    pub fn design(&self) -> DesignId {
        self.spec.id()
    }

    /// Checks everything that does not need a simulation.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        let ids = self.spec.scenario_ids();
        if ids.is_empty() {
            return Err(cfg_err("field `scenarios`: the scenario grid is empty"));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if id.is_empty() {
                return Err(cfg_err("field `scenarios`: scenario ids must be non-empty"));
            }
            if !seen.insert(*id) {
                return Err(cfg_err(format!("field `scenarios`: duplicate scenario id `{id}`")));
            }
        }
        self.settings
            .mcmc
            .validate()
            .map_err(|e| cfg_err(format!("field `mcmc`: {e}")))?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(cfg_err("field `sweep.values`: no sweep points"));
            }
            if sweep.repeats == 0 {
                return Err(cfg_err("field `sweep.repeats`: must be positive"));
            }
        }
        self.cases()?;
        Ok(())
    }

    /// One case per scenario, each validated against the protocol.
    pub fn cases(&self) -> std::result::Result<Vec<Case>, ConfigError> {
        let wrap = |id: &str, r: Result<()>| r.map_err(|e| cfg_err(format!("scenario `{id}`: {e}")));
        let mut out = Vec::new();
        match &self.spec {
            DesignSpec::SingleArm { protocol, scenarios } => {
                wrap("protocol", protocol.validate())?;
                for s in scenarios {
                    if !(0.0..=1.0).contains(&s.rate) {
                        return Err(cfg_err(format!("scenario `{}`: rate must lie in [0, 1]", s.id)));
                    }
                    out.push(Case {
                        id: s.id.clone(),
                        kind: CaseKind::SingleArm {
                            protocol: protocol.clone(),
                            rate: s.rate,
                        },
                    });
                }
            }
            DesignSpec::TwoArm { protocol, scenarios } | DesignSpec::Multistage { protocol, scenarios } => {
                wrap("protocol", protocol.validate())?;
                let multistage = matches!(self.spec, DesignSpec::Multistage { .. });
                if !multistage && protocol.stages.len() != 1 {
                    return Err(cfg_err(
                        "field `protocol.stages`: two_arm is single-stage; use design `multistage`",
                    ));
                }
                for s in scenarios {
                    let mut protocol = protocol.clone();
                    if let Some(n) = s.n {
                        if multistage || n < 2 {
                            return Err(cfg_err(format!(
                                "scenario `{}`: `n` needs a single-stage design and at least 2 patients",
                                s.id
                            )));
                        }
                        protocol.stages = vec![StageSizes { n0: n / 2, n1: n - n / 2 }];
                    }
                    let rates = s.rates(protocol.total())?;
                    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
                        return Err(cfg_err(format!("scenario `{}`: rates {rates:?} outside [0, 1]", s.id)));
                    }
                    out.push(Case {
                        id: s.id.clone(),
                        kind: if multistage {
                            CaseKind::Multistage { protocol, rates }
                        } else {
                            CaseKind::TwoArm { protocol, rates }
                        },
                    });
                }
            }
            DesignSpec::ExternalData { protocol, scenarios } => {
                wrap("protocol", protocol.validate())?;
                for s in scenarios {
                    let scenario = ExternalDataScenario {
                        trial: s.trial.clone(),
                        external_profile_probs: s.external_profile_probs.clone(),
                    };
                    wrap(&s.id, scenario.validate(protocol))?;
                    out.push(Case {
                        id: s.id.clone(),
                        kind: CaseKind::ExternalData {
                            protocol: protocol.clone(),
                            scenario,
                        },
                    });
                }
            }
            DesignSpec::Bar { protocol, scenarios } => {
                for s in scenarios {
                    let scenario = Scenario {
                        profiles: s.profiles.clone(),
                        outcome: s.outcome.clone(),
                    };
                    wrap(&s.id, scenario.validate())?;
                    wrap(&s.id, protocol.validate_against(&scenario))?;
                    out.push(Case {
                        id: s.id.clone(),
                        kind: CaseKind::Bar {
                            protocol: protocol.clone(),
                            scenario,
                        },
                    });
                }
            }
        }
        Ok(out)
    }

    /// A copy with one sweep coordinate set to `x`.
    pub fn with_axis(&self, axis: SweepAxis, x: f64) -> std::result::Result<RunConfig, ConfigError> {
        let mut cfg = self.clone();
        let unsupported = || {
            cfg_err(format!(
                "field `sweep.axis`: axis `{axis:?}` is not supported for design `{}`",
                self.design().as_str()
            ))
        };
        let count = |x: f64| -> std::result::Result<usize, ConfigError> {
            if x >= 1.0 && x.fract() == 0.0 && x < 1e9 {
                Ok(x as usize)
            } else {
                Err(cfg_err(format!("field `sweep.values`: {x} is not a sample size")))
            }
        };
        match (&mut cfg.spec, axis) {
            (DesignSpec::SingleArm { protocol, .. }, SweepAxis::N) => protocol.n = count(x)?,
            (DesignSpec::SingleArm { scenarios, .. }, SweepAxis::Rate) => {
                scenarios.iter_mut().for_each(|s| s.rate = x)
            }
            (DesignSpec::TwoArm { protocol, scenarios }, SweepAxis::N) => {
                let n = count(x)?;
                protocol.stages = vec![StageSizes { n0: n / 2, n1: n - n / 2 }];
                scenarios.iter_mut().for_each(|s| s.n = None);
            }
            (DesignSpec::TwoArm { scenarios, .. } | DesignSpec::Multistage { scenarios, .. }, axis)
                if matches!(axis, SweepAxis::Rate0 | SweepAxis::Rate1 | SweepAxis::A) =>
            {
                for s in scenarios.iter_mut() {
                    match (axis, s.rates.as_mut(), s.local_alternative.as_mut()) {
                        (SweepAxis::Rate0, Some(r), _) => r[0] = x,
                        (SweepAxis::Rate1, Some(r), _) => r[1] = x,
                        (SweepAxis::Rate0, _, Some(la)) => la.control = x,
                        (SweepAxis::A, _, Some(la)) => la.a = x,
                        _ => {
                            return Err(cfg_err(format!(
                                "scenario `{}`: axis `{axis:?}` does not apply to this scenario",
                                s.id
                            )))
                        }
                    }
                }
            }
            (DesignSpec::Bar { protocol, .. }, SweepAxis::N) => protocol.n = count(x)?,
            _ => return Err(unsupported()),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One scenario bound to its protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub kind: CaseKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaseKind {
    SingleArm {
        protocol: SingleArmProtocol,
        rate: f64,
    },
    TwoArm {
        protocol: TwoArmProtocol,
        rates: [f64; 2],
    },
    Multistage {
        protocol: TwoArmProtocol,
        rates: [f64; 2],
    },
    ExternalData {
        protocol: ExternalDataProtocol,
        scenario: ExternalDataScenario,
    },
    Bar {
        protocol: BarProtocol,
        scenario: Scenario,
    },
}

/// Streams for one case and engine: seed → case id → engine.
pub fn case_streams(seed: u64, case_id: &str, engine: EngineKind) -> Streams {
    Streams::new(seed).derive(case_id).derive(engine.as_str())
}

impl Case {
    pub fn design(&self) -> DesignId {
        match self.kind {
            CaseKind::SingleArm { .. } => DesignId::SingleArm,
            CaseKind::TwoArm { .. } => DesignId::TwoArm,
            CaseKind::Multistage { .. } => DesignId::Multistage,
            CaseKind::ExternalData { .. } => DesignId::ExternalData,
            CaseKind::Bar { .. } => DesignId::Bar,
        }
    }

    /// Largest possible total sample size.
    pub fn max_sample_size(&self) -> usize {
        match &self.kind {
            CaseKind::SingleArm { protocol, .. } => protocol.n,
            CaseKind::TwoArm { protocol, .. } | CaseKind::Multistage { protocol, .. } => protocol.total(),
            CaseKind::ExternalData { protocol, .. } => protocol.n,
            CaseKind::Bar { protocol, .. } => protocol.n,
        }
    }

    /// Runs one engine with `replicates` replicates.
    pub fn run(
        &self,
        engine: EngineKind,
        replicates: usize,
        settings: &Settings,
        streams: &Streams,
    ) -> Result<Vec<OcEstimate>> {
        use EngineKind::{Mc, Q};
        match (&self.kind, engine) {
            (CaseKind::SingleArm { protocol, rate }, Q) => {
                q_single_arm_positive_prob(protocol, *rate, replicates, streams)
            }
            (CaseKind::SingleArm { protocol, rate }, Mc) => {
                mc_single_arm_positive_prob(protocol, *rate, replicates, streams)
            }
            (CaseKind::TwoArm { protocol, rates }, Q) => q_two_arm_power(protocol, *rates, replicates, streams),
            (CaseKind::TwoArm { protocol, rates }, Mc) => mc_two_arm_power(protocol, *rates, replicates, streams),
            (CaseKind::Multistage { protocol, rates }, Q) => {
                q_multistage_stop_prob(protocol, *rates, replicates, streams)
            }
            (CaseKind::Multistage { protocol, rates }, Mc) => {
                mc_multistage_stop_prob(protocol, *rates, replicates, streams)
            }
            (CaseKind::ExternalData { protocol, scenario }, Q) => {
                q_external_data_run(protocol, scenario, replicates, streams)
            }
            (CaseKind::ExternalData { protocol, scenario }, Mc) => {
                mc_external_data_run(protocol, scenario, replicates, &settings.mcmc, streams)
            }
            (CaseKind::Bar { protocol, scenario }, Q) => {
                q_bar_estimates(protocol, scenario, replicates, &settings.genz, streams)
            }
            (CaseKind::Bar { protocol, scenario }, Mc) => {
                Ok(mc_bar_run(protocol, scenario, replicates, &settings.mcmc, streams)?.flatten())
            }
        }
    }

    /// Exact OC values where the design admits enumeration.
    pub fn exact(&self) -> Option<Result<Vec<(String, f64)>>> {
        match &self.kind {
            CaseKind::SingleArm { protocol, rate } => Some(
                exact::single_arm_positive_prob(protocol, *rate).map(|p| vec![("positive_prob".to_string(), p)]),
            ),
            CaseKind::TwoArm { protocol, rates } => {
                Some(exact::two_arm(protocol, *rates).map(|e| vec![("power".to_string(), e.power)]))
            }
            CaseKind::Multistage { protocol, rates } => Some(exact::two_arm(protocol, *rates).map(|e| {
                vec![
                    ("stop_prob".to_string(), e.stop_prob),
                    ("power".to_string(), e.power),
                    ("ess".to_string(), e.ess),
                ]
            })),
            CaseKind::ExternalData { .. } | CaseKind::Bar { .. } => None,
        }
    }
}
