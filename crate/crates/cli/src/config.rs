//! TOML configuration files and their conversion to core types.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Deserialize;
use skewless_core::dynamics::SystemState;
use skewless_core::noise::{FreeParams, JitterModel, NoiseSpec, OptimizeOptions, WanderModel};
use skewless_core::sim::{wheel_topology, Event, Scenario};
use skewless_core::{Edge, ProtocolParams, TopologySpec};
use toml::Spanned;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(#[from] toml::de::Error),
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("missing [{0}] section")]
    Missing(&'static str),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub topology: Option<Spanned<TopologyCfg>>,
    pub params: Option<Spanned<ParamsCfg>>,
    #[serde(default)]
    pub noise: Option<Spanned<NoiseCfg>>,
    #[serde(default)]
    pub initial: Option<Spanned<InitialCfg>>,
    #[serde(default)]
    pub scenario: Option<Spanned<ScenarioCfg>>,
    #[serde(default)]
    pub optimize: Option<Spanned<OptimizeCfg>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EdgeCfg {
    Triple(usize, usize, f64),
    Table { from: usize, to: usize, alpha: f64, gw: Option<f64> },
}

impl EdgeCfg {
    fn edge(&self) -> Edge {
        match *self {
            EdgeCfg::Triple(from, to, alpha) => Edge::new(from, to, alpha),
            EdgeCfg::Table { from, to, alpha, gw } => Edge::new(from, to, alpha).with_gain(gw.unwrap_or(1.0)),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WheelCfg {
    pub k: usize,
    pub c: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyCfg {
    pub nodes: usize,
    #[serde(default)]
    pub edges: Vec<EdgeCfg>,
    /// Generates the edges instead of listing them.
    pub wheel: Option<WheelCfg>,
    pub skews: Option<Vec<f64>>,
    pub wander_gains: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsCfg {
    pub kappa1: f64,
    pub kappa2: f64,
    pub p: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum JitterCfg {
    None,
    UniformGrid { max: f64, grid: f64 },
    Gaussian { sigma: f64 },
    Constant { bias: f64 },
}

impl JitterCfg {
    fn model(self) -> JitterModel {
        match self {
            JitterCfg::None => JitterModel::None,
            JitterCfg::UniformGrid { max, grid } => JitterModel::UniformGrid { max, grid },
            JitterCfg::Gaussian { sigma } => JitterModel::Gaussian { sigma },
            JitterCfg::Constant { bias } => JitterModel::Constant { bias },
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct EdgeJitterCfg {
    pub from: usize,
    pub to: usize,
    #[serde(flatten)]
    pub jitter: JitterCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseCfg {
    #[serde(default)]
    pub seed: u64,
    pub jitter: Option<JitterCfg>,
    #[serde(default)]
    pub edges: Vec<EdgeJitterCfg>,
    pub wander_sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCfg {
    pub x: Option<Vec<f64>>,
    pub s: Option<Vec<f64>>,
    pub y: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EventCfg {
    ReplaceTopology { step: usize, edges: Vec<EdgeCfg> },
    DisableNode { step: usize, node: usize },
    EnableNode { step: usize, node: usize },
    InjectOffset { step: usize, node: usize, seconds: f64 },
    InjectBias { step: usize, from: usize, to: usize, seconds: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCfg {
    pub steps: usize,
    pub warmup: Option<f64>,
    /// Warm-up as a step count, capped at `steps`; overrides `warmup`.
    pub warmup_steps: Option<usize>,
    pub spurious_filter: Option<f64>,
    #[serde(default)]
    pub disabled: Vec<usize>,
    #[serde(default)]
    pub events: Vec<EventCfg>,
    /// Also run every admissible wheel size `K` and report the metrics.
    #[serde(default)]
    pub sweep_k: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeCfg {
    pub rho_star: Option<f64>,
    pub max_iter: Option<usize>,
    pub free: Option<Vec<String>>,
}

/// Parsed file together with its text, for line lookups.
#[derive(Debug)]
pub struct Config {
    text: String,
    pub file: ConfigFile,
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let file: ConfigFile = toml::from_str(text)?;
        Ok(Config { text: text.to_owned(), file })
    }

    fn invalid<T: std::fmt::Display>(&self, span: Range<usize>, err: T) -> ConfigError {
        ConfigError::Invalid { line: line_of(&self.text, span), msg: err.to_string() }
    }

    fn topo_cfg(&self) -> Result<&Spanned<TopologyCfg>, ConfigError> {
        self.file.topology.as_ref().ok_or(ConfigError::Missing("topology"))
    }

    fn build_edges(&self, cfg: &TopologyCfg, listed: &[EdgeCfg]) -> Result<Vec<Edge>, String> {
        match &cfg.wheel {
            Some(w) if listed.is_empty() => wheel_topology(cfg.nodes, w.k, w.c)
                .map(|t| t.edges().to_vec())
                .map_err(|e| e.to_string()),
            Some(_) => Err("give either `edges` or `wheel`, not both".into()),
            None => Ok(listed.iter().map(EdgeCfg::edge).collect()),
        }
    }

    fn assemble(&self, cfg: &TopologyCfg, edges: Vec<Edge>) -> Result<TopologySpec, String> {
        let n = cfg.nodes;
        TopologySpec::with_all(
            n,
            edges,
            cfg.skews.clone().unwrap_or_else(|| vec![1.0; n]),
            cfg.wander_gains.clone().unwrap_or_else(|| vec![1.0; n]),
        )
        .map_err(|e| e.to_string())
    }

    pub fn topology(&self) -> Result<TopologySpec, ConfigError> {
        self.topology_with_k(None)
    }

    /// Topology with the wheel size replaced by `k` when given.
    pub fn topology_with_k(&self, k: Option<usize>) -> Result<TopologySpec, ConfigError> {
        let t = self.topo_cfg()?;
        let mut cfg = t.get_ref().clone();
        if let (Some(k), Some(w)) = (k, cfg.wheel.as_mut()) {
            w.k = k;
        }
        self.build_edges(&cfg, &cfg.edges)
            .and_then(|e| self.assemble(&cfg, e))
            .map_err(|e| self.invalid(t.span(), e))
    }

    pub fn wheel(&self) -> Option<WheelCfg> {
        self.file.topology.as_ref().and_then(|t| t.get_ref().wheel.clone())
    }

    pub fn params(&self) -> Result<ProtocolParams, ConfigError> {
        let p = self.file.params.as_ref().ok_or(ConfigError::Missing("params"))?;
        let c = p.get_ref();
        ProtocolParams::new(c.kappa1, c.kappa2, c.p, c.tau).map_err(|e| self.invalid(p.span(), e))
    }

    pub fn noise(&self) -> Result<NoiseSpec, ConfigError> {
        let Some(nc) = &self.file.noise else {
            return Ok(NoiseSpec::noiseless());
        };
        let c = nc.get_ref();
        let edge_jitter: BTreeMap<_, _> =
            c.edges.iter().map(|e| ((e.from, e.to), e.jitter.model())).collect();
        let noise = NoiseSpec {
            jitter: c.jitter.map(JitterCfg::model).unwrap_or_default(),
            edge_jitter,
            wander: c
                .wander_sigma
                .map(|sigma| WanderModel::Gaussian { sigma })
                .unwrap_or_default(),
            seed: c.seed,
        };
        noise.validate().map_err(|e| self.invalid(nc.span(), e))?;
        Ok(noise)
    }

    pub fn initial(&self, topo: &TopologySpec) -> Result<SystemState, ConfigError> {
        let mut z = SystemState::ideal(topo, 0.0);
        let Some(ic) = &self.file.initial else {
            return Ok(z);
        };
        let c = ic.get_ref();
        let n = topo.n();
        for (name, src, dst) in [("x", &c.x, &mut z.x), ("s", &c.s, &mut z.s), ("y", &c.y, &mut z.y)] {
            if let Some(v) = src {
                if v.len() != n {
                    return Err(self.invalid(
                        ic.span(),
                        format!("initial.{name} has {} entries, expected {n}", v.len()),
                    ));
                }
                dst.clone_from(v);
            }
        }
        Ok(z)
    }

    pub fn sweep_k(&self) -> bool {
        self.file.scenario.as_ref().is_some_and(|s| s.get_ref().sweep_k)
    }

    /// Full scenario; `steps` overrides the configured step count and `k` the
    /// wheel size.
    pub fn scenario(&self, steps: Option<usize>, k: Option<usize>) -> Result<Scenario, ConfigError> {
        let topo = self.topology_with_k(k)?;
        let params = self.params()?;
        let noise = self.noise()?;
        let initial = self.initial(&topo)?;
        let sc_cfg = self.file.scenario.as_ref().ok_or(ConfigError::Missing("scenario"))?;
        let c = sc_cfg.get_ref();
        let steps = steps.unwrap_or(c.steps);
        let mut sc = Scenario::new(topo.clone(), params, steps).with_noise(noise).with_initial(initial);
        if let Some(w) = c.warmup {
            sc.warmup = w;
        }
        if let Some(ws) = c.warmup_steps {
            sc.warmup = ws.min(steps) as f64 / (steps + 1) as f64;
        }
        sc.spurious_filter = c.spurious_filter;
        sc.initially_disabled = c.disabled.clone();
        let t_cfg = self.topo_cfg()?.get_ref();
        for ev in &c.events {
            let (step, event) = match ev {
                EventCfg::ReplaceTopology { step, edges } => {
                    let listed: Vec<Edge> = edges.iter().map(EdgeCfg::edge).collect();
                    let t = self
                        .assemble(t_cfg, listed)
                        .map_err(|e| self.invalid(sc_cfg.span(), e))?;
                    (*step, Event::ReplaceTopology(t))
                }
                EventCfg::DisableNode { step, node } => (*step, Event::DisableNode(*node)),
                EventCfg::EnableNode { step, node } => (*step, Event::EnableNode(*node)),
                EventCfg::InjectOffset { step, node, seconds } => {
                    (*step, Event::InjectOffset { node: *node, seconds: *seconds })
                }
                EventCfg::InjectBias { step, from, to, seconds } => {
                    (*step, Event::InjectBias { from: *from, to: *to, seconds: *seconds })
                }
            };
            sc.events.push((step, event));
        }
        sc.validate().map_err(|e| self.invalid(sc_cfg.span(), e))?;
        Ok(sc)
    }

    pub fn optimize_options(&self) -> Result<OptimizeOptions, ConfigError> {
        let mut opts = OptimizeOptions::default();
        let Some(oc) = &self.file.optimize else {
            return Ok(opts);
        };
        let c = oc.get_ref();
        if let Some(r) = c.rho_star {
            opts.rho_star = r;
        }
        if let Some(m) = c.max_iter {
            opts.max_iter = m;
        }
        if let Some(names) = &c.free {
            let mut free = FreeParams {
                kappa1: false,
                kappa2: false,
                p: false,
                tau: false,
                alpha: false,
            };
            for name in names {
                match name.as_str() {
                    "kappa1" => free.kappa1 = true,
                    "kappa2" => free.kappa2 = true,
                    "p" => free.p = true,
                    "tau" => free.tau = true,
                    "alpha" => free.alpha = true,
                    other => {
                        return Err(self.invalid(oc.span(), format!("unknown free parameter `{other}`")))
                    }
                }
            }
            opts.free = free;
        }
        Ok(opts)
    }
}
