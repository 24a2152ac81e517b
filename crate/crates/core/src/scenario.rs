//! Scenario files: TOML with `[arrival]`, `[connections]`, `[channel]`,
//! `[policy]`, `[queue]`, `[solver]` and `[sim]` sections.
//!
//! Rates are per minute and durations in minutes, except the frame length
//! which is given in milliseconds.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arrival::BatchArrivalProcess;
use crate::channel::{AmcEntry, AmcTable, ChannelModel};
use crate::connection::{CacPolicy, ConnectionLimits, ConnectionParams};
use crate::error::{ConfigError, Error, Result};
use crate::linalg::Dense;
use crate::solver::{DEFAULT_DIRECT_CAP, DEFAULT_MAX_ITER, DEFAULT_TOLERANCE};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    arrival: RawArrival,
    connections: RawConnections,
    channel: RawChannel,
    policy: RawPolicy,
    queue: RawQueue,
    #[serde(default)]
    solver: RawSolver,
    sim: Option<RawSim>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArrival {
    process: Option<String>,
    d0: Option<Vec<Vec<f64>>>,
    dk: Option<BTreeMap<String, Vec<Vec<f64>>>>,
}

fn default_cap() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConnections {
    arrival_rate: f64,
    mean_duration: f64,
    #[serde(default = "default_cap")]
    max_arrivals: usize,
    #[serde(default = "default_cap")]
    max_departures: usize,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawChannel {
    Short(String),
    Full(RawChannelTable),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChannelTable {
    subchannels: Option<usize>,
    avg_snr_db: Option<f64>,
    nakagami_m: Option<f64>,
    amc: Option<Vec<AmcEntry>>,
    deterministic: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    rule: String,
    c_tr: Option<usize>,
    alpha: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQueue {
    capacity: usize,
    max_batch: usize,
    frame_length_ms: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    method: Option<String>,
    tolerance: Option<f64>,
    max_iter: Option<usize>,
    direct_cap: Option<usize>,
    memory_budget_mb: Option<usize>,
    per_connection_throughput: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    warmup_frames: Option<u64>,
    measure_frames: u64,
    replications: usize,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodChoice {
    /// Direct when the chain is within the direct cap, aggregation otherwise.
    Auto,
    Direct,
    Power,
    Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: MethodChoice,
    pub tolerance: f64,
    pub max_iter: usize,
    pub direct_cap: usize,
    pub memory_budget_mb: usize,
    /// Throughput as one connection's rate times `1 − p_drop`.
    pub per_connection_throughput: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: MethodChoice::Auto,
            tolerance: DEFAULT_TOLERANCE,
            max_iter: DEFAULT_MAX_ITER,
            direct_cap: DEFAULT_DIRECT_CAP,
            memory_budget_mb: 2048,
            per_connection_throughput: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub warmup_frames: u64,
    pub measure_frames: u64,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub arrival: BatchArrivalProcess,
    /// Connections per minute.
    pub connection_rate: f64,
    /// Minutes.
    pub mean_duration: f64,
    pub limits: ConnectionLimits,
    pub channel: ChannelModel,
    pub policy: CacPolicy,
    /// The `[policy] c_tr` key, used when a policy is swapped in from the command line.
    pub c_tr: Option<usize>,
    pub queue_cap: usize,
    pub max_batch: usize,
    pub frame_length_ms: f64,
    pub solver: SolverConfig,
    pub sim: Option<SimSettings>,
}

#[derive(Serialize)]
struct ModelView<'a> {
    arrival: &'a BatchArrivalProcess,
    connection_rate: f64,
    mean_duration: f64,
    limits: &'a ConnectionLimits,
    channel: &'a ChannelModel,
    policy: &'a CacPolicy,
    queue_cap: usize,
    max_batch: usize,
    frame_length_ms: f64,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Ok(Self::from_toml_str(&src)?)
    }

    pub fn from_toml_str(src: &str) -> Result<Self, ConfigError> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_of(src, s.start));
            let message = e.message().to_string();
            let field = message
                .split('`')
                .nth(1)
                .filter(|_| message.contains('`'))
                .unwrap_or("toml")
                .to_string();
            ConfigError::new(field, message).at(line)
        })?;
        let anchor = |section: &str, key: &str| locate(src, section, key);
        build(raw, &anchor)
    }

    /// Minutes.
    pub fn frame_length(&self) -> f64 {
        self.frame_length_ms / 60_000.0
    }

    pub fn connection_params(&self) -> Result<ConnectionParams> {
        ConnectionParams::new(self.connection_rate, self.mean_duration, self.frame_length())
    }

    /// First 16 hex digits of a SHA-256 over the model parameters (solver and
    /// simulation settings excluded).
    pub fn fingerprint(&self) -> String {
        let view = ModelView {
            arrival: &self.arrival,
            connection_rate: self.connection_rate,
            mean_duration: self.mean_duration,
            limits: &self.limits,
            channel: &self.channel,
            policy: &self.policy,
            queue_cap: self.queue_cap,
            max_batch: self.max_batch,
            frame_length_ms: self.frame_length_ms,
        };
        let json = serde_json::to_vec(&view).expect("scenario serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sim_settings(&self) -> Result<&SimSettings, ConfigError> {
        self.sim
            .as_ref()
            .ok_or_else(|| ConfigError::new("sim", "missing [sim] section (needed to simulate)"))
    }

    pub fn with_policy(&self, policy: CacPolicy) -> Result<Self> {
        policy.validate(self.queue_cap)?;
        Ok(Self {
            policy,
            ..self.clone()
        })
    }

    pub fn with_connection_rate(&self, rate: f64) -> Result<Self> {
        let s = Self {
            connection_rate: rate,
            ..self.clone()
        };
        s.connection_params()?;
        Ok(s)
    }

    pub fn with_avg_snr_db(&self, snr_db: f64) -> Result<Self> {
        if self.channel.avg_snr_db().is_none() {
            return Err(Error::Parameter {
                name: "avg_snr_db",
                reason: "the channel is deterministic".into(),
            });
        }
        let channel = self.channel.with_avg_snr_db(snr_db);
        channel.validate()?;
        Ok(Self {
            channel,
            ..self.clone()
        })
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Line of `key = ...` inside `[section]`, or of the section header when the
/// key is absent. Top-level keys use an empty section name.
pub fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some(rest) = t.strip_prefix(key) {
                let rest = rest.trim_start();
                if rest.starts_with('=') || rest.starts_with('.') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

/// Splits `name(a, b, ...)` into the name and its raw arguments.
fn call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    match s.find('(') {
        None => Some((s, Vec::new())),
        Some(open) => {
            let inner = s[open + 1..].strip_suffix(')')?;
            let args = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(str::trim).collect()
            };
            Some((s[..open].trim(), args))
        }
    }
}

fn number<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("{what}: cannot parse `{s}`"))
}

/// `poisson(rate, batch)` or `mmpp2(rate1, rate2, switch12, switch21, batch)`.
pub fn parse_process(text: &str) -> Result<BatchArrivalProcess, String> {
    let (name, args) = call(text).ok_or_else(|| format!("malformed process `{text}`"))?;
    let built = match (name, args.as_slice()) {
        ("poisson", [rate, batch]) => {
            BatchArrivalProcess::poisson(number(rate, "rate")?, number(batch, "batch")?)
        }
        ("mmpp2", [r1, r2, s12, s21, batch]) => BatchArrivalProcess::mmpp2(
            number(r1, "rate1")?,
            number(r2, "rate2")?,
            number(s12, "switch12")?,
            number(s21, "switch21")?,
            number(batch, "batch")?,
        ),
        ("poisson" | "mmpp2", _) => return Err(format!("wrong number of arguments in `{text}`")),
        _ => return Err(format!("unknown process `{name}` (expected poisson or mmpp2)")),
    };
    built.map_err(|e| e.to_string())
}

/// Policy rules: `threshold(C)`, `queue_aware(B_th)`, `queue_aware_vector`,
/// `none(C_tr)`. `c_tr` and `alpha` come from neighbouring keys.
pub fn parse_policy(
    rule: &str,
    c_tr: Option<usize>,
    alpha: Option<Vec<f64>>,
    queue_cap: usize,
) -> Result<CacPolicy, String> {
    let (name, args) = call(rule).ok_or_else(|| format!("malformed rule `{rule}`"))?;
    let need_c_tr = || c_tr.ok_or_else(|| format!("`{name}` needs c_tr"));
    let policy = match (name, args.as_slice()) {
        ("threshold", [c]) => CacPolicy::Threshold {
            limit: number(c, "threshold")?,
        },
        ("queue_aware", [b]) => CacPolicy::queue_aware_step(number(b, "b_th")?, queue_cap, need_c_tr()?),
        ("queue_aware_vector", []) => CacPolicy::QueueAware {
            alpha: alpha.ok_or("`queue_aware_vector` needs alpha")?,
            c_tr: need_c_tr()?,
        },
        ("none", [c]) => CacPolicy::NoCac {
            c_tr: number(c, "c_tr")?,
        },
        ("none", []) => CacPolicy::NoCac { c_tr: need_c_tr()? },
        ("threshold" | "queue_aware" | "none" | "queue_aware_vector", _) => {
            return Err(format!("wrong number of arguments in `{rule}`"))
        }
        _ => return Err(format!("unknown rule `{name}` (expected threshold, queue_aware, queue_aware_vector or none)")),
    };
    policy.validate(queue_cap).map_err(|e| e.to_string())?;
    Ok(policy)
}

/// Command-line form `kind:value`, e.g. `threshold:10`, `none:70`,
/// `queue_aware:100`. Queue-aware reuses the scenario's `c_tr`.
pub fn parse_policy_flag(flag: &str, base: &Scenario) -> Result<CacPolicy, String> {
    let (kind, value) = flag
        .split_once(':')
        .ok_or_else(|| format!("policy `{flag}` is not of the form kind:value"))?;
    let c_tr = match &base.policy {
        CacPolicy::QueueAware { c_tr, .. } | CacPolicy::NoCac { c_tr } => Some(*c_tr),
        CacPolicy::Threshold { .. } => base.c_tr,
    };
    let rule = format!("{kind}({value})");
    parse_policy(&rule, c_tr, None, base.queue_cap)
}

fn matrix(rows: Vec<Vec<f64>>, what: &str) -> Result<Dense, String> {
    Dense::from_rows(&rows).ok_or_else(|| format!("{what} rows have different lengths"))
}

type Anchor<'a> = dyn Fn(&str, &str) -> Option<usize> + 'a;

fn fail(anchor: &Anchor<'_>, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    let field = if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    };
    ConfigError::new(field, message).at(anchor(section, key))
}

fn build(raw: RawScenario, anchor: &Anchor<'_>) -> Result<Scenario, ConfigError> {
    let arrival = match (raw.arrival.process, raw.arrival.d0, raw.arrival.dk) {
        (Some(text), None, None) => parse_process(&text).map_err(|m| fail(anchor, "arrival", "process", m))?,
        (None, Some(d0), Some(dk)) => {
            let d0 = matrix(d0, "d0").map_err(|m| fail(anchor, "arrival", "d0", m))?;
            let mut batches = Vec::new();
            for (k, rows) in dk {
                let size: usize = k
                    .parse()
                    .map_err(|_| fail(anchor, "arrival.dk", &k, format!("batch size `{k}` is not an integer")))?;
                let m = matrix(rows, "dk").map_err(|m| fail(anchor, "arrival.dk", &k, m))?;
                batches.push((size, m));
            }
            BatchArrivalProcess::from_batches(d0, batches).map_err(|e| fail(anchor, "arrival", "d0", e.to_string()))?
        }
        (None, Some(_), None) => return Err(fail(anchor, "arrival", "dk", "d0 given without [arrival.dk]")),
        (None, None, _) => return Err(fail(anchor, "arrival", "process", "give either process or d0 with dk")),
        _ => return Err(fail(anchor, "arrival", "process", "process and d0/dk are mutually exclusive")),
    };
    arrival
        .mean_arrival_rate()
        .map_err(|e| fail(anchor, "arrival", "process", e.to_string()))?;

    let q = raw.queue;
    if q.max_batch == 0 {
        return Err(fail(anchor, "queue", "max_batch", "must be at least 1"));
    }
    if !(q.frame_length_ms > 0.0 && q.frame_length_ms.is_finite()) {
        return Err(fail(anchor, "queue", "frame_length_ms", "must be finite and > 0"));
    }

    let c = raw.connections;
    ConnectionParams::new(c.arrival_rate, c.mean_duration, q.frame_length_ms / 60_000.0).map_err(|e| {
        let key = match &e {
            Error::Parameter { name, .. } => *name,
            _ => "arrival_rate",
        };
        fail(anchor, "connections", key, e.to_string())
    })?;
    if c.max_arrivals == 0 || c.max_departures == 0 {
        let key = if c.max_arrivals == 0 { "max_arrivals" } else { "max_departures" };
        return Err(fail(anchor, "connections", key, "must be at least 1"));
    }

    let channel = match raw.channel {
        RawChannel::Short(text) => match call(&text) {
            Some(("deterministic", args)) if args.len() == 1 => {
                let r = number(args[0], "deterministic").map_err(|m| fail(anchor, "", "channel", m))?;
                ChannelModel::deterministic(1, r)
            }
            _ => return Err(fail(anchor, "", "channel", format!("unknown channel `{text}`"))),
        }
        .map_err(|e| fail(anchor, "", "channel", e.to_string()))?,
        RawChannel::Full(t) => {
            let subchannels = t.subchannels.unwrap_or(1);
            match (t.deterministic, t.avg_snr_db) {
                (Some(r), None) => ChannelModel::deterministic(subchannels, r)
                    .map_err(|e| fail(anchor, "channel", "subchannels", e.to_string()))?,
                (None, Some(snr)) => {
                    let amc = match t.amc {
                        Some(entries) => {
                            AmcTable::new(entries).map_err(|e| fail(anchor, "channel", "amc", e.to_string()))?
                        }
                        None => AmcTable::default(),
                    };
                    ChannelModel::stochastic(subchannels, snr, t.nakagami_m.unwrap_or(1.0), amc).map_err(|e| {
                        let key = match &e {
                            Error::Parameter { name, .. } => *name,
                            _ => "avg_snr_db",
                        };
                        fail(anchor, "channel", key, e.to_string())
                    })?
                }
                (Some(_), Some(_)) => {
                    return Err(fail(anchor, "channel", "deterministic", "deterministic excludes avg_snr_db"))
                }
                (None, None) => return Err(fail(anchor, "channel", "avg_snr_db", "give avg_snr_db or deterministic")),
            }
        }
    };

    let p = raw.policy;
    let policy = parse_policy(&p.rule, p.c_tr, p.alpha.clone(), q.capacity).map_err(|m| {
        let key = if m.contains("alpha") && p.alpha.is_some() { "alpha" } else { "rule" };
        fail(anchor, "policy", key, m)
    })?;

    let s = raw.solver;
    let method = match s.method.as_deref().unwrap_or("auto") {
        "auto" => MethodChoice::Auto,
        "direct" => MethodChoice::Direct,
        "power" => MethodChoice::Power,
        "aggregation" => MethodChoice::Aggregation,
        other => {
            return Err(fail(
                anchor,
                "solver",
                "method",
                format!("unknown method `{other}` (auto, direct, power, aggregation)"),
            ))
        }
    };
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        method,
        tolerance: s.tolerance.unwrap_or(defaults.tolerance),
        max_iter: s.max_iter.unwrap_or(defaults.max_iter),
        direct_cap: s.direct_cap.unwrap_or(defaults.direct_cap),
        memory_budget_mb: s.memory_budget_mb.unwrap_or(defaults.memory_budget_mb),
        per_connection_throughput: s.per_connection_throughput.unwrap_or(false),
    };
    if !(solver.tolerance > 0.0) {
        return Err(fail(anchor, "solver", "tolerance", "must be > 0"));
    }
    if solver.max_iter == 0 {
        return Err(fail(anchor, "solver", "max_iter", "must be at least 1"));
    }

    let sim = match raw.sim {
        None => None,
        Some(r) => {
            if r.measure_frames < 1000 {
                return Err(fail(anchor, "sim", "measure_frames", "must be at least 1000"));
            }
            if r.replications < 3 {
                return Err(fail(anchor, "sim", "replications", "must be at least 3"));
            }
            Some(SimSettings {
                warmup_frames: r.warmup_frames.unwrap_or(10_000),
                measure_frames: r.measure_frames,
                replications: r.replications,
                seed: r.seed.unwrap_or(1),
            })
        }
    };

    Ok(Scenario {
        arrival,
        connection_rate: c.arrival_rate,
        mean_duration: c.mean_duration,
        limits: ConnectionLimits {
            max_arrivals: c.max_arrivals,
            max_departures: c.max_departures,
        },
        channel,
        policy,
        c_tr: p.c_tr,
        queue_cap: q.capacity,
        max_batch: q.max_batch,
        frame_length_ms: q.frame_length_ms,
        solver,
        sim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[arrival]
process = "mmpp2(900, 300, 6, 6, 30)"

[connections]
arrival_rate = 0.9
mean_duration = 20.0

[channel]
subchannels = 5
avg_snr_db = 5.0

[policy]
rule = "queue_aware(100)"
c_tr = 70

[queue]
capacity = 300
max_batch = 50
frame_length_ms = 1.0
"#;

    #[test]
    fn base_parses() {
        let s = Scenario::from_toml_str(BASE).unwrap();
        assert_eq!(s.queue_cap, 300);
        assert_eq!(s.policy.conn_cap(), 70);
        assert_eq!(s.policy.to_string(), "queue_aware(100;c_tr=70)");
        assert!(s.sim.is_none());
        assert_eq!(s.fingerprint().len(), 16);
    }

    #[test]
    fn empty_file_is_rejected() {
        let e = Scenario::from_toml_str("").unwrap_err();
        assert!(e.message.contains("missing field"), "{e}");
    }

    #[test]
    fn short_alpha_names_the_field_and_line() {
        let src = BASE.replace(
            "rule = \"queue_aware(100)\"",
            "rule = \"queue_aware_vector\"\nalpha = [1.0, 0.0]",
        );
        let e = Scenario::from_toml_str(&src).unwrap_err();
        assert_eq!(e.field, "policy.alpha");
        assert_eq!(e.line, Some(locate(&src, "policy", "alpha").unwrap()));
        assert!(e.message.contains("X + 1"));
    }

    #[test]
    fn syntax_error_carries_a_line() {
        let src = BASE.replace("capacity = 300", "capacity = ");
        let e = Scenario::from_toml_str(&src).unwrap_err();
        assert_eq!(e.line, Some(locate(&src, "queue", "capacity").unwrap()));
    }

    #[test]
    fn fingerprint_ignores_solver_settings() {
        let a = Scenario::from_toml_str(BASE).unwrap();
        let b = Scenario::from_toml_str(&format!("{BASE}\n[solver]\ntolerance = 1e-8\n")).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = a.with_connection_rate(0.5).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn policy_flags() {
        let s = Scenario::from_toml_str(BASE).unwrap();
        assert_eq!(parse_policy_flag("threshold:10", &s).unwrap(), CacPolicy::Threshold { limit: 10 });
        assert_eq!(parse_policy_flag("none:70", &s).unwrap(), CacPolicy::NoCac { c_tr: 70 });
        assert_eq!(
            parse_policy_flag("queue_aware:100", &s).unwrap(),
            CacPolicy::queue_aware_step(100, 300, 70)
        );
        assert!(parse_policy_flag("threshold", &s).is_err());
    }

    #[test]
    fn short_channel_form() {
        let src = format!(
            "channel = \"deterministic(2)\"\n{}",
            BASE.replace("[channel]\nsubchannels = 5\navg_snr_db = 5.0\n", "")
        );
        let s = Scenario::from_toml_str(&src).unwrap();
        assert_eq!(s.channel, ChannelModel::deterministic(1, 2).unwrap());
    }

    #[test]
    fn explicit_matrices() {
        let src = BASE.replace(
            "process = \"mmpp2(900, 300, 6, 6, 30)\"",
            "d0 = [[-3.0]]\n\n[arrival.dk]\n1 = [[1.0]]\n2 = [[2.0]]",
        );
        let s = Scenario::from_toml_str(&src).unwrap();
        assert!((s.arrival.mean_arrival_rate().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sim_limits() {
        let src = format!("{BASE}\n[sim]\nmeasure_frames = 10\nreplications = 5\n");
        let e = Scenario::from_toml_str(&src).unwrap_err();
        assert_eq!(e.field, "sim.measure_frames");
        assert!(e.line.is_some());
        let s = Scenario::from_toml_str(BASE).unwrap();
        assert!(s.sim_settings().is_err());
    }
}
