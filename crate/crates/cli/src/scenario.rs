//! Scenario files.
//!
//! ```text
//! # comment
//! [model]
//! id = ex34b
//! truncation_cap = 1.5
//! [params]
//! beta = "0.14+0.005*cos(10*t)"
//! [jumps]
//! h1 = 0.0001
//! [measure]
//! support = (-2, 2)
//! [initial]
//! state = (7.27, 1.5, 1.11)
//! [sim]
//! dt = 0.001
//! horizon = 100
//! ```
//!
//! Values are numerals, tuples `(a, b, c)`, quoted strings, or bare words
//! (model ids and domains).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;
use ussir_core::expr::{StateExpr, TimeFunction};
use ussir_core::integrator::{SimConfig, DEFAULT_DT, DEFAULT_FLOOR};
use ussir_core::levy::LevyMeasure;
use ussir_core::models::{
    build_custom, build_ex1, build_ex1b, build_ex34a, build_ex34b, build_xc, CustomModel, Domain,
    Ex1Params, Ex1bParams, Ex34aParams, Ex34bParams, ModelSpec, State, XcParams,
};
use ussir_core::montecarlo::DEFAULT_SLACK;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("model `{model}` is missing {missing:?}; it requires {required:?}")]
    Missing {
        model: String,
        missing: Vec<String>,
        required: Vec<String>,
    },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn syntax(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Syntax {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Ex1,
    Ex1b,
    Xc,
    Ex34a,
    Ex34b,
    Custom,
}

impl ModelId {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ex1" => ModelId::Ex1,
            "ex1b" => ModelId::Ex1b,
            "xc" => ModelId::Xc,
            "ex34a" => ModelId::Ex34a,
            "ex34b" => ModelId::Ex34b,
            "custom" => ModelId::Custom,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Ex1 => "ex1",
            ModelId::Ex1b => "ex1b",
            ModelId::Xc => "xc",
            ModelId::Ex34a => "ex34a",
            ModelId::Ex34b => "ex34b",
            ModelId::Custom => "custom",
        }
    }

    /// Time-function parameters the model needs.
    pub fn required_params(self) -> &'static [&'static str] {
        match self {
            ModelId::Ex1 => &[
                "beta", "gamma", "xi", "sigma1", "sigma2", "phi1", "phi2", "phi3",
            ],
            ModelId::Ex1b => &["beta", "gamma1", "gamma2", "sigma"],
            ModelId::Xc => &["Lambda", "mu", "beta", "gamma", "epsilon", "sigma"],
            ModelId::Ex34a => &[
                "Lambda", "mu", "beta", "gamma1", "gamma2", "gamma3", "gamma4", "xi", "sigma1",
                "sigma2", "phi1", "phi2", "phi3",
            ],
            ModelId::Ex34b => &["Lambda", "mu", "beta", "gamma1", "gamma2", "sigma"],
            ModelId::Custom => &["b1", "b2", "b3"],
        }
    }

    /// Jump constants the model needs.
    pub fn required_jumps(self) -> &'static [&'static str] {
        match self {
            ModelId::Ex1 | ModelId::Ex1b => &["h1", "h2", "g1", "g2"],
            ModelId::Xc | ModelId::Custom => &[],
            ModelId::Ex34a => &["h1", "h2", "h3", "g1", "g2"],
            ModelId::Ex34b => &["h1", "h2", "h3", "g1", "g2", "g3"],
        }
    }

    fn needs_cap(self) -> bool {
        matches!(self, ModelId::Ex34a | ModelId::Ex34b)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    /// Numeral, kept verbatim so integers parse exactly.
    Number(String),
    Tuple(Vec<f64>),
    Text(String),
    Word(String),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Number(_) => "a number",
            Value::Tuple(_) => "a tuple",
            Value::Text(_) => "a quoted string",
            Value::Word(_) => "a bare word",
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    for (i, ch) in line.char_indices() {
        match ch {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_value(raw: &str, line: usize) -> Result<Value, ScenarioError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(syntax(line, "missing value"));
    }
    if let Some(rest) = raw.strip_prefix('"') {
        let body = rest
            .strip_suffix('"')
            .ok_or_else(|| syntax(line, "unterminated string"))?;
        if body.contains('"') {
            return Err(syntax(line, "stray quote inside string"));
        }
        return Ok(Value::Text(body.to_string()));
    }
    if let Some(rest) = raw.strip_prefix('(') {
        let body = rest
            .strip_suffix(')')
            .ok_or_else(|| syntax(line, "unterminated tuple"))?;
        let items = body
            .split(',')
            .map(|p| {
                p.trim().parse::<f64>().map_err(|_| {
                    syntax(line, format!("tuple entry `{}` is not a number", p.trim()))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Value::Tuple(items));
    }
    if raw.parse::<f64>().is_ok() {
        return Ok(Value::Number(raw.to_string()));
    }
    if raw
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Ok(Value::Word(raw.to_string()));
    }
    Err(syntax(line, format!("cannot parse value `{raw}`")))
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: Value,
}

const SECTIONS: [&str; 6] = ["model", "params", "jumps", "measure", "initial", "sim"];

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

fn tokenize(text: &str) -> Result<Sections, ScenarioError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, "malformed section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(syntax(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(syntax(line, format!("duplicate section [{name}]")));
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| syntax(line, "expected `key = value`"))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(syntax(line, format!("invalid key `{key}`")));
        }
        let section = current
            .as_ref()
            .ok_or_else(|| syntax(line, "key outside of any section"))?;
        let value = parse_value(value, line)?;
        let table = sections.get_mut(section).expect("section exists");
        if table.contains_key(key) {
            return Err(syntax(line, format!("duplicate key `{key}`")));
        }
        table.insert(key.to_string(), Entry { line, value });
    }
    Ok(sections)
}

/// Simulation settings of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub paths: usize,
    pub record_stride: usize,
    pub slack: f64,
    pub output_dir: Option<PathBuf>,
}

impl SimSettings {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.dt,
            horizon: self.horizon,
            seed: self.seed,
            positivity_floor: DEFAULT_FLOOR,
            record_stride: self.record_stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub model_id: ModelId,
    /// Domain of a custom model; fixed by the id otherwise.
    pub domain: Domain,
    pub truncation_cap: Option<f64>,
    /// Expression sources by parameter name.
    pub params: BTreeMap<String, String>,
    pub jumps: BTreeMap<String, f64>,
    /// `[lo, hi]` of the uniform intensity measure, or `None` for no jumps.
    pub measure_support: Option<(f64, f64)>,
    pub initial: State,
    pub sim: SimSettings,
}

fn custom_param_allowed(key: &str) -> bool {
    let parts: Vec<&str> = key.split('_').collect();
    let idx = |s: &str| matches!(s, "1" | "2" | "3");
    let col = |s: &str| s.parse::<usize>().is_ok_and(|j| j >= 1);
    match parts.as_slice() {
        [name] => {
            let (head, tail) = name.split_at(1);
            matches!(head, "b" | "h" | "g") && idx(tail)
        }
        ["sigma", i, j] => idx(i) && col(j),
        _ => false,
    }
}

fn as_f64(key: &str, e: &Entry) -> Result<f64, ScenarioError> {
    match &e.value {
        Value::Number(n) => Ok(n.parse().expect("validated numeral")),
        other => Err(syntax(
            e.line,
            format!("`{key}` must be a number, found {}", other.describe()),
        )),
    }
}

fn as_u64(key: &str, e: &Entry) -> Result<u64, ScenarioError> {
    match &e.value {
        Value::Number(n) => n
            .parse()
            .map_err(|_| syntax(e.line, format!("`{key}` must be a non-negative integer"))),
        other => Err(syntax(
            e.line,
            format!("`{key}` must be an integer, found {}", other.describe()),
        )),
    }
}

fn as_tuple(key: &str, e: &Entry, len: usize) -> Result<Vec<f64>, ScenarioError> {
    match &e.value {
        Value::Tuple(v) if v.len() == len => Ok(v.clone()),
        Value::Tuple(v) => Err(syntax(
            e.line,
            format!("`{key}` needs {len} entries, found {}", v.len()),
        )),
        other => Err(syntax(
            e.line,
            format!("`{key}` must be a tuple, found {}", other.describe()),
        )),
    }
}

fn as_expr(key: &str, e: &Entry) -> Result<String, ScenarioError> {
    match &e.value {
        Value::Text(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.clone()),
        other => Err(syntax(
            e.line,
            format!(
                "`{key}` must be a quoted expression or number, found {}",
                other.describe()
            ),
        )),
    }
}

fn check_keys(
    sections: &Sections,
    section: &str,
    allowed: impl Fn(&str) -> bool,
) -> Result<(), ScenarioError> {
    if let Some(table) = sections.get(section) {
        for (key, e) in table {
            if !allowed(key) {
                return Err(ScenarioError::UnknownKey {
                    line: e.line,
                    section: section.to_string(),
                    key: key.clone(),
                });
            }
        }
    }
    Ok(())
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let sections = tokenize(text)?;
    let empty = BTreeMap::new();
    let get = |s: &str| sections.get(s).unwrap_or(&empty);

    let model = get("model");
    check_keys(&sections, "model", |k| {
        matches!(k, "id" | "truncation_cap" | "domain")
    })?;
    let id_entry = model
        .get("id")
        .ok_or_else(|| ScenarioError::Invalid("[model] must set `id`".into()))?;
    let model_id = match &id_entry.value {
        Value::Word(w) => ModelId::parse(w),
        _ => None,
    }
    .ok_or_else(|| {
        syntax(
            id_entry.line,
            "`id` must be one of ex1, ex1b, xc, ex34a, ex34b, custom",
        )
    })?;

    let domain = match model.get("domain") {
        None => match model_id {
            ModelId::Ex1 | ModelId::Ex1b | ModelId::Custom => Domain::Simplex,
            _ => Domain::Octant,
        },
        Some(e) if model_id != ModelId::Custom => {
            return Err(syntax(e.line, "`domain` only applies to custom models"));
        }
        Some(e) => match &e.value {
            Value::Word(w) if w == "simplex" => Domain::Simplex,
            Value::Word(w) if w == "octant" => Domain::Octant,
            _ => return Err(syntax(e.line, "`domain` must be simplex or octant")),
        },
    };

    let truncation_cap = match model.get("truncation_cap") {
        Some(e) if !model_id.needs_cap() => {
            return Err(syntax(
                e.line,
                format!("`truncation_cap` does not apply to {model_id}"),
            ));
        }
        Some(e) => Some(as_f64("truncation_cap", e)?),
        None => None,
    };

    let required = model_id.required_params();
    if model_id == ModelId::Custom {
        check_keys(&sections, "params", custom_param_allowed)?;
    } else {
        check_keys(&sections, "params", |k| required.contains(&k))?;
    }
    let mut params = BTreeMap::new();
    for (k, e) in get("params") {
        params.insert(k.clone(), as_expr(k, e)?);
    }

    let required_jumps = model_id.required_jumps();
    check_keys(&sections, "jumps", |k| required_jumps.contains(&k))?;
    let mut jumps = BTreeMap::new();
    for (k, e) in get("jumps") {
        jumps.insert(k.clone(), as_f64(k, e)?);
    }

    let mut missing: Vec<String> = required
        .iter()
        .chain(required_jumps)
        .filter(|k| !params.contains_key(**k) && !jumps.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if model_id.needs_cap() && truncation_cap.is_none() {
        missing.push("truncation_cap".into());
    }
    if !missing.is_empty() {
        let mut all: Vec<String> = required
            .iter()
            .chain(required_jumps)
            .map(|k| k.to_string())
            .collect();
        if model_id.needs_cap() {
            all.push("truncation_cap".into());
        }
        return Err(ScenarioError::Missing {
            model: model_id.to_string(),
            missing,
            required: all,
        });
    }

    check_keys(&sections, "measure", |k| k == "support")?;
    let measure_support = match (model_id, get("measure").get("support")) {
        (ModelId::Xc, Some(e)) => {
            return Err(syntax(e.line, "xc has no jump terms; remove [measure]"));
        }
        (ModelId::Xc, None) => None,
        (_, Some(e)) => {
            let v = as_tuple("support", e, 2)?;
            Some((v[0], v[1]))
        }
        (_, None) => Some((-2.0, 2.0)),
    };

    check_keys(&sections, "initial", |k| k == "state")?;
    let initial = match get("initial").get("state") {
        Some(e) => {
            let v = as_tuple("state", e, 3)?;
            State::new(v[0], v[1], v[2])
        }
        None => return Err(ScenarioError::Invalid("[initial] must set `state`".into())),
    };

    check_keys(&sections, "sim", |k| {
        matches!(
            k,
            "dt" | "horizon" | "seed" | "paths" | "record_stride" | "slack" | "output_dir"
        )
    })?;
    let sim_tab = get("sim");
    let num = |k: &str, default: f64| sim_tab.get(k).map_or(Ok(default), |e| as_f64(k, e));
    let int = |k: &str, default: u64| sim_tab.get(k).map_or(Ok(default), |e| as_u64(k, e));
    let horizon_entry = sim_tab
        .get("horizon")
        .ok_or_else(|| ScenarioError::Invalid("[sim] must set `horizon`".into()))?;
    let sim = SimSettings {
        dt: num("dt", DEFAULT_DT)?,
        horizon: as_f64("horizon", horizon_entry)?,
        seed: int("seed", 0)?,
        paths: int("paths", 50)? as usize,
        record_stride: int("record_stride", 1)? as usize,
        slack: num("slack", DEFAULT_SLACK)?,
        output_dir: match sim_tab.get("output_dir") {
            None => None,
            Some(Entry {
                value: Value::Text(s),
                ..
            }) => Some(PathBuf::from(s)),
            Some(e) => return Err(syntax(e.line, "`output_dir` must be a quoted path")),
        },
    };

    let cfg = ScenarioConfig {
        model_id,
        domain,
        truncation_cap,
        params,
        jumps,
        measure_support,
        initial,
        sim,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text)
}

impl ScenarioConfig {
    /// Checks the settings that flag overrides may change.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "dt = {} must be positive",
                s.dt
            )));
        }
        if !(s.horizon >= s.dt && s.horizon.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "horizon = {} must be at least dt = {}",
                s.horizon, s.dt
            )));
        }
        if s.paths == 0 {
            return Err(ScenarioError::Invalid("paths must be at least 1".into()));
        }
        if s.record_stride == 0 {
            return Err(ScenarioError::Invalid(
                "record_stride must be at least 1".into(),
            ));
        }
        if !(s.slack > 0.0 && s.slack.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "slack = {} must be positive",
                s.slack
            )));
        }
        let domain = self.domain;
        let tol = 1e-9;
        if !domain.admits(&self.initial, tol) {
            return Err(ScenarioError::Invalid(format!(
                "initial state {:?} is not admissible for the {domain:?} domain",
                self.initial
            )));
        }
        Ok(())
    }

    fn time_fn(&self, name: &str) -> Result<TimeFunction, ScenarioError> {
        let src = &self.params[name];
        TimeFunction::parse(src)
            .map_err(|e| ScenarioError::Invalid(format!("parameter `{name}` = \"{src}\": {e}")))
    }

    fn state_expr(&self, name: &str) -> Result<StateExpr, ScenarioError> {
        match self.params.get(name) {
            None => Ok(StateExpr::zero()),
            Some(src) => StateExpr::parse(src)
                .map_err(|e| ScenarioError::Invalid(format!("`{name}` = \"{src}\": {e}"))),
        }
    }

    fn measure(&self) -> Result<LevyMeasure, ScenarioError> {
        match self.measure_support {
            None => Ok(LevyMeasure::none()),
            Some((lo, hi)) => LevyMeasure::uniform(lo, hi)
                .map_err(|e| ScenarioError::Invalid(format!("measure support: {e}"))),
        }
    }

    /// Builds the model, enforcing the hypotheses of its builder.
    pub fn build_model(&self) -> Result<ModelSpec, ScenarioError> {
        let f = |n: &str| self.time_fn(n);
        let j = |n: &str| self.jumps[n];
        let measure = self.measure()?;
        let cap = || self.truncation_cap.expect("validated");
        let model = match self.model_id {
            ModelId::Ex1 => build_ex1(
                Ex1Params {
                    beta: f("beta")?,
                    gamma: f("gamma")?,
                    xi: f("xi")?,
                    sigma1: f("sigma1")?,
                    sigma2: f("sigma2")?,
                    phi1: f("phi1")?,
                    phi2: f("phi2")?,
                    phi3: f("phi3")?,
                    h1: j("h1"),
                    h2: j("h2"),
                    g1: j("g1"),
                    g2: j("g2"),
                },
                measure,
            ),
            ModelId::Ex1b => build_ex1b(
                Ex1bParams {
                    beta: f("beta")?,
                    gamma1: f("gamma1")?,
                    gamma2: f("gamma2")?,
                    sigma: f("sigma")?,
                    h1: j("h1"),
                    h2: j("h2"),
                    g1: j("g1"),
                    g2: j("g2"),
                },
                measure,
            ),
            ModelId::Xc => build_xc(XcParams {
                lambda: f("Lambda")?,
                mu: f("mu")?,
                beta: f("beta")?,
                gamma: f("gamma")?,
                epsilon: f("epsilon")?,
                sigma: f("sigma")?,
            }),
            ModelId::Ex34a => build_ex34a(
                Ex34aParams {
                    lambda: f("Lambda")?,
                    mu: f("mu")?,
                    beta: f("beta")?,
                    gamma1: f("gamma1")?,
                    gamma2: f("gamma2")?,
                    gamma3: f("gamma3")?,
                    gamma4: f("gamma4")?,
                    xi: f("xi")?,
                    sigma1: f("sigma1")?,
                    sigma2: f("sigma2")?,
                    phi1: f("phi1")?,
                    phi2: f("phi2")?,
                    phi3: f("phi3")?,
                    h1: j("h1"),
                    h2: j("h2"),
                    h3: j("h3"),
                    g1: j("g1"),
                    g2: j("g2"),
                    cap: cap(),
                },
                measure,
            ),
            ModelId::Ex34b => build_ex34b(
                Ex34bParams {
                    lambda: f("Lambda")?,
                    mu: f("mu")?,
                    beta: f("beta")?,
                    gamma1: f("gamma1")?,
                    gamma2: f("gamma2")?,
                    sigma: f("sigma")?,
                    h1: j("h1"),
                    h2: j("h2"),
                    h3: j("h3"),
                    g1: j("g1"),
                    g2: j("g2"),
                    g3: j("g3"),
                    cap: cap(),
                },
                measure,
            ),
            ModelId::Custom => {
                let row = |p: &str| -> Result<[StateExpr; 3], ScenarioError> {
                    Ok([
                        self.state_expr(&format!("{p}1"))?,
                        self.state_expr(&format!("{p}2"))?,
                        self.state_expr(&format!("{p}3"))?,
                    ])
                };
                let columns = self
                    .params
                    .keys()
                    .filter_map(|k| k.strip_prefix("sigma_"))
                    .filter_map(|rest| rest.split('_').nth(1)?.parse::<usize>().ok())
                    .max()
                    .unwrap_or(0);
                let diffusion = (1..=columns)
                    .map(|c| {
                        Ok([
                            self.state_expr(&format!("sigma_1_{c}"))?,
                            self.state_expr(&format!("sigma_2_{c}"))?,
                            self.state_expr(&format!("sigma_3_{c}"))?,
                        ])
                    })
                    .collect::<Result<Vec<_>, ScenarioError>>()?;
                build_custom(
                    CustomModel {
                        domain: self.domain,
                        drift: row("b")?,
                        diffusion,
                        small_jump: row("h")?,
                        large_jump: row("g")?,
                    },
                    measure,
                )
            }
        };
        model.map_err(|e| ScenarioError::Invalid(format!("{} model rejected: {e}", self.model_id)))
    }
}
