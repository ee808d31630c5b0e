//! `key = value` run configuration with `[section]` headers and `#` comments.
//! Keys may also be written dotted (`grid.N = 16`) outside any section.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use pcflow::flow::{FlowVariant, Scheme};
use pcflow::grid::DerivativeMode;
use pcflow::scenarios::{ScenarioKind, ScenarioSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MonitorA {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub points: usize,
    pub mode: DerivativeMode,
    pub scenario: ScenarioSpec,
    /// background metric; flat when absent
    pub background: Option<ScenarioSpec>,
    /// reference metric of the reduced flow; flat when absent
    pub rho_bg: Option<ScenarioSpec>,
    pub variant: FlowVariant,
    pub scheme: Scheme,
    pub c_cfl: f64,
    pub max_retries: u32,
    /// fixed step; the stability bound when absent
    pub dt: Option<f64>,
    pub t_end: f64,
    pub pluriclosed_tol: Option<f64>,
    /// in steps
    pub checkpoint_interval: usize,
    /// in steps
    pub diagnostics_interval: usize,
    pub monitor_a: MonitorA,
    pub out_dir: Option<PathBuf>,
    pub lambda: bool,
    pub entropy: bool,
    pub tau1: f64,
    /// every key as written, canonical names, for the manifest
    pub echo: BTreeMap<String, String>,
}

#[derive(Clone, Copy)]
enum Kind {
    Usize,
    U32,
    U64,
    Float,
    Bool,
    Text,
}

const KEYS: &[(&str, Kind)] = &[
    ("grid.n", Kind::Usize),
    ("grid.N", Kind::Usize),
    ("grid.mode", Kind::Text),
    ("scenario.kind", Kind::Text),
    ("scenario.eps", Kind::Float),
    ("scenario.seed", Kind::U64),
    ("scenario.modes", Kind::Text),
    ("background.kind", Kind::Text),
    ("background.eps", Kind::Float),
    ("rho_bg.kind", Kind::Text),
    ("rho_bg.eps", Kind::Float),
    ("flow.variant", Kind::Text),
    ("flow.scheme", Kind::Text),
    ("flow.c_cfl", Kind::Float),
    ("flow.max_retries", Kind::U32),
    ("flow.dt", Kind::Float),
    ("flow.t_end", Kind::Float),
    ("flow.pluriclosed_tol", Kind::Float),
    ("output.dir", Kind::Text),
    ("output.checkpoint_interval", Kind::Usize),
    ("output.diagnostics_interval", Kind::Usize),
    ("monitor.A", Kind::Text),
    ("diagnostics.lambda", Kind::Bool),
    ("diagnostics.entropy", Kind::Bool),
    ("diagnostics.tau1", Kind::Float),
];

fn canonical(key: &str) -> &str {
    match key {
        "flow" => "flow.variant",
        "t_end" => "flow.t_end",
        "seed" => "scenario.seed",
        "dt" => "flow.dt",
        k => k,
    }
}

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, t)| *t)
}

#[derive(Debug, Clone)]
enum Value {
    Int(u64),
    Float(f64),
    Bool(bool),
    Text(String),
}

fn parse_value(kind: Kind, raw: &str) -> Result<Value, String> {
    match kind {
        Kind::Usize | Kind::U32 | Kind::U64 => raw
            .parse::<u64>()
            .map(Value::Int)
            .map_err(|_| format!("expected a non-negative integer, got '{raw}'")),
        Kind::Float => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Value::Float(v)),
            _ => Err(format!("expected a finite number, got '{raw}'")),
        },
        Kind::Bool => match raw {
            "true" | "yes" | "on" | "1" => Ok(Value::Bool(true)),
            "false" | "no" | "off" | "0" => Ok(Value::Bool(false)),
            _ => Err(format!("expected true or false, got '{raw}'")),
        },
        Kind::Text => Ok(Value::Text(raw.to_string())),
    }
}

/// Parse and validate. Returns every problem found, not just the first.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let mut errs = Vec::new();
    let mut section = String::new();
    // canonical key -> (line, value)
    let mut seen: BTreeMap<String, (usize, Value, String)> = BTreeMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = match raw_line.find('#') {
            Some(p) => &raw_line[..p],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if !name.trim().is_empty() => section = name.trim().to_string(),
                _ => errs.push(ConfigError {
                    line: Some(ln),
                    msg: format!("malformed section header '{line}'"),
                }),
            }
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            errs.push(ConfigError {
                line: Some(ln),
                msg: format!("expected 'key = value', got '{line}'"),
            });
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            errs.push(ConfigError {
                line: Some(ln),
                msg: "empty key".into(),
            });
            continue;
        }
        let full = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        let key = canonical(&full).to_string();
        let Some(kind) = kind_of(&key) else {
            errs.push(ConfigError {
                line: Some(ln),
                msg: format!("unknown key '{full}'"),
            });
            continue;
        };
        if let Some((first, _, _)) = seen.get(&key) {
            errs.push(ConfigError {
                line: Some(ln),
                msg: format!("duplicate key '{key}' on lines {first} and {ln}"),
            });
            continue;
        }
        match parse_value(kind, v) {
            Ok(val) => {
                seen.insert(key, (ln, val, v.to_string()));
            }
            Err(m) => errs.push(ConfigError {
                line: Some(ln),
                msg: format!("{key}: {m}"),
            }),
        }
    }
    let cfg = build(&seen, &mut errs);
    if errs.is_empty() {
        Ok(cfg)
    } else {
        errs.sort_by_key(|e| e.line.unwrap_or(usize::MAX));
        Err(errs)
    }
}

struct Reader<'a> {
    seen: &'a BTreeMap<String, (usize, Value, String)>,
    errs: &'a mut Vec<ConfigError>,
}

impl Reader<'_> {
    fn line(&self, key: &str) -> Option<usize> {
        self.seen.get(key).map(|e| e.0)
    }

    fn fail(&mut self, key: &str, msg: String) {
        let line = self.line(key);
        self.errs.push(ConfigError { line, msg });
    }

    fn missing(&mut self, key: &str) {
        self.errs.push(ConfigError {
            line: None,
            msg: format!("missing required key '{key}'"),
        });
    }

    fn int(&self, key: &str) -> Option<u64> {
        match self.seen.get(key) {
            Some((_, Value::Int(v), _)) => Some(*v),
            _ => None,
        }
    }

    fn float(&self, key: &str) -> Option<f64> {
        match self.seen.get(key) {
            Some((_, Value::Float(v), _)) => Some(*v),
            _ => None,
        }
    }

    fn boolean(&self, key: &str) -> Option<bool> {
        match self.seen.get(key) {
            Some((_, Value::Bool(v), _)) => Some(*v),
            _ => None,
        }
    }

    fn text(&self, key: &str) -> Option<&str> {
        match self.seen.get(key) {
            Some((_, Value::Text(v), _)) => Some(v.as_str()),
            _ => None,
        }
    }

    fn positive(&mut self, key: &str) -> Option<f64> {
        let v = self.float(key)?;
        if v > 0.0 {
            Some(v)
        } else {
            self.fail(key, format!("{key} must be > 0, got {v}"));
            None
        }
    }

    fn scenario(&mut self, prefix: &str) -> Option<ScenarioKind> {
        let key = format!("{prefix}.kind");
        let name = self.text(&key)?.to_string();
        match ScenarioKind::parse(&name) {
            Some(k) => Some(k),
            None => {
                self.fail(
                    &key,
                    format!("{key}: unknown scenario '{name}' (flat, kahler_potential, pluriclosed_alpha, conformal, custom_modes)"),
                );
                None
            }
        }
    }
}

fn parse_modes(s: &str) -> Result<Vec<Vec<i32>>, String> {
    s.split(';')
        .map(|m| {
            m.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<i32>().map_err(|_| format!("bad mode entry '{t}'")))
                .collect()
        })
        .collect()
}

fn build(seen: &BTreeMap<String, (usize, Value, String)>, errs: &mut Vec<ConfigError>) -> RunConfig {
    let mut r = Reader { seen, errs };
    let n = match r.int("grid.n") {
        Some(v) if v == 1 || v == 2 => v as usize,
        Some(v) => {
            r.fail("grid.n", format!("grid.n must be 1 or 2, got {v}"));
            2
        }
        None => {
            r.missing("grid.n");
            2
        }
    };
    let points = match r.int("grid.N") {
        Some(v) if v >= 8 && v % 2 == 0 => v as usize,
        Some(v) => {
            r.fail("grid.N", format!("N must be even >= 8, got {v}"));
            16
        }
        None => {
            r.missing("grid.N");
            16
        }
    };
    let mode = match r.text("grid.mode") {
        None | Some("spectral") => DerivativeMode::Spectral,
        Some("central4") => DerivativeMode::Central4,
        Some(m) => {
            let m = m.to_string();
            r.fail("grid.mode", format!("grid.mode must be spectral or central4, got '{m}'"));
            DerivativeMode::Spectral
        }
    };
    if r.line("scenario.kind").is_none() {
        r.missing("scenario.kind");
    }
    let kind = r.scenario("scenario").unwrap_or(ScenarioKind::Flat);
    let mut scenario = ScenarioSpec::new(kind);
    if let Some(e) = r.float("scenario.eps") {
        if e < 0.0 {
            r.fail("scenario.eps", format!("scenario.eps must be >= 0, got {e}"));
        }
        scenario.eps = e;
    }
    if let Some(s) = r.int("scenario.seed") {
        scenario.seed = s;
    }
    if let Some(m) = r.text("scenario.modes") {
        match parse_modes(m) {
            Ok(modes) if modes.iter().any(|v| v.len() != 2 * n) => {
                r.fail("scenario.modes", format!("each mode needs {} integers", 2 * n))
            }
            Ok(modes) if modes.iter().any(|v| v.iter().all(|&k| k == 0)) => {
                r.fail("scenario.modes", "zero mode".into())
            }
            Ok(modes) if modes.iter().flatten().any(|k| k.unsigned_abs() as usize >= points / 4) => {
                r.fail("scenario.modes", format!("mode entries must be below N/4 = {}", points / 4))
            }
            Ok(modes) => scenario.modes = modes,
            Err(e) => r.fail("scenario.modes", format!("scenario.modes: {e}")),
        }
    }
    if kind == ScenarioKind::CustomModes && scenario.modes.is_empty() {
        r.fail("scenario.kind", "custom_modes needs scenario.modes".into());
    }
    let side = |r: &mut Reader, prefix: &str| -> Option<ScenarioSpec> {
        let eps_key = format!("{prefix}.eps");
        let k = r.scenario(prefix);
        if k.is_none() && r.line(&eps_key).is_some() && r.line(&format!("{prefix}.kind")).is_none() {
            r.fail(&eps_key, format!("{eps_key} given without {prefix}.kind"));
        }
        k.map(|k| {
            let mut s = ScenarioSpec::new(k);
            if let Some(e) = r.float(&eps_key) {
                s.eps = e;
            }
            s
        })
    };
    let background = side(&mut r, "background");
    let rho_bg = side(&mut r, "rho_bg");
    let variant = match r.text("flow.variant") {
        Some(v) => match FlowVariant::parse(v) {
            Some(f) => f,
            None => {
                let v = v.to_string();
                r.fail("flow.variant", format!("flow must be pcf, normalized or alpha_reduced, got '{v}'"));
                FlowVariant::Pcf
            }
        },
        None => {
            r.missing("flow.variant");
            FlowVariant::Pcf
        }
    };
    if variant == FlowVariant::AlphaReduced && rho_bg.is_none() {
        let line = r.line("flow.variant");
        r.errs.push(ConfigError {
            line,
            msg: "alpha_reduced needs rho_bg.kind".into(),
        });
    }
    let scheme = match r.text("flow.scheme") {
        None => Scheme::Rk4,
        Some(s) => match Scheme::parse(s) {
            Some(s) => s,
            None => {
                let s = s.to_string();
                r.fail("flow.scheme", format!("flow.scheme must be rk4 or euler, got '{s}'"));
                Scheme::Rk4
            }
        },
    };
    let c_cfl = r.positive("flow.c_cfl").unwrap_or(pcflow::conventions::C_CFL);
    let max_retries = match r.int("flow.max_retries") {
        Some(v) if v <= 30 => v as u32,
        Some(v) => {
            r.fail("flow.max_retries", format!("flow.max_retries must be <= 30, got {v}"));
            6
        }
        None => 6,
    };
    let dt = r.positive("flow.dt");
    let t_end = if r.line("flow.t_end").is_none() {
        r.missing("t_end");
        1.0
    } else {
        r.positive("flow.t_end").unwrap_or(1.0)
    };
    let pluriclosed_tol = r.positive("flow.pluriclosed_tol");
    let interval = |r: &mut Reader, key: &str, default: usize| match r.int(key) {
        Some(0) => {
            r.fail(key, format!("{key} must be > 0"));
            default
        }
        Some(v) => v as usize,
        None => default,
    };
    let checkpoint_interval = interval(&mut r, "output.checkpoint_interval", 50);
    let diagnostics_interval = interval(&mut r, "output.diagnostics_interval", 1);
    let monitor_a = match r.text("monitor.A") {
        None | Some("auto") => MonitorA::Auto,
        Some(s) => match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => MonitorA::Fixed(v),
            _ => {
                let s = s.to_string();
                r.fail("monitor.A", format!("monitor.A must be 'auto' or a positive number, got '{s}'"));
                MonitorA::Auto
            }
        },
    };
    let entropy = r.boolean("diagnostics.entropy").unwrap_or(false);
    if entropy && dt.is_none() {
        let line = r.line("diagnostics.entropy");
        r.errs.push(ConfigError {
            line,
            msg: "diagnostics.entropy needs a fixed flow.dt".into(),
        });
    }
    let tau1 = r.float("diagnostics.tau1").unwrap_or(-1.0);
    if tau1 >= 0.0 {
        r.fail("diagnostics.tau1", format!("diagnostics.tau1 must be < 0, got {tau1}"));
    }
    RunConfig {
        n,
        points,
        mode,
        scenario,
        background,
        rho_bg,
        variant,
        scheme,
        c_cfl,
        max_retries,
        dt,
        t_end,
        pluriclosed_tol,
        checkpoint_interval,
        diagnostics_interval,
        monitor_a,
        out_dir: r.text("output.dir").map(PathBuf::from),
        lambda: r.boolean("diagnostics.lambda").unwrap_or(true),
        entropy,
        tau1,
        echo: seen.iter().map(|(k, (_, _, raw))| (k.clone(), raw.clone())).collect(),
    }
}
