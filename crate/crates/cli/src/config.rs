//! Flat key-value run configuration with file/flag merging.
//!
//! The file format is one `key = value` pair per line, `#` starts a comment,
//! unknown keys are rejected. Command-line flags override file values. The
//! effective configuration can be dumped back in the same format and
//! re-parses to an identical run.

use gausspin::kernels::KernelSpec;
use gausspin::montecarlo::{Barrier, McRun, Method};
use std::fmt::Write as _;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub family: Option<String>,
    pub hurst: Option<f64>,
    pub c: Option<f64>,
    pub c_h: Option<f64>,
    pub m: Option<u32>,
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub upper: Option<String>,
    pub lower: Option<String>,
    pub start: Option<f64>,
    pub paths: Option<u64>,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub out: Option<String>,
    pub workers: Option<usize>,
    pub verbose: Option<bool>,
}

fn parse_num<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Config(format!("config key '{key}': cannot parse value '{raw}'")))
}

impl RunConfig {
    pub fn from_file(path: &str) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config '{path}': {e}")))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "config line {}: expected 'key = value'",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "family" => cfg.family = Some(value.to_string()),
                "hurst" => cfg.hurst = Some(parse_num(key, value)?),
                "c" => cfg.c = Some(parse_num(key, value)?),
                "c_h" => cfg.c_h = Some(parse_num(key, value)?),
                "m" => cfg.m = Some(parse_num(key, value)?),
                "step" => cfg.step = Some(parse_num(key, value)?),
                "horizon" => cfg.horizon = Some(parse_num(key, value)?),
                "upper" => cfg.upper = Some(value.to_string()),
                "lower" => cfg.lower = Some(value.to_string()),
                "start" => cfg.start = Some(parse_num(key, value)?),
                "paths" => cfg.paths = Some(parse_num(key, value)?),
                "seed" => cfg.seed = Some(parse_num(key, value)?),
                "method" => cfg.method = Some(value.to_string()),
                "out" => cfg.out = Some(value.to_string()),
                "workers" => cfg.workers = Some(parse_num(key, value)?),
                "verbose" => cfg.verbose = Some(parse_num(key, value)?),
                other => {
                    return Err(CliError::Config(format!(
                        "config line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    /// Apply non-empty fields of `over` on top of `self`.
    pub fn merge(mut self, over: RunConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(
            family, hurst, c, c_h, m, step, horizon, upper, lower, start, paths, seed, method, out,
            workers, verbose
        );
        self
    }

    /// Serialize in the file format; `parse(dump(c)) == c`.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        macro_rules! put {
            ($key:literal, $val:expr) => {
                if let Some(v) = &$val {
                    writeln!(s, "{} = {}", $key, v).unwrap();
                }
            };
        }
        put!("family", self.family);
        put!("hurst", self.hurst);
        put!("c", self.c);
        put!("c_h", self.c_h);
        put!("m", self.m);
        put!("step", self.step);
        put!("horizon", self.horizon);
        put!("upper", self.upper);
        put!("lower", self.lower);
        put!("start", self.start);
        put!("paths", self.paths);
        put!("seed", self.seed);
        put!("method", self.method);
        put!("out", self.out);
        put!("workers", self.workers);
        put!("verbose", self.verbose);
        s
    }

    pub fn build_spec(&self) -> Result<KernelSpec, CliError> {
        let family = self
            .family
            .as_deref()
            .ok_or_else(|| CliError::Config("missing 'family'".into()))?;
        build_spec(family, self.hurst, self.c, self.c_h, self.m)
    }

    /// Assemble the Monte Carlo run; `seed` must already be resolved.
    pub fn build_run(&self, seed: u64) -> Result<McRun, CliError> {
        let method = match self.method.as_deref().unwrap_or("corrected") {
            "corrected" => Method::Corrected,
            "crude" => Method::Crude,
            other => {
                return Err(CliError::Config(format!(
                    "method must be 'corrected' or 'crude', got '{other}'"
                )))
            }
        };
        let upper = self.upper.as_deref().map(parse_barrier).transpose()?;
        let lower = self.lower.as_deref().map(parse_barrier).transpose()?;
        if upper.is_none() && lower.is_none() {
            return Err(CliError::Config(
                "at least one barrier (upper/lower) is required".into(),
            ));
        }
        Ok(McRun {
            spec: self.build_spec()?,
            step: self.step.unwrap_or(0.01),
            horizon: self.horizon.unwrap_or(1.0),
            upper,
            lower,
            start: self.start.unwrap_or(0.0),
            n_paths: self.paths.unwrap_or(10_000),
            seed,
            method,
        })
    }
}

pub fn build_spec(
    family: &str,
    hurst: Option<f64>,
    c: Option<f64>,
    c_h: Option<f64>,
    m: Option<u32>,
) -> Result<KernelSpec, CliError> {
    let need_hurst =
        || hurst.ok_or_else(|| CliError::Config(format!("family '{family}' needs --hurst")));
    let spec = match family {
        "fbm" => KernelSpec::fbm(need_hurst()?),
        "cheridito" => {
            let c = c.ok_or_else(|| CliError::Config("cheridito needs --c".into()))?;
            let c_h = c_h.ok_or_else(|| CliError::Config("cheridito needs --c-h".into()))?;
            KernelSpec::cheridito(need_hurst()?, c, c_h)
        }
        "ibm" => KernelSpec::mfold_ibm(1),
        "mibm" => {
            KernelSpec::mfold_ibm(m.ok_or_else(|| CliError::Config("mibm needs --m".into()))?)
        }
        "ifbm" => KernelSpec::integrated_fbm(need_hurst()?),
        other => {
            return Err(CliError::Config(format!(
                "unknown family '{other}' (expected fbm | cheridito | ibm | mibm | ifbm)"
            )))
        }
    };
    spec.map_err(|e| CliError::Config(e.to_string()))
}

/// `"1.0"` for a constant level or `"0:1.0,0.5:0.6"` for a piecewise one.
pub fn parse_barrier(raw: &str) -> Result<Barrier, CliError> {
    if raw.contains(':') {
        let mut segs = Vec::new();
        for part in raw.split(',') {
            let (t, v) = part
                .split_once(':')
                .ok_or_else(|| CliError::Config(format!("bad barrier segment '{part}'")))?;
            segs.push((
                parse_num::<f64>("barrier time", t.trim())?,
                parse_num::<f64>("barrier level", v.trim())?,
            ));
        }
        Ok(Barrier::Piecewise(segs))
    } else {
        Ok(Barrier::Constant(parse_num("barrier", raw.trim())?))
    }
}

pub fn hurst_of(spec: &KernelSpec) -> Option<f64> {
    match *spec {
        KernelSpec::Fbm { hurst }
        | KernelSpec::Cheridito { hurst, .. }
        | KernelSpec::IntegratedFbm { hurst } => Some(hurst),
        KernelSpec::MfoldIbm { .. } => None,
    }
}
