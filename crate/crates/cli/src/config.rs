//! Flat `key = value` configuration with `[section]` headers. Every field
//! has a default; the effective configuration is echoed into each run's
//! metadata so outputs are reproducible from the meta file alone.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

/// Configuration problems exit with code 2; keep them distinguishable from
/// numerical failures.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err<V>(msg: impl Into<String>) -> Result<V, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentSource {
    Engine,
    Files,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Path,
    Star,
    Complete,
    EdgeList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    D3piOn,
    D3piOff,
    LqrBaseline,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::D3piOn => "d3pi_on",
            Variant::D3piOff => "d3pi_off",
            Variant::LqrBaseline => "lqr_baseline",
        }
    }
}

/// A cost-matrix specification: identity, scaled identity, or a dense
/// whitespace-separated text file.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSpec {
    Identity,
    Scaled(f64),
    File(PathBuf),
}

impl MatrixSpec {
    fn parse(s: &str) -> Result<Self, ConfigError> {
        if s == "identity" {
            return Ok(MatrixSpec::Identity);
        }
        if let Some(v) = s.strip_prefix("scale:") {
            return match v.trim().parse::<f64>() {
                Ok(x) => Ok(MatrixSpec::Scaled(x)),
                Err(e) => cfg_err(format!("bad scale in matrix spec `{s}`: {e}")),
            };
        }
        if let Some(p) = s.strip_prefix("file:") {
            return Ok(MatrixSpec::File(PathBuf::from(p.trim())));
        }
        cfg_err(format!(
            "matrix spec `{s}` not understood (use identity | scale:<v> | file:<path>)"
        ))
    }

    fn echo(&self) -> String {
        match self {
            MatrixSpec::Identity => "identity".into(),
            MatrixSpec::Scaled(v) => format!("scale:{v}"),
            MatrixSpec::File(p) => format!("file:{}", p.display()),
        }
    }

    /// Materializes a `dim×dim` matrix.
    pub fn build(&self, dim: usize) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            MatrixSpec::Identity => Ok(DMatrix::identity(dim, dim)),
            MatrixSpec::Scaled(v) => Ok(DMatrix::identity(dim, dim) * *v),
            MatrixSpec::File(p) => {
                let m = read_matrix_file(p)?;
                if m.nrows() != dim || m.ncols() != dim {
                    return cfg_err(format!(
                        "{} is {}x{}, expected {dim}x{dim}",
                        p.display(),
                        m.nrows(),
                        m.ncols()
                    ));
                }
                Ok(m)
            }
        }
    }
}

/// Reads a whitespace-separated matrix text file (one row per line,
/// `#` comments allowed).
pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let row = row.map_err(|e| {
            ConfigError(format!("{} line {}: {e}", path.display(), lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return cfg_err(format!(
                    "{} line {}: ragged row ({} vs {} entries)",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    first.len()
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return cfg_err(format!("{}: empty matrix file", path.display()));
    }
    let (nr, nc) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_row_iterator(
        nr,
        nc,
        rows.iter().flat_map(|r| r.iter().copied()),
    ))
}

/// Everything one benchmark run needs, fully defaulted.
#[derive(Debug, Clone)]
pub struct RunConfig {
    // [system]
    pub agent_source: AgentSource,
    pub a_file: Option<PathBuf>,
    pub b_file: Option<PathBuf>,
    /// Matrix files are continuous-time unless this is set.
    pub discrete: bool,
    pub dt: f64,
    pub normalize: bool,
    // [graph]
    pub graph_kind: GraphKind,
    pub n_agents: usize,
    pub edge_file: Option<PathBuf>,
    // [cost]
    pub q1: MatrixSpec,
    pub q2: MatrixSpec,
    pub r: MatrixSpec,
    // [run]
    pub seed: u64,
    pub variant: Variant,
    pub out_dir: PathBuf,
    /// Total simulated steps (learning phase included).
    pub horizon: usize,
    pub x0_scale: f64,
    // [spe]
    pub beta: f64,
    pub exploration_var: f64,
    pub spe_tol: f64,
    pub spe_window: usize,
    pub spe_max_steps: Option<usize>,
    // [d3pi]
    pub outer_tol: f64,
    pub max_outer: usize,
    pub xi_with_q2: bool,
    /// R inflation factor used only to produce the initial stabilizing K₁.
    pub k1_r_scale: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            agent_source: AgentSource::Engine,
            a_file: None,
            b_file: None,
            discrete: false,
            dt: 0.1,
            normalize: true,
            graph_kind: GraphKind::Path,
            n_agents: 10,
            edge_file: None,
            q1: MatrixSpec::Identity,
            q2: MatrixSpec::Identity,
            r: MatrixSpec::Identity,
            seed: 0,
            variant: Variant::D3piOn,
            out_dir: PathBuf::from("out"),
            horizon: 4000,
            x0_scale: 1.0,
            beta: 1e6,
            exploration_var: 0.01,
            spe_tol: 1e-6,
            spe_window: 10,
            spe_max_steps: None,
            outer_tol: 1e-4,
            max_outer: 50,
            xi_with_q2: true,
            k1_r_scale: 10.0,
        }
    }
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return cfg_err(format!("line {}: expected key = value", lineno + 1));
            };
            let key = format!("{section}.{}", key.trim());
            cfg.apply(&key, value.trim())
                .map_err(|e| ConfigError(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, ConfigError>
        where
            V::Err: fmt::Display,
        {
            value
                .parse()
                .map_err(|e| ConfigError(format!("{key}: {e}")))
        }
        match key {
            "system.agent" => {
                self.agent_source = match value {
                    "engine" => AgentSource::Engine,
                    "files" => AgentSource::Files,
                    other => return cfg_err(format!("unknown agent source `{other}`")),
                }
            }
            "system.a_file" => self.a_file = Some(PathBuf::from(value)),
            "system.b_file" => self.b_file = Some(PathBuf::from(value)),
            "system.discrete" => self.discrete = num(key, value)?,
            "system.dt" => self.dt = num(key, value)?,
            "system.normalize" => self.normalize = num(key, value)?,
            "graph.kind" => {
                self.graph_kind = match value {
                    "path" => GraphKind::Path,
                    "star" => GraphKind::Star,
                    "complete" => GraphKind::Complete,
                    "edgelist" => GraphKind::EdgeList,
                    other => return cfg_err(format!("unknown graph kind `{other}`")),
                }
            }
            "graph.n_agents" => self.n_agents = num(key, value)?,
            "graph.edge_file" => self.edge_file = Some(PathBuf::from(value)),
            "cost.q1" => self.q1 = MatrixSpec::parse(value)?,
            "cost.q2" => self.q2 = MatrixSpec::parse(value)?,
            "cost.r" => self.r = MatrixSpec::parse(value)?,
            "run.seed" => self.seed = num(key, value)?,
            "run.variant" => {
                self.variant = match value {
                    "d3pi_on" => Variant::D3piOn,
                    "d3pi_off" => Variant::D3piOff,
                    "lqr_baseline" => Variant::LqrBaseline,
                    other => return cfg_err(format!("unknown variant `{other}`")),
                }
            }
            "run.out_dir" => self.out_dir = PathBuf::from(value),
            "run.horizon" => self.horizon = num(key, value)?,
            "run.x0_scale" => self.x0_scale = num(key, value)?,
            "spe.beta" => self.beta = num(key, value)?,
            "spe.exploration_var" => self.exploration_var = num(key, value)?,
            "spe.tol" => self.spe_tol = num(key, value)?,
            "spe.window" => self.spe_window = num(key, value)?,
            "spe.max_steps" => self.spe_max_steps = Some(num(key, value)?),
            "d3pi.outer_tol" => self.outer_tol = num(key, value)?,
            "d3pi.max_outer" => self.max_outer = num(key, value)?,
            "d3pi.xi_with_q2" => self.xi_with_q2 = num(key, value)?,
            "d3pi.k1_r_scale" => self.k1_r_scale = num(key, value)?,
            other => return cfg_err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.agent_source == AgentSource::Files && (self.a_file.is_none() || self.b_file.is_none())
        {
            return cfg_err("agent = files requires system.a_file and system.b_file");
        }
        if self.graph_kind == GraphKind::EdgeList && self.edge_file.is_none() {
            return cfg_err("graph kind edgelist requires graph.edge_file");
        }
        if self.n_agents == 0 {
            return cfg_err("graph.n_agents must be positive");
        }
        if self.dt <= 0.0 {
            return cfg_err("system.dt must be positive");
        }
        if self.horizon == 0 {
            return cfg_err("run.horizon must be positive");
        }
        Ok(())
    }

    /// The effective configuration as sorted `section.key = value` lines.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put(
            "system.agent",
            match self.agent_source {
                AgentSource::Engine => "engine".into(),
                AgentSource::Files => "files".into(),
            },
        );
        if let Some(p) = &self.a_file {
            put("system.a_file", p.display().to_string());
        }
        if let Some(p) = &self.b_file {
            put("system.b_file", p.display().to_string());
        }
        put("system.discrete", self.discrete.to_string());
        put("system.dt", self.dt.to_string());
        put("system.normalize", self.normalize.to_string());
        put(
            "graph.kind",
            match self.graph_kind {
                GraphKind::Path => "path".into(),
                GraphKind::Star => "star".into(),
                GraphKind::Complete => "complete".into(),
                GraphKind::EdgeList => "edgelist".into(),
            },
        );
        put("graph.n_agents", self.n_agents.to_string());
        if let Some(p) = &self.edge_file {
            put("graph.edge_file", p.display().to_string());
        }
        put("cost.q1", self.q1.echo());
        put("cost.q2", self.q2.echo());
        put("cost.r", self.r.echo());
        put("run.seed", self.seed.to_string());
        put("run.variant", self.variant.as_str().into());
        put("run.out_dir", self.out_dir.display().to_string());
        put("run.horizon", self.horizon.to_string());
        put("run.x0_scale", self.x0_scale.to_string());
        put("spe.beta", self.beta.to_string());
        put("spe.exploration_var", self.exploration_var.to_string());
        put("spe.tol", self.spe_tol.to_string());
        put("spe.window", self.spe_window.to_string());
        if let Some(s) = self.spe_max_steps {
            put("spe.max_steps", s.to_string());
        }
        put("d3pi.outer_tol", self.outer_tol.to_string());
        put("d3pi.max_outer", self.max_outer.to_string());
        put("d3pi.xi_with_q2", self.xi_with_q2.to_string());
        put("d3pi.k1_r_scale", self.k1_r_scale.to_string());
        m
    }
}
