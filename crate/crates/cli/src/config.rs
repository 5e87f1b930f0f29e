//! Run configuration: a TOML file with one table per concern, plus
//! `section.key=value` overrides applied before deserialization.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stratbl::GridSpec;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Study {
    LinearBulk,
    LinearBl,
    IotaApprox,
    NonlinearBl,
    Norms,
    Inequalities,
    ScalingSweep,
    IotaSweep,
    Picard,
}

/// Either a number or the word `auto`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dt {
    Fixed(f64),
    Named(String),
}

impl Default for Dt {
    fn default() -> Self {
        Dt::Named("auto".into())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    pub eps: f64,
    pub eps_list: Vec<f64>,
    pub t_end: f64,
    pub dt: Dt,
}

impl Default for Physics {
    fn default() -> Self {
        Physics { eps: 0.1, eps_list: vec![0.2, 0.1, 0.05, 0.025], t_end: 1.0, dt: Dt::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Norms {
    pub d: f64,
    pub r: f64,
    pub tau: f64,
    pub m: usize,
    pub c_d: f64,
    pub tau0: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for Norms {
    fn default() -> Self {
        Norms { d: 1.0, r: 2.0, tau: 0.5, m: 8, c_d: 1.0, tau0: 0.5, tol: 1e-10, max_iter: 12 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Init {
    /// Bulk: zero, generic, wall-forced, invariant, constant-theta, snapshot.
    /// Layer: zero, decaying, compatible, snapshot.
    pub recipe: String,
    pub amplitude: f64,
    /// Decay rate of the layer profiles.
    pub beta: f64,
    /// Wavevector of the layer recipes.
    pub mode: [i32; 2],
    pub snapshot: Option<String>,
}

impl Default for Init {
    fn default() -> Self {
        Init { recipe: "zero".into(), amplitude: 1.0, beta: 2.0, mode: [1, 0], snapshot: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Output {
    pub dir: String,
    /// Steps between snapshots and time-series rows.
    pub stride: usize,
    /// Write binary snapshots at the stride.
    pub snapshots: bool,
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: "out".into(), stride: 10, snapshots: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inequalities {
    pub m_max: usize,
    pub r: f64,
}

impl Default for Inequalities {
    fn default() -> Self {
        Inequalities { m_max: 200, r: 2.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub l_list: Vec<f64>,
    /// Common η-spacing of the depth sweep.
    pub h: f64,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep { l_list: vec![10.0, 20.0, 40.0], h: 0.05 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub study: Study,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub norms: Norms,
    #[serde(default)]
    pub init: Init,
    #[serde(default)]
    pub output: Output,
    #[serde(default)]
    pub inequalities: Inequalities,
    #[serde(default)]
    pub sweep: Sweep,
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `a.b=value` to the table, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override key `{path}` is malformed")));
    }
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg = RunConfig::deserialize(toml::Value::Table(table))
            .map_err(|e| CliError::Config(format!("config: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
        Self::from_str_with(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.validate()?;
        let p = &self.physics;
        if !(p.eps > 0.0) {
            return Err(CliError::Config(format!("physics.eps must be positive, got {}", p.eps)));
        }
        if !(p.t_end > 0.0) {
            return Err(CliError::Config(format!("physics.t_end must be positive, got {}", p.t_end)));
        }
        match &p.dt {
            Dt::Fixed(v) if !(*v > 0.0) => {
                return Err(CliError::Config(format!("physics.dt must be positive, got {v}")));
            }
            Dt::Named(s) if s != "auto" => {
                return Err(CliError::Config(format!("physics.dt must be a number or \"auto\", got \"{s}\"")));
            }
            _ => {}
        }
        if self.output.stride == 0 {
            return Err(CliError::Config("output.stride must be >= 1".into()));
        }
        if self.study == Study::ScalingSweep && p.eps_list.len() < 3 {
            return Err(CliError::Config(format!(
                "scaling-sweep needs at least 3 values in physics.eps_list, got {}",
                p.eps_list.len()
            )));
        }
        if self.init.recipe == "snapshot" && self.init.snapshot.is_none() {
            return Err(CliError::Config("init.recipe = \"snapshot\" needs init.snapshot".into()));
        }
        Ok(())
    }

    /// Explicit `dt`, or `None` for the study's automatic choice.
    pub fn fixed_dt(&self) -> Option<f64> {
        match self.physics.dt {
            Dt::Fixed(v) => Some(v),
            Dt::Named(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = RunConfig::from_str_with("study = \"norms\"", &[]).unwrap();
        assert_eq!(c.study, Study::Norms);
        assert_eq!(c.grid, GridSpec::default());
        assert_eq!(c.physics.dt, Dt::Named("auto".into()));
        assert_eq!(c.inequalities.m_max, 200);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = RunConfig::from_str_with(
            "study = \"linear-bl\"\n[grid]\nneta = 64\n",
            &["grid.l_eta=8".into(), "physics.dt=0.01".into(), "init.recipe=decaying".into(), "init.mode=[0, 1]".into()],
        )
        .unwrap();
        assert_eq!(c.grid.neta, 64);
        assert_eq!(c.grid.l_eta, 8.0);
        assert_eq!(c.fixed_dt(), Some(0.01));
        assert_eq!(c.init.recipe, "decaying");
        assert_eq!(c.init.mode, [0, 1]);
    }

    #[test]
    fn bad_configs_are_rejected_with_a_reason() {
        let cases = [
            ("study = \"nope\"", vec![]),
            ("study = \"norms\"\n[grid]\nnx = 7", vec![]),
            ("study = \"norms\"", vec!["physics.eps=-1".to_string()]),
            ("study = \"norms\"", vec!["physics.dt=\"soon\"".to_string()]),
            ("study = \"norms\"\n[grid]\nbogus = 1", vec![]),
            ("study = \"scaling-sweep\"", vec!["physics.eps_list=[0.1, 0.2]".to_string()]),
            ("study = \"norms\"", vec!["nonsense".to_string()]),
        ];
        for (text, ov) in cases {
            match RunConfig::from_str_with(text, &ov) {
                Err(CliError::Config(msg)) => assert!(!msg.contains('\n'), "{msg}"),
                other => panic!("{text} {ov:?}: {other:?}"),
            }
        }
    }
}
