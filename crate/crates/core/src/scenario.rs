//! Scenario files: flat `key = value` text with the unit in each key name,
//! `#` starting a comment.
//!
//! ```text
//! name = subsonic
//! orientation = vertical
//! nozzle_diameter_mm = 1.905
//! exit_velocity_m_s = 263.1
//! exit_density_kg_m3 = 0.0838
//! s_end_over_d = 150
//! ```
//!
//! A file giving `vessel_pressure_bar` instead of an exit state describes a
//! choked release and is reduced through the notional nozzle.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::nozzle::StagnationState;
use crate::oracle::{Orientation, ScenarioConfig};
use crate::physics::{Ambient, GasConstants, NozzleState, SpreadingModel};

const KEYS: &[&str] = &[
    "name",
    "orientation",
    "nozzle_diameter_mm",
    "exit_velocity_m_s",
    "exit_density_kg_m3",
    "vessel_pressure_bar",
    "vessel_temperature_k",
    "s_end_over_d",
    "eval_start_over_d",
    "eval_end_over_d",
    "step_over_d",
    "ambient_pressure_pa",
    "ambient_temperature_k",
    "ambient_density_kg_m3",
    "gravity_m_s2",
    "gas_constant_j_mol_k",
    "molar_mass_h2_kg_mol",
    "molar_mass_air_kg_mol",
    "gamma",
    "lambda",
    "beta_a",
    "alpha_cap",
];

const DEFAULT_S_END_OVER_D: f64 = 150.0;
const DEFAULT_VESSEL_TEMPERATURE: f64 = 293.0;

#[derive(Debug, Clone)]
pub struct ParsedScenario {
    pub config: ScenarioConfig,
    /// One message per unknown key.
    pub warnings: Vec<String>,
}

pub fn parse_scenario(path: &Path) -> Result<ParsedScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scenario_str(&text, path)
}

struct Entries<'a> {
    map: BTreeMap<String, (usize, String)>,
    path: &'a Path,
}

impl Entries<'_> {
    fn text(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(_, v)| v.as_str())
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        let Some((line, v)) = self.map.get(key) else { return Ok(None) };
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => Err(Error::Parse { path: self.path.to_path_buf(), line: *line, msg: format!("{key}: '{v}' is not a number") }),
        }
    }

    fn number_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.number(key)?.unwrap_or(default))
    }

    fn required(&self, what: &str) -> Error {
        Error::Config(format!("{}: {what} required", self.path.display()))
    }
}

/// Parses scenario text. `origin` only labels error messages.
pub fn parse_scenario_str(text: &str, origin: &Path) -> Result<ParsedScenario> {
    let mut map = BTreeMap::new();
    let mut warnings = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: origin.to_path_buf(), line, msg };
        let (k, v) = content.split_once('=').ok_or_else(|| parse_err(format!("expected 'key = value', got '{content}'")))?;
        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
        if k.is_empty() || v.is_empty() {
            return Err(parse_err(format!("expected 'key = value', got '{content}'")));
        }
        if !KEYS.contains(&k.as_str()) {
            let msg = format!("{}:{line}: unknown key '{k}' ignored", origin.display());
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        if map.insert(k.clone(), (line, v)).is_some() {
            return Err(parse_err(format!("duplicate key '{k}'")));
        }
    }
    let e = Entries { map, path: origin };

    let orientation = match e.text("orientation") {
        None => return Err(e.required("orientation")),
        Some("vertical") => Orientation::Vertical,
        Some("horizontal") => Orientation::Horizontal,
        Some(other) => {
            let line = e.map["orientation"].0;
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line,
                msg: format!("orientation must be 'vertical' or 'horizontal', got '{other}'"),
            });
        }
    };
    let diameter = e.number("nozzle_diameter_mm")?.ok_or_else(|| e.required("nozzle diameter"))? * 1e-3;
    let name = e
        .text("name")
        .map(str::to_string)
        .or_else(|| origin.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scenario".into());

    let def_gas = GasConstants::default();
    let gas = GasConstants {
        r: e.number_or("gas_constant_j_mol_k", def_gas.r)?,
        m_h2: e.number_or("molar_mass_h2_kg_mol", def_gas.m_h2)?,
        m_air: e.number_or("molar_mass_air_kg_mol", def_gas.m_air)?,
        gamma: e.number_or("gamma", def_gas.gamma)?,
    };
    let def_amb = Ambient::default();
    let ambient = Ambient {
        pressure: e.number_or("ambient_pressure_pa", def_amb.pressure)?,
        temperature: e.number_or("ambient_temperature_k", def_amb.temperature)?,
        density: e.number_or("ambient_density_kg_m3", def_amb.density)?,
        gravity: e.number_or("gravity_m_s2", def_amb.gravity)?,
    };
    let def_sp = SpreadingModel::default();
    let mut spreading = SpreadingModel::new(e.number_or("lambda", def_sp.lambda)?, e.number_or("beta_a", def_sp.beta_a)?)?;
    if let Some(cap) = e.number("alpha_cap")? {
        if !(cap > 0.0) {
            return Err(Error::InvalidInput(format!("alpha_cap {cap} must be positive")));
        }
        spreading.alpha_cap = cap;
    }
    let s_end = e.number_or("s_end_over_d", DEFAULT_S_END_OVER_D)?;

    let velocity = e.number("exit_velocity_m_s")?;
    let density = e.number("exit_density_kg_m3")?;
    let vessel = e.number("vessel_pressure_bar")?;
    let mut config = match (vessel, velocity, density) {
        (Some(p0), None, None) => {
            let stagnation = StagnationState {
                p0: p0 * 1e5,
                t0: e.number_or("vessel_temperature_k", DEFAULT_VESSEL_TEMPERATURE)?,
            };
            ScenarioConfig::under_expanded(name, gas, ambient, spreading, stagnation, diameter, orientation, s_end)?
        }
        (None, Some(velocity), Some(density)) => {
            let source = NozzleState {
                diameter,
                velocity,
                density,
                pressure: ambient.pressure,
                temperature: ambient.temperature,
            };
            ScenarioConfig::subsonic(name, gas, ambient, spreading, source, orientation, s_end)?
        }
        (None, Some(_), None) => return Err(e.required("exit density")),
        (None, None, Some(_)) => return Err(e.required("exit velocity")),
        (None, None, None) => return Err(e.required("exit velocity and density, or vessel pressure,")),
        (Some(_), _, _) => {
            return Err(Error::Config(format!(
                "{}: give either an exit state or a vessel pressure, not both",
                origin.display()
            )))
        }
    };
    if !e.map.contains_key("vessel_pressure_bar") && e.map.contains_key("vessel_temperature_k") {
        let msg = format!("{}: vessel_temperature_k ignored for a subsonic release", origin.display());
        warn!("{msg}");
        warnings.push(msg);
    }
    let (lo, hi) = config.eval_range;
    config.eval_range = (e.number_or("eval_start_over_d", lo)?, e.number_or("eval_end_over_d", hi)?);
    config.step_over_d = e.number_or("step_over_d", config.step_over_d)?;
    config.validate()?;
    Ok(ParsedScenario { config, warnings })
}
