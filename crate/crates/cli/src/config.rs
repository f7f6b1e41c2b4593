//! Run configuration: a flat `key = value` text format whose keys mirror the
//! [`RunConfig`] field names exactly. Unknown and duplicate keys are rejected
//! so a typo cannot silently fall back to a default.

use std::path::Path;

use mftd_core::hf::HfObjectiveKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Full description of one pipeline run.
///
/// Defaults reproduce the reference operating point: 100 seeding samples,
/// two image channels, up to 100 iterations, mutation every 5 iterations
/// (10 mutants over 5 stratified parameter draws), hypervolume tolerance
/// 1e-5, and 256 crossover samples per iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Exact objective: `stiffness` (compliance) or `stress` (peak von Mises).
    pub mode: HfObjectiveKind,
    /// Design grid edge length in elements (square grid).
    pub grid: usize,
    /// Number of low-fidelity seeding runs.
    pub n_lf_sd: usize,
    /// Image channels carried per sample (layout + thickness field).
    pub channels: usize,
    /// Maximum number of design-loop iterations.
    pub n_max: usize,
    /// Number of stratified parameter draws shared by one mutation round.
    pub n_mut_sd: usize,
    /// Number of mutants generated per mutation round.
    pub n_mut: usize,
    /// Mutation cadence: mutate on iterations divisible by this.
    pub n_mut_int: usize,
    /// Relative hypervolume change below which the run is converged.
    pub eps_hv: f64,
    /// Number of crossover candidates decoded per iteration.
    pub n_vae: usize,
    /// Lower bound of the volume-fraction sampling range.
    pub v_max_min: f64,
    /// Upper bound of the volume-fraction sampling range.
    pub v_max_max: f64,
    /// Lower bound of the reinforcement thickness range.
    pub h_min: f64,
    /// Upper bound of the reinforcement thickness range.
    pub h_max: f64,
    /// Hypervolume reference point, first objective. When absent (together
    /// with `r_hv_j2`) the reference is calibrated from the initial front.
    pub r_hv_j1: Option<f64>,
    /// Hypervolume reference point, second objective.
    pub r_hv_j2: Option<f64>,
    /// Single RNG seed; every stochastic stage derives its stream from it.
    pub seed: u64,
    /// Worker threads for parallel stages (0 = library default).
    pub threads: usize,
    /// Output directory for artifacts and checkpoints.
    pub out: String,
}

/// Volume-fraction sampling range used when the config does not set one:
/// wider for the stiffness objective, narrower for the stress objective.
pub fn default_v_max_range(mode: HfObjectiveKind) -> (f64, f64) {
    match mode {
        HfObjectiveKind::Stiffness => (0.2, 0.8),
        HfObjectiveKind::Stress => (0.2, 0.5),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        let mode = HfObjectiveKind::Stiffness;
        let (v_lo, v_hi) = default_v_max_range(mode);
        Self {
            mode,
            grid: 64,
            n_lf_sd: 100,
            channels: 2,
            n_max: 100,
            n_mut_sd: 5,
            n_mut: 10,
            n_mut_int: 5,
            eps_hv: 1e-5,
            n_vae: 256,
            v_max_min: v_lo,
            v_max_max: v_hi,
            h_min: 0.01,
            h_max: 0.1,
            r_hv_j1: None,
            r_hv_j2: None,
            seed: 0,
            threads: 0,
            out: String::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| CliError::config(format!("invalid value for `{key}`: `{value}`")))
}

fn parse_mode(value: &str) -> Result<HfObjectiveKind, CliError> {
    match value {
        "stiffness" => Ok(HfObjectiveKind::Stiffness),
        "stress" => Ok(HfObjectiveKind::Stress),
        other => Err(CliError::config(format!(
            "invalid value for `mode`: `{other}` (expected `stiffness` or `stress`)"
        ))),
    }
}

fn mode_name(mode: HfObjectiveKind) -> &'static str {
    match mode {
        HfObjectiveKind::Stiffness => "stiffness",
        HfObjectiveKind::Stress => "stress",
    }
}

impl RunConfig {
    /// Parses the flat text format. Lines are `key = value`; blank lines and
    /// `#` comments are ignored. Every key must be a `RunConfig` field name,
    /// and each may appear at most once.
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut v_range_set = (false, false);

        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if value.is_empty() {
                return Err(CliError::config(format!(
                    "line {}: empty value for `{key}`",
                    lineno + 1
                )));
            }
            if seen.iter().any(|k| k == key) {
                return Err(CliError::config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
            seen.push(key.to_string());

            match key {
                "mode" => config.mode = parse_mode(value)?,
                "grid" => config.grid = parse_num(key, value)?,
                "n_lf_sd" => config.n_lf_sd = parse_num(key, value)?,
                "channels" => config.channels = parse_num(key, value)?,
                "n_max" => config.n_max = parse_num(key, value)?,
                "n_mut_sd" => config.n_mut_sd = parse_num(key, value)?,
                "n_mut" => config.n_mut = parse_num(key, value)?,
                "n_mut_int" => config.n_mut_int = parse_num(key, value)?,
                "eps_hv" => config.eps_hv = parse_num(key, value)?,
                "n_vae" => config.n_vae = parse_num(key, value)?,
                "v_max_min" => {
                    config.v_max_min = parse_num(key, value)?;
                    v_range_set.0 = true;
                }
                "v_max_max" => {
                    config.v_max_max = parse_num(key, value)?;
                    v_range_set.1 = true;
                }
                "h_min" => config.h_min = parse_num(key, value)?,
                "h_max" => config.h_max = parse_num(key, value)?,
                "r_hv_j1" => config.r_hv_j1 = Some(parse_num(key, value)?),
                "r_hv_j2" => config.r_hv_j2 = Some(parse_num(key, value)?),
                "seed" => config.seed = parse_num(key, value)?,
                "threads" => config.threads = parse_num(key, value)?,
                "out" => config.out = value.to_string(),
                other => {
                    return Err(CliError::config(format!(
                        "line {}: unknown key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }

        // The volume-fraction default depends on the objective, so resolve
        // whichever bound the file left unset after the mode is known.
        let (v_lo, v_hi) = default_v_max_range(config.mode);
        if !v_range_set.0 {
            config.v_max_min = v_lo;
        }
        if !v_range_set.1 {
            config.v_max_max = v_hi;
        }

        config.validate()?;
        Ok(config)
    }

    /// Reads and parses a configuration file.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse_str(&text)
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: &str| Err(CliError::config(msg.to_string()));
        if self.grid < 2 {
            return fail("grid must be at least 2");
        }
        if self.n_lf_sd == 0 {
            return fail("n_lf_sd must be positive");
        }
        if self.channels != 2 {
            return fail("channels must be 2 (layout + thickness field)");
        }
        if self.n_mut_int == 0 {
            return fail("n_mut_int must be positive");
        }
        if self.n_mut_sd == 0 || self.n_mut == 0 {
            return fail("n_mut and n_mut_sd must be positive");
        }
        if !(self.eps_hv > 0.0) {
            return fail("eps_hv must be positive");
        }
        if self.n_vae == 0 {
            return fail("n_vae must be positive");
        }
        if !(0.0 < self.v_max_min && self.v_max_min < self.v_max_max && self.v_max_max <= 1.0) {
            return fail("volume-fraction range must satisfy 0 < v_max_min < v_max_max <= 1");
        }
        if !(0.0 < self.h_min && self.h_min < self.h_max) {
            return fail("thickness range must satisfy 0 < h_min < h_max");
        }
        match (self.r_hv_j1, self.r_hv_j2) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                if !(a > 0.0 && b > 0.0) {
                    return fail("hypervolume reference components must be positive");
                }
            }
            _ => return fail("set both r_hv_j1 and r_hv_j2 or neither"),
        }
        if self.out.is_empty() {
            return fail("out must not be empty");
        }
        Ok(())
    }

    /// Serializes back to the flat text format (the manifest embeds this).
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("mode".into(), mode_name(self.mode).into()),
            ("grid".into(), self.grid.to_string()),
            ("n_lf_sd".into(), self.n_lf_sd.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("n_max".into(), self.n_max.to_string()),
            ("n_mut_sd".into(), self.n_mut_sd.to_string()),
            ("n_mut".into(), self.n_mut.to_string()),
            ("n_mut_int".into(), self.n_mut_int.to_string()),
            ("eps_hv".into(), self.eps_hv.to_string()),
            ("n_vae".into(), self.n_vae.to_string()),
            ("v_max_min".into(), self.v_max_min.to_string()),
            ("v_max_max".into(), self.v_max_max.to_string()),
            ("h_min".into(), self.h_min.to_string()),
            ("h_max".into(), self.h_max.to_string()),
        ];
        if let (Some(a), Some(b)) = (self.r_hv_j1, self.r_hv_j2) {
            kv.push(("r_hv_j1".into(), a.to_string()));
            kv.push(("r_hv_j2".into(), b.to_string()));
        }
        kv.push(("seed".into(), self.seed.to_string()));
        kv.push(("threads".into(), self.threads.to_string()));
        kv.push(("out".into(), self.out.clone()));
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_yields_defaults() {
        let config = RunConfig::parse_str("# nothing but a comment\n\n").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.n_lf_sd, 100);
        assert_eq!(config.n_vae, 256);
        assert_eq!(config.eps_hv, 1e-5);
        assert_eq!(config.n_mut_int, 5);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::parse_str("grid = 16\nn_lfsd = 4\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unknown key `n_lfsd`"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = RunConfig::parse_str("grid = 16\ngrid = 32\n").unwrap_err();
        assert!(err.to_string().contains("duplicate key"), "{err}");
    }

    #[test]
    fn malformed_line_and_bad_number_are_rejected() {
        assert!(RunConfig::parse_str("grid 16\n").is_err());
        assert!(RunConfig::parse_str("grid = sixteen\n").is_err());
        assert!(RunConfig::parse_str("mode = rigid\n").is_err());
        assert!(RunConfig::parse_str("grid =   # comment ate the value\n").is_err());
    }

    #[test]
    fn volume_range_default_follows_mode() {
        let stiff = RunConfig::parse_str("mode = stiffness\n").unwrap();
        assert_eq!((stiff.v_max_min, stiff.v_max_max), (0.2, 0.8));
        let stress = RunConfig::parse_str("mode = stress\n").unwrap();
        assert_eq!((stress.v_max_min, stress.v_max_max), (0.2, 0.5));
        // ...and an explicit bound wins regardless of key order.
        let custom = RunConfig::parse_str("v_max_max = 0.6\nmode = stress\n").unwrap();
        assert_eq!((custom.v_max_min, custom.v_max_max), (0.2, 0.6));
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(RunConfig::parse_str("channels = 3\n").is_err());
        assert!(RunConfig::parse_str("h_min = 0.2\nh_max = 0.1\n").is_err());
        assert!(RunConfig::parse_str("r_hv_j1 = 10\n").is_err());
        assert!(RunConfig::parse_str("eps_hv = 0\n").is_err());
        assert!(RunConfig::parse_str("v_max_min = 0\n").is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let text = "mode = stress\ngrid = 16\nseed = 9\nr_hv_j1 = 5\nr_hv_j2 = 2.5\nout = runs/demo\n";
        let config = RunConfig::parse_str(text).unwrap();
        let echoed: String = config
            .to_key_values()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let reparsed = RunConfig::parse_str(&echoed).unwrap();
        assert_eq!(config, reparsed);
    }
}
