use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::system::{Scheme, SystemConfig};

const SECTIONS: [&str; 4] = ["system", "delays", "optimizer", "sweep"];

/// Canonical key name and owning section for every accepted key.
fn canonical(key: &str) -> Option<(&'static str, &'static str)> {
    let k = key.to_ascii_lowercase();
    Some(match k.as_str() {
        "topology" => ("system", "topology"),
        "n_r" => ("system", "n_r"),
        "n" | "n_ant" => ("system", "n_ant"),
        "t" | "t_len" => ("system", "t_len"),
        "dest_antennas" => ("system", "dest_antennas"),
        "direct_link" => ("system", "direct_link"),
        "relay_strategy" => ("system", "relay_strategy"),
        "scheme" | "schemes" => ("system", "schemes"),
        "p_r" => ("system", "p_r"),
        "sigma_s2" => ("system", "sigma_s2"),
        "first_hop_snr_db" => ("system", "first_hop_snr_db"),
        "delays" | "profile" => ("delays", "delays"),
        "enabled" => ("optimizer", "enabled"),
        "lambda" => ("optimizer", "lambda"),
        "delta" => ("optimizer", "delta"),
        "warmup_blocks" => ("optimizer", "warmup_blocks"),
        "snr_grid_db" | "snr_db" => ("sweep", "snr_grid_db"),
        "trials_per_point" => ("sweep", "trials_per_point"),
        "min_errors" => ("sweep", "min_errors"),
        "blocks_per_frame" => ("sweep", "blocks_per_frame"),
        "seed" => ("sweep", "seed"),
        _ => return None,
    })
}

fn parse_value<T: FromStr>(field: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse::<T>()
        .map_err(|e| config_err(field, format!("cannot parse `{}`: {e}", value.trim())))
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(config_err(
            field,
            format!("expected true or false, got `{other}`"),
        )),
    }
}

fn parse_list<T: FromStr>(field: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    let inner = value.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split([',', ';'])
        .map(|v| parse_value(field, v))
        .collect()
}

fn set_field(cfg: &mut SystemConfig, field: &str, value: &str) -> Result<()> {
    match field {
        "topology" => cfg.topology = parse_value(field, value)?,
        "n_r" => cfg.n_r = parse_value(field, value)?,
        "n_ant" => cfg.n_ant = parse_value(field, value)?,
        "t_len" => cfg.t_len = parse_value(field, value)?,
        "dest_antennas" => {
            cfg.dest_antennas = match value.trim() {
                "" | "auto" => None,
                v => Some(parse_value(field, v)?),
            }
        }
        "direct_link" => cfg.direct_link = parse_bool(field, value)?,
        "relay_strategy" => cfg.relay_strategy = parse_value(field, value)?,
        "schemes" => cfg.schemes = parse_list::<Scheme>(field, value)?,
        "p_r" => cfg.p_r = parse_value(field, value)?,
        "sigma_s2" => cfg.sigma_s2 = parse_value(field, value)?,
        "first_hop_snr_db" => {
            cfg.first_hop_snr_db = match value.trim() {
                "" | "none" => None,
                v => Some(parse_value(field, v)?),
            }
        }
        "delays" => cfg.delays = parse_list(field, value)?,
        "enabled" => cfg.optimizer.enabled = parse_bool(field, value)?,
        "lambda" => cfg.optimizer.lambda = parse_value(field, value)?,
        "delta" => cfg.optimizer.delta = parse_value(field, value)?,
        "warmup_blocks" => cfg.optimizer.warmup_blocks = parse_value(field, value)?,
        "snr_grid_db" => cfg.snr_grid_db = parse_list(field, value)?,
        "trials_per_point" => cfg.trials_per_point = parse_value(field, value)?,
        "min_errors" => cfg.min_errors = parse_value(field, value)?,
        "blocks_per_frame" => cfg.blocks_per_frame = parse_value(field, value)?,
        "seed" => cfg.seed = parse_value(field, value)?,
        _ => unreachable!("canonical() only yields known fields"),
    }
    Ok(())
}

fn parse_raw(text: &str) -> Result<SystemConfig> {
    let mut cfg = SystemConfig::default();
    let mut section: Option<&str> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        // `;` doubles as a list separator, so it only starts a comment at the
        // beginning of a line.
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_ascii_lowercase();
            section = Some(
                SECTIONS
                    .iter()
                    .find(|s| **s == name)
                    .copied()
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        message: format!("unknown section `{name}`"),
                    })?,
            );
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim();
        let (owner, field) = canonical(key).ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("unknown key `{key}`"),
        })?;
        match section {
            Some(s) if s == owner => {}
            Some(s) => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("key `{key}` belongs in [{owner}], not [{s}]"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("key `{key}` outside of any section"),
                })
            }
        }
        set_field(&mut cfg, field, value).map_err(|e| match e {
            Error::Config { field, reason } => Error::Parse {
                line: line_no,
                message: format!("`{field}`: {reason}"),
            },
            other => other,
        })?;
    }
    Ok(cfg)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<SystemConfig> {
    parse_raw(text)?.validate()
}

/// Applies one `key=value` or `section.key=value` override.
pub fn apply_override(cfg: &mut SystemConfig, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| config_err(spec, "override must look like key=value"))?;
    let key = key.trim();
    let (section, name) = match key.split_once('.') {
        Some((s, k)) => (Some(s.to_ascii_lowercase()), k),
        None => (None, key),
    };
    let (owner, field) =
        canonical(name).ok_or_else(|| config_err(key, format!("unknown key `{name}`")))?;
    if let Some(s) = section {
        if s != owner {
            return Err(config_err(key, format!("key belongs in [{owner}]")));
        }
    }
    set_field(cfg, field, value)
}

/// Parses a document, applies overrides in order, then validates.
pub fn parse_config_with_overrides(text: &str, overrides: &[String]) -> Result<SystemConfig> {
    let mut cfg = parse_raw(text)?;
    for o in overrides {
        apply_override(&mut cfg, o)?;
    }
    cfg.validate()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// Writes a configuration back in the file format; `parse_config` reads it
/// back to an equal value.
pub fn render_config(cfg: &SystemConfig) -> String {
    let mut s = String::new();
    s += "[system]\n";
    s += &format!("topology = {}\n", cfg.topology);
    s += &format!("n_r = {}\n", cfg.n_r);
    s += &format!("N = {}\n", cfg.n_ant);
    s += &format!("T = {}\n", cfg.t_len);
    if let Some(n) = cfg.dest_antennas {
        s += &format!("dest_antennas = {n}\n");
    }
    s += &format!("direct_link = {}\n", cfg.direct_link);
    s += &format!("relay_strategy = {}\n", cfg.relay_strategy);
    s += &format!("schemes = {}\n", join(&cfg.schemes));
    s += &format!("P_R = {:?}\n", cfg.p_r);
    s += &format!("sigma_s2 = {:?}\n", cfg.sigma_s2);
    if let Some(f) = cfg.first_hop_snr_db {
        s += &format!("first_hop_snr_db = {f:?}\n");
    }
    s += "\n[delays]\n";
    s += &format!("delays = {}\n", join(&cfg.delays));
    s += "\n[optimizer]\n";
    s += &format!("enabled = {}\n", cfg.optimizer.enabled);
    s += &format!("lambda = {:?}\n", cfg.optimizer.lambda);
    s += &format!("delta = {:?}\n", cfg.optimizer.delta);
    s += &format!("warmup_blocks = {}\n", cfg.optimizer.warmup_blocks);
    s += "\n[sweep]\n";
    let grid: Vec<String> = cfg.snr_grid_db.iter().map(|x| format!("{x:?}")).collect();
    s += &format!("snr_grid_db = {}\n", grid.join(","));
    s += &format!("trials_per_point = {}\n", cfg.trials_per_point);
    s += &format!("min_errors = {}\n", cfg.min_errors);
    s += &format!("blocks_per_frame = {}\n", cfg.blocks_per_frame);
    s += &format!("seed = {}\n", cfg.seed);
    s
}
