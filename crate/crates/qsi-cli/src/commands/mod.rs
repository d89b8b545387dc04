pub mod calibrate;
pub mod compare_cdi;
pub mod reconstruct;
pub mod simulate;
pub mod snr_curve;

use qsi::error::{Error, Result};

/// Parses `a,b,c` or `log:min:max:count` into a numeric grid.
pub fn parse_value_grid(spec: &str) -> Result<Vec<f64>> {
    if let Some(rest) = spec.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!(
                "grid `{spec}`: expected log:min:max:count"
            )));
        }
        let min: f64 = parse_grid_num(parts[0])?;
        let max: f64 = parse_grid_num(parts[1])?;
        let count: usize = parts[2]
            .parse()
            .map_err(|_| Error::Config(format!("grid `{spec}`: bad count")))?;
        if !(min > 0.0) || !(max > min) || count < 2 {
            return Err(Error::Config(format!(
                "grid `{spec}`: need 0 < min < max and count >= 2"
            )));
        }
        let (lmin, lmax) = (min.ln(), max.ln());
        return Ok((0..count)
            .map(|k| (lmin + (lmax - lmin) * k as f64 / (count - 1) as f64).exp())
            .collect());
    }
    let values: Vec<f64> = spec
        .split(',')
        .map(|p| parse_grid_num(p.trim()))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config("empty value grid".into()));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "value grid must be strictly increasing".into(),
        ));
    }
    Ok(values)
}

fn parse_grid_num(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Config(format!("cannot parse `{s}` as a number")))
}

/// Formats a float for RESULT lines: compact but unambiguous.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}
