//! Sweep grids: `start:stop:step` (stop included) or a comma list.

use crate::error::CliError;

const MAX_POINTS: usize = 100_000;

pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(CliError::Config("empty grid".into()));
    }
    let values = if text.contains(':') {
        parse_range(text)?
    } else {
        text.split(',')
            .map(|s| parse_number(s.trim(), text))
            .collect::<Result<_, _>>()?
    };
    if values.is_empty() {
        return Err(CliError::Config(format!("grid `{text}` has no points")));
    }
    Ok(values)
}

fn parse_range(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    let [start, stop, step] = parts[..] else {
        return Err(CliError::Config(format!("grid `{text}` must be start:stop:step")));
    };
    let (start, stop, step) = (
        parse_number(start, text)?,
        parse_number(stop, text)?,
        parse_number(step, text)?,
    );
    if step.is_nan() || step <= 0.0 {
        return Err(CliError::Config(format!("grid `{text}`: step must be positive")));
    }
    if stop < start {
        return Err(CliError::Config(format!("grid `{text}`: stop is below start")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > MAX_POINTS {
        return Err(CliError::Config(format!(
            "grid `{text}` has more than {MAX_POINTS} points"
        )));
    }
    // Each point is computed from its index and snapped to 1e-12, so
    // `0:1:0.1` yields 0.3 rather than 0.30000000000000004.
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

fn parse_number(s: &str, grid: &str) -> Result<f64, CliError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("grid `{grid}`: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::Config(format!("grid `{grid}`: `{s}` is not finite")));
    }
    Ok(v)
}
