//! Fit-report documents: flat key-value text (valid TOML) with fitted
//! values, their errors, configured ground truth, and diagnostic notes.
//! Floats carry 17 significant digits so documents round-trip exactly.

pub use rsm_core::io::format_sig;

use crate::error::CliError;

fn toml_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format_sig(x)
    }
}

fn toml_str(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

/// One fit-report document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub kind: String,
    /// Input files the fit consumed, relative to the run directory.
    pub source: Vec<String>,
    /// Free-form diagnostics (fit flags, provenance of derived inputs).
    pub notes: Vec<String>,
    pub values: Vec<(String, f64)>,
    pub errors: Vec<(String, f64)>,
    pub truth: Vec<(String, f64)>,
}

impl FitReport {
    pub fn new(kind: &str) -> Self {
        FitReport {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn source(&mut self, path: &str) -> &mut Self {
        self.source.push(path.to_string());
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn value(&mut self, name: &str, v: f64) -> &mut Self {
        self.values.push((name.to_string(), v));
        self
    }

    pub fn error(&mut self, name: &str, v: f64) -> &mut Self {
        self.errors.push((name.to_string(), v));
        self
    }

    pub fn truth(&mut self, name: &str, v: f64) -> &mut Self {
        self.truth.push((name.to_string(), v));
        self
    }

    pub fn get_value(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn get_error(&self, name: &str) -> Option<f64> {
        self.errors.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn get_truth(&self, name: &str) -> Option<f64> {
        self.truth.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kind = {}\n", toml_str(&self.kind)));
        let sources: Vec<String> = self.source.iter().map(|s| toml_str(s)).collect();
        out.push_str(&format!("source = [{}]\n", sources.join(", ")));
        let notes: Vec<String> = self.notes.iter().map(|s| toml_str(s)).collect();
        out.push_str(&format!("notes = [{}]\n", notes.join(", ")));
        for (section, entries) in [
            ("values", &self.values),
            ("errors", &self.errors),
            ("truth", &self.truth),
        ] {
            out.push_str(&format!("\n[{section}]\n"));
            for (name, v) in entries {
                out.push_str(&format!("{name} = {}\n", toml_float(*v)));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("fit report parse error: {e}")))?;
        let kind = table
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| CliError::Validation("fit report lacks a kind".into()))?
            .to_string();
        let str_list = |key: &str| -> Vec<String> {
            table
                .get(key)
                .and_then(|v| v.as_array())
                .map(|a| {
                    a.iter()
                        .filter_map(|v| v.as_str().map(str::to_string))
                        .collect()
                })
                .unwrap_or_default()
        };
        let num_section = |key: &str| -> Result<Vec<(String, f64)>, CliError> {
            let Some(section) = table.get(key) else {
                return Ok(Vec::new());
            };
            let section = section.as_table().ok_or_else(|| {
                CliError::Validation(format!("fit report section {key} is not a table"))
            })?;
            section
                .iter()
                .map(|(name, v)| {
                    let x = v
                        .as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .ok_or_else(|| {
                            CliError::Validation(format!(
                                "fit report entry {key}.{name} is not a number"
                            ))
                        })?;
                    Ok((name.clone(), x))
                })
                .collect()
        };
        Ok(FitReport {
            kind,
            source: str_list("source"),
            notes: str_list("notes"),
            values: num_section("values")?,
            errors: num_section("errors")?,
            truth: num_section("truth")?,
        })
    }
}
