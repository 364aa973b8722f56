//! Instance file formats.
//!
//! Matrix text: first line `n`, then `n` lines of `n` characters from `{0,1}`;
//! character `j` of row `i` is `1` iff column `j` is allowed for row `i`.
//! PRP JSON: `{"n": int, "allowed": [[int, …], …]}`, 0-indexed.
//! PDC JSON: `{"permutations": [{"name", "variables", "domain"}],
//! "constraints": [[{"var", "val"}, …], …]}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use permlll_core::pdc::{ConstraintSpec, SetSpec, Value};
use permlll_core::{Assignment, PdcError, PdcFormula, PrpError, PrpInstance};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Matrix { line: usize, msg: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Prp(#[from] PrpError),
    #[error(transparent)]
    Pdc(#[from] PdcError),
}

pub fn parse_matrix(text: &str) -> Result<PrpInstance, FormatError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (l0, first) = lines.next().ok_or(FormatError::Matrix {
        line: 1,
        msg: "empty input".into(),
    })?;
    let n: usize = first.trim().parse().map_err(|_| FormatError::Matrix {
        line: l0 + 1,
        msg: format!("expected n, found {first:?}"),
    })?;
    let mut rows = Vec::with_capacity(n);
    for (idx, line) in lines {
        let row: Vec<bool> = line
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(FormatError::Matrix {
                    line: idx + 1,
                    msg: format!("unexpected character {c:?}"),
                }),
            })
            .collect::<Result<_, _>>()?;
        if row.len() != n {
            return Err(FormatError::Matrix {
                line: idx + 1,
                msg: format!("expected {n} columns, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(FormatError::Matrix {
            line: l0 + 1,
            msg: format!("expected {n} rows, found {}", rows.len()),
        });
    }
    Ok(PrpInstance::from_matrix(&rows)?)
}

pub fn write_matrix(inst: &PrpInstance) -> String {
    let mut out = format!("{}\n", inst.n());
    for row in inst.to_matrix() {
        out.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

pub fn parse_prp_json(text: &str) -> Result<PrpInstance, FormatError> {
    Ok(serde_json::from_str(text)?)
}

pub fn write_prp_json(inst: &PrpInstance) -> String {
    serde_json::to_string(inst).expect("instance serializes")
}

/// JSON when the first non-blank character is `{`, matrix text otherwise.
pub fn parse_prp(text: &str) -> Result<PrpInstance, FormatError> {
    if text.trim_start().starts_with('{') {
        parse_prp_json(text)
    } else {
        parse_matrix(text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermJson {
    pub name: String,
    pub variables: Vec<String>,
    pub domain: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteralJson {
    pub var: String,
    pub val: Value,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PdcJson {
    pub permutations: Vec<PermJson>,
    pub constraints: Vec<Vec<LiteralJson>>,
}

impl PdcJson {
    pub fn from_formula(f: &PdcFormula) -> Self {
        PdcJson {
            permutations: f
                .sets()
                .iter()
                .map(|s| PermJson {
                    name: s.name.clone(),
                    variables: s.vars.iter().map(|&v| f.var_name(v).to_string()).collect(),
                    domain: s.domain.clone(),
                })
                .collect(),
            constraints: f
                .constraints()
                .iter()
                .map(|c| {
                    c.literals()
                        .iter()
                        .map(|l| LiteralJson {
                            var: f.var_name(l.var).to_string(),
                            val: l.value,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn into_formula(self) -> Result<PdcFormula, PdcError> {
        let sets: Vec<SetSpec> = self
            .permutations
            .into_iter()
            .map(|p| (p.name, p.variables, p.domain))
            .collect();
        let cs: Vec<ConstraintSpec> = self
            .constraints
            .into_iter()
            .map(|c| c.into_iter().map(|l| (l.var, l.val)).collect())
            .collect();
        PdcFormula::new(sets, cs)
    }
}

pub fn parse_pdc(text: &str) -> Result<PdcFormula, FormatError> {
    let raw: PdcJson = serde_json::from_str(text)?;
    Ok(raw.into_formula()?)
}

pub fn write_pdc(f: &PdcFormula) -> String {
    serde_json::to_string(&PdcJson::from_formula(f)).expect("formula serializes")
}

/// `variable name → value` for every assigned variable of `f`.
pub fn assignment_json(f: &PdcFormula, a: &Assignment) -> BTreeMap<String, Value> {
    f.variables()
        .into_iter()
        .filter_map(|v| a.get(v).map(|c| (f.var_name(v).to_string(), c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let inst = parse_matrix("3\n110\n011\n111\n").unwrap();
        assert_eq!(inst.allowed(0), &[0, 1]);
        assert_eq!(parse_matrix(&write_matrix(&inst)).unwrap(), inst);
        assert_eq!(parse_prp(&write_prp_json(&inst)).unwrap(), inst);
    }

    #[test]
    fn matrix_errors() {
        assert!(parse_matrix("").is_err());
        assert!(parse_matrix("2\n11\n1\n").is_err());
        assert!(parse_matrix("2\n11\n").is_err());
        assert!(parse_matrix("2\n1x\n11\n").is_err());
        assert!(parse_matrix("2\n11\n00\n").is_err());
    }

    #[test]
    fn pdc_round_trip() {
        let text = r#"{"permutations":[{"name":"A","variables":["a","b"],"domain":[1,0]}],
                       "constraints":[[{"var":"a","val":1}]]}"#;
        let f = parse_pdc(text).unwrap();
        assert_eq!(f.set(0).domain, vec![0, 1]);
        assert_eq!(parse_pdc(&write_pdc(&f)).unwrap(), f);
        assert!(parse_pdc(r#"{"permutations":[]}"#).is_err());
    }
}
