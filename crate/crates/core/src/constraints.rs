//! Narrowings of control-point domains attached to planned runs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::coverage::{ControlPointDecl, ControlValue, Domain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Narrowing {
    Range { lo: f64, hi: f64 },
    Values(Vec<String>),
}

/// Optional narrowing per control point; absent points are unconstrained.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConstraintSet(pub BTreeMap<String, Narrowing>);

impl ConstraintSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Narrowing> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, narrowing: Narrowing) {
        self.0.insert(name.into(), narrowing);
    }

    /// Point constraints reproducing exactly the recorded values.
    pub fn pin(controls: &BTreeMap<String, ControlValue>) -> Self {
        Self(
            controls
                .iter()
                .map(|(name, value)| {
                    let n = match value {
                        ControlValue::Number(v) => Narrowing::Range { lo: *v, hi: *v },
                        ControlValue::Label(s) => Narrowing::Values(vec![s.clone()]),
                    };
                    (name.clone(), n)
                })
                .collect(),
        )
    }

    /// Every narrowing must name a declared point, match its kind, be
    /// non-empty and lie inside the declared domain.
    pub fn validate(&self, declarations: &[ControlPointDecl]) -> Result<()> {
        for (name, narrowing) in &self.0 {
            let decl = declarations
                .iter()
                .find(|d| &d.name == name)
                .ok_or_else(|| Error::Validation(format!("constraint on undeclared control `{name}`")))?;
            let fail = |what: &str| Error::Validation(format!("constraint on `{name}` {what}"));
            match (&decl.domain, narrowing) {
                (Domain::NumericRange { lo, hi }, Narrowing::Range { lo: a, hi: b }) => {
                    if !(a.is_finite() && b.is_finite() && a <= b) {
                        return Err(fail("is an empty or non-finite interval"));
                    }
                    if a < lo || b > hi {
                        return Err(fail("leaves the declared range"));
                    }
                }
                (Domain::Categorical { values }, Narrowing::Values(subset)) => {
                    if subset.is_empty() {
                        return Err(fail("is an empty value set"));
                    }
                    if let Some(v) = subset.iter().find(|v| !values.contains(v)) {
                        return Err(fail(&format!("uses undeclared value `{v}`")));
                    }
                }
                _ => return Err(fail("does not match the control point kind")),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decls() -> Vec<ControlPointDecl> {
        vec![
            ControlPointDecl::numeric("x", 0.0, 1.0),
            ControlPointDecl::categorical("mode", ["A", "B"]),
        ]
    }

    #[test]
    fn pinned_values_validate() {
        let controls = BTreeMap::from([
            ("x".to_string(), ControlValue::Number(0.25)),
            ("mode".to_string(), ControlValue::Label("B".into())),
        ]);
        let pinned = ConstraintSet::pin(&controls);
        pinned.validate(&decls()).unwrap();
        assert_eq!(pinned.get("x"), Some(&Narrowing::Range { lo: 0.25, hi: 0.25 }));
    }

    #[test]
    fn rejects_unsound_narrowings() {
        let cases = [
            ("x", Narrowing::Range { lo: 0.5, hi: 1.5 }),
            ("x", Narrowing::Range { lo: 0.6, hi: 0.5 }),
            ("x", Narrowing::Values(vec!["A".into()])),
            ("mode", Narrowing::Values(vec![])),
            ("mode", Narrowing::Values(vec!["Z".into()])),
            ("nope", Narrowing::Range { lo: 0.0, hi: 0.1 }),
        ];
        for (name, n) in cases {
            let mut set = ConstraintSet::new();
            set.insert(name, n.clone());
            assert!(set.validate(&decls()).is_err(), "{name} {n:?}");
        }
    }
}
