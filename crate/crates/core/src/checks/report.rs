//! The verdict type shared by every checker.

use serde::{Deserialize, Serialize};

/// A standing assumption and whether it held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stamp {
    pub name: String,
    pub ok: bool,
}

impl Stamp {
    pub fn new(name: impl Into<String>, ok: bool) -> Stamp {
        Stamp { name: name.into(), ok }
    }
}

/// Where a margin was attained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub time: f64,
    /// Unit direction, empty for scalar quantities.
    pub direction: Vec<f64>,
    pub label: String,
}

/// One inequality inside a check. `margin` is the amount by which the
/// inequality holds; it passes when `margin ≥ −tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub margin: f64,
    pub tolerance: f64,
    pub witness: Option<Witness>,
}

/// Machine-readable verdict of one checker.
///
/// `worst_margin` is the smallest component margin after rescaling each by
/// `tolerance / component.tolerance`, so that
/// `pass ⇔ worst_margin ≥ −tolerance ∧ hypotheses_ok`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub hypotheses_ok: bool,
    pub hypotheses: Vec<Stamp>,
    pub pass: bool,
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub tolerance: f64,
    pub notes: Vec<String>,
    pub seed: Option<u64>,
    pub components: Vec<Component>,
}

/// Maps infinities to `±f64::MAX` and NaN to `−f64::MAX` so reports stay
/// valid JSON and NaN never passes.
pub fn clamp_finite(x: f64) -> f64 {
    if x.is_nan() {
        -f64::MAX
    } else {
        x.clamp(-f64::MAX, f64::MAX)
    }
}

/// Component margin expressed against the report tolerance.
fn rescaled(c: &Component, tolerance: f64) -> f64 {
    let m = clamp_finite(c.margin);
    if c.tolerance > 0.0 && tolerance > 0.0 {
        clamp_finite(m * (tolerance / c.tolerance))
    } else {
        // no room to rescale into: shift instead
        clamp_finite(m + (c.tolerance - tolerance))
    }
}

impl CheckReport {
    pub fn new(name: impl Into<String>, tolerance: f64) -> CheckReport {
        CheckReport {
            name: name.into(),
            hypotheses_ok: true,
            hypotheses: Vec::new(),
            pass: true,
            worst_margin: f64::MAX,
            witness: None,
            tolerance,
            notes: Vec::new(),
            seed: None,
            components: Vec::new(),
        }
    }

    /// A report that refuses to give a verdict because a standing
    /// assumption is missing.
    pub fn refused(name: impl Into<String>, tolerance: f64, stamps: Vec<Stamp>, reason: impl Into<String>) -> CheckReport {
        let mut r = CheckReport::new(name, tolerance);
        r.hypotheses = stamps;
        r.hypotheses_ok = false;
        r.notes.push(reason.into());
        r.finish()
    }

    pub fn with_stamps(mut self, stamps: Vec<Stamp>) -> CheckReport {
        self.hypotheses_ok = stamps.iter().all(|s| s.ok);
        self.hypotheses = stamps;
        self.finish()
    }

    pub fn with_seed(mut self, seed: u64) -> CheckReport {
        self.seed = Some(seed);
        self
    }

    pub fn push(&mut self, c: Component) {
        self.components.push(c);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    /// Appends the components and notes of `other`, prefixing names.
    pub fn absorb(&mut self, prefix: &str, other: CheckReport) {
        for mut c in other.components {
            c.name = format!("{prefix}: {}", c.name);
            self.components.push(c);
        }
        for n in other.notes {
            self.notes.push(format!("{prefix}: {n}"));
        }
        if !other.hypotheses_ok {
            self.hypotheses_ok = false;
        }
    }

    /// Recomputes the aggregate fields from the components.
    pub fn finish(mut self) -> CheckReport {
        let mut worst = f64::MAX;
        let mut witness = None;
        for c in self.components.iter_mut() {
            c.margin = clamp_finite(c.margin);
            c.tolerance = clamp_finite(c.tolerance);
            let shifted = rescaled(c, self.tolerance);
            if shifted < worst || witness.is_none() && shifted == worst {
                worst = shifted;
                witness = c.witness.clone();
            }
        }
        self.worst_margin = worst;
        self.witness = witness;
        self.pass = self.hypotheses_ok && worst >= -self.tolerance;
        self
    }

    /// Component with the smallest shifted margin.
    pub fn worst_component(&self) -> Option<&Component> {
        self.components.iter().min_by(|a, b| {
            let sa = rescaled(a, self.tolerance);
            let sb = rescaled(b, self.tolerance);
            sa.partial_cmp(&sb).unwrap_or(std::cmp::Ordering::Equal)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pass_rule_and_clamping() {
        let mut r = CheckReport::new("x", 1e-6);
        r.push(Component {
            name: "a".into(),
            margin: -5e-7,
            tolerance: 1e-6,
            witness: None,
        });
        r.push(Component {
            name: "b".into(),
            margin: -1e-4,
            tolerance: 2e-4,
            witness: None,
        });
        let r = r.finish();
        assert!(r.pass);
        assert!((r.worst_margin + 5e-7).abs() < 1e-18);
        let mut r2 = CheckReport::new("y", 1e-6);
        r2.push(Component {
            name: "pole".into(),
            margin: f64::NEG_INFINITY,
            tolerance: 1e-6,
            witness: None,
        });
        let r2 = r2.finish();
        assert!(!r2.pass);
        assert_eq!(r2.worst_margin, -f64::MAX);
        let js = serde_json::to_string(&r2).unwrap();
        let back: CheckReport = serde_json::from_str(&js).unwrap();
        assert_eq!(back, r2);
        let refused = CheckReport::refused("z", 1e-6, vec![Stamp::new("w_zero", false)], "W != 0");
        assert!(!refused.pass && !refused.hypotheses_ok);
    }
}
