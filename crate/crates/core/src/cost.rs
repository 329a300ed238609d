//! Normalized spec penalties and the weighted cost built from them.
//!
//! For a violated spec the penalty is `|c - c*| / |c + c*|`, clamped away
//! from a zero denominator; a satisfied spec (equality included) costs
//! nothing. A design solves the problem exactly when its total cost is zero.

use serde::{Deserialize, Serialize};

use crate::domain::{Measurement, SpecDef};
use crate::error::{Error, Result};

/// Smallest denominator used in [`penalty`].
pub const DENOM_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// One entry per spec in the original list; specs outside the subset hold 0.
    pub penalties: Vec<f64>,
    pub satisfied: Vec<bool>,
    pub total: f64,
}

pub fn penalty(value: f64, spec: &SpecDef) -> Result<f64> {
    if !value.is_finite() {
        return Err(Error::Evaluation(format!(
            "non-finite value {value} for spec `{}`",
            spec.name
        )));
    }
    if spec.direction.satisfied(value, spec.threshold) {
        return Ok(0.0);
    }
    let denom = (value + spec.threshold).abs().max(DENOM_FLOOR);
    Ok((value - spec.threshold).abs() / denom)
}

/// Weighted cost of `m` over `subset` (spec names), or over every spec when `None`.
pub fn cost(m: &Measurement, specs: &[SpecDef], subset: Option<&[&str]>) -> Result<CostReport> {
    if let Some(names) = subset {
        for n in names {
            if !specs.iter().any(|s| s.name == *n) {
                return Err(Error::contract(format!("unknown spec `{n}` in cost subset")));
            }
        }
    }
    let mut penalties = Vec::with_capacity(specs.len());
    let mut satisfied = Vec::with_capacity(specs.len());
    let mut total = 0.0;
    for spec in specs {
        let included = subset.map_or(true, |names| names.contains(&spec.name.as_str()));
        if !included {
            penalties.push(0.0);
            satisfied.push(true);
            continue;
        }
        let p = penalty(m.require(&spec.name)?, spec)?;
        penalties.push(p);
        satisfied.push(p == 0.0);
        total += spec.weight * p;
    }
    Ok(CostReport {
        penalties,
        satisfied,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Direction;
    use proptest::prelude::*;

    fn gain() -> SpecDef {
        SpecDef::new("gain", Direction::AtLeast, 300.0)
    }

    fn settle() -> SpecDef {
        SpecDef::new("settle", Direction::AtMost, 90.0)
    }

    #[test]
    fn satisfied_spec_has_zero_penalty() {
        assert_eq!(penalty(350.0, &gain()).unwrap(), 0.0);
        assert_eq!(penalty(300.0, &gain()).unwrap(), 0.0);
        assert_eq!(penalty(90.0, &settle()).unwrap(), 0.0);
    }

    #[test]
    fn violated_spec_penalty_values() {
        assert_eq!(penalty(200.0, &gain()).unwrap(), 0.2);
        let p = penalty(100.0, &settle()).unwrap();
        assert!((p - 10.0 / 190.0).abs() < 1e-15);
        assert!((p - 0.052_631_578_947_368_42).abs() < 1e-15);
    }

    #[test]
    fn non_finite_value_is_an_error() {
        assert!(matches!(
            penalty(f64::INFINITY, &gain()),
            Err(Error::Evaluation(_))
        ));
        assert!(penalty(f64::NAN, &gain()).is_err());
    }

    #[test]
    fn negative_metrics_use_guarded_denominator() {
        // vout <= -0.9: value -0.8 violates, c + c* = -1.7.
        let vout = SpecDef::new("vout", Direction::AtMost, -0.9);
        let p = penalty(-0.8, &vout).unwrap();
        assert!((p - 0.1 / 1.7).abs() < 1e-15);
        // c + c* == 0 would divide by zero.
        let p = penalty(-1.0, &SpecDef::new("x", Direction::AtLeast, 1.0)).unwrap();
        assert!(p.is_finite() && p > 0.0);
    }

    #[test]
    fn cost_over_all_and_subsets() {
        let specs = vec![gain(), SpecDef::new("power", Direction::AtMost, 1.0).with_weight(2.0)];
        let ok = Measurement::new().with("gain", 400.0).with("power", 0.5);
        assert_eq!(cost(&ok, &specs, None).unwrap().total, 0.0);

        let one_bad = Measurement::new().with("gain", 400.0).with("power", 1.5);
        let r = cost(&one_bad, &specs, None).unwrap();
        assert!((r.penalties[1] - 0.2).abs() < 1e-15);
        assert!((r.total - 0.4).abs() < 1e-15);
        assert_eq!(r.satisfied, vec![true, false]);

        let sub = cost(&one_bad, &specs, Some(&["gain"])).unwrap();
        assert_eq!(sub.total, 0.0);
    }

    #[test]
    fn missing_measurement_is_contract_violation() {
        let m = Measurement::new().with("gain", 400.0);
        let specs = vec![gain(), settle()];
        assert!(matches!(cost(&m, &specs, None), Err(Error::Contract(_))));
        // Restricting to covered specs is fine.
        assert!(cost(&m, &specs, Some(&["gain"])).is_ok());
    }

    fn arb_spec(name: &'static str) -> impl Strategy<Value = SpecDef> {
        (any::<bool>(), 0.1f64..1e3, 0.0f64..5.0).prop_map(move |(up, t, w)| {
            let dir = if up { Direction::AtLeast } else { Direction::AtMost };
            SpecDef::new(name, dir, t).with_weight(w)
        })
    }

    proptest! {
        #[test]
        fn penalty_nonnegative_and_zero_iff_satisfied(spec in arb_spec("a"), c in -1e4f64..1e4) {
            let p = penalty(c, &spec).unwrap();
            prop_assert!(p >= 0.0 && p.is_finite());
            prop_assert_eq!(p == 0.0, spec.direction.satisfied(c, spec.threshold));
        }

        #[test]
        fn penalty_monotone_on_violated_side(t in 1.0f64..1e3, d1 in 0.0f64..1e3, d2 in 0.0f64..1e3) {
            let spec = SpecDef::new("a", Direction::AtMost, t);
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let p_lo = penalty(t + lo, &spec).unwrap();
            let p_hi = penalty(t + hi, &spec).unwrap();
            prop_assert!(p_lo <= p_hi);
        }

        #[test]
        fn cost_is_additive_over_partitions(
            a in arb_spec("a"), b in arb_spec("b"), c in arb_spec("c"),
            va in 0.0f64..2e3, vb in 0.0f64..2e3, vc in 0.0f64..2e3,
        ) {
            let specs = vec![a, b, c];
            let m = Measurement::new().with("a", va).with("b", vb).with("c", vc);
            let full = cost(&m, &specs, None).unwrap().total;
            let left = cost(&m, &specs, Some(&["a"])).unwrap().total;
            let right = cost(&m, &specs, Some(&["b", "c"])).unwrap().total;
            prop_assert!((full - (left + right)).abs() <= 1e-12 * full.max(1.0));
        }

        #[test]
        fn weight_scaling_scales_cost(a in arb_spec("a"), b in arb_spec("b"),
                                      va in 0.0f64..2e3, vb in 0.0f64..2e3, lambda in 0.01f64..100.0) {
            let specs = vec![a, b];
            let scaled: Vec<_> = specs.iter().cloned().map(|s| { let w = s.weight * lambda; s.with_weight(w) }).collect();
            let m = Measurement::new().with("a", va).with("b", vb);
            let base = cost(&m, &specs, None).unwrap().total;
            let s = cost(&m, &scaled, None).unwrap().total;
            prop_assert!((s - lambda * base).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }
}
