//! Critical-specification tracking and reference-design selection.
//!
//! The buffer is ranked by cost over the critical specs (all specs while
//! the list is empty). Among the `k` best designs, the non-critical spec
//! carrying the largest weighted penalty becomes critical. Membership is
//! permanent.

use serde::{Deserialize, Serialize};

use crate::domain::{Buffer, EvaluatedDesign, SpecDef};
use crate::error::{Error, Result};

/// Append-only list of spec names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CriticalSpecList {
    entries: Vec<String>,
}

impl CriticalSpecList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e == name)
    }

    /// Positions of the entries within `specs`, in list order.
    pub fn indices(&self, specs: &[SpecDef]) -> Result<Vec<usize>> {
        self.entries
            .iter()
            .map(|e| {
                specs
                    .iter()
                    .position(|s| &s.name == e)
                    .ok_or_else(|| Error::contract(format!("critical spec `{e}` is not a known spec")))
            })
            .collect()
    }

    fn push(&mut self, name: &str) {
        if !self.contains(name) {
            self.entries.push(name.to_owned());
        }
    }
}

impl std::fmt::Display for CriticalSpecList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.entries.join(";"))
    }
}

/// Buffer indices ordered by the cost that drives gating: restricted to the
/// critical specs, or over every spec while none is critical yet.
pub fn rank_by_critical(buffer: &Buffer, specs: &[SpecDef], cs: &CriticalSpecList) -> Result<Vec<usize>> {
    if cs.is_empty() {
        Ok(buffer.ranked(specs, None))
    } else {
        let idx = cs.indices(specs)?;
        Ok(buffer.ranked(specs, Some(&idx)))
    }
}

pub fn update_critical(
    buffer: &Buffer,
    specs: &[SpecDef],
    cs: &CriticalSpecList,
    k: usize,
) -> Result<CriticalSpecList> {
    if buffer.is_empty() {
        return Err(Error::contract("cannot update critical specs from an empty buffer"));
    }
    if k == 0 || k > buffer.len() {
        return Err(Error::contract(format!(
            "top-k of {k} is invalid for a buffer of {} designs",
            buffer.len()
        )));
    }
    let order = rank_by_critical(buffer, specs, cs)?;
    let top = &order[..k];

    let mut best: Option<(usize, f64)> = None;
    for (i, spec) in specs.iter().enumerate() {
        if cs.contains(&spec.name) {
            continue;
        }
        let worst = top
            .iter()
            .map(|&d| spec.weight * buffer.designs()[d].penalties[i])
            .fold(0.0, f64::max);
        // Strict comparison keeps the first spec on ties.
        if worst > 0.0 && best.map_or(true, |(_, b)| worst > b) {
            best = Some((i, worst));
        }
    }

    let mut next = cs.clone();
    if let Some((i, _)) = best {
        next.push(&specs[i].name);
    }
    Ok(next)
}

/// The design at 0-based rank `k` under the critical-spec cost.
pub fn select_reference<'a>(
    buffer: &'a Buffer,
    specs: &[SpecDef],
    cs: &CriticalSpecList,
    k: usize,
) -> Result<&'a EvaluatedDesign> {
    if buffer.len() <= k {
        return Err(Error::contract(format!(
            "reference rank {k} needs more than {} designs",
            buffer.len()
        )));
    }
    let order = rank_by_critical(buffer, specs, cs)?;
    Ok(&buffer.designs()[order[k]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DesignPoint, Direction, Measurement};

    fn specs() -> Vec<SpecDef> {
        vec![
            SpecDef::new("gain", Direction::AtLeast, 300.0),
            SpecDef::new("power", Direction::AtMost, 1.0),
        ]
    }

    fn design(i: usize, gain: f64, power: f64) -> EvaluatedDesign {
        let m = Measurement::new().with("gain", gain).with("power", power);
        EvaluatedDesign::new(DesignPoint::new(vec![i]), m, &specs()).unwrap()
    }

    #[test]
    fn unique_violated_spec_becomes_critical() {
        let b = Buffer::from_designs((0..5).map(|i| design(i, 100.0 + i as f64, 0.5)));
        let cs = update_critical(&b, &specs(), &CriticalSpecList::new(), 3).unwrap();
        assert_eq!(cs.entries(), ["gain"]);
    }

    #[test]
    fn all_satisfied_leaves_list_unchanged() {
        let b = Buffer::from_designs((0..5).map(|i| design(i, 400.0, 0.5)));
        let cs = update_critical(&b, &specs(), &CriticalSpecList::new(), 3).unwrap();
        assert!(cs.is_empty());
    }

    #[test]
    fn full_list_is_unchanged() {
        let b = Buffer::from_designs((0..5).map(|i| design(i, 100.0, 5.0)));
        let mut cs = CriticalSpecList::new();
        for _ in 0..4 {
            cs = update_critical(&b, &specs(), &cs, 5).unwrap();
        }
        assert_eq!(cs.entries(), ["power", "gain"]);
    }

    #[test]
    fn critical_specs_are_never_reselected() {
        // Gain is the larger penalty, but once critical the other spec is picked.
        let b = Buffer::from_designs((0..4).map(|i| design(i, 10.0, 1.1)));
        let cs = update_critical(&b, &specs(), &CriticalSpecList::new(), 2).unwrap();
        assert_eq!(cs.entries(), ["gain"]);
        let cs = update_critical(&b, &specs(), &cs, 2).unwrap();
        assert_eq!(cs.entries(), ["gain", "power"]);
    }

    #[test]
    fn errors_on_empty_buffer_or_bad_k() {
        let cs = CriticalSpecList::new();
        assert!(update_critical(&Buffer::new(), &specs(), &cs, 1).is_err());
        let b = Buffer::from_designs([design(0, 1.0, 1.0)]);
        assert!(update_critical(&b, &specs(), &cs, 2).is_err());
        assert!(update_critical(&b, &specs(), &cs, 0).is_err());
    }

    #[test]
    fn reference_is_rank_k() {
        let b = Buffer::from_designs((0..4).map(|i| design(i, 100.0 * (i + 1) as f64, 0.5)));
        // Costs strictly decrease with i, so rank 3 of 4 is the worst (i = 0).
        let r = select_reference(&b, &specs(), &CriticalSpecList::new(), 3).unwrap();
        assert_eq!(r.point.indices, vec![0]);
        assert!(select_reference(&b, &specs(), &CriticalSpecList::new(), 4).is_err());
    }

    #[test]
    fn reference_ties_break_by_insertion_order() {
        let b = Buffer::from_designs((0..6).map(|i| design(10 - i, 400.0, 0.5)));
        let r = select_reference(&b, &specs(), &CriticalSpecList::new(), 2).unwrap();
        assert_eq!(r.point.indices, vec![8]);
    }

    #[test]
    fn reference_uses_critical_cost_only() {
        let b = Buffer::from_designs([
            design(0, 100.0, 0.5),
            design(1, 290.0, 9.0),
            design(2, 200.0, 0.5),
        ]);
        let mut cs = CriticalSpecList::new();
        cs.push("gain");
        let r = select_reference(&b, &specs(), &cs, 0).unwrap();
        assert_eq!(r.point.indices, vec![1]);
    }
}
