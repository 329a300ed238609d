mod support;

use std::fs;
use std::path::Path;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use specgate::comparator::{ComparatorNet, NetShape};
use specgate::critical::{select_reference, update_critical, CriticalSpecList};
use specgate::domain::{Buffer, DesignPoint, DesignSpace, Direction, EvaluatedDesign, Measurement, ParamSpec, SpecDef};
use specgate::evaluators::{required_eye_height, EvalError, Evaluator, ExternalEvaluator, ExternalEvaluatorSpec};
use specgate::evolution::{self, EvoConfig};
use specgate::{cost, penalty};

use support::*;

fn spec(at_least: bool, target: f64) -> SpecDef {
    let dir = if at_least { Direction::AtLeast } else { Direction::AtMost };
    SpecDef::new("x", dir, target)
}

proptest! {
    #[test]
    fn penalty_matches_definition(v in -1e6f64..1e6, t in -1e6f64..1e6, up: bool) {
        let got = penalty(v, &spec(up, t)).unwrap();
        let want = naive_penalty(v, up, t);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn penalty_is_zero_exactly_when_satisfied(v in -100.0f64..100.0, t in -100.0f64..100.0, up: bool) {
        let p = penalty(v, &spec(up, t)).unwrap();
        prop_assert!(p >= 0.0);
        let ok = if up { v >= t } else { v <= t };
        prop_assert_eq!(p == 0.0, ok);
    }

    #[test]
    fn penalty_is_scale_free(v in 0.1f64..100.0, t in 0.1f64..100.0, a in 0.01f64..100.0, up: bool) {
        let p = penalty(v, &spec(up, t)).unwrap();
        let q = penalty(a * v, &spec(up, a * t)).unwrap();
        prop_assert!((p - q).abs() < 1e-9, "{p} vs {q}");
    }

    #[test]
    fn cost_is_weighted_sum_of_penalties(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (buffer, specs, values, raw) = random_population(&mut rng);
        for (d, v) in buffer.designs().iter().zip(&values) {
            let want = naive_cost(v, &raw);
            let report = cost(&d.measurement, &specs, None).unwrap();
            prop_assert!((report.total - want).abs() <= 1e-12 * want.max(1.0));
            prop_assert_eq!(report.total, d.cost);
            prop_assert_eq!(d.cost == 0.0, report.satisfied.iter().all(|s| *s));
        }
    }

    #[test]
    fn critical_update_matches_exhaustive_search(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (buffer, specs, values, raw) = random_population(&mut rng);
        let k = 1 + (seed as usize) % buffer.len();
        let mut cs = CriticalSpecList::new();
        let mut idx: Vec<usize> = Vec::new();
        for _ in 0..=specs.len() {
            let next = update_critical(&buffer, &specs, &cs, k).unwrap();
            let want = brute_force_critical(&values, &raw, &idx, k);
            prop_assert!(next.entries().starts_with(cs.entries()), "not append-only");
            match want {
                Some(s) => {
                    prop_assert_eq!(next.len(), cs.len() + 1);
                    prop_assert_eq!(next.entries().last().unwrap(), &specs[s].name);
                    idx.push(s);
                }
                None => prop_assert_eq!(&next, &cs),
            }
            cs = next;
        }
        prop_assert!(cs.len() <= specs.len());
    }

    #[test]
    fn reference_is_the_ranked_design(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (buffer, specs, _, _) = random_population(&mut rng);
        let cs = CriticalSpecList::new();
        let k = (seed as usize) % buffer.len();
        let r = select_reference(&buffer, &specs, &cs, k).unwrap();
        let below = buffer.designs().iter().filter(|d| d.cost < r.cost).count();
        let at_or_below = buffer.designs().iter().filter(|d| d.cost <= r.cost).count();
        prop_assert!(below <= k && k < at_or_below);
        prop_assert!(select_reference(&buffer, &specs, &cs, buffer.len()).is_err());
    }

    #[test]
    fn comparator_is_antisymmetric(seed: u64, dim in 1usize..10, heads in 1usize..8) {
        let net = ComparatorNet::new(NetShape::new(dim, heads), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let a = random_vec(&mut rng, dim);
        let b = random_vec(&mut rng, dim);
        let ab = net.forward(&a, &b, false, &mut rng).unwrap();
        let ba = net.forward(&b, &a, false, &mut rng).unwrap();
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x + y - 1.0).abs() < 1e-12, "{x} + {y}");
        }
        let aa = net.forward(&a, &a, false, &mut rng).unwrap();
        prop_assert!(aa.iter().all(|p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn offspring_stay_on_the_grid(seed: u64, mutation in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (buffer, _, _, _) = random_population(&mut rng);
        prop_assume!(buffer.len() >= 2);
        let space = DesignSpace::new(vec![ParamSpec::range("i", 0.0, 49.0, 1.0).unwrap()]).unwrap();
        let cfg = EvoConfig { mutation_prob: mutation, ..EvoConfig::default() };
        for _ in 0..20 {
            let child = evolution::generate(&buffer, &space, &cfg, &mut rng).unwrap();
            prop_assert!(space.check(&child).is_ok());
        }
    }

    #[test]
    fn selection_keeps_the_cheapest(seed: u64, mu in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pop, _, _, _) = random_population(&mut rng);
        let (more, _, _, _) = random_population(&mut rng);
        let offspring: Vec<EvaluatedDesign> = more.designs().to_vec();
        let kept = evolution::select(&pop, &offspring, mu);
        let mut union = pop.clone();
        for d in &offspring {
            union.insert(d.clone());
        }
        prop_assert_eq!(kept.len(), mu.min(union.len()));
        let worst_kept = kept.designs().iter().map(|d| d.cost).fold(0.0, f64::max);
        let dropped = union.designs().iter().filter(|d| !kept.contains(&d.point));
        for d in dropped {
            prop_assert!(d.cost >= worst_kept);
        }
    }

    #[test]
    fn eye_height_inverts_the_error_rate(ber in 1e-15f64..0.49, sigma in 1e-4f64..1e-1, offset in 0.0f64..1e-2) {
        let h = required_eye_height(ber, sigma, offset, 1e-3).unwrap();
        let x = erfc_inv_bisect(2.0 * ber);
        let want = offset + 1e-3 + std::f64::consts::SQRT_2 * sigma * x;
        prop_assert!((h - want).abs() <= 1e-9 * want.abs().max(1e-6), "{h} vs {want}");
    }
}

#[test]
fn critical_update_rejects_bad_top_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (buffer, specs, _, _) = random_population(&mut rng);
    let cs = CriticalSpecList::new();
    assert!(update_critical(&buffer, &specs, &cs, 0).is_err());
    assert!(update_critical(&buffer, &specs, &cs, buffer.len() + 1).is_err());
    assert!(update_critical(&Buffer::new(), &specs, &cs, 1).is_err());
}

#[test]
fn mirrored_weights_match_the_index_formula() {
    mirror_conformance().unwrap();
}

#[test]
fn gradients_match_finite_differences() {
    gradient_check().unwrap();
}

// External protocol, exercised against small Python simulators.

fn python_available() -> bool {
    std::process::Command::new("python3").arg("--version").output().is_ok()
}

fn script(dir: &Path, name: &str, body: &str) -> Vec<String> {
    let p = dir.join(name);
    let prelude = "import json, sys, time, os\n";
    fs::write(&p, format!("{prelude}{body}")).unwrap();
    vec!["python3".into(), p.to_str().unwrap().into()]
}

fn space() -> DesignSpace {
    DesignSpace::new(vec![
        ParamSpec::range("w", 1.0, 10.0, 1.0).unwrap(),
        ParamSpec::new("l", vec![0.5, 1.0]).unwrap(),
    ])
    .unwrap()
}

const ECHO: &str = r#"
for line in sys.stdin:
    req = json.loads(line)
    p = req["params"]
    print(json.dumps({"id": req["id"], "metrics": {"area": p["w"] * p["l"], "w": p["w"]}}), flush=True)
"#;

#[test]
fn external_echo_round_trip() {
    if !python_available() {
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let spec = ExternalEvaluatorSpec::new(script(t.path(), "echo.py", ECHO));
    let mut ev = ExternalEvaluator::new(spec, vec!["area".into(), "w".into()]).unwrap();
    let s = space();
    let m = ev.evaluate(&DesignPoint::new(vec![3, 1]), &s).unwrap();
    assert_eq!(m.get("area"), Some(4.0));
    assert_eq!(m.get("w"), Some(4.0));
}

#[test]
fn external_batch_preserves_order_across_workers() {
    if !python_available() {
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let mut spec = ExternalEvaluatorSpec::new(script(t.path(), "echo.py", ECHO));
    spec.workers = 3;
    let mut ev = ExternalEvaluator::new(spec, vec!["area".into(), "w".into()]).unwrap();
    let s = space();
    let points: Vec<DesignPoint> = (0..10).map(|i| DesignPoint::new(vec![i, i % 2])).collect();
    let out = ev.evaluate_batch(&points, &s);
    for (i, r) in out.into_iter().enumerate() {
        assert_eq!(r.unwrap().get("w"), Some((i + 1) as f64));
    }
}

#[test]
fn external_retries_after_a_timeout() {
    if !python_available() {
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let marker = t.path().join("hung");
    let body = format!(
        r#"
marker = {:?}
for line in sys.stdin:
    req = json.loads(line)
    if not os.path.exists(marker):
        open(marker, "w").close()
        time.sleep(30)
    print(json.dumps({{"id": req["id"], "metrics": {{"area": 1.0}}}}), flush=True)
"#,
        marker.to_str().unwrap()
    );
    let mut spec = ExternalEvaluatorSpec::new(script(t.path(), "slow.py", &body));
    spec.timeout_ms = 1000;
    spec.max_retries = 1;
    let mut ev = ExternalEvaluator::new(spec, vec!["area".into()]).unwrap();
    let m = ev.evaluate(&DesignPoint::new(vec![0, 0]), &space()).unwrap();
    assert_eq!(m.get("area"), Some(1.0));
    assert!(marker.exists());
}

#[test]
fn external_timeout_without_retries_fails() {
    if !python_available() {
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let body = "for line in sys.stdin:\n    time.sleep(30)\n";
    let mut spec = ExternalEvaluatorSpec::new(script(t.path(), "hang.py", body));
    spec.timeout_ms = 300;
    spec.max_retries = 0;
    let mut ev = ExternalEvaluator::new(spec, vec!["area".into()]).unwrap();
    let e = ev.evaluate(&DesignPoint::new(vec![0, 0]), &space()).unwrap_err();
    assert!(matches!(e, EvalError::Timeout(300)), "{e}");
}

#[test]
fn external_missing_metric_is_a_schema_error() {
    if !python_available() {
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let mut spec = ExternalEvaluatorSpec::new(script(t.path(), "echo.py", ECHO));
    spec.max_retries = 3;
    let mut ev = ExternalEvaluator::new(spec, vec!["area".into(), "gain".into()]).unwrap();
    let e = ev.evaluate(&DesignPoint::new(vec![0, 0]), &space()).unwrap_err();
    assert!(matches!(e, EvalError::Schema(ref m) if m.contains("gain")), "{e}");
}

#[test]
fn external_crash_is_reported() {
    if !python_available() {
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let mut spec = ExternalEvaluatorSpec::new(script(t.path(), "crash.py", "sys.exit(3)\n"));
    spec.max_retries = 1;
    let mut ev = ExternalEvaluator::new(spec, vec!["area".into()]).unwrap();
    let e = ev.evaluate(&DesignPoint::new(vec![0, 0]), &space()).unwrap_err();
    assert!(matches!(e, EvalError::Exited(_)), "{e}");
}

#[test]
fn measurement_missing_spec_is_rejected() {
    let specs = vec![SpecDef::new("gain", Direction::AtLeast, 1.0)];
    let m = Measurement::new().with("other", 1.0);
    assert!(EvaluatedDesign::new(DesignPoint::new(vec![0]), m, &specs).is_err());
}
