//! Independent reference implementations and the per-criterion checks
//! shared by the acceptance and oracle test targets.

#![allow(dead_code)]

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc;

use specgate::comparator::{ComparatorNet, NetShape, SymmetricLayer};
use specgate::critical::{update_critical, CriticalSpecList};
use specgate::domain::{Buffer, DesignPoint, Direction, EvaluatedDesign, Measurement, SpecDef};
use specgate::engine::{self, EngineConfig, Mode, RunResult};
use specgate::evaluators::{required_eye_height, SyntheticBenchmark};
use specgate::history;

pub type Check = Result<String, String>;

// ---------------------------------------------------------------- oracles

/// Normalized spec error written from the definition, with no shared code.
pub fn naive_penalty(value: f64, at_least: bool, target: f64) -> f64 {
    let ok = if at_least { value >= target } else { value <= target };
    if ok {
        return 0.0;
    }
    let denom = (value + target).abs();
    let denom = if denom > 1e-15 { denom } else { 1e-15 };
    (value - target).abs() / denom
}

pub fn naive_cost(values: &[f64], specs: &[(bool, f64, f64)]) -> f64 {
    let mut total = 0.0;
    for (v, &(up, target, w)) in values.iter().zip(specs) {
        total += w * naive_penalty(*v, up, target);
    }
    total
}

/// Critical-spec update by exhaustive search over (spec, top-k design)
/// pairs. `values[d][s]`, `specs[s] = (at_least, target, weight)`.
pub fn brute_force_critical(values: &[Vec<f64>], specs: &[(bool, f64, f64)], cs: &[usize], k: usize) -> Option<usize> {
    let pen = |d: usize, s: usize| specs[s].2 * naive_penalty(values[d][s], specs[s].0, specs[s].1);
    let key = |d: usize| -> f64 {
        let mut total = 0.0;
        for s in 0..specs.len() {
            if cs.is_empty() || cs.contains(&s) {
                total += pen(d, s);
            }
        }
        total
    };
    // Insertion sort: stable by construction.
    let mut order: Vec<usize> = Vec::new();
    for d in 0..values.len() {
        let pos = order.iter().position(|&o| key(o) > key(d)).unwrap_or(order.len());
        order.insert(pos, d);
    }
    let mut best: Option<(usize, f64)> = None;
    for s in 0..specs.len() {
        if cs.contains(&s) {
            continue;
        }
        for &d in &order[..k] {
            let p = pen(d, s);
            if p > 0.0 && best.map_or(true, |(_, b)| p > b) {
                best = Some((s, p));
            }
        }
    }
    best.map(|(s, _)| s)
}

/// Mirrored half of a symmetric layer, indexed exactly as in the defining
/// equations: rows `m/2..m` of the full `m x 2k` matrix.
pub fn mirror_oracle(half: &[Vec<f64>], bias: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = 2 * half.len();
    let two_k = half[0].len();
    let mut w = vec![vec![0.0; two_k]; m / 2];
    let mut b = vec![0.0; m / 2];
    for i in 0..m / 2 {
        for j in 0..two_k {
            w[i][j] = half[m / 2 - 1 - i][two_k - 1 - j];
        }
        b[i] = bias[m / 2 - 1 - i];
    }
    (w, b)
}

/// Solves `erfc(x) = y` by bisection on the decreasing function.
pub fn erfc_inv_bisect(y: f64) -> f64 {
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid) > y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn spec_name(i: usize) -> String {
    format!("s{i}")
}

/// A random buffer with values on a coarse grid so that exact ties occur.
pub fn random_population(rng: &mut ChaCha8Rng) -> (Buffer, Vec<SpecDef>, Vec<Vec<f64>>, Vec<(bool, f64, f64)>) {
    let n_specs = rng.random_range(1..=8);
    let n_designs = rng.random_range(1..=50);
    let raw: Vec<(bool, f64, f64)> = (0..n_specs)
        .map(|_| {
            (
                rng.random::<bool>(),
                rng.random_range(1..=10) as f64,
                [0.5, 1.0, 2.0][rng.random_range(0..3)],
            )
        })
        .collect();
    let specs: Vec<SpecDef> = raw
        .iter()
        .enumerate()
        .map(|(i, &(up, t, w))| {
            let dir = if up { Direction::AtLeast } else { Direction::AtMost };
            SpecDef::new(spec_name(i), dir, t).with_weight(w)
        })
        .collect();
    let values: Vec<Vec<f64>> = (0..n_designs)
        .map(|_| (0..n_specs).map(|_| rng.random_range(0..=12) as f64).collect())
        .collect();
    let buffer = Buffer::from_designs(values.iter().enumerate().map(|(d, v)| {
        let mut m = Measurement::new();
        for (i, x) in v.iter().enumerate() {
            m = m.with(spec_name(i), *x);
        }
        EvaluatedDesign::new(DesignPoint::new(vec![d]), m, &specs).expect("valid design")
    }));
    (buffer, specs, values, raw)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ------------------------------------------------------------ criteria

pub fn antisymmetry() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_pair, mut worst_self) = (0.0f64, 0.0f64);
    for t in 0..1000u64 {
        let dim = rng.random_range(1..=10);
        let heads = rng.random_range(1..=8);
        let net = ComparatorNet::new(NetShape::new(dim, heads), t).map_err(|e| e.to_string())?;
        let (a, b) = (random_vec(&mut rng, dim), random_vec(&mut rng, dim));
        let ab = net.forward(&a, &b, false, &mut rng).map_err(|e| e.to_string())?;
        let ba = net.forward(&b, &a, false, &mut rng).map_err(|e| e.to_string())?;
        let dd = net.forward(&a, &a, false, &mut rng).map_err(|e| e.to_string())?;
        for i in 0..heads {
            worst_pair = worst_pair.max((ab[i] + ba[i] - 1.0).abs());
            worst_self = worst_self.max((dd[i] - 0.5).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("max |p(A,B)+p(B,A)-1| = {worst_pair:.2e}, max |p(D,D)-0.5| = {worst_self:.2e}, {secs:.2}s");
    if worst_pair <= 1e-6 && worst_self <= 1e-9 && secs < 10.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn mirror_conformance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in 0..100 {
        let rows = 2 * rng.random_range(1..=16);
        let cols = 2 * rng.random_range(1..=16);
        let layer = SymmetricLayer::glorot(rows, cols, &mut rng).map_err(|e| e.to_string())?;
        let half: Vec<Vec<f64>> = layer.weight.chunks(cols).map(|r| r.to_vec()).collect();
        let (w, b) = mirror_oracle(&half, &layer.bias);
        let full = layer.materialize();
        for i in 0..rows / 2 {
            for j in 0..cols {
                if full.at(i, j).to_bits() != half[i][j].to_bits() || full.at(rows / 2 + i, j).to_bits() != w[i][j].to_bits() {
                    return Err(format!("shape {t} ({rows}x{cols}): weight ({i},{j}) differs"));
                }
            }
            if full.bias[rows / 2 + i].to_bits() != b[i].to_bits() || full.bias[i].to_bits() != layer.bias[i].to_bits() {
                return Err(format!("shape {t} ({rows}x{cols}): bias {i} differs"));
            }
        }
    }
    Ok("100 random shapes match bit for bit".into())
}

pub fn gradient_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shape = NetShape {
        input_dim: 3,
        feature_width: 4,
        feature_layers: 2,
        head_width: 4,
        heads: 3,
        dropout: 0.0,
    };
    let mut worst = 0.0f64;
    let h = 1e-5;
    for trial in 0..5u64 {
        let mut net = ComparatorNet::new(shape.clone(), trial).map_err(|e| e.to_string())?;
        let (a, b) = (random_vec(&mut rng, 3), random_vec(&mut rng, 3));
        let labels: Vec<f64> = (0..3).map(|_| [0.0, 0.5, 1.0][rng.random_range(0..3)]).collect();
        let compiled = net.compile();
        let mut grad = compiled.zero_grad();
        compiled.loss_and_grad(&a, &b, &labels, None, &mut grad);
        let analytic = net.fold_gradient(&grad).params();
        let base = net.params();
        for (p, &g) in analytic.iter().enumerate() {
            let mut plus = base.clone();
            plus[p] += h;
            net.set_params(&plus).map_err(|e| e.to_string())?;
            let lp = net.compile().loss(&a, &b, &labels, None);
            let mut minus = base.clone();
            minus[p] -= h;
            net.set_params(&minus).map_err(|e| e.to_string())?;
            let lm = net.compile().loss(&a, &b, &labels, None);
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        net.set_params(&base).map_err(|e| e.to_string())?;
    }
    let detail = format!("max relative error {worst:.2e} over every parameter of 5 width-4 nets");
    if worst <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

pub fn critical_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut appended = 0;
    for t in 0..200 {
        let (buffer, specs, values, raw) = random_population(&mut rng);
        let k = rng.random_range(1..=buffer.len());
        let mut cs = CriticalSpecList::new();
        let mut cs_idx: Vec<usize> = Vec::new();
        for _ in 0..=specs.len() {
            let next = update_critical(&buffer, &specs, &cs, k).map_err(|e| e.to_string())?;
            let expected = brute_force_critical(&values, &raw, &cs_idx, k);
            let got = next.entries().get(cs.len()).map(|n| specs.iter().position(|s| &s.name == n).expect("known"));
            if got != expected {
                return Err(format!("population {t}: appended {got:?}, brute force says {expected:?}"));
            }
            if next.entries()[..cs.len()] != *cs.entries() {
                return Err(format!("population {t}: critical list was rewritten"));
            }
            let mut names = next.entries().to_vec();
            names.sort();
            names.dedup();
            if names.len() != next.len() {
                return Err(format!("population {t}: duplicate critical spec"));
            }
            if let Some(s) = got {
                cs_idx.push(s);
                appended += 1;
            }
            cs = next;
        }
    }
    Ok(format!("200 populations, {appended} appends, all equal to brute force"))
}

pub fn cost_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for t in 0..10_000 {
        let up = rng.random::<bool>();
        let scale = 10f64.powi(rng.random_range(-6..=6));
        let target = rng.random_range(-1.0..1.0) * scale;
        let value = match rng.random_range(0..4) {
            0 => target,
            1 => -target,
            _ => rng.random_range(-1.0..1.0) * scale * 3.0,
        };
        let w = rng.random_range(0.1..5.0);
        let spec = SpecDef::new("m", if up { Direction::AtLeast } else { Direction::AtMost }, target).with_weight(w);
        let got = specgate::penalty(value, &spec).map_err(|e| e.to_string())?;
        let want = naive_penalty(value, up, target);
        let m = Measurement::new().with("m", value);
        let total = specgate::cost(&m, std::slice::from_ref(&spec), None).map_err(|e| e.to_string())?.total;
        let want_total = naive_cost(&[value], &[(up, target, w)]);
        for (g, e) in [(got, want), (total, want_total)] {
            let rel = if e == 0.0 { g.abs() } else { ((g - e) / e).abs() };
            if !(rel <= 1e-12) {
                return Err(format!("case {t}: value {value}, target {target}: got {g}, expected {e}"));
            }
            worst = worst.max(rel);
        }
    }
    Ok(format!("10000 cases, max relative difference {worst:.1e}"))
}

pub fn bench_config(mode: Mode, seed: u64) -> EngineConfig {
    EngineConfig {
        mode,
        seed,
        initial_population: 100,
        n_add: 5,
        reference_rank: 20,
        ..EngineConfig::default()
    }
}

pub fn run_bench(cfg: EngineConfig) -> Result<RunResult, String> {
    let mut bench = SyntheticBenchmark::opamp_v1();
    let problem = bench.problem().map_err(|e| e.to_string())?;
    engine::run(cfg, problem, &mut bench).map_err(|e| e.to_string())
}

/// Every design that entered the buffer beat the iteration's reference on
/// every critical spec, judged from the stored measurements.
pub fn oracle_invariant(result: &RunResult, specs: &[SpecDef]) -> Result<usize, String> {
    let mut checked = 0;
    for r in result.records.iter().skip(1) {
        let reference = r.reference.as_ref().ok_or("iteration without a reference")?;
        for d in &r.offspring {
            for name in &r.critical {
                let s = specs.iter().find(|s| &s.name == name).ok_or("unknown critical spec")?;
                let (a, b) = (d.measurement.require(name).map_err(|e| e.to_string())?, reference.measurement.require(name).map_err(|e| e.to_string())?);
                if !s.direction.strictly_better(a, b) {
                    return Err(format!("iteration {}: {} has {name} = {a}, reference has {b}", r.iteration, d.point));
                }
            }
            checked += 1;
        }
    }
    Ok(checked)
}

pub fn oracle_mode_invariant() -> Check {
    let cfg = EngineConfig {
        max_iterations: 100,
        ..bench_config(Mode::Oracle, 0)
    };
    let result = run_bench(cfg)?;
    let specs = SyntheticBenchmark::opamp_v1().specs;
    let n = oracle_invariant(&result, &specs)?;
    Ok(format!(
        "{n} insertions over {} iterations ({}) all beat their reference",
        result.iterations(),
        result.status.as_str()
    ))
}

pub fn run_modes(seeds: u64, max_iterations: usize) -> Result<Vec<RunResult>, String> {
    let jobs: Vec<(Mode, u64)> = [Mode::Dnn, Mode::Oracle, Mode::Vanilla]
        .into_iter()
        .flat_map(|m| (0..seeds).map(move |s| (m, s)))
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(mode, seed)| {
                scope.spawn(move || {
                    run_bench(EngineConfig {
                        max_iterations,
                        ..bench_config(mode, seed)
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread")).collect()
    })
}

pub fn sample_efficiency() -> Check {
    let start = Instant::now();
    let results = run_modes(5, 100)?;
    let stat = |mode: Mode, f: &dyn Fn(&RunResult) -> Option<f64>| -> (f64, Vec<f64>) {
        let v: Vec<f64> = results
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| f(r).unwrap_or(f64::INFINITY))
            .collect();
        (median(v.clone()), v)
    };
    let sims = |r: &RunResult| r.simulations_to_solve().map(|s| s as f64);
    let iters = |r: &RunResult| r.iterations_to_solve().map(|s| s as f64);
    let (dnn_s, dnn_sv) = stat(Mode::Dnn, &sims);
    let (van_s, van_sv) = stat(Mode::Vanilla, &sims);
    let (dnn_i, _) = stat(Mode::Dnn, &iters);
    let (ora_i, ora_iv) = stat(Mode::Oracle, &iters);
    let secs = start.elapsed().as_secs_f64();
    // Both modes share the same initial population; the ratio of the
    // simulations spent after it is reported alongside the literal one.
    let init = bench_config(Mode::Dnn, 0).initial_population as f64;
    let detail = format!(
        "median sims dnn {dnn_s} {dnn_sv:?} vs vanilla {van_s} {van_sv:?} (ratio {:.2}, {:.2} beyond the initial {init}); median iterations oracle {ora_i} {ora_iv:?} vs dnn {dnn_i}; {secs:.0}s",
        dnn_s / van_s,
        (dnn_s - init) / (van_s - init)
    );
    if dnn_s <= 0.5 * van_s && ora_i <= dnn_i && secs < 900.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn history_bytes(result: &RunResult) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    history::write_history(&result.records, &mut out).map_err(|e| e.to_string())?;
    Ok(out)
}

pub fn determinism() -> Check {
    let quick = |mode| EngineConfig {
        max_iterations: 4,
        ..bench_config(mode, 7)
    };
    for mode in [Mode::Vanilla, Mode::Oracle, Mode::Dnn] {
        let a = history_bytes(&run_bench(quick(mode))?)?;
        let b = history_bytes(&run_bench(quick(mode))?)?;
        if a != b {
            return Err(format!("{mode}: history files differ between identical runs"));
        }
    }

    // Interrupt a dnn run after two iterations, round-trip the checkpoint
    // through JSON and finish it in a fresh engine.
    let cfg = quick(Mode::Dnn);
    let whole = run_bench(cfg.clone())?;
    let mut bench = SyntheticBenchmark::opamp_v1();
    let problem = bench.problem().map_err(|e| e.to_string())?;
    let json = {
        let mut eng = engine::Engine::start(cfg.clone(), problem.clone(), &mut bench).map_err(|e| e.to_string())?;
        for _ in 0..2 {
            eng.step().map_err(|e| e.to_string())?;
        }
        eng.checkpoint().to_json().map_err(|e| e.to_string())?
    };
    let ckpt = engine::Checkpoint::from_json(&json).map_err(|e| e.to_string())?;
    let resumed = engine::Engine::restore(cfg, problem, &mut bench, ckpt)
        .and_then(|e| e.run())
        .map_err(|e| e.to_string())?;
    if resumed != whole {
        return Err("resumed run differs from the uninterrupted one".into());
    }
    if history_bytes(&resumed)? != history_bytes(&whole)? {
        return Err("resumed history differs".into());
    }
    Ok("identical histories in all modes; dnn run resumed after 2 of 4 iterations matches exactly".into())
}

pub fn eye_height() -> Check {
    let exact = required_eye_height(0.5, 1e-3, 2e-3, 5e-3).map_err(|e| e.to_string())?;
    if exact != 2e-3 + 5e-3 {
        return Err(format!("ber 0.5 gives {exact}, expected exactly {}", 2e-3 + 5e-3));
    }
    let sigma = 1e-3;
    let got = required_eye_height(1e-12, sigma, 0.0, 0.0).map_err(|e| e.to_string())?;
    let want = std::f64::consts::SQRT_2 * sigma * erfc_inv_bisect(2e-12);
    let rel = ((got - want) / want).abs();
    if !(rel <= 1e-9) {
        return Err(format!("ber 1e-12: {got} vs bisection {want} (rel {rel:.1e})"));
    }
    let mut prev = f64::INFINITY;
    for i in 0..100 {
        let ber = 10f64.powf(-15.0 + 14.0 * i as f64 / 99.0) * 0.49;
        let h = required_eye_height(ber, sigma, 0.0, 0.0).map_err(|e| e.to_string())?;
        if !(h < prev) {
            return Err(format!("not strictly decreasing in ber at {ber:e}"));
        }
        prev = h;
    }
    let mut prev = f64::NEG_INFINITY;
    for i in 0..100 {
        let s = 1e-4 * (1.0 + i as f64);
        let h = required_eye_height(1e-6, s, 0.0, 0.0).map_err(|e| e.to_string())?;
        if !(h > prev) {
            return Err(format!("not strictly increasing in sigma at {s}"));
        }
        prev = h;
    }
    Ok(format!("ber 0.5 exact, ber 1e-12 within {rel:.1e} of bisection, monotone on both sweeps"))
}

pub fn accounting() -> Check {
    let mut lines = Vec::new();
    for mode in [Mode::Dnn, Mode::Oracle, Mode::Vanilla] {
        let r = run_bench(EngineConfig {
            max_iterations: 6,
            ..bench_config(mode, 3)
        })?;
        r.reconcile().map_err(|e| format!("{mode}: {e}"))?;
        let mut out = Vec::new();
        history::write_summary(&[&r], &mut out).map_err(|e| e.to_string())?;
        let text = String::from_utf8(out).map_err(|e| e.to_string())?;
        let header = text.lines().next().unwrap_or_default();
        for col in ["nn_queries", "retrainings", "simulations"] {
            if !header.split(',').any(|h| h == col) {
                return Err(format!("summary lacks `{col}`"));
            }
        }
        lines.push(format!(
            "{mode}: {} sims, {} queries, {} retrainings",
            r.counters.simulations, r.counters.nn_queries, r.counters.retrainings
        ));
    }
    Ok(format!("identities hold; {}", lines.join("; ")))
}
