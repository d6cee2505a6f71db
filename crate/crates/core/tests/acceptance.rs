//! Acceptance criteria. Each test prints one PASS/FAIL line; runtimes are part
//! of the criteria, so the tests take a shared lock and run one at a time.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;

use octawidth::balance::{balance_exhaustive, balance_randomized, certified_threshold, BalanceInstance};
use octawidth::blocks::{dual_spec, extremal_dual_vector, in_generalized_octahedron, mixed_norm};
use octawidth::gaussian::{
    check_correlation, check_ebound, check_s_inequality, measure_intersection_lower_bound, psi, random_ellipsoid,
    random_vector_set, CheckStatus,
};
use octawidth::harness::{emit_report, parse_configs, run_experiment, without_wall_time, ExperimentConfig, ExperimentId, Format};
use octawidth::rng::{normal_vec, stream_rng};
use octawidth::widths::{
    b1_vertices, b1inf_vertices, deviation_from_subspace, exact_width_b1_l2, kolmogorov_search, verified_certificate,
    HeuristicOptions,
};
use octawidth::witness::{run_witness, WitnessParams};
use octawidth::{BlockStructure, BlockVector, Exponent, MixedNormSpec, Subspace};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, ok: bool, elapsed: Duration, limit: Option<Duration>, detail: String) {
    let within = limit.is_none_or(|l| elapsed <= l);
    let verdict = if ok && within { "PASS" } else { "FAIL" };
    let limit = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    // written to the handle directly so the line survives output capture
    let line = format!("criterion {id} [{verdict}] {detail}; runtime {:.2}s{limit}\n", elapsed.as_secs_f64());
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(within, "criterion {id} exceeded its runtime limit");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_1_peaky_vectors() {
    let _g = lock();
    let start = Instant::now();
    let mut min_peak = f64::INFINITY;
    let mut max_trace_err = 0.0_f64;
    for k in 0..200u64 {
        let dim = 4 + (k % 5) as usize;
        let l = Subspace::random(16, dim, &mut stream_rng(k, 11));
        let (x, i_star) = l.peaky_unit_vector().unwrap();
        min_peak = min_peak.min(x[i_star - 1].abs());
        let trace: f64 = l.leverage().iter().sum();
        max_trace_err = max_trace_err.max((trace - dim as f64).abs());
    }
    let ok = min_peak >= 0.5 - 1e-9 && max_trace_err <= 1e-8;
    report(1, ok, start.elapsed(), Some(Duration::from_secs(5)), format!("min peak {min_peak:.6}, max trace error {max_trace_err:.2e}"));
}

fn hadamard8() -> DMatrix<f64> {
    DMatrix::from_fn(8, 8, |i, j| if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
}

#[test]
fn criterion_2_width_identity() {
    let _g = lock();
    let start = Instant::now();
    let l22 = MixedNormSpec::new(Exponent::TWO, Exponent::TWO);
    let flat = BlockStructure::new(8, 1).unwrap();
    let vertices = b1_vertices(flat);
    let h = hadamard8() / 8f64.sqrt();
    let frame = Subspace::from_orthonormal(h.columns(0, 4).into_owned()).unwrap();
    let dev = deviation_from_subspace(&vertices, &frame, l22).unwrap().value;
    let exact = exact_width_b1_l2(8, 4).unwrap().value;
    let half = 0.5f64.sqrt();
    let frame_ok = (dev - half).abs() <= 1e-9 && (dev - exact).abs() <= 1e-9;
    let mut min_dev = f64::INFINITY;
    for k in 0..1000u64 {
        let l = Subspace::random(8, 4, &mut stream_rng(k, 12));
        min_dev = min_dev.min(deviation_from_subspace(&vertices, &l, l22).unwrap().value);
    }
    let ok = frame_ok && min_dev >= half - 1e-9;
    report(
        2,
        ok,
        start.elapsed(),
        Some(Duration::from_secs(10)),
        format!("Hadamard deviation {dev:.12} vs {exact:.12}; min random deviation {min_dev:.9}"),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[test]
fn criterion_3_witness_sweep() {
    let _g = lock();
    let start = Instant::now();
    let mut config = ExperimentConfig::new(ExperimentId::WitnessSweep);
    config.n = Some(vec![32]);
    config.m = Some(vec![24, 36, 48]);
    config.dim_fractions = Some(vec![0.5]);
    config.seeds = Some((0..10).collect());
    let rows = run_experiment(&config).unwrap();
    let mut by_m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut structural = 0;
    let mut positive = 0;
    for r in &rows {
        assert!(!r.is_error(), "{:?}", r.error);
        structural += (r.metrics["structural_pass"] == 1.0) as usize;
        positive += (r.metrics["ratio"] > 0.0) as usize;
        by_m.entry(r.params["m"].clone()).or_default().push(r.metrics["ratio_over_m"]);
    }
    let medians: Vec<(String, f64)> = by_m.into_iter().map(|(m, v)| (m, median(v))).collect();
    let hi = medians.iter().map(|x| x.1).fold(0.0, f64::max);
    let lo = medians.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let ok = rows.len() == 30 && structural == 30 && positive == 30 && hi < 2.0 * lo;
    let shown: Vec<String> = medians.iter().map(|(m, v)| format!("m={m}: {v:.4}")).collect();
    report(
        3,
        ok,
        start.elapsed(),
        Some(Duration::from_secs(600)),
        format!("{structural}/30 verified, {positive}/30 positive, median ratio/m [{}], spread {:.3}", shown.join(", "), hi / lo),
    );
}

#[test]
fn criterion_4_balance_quality() {
    let _g = lock();
    let start = Instant::now();
    let mut worst_ratio = 0.0_f64;
    let mut min_support = usize::MAX;
    for seed in 0..20u64 {
        let inst = BalanceInstance::random(&mut stream_rng(seed, 21), 10, 30, 10).unwrap();
        let opt = balance_exhaustive(&inst, 5).unwrap();
        let rnd = balance_randomized(&inst, 5, 100_000, seed).unwrap();
        worst_ratio = worst_ratio.max(rnd.achieved / opt.achieved);
        min_support = min_support.min(rnd.support);
    }
    let part_a = worst_ratio <= 1.5 && min_support >= 5;
    let mut rates = Vec::new();
    for d in [16usize, 32, 64] {
        let m = 4 * d;
        let threshold = certified_threshold(d, m).unwrap();
        let mut hits = 0;
        for seed in 0..100u64 {
            let inst = BalanceInstance::random(&mut stream_rng(seed, 22 + d as u64), d, m, d).unwrap();
            let r = balance_randomized(&inst, d.div_ceil(2), 200, seed).unwrap();
            hits += (r.achieved <= threshold) as usize;
        }
        rates.push((d, hits));
    }
    let part_b = rates.iter().all(|&(_, h)| h >= 95);
    let shown: Vec<String> = rates.iter().map(|(d, h)| format!("d={d}: {h}/100")).collect();
    report(
        4,
        part_a && part_b,
        start.elapsed(),
        Some(Duration::from_secs(120)),
        format!("worst random/optimum {worst_ratio:.4}, min support {min_support}; certified [{}]", shown.join(", ")),
    );
}

// Composite Simpson on [0, t] with 20000 panels, doubled for symmetry.
fn psi_oracle(t: f64) -> f64 {
    let f = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let panels = 20_000;
    let h = t / panels as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..panels {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    2.0 * s * h / 3.0
}

#[test]
fn criterion_5_gaussian_suite() {
    let _g = lock();
    let start = Instant::now();
    let p1 = psi(1.0);
    let psi_ok = (p1 - psi_oracle(1.0)).abs() <= 1e-9 && (p1 - 0.682689).abs() <= 1e-6;
    let mut chain_ok = true;
    for i in 0..500 {
        let t = 1.0 + 5.0 * i as f64 / 499.0;
        let e = (-t * t / 2.0).exp();
        chain_ok &= psi(t) >= 1.0 - e && 1.0 - e >= (-2.0 * e).exp();
    }
    let mut eb_pass = 0;
    for k in 0..50u64 {
        let mut rng = stream_rng(k, 31);
        let count = rng.gen_range(1..=12);
        let energy = rng.gen_range(0.1..=1.0);
        let set = random_vector_set(&mut rng, 8, count, energy);
        eb_pass += (check_ebound(&set, 8, 100_000, k).unwrap().status == CheckStatus::Pass) as usize;
    }
    let mut s_fails = 0;
    for k in 0..50u64 {
        let body = random_ellipsoid(&mut stream_rng(k, 32), 4);
        for (j, t) in [1.5, 2.0, 3.0].into_iter().enumerate() {
            s_fails += check_s_inequality(&body, t, 4, 1_000_000, 1000 * k + j as u64).unwrap().status.is_fail() as usize;
        }
    }
    let mut c_fails = 0;
    for k in 0..100u64 {
        let mut rng = stream_rng(k, 33);
        let (a, b) = (random_ellipsoid(&mut rng, 5), random_ellipsoid(&mut rng, 5));
        c_fails += check_correlation(&a, &b, 5, 1_000_000, k).unwrap().status.is_fail() as usize;
    }
    let mut inter = Vec::new();
    for (d, m) in [(8usize, 8usize), (8, 64)] {
        let mut rng = stream_rng(m as u64, 34);
        let sets: Vec<Vec<Vec<f64>>> = (0..m).map(|_| random_vector_set(&mut rng, d, d, 1.0)).collect();
        let t = octawidth::balance::target_t(d, m).unwrap();
        let r = measure_intersection_lower_bound(&sets, t, d, 1_000_000, 7).unwrap();
        let ok = r.product_status == CheckStatus::Pass && r.volume_status == Some(CheckStatus::Pass);
        inter.push(format!("({d},{m}): gamma {:.4} {}", r.gamma_v.value, if ok { "pass" } else { "fail" }));
        chain_ok &= ok;
    }
    let ok = psi_ok && chain_ok && eb_pass == 50 && s_fails == 0 && c_fails == 0;
    report(
        5,
        ok,
        start.elapsed(),
        Some(Duration::from_secs(300)),
        format!(
            "psi(1) = {p1:.12}; ebound {eb_pass}/50 pass; S-inequality fails {s_fails}/150; correlation fails {c_fails}/100; intersection [{}]",
            inter.join(", ")
        ),
    );
}

#[test]
fn criterion_6_duality_and_inclusion() {
    let _g = lock();
    let start = Instant::now();
    let basic = [Exponent::ONE, Exponent::TWO, Exponent::INF];
    let mut holder_ok = 0;
    for k in 0..1000u64 {
        let mut rng = stream_rng(k, 41);
        let s = BlockStructure::new(rng.gen_range(1..=6), rng.gen_range(1..=6)).unwrap();
        let spec = MixedNormSpec::new(basic[(k % 3) as usize], basic[((k / 3) % 3) as usize]);
        let x = BlockVector::new(s, normal_vec(&mut rng, s.dim())).unwrap();
        let y = BlockVector::new(s, normal_vec(&mut rng, s.dim())).unwrap();
        let nx = mixed_norm(&x, spec);
        let holder = x.dot(&y).abs() <= nx * mixed_norm(&y, dual_spec(spec)) * (1.0 + 1e-12);
        let z = extremal_dual_vector(&x, spec).unwrap();
        let eq = (x.dot(&z) - nx).abs() <= 1e-9 * nx.max(1.0) && (mixed_norm(&z, dual_spec(spec)) - 1.0).abs() <= 1e-9;
        holder_ok += (holder && eq) as usize;
    }
    let mut inside = 0;
    for k in 0..1000u64 {
        let mut rng = stream_rng(k, 42);
        let (n, m) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let s = BlockStructure::new(n, m).unwrap();
        let mut c = vec![0.0; s.dim()];
        for b in 0..m {
            let r: f64 = rng.gen();
            let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l1: f64 = v.iter().map(|a| a.abs()).sum();
            v.iter_mut().for_each(|a| *a *= r / (l1 * (1.0 + 1e-12)));
            c[b * n..(b + 1) * n].copy_from_slice(&v);
        }
        inside += in_generalized_octahedron(&BlockVector::new(s, c).unwrap(), m) as usize;
    }
    // upper values on a subspace dominate certificates built in its complement
    let s = BlockStructure::new(2, 3).unwrap();
    let l21 = MixedNormSpec::new(Exponent::TWO, Exponent::ONE);
    let vertices = b1inf_vertices(s).unwrap();
    let params = WitnessParams::default();
    let mut crossings = 0;
    let mut comparisons = 0;
    let mut subspaces: Vec<(Subspace, f64)> = Vec::new();
    for seed in 0..4u64 {
        let found = kolmogorov_search(&vertices, s, l21, 3, 2, seed, &HeuristicOptions::default()).unwrap();
        subspaces.push((found.subspace, found.estimate.value));
    }
    for seed in 0..8u64 {
        let l = Subspace::random(6, 3, &mut stream_rng(seed, 43));
        let dev = deviation_from_subspace(&vertices, &l, l21).unwrap().value;
        subspaces.push((l, dev));
    }
    for (l, upper) in &subspaces {
        assert!(*upper <= 3.0 + 1e-9);
        let complement = l.orthogonal_complement();
        let trace = run_witness(&complement, s, &params).unwrap();
        let cert = verified_certificate(&trace, &complement, &params).unwrap().value;
        comparisons += 1;
        crossings += (cert > upper + 1e-9) as usize;
    }
    let ok = holder_ok == 1000 && inside == 1000 && crossings == 0;
    report(
        6,
        ok,
        start.elapsed(),
        Some(Duration::from_secs(60)),
        format!("Hölder {holder_ok}/1000, octahedron {inside}/1000, certificate crossings {crossings}/{comparisons}"),
    );
}

fn emit(rows: &[octawidth::harness::ReportRow], format: Format) -> Vec<u8> {
    let mut buf = Vec::new();
    emit_report(rows, format, &mut buf).unwrap();
    buf
}

fn strip_last_column(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').map_or(l, |p| p.0)).collect::<Vec<_>>().join("\n")
}

#[test]
fn criterion_7_reproducibility() {
    let _g = lock();
    let start = Instant::now();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/acceptance.json");
    let configs = parse_configs(&std::fs::read_to_string(path).unwrap()).unwrap();
    let run = || {
        let mut rows = Vec::new();
        for c in &configs {
            rows.extend(run_experiment(c).unwrap());
        }
        without_wall_time(&rows)
    };
    let (a, b) = (run(), run());
    let lib_ok = emit(&a, Format::Csv) == emit(&b, Format::Csv) && emit(&a, Format::Json) == emit(&b, Format::Json);

    let dir = tempfile::tempdir().unwrap();
    let mut cli = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("report{k}.csv"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_octawidth"))
            .args(["experiment", "--config", path, "--output"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        cli.push(strip_last_column(&std::fs::read_to_string(out).unwrap()));
    }
    let cli_ok = cli[0] == cli[1] && cli[0].lines().next().is_some_and(|h| !h.contains("wall_time"));
    let ok = lib_ok && cli_ok && !a.is_empty() && a.iter().all(|r| !r.is_error());
    report(
        7,
        ok,
        start.elapsed(),
        None,
        format!("{} rows; library reports identical: {lib_ok}; CLI reports identical: {cli_ok}", a.len()),
    );
}
