//! End-to-end acceptance checks, one line per criterion.

mod common;

use hdwalk::cli::presets;
use hdwalk::cli::run::{magic_formula_pairs, walk_replicas};
use hdwalk::exact::RMat;
use hdwalk::expansion::{self, ExpansionOptions, Verdict};
use hdwalk::fractal::{self, Precision, TrajectoryOptions};
use hdwalk::lattice::{self, LatticePoint, WalkObservables};
use hdwalk::linalg::{self, adjoint_index, Representation};
use hdwalk::markov::{self, replica_rng, ChainSpec};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn sl3_adjoint_lines() -> Outcome {
    let chain = presets::sl3_chain();
    let mut out = Vec::new();
    for ((i, j), target) in [((0, 2), 18f64.ln()), ((1, 2), 12f64.ln())] {
        let mut v = vec![0.0; 8];
        v[adjoint_index(3, i, j).unwrap()] = 1.0;
        let g = expansion::vector_growth_rate(&chain, Representation::Adjoint, &v, 1000, 4, 1).map_err(|e| e.to_string())?;
        let spread = g.per_replica.iter().map(|r| (r - g.rate).abs()).fold(0.0, f64::max);
        ensure((g.rate - target).abs() <= 1e-9, format!("E_{}{} rate {} vs {target}", i + 1, j + 1, g.rate))?;
        ensure(spread == 0.0 && g.std_error == 0.0, format!("E_{}{} sample variance nonzero", i + 1, j + 1))?;
        out.push(format!("{:.12}", g.rate));
    }
    Ok(format!("rates {} (log 18, log 12)", out.join(", ")))
}

fn lyapunov_self_consistency() -> Outcome {
    let mut worst: f64 = 0.0;
    for c in 0..10u64 {
        let mut rng = replica_rng(2024, c);
        let mats = (0..3).map(|_| linalg::random_sl(3, &mut rng)).collect();
        let chain = ChainSpec::iid_uniform(mats);
        let qr = expansion::lyapunov_spectrum(&chain, Representation::Standard, 10_000, 8, c).map_err(|e| e.to_string())?;
        for k in 1..=2 {
            let (s, se) = qr.partial_sum(k);
            let (w, wse) = expansion::wedge_norm_growth(&chain, k, 10_000, 8, c).map_err(|e| e.to_string())?;
            let z = (s - w).abs() / (se * se + wse * wse).sqrt().max(1e-300);
            worst = worst.max(z);
            ensure(z <= 3.0, format!("chain {c} k={k}: QR {s} ± {se} vs wedge {w} ± {wse}"))?;
        }
    }
    Ok(format!("max |QR - wedge| / se = {worst:.3}"))
}

fn expansion_falsifier() -> Outcome {
    let falsified = |chain: &ChainSpec, rep| {
        let opts = ExpansionOptions { representation: rep, k: 1, n_steps: 10_000, n_samples: 200, ..Default::default() };
        expansion::grassmannian_expansion_check(chain, &opts, 3).map(|v| v.verdict)
    };
    let diag = |a: f64| linalg::Mat::from_row_slice(2, 2, &[a, 0.0, 0.0, 1.0 / a]);
    let identity = ChainSpec::iid_uniform(vec![linalg::Mat::identity(2, 2)]);
    let mixture = ChainSpec::iid_uniform(vec![diag(2.0), diag(0.5)]);
    ensure(falsified(&identity, Representation::Standard).map_err(|e| e.to_string())? == Verdict::Counterexample, "identity not falsified")?;
    ensure(falsified(&mixture, Representation::Standard).map_err(|e| e.to_string())? == Verdict::Counterexample, "diagonal mixture not falsified")?;
    let sl3 = presets::sl3_chain();
    let mut min_rate = f64::INFINITY;
    for k in 1..=7 {
        let opts = ExpansionOptions { representation: Representation::Adjoint, k, n_steps: 10_000, n_samples: 200, ..Default::default() };
        let v = expansion::grassmannian_expansion_check(&sl3, &opts, 3).map_err(|e| e.to_string())?;
        ensure(v.verdict == Verdict::NoCounterexampleFound, format!("adjoint k={k} falsified"))?;
        ensure(v.min_sampled_rate > 0.5, format!("adjoint k={k} min rate {}", v.min_sampled_rate))?;
        min_rate = min_rate.min(v.min_sampled_rate);
    }
    Ok(format!("identity and mixture falsified; adjoint k=1..7 min rate {min_rate:.4}"))
}

fn renewal_identity() -> Outcome {
    let chain = presets::renewal_two_state();
    let id = markov::renewal_t_identity(&chain, 0, 1, 1, 100_000, &mut replica_rng(9, 0)).map_err(|e| e.to_string())?;
    ensure((id.rhs - 0.6).abs() < 1e-12, format!("exact rhs {}", id.rhs))?;
    ensure((id.lhs - id.rhs).abs() <= 3.0 * id.lhs_se, format!("lhs {} ± {} vs {}", id.lhs, id.lhs_se, id.rhs))?;
    let words = markov::excursion_word_test(&chain, 0, 100_000, &mut replica_rng(9, 1)).map_err(|e| e.to_string())?;
    ensure(words.p_value >= 1e-3, format!("word test p = {}", words.p_value))?;
    Ok(format!("lhs {:.5} ± {:.5} vs 0.6; word test p = {:.3}", id.lhs, id.lhs_se, words.p_value))
}

fn equidistribution() -> Outcome {
    let chain = presets::block_two_state();
    ensure(!chain.universally_accessible_states().is_empty(), "no universally accessible state")?;
    let obs = WalkObservables::default();
    let (acc, _) = walk_replicas(&chain, &LatticePoint::standard(2), 100_000, &obs, 1, 0..8).map_err(|e| e.to_string())?;
    let report = lattice::equidistribution_report(&acc, &chain).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in [1.0, 1.5, 2.0] {
        let line = report.siegel.iter().find(|s| s.radius == r).ok_or("missing radius")?;
        let target = std::f64::consts::PI * r * r;
        let rel = (line.average - target).abs() / target;
        worst = worst.max(rel);
        ensure(rel <= 0.05, format!("R={r}: {} vs {target}", line.average))?;
    }
    let esc = acc.escape_fraction(0.05).ok_or("no eps = 0.05 counter")?;
    ensure(esc <= 0.01, format!("escape fraction {esc}"))?;
    ensure(report.independence.p_value >= 1e-3, format!("independence p = {}", report.independence.p_value))?;
    Ok(format!("Siegel max rel err {worst:.4}; escape {esc:.5}; independence p = {:.3}", report.independence.p_value))
}

fn magic_formula() -> Outcome {
    let g = fractal::cantor_middle_thirds();
    let reports = magic_formula_pairs(&g, 100, 50, Precision::Double, 6).map_err(|e| e.to_string())?;
    ensure(reports.len() == 100, "wrong pair count")?;
    let worst = reports.iter().map(|r| r.residual).fold(0.0, f64::max);
    ensure(worst <= 1e-6, format!("max residual {worst:e}"))?;
    ensure(reports.iter().all(|r| r.unimodular), "non-unimodular change of basis")?;
    Ok(format!("max residual {worst:.3e} over 100 pairs"))
}

fn fractal_pipeline() -> Outcome {
    let cantor = fractal::cantor_middle_thirds();
    let pts = fractal::wang_cf_digits(&cantor, 200, 200, 11).map_err(|e| e.to_string())?;
    let seqs: Vec<Vec<u64>> = pts.into_iter().map(|p| p.1).collect();
    let st = fractal::gauss_statistics(&seqs, 200).map_err(|e| e.to_string())?;
    let target = (4.0f64 / 3.0).log2();
    ensure((st.digit_one_frequency - target).abs() <= 0.02, format!("digit-1 frequency {}", st.digit_one_frequency))?;
    ensure(st.chi_square.p_value >= 1e-3, format!("Gauss chi-square p = {}", st.chi_square.p_value))?;
    let dc = fractal::hausdorff_dimension(&cantor).map_err(|e| e.to_string())?;
    ensure((dc - 2f64.ln() / 3f64.ln()).abs() <= 1e-9, format!("Cantor dimension {dc}"))?;
    let dg = fractal::hausdorff_dimension(&fractal::two_vertex_golden()).map_err(|e| e.to_string())?;
    let golden = ((1.0 + 5f64.sqrt()) / 2.0).log2();
    ensure((dg - golden).abs() <= 1e-9, format!("two-vertex dimension {dg}"))?;
    Ok(format!(
        "f1 = {:.5}; chi-square p = {:.3}; dims {dc:.9}, {dg:.9}",
        st.digit_one_frequency, st.chi_square.p_value
    ))
}

fn dani_correspondence() -> Outcome {
    let golden = RMat::scalar(fractal::golden_ratio_rational((-80f64).exp()));
    let opts = TrajectoryOptions { t_max: 30.0, q_max: Some(1000), ..Default::default() };
    let r = fractal::trajectory_report(&golden, &opts).map_err(|e| e.to_string())?;
    ensure(r.trajectory_min_shortest >= 0.3, format!("golden min shortest {}", r.trajectory_min_shortest))?;
    let curve = r.direct_search_curve.ok_or("no direct search")?;
    let last = curve.last().ok_or("empty curve")?;
    ensure(last.q == 1000 && (last.shell - 0.4472).abs() <= 1e-3, format!("golden Q=1000 shell {}", last.shell))?;

    let half = RMat::from_scalars(&[vec!["1/2".into()]]).map_err(|e| e.to_string())?;
    let opts = TrajectoryOptions { t_max: 30.0, q_max: Some(1000), ..Default::default() };
    let h = fractal::trajectory_report(&half, &opts).map_err(|e| e.to_string())?;
    ensure(h.trajectory_min_shortest <= 1e-9, format!("rational min shortest {}", h.trajectory_min_shortest))?;
    let hc = h.direct_search_curve.ok_or("no direct search")?;
    let hl = hc.last().ok_or("empty curve")?;
    ensure(hl.cumulative == 0.0 && hl.shell == 0.0, format!("rational direct search {} / {}", hl.cumulative, hl.shell))?;
    Ok(format!(
        "golden min {:.4}, shell {:.5}; rational min {:.2e}, direct 0",
        r.trajectory_min_shortest, last.shell, h.trajectory_min_shortest
    ))
}

fn structural_invariants() -> Outcome {
    let run = |name: &str, f: &dyn Fn(&mut TestRunner) -> Result<(), String>| -> Result<(), String> {
        let mut runner = TestRunner::new(Config { cases: common::CASES, failure_persistence: None, ..Config::default() });
        f(&mut runner).map_err(|e| format!("{name}: {e}"))
    };
    run("cauchy-binet", &|r| {
        r.run(&((2usize..=5).prop_flat_map(|d| (Just(d), 1..d)), any::<u64>()), |((d, k), seed)| common::cauchy_binet(seed, d, k))
            .map_err(|e| e.to_string())
    })?;
    run("adjoint homomorphism", &|r| {
        r.run(&(2usize..=4, any::<u64>()), |(d, seed)| common::adjoint_homomorphism(seed, d)).map_err(|e| e.to_string())
    })?;
    run("aku roundtrip", &|r| {
        r.run(&(1usize..=3, 1usize..=3, any::<u64>()), |(m, n, seed)| common::aku_roundtrip(seed, m, n)).map_err(|e| e.to_string())
    })?;
    run("coset invariance", &|r| {
        r.run(&(2usize..=4, any::<u64>()), |(d, seed)| common::coset_invariance(seed, d)).map_err(|e| e.to_string())
    })?;
    run("merge consistency", &|r| {
        r.run(
            &((1u64..4).prop_flat_map(|a| (Just(a), a + 1..a + 4)), any::<bool>(), any::<u64>()),
            |((a, b), which, seed)| common::merge_consistency(seed, a, b, which),
        )
        .map_err(|e| e.to_string())
    })?;
    run("determinism", &|r| {
        r.run(&(any::<bool>(), any::<u64>()), |(which, seed)| common::determinism(seed, which)).map_err(|e| e.to_string())
    })?;
    Ok(format!("6 properties x {} cases", common::CASES))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("adjoint coordinate-line exponents", Duration::from_secs(1), sl3_adjoint_lines),
        ("Lyapunov QR vs wedge-norm growth", Duration::from_secs(60), lyapunov_self_consistency),
        ("expansion falsifier sanity", Duration::from_secs(300), expansion_falsifier),
        ("renewal identity", Duration::from_secs(30), renewal_identity),
        ("equidistribution at desk scale", Duration::from_secs(600), equidistribution),
        ("magic formula", Duration::from_secs(60), magic_formula),
        ("fractal Diophantine pipeline", Duration::from_secs(300), fractal_pipeline),
        ("Dani correspondence consistency", Duration::from_secs(60), dani_correspondence),
        ("structural invariants", Duration::from_secs(120), structural_invariants),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= *budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "criterion {}: {} [{}] {:.2}s: {}",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            name,
            elapsed.as_secs_f64(),
            detail
        );
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
