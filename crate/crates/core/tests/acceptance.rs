//! Acceptance criteria A1–A8. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use silosim::backend::SyntheticBackend;
use silosim::engine::{distance_matrix, k_nearest, Simulation};
use silosim::harness::{run_sweep, SweepOutcome, SweepSpec, SUMMARY_FILE};
use silosim::io::write_trajectory;
use silosim::metrics::{entropy, silo_tally, stability};
use silosim::model::BackendConfig;
use silosim::seed::{derive_seed, StreamTag};
use silosim::{
    classify, classify_snapshots, Answer, ClassifierParams, Embedding, PatternLabel,
    Probability, RunOptions, SiloLabel, SystemConfig, SystemSnapshot,
};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn paper_default() -> SystemConfig {
    SystemConfig::from_path(&workspace_root().join("configs/paper-default.json"))
        .expect("shipped config loads")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

// A1: p = 1 with noiseless generation freezes every agent's label.
fn a1() -> Outcome {
    let start = Instant::now();
    let mut base = paper_default();
    base.p = Probability::new(1.0).unwrap();
    let BackendConfig::Synthetic(params) = &mut base.backend else {
        return Err("shipped config is not synthetic".into());
    };
    params.sigma_gen = Some(0.0);
    let params = params.clone();

    let mut literal_misses = Vec::new();
    let mut runs = 0;
    for k in [3, 15, 29] {
        for r in 0..8u32 {
            let mut config = base.clone();
            config.k = k;
            config.seed = derive_seed(base.seed, &StreamTag::replicate(config.p, k, r));
            let backend = SyntheticBackend::from_config(&config, &params);
            let mut sim = Simulation::new(&backend, &config, RunOptions::default())
                .map_err(|e| e.to_string())?;
            let initial_labels: BTreeSet<SiloLabel> = sim
                .states()
                .iter()
                .flat_map(|s| s.database.iter().map(|item| item.label))
                .collect();
            let mut first: Option<Vec<SiloLabel>> = None;
            let mut counts = Vec::new();
            for _ in 0..=config.t_final {
                let snap = sim.step().map_err(|e| e.to_string())?.snapshot;
                let labels = first.get_or_insert_with(|| snap.labels.clone());
                ensure(&snap.labels == labels, || {
                    format!("k={k} r={r}: labels changed at t={}", snap.t)
                })?;
                counts.push(snap.silo_count);
            }
            ensure(counts.iter().all(|&c| c == counts[0]), || {
                format!("k={k} r={r}: silo count not constant")
            })?;
            if counts[0] != initial_labels.len() {
                literal_misses.push(format!(
                    "k={k} r={r}: silo count {} vs {} labels in initial databases",
                    counts[0],
                    initial_labels.len()
                ));
            }
            runs += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    if literal_misses.is_empty() {
        Ok(format!("{runs} runs: labels frozen, silo count = initial database labels"))
    } else {
        Err(format!(
            "labels frozen and silo count constant in all {runs} runs, but {} of {runs} \
             runs have fewer silos than initial database labels (first: {})",
            literal_misses.len(),
            literal_misses[0]
        ))
    }
}

fn oracle_entropy(labels: &[u32]) -> f64 {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1.0;
    }
    let n = labels.len() as f64;
    -counts.values().map(|c| (c / n) * (c / n).ln() / 2f64.ln()).sum::<f64>()
}

fn oracle_stability(prev: &[u32], curr: &[u32]) -> f64 {
    let same = prev.iter().zip(curr).filter(|(a, b)| a == b).count();
    same as f64 / prev.len() as f64
}

fn to_labels(ids: &[u32]) -> Vec<SiloLabel> {
    ids.iter().copied().map(SiloLabel::new).collect()
}

// A2: entropy and stability against brute force.
fn a2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(1..=100);
        let alphabet = rng.random_range(1..=12u32);
        let prev: Vec<u32> = (0..n).map(|_| rng.random_range(0..alphabet)).collect();
        let curr: Vec<u32> = (0..n).map(|_| rng.random_range(0..alphabet)).collect();
        let tally = silo_tally(&to_labels(&curr));
        let e = entropy(&tally.counts, n).map_err(|e| e.to_string())?;
        let s = stability(&to_labels(&prev), &to_labels(&curr)).map_err(|e| e.to_string())?;
        let de = (e - oracle_entropy(&curr)).abs();
        let ds = (s - oracle_stability(&prev, &curr)).abs();
        worst = worst.max(de).max(ds);
        ensure(de <= 1e-12 && ds <= 1e-12, || {
            format!("case {case}: entropy off by {de:e}, stability off by {ds:e}")
        })?;
    }
    let e1 = entropy(&BTreeMap::from([(0, 15), (1, 15)]), 30).unwrap();
    let e2 = entropy(&BTreeMap::from([(0, 10), (1, 10), (2, 10)]), 30).unwrap();
    ensure((e1 - 1.0).abs() <= 1e-12, || format!("entropy(15,15) = {e1}"))?;
    ensure((e2 - 3f64.log2()).abs() <= 1e-12, || format!("entropy(10,10,10) = {e2}"))?;
    let a = to_labels(&[0, 1, 2, 3]);
    let b = to_labels(&[1, 2, 3, 0]);
    ensure(stability(&a, &a).unwrap() == 1.0, || "S(x, x) != 1".into())?;
    ensure(stability(&a, &b).unwrap() == 0.0, || "S of full change != 0".into())?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("1000 random cases, worst deviation {worst:e}"))
}

fn snapshots_from_ids(ticks: &[Vec<u32>]) -> Vec<SystemSnapshot> {
    let mut prev: Option<Vec<SiloLabel>> = None;
    ticks
        .iter()
        .enumerate()
        .map(|(t, ids)| {
            let labels = to_labels(ids);
            let tally = silo_tally(&labels);
            let snap = SystemSnapshot {
                t,
                stability: prev.as_ref().map(|p| stability(p, &labels).unwrap()),
                entropy: entropy(&tally.counts, labels.len()).unwrap(),
                silo_counts: tally.counts,
                silo_count: tally.silo_count,
                labels: labels.clone(),
                embeddings: None,
            };
            prev = Some(labels);
            snap
        })
        .collect()
}

// A3: the three constructed trajectories.
fn a3() -> Outcome {
    let start = Instant::now();
    let params = ClassifierParams {
        m: 8,
        window: 16,
        ..ClassifierParams::for_horizon(80)
    };

    let frozen = vec![vec![0, 0, 0, 1, 1, 2, 2, 2, 2, 3]; 81];

    // 200 agents; the majority silo grows by one agent per tick so entropy falls
    // strictly until t = 79, then one agent defects at t = 80.
    let decay: Vec<Vec<u32>> = (0..=80)
        .map(|t| {
            let a = if t == 80 { 178 } else { 100 + t };
            (0..200).map(|i| u32::from(i >= a)).collect()
        })
        .collect();

    // Two silos of 15; from t = 40 agents 0 and 15 alternately cross over.
    let swap: Vec<Vec<u32>> = (0..=80)
        .map(|t| {
            let mut ids: Vec<u32> = (0..30).map(|i| u32::from(i >= 15)).collect();
            if t >= 40 && t % 2 == 0 {
                ids[0] = 1;
            } else if t >= 40 {
                ids[15] = 0;
            }
            ids
        })
        .collect();

    let cases = [
        ("frozen", frozen, PatternLabel::Stable),
        ("decay", decay, PatternLabel::Decaying),
        ("swap", swap, PatternLabel::Unstable),
    ];
    let mut got = Vec::new();
    for (name, ticks, want) in cases {
        let report = classify_snapshots(&snapshots_from_ids(&ticks), &params)
            .map_err(|e| e.to_string())?;
        ensure(report.label == want, || {
            format!("{name}: expected {want}, got {} ({:?})", report.label, report.evidence)
        })?;
        got.push(format!("{name}={}", report.label));
    }
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(got.join(", "))
}

fn jsonl(config: &SystemConfig) -> Result<Vec<u8>, String> {
    let traj = silosim::run_system(config, RunOptions::default()).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    write_trajectory(&traj.snapshots, &mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn sweep(base: &SystemConfig, dir: &Path, ps: &[f64], ks: &[usize], threads: usize) -> Result<SweepOutcome, String> {
    let spec = SweepSpec {
        p_values: ps.iter().map(|&p| Probability::new(p).unwrap()).collect(),
        k_values: ks.to_vec(),
        replicates: 8,
        parallelism: threads,
        ..SweepSpec::new(base.clone(), dir)
    };
    let outcome = run_sweep(&spec).map_err(|e| e.to_string())?;
    ensure(outcome.failures() == 0, || format!("{} runs failed", outcome.failures()))?;
    Ok(outcome)
}

// A4: byte-identical reruns and parallelism-independent sweeps.
fn a4() -> Outcome {
    let start = Instant::now();
    let base = paper_default();
    let mut gmm = base.clone();
    gmm.backend = BackendConfig::default_for(silosim::model::BackendKind::Gmm);
    for config in [&base, &gmm] {
        let first = jsonl(config)?;
        ensure(first == jsonl(config)?, || {
            format!("{:?} run differs between repeats", config.backend.kind())
        })?;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let serial = dir.path().join("serial");
    let parallel = dir.path().join("parallel");
    let ps = [0.2, 0.5, 0.9];
    let ks = [3, 15, 29];
    sweep(&base, &serial, &ps, &ks, 1)?;
    sweep(&base, &parallel, &ps, &ks, 8)?;
    let read = |d: &Path| std::fs::read(d.join(SUMMARY_FILE)).map_err(|e| e.to_string());
    ensure(read(&serial)? == read(&parallel)?, || "summary.csv differs between 1 and 8 threads".into())?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok("repeat runs and 72-run sweeps (1 vs 8 threads) byte-identical".into())
}

fn random_answers(rng: &mut ChaCha8Rng, n: usize, style: usize) -> Vec<Answer> {
    let d = rng.random_range(1..=6);
    (0..n)
        .map(|_| {
            let coords = (0..d)
                .map(|_| match style {
                    0 => rng.random_range(-1.0..1.0),
                    1 => f64::from(rng.random_range(0..3i32)),
                    _ => 0.5,
                })
                .collect();
            Answer::new(SiloLabel::new(0), Embedding::new(coords))
        })
        .collect()
}

// A5: k-NN against a full sort, distances against a naive loop.
fn a5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut all_ties = 0;
    for case in 0..500 {
        let n = rng.random_range(2..=50);
        let style = case % 3;
        let answers = random_answers(&mut rng, n, style);
        let dist = distance_matrix(&answers).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                let a = answers[i].embedding.as_slice();
                let b = answers[j].embedding.as_slice();
                let naive = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                ensure((dist.get(i, j) - naive).abs() <= 1e-12, || {
                    format!("case {case}: D[{i}][{j}] = {} vs {naive}", dist.get(i, j))
                })?;
            }
        }
        let k = rng.random_range(1..n);
        for i in 0..n {
            let mut order: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (dist.get(i, j), j)).collect();
            order.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut want: Vec<usize> = order[..k].iter().map(|&(_, j)| j).collect();
            want.sort_unstable();
            let got = k_nearest(&dist, i, k).map_err(|e| e.to_string())?;
            ensure(got == want, || format!("case {case}: agent {i}, k={k}: {got:?} vs {want:?}"))?;
        }
        if style == 2 {
            all_ties += 1;
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("500 matrices ({all_ties} all-ties) match the oracles"))
}

fn cell_mean(outcome: &SweepOutcome, p: f64, k: usize) -> (f64, Option<PatternLabel>) {
    let rows: Vec<_> = outcome
        .rows
        .iter()
        .filter(|r| r.p.value() == p && r.k == k)
        .collect();
    let mean = rows.iter().map(|r| r.silo_count_t.unwrap() as f64).sum::<f64>() / rows.len() as f64;
    let mut tally: BTreeMap<PatternLabel, usize> = BTreeMap::new();
    for r in &rows {
        *tally.entry(r.pattern.unwrap()).or_default() += 1;
    }
    let top = tally.values().copied().max().unwrap_or(0);
    let modes: Vec<_> = tally.iter().filter(|(_, &c)| c == top).map(|(&l, _)| l).collect();
    // An ambiguous mode counts as no mode.
    (mean, (modes.len() == 1).then(|| modes[0]))
}

const MASTER_SEEDS: [u64; 3] = [20240601, 7, 1_000_003];

fn trend(check: impl Fn(&SystemConfig, &Path) -> Result<(bool, String), String>) -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut held = 0;
    let mut notes = Vec::new();
    for seed in MASTER_SEEDS {
        let mut base = paper_default();
        base.seed = seed;
        let (ok, note) = check(&base, &dir.path().join(seed.to_string()))?;
        held += usize::from(ok);
        notes.push(format!("seed {seed}: {note}{}", if ok { "" } else { " (miss)" }));
    }
    within(start.elapsed(), Duration::from_secs(120))?;
    let summary = format!("{held}/3 seeds; {}", notes.join("; "));
    if held >= 2 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

// A6: at p = 0.2, k = 15 yields fewer silos than k = 3 and mostly one silo.
fn a6() -> Outcome {
    trend(|base, dir| {
        let out = sweep(base, dir, &[0.2], &[3, 15, 29], 4)?;
        let (m3, _) = cell_mean(&out, 0.2, 3);
        let (m15, mode15) = cell_mean(&out, 0.2, 15);
        let ok = m15 < m3 && mode15 == Some(PatternLabel::OneSilo);
        let mode = mode15.map_or("tie".to_string(), |l| l.to_string());
        Ok((ok, format!("mean k=3 {m3}, k=15 {m15}, mode k=15 {mode}")))
    })
}

// A7: at k = 29, heavier mirroring does not reduce the silo count.
fn a7() -> Outcome {
    trend(|base, dir| {
        let out = sweep(base, dir, &[0.2, 0.9], &[29], 4)?;
        let (lo, _) = cell_mean(&out, 0.2, 29);
        let (hi, _) = cell_mean(&out, 0.9, 29);
        Ok((hi >= lo, format!("mean p=0.2 {lo}, p=0.9 {hi}")))
    })
}

// A8: a long single run executes and classifies.
fn a8() -> Outcome {
    let start = Instant::now();
    let mut config = paper_default();
    config.t_final = 160;
    config.classifier = Default::default();
    let traj = silosim::run_system(&config, RunOptions::default()).map_err(|e| e.to_string())?;
    ensure(traj.snapshots.len() == 161, || format!("{} snapshots", traj.snapshots.len()))?;
    let params = config.classifier_params();
    let report = classify(&traj, &params).map_err(|e| e.to_string())?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!(
        "161 snapshots, m={} W={}, final silo count {}, pattern {}",
        params.m,
        params.window,
        traj.snapshots[160].silo_count,
        report.label
    ))
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("A1", a1),
        ("A2", a2),
        ("A3", a3),
        ("A4", a4),
        ("A5", a5),
        ("A6", a6),
        ("A7", a7),
        ("A8", a8),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("{name} PASS  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
