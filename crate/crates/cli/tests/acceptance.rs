//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances, instance counts and runtime budgets are
//! pinned as constants next to each check.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use oodx_core::detectors::{
    d2u, energy, msp, scaled_msp, EnergyForm, KnnIndex, LofModel, SearchBackend,
    LOF_ZERO_DISTANCE_EPSILON,
};
use oodx_core::fusion::normalize;
use oodx_core::gaussian::DEFAULT_SHRINKAGE;
use oodx_core::synthbench::{generate, OodMode, SynthPair, SynthSpec};
use oodx_core::{
    auroc, calibrate, far95, gnome, Aggregator, FeatureKind, FeatureSet, GaussianModel, LogitSet,
    Matrix, Normalization, ScoreVector, Vector,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < budget, || {
        format!("took {took:.2?}, budget {budget:?}")
    })
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, quantized: bool) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            if quantized {
                r.random_range(-2i32..=2) as f32
            } else {
                r.random_range(-1.0f32..1.0)
            }
        })
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

// ---------------------------------------------------------------- metrics

fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut credit = 0.0;
    for &a in id {
        for &b in ood {
            if a > b {
                credit += 1.0;
            } else if a == b {
                credit += 0.5;
            }
        }
    }
    credit / (id.len() * ood.len()) as f64
}

fn tied_scores(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if r.random_bool(0.6) {
                r.random_range(0..12) as f64 / 4.0
            } else {
                r.random_range(-1.0..4.0)
            }
        })
        .collect()
}

fn auroc_oracle() -> Outcome {
    const INSTANCES: usize = 200;
    const MAX_N: usize = 500;
    const TOL: f64 = 1e-12;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for i in 0..INSTANCES {
        let n_id = r.random_range(1..=MAX_N);
        let id = tied_scores(&mut r, n_id);
        let n_ood = r.random_range(1..=MAX_N);
        let ood = tied_scores(&mut r, n_ood);
        let got = auroc(&id, &ood).map_err(|e| e.to_string())?;
        let want = brute_auroc(&id, &ood);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= TOL, || {
            format!("instance {i}: {got} vs brute force {want}")
        })?;
    }
    within_budget(start, BUDGET)?;
    Ok(format!("{INSTANCES} instances, max |Δ| = {worst:e}"))
}

/// Largest observed ID score accepting at least 95% of ID samples.
fn sweep_far95(id: &[f64], ood: &[f64]) -> (f64, f64) {
    let n = id.len();
    let mut best: Option<f64> = None;
    for &t in id {
        let accepted = id.iter().filter(|&&s| s >= t).count();
        if 100 * accepted >= 95 * n && best.is_none_or(|b| t > b) {
            best = Some(t);
        }
    }
    let gamma = best.expect("min ID score always qualifies");
    let far = ood.iter().filter(|&&s| s >= gamma).count() as f64 / ood.len() as f64;
    (far, gamma)
}

fn far95_sweep() -> Outcome {
    const INSTANCES: usize = 200;
    const MAX_N: usize = 400;
    const BUDGET: Duration = Duration::from_secs(10);
    let start = Instant::now();
    let mut r = rng(12);
    for i in 0..INSTANCES {
        let n_id = r.random_range(1..=MAX_N);
        let id = tied_scores(&mut r, n_id);
        let n_ood = r.random_range(1..=MAX_N);
        let ood = tied_scores(&mut r, n_ood);
        let got = far95(&id, &ood).map_err(|e| e.to_string())?;
        let (far, gamma) = sweep_far95(&id, &ood);
        ensure(got.far == far && got.gamma == gamma, || {
            format!(
                "instance {i}: far {} γ {} vs sweep far {far} γ {gamma}",
                got.far, got.gamma
            )
        })?;
    }
    let id: Vec<f64> = (1..=20).map(f64::from).collect();
    let fixture = far95(&id, &[0.0, 1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
    ensure(fixture.far == 0.5, || {
        format!("fixture ID={{1..20}}, OOD={{0,1,2,3}} gave {}", fixture.far)
    })?;
    within_budget(start, BUDGET)?;
    Ok(format!(
        "{INSTANCES} instances match the sweep; fixture FAR95 = 0.5"
    ))
}

// ---------------------------------------------------------------- mahalanobis

fn labeled(r: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> FeatureSet {
    let labels: Vec<u32> = (0..n).map(|i| (i % classes) as u32).collect();
    let mut data = Vec::with_capacity(n * d);
    for &y in &labels {
        for j in 0..d {
            let mean = if j % classes == y as usize { 2.0 } else { 0.0 };
            data.push(mean + r.random_range(-1.0f32..1.0) * (1.0 + j as f32 * 0.3));
        }
    }
    FeatureSet::new(Matrix::new(n, d, data).unwrap())
        .with_labels(labels)
        .unwrap()
}

/// `L·U` with unit-diagonal `L`, so `|det| = Π U_ii ≥ 0.5^d`.
fn nonsingular(r: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    let mut u = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            if i == j {
                l[i * d + j] = 1.0;
                u[i * d + j] =
                    r.random_range(0.5..2.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
            } else if i > j {
                l[i * d + j] = r.random_range(-0.5..0.5);
            } else {
                u[i * d + j] = r.random_range(-0.5..0.5);
            }
        }
    }
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            a[i * d + j] = (0..d).map(|k| l[i * d + k] * u[k * d + j]).sum();
        }
    }
    a
}

fn affine(a: &[f64], b: &[f64], z: &[f32]) -> Vec<f32> {
    let d = z.len();
    (0..d)
        .map(|i| ((0..d).map(|j| a[i * d + j] * z[j] as f64).sum::<f64>() + b[i]) as f32)
        .collect()
}

fn mahalanobis_suite() -> Outcome {
    const CENTROID_CASES: usize = 20;
    const IDENTITY_CASES: usize = 20;
    const IDENTITY_TOL: f64 = 1e-5;
    const AFFINE_CASES: usize = 50;
    const AFFINE_MAX_D: usize = 8;
    const AFFINE_TOL: f64 = 1e-3;
    let mut r = rng(13);
    let err = |e: oodx_core::OodError| e.to_string();

    for case in 0..CENTROID_CASES {
        let d = r.random_range(1..=12);
        let c = r.random_range(1..=5);
        let train = labeled(&mut r, 40 * c, d, c);
        let model = GaussianModel::fit(&train, DEFAULT_SHRINKAGE).map_err(err)?;
        for (k, mu) in model.centroids().row_iter().enumerate() {
            let s = model
                .mahalanobis_score(&Vector::new(mu.to_vec()).map_err(err)?)
                .map_err(err)?;
            ensure(s == 0.0, || format!("case {case}: S(μ_{k}) = {s}"))?;
        }
    }

    for case in 0..IDENTITY_CASES {
        let d = r.random_range(1..=16);
        let c = r.random_range(1..=6);
        let centroids = random_matrix(&mut r, c, d, false);
        let model = GaussianModel::from_parts(
            centroids.clone(),
            &Matrix::identity(d),
            0.0,
            FeatureKind::Other,
            0,
        )
        .map_err(err)?;
        for _ in 0..10 {
            let z: Vec<f32> = (0..d).map(|_| r.random_range(-3.0f32..3.0)).collect();
            let want = centroids
                .row_iter()
                .map(|mu| {
                    mu.iter()
                        .zip(&z)
                        .map(|(&m, &v)| (v as f64 - m as f64).powi(2))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            let s = model
                .mahalanobis_score(&Vector::new(z.clone()).map_err(err)?)
                .map_err(err)?;
            ensure((s + want).abs() <= IDENTITY_TOL, || {
                format!("identity case {case}: S = {s}, -min ||z-μ||² = {}", -want)
            })?;
        }
    }

    let mut worst = 0.0f64;
    for case in 0..AFFINE_CASES {
        let d = r.random_range(1..=AFFINE_MAX_D);
        let c = r.random_range(1..=3);
        let train = labeled(&mut r, 60 * c + 10 * d, d, c);
        let a = nonsingular(&mut r, d);
        let b: Vec<f64> = (0..d).map(|_| r.random_range(-5.0..5.0)).collect();
        let moved_rows: Vec<Vec<f32>> = train
            .features
            .row_iter()
            .map(|z| affine(&a, &b, z))
            .collect();
        let moved = FeatureSet::new(Matrix::from_rows(&moved_rows).map_err(err)?)
            .with_labels(train.labels.clone().unwrap())
            .map_err(err)?;
        let m0 = GaussianModel::fit(&train, 0.0).map_err(err)?;
        let m1 = GaussianModel::fit(&moved, 0.0).map_err(err)?;
        for _ in 0..10 {
            let z: Vec<f32> = (0..d).map(|_| r.random_range(-3.0f32..5.0)).collect();
            let (md0, _) = m0.distance(&z).map_err(err)?;
            let (md1, _) = m1.distance(&affine(&a, &b, &z)).map_err(err)?;
            worst = worst.max((md0 - md1).abs());
            ensure((md0 - md1).abs() <= AFFINE_TOL, || {
                format!("affine case {case} (d={d}): MD {md0} vs {md1}")
            })?;
        }
    }
    Ok(format!(
        "S(μ_c) = 0 on {CENTROID_CASES} models; identity-Σ within {IDENTITY_TOL:e}; \
         affine invariance on {AFFINE_CASES} cases, max |Δ| = {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- knn / lof

fn oracle_normalize(row: &[f32]) -> Vec<f32> {
    let norm = row
        .iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        row.to_vec()
    } else {
        row.iter().map(|&v| (v as f64 / norm) as f32).collect()
    }
}

fn sorted_distances(data: &[Vec<f32>], q: &[f32], skip: Option<usize>) -> Vec<(f64, usize)> {
    let mut all: Vec<(f64, usize)> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, row)| {
            let mut sq = 0.0f64;
            for (&x, &y) in row.iter().zip(q) {
                let t = x as f64 - y as f64;
                sq += t * t;
            }
            (sq, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all
}

fn knn_lof_equivalence() -> Outcome {
    const KNN_INSTANCES: usize = 100;
    const KNN_MAX_N: usize = 1000;
    const KNN_MAX_D: usize = 64;
    const LOF_INSTANCES: usize = 20;
    const LOF_TOL: f64 = 1e-6;
    let mut r = rng(14);
    let err = |e: oodx_core::OodError| e.to_string();

    for inst in 0..KNN_INSTANCES {
        let n = r.random_range(1..=KNN_MAX_N);
        let d = r.random_range(1..=KNN_MAX_D);
        let k = r.random_range(1..=n.min(20));
        let quantized = r.random_bool(0.4);
        let train = random_matrix(&mut r, n, d, quantized);
        let queries = random_matrix(&mut r, 10, d, quantized);
        let normalized: Vec<Vec<f32>> = train.row_iter().map(oracle_normalize).collect();
        for backend in [SearchBackend::Exhaustive, SearchBackend::Pruned] {
            let index = KnnIndex::fit(&train, k).map_err(err)?.with_backend(backend);
            for q in queries.row_iter() {
                let nq = oracle_normalize(q);
                let nn: Vec<(f64, usize)> = sorted_distances(&normalized, &nq, None)
                    .into_iter()
                    .take(k)
                    .collect();
                let want = nn.iter().map(|(sq, _)| sq.sqrt()).sum::<f64>() / k as f64;
                let got = index.neighbors(q).map_err(err)?;
                let got_ids: Vec<usize> = got.iter().map(|&(i, _)| i).collect();
                let want_ids: Vec<usize> = nn.iter().map(|&(_, i)| i).collect();
                let got_mean = index.mean_distance(q).map_err(err)?;
                ensure(got_ids == want_ids && got_mean == want, || {
                    format!(
                        "knn instance {inst} ({backend:?}, n={n}, d={d}, k={k}): \
                         {got_ids:?}/{got_mean} vs {want_ids:?}/{want}"
                    )
                })?;
            }
        }
    }

    let mut worst = 0.0f64;
    for inst in 0..LOF_INSTANCES {
        let n = r.random_range(30..=300);
        let d = r.random_range(1..=16);
        let k = r.random_range(1..=25.min(n - 1));
        let normalize = inst % 2 == 1;
        let train = random_matrix(&mut r, n, d, false);
        let queries = random_matrix(&mut r, 40, d, false);
        let model = LofModel::fit(&train, k, normalize).map_err(err)?;

        let prep = |row: &[f32]| {
            if normalize {
                oracle_normalize(row)
            } else {
                row.to_vec()
            }
        };
        let data: Vec<Vec<f32>> = train.row_iter().map(prep).collect();
        let hood = |q: &[f32], skip: Option<usize>| -> Vec<(usize, f64)> {
            sorted_distances(&data, q, skip)
                .into_iter()
                .take(k)
                .map(|(sq, i)| (i, sq.sqrt()))
                .collect()
        };
        let hoods: Vec<Vec<(usize, f64)>> = (0..n).map(|i| hood(&data[i], Some(i))).collect();
        let kdist: Vec<f64> = hoods.iter().map(|h| h[k - 1].1).collect();
        let lrd_of = |h: &[(usize, f64)]| {
            let mean = h.iter().map(|&(o, dist)| dist.max(kdist[o])).sum::<f64>() / k as f64;
            1.0 / mean.max(LOF_ZERO_DISTANCE_EPSILON)
        };
        let lrd: Vec<f64> = hoods.iter().map(|h| lrd_of(h)).collect();
        for q in queries.row_iter() {
            let h = hood(&prep(q), None);
            let want = h.iter().map(|&(o, _)| lrd[o]).sum::<f64>() / k as f64 / lrd_of(&h);
            let got = model.factor(q).map_err(err)?;
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= LOF_TOL, || {
                format!("lof instance {inst} (n={n}, d={d}, k={k}): {got} vs {want}")
            })?;
        }
    }
    Ok(format!(
        "knn exact on {KNN_INSTANCES} instances (both backends); \
         lof on {LOF_INSTANCES} instances, max |Δ| = {worst:.2e}"
    ))
}

// ---------------------------------------------------------------- confidence

fn confidence_identities() -> Outcome {
    const BATCHES: usize = 100;
    const D2U_TOL: f64 = 1e-9;
    let mut r = rng(15);
    let err = |e: oodx_core::OodError| e.to_string();

    for b in 0..BATCHES {
        let c = r.random_range(2..=50);
        let rows = r.random_range(1..=64);
        let data: Vec<f32> = (0..rows * c)
            .map(|_| r.random_range(-20.0f32..20.0))
            .collect();
        let logits = LogitSet::new(Matrix::new(rows, c, data).map_err(err)?).map_err(err)?;

        let base = msp(&logits);
        let t1 = scaled_msp(&logits, 1.0).map_err(err)?;
        ensure(
            base.values
                .iter()
                .zip(&t1.values)
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            || format!("batch {b}: scaled_msp(T=1) differs from msp"),
        )?;

        let verbatim = energy(&logits, EnergyForm::Verbatim);
        ensure(verbatim.is_clean(), || {
            format!("batch {b}: unexpected saturation")
        })?;
        let lse = energy(&logits, EnergyForm::LogSumExp).value;
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
            idx
        };
        ensure(order(&verbatim.value.values) == order(&lse.values), || {
            format!("batch {b}: energy and -logsumexp orderings differ")
        })?;
    }

    for c in 2..=100usize {
        let level = r.random_range(-10.0f32..10.0);
        let uniform =
            LogitSet::new(Matrix::new(1, c, vec![level; c]).map_err(err)?).map_err(err)?;
        let u = d2u(&uniform).values[0];
        ensure(u.abs() <= D2U_TOL, || format!("d2u(uniform, C={c}) = {u}"))?;

        let mut point = vec![-1.0e4f32; c];
        point[r.random_range(0..c)] = 0.0;
        let point = LogitSet::new(Matrix::new(1, c, point).map_err(err)?).map_err(err)?;
        let p = d2u(&point).values[0];
        let ln_c = (c as f64).ln();
        ensure((p - ln_c).abs() <= D2U_TOL, || {
            format!("d2u(point mass, C={c}) = {p}, ln C = {ln_c}")
        })?;
    }
    Ok(format!(
        "T=1 bitwise on {BATCHES} batches; energy ranking = -logsumexp ranking; \
         d2u identities for C in 2..=100"
    ))
}

// ---------------------------------------------------------------- calibration

fn md_scores(pair: &SynthPair) -> Result<[[ScoreVector; 3]; 2], String> {
    let err = |e: oodx_core::OodError| e.to_string();
    let mut out = Vec::new();
    for space in [&pair.pre, &pair.ft] {
        let model = GaussianModel::fit(&space.train, DEFAULT_SHRINKAGE).map_err(err)?;
        out.push([
            model.score_batch(&space.val).map_err(err)?,
            model.score_batch(&space.test).map_err(err)?,
            model.score_batch(&space.ood).map_err(err)?,
        ]);
    }
    let ft = out.pop().unwrap();
    let pre = out.pop().unwrap();
    Ok([pre, ft])
}

fn scaled(s: &ScoreVector, c: f64) -> ScoreVector {
    let d: Vec<f64> = s.distance_values().iter().map(|v| v * c).collect();
    ScoreVector::from_distances(s.detector.clone(), s.ids.clone(), d).unwrap()
}

fn calibration_contract() -> Outcome {
    const MEAN_TOL: f64 = 1e-5;
    const STD_TOL: f64 = 1e-5;
    const SCALE_TOL: f64 = 1e-6;
    const SCALES: [f64; 5] = [1e-3, 0.5, 7.0, 100.0, 1e3];
    let err = |e: oodx_core::OodError| e.to_string();

    let mut vals: Vec<ScoreVector> = Vec::new();
    for (seed, mode) in [(1, OodMode::ShiftedManifold), (2, OodMode::HeldOutClass)] {
        let pair = generate(&SynthSpec::new(mode, seed)).map_err(err)?;
        let [pre, ft] = md_scores(&pair)?;
        vals.push(pre[0].clone());
        vals.push(ft[0].clone());
    }
    let mut r = rng(16);
    for _ in 0..20 {
        let n = r.random_range(2..=1000);
        let spread = 10f64.powi(r.random_range(-3..=3));
        let d: Vec<f64> = (0..n)
            .map(|_| r.random_range(0.0..1.0) * spread + 3.0)
            .collect();
        vals.push(
            ScoreVector::from_distances("random", oodx_core::data::sequential_ids(n), d).unwrap(),
        );
    }

    for (i, s) in vals.iter().enumerate() {
        let stats = calibrate(s, "val").map_err(err)?;
        let z: Vec<f64> = s
            .distance_values()
            .iter()
            .map(|&v| normalize(v, &stats, Normalization::Standardize))
            .collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        ensure(
            mean.abs() <= MEAN_TOL && (std - 1.0).abs() <= STD_TOL,
            || format!("vector {i}: standardized mean {mean:e}, std {std}"),
        )?;
        for c in SCALES {
            let t = scaled(s, c);
            let st = calibrate(&t, "val").map_err(err)?;
            for (a, b) in s.distance_values().iter().zip(t.distance_values()) {
                let za = normalize(*a, &stats, Normalization::Standardize);
                let zb = normalize(b, &st, Normalization::Standardize);
                ensure((za - zb).abs() <= SCALE_TOL, || {
                    format!("vector {i}, scale {c}: {za} vs {zb}")
                })?;
            }
        }
    }
    Ok(format!(
        "{} vectors standardize to mean 0 / std 1; invariant under {} scalings",
        vals.len(),
        SCALES.len()
    ))
}

// ---------------------------------------------------------------- synthbench

struct ModeRun {
    auroc_pre: f64,
    auroc_ft: f64,
    auroc_gnome: f64,
}

fn gnome_scores(
    pre: &[ScoreVector; 3],
    ft: &[ScoreVector; 3],
    mode: Normalization,
) -> Result<(ScoreVector, ScoreVector), String> {
    let err = |e: oodx_core::OodError| e.to_string();
    let sp = calibrate(&pre[0], "val").map_err(err)?;
    let sf = calibrate(&ft[0], "val").map_err(err)?;
    let test = gnome(&pre[1], &ft[1], &sp, &sf, Aggregator::Mean, mode).map_err(err)?;
    let ood = gnome(&pre[2], &ft[2], &sp, &sf, Aggregator::Mean, mode).map_err(err)?;
    Ok((test.scores, ood.scores))
}

fn trade_off_run(mode: OodMode, seed: u64) -> Result<ModeRun, String> {
    let err = |e: oodx_core::OodError| e.to_string();
    let pair = generate(&SynthSpec::new(mode, seed)).map_err(err)?;
    let [pre, ft] = md_scores(&pair)?;
    let (gt, go) = gnome_scores(&pre, &ft, Normalization::Standardize)?;
    Ok(ModeRun {
        auroc_pre: auroc(&pre[1].values, &pre[2].values).map_err(err)?,
        auroc_ft: auroc(&ft[1].values, &ft[2].values).map_err(err)?,
        auroc_gnome: auroc(&gt.values, &go.values).map_err(err)?,
    })
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn synthbench_trade_off() -> Outcome {
    const MIN_WINS: usize = 4;
    const GNOME_SLACK: f64 = 0.02;
    const BUDGET: Duration = Duration::from_secs(120);
    let start = Instant::now();
    let mut nss_wins = 0;
    let mut ss_wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        for mode in [OodMode::ShiftedManifold, OodMode::HeldOutClass] {
            let run = trade_off_run(mode, seed)?;
            match mode {
                OodMode::ShiftedManifold => nss_wins += usize::from(run.auroc_pre > run.auroc_ft),
                OodMode::HeldOutClass => ss_wins += usize::from(run.auroc_ft > run.auroc_pre),
            }
            let floor = run.auroc_pre.min(run.auroc_ft) - GNOME_SLACK;
            ensure(run.auroc_gnome >= floor, || {
                format!(
                    "{mode:?} seed {seed}: GNOME {:.4} < min({:.4}, {:.4}) - {GNOME_SLACK}",
                    run.auroc_gnome, run.auroc_pre, run.auroc_ft
                )
            })?;
            detail.push(format!(
                "{}{seed}: pre {:.3} ft {:.3} gnome {:.3}",
                if mode == OodMode::ShiftedManifold {
                    "nss"
                } else {
                    "ss"
                },
                run.auroc_pre,
                run.auroc_ft,
                run.auroc_gnome
            ));
        }
    }
    ensure(nss_wins >= MIN_WINS && ss_wins >= MIN_WINS, || {
        format!(
            "pre > ft on shifted-manifold in {nss_wins}/5, ft > pre on held-out-class \
             in {ss_wins}/5 (need {MIN_WINS}); {}",
            detail.join("; ")
        )
    })?;
    within_budget(start, BUDGET)?;
    Ok(format!(
        "shifted-manifold pre>ft {nss_wins}/5, held-out-class ft>pre {ss_wins}/5, \
         GNOME ≥ min - {GNOME_SLACK} in 10/10 ({})",
        detail.join("; ")
    ))
}

fn normalization_ablation() -> Outcome {
    const FT_MAGNIFICATION: f64 = 100.0;
    let err = |e: oodx_core::OodError| e.to_string();
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in SEEDS {
        let mut with = 0.0;
        let mut without = 0.0;
        for mode in [OodMode::ShiftedManifold, OodMode::HeldOutClass] {
            let pair = generate(&SynthSpec::new(mode, seed)).map_err(err)?;
            let [pre, ft] = md_scores(&pair)?;
            let ft = ft.map(|s| scaled(&s, FT_MAGNIFICATION));
            let (t, o) = gnome_scores(&pre, &ft, Normalization::Standardize)?;
            with += far95(&t.values, &o.values).map_err(err)?.far / 2.0;
            let (t, o) = gnome_scores(&pre, &ft, Normalization::None)?;
            without += far95(&t.values, &o.values).map_err(err)?.far / 2.0;
        }
        wins += usize::from(with < without);
        detail.push(format!(
            "seed {seed}: {:.2}% vs {:.2}%",
            with * 100.0,
            without * 100.0
        ));
    }
    ensure(wins * 2 > SEEDS.len(), || {
        format!(
            "normalized GNOME better in {wins}/5 seeds; {}",
            detail.join("; ")
        )
    })?;
    Ok(format!(
        "mean FAR95 normalized vs unnormalized, ft MD ×{FT_MAGNIFICATION}: {wins}/5 seeds ({})",
        detail.join("; ")
    ))
}

// ---------------------------------------------------------------- determinism

fn oodx(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_oodx"))
        .arg("--threads")
        .arg("1")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!(
            "oodx {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    Ok(out.stdout)
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Runs every command once into `run`, returning stdout of each command.
fn run_all_commands(data: &Path, run: &Path) -> Result<Vec<Vec<u8>>, String> {
    fs::create_dir_all(run).map_err(|e| e.to_string())?;
    let d = |f: &str| data.join(f).display().to_string();
    let o = |f: &str| run.join(f).display().to_string();
    let mut stdout = Vec::new();
    for (det, extra) in [
        ("md", vec![]),
        ("knn", vec!["--k", "5"]),
        ("lof", vec!["--k-lof", "7"]),
    ] {
        let mut args = vec!["fit", "--detector", det, "--train"];
        let train = d("pre_train.oodx");
        let model = o(&format!("{det}.oodx"));
        args.extend([train.as_str(), "--out", model.as_str()]);
        args.extend(extra);
        stdout.push(oodx(&args)?);
        for split in ["val", "test", "ood"] {
            let input = d(&format!("pre_{split}.oodx"));
            let out = o(&format!("{det}_{split}.oodx"));
            stdout.push(oodx(&[
                "score",
                "--detector",
                det,
                "--model",
                &model,
                "--input",
                &input,
                "--out",
                &out,
            ])?);
        }
    }
    for det in ["msp", "scaling", "energy", "d2u"] {
        for split in ["test", "ood"] {
            let input = d(&format!("logits_{split}.oodx"));
            let out = o(&format!("{det}_{split}.oodx"));
            stdout.push(oodx(&[
                "score",
                "--detector",
                det,
                "--input",
                &input,
                "--out",
                &out,
            ])?);
        }
    }
    for split in ["test", "ood"] {
        let input = d(&format!("tokens_{split}.jsonl"));
        let out = o(&format!("ppl_{split}.oodx"));
        stdout.push(oodx(&[
            "score",
            "--detector",
            "ppl",
            "--input",
            &input,
            "--out",
            &out,
        ])?);
    }
    for det in ["md", "knn"] {
        stdout.push(oodx(&[
            "calibrate",
            "--scores",
            &o(&format!("{det}_val.oodx")),
            "--out",
            &o(&format!("{det}_calib.json")),
        ])?);
    }
    for split in ["test", "ood"] {
        stdout.push(oodx(&[
            "fuse",
            "--scores",
            &o(&format!("md_{split}.oodx")),
            &o(&format!("knn_{split}.oodx")),
            "--calib",
            &o("md_calib.json"),
            &o("knn_calib.json"),
            "--agg",
            "max",
            "--out",
            &o(&format!("fused_{split}.oodx")),
        ])?);
    }
    for det in ["md", "fused", "energy", "ppl"] {
        stdout.push(oodx(&[
            "eval",
            "--id",
            &o(&format!("{det}_test.oodx")),
            "--ood",
            &o(&format!("{det}_ood.oodx")),
            "--out",
            &o(&format!("{det}_report.json")),
        ])?);
    }
    stdout.push(oodx(&[
        "pipeline",
        "--pair",
        &d("synth.pair.json"),
        "--out",
        &o("pipeline"),
        "--detectors",
        "md-pre,md-ft,gnome,knn-ft,lof-pre,msp,scaling,energy,d2u,ppl",
        "--k-lof",
        "7",
    ])?);
    Ok(stdout)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let synth = |dir: &Path| {
        oodx(&[
            "synth",
            "--out",
            &dir.display().to_string(),
            "--mode",
            "held-out-class",
            "--seed",
            "9",
            "--train-per-class",
            "60",
            "--eval-per-class",
            "25",
            "--ood-count",
            "50",
        ])
    };
    synth(&root.join("data_a"))?;
    synth(&root.join("data_b"))?;
    let out_a = run_all_commands(&root.join("data_a"), &root.join("run_a"))?;
    let out_b = run_all_commands(&root.join("data_a"), &root.join("run_b"))?;
    ensure(out_a == out_b, || "stdout differs between runs".into())?;

    let mut compared = 0;
    for (a, b) in [("data_a", "data_b"), ("run_a", "run_b")] {
        let fa = files_under(&root.join(a));
        let fb = files_under(&root.join(b));
        ensure(fa == fb, || format!("{a} and {b} hold different file sets"))?;
        for f in fa {
            let x = fs::read(root.join(a).join(&f)).map_err(|e| e.to_string())?;
            let y = fs::read(root.join(b).join(&f)).map_err(|e| e.to_string())?;
            ensure(x == y, || format!("{} differs between runs", f.display()))?;
            compared += 1;
        }
    }
    Ok(format!(
        "{compared} output files byte-identical across re-runs at --threads 1"
    ))
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [Criterion; 9] = [
        ("auroc-oracle-equivalence", auroc_oracle),
        ("far95-sweep-equivalence", far95_sweep),
        ("mahalanobis-analytic-suite", mahalanobis_suite),
        ("knn-lof-brute-force-equivalence", knn_lof_equivalence),
        ("confidence-family-identities", confidence_identities),
        ("calibration-contract", calibration_contract),
        ("synthbench-trade-off", synthbench_trade_off),
        ("normalization-ablation-direction", normalization_ablation),
        ("cli-determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        match check() {
            Ok(detail) => println!("PASS {name} ({:.2?}): {detail}", start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({:.2?}): {why}", start.elapsed());
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
