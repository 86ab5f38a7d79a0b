//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the library's numeric code.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use telemafuse::features::{FeatureRow, FeatureTable};
use telemafuse::fusion::ProbabilityMatrix;
use telemafuse::BinaryLabel;
use telemafuse::PipelineConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The non-zero root of `g1g2g3 λ² + (g1g2+g1g3+g2g3) λ + (Σg − 1) = 0`
/// above −1, or 0 for an additive triple.
pub fn lambda_quadratic(g: [f64; 3]) -> f64 {
    let a = g[0] * g[1] * g[2];
    let b = g[0] * g[1] + g[0] * g[2] + g[1] * g[2];
    let c = g[0] + g[1] + g[2] - 1.0;
    if c == 0.0 {
        return 0.0;
    }
    let disc = (b * b - 4.0 * a * c).sqrt();
    // numerically stable pair of roots
    let q = -0.5 * (b + b.signum() * disc);
    let roots = [q / a, c / q];
    roots
        .into_iter()
        .filter(|r| *r > -1.0 && r.abs() > 1e-15)
        .min_by(|x, y| x.abs().total_cmp(&y.abs()))
        .expect("one admissible root")
}

/// Closed-form λ-measure of the set encoded by `mask`.
pub fn measure_closed_form(g: &[f64], lambda: f64, mask: usize) -> f64 {
    let members = (0..g.len()).filter(|i| mask & (1 << i) != 0);
    if lambda == 0.0 {
        return members.map(|i| g[i]).sum();
    }
    (members.map(|i| 1.0 + lambda * g[i]).product::<f64>() - 1.0) / lambda
}

/// Choquet integral in the descending form `Σ f₍ᵢ₎ (g(Aᵢ) − g(Aᵢ₋₁))`,
/// `Aᵢ` holding the i largest supports.
pub fn choquet_descending(f: &[f64], g: &[f64], lambda: f64) -> f64 {
    let mut order: Vec<usize> = (0..f.len()).collect();
    order.sort_by(|&a, &b| f[b].partial_cmp(&f[a]).unwrap());
    let mut mask = 0usize;
    let mut prev = 0.0;
    let mut total = 0.0;
    for i in order {
        mask |= 1 << i;
        let gm = measure_closed_form(g, lambda, mask);
        total += f[i] * (gm - prev);
        prev = gm;
    }
    total
}

/// Exhaustive pairwise AUC with class 1 as positive.
pub fn pairwise_auc(truth: &[BinaryLabel], scores: &[f64]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, ti) in truth.iter().enumerate() {
        if *ti != BinaryLabel::Class1 {
            continue;
        }
        for (j, tj) in truth.iter().enumerate() {
            if *tj != BinaryLabel::Class0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

/// The fourteen window statistics written out one formula at a time.
pub fn direct_stats(x: &[f64]) -> [f64; 14] {
    let n = x.len();
    let nf = n as f64;
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = s[0];
    let max = s[n - 1];
    let mean = if min == max { min } else { x.iter().sum::<f64>() / nf };
    let median = if n % 2 == 1 { s[n / 2] } else { (s[n / 2 - 1] + s[n / 2]) / 2.0 };
    let quant = |p: f64| {
        let h = (nf - 1.0) * p;
        let lo = h.floor();
        let hi = h.ceil();
        s[lo as usize] + (h - lo) * (s[hi as usize] - s[lo as usize])
    };
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let ss: f64 = dev.iter().map(|d| d * d).sum();
    let std = (ss / (nf - 1.0)).sqrt();
    let aad = dev.iter().map(|d| d.abs()).sum::<f64>() / nf;
    let m2 = ss / nf;
    let m3 = dev.iter().map(|d| d.powi(3)).sum::<f64>() / nf;
    let m4 = dev.iter().map(|d| d.powi(4)).sum::<f64>() / nf;
    let skew = if m2 == 0.0 { 0.0 } else { m3 / m2.powf(1.5) };
    let kurt = if m2 == 0.0 { 0.0 } else { m4 / (m2 * m2) - 3.0 };
    let entropy = if max == min {
        0.0
    } else {
        // bin = number of interior edges at or below the value
        let edges: Vec<f64> = (1..16).map(|k| min + (max - min) * k as f64 / 16.0).collect();
        let mut counts = [0usize; 16];
        for &v in x {
            counts[edges.iter().filter(|&&e| v >= e).count()] += 1;
        }
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.log2()
            })
            .sum()
    };
    let autocorr = if ss == 0.0 {
        0.0
    } else {
        (0..n - 1).map(|t| dev[t] * dev[t + 1]).sum::<f64>() / ss
    };
    let signs: Vec<f64> = dev.iter().filter(|d| **d != 0.0).map(|d| d.signum()).collect();
    let zc = signs.windows(2).filter(|w| w[0] != w[1]).count() as f64;
    let energy = x.iter().map(|v| v * v).sum::<f64>() / nf;
    [
        min, max, mean, median, quant(0.25), quant(0.75), std, aad, skew, kurt, entropy, autocorr, zc,
        energy,
    ]
}

pub fn pm(rows: [[f64; 2]; 2]) -> ProbabilityMatrix {
    ProbabilityMatrix {
        rates: rows.iter().map(|r| r.to_vec()).collect(),
    }
}

/// Hand-derived fixture: two classifiers, PM1 = [[0.8,0.2],[0.3,0.7]],
/// PM2 = [[0.9,0.1],[0.4,0.6]], supports h1 = (0.8,0.2), h2 = (0.3,0.7),
/// w1 = 0.9, w2 = 0.6, ε = 1e-4. Classifier 1 votes class 0, classifier 2
/// votes class 1.
pub mod fixture {
    pub const PM1: [[f64; 2]; 2] = [[0.8, 0.2], [0.3, 0.7]];
    pub const PM2: [[f64; 2]; 2] = [[0.9, 0.1], [0.4, 0.6]];
    pub const H1: [f64; 2] = [0.8, 0.2];
    pub const H2: [f64; 2] = [0.3, 0.7];
    /// g*⁰₁ = 0.8·((0.8−0.2)/0.8)^0.9 · (0.1/0.2)^0.6
    pub const G0_1: f64 = 0.40740572414573534;
    /// g*⁰₂ = 0.9·ε^0.9 (classifier 1 claims class 0 itself)
    pub const G0_2: f64 = 0.00021064492291359162;
    pub const G1_1: f64 = 0.00016029868742651276;
    /// g*¹₂ = 0.6·((0.6−0.4)/0.6)^0.9 · (0.3/0.4)^0.6
    pub const G1_2: f64 = 0.18783602070886243;
    pub const LAMBDA_0: f64 = 6902.794219319131;
    pub const LAMBDA_1: f64 = 26968.025637696184;
    pub const C0: f64 = 0.5037028620728676;
    pub const C1: f64 = 0.2939180103544312;
    pub const SCORE: f64 = 0.36849337889063466;
}

/// Two-class Gaussian data: the first `informative` columns have class
/// means ±`sep`/2, the rest are pure noise. Labels alternate by row and
/// every four consecutive rows share a driver.
pub fn gaussian_table(n: usize, n_features: usize, informative: usize, sep: f64, seed: u64) -> FeatureTable {
    let mut r = rng(seed);
    let rows = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { BinaryLabel::Class0 } else { BinaryLabel::Class1 };
            let shift = if label == BinaryLabel::Class1 { sep / 2.0 } else { -sep / 2.0 };
            let values = (0..n_features)
                .map(|j| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    if j < informative { z + shift } else { z }
                })
                .collect();
            FeatureRow {
                trip_id: format!("trip{i:04}"),
                driver_id: format!("drv{:03}", i / 4),
                label: Some(label),
                values,
            }
        })
        .collect();
    FeatureTable {
        names: (0..n_features).map(|j| format!("f{j:02}")).collect(),
        rows,
    }
}

pub fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

/// A pipeline config small enough for sub-second end-to-end runs.
pub fn small_config() -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed: 7,
        ..Default::default()
    };
    cfg.window.length_s = 64;
    cfg.window.stride_s = 64;
    cfg.forest.n_trees = 20;
    cfg.bagging.max_features = 5;
    cfg.bagging.max_iterations = 8;
    cfg.evaluation.folds = 3;
    cfg.synth.drivers_per_class = 6;
    cfg.synth.trip_duration_s = 256;
    cfg
}
