//! Synthetic datasets, contamination, point-cloud quantization, evaluation
//! and the end-to-end benchmark pipeline.

use std::io::Write;
use std::time::Instant;

use rand::prelude::*;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed::wb_cost;
use crate::free::{solve_free_rwb, FreeConfig, FreeResult};
use crate::measures::{squared_euclidean, DiscreteMeasure, Point, WeightedMeasureSet};
use crate::ot::wasserstein_distance;

/// Side length of the box holding the shared cluster centers.
pub const CENTER_BOX: f64 = 4.0;

/// Outlier injection and location shifts applied to a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub zeta: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub shift_count: usize,
    pub shift_std: f64,
    pub seed: u64,
}

impl ContaminationSpec {
    fn validate(&self, m: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(Error::input(format!("zeta = {} must lie in [0, 1)", self.zeta)));
        }
        if !(self.noise_std >= 0.0 && self.shift_std >= 0.0) {
            return Err(Error::input("standard deviations must be nonnegative"));
        }
        if !self.noise_mean.is_finite() || !self.noise_std.is_finite() || !self.shift_std.is_finite() {
            return Err(Error::input("noise parameters must be finite"));
        }
        if self.shift_count > m {
            return Err(Error::input(format!(
                "cannot shift {} measures out of {m}",
                self.shift_count
            )));
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian_point(rng: &mut ChaCha8Rng, center: &[f64], std: f64) -> Result<Point> {
    let normal = Normal::new(0.0, std).map_err(|e| Error::input(e.to_string()))?;
    Point::new(center.iter().map(|c| c + normal.sample(rng)).collect())
}

/// `m` measures of `n` uniformly weighted atoms in `R^d`. Atom `i` of every
/// measure is drawn from a Gaussian with standard deviation `spread` around
/// the `i`-th of `n` shared centers placed uniformly in `[0, 4]^d`.
pub fn gen_gaussian_dataset(m: usize, n: usize, d: usize, spread: f64, seed: u64) -> Result<WeightedMeasureSet> {
    if m == 0 || n == 0 || d == 0 {
        return Err(Error::input("m, n and d must be at least 1"));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::input(format!("spread {spread} must be nonnegative")));
    }
    let mut rng = stream_rng(seed, 0);
    let side = Uniform::new_inclusive(0.0, CENTER_BOX);
    let centers: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| side.sample(&mut rng)).collect()).collect();
    let measures = (0..m)
        .map(|l| {
            let mut rng = stream_rng(seed, 1 + l as u64);
            let atoms = centers
                .iter()
                .map(|c| gaussian_point(&mut rng, c, spread))
                .collect::<Result<Vec<_>>>()?;
            DiscreteMeasure::uniform(atoms)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightedMeasureSet::uniform(measures)
}

/// Mix `zeta` mass of Gaussian noise into every measure, then translate
/// `shift_count` randomly chosen measures by a Gaussian vector.
///
/// Each measure becomes `(1 - zeta) mu + zeta * noise`, the noise being
/// `max(1, ceil(n/4))` uniformly weighted atoms with coordinates drawn from
/// `N(noise_mean, noise_std^2)`.
pub fn contaminate(dataset: &WeightedMeasureSet, spec: &ContaminationSpec) -> Result<WeightedMeasureSet> {
    let m = dataset.len();
    spec.validate(m)?;
    let d = dataset.dim();
    let mut shifted = vec![false; m];
    if spec.shift_count > 0 {
        let mut rng = stream_rng(spec.seed, 0);
        for l in index::sample(&mut rng, m, spec.shift_count) {
            shifted[l] = true;
        }
    }
    let measures = dataset
        .measures()
        .iter()
        .enumerate()
        .map(|(l, mu)| {
            let (mut points, mut weights) = mu.clone().into_parts();
            if spec.zeta > 0.0 {
                let mut rng = stream_rng(spec.seed, 1 + 2 * l as u64);
                let count = points.len().div_ceil(4).max(1);
                weights.iter_mut().for_each(|w| *w *= 1.0 - spec.zeta);
                let center = vec![spec.noise_mean; d];
                for _ in 0..count {
                    points.push(gaussian_point(&mut rng, &center, spec.noise_std)?);
                    weights.push(spec.zeta / count as f64);
                }
            }
            if shifted[l] {
                let mut rng = stream_rng(spec.seed, 2 + 2 * l as u64);
                let v = gaussian_point(&mut rng, &vec![0.0; d], spec.shift_std)?;
                points = points
                    .iter()
                    .map(|p| Point::new(p.coords().iter().zip(v.coords()).map(|(a, b)| a + b).collect()))
                    .collect::<Result<_>>()?;
            }
            DiscreteMeasure::new(points, weights)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightedMeasureSet::new(measures, dataset.set_weights().to_vec())
}

/// Largest distance between two atoms anywhere in the dataset.
pub fn dataset_diameter(dataset: &WeightedMeasureSet) -> f64 {
    let points: Vec<&Point> = dataset.measures().iter().flat_map(|mu| mu.locations()).collect();
    let mut best: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(squared_euclidean(p, q));
        }
    }
    best.sqrt()
}

/// k-means quantization of a point cloud into a measure: k-means++ seeding,
/// then Lloyd iterations (at most 100). Weights are cluster sizes over the
/// total count.
pub fn quantize_pointcloud(points: &[Point], k: usize, seed: u64) -> Result<DiscreteMeasure> {
    Ok(kmeans(points, k, seed)?.0)
}

/// k-means with the per-iteration objective history, for diagnostics.
pub fn kmeans(points: &[Point], k: usize, seed: u64) -> Result<(DiscreteMeasure, Vec<f64>)> {
    if k == 0 || k > points.len() {
        return Err(Error::input(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let d = points[0].dim();
    if points.iter().any(|p| p.dim() != d) {
        return Err(Error::input("points have mixed dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![points[rng.gen_range(0..points.len())].coords().to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq(p.coords(), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            while nearest[chosen] == 0.0 {
                chosen -= 1;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[pick].coords().to_vec());
        let c = centers.last().expect("just pushed");
        for (dist, p) in nearest.iter_mut().zip(points) {
            *dist = dist.min(sq(p.coords(), c));
        }
    }

    let mut assignment = vec![0usize; points.len()];
    let mut history = Vec::new();
    for _ in 0..100 {
        let mut changed = false;
        let mut objective = 0.0;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (best, dist) = centers
                .iter()
                .enumerate()
                .map(|(j, c)| (j, sq(p.coords(), c)))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            if best != *a {
                changed = true;
                *a = best;
            }
            objective += dist;
        }
        history.push(objective);
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.coords()) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        if !changed && history.len() > 1 {
            break;
        }
    }
    let mut counts = vec![0.0; k];
    for &a in &assignment {
        counts[a] += 1.0;
    }
    let total = points.len() as f64;
    let locations = centers.into_iter().map(Point::new).collect::<Result<Vec<_>>>()?;
    let measure = DiscreteMeasure::new_normalized(locations, counts.iter().map(|c| c / total).collect())?;
    Ok((measure, history))
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Evaluation of a computed barycenter against a reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub runtime_s: Option<f64>,
    /// `W_z` between the computed and the reference barycenter.
    pub wd: f64,
    /// Plain barycenter objective of the computed barycenter on the clean data.
    pub cost: f64,
}

pub fn evaluate(
    clean: &WeightedMeasureSet,
    nu: &DiscreteMeasure,
    reference: &DiscreteMeasure,
    z: f64,
    runtime_s: Option<f64>,
) -> Result<EvalReport> {
    Ok(EvalReport {
        runtime_s,
        wd: wasserstein_distance(nu, reference, z)?,
        cost: wb_cost(clean, nu, z)?,
    })
}

/// One CSV row of a benchmark table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub zeta: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub runtime_s: Option<f64>,
    pub wd: f64,
    pub cost: f64,
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[ReportRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Parameters of the benchmark pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub spread: f64,
    pub zeta: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub shift_count: usize,
    pub shift_std: f64,
    pub z: f64,
    pub epsilon: f64,
    pub gamma: usize,
    pub t_init: usize,
    pub iterations: usize,
    pub ot_epsilon: f64,
    pub seed: u64,
    /// Fill in wall-clock runtimes; off by default so reruns are byte-identical.
    pub timing: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            m: 200,
            n: 8,
            d: 2,
            spread: 0.3,
            zeta: 0.2,
            noise_mean: 60.0,
            noise_std: 60.0,
            shift_count: 0,
            shift_std: 0.0,
            z: 2.0,
            epsilon: 0.2,
            gamma: 200,
            t_init: 5,
            iterations: 20,
            ot_epsilon: 1e-3,
            seed: 0,
            timing: false,
        }
    }
}

impl BenchConfig {
    fn free_config(&self, zeta: f64, seed: u64) -> FreeConfig {
        FreeConfig {
            epsilon: self.epsilon,
            gamma: self.gamma,
            t_init: self.t_init,
            iterations: self.iterations,
            ot_epsilon: self.ot_epsilon,
            ..FreeConfig::new(self.z, zeta, seed)
        }
    }

    fn contamination(&self) -> ContaminationSpec {
        ContaminationSpec {
            zeta: self.zeta,
            noise_mean: self.noise_mean,
            noise_std: self.noise_std,
            shift_count: self.shift_count,
            shift_std: self.shift_std,
            seed: self.seed.wrapping_add(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.free_config(self.zeta, self.seed).validate()?;
        self.contamination().validate(self.m)?;
        if self.m == 0 || self.n == 0 || self.d == 0 {
            return Err(Error::input("m, n and d must be at least 1"));
        }
        Ok(())
    }
}

/// Output of [`run_bench`].
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
    pub clean: WeightedMeasureSet,
    pub contaminated: WeightedMeasureSet,
    pub reference: FreeResult,
    pub robust: FreeResult,
    pub plain: FreeResult,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Generate clean data, compute a reference barycenter on it, contaminate,
/// then solve with the robust objective and with the plain one and evaluate
/// both on the clean data.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let clean = gen_gaussian_dataset(config.m, config.n, config.d, config.spread, config.seed)?;
    let timed = |f: &dyn Fn() -> Result<FreeResult>| -> Result<(FreeResult, Option<f64>)> {
        let start = Instant::now();
        let r = f()?;
        let t = start.elapsed().as_secs_f64();
        Ok((r, config.timing.then_some(t)))
    };
    let solve_seed = config.seed.wrapping_add(2);

    log::info!("bench: reference barycenter on clean data");
    let (reference, t_ref) = timed(&|| solve_free_rwb(&clean, &config.free_config(0.0, solve_seed)))?;
    let contaminated = contaminate(&clean, &config.contamination())?;
    log::info!("bench: robust barycenter on contaminated data");
    let (robust, t_rob) =
        timed(&|| solve_free_rwb(&contaminated, &config.free_config(config.zeta, solve_seed)))?;
    log::info!("bench: plain barycenter on contaminated data");
    let (plain, t_plain) = timed(&|| solve_free_rwb(&contaminated, &config.free_config(0.0, solve_seed)))?;

    let reference_nu = &reference.barycenter;
    let mut rows = Vec::new();
    for (method, result, runtime) in [
        ("clean-ref", &reference, t_ref),
        ("free-rwb", &robust, t_rob),
        ("wb", &plain, t_plain),
    ] {
        let report = evaluate(&clean, &result.barycenter, reference_nu, config.z, runtime)?;
        rows.push(ReportRow {
            method: method.to_string(),
            zeta: config.zeta,
            noise_mean: config.noise_mean,
            noise_std: config.noise_std,
            runtime_s: report.runtime_s,
            wd: report.wd,
            cost: report.cost,
        });
    }
    Ok(BenchReport {
        rows,
        clean,
        contaminated,
        reference,
        robust,
        plain,
    })
}
