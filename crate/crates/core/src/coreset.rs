//! Layered-sampling coreset of a measure collection around an anchor.
//!
//! Measures are grouped into annuli by their robust distance to the anchor.
//! Inner annuli are subsampled (with replacement, proportional to their set
//! weights) down to a fixed budget; the outermost annulus is collapsed to its
//! farthest and nearest members, weighted so that its mass and its
//! contribution to the objective at the anchor are both preserved.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixed::{rwb_cost, solve_fixed_awb, FixedProblem};
use crate::measures::{power, DiscreteMeasure, MeasureFile, WeightedMeasureSet};
use crate::robust::robust_power;

/// Ball `{nu : W_z(anchor, nu) <= radius}` on which the coreset guarantee holds.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalRegion {
    pub anchor: DiscreteMeasure,
    pub radius: f64,
}

impl LocalRegion {
    pub fn new(anchor: DiscreteMeasure, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::input(format!("radius {radius} must be nonnegative")));
        }
        Ok(LocalRegion { anchor, radius })
    }

    /// Plain `W_z` distance from the anchor.
    pub fn distance(&self, nu: &DiscreteMeasure, z: f64) -> Result<f64> {
        crate::ot::wasserstein_distance(&self.anchor, nu, z)
    }

    pub fn contains(&self, nu: &DiscreteMeasure, z: f64) -> Result<bool> {
        Ok(self.distance(nu, z)? <= self.radius)
    }
}

/// Assignment of every measure to one of `k + 2` annuli.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPartition {
    /// `z`-th root of the robust objective at the anchor.
    pub h: f64,
    pub k: usize,
    pub layers: Vec<Vec<usize>>,
    /// Robust `W_z` distance of each measure to the anchor.
    pub distances: Vec<f64>,
    /// The same distances raised to the power `z`.
    pub powers: Vec<f64>,
}

impl LayerPartition {
    /// Index of the outermost layer.
    pub fn outer(&self) -> usize {
        self.k + 1
    }
}

/// Number of inner annuli for accuracy `epsilon`: `ceil(log2(1/epsilon))`.
pub fn layer_count(epsilon: f64) -> usize {
    ((1.0 / epsilon).log2() - 1e-12).ceil().max(0.0) as usize
}

/// Layer of a measure at distance `d`, for radius `h` and `k` inner annuli.
pub fn layer_of(d: f64, h: f64, k: usize) -> usize {
    if d <= h {
        return 0;
    }
    let mut bound = h;
    for layer in 1..=k {
        bound *= 2.0;
        if d <= bound {
            return layer;
        }
    }
    k + 1
}

/// Partition the dataset by robust distance to `anchor`.
///
/// Returns [`Error::DegeneratePartition`] when the anchor has zero cost.
pub fn partition_layers(
    dataset: &WeightedMeasureSet,
    anchor: &DiscreteMeasure,
    epsilon: f64,
    zeta: f64,
    z: f64,
) -> Result<LayerPartition> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::input(format!("epsilon = {epsilon} must lie in (0, 1)")));
    }
    if anchor.dim() != dataset.dim() {
        return Err(Error::input("anchor dimension differs from the dataset"));
    }
    let powers: Vec<f64> = dataset
        .measures()
        .par_iter()
        .map(|mu| robust_power(mu, anchor, zeta, z))
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = powers.iter().map(|p| p.powf(1.0 / z)).collect();
    let objective = powers
        .iter()
        .zip(dataset.set_weights())
        .map(|(p, w)| p * w)
        .sum::<f64>()
        / dataset.total_weight();
    let h = objective.powf(1.0 / z);
    if h <= 0.0 {
        return Err(Error::DegeneratePartition);
    }
    let k = layer_count(epsilon);
    let mut layers = vec![Vec::new(); k + 2];
    for (l, &d) in distances.iter().enumerate() {
        layers[layer_of(d, h, k)].push(l);
    }
    Ok(LayerPartition {
        h,
        k,
        layers,
        distances,
        powers,
    })
}

/// Collapse the outer layer to its farthest and nearest members.
///
/// `powers` are `W_z^z` values to the anchor and `weights` the set weights,
/// both indexed like `outer`. The returned `(position, tau)` pairs refer to
/// positions within `outer`; the farthest member comes first. The weights
/// satisfy `tau_max + tau_min = sum(weights)` and
/// `tau_max * D_max + tau_min * D_min = sum(weights * powers)`.
pub fn outer_layer_weights(powers: &[f64], weights: &[f64]) -> Result<Vec<(usize, f64)>> {
    if powers.is_empty() || powers.len() != weights.len() {
        return Err(Error::input("outer layer must be nonempty with one weight per measure"));
    }
    let total: f64 = weights.iter().sum();
    if powers.len() == 1 {
        return Ok(vec![(0, total)]);
    }
    let argmax = (0..powers.len())
        .max_by(|&i, &j| powers[i].total_cmp(&powers[j]).then(j.cmp(&i)))
        .expect("nonempty");
    let argmin = (0..powers.len())
        .min_by(|&i, &j| powers[i].total_cmp(&powers[j]).then(i.cmp(&j)))
        .expect("nonempty");
    let (d_max, d_min) = (powers[argmax], powers[argmin]);
    if d_max - d_min <= 1e-15 * d_max.abs().max(1.0) {
        return Ok(vec![(argmax, total)]);
    }
    let moment: f64 = powers.iter().zip(weights).map(|(p, w)| p * w).sum();
    let tau_max = ((moment - total * d_min) / (d_max - d_min)).clamp(0.0, total);
    let tau_min = total - tau_max;
    debug_assert!(tau_max >= 0.0 && tau_min >= 0.0);
    Ok([(argmax, tau_max), (argmin, tau_min)]
        .into_iter()
        .filter(|(_, t)| *t > 0.0)
        .collect())
}

/// How a coreset entry was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    /// Layer small enough to keep every member with its own weight.
    Kept,
    /// One of the budgeted draws from a large layer.
    Sampled,
    OuterMax,
    OuterMin,
    /// One representative for a group of identical measures.
    Representative,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntryProvenance {
    pub source_index: usize,
    pub layer: usize,
    pub kind: EntryKind,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub size: usize,
    pub mass: f64,
    pub retained: usize,
    pub draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    pub h: f64,
    pub k: usize,
    pub entries: Vec<EntryProvenance>,
    pub layers: Vec<LayerSummary>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoresetResult {
    pub coreset: WeightedMeasureSet,
    pub provenance: Provenance,
}

impl CoresetResult {
    pub fn len(&self) -> usize {
        self.coreset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coreset.is_empty()
    }

    /// Dataset JSON with the coreset weights under `"tau"` as well as
    /// `"set_weights"`, plus a `"provenance"` block. It loads back as a
    /// dataset whose set weights are the coreset weights.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct CoresetFile<'a> {
            measures: Vec<MeasureFile>,
            set_weights: &'a [f64],
            tau: &'a [f64],
            provenance: &'a Provenance,
        }
        let file = CoresetFile {
            measures: self.coreset.measures().iter().map(MeasureFile::from).collect(),
            set_weights: self.coreset.set_weights(),
            tau: self.coreset.set_weights(),
            provenance: &self.provenance,
        };
        serde_json::to_string(&file).expect("coreset serializes")
    }
}

/// Sample the coreset from a partition: keep small layers, draw `gamma`
/// weighted samples from large ones, collapse the outer layer.
pub fn build_coreset(
    dataset: &WeightedMeasureSet,
    partition: &LayerPartition,
    gamma: usize,
    seed: u64,
) -> Result<CoresetResult> {
    if gamma == 0 {
        return Err(Error::input("per-layer sample budget must be at least 1"));
    }
    let omega = dataset.set_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<(usize, f64, EntryProvenance)> = Vec::new();
    let mut summaries = Vec::with_capacity(partition.layers.len());

    for (layer, members) in partition.layers.iter().enumerate() {
        let mass: f64 = members.iter().map(|&l| omega[l]).sum();
        let before = picks.len();
        let mut draws = 0;
        if members.is_empty() {
        } else if layer == partition.outer() {
            let powers: Vec<f64> = members.iter().map(|&l| partition.powers[l]).collect();
            let weights: Vec<f64> = members.iter().map(|&l| omega[l]).collect();
            let collapsed = outer_layer_weights(&powers, &weights)?;
            let two = collapsed.len() == 2;
            for (slot, (pos, tau)) in collapsed.into_iter().enumerate() {
                let kind = match (two, slot) {
                    (false, _) if members.len() == 1 => EntryKind::Kept,
                    (_, 0) => EntryKind::OuterMax,
                    _ => EntryKind::OuterMin,
                };
                let source_index = members[pos];
                picks.push((source_index, tau, EntryProvenance { source_index, layer, kind }));
            }
        } else if members.len() <= gamma {
            for &l in members {
                let p = EntryProvenance {
                    source_index: l,
                    layer,
                    kind: EntryKind::Kept,
                };
                picks.push((l, omega[l], p));
            }
        } else {
            let dist = WeightedIndex::new(members.iter().map(|&l| omega[l]))
                .map_err(|e| Error::input(format!("layer {layer}: {e}")))?;
            let tau = mass / gamma as f64;
            for _ in 0..gamma {
                let l = members[dist.sample(&mut rng)];
                let p = EntryProvenance {
                    source_index: l,
                    layer,
                    kind: EntryKind::Sampled,
                };
                picks.push((l, tau, p));
            }
            draws = gamma;
        }
        summaries.push(LayerSummary {
            layer,
            size: members.len(),
            mass,
            retained: picks.len() - before,
            draws,
        });
    }

    let (measures, taus): (Vec<_>, Vec<_>) = picks
        .iter()
        .map(|(l, tau, _)| (dataset.measures()[*l].clone(), *tau))
        .unzip();
    Ok(CoresetResult {
        coreset: WeightedMeasureSet::new(measures, taus)?,
        provenance: Provenance {
            h: partition.h,
            k: partition.k,
            entries: picks.into_iter().map(|(_, _, p)| p).collect(),
            layers: summaries,
        },
    })
}

/// One representative per distinct measure, carrying the summed set weight.
/// This is the coreset when the anchor has zero cost on every measure.
pub fn deduplicate(dataset: &WeightedMeasureSet) -> Result<CoresetResult> {
    let mut reps: Vec<(usize, f64)> = Vec::new();
    for (l, (mu, w)) in dataset.iter().enumerate() {
        match reps.iter_mut().find(|(r, _)| dataset.measures()[*r] == *mu) {
            Some((_, total)) => *total += w,
            None => reps.push((l, w)),
        }
    }
    let measures = reps.iter().map(|(l, _)| dataset.measures()[*l].clone()).collect();
    let taus = reps.iter().map(|(_, w)| *w).collect();
    Ok(CoresetResult {
        coreset: WeightedMeasureSet::new(measures, taus)?,
        provenance: Provenance {
            h: 0.0,
            k: 0,
            entries: reps
                .iter()
                .map(|(l, _)| EntryProvenance {
                    source_index: *l,
                    layer: 0,
                    kind: EntryKind::Representative,
                })
                .collect(),
            layers: vec![LayerSummary {
                layer: 0,
                size: dataset.len(),
                mass: dataset.total_weight(),
                retained: reps.len(),
                draws: 0,
            }],
        },
    })
}

/// Parameters of a coreset build.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoresetParams {
    pub epsilon: f64,
    pub gamma: usize,
    pub zeta: f64,
    pub z: f64,
}

/// Partition around `anchor` and sample; falls back to [`deduplicate`] when
/// the anchor has zero cost. Also returns the partition radius `H` (zero in
/// the degenerate case).
pub fn coreset_around(
    dataset: &WeightedMeasureSet,
    anchor: &DiscreteMeasure,
    params: CoresetParams,
    seed: u64,
) -> Result<CoresetResult> {
    match partition_layers(dataset, anchor, params.epsilon, params.zeta, params.z) {
        Ok(partition) => build_coreset(dataset, &partition, params.gamma, seed),
        Err(Error::DegeneratePartition) => deduplicate(dataset),
        Err(e) => Err(e),
    }
}

/// Initial solution from `t` sampled candidate supports.
#[derive(Clone, Debug, PartialEq)]
pub struct Initialization {
    pub anchor: DiscreteMeasure,
    /// Exact robust objective of `anchor` on the dataset.
    pub cost: f64,
    /// Dataset index whose support produced the anchor.
    pub source_index: usize,
}

/// Draw `t` measures proportionally to their set weights, solve the
/// fixed-support robust barycenter on each one's support, keep the best.
pub fn approx_init(
    dataset: &WeightedMeasureSet,
    t: usize,
    zeta: f64,
    z: f64,
    ot_epsilon: f64,
    seed: u64,
) -> Result<Initialization> {
    if t == 0 {
        return Err(Error::input("number of initial candidates must be at least 1"));
    }
    if dataset.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(dataset.set_weights())
        .map_err(|e| Error::input(format!("set weights: {e}")))?;
    let mut candidates: Vec<usize> = Vec::with_capacity(t);
    for _ in 0..t {
        let l = dist.sample(&mut rng);
        if !candidates.contains(&l) {
            candidates.push(l);
        }
    }

    let mut best: Option<Initialization> = None;
    for l in candidates {
        let support = dataset.measures()[l].locations().to_vec();
        let problem = FixedProblem::new(dataset.clone(), support.clone(), zeta, z)?;
        let solution = solve_fixed_awb(&problem, ot_epsilon)?;
        let anchor = solution.barycenter(&support)?;
        let cost = rwb_cost(dataset, &anchor, zeta, z)?;
        log::debug!("init candidate {l}: cost {cost:.6e}");
        if best.as_ref().map_or(true, |b| cost < b.cost) {
            best = Some(Initialization {
                anchor,
                cost,
                source_index: l,
            });
        }
    }
    Ok(best.expect("at least one candidate"))
}

/// Radius of the region around an anchor: `H = (objective at the anchor)^(1/z)`.
pub fn region_radius(cost: f64, z: f64) -> f64 {
    power(cost.max(0.0), 1.0 / z)
}
