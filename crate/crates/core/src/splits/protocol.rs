//! The split protocol: region-held-out geographic test set, seeded random
//! train/validation/test cuts, and nested label-budget subsets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::stats::{compute_norm_stats, NormStats};
use crate::data::tile::Dataset;
use crate::error::{LabError, Result};
use crate::splits::polygon::{point_in_polygon, Polygon};
use crate::util::derive_seed;

/// Fractions of the non-region tiles assigned to train / validation /
/// random test. Must sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(LabError::Config("split ratios outside [0, 1]".into()));
        }
        if ((self.train + self.validation + self.test) - 1.0).abs() > 1e-9 {
            return Err(LabError::Config("split ratios must sum to 1".into()));
        }
        if self.train == 0.0 {
            return Err(LabError::Config("empty training ratio".into()));
        }
        Ok(())
    }
}

/// Index partitions of one dataset, all id lists ascending. The subsets
/// nest: train5 within train50 within train100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub seed: u64,
    pub region: Polygon,
    pub ratios: SplitRatios,
    pub train100: Vec<u64>,
    pub train50: Vec<u64>,
    pub train5: Vec<u64>,
    pub validation: Vec<u64>,
    pub random_test: Vec<u64>,
    pub geo_test: Vec<u64>,
    /// Masked per-band statistics over train100, the statistics every
    /// downstream consumer of this split must normalize with.
    pub norm_stats: NormStats,
}

/// Label-budget subset of the training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "5")]
    S5,
    #[serde(rename = "50")]
    S50,
    #[serde(rename = "100")]
    S100,
}

impl Subset {
    pub fn percent(&self) -> u32 {
        match self {
            Subset::S5 => 5,
            Subset::S50 => 50,
            Subset::S100 => 100,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "5" => Ok(Subset::S5),
            "50" => Ok(Subset::S50),
            "100" => Ok(Subset::S100),
            other => Err(LabError::Usage(format!(
                "subset must be 5, 50 or 100, got {}",
                other
            ))),
        }
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.percent())
    }
}

impl SplitSet {
    pub fn train_ids(&self, subset: Subset) -> &[u64] {
        match subset {
            Subset::S5 => &self.train5,
            Subset::S50 => &self.train50,
            Subset::S100 => &self.train100,
        }
    }

    /// Structural checks: disjoint cover of the dataset ids, nesting of the
    /// training subsets, geographic purity of geo_test.
    pub fn validate_against(&self, ds: &Dataset) -> Result<()> {
        let mut all: Vec<u64> = self
            .train100
            .iter()
            .chain(&self.validation)
            .chain(&self.random_test)
            .chain(&self.geo_test)
            .copied()
            .collect();
        all.sort_unstable();
        let ids: Vec<u64> = ds.tiles.iter().map(|t| t.id).collect();
        if all != ids {
            return Err(LabError::Split(
                "splits do not cover the dataset ids exactly once".into(),
            ));
        }
        if !is_subset(&self.train5, &self.train50) || !is_subset(&self.train50, &self.train100) {
            return Err(LabError::Split("training subsets do not nest".into()));
        }
        for &id in &self.geo_test {
            let t = ds
                .tile_by_id(id)
                .ok_or_else(|| LabError::Split(format!("unknown geo test id {}", id)))?;
            if !point_in_polygon((t.lon, t.lat), &self.region) {
                return Err(LabError::Split(format!(
                    "geo test tile {} lies outside the region",
                    id
                )));
            }
        }
        Ok(())
    }
}

fn is_subset(small: &[u64], big: &[u64]) -> bool {
    // Both ascending.
    let mut it = big.iter();
    'outer: for s in small {
        for b in it.by_ref() {
            if b == s {
                continue 'outer;
            }
            if b > s {
                return false;
            }
        }
        return false;
    }
    true
}

/// Build the split set for a dataset.
///
/// Region tiles form the geographic test split. The remaining ids are
/// sorted, shuffled once with the split seed, and cut at floor(train N)
/// and floor((train+validation) N). The 50% and 5% subsets are prefixes of
/// a second seeded shuffle of train100, which makes them nested by
/// construction. All outputs are re-sorted ascending; membership, not
/// order, carries the randomness.
pub fn make_splits(
    ds: &Dataset,
    region: &Polygon,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitSet> {
    ratios.validate()?;
    let mut geo_test = Vec::new();
    let mut rest = Vec::new();
    for t in &ds.tiles {
        if point_in_polygon((t.lon, t.lat), region) {
            geo_test.push(t.id);
        } else {
            rest.push(t.id);
        }
    }
    if rest.is_empty() {
        return Err(LabError::Split(
            "region covers every tile; nothing left to train on".into(),
        ));
    }

    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "split"));
    rest.shuffle(&mut rng);
    let n = rest.len();
    let cut_train = (ratios.train * n as f64).floor() as usize;
    let cut_val = ((ratios.train + ratios.validation) * n as f64).floor() as usize;
    if cut_train == 0 {
        return Err(LabError::Split("training split is empty".into()));
    }
    let mut train100: Vec<u64> = rest[..cut_train].to_vec();
    let mut validation: Vec<u64> = rest[cut_train..cut_val].to_vec();
    let mut random_test: Vec<u64> = rest[cut_val..].to_vec();

    let mut subset_order = train100.clone();
    subset_order.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "subset"));
    subset_order.shuffle(&mut rng);
    let n50 = ((train100.len() as f64) * 0.50).floor() as usize;
    let n5 = ((train100.len() as f64) * 0.05).floor() as usize;
    let mut train50: Vec<u64> = subset_order[..n50.max(1)].to_vec();
    let mut train5: Vec<u64> = subset_order[..n5.max(1)].to_vec();

    train100.sort_unstable();
    train50.sort_unstable();
    train5.sort_unstable();
    validation.sort_unstable();
    random_test.sort_unstable();

    let norm_stats = compute_norm_stats(ds, &train100)?;

    let splits = SplitSet {
        seed,
        region: region.clone(),
        ratios,
        train100,
        train50,
        train5,
        validation,
        random_test,
        geo_test,
        norm_stats,
    };
    splits.validate_against(ds)?;
    Ok(splits)
}

pub fn save_splits(splits: &SplitSet, path: &std::path::Path) -> Result<()> {
    let json = serde_json::to_string_pretty(splits)
        .map_err(|e| LabError::format(path.display().to_string(), e.to_string()))?;
    std::fs::write(path, json.as_bytes())
        .map_err(|e| LabError::io(path.display().to_string(), e))
}

pub fn load_splits(path: &std::path::Path) -> Result<SplitSet> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| LabError::format(path.display().to_string(), e.to_string()))
}
