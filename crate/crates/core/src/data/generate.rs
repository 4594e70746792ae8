//! Synthetic world generator.
//!
//! Tiles are scattered over a lon/lat box. Smooth latent fields (sums of
//! Gaussian bumps) drive both the label and every modality, so modalities
//! carry real mutual information with the label and with each other. An
//! optional region shift adds a second latent field inside the held-out
//! region only, which moves the label distribution there while leaving the
//! modality<->label relationship intact. A separate smooth condition field
//! can distort the encoder-input bands only — mildly everywhere and more
//! strongly inside the held-out region — modeling acquisition-condition
//! drift (sensor calibration, atmosphere) that leaves every other modality
//! clean. All draws come from a single seeded stream in a fixed order, so
//! one seed pins the whole world, and the condition amplitudes perturb no
//! draws: changing them changes input band values and nothing else.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::encoding::{geolocation_encoding, month_encoding};
use crate::data::schema::{default_schema, Kind, ModalitySchema, Scale};
use crate::data::tile::{Dataset, Label, TaskKind, Tile, PIXEL_LABEL_NO_DATA};
use crate::error::{LabError, Result};
use crate::splits::polygon::{point_in_polygon, Polygon};

/// Degrees of longitude/latitude between adjacent pixels of a tile.
pub const PIXEL_DEG: f64 = 0.1;

/// Modalities the generator never drops: the encoder input and the two
/// derived encodings.
pub const ALWAYS_PRESENT: [&str; 3] = ["s2", "geolocation", "month"];

/// The optical stream the default model encodes; the condition field
/// distorts this modality and no other.
pub const INPUT_MODALITY: &str = "s2";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    pub tiles: usize,
    pub tile_size: usize,
    pub task: TaskKind,
    /// Probability that an eligible modality is absent from a tile.
    pub missing_rate: f64,
    /// Probability that a stored element of a present modality holds the
    /// modality's no-data sentinel.
    pub nodata_rate: f64,
    /// Strength of the extra label-field added inside the region. Zero
    /// means the region differs only by sampling noise.
    pub label_shift: f64,
    /// Amplitude of the smooth condition field distorting the encoder
    /// input bands everywhere. The distortion never touches the label or
    /// the other modalities.
    pub condition_strength: f64,
    /// Extra condition amplitude applied inside the held-out region only,
    /// on top of `condition_strength`.
    pub region_condition: f64,
    /// Stddev of observation noise added to labels.
    pub label_noise: f64,
    /// Fraction of labeled pixels for the pixel-regression task.
    pub pixel_label_density: f64,
    pub lon_range: (f64, f64),
    pub lat_range: (f64, f64),
    /// Held-out region polygon (also stored with splits).
    pub region: Vec<(f64, f64)>,
    /// Optional fixed tile locations (e.g. imported from GeoJSON). When
    /// set, `tiles` is ignored and ids/positions come from here.
    pub locations: Option<Vec<(u64, (f64, f64))>>,
    pub schema: Vec<ModalitySchema>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            tiles: 500,
            tile_size: 16,
            task: TaskKind::TileRegression,
            missing_rate: 0.10,
            nodata_rate: 0.02,
            label_shift: 0.0,
            condition_strength: 0.0,
            region_condition: 0.0,
            label_noise: 0.25,
            pixel_label_density: 0.15,
            lon_range: (-170.0, 170.0),
            lat_range: (-60.0, 70.0),
            region: default_region_vertices(),
            locations: None,
            schema: default_schema(),
        }
    }
}

/// Irregular pentagon covering roughly a tenth of the default world box.
pub fn default_region_vertices() -> Vec<(f64, f64)> {
    vec![(10.0, -20.0), (90.0, -10.0), (85.0, 50.0), (45.0, 45.0), (5.0, 25.0)]
}

impl WorldConfig {
    pub fn region_polygon(&self) -> Result<Polygon> {
        Polygon::new(self.region.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.locations.is_none() && self.tiles == 0 {
            return Err(LabError::Config("world with zero tiles".into()));
        }
        if self.tile_size == 0 {
            return Err(LabError::Config("tile size is zero".into()));
        }
        self.task.validate()?;
        for (name, r) in [
            ("missing_rate", self.missing_rate),
            ("nodata_rate", self.nodata_rate),
            ("pixel_label_density", self.pixel_label_density),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(LabError::Config(format!("{} outside [0, 1]", name)));
            }
        }
        if !(self.label_shift.is_finite() && self.label_noise.is_finite() && self.label_noise >= 0.0)
        {
            return Err(LabError::Config("bad label shift/noise".into()));
        }
        if !(self.condition_strength.is_finite()
            && self.condition_strength >= 0.0
            && self.region_condition.is_finite()
            && self.region_condition >= 0.0)
        {
            return Err(LabError::Config(
                "condition amplitudes must be finite and non-negative".into(),
            ));
        }
        if self.lon_range.0 >= self.lon_range.1 || self.lat_range.0 >= self.lat_range.1 {
            return Err(LabError::Config("empty coordinate range".into()));
        }
        if self.lon_range.0 < -180.0
            || self.lon_range.1 > 180.0
            || self.lat_range.0 < -90.0
            || self.lat_range.1 > 90.0
        {
            return Err(LabError::Config("coordinate range outside the globe".into()));
        }
        self.region_polygon()?;
        if self.schema.is_empty() {
            return Err(LabError::Schema("empty schema".into()));
        }
        for m in &self.schema {
            m.validate()?;
        }
        if let Some(locs) = &self.locations {
            if locs.is_empty() {
                return Err(LabError::Config("empty location list".into()));
            }
            let mut ids: Vec<u64> = locs.iter().map(|l| l.0).collect();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() != locs.len() {
                return Err(LabError::Config("duplicate ids in location list".into()));
            }
        }
        Ok(())
    }
}

// ── latent fields ──

struct Bump {
    cx: f64,
    cy: f64,
    amp: f64,
    inv_2s2: f64,
}

struct BumpField {
    bumps: Vec<Bump>,
}

impl BumpField {
    fn sample(
        rng: &mut ChaCha8Rng,
        count: usize,
        amp: f64,
        sigma: (f64, f64),
        lon: (f64, f64),
        lat: (f64, f64),
    ) -> Self {
        let bumps = (0..count)
            .map(|_| {
                let cx = rng.random_range(lon.0..lon.1);
                let cy = rng.random_range(lat.0..lat.1);
                let a = rng.random_range(-amp..amp);
                let s = rng.random_range(sigma.0..sigma.1);
                Bump {
                    cx,
                    cy,
                    amp: a,
                    inv_2s2: 1.0 / (2.0 * s * s),
                }
            })
            .collect();
        BumpField { bumps }
    }

    fn eval(&self, lon: f64, lat: f64) -> f64 {
        let mut v = 0.0;
        for b in &self.bumps {
            let dx = lon - b.cx;
            let dy = lat - b.cy;
            v += b.amp * (-(dx * dx + dy * dy) * b.inv_2s2).exp();
        }
        v
    }
}

/// Per-band linear response to a latent driver.
struct BandCoef {
    gain: f64,
    offset: f64,
    noise: f64,
}

fn sample_coefs(rng: &mut ChaCha8Rng, bands: usize, noise: f64) -> Vec<BandCoef> {
    (0..bands)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            BandCoef {
                gain: sign * rng.random_range(0.5..1.5),
                offset: rng.random_range(-0.5..0.5),
                noise,
            }
        })
        .collect()
}

/// Which latent drives a modality's bands.
#[derive(Clone, Copy, PartialEq)]
enum Driver {
    /// The label latent (plus region shift and fine detail).
    Signal,
    /// The independent nuisance latent.
    Nuisance,
    /// An even mix of both.
    Mixed,
}

fn driver_for(name: &str) -> Driver {
    match name {
        "dem" | "world_cover" => Driver::Nuisance,
        "canopy" | "temperature" => Driver::Mixed,
        _ => Driver::Signal,
    }
}

fn bin_latent(v: f64, classes: usize) -> f64 {
    // Fixed class edges over the latent's nominal range.
    let lo = -2.2;
    let hi = 2.2;
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    let idx = ((t * classes as f64).floor() as usize).min(classes - 1);
    idx as f64
}

struct Latents {
    label: BumpField,
    shift: BumpField,
    detail: BumpField,
    nuisance: BumpField,
    /// Drives the input-band distortion; independent of the label latents.
    condition: BumpField,
}

impl Latents {
    /// Label-bearing latent at a point, including the region shift when the
    /// TILE is in the region.
    fn signal(&self, lon: f64, lat: f64, in_region: bool, shift: f64) -> f64 {
        let mut v = self.label.eval(lon, lat) + self.detail.eval(lon, lat);
        if in_region {
            v += shift * self.shift.eval(lon, lat);
        }
        v
    }

    fn nuisance_at(&self, lon: f64, lat: f64) -> f64 {
        self.nuisance.eval(lon, lat) + 0.5 * self.detail.eval(lon + 11.3, lat - 7.1)
    }
}

pub fn generate_world(cfg: &WorldConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = cfg.region_polygon()?;
    let ts = cfg.tile_size;
    let plane = ts * ts;

    let latents = Latents {
        label: BumpField::sample(&mut rng, 40, 1.0, (10.0, 35.0), cfg.lon_range, cfg.lat_range),
        shift: BumpField::sample(&mut rng, 30, 1.0, (8.0, 30.0), cfg.lon_range, cfg.lat_range),
        detail: BumpField::sample(&mut rng, 80, 0.6, (0.4, 1.5), cfg.lon_range, cfg.lat_range),
        nuisance: BumpField::sample(&mut rng, 40, 1.0, (10.0, 35.0), cfg.lon_range, cfg.lat_range),
        condition: BumpField::sample(&mut rng, 60, 1.0, (5.0, 18.0), cfg.lon_range, cfg.lat_range),
    };

    // Per-band response of the encoder input to the condition field, drawn
    // whether or not the amplitudes are zero so the stream never moves.
    let input_bands = cfg
        .schema
        .iter()
        .find(|m| m.name == INPUT_MODALITY)
        .map(|m| match m.kind {
            Kind::Continuous { bands } => bands,
            Kind::Categorical { .. } => 0,
        })
        .unwrap_or(0);
    let cond_gains: Vec<f64> = (0..input_bands)
        .map(|_| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        })
        .collect();

    // Fixed per-band responses, drawn once per world in schema order.
    let mut coefs: BTreeMap<String, Vec<BandCoef>> = BTreeMap::new();
    for m in &cfg.schema {
        if let Kind::Continuous { bands } = m.kind {
            if m.name == "geolocation" || m.name == "month" {
                continue;
            }
            let noise = match m.name.as_str() {
                "s2" => 0.15,
                "s1" => 0.5,
                "dem" => 0.1,
                _ => 0.3,
            };
            coefs.insert(m.name.clone(), sample_coefs(&mut rng, bands, noise));
        }
    }

    // Per-class threshold geometry for the multi-label task.
    let mut tag_params: Vec<(f64, f64, f64)> = Vec::new();
    if let TaskKind::MultiLabel { classes } = cfg.task {
        for _ in 0..classes {
            let dx = rng.random_range(-20.0..20.0);
            let dy = rng.random_range(-20.0..20.0);
            let thr = rng.random_range(-0.4..0.4);
            tag_params.push((dx, dy, thr));
        }
    }

    let positions: Vec<(u64, (f64, f64))> = match &cfg.locations {
        Some(locs) => {
            let mut sorted = locs.clone();
            sorted.sort_by_key(|l| l.0);
            sorted
        }
        None => (0..cfg.tiles as u64)
            .map(|id| {
                let lon = rng.random_range(cfg.lon_range.0..cfg.lon_range.1);
                let lat = rng.random_range(cfg.lat_range.0..cfg.lat_range.1);
                (id, (lon, lat))
            })
            .collect(),
    };

    let mut tiles = Vec::with_capacity(positions.len());
    for (id, (lon, lat)) in positions {
        tiles.push(generate_tile(
            cfg,
            &mut rng,
            &latents,
            &region,
            &coefs,
            &cond_gains,
            &tag_params,
            id,
            lon,
            lat,
            ts,
            plane,
        )?);
    }

    let ds = Dataset {
        schema: cfg.schema.clone(),
        tile_size: ts,
        task: cfg.task,
        seed,
        tiles,
    };
    ds.validate()?;
    Ok(ds)
}

#[allow(clippy::too_many_arguments)]
fn generate_tile(
    cfg: &WorldConfig,
    rng: &mut ChaCha8Rng,
    latents: &Latents,
    region: &Polygon,
    coefs: &BTreeMap<String, Vec<BandCoef>>,
    cond_gains: &[f64],
    tag_params: &[(f64, f64, f64)],
    id: u64,
    lon: f64,
    lat: f64,
    ts: usize,
    plane: usize,
) -> Result<Tile> {
    let in_region = point_in_polygon((lon, lat), region);
    let shift = cfg.label_shift;
    let cond_amp = cfg.condition_strength + if in_region { cfg.region_condition } else { 0.0 };
    let month: u32 = rng.random_range(1..=12);

    // Missing flags, drawn in schema order for a stable stream.
    let mut missing = BTreeSet::new();
    for m in &cfg.schema {
        if ALWAYS_PRESENT.contains(&m.name.as_str()) {
            continue;
        }
        if rng.random_bool(cfg.missing_rate) {
            missing.insert(m.name.clone());
        }
    }

    // Pixel-center latents, shared by every pixel modality.
    let mut sig = vec![0.0; plane];
    let mut nui = vec![0.0; plane];
    let mut cond = vec![0.0; plane];
    let half = (ts as f64 - 1.0) / 2.0;
    for r in 0..ts {
        for c in 0..ts {
            let plon = lon + (c as f64 - half) * PIXEL_DEG;
            let plat = lat + (half - r as f64) * PIXEL_DEG;
            sig[r * ts + c] = latents.signal(plon, plat, in_region, shift);
            nui[r * ts + c] = latents.nuisance_at(plon, plat);
            if cond_amp != 0.0 {
                cond[r * ts + c] = latents.condition.eval(plon, plat);
            }
        }
    }
    let sig_center = latents.signal(lon, lat, in_region, shift);
    let nui_center = latents.nuisance_at(lon, lat);

    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in &cfg.schema {
        if missing.contains(&m.name) {
            continue;
        }
        let driver_of = |p: usize| match driver_for(&m.name) {
            Driver::Signal => sig[p],
            Driver::Nuisance => nui[p],
            Driver::Mixed => 0.5 * (sig[p] + nui[p]),
        };
        let center_driver = match driver_for(&m.name) {
            Driver::Signal => sig_center,
            Driver::Nuisance => nui_center,
            Driver::Mixed => 0.5 * (sig_center + nui_center),
        };
        let v = match (&m.scale, &m.kind) {
            (Scale::Pixel, Kind::Continuous { bands }) => {
                let cf = &coefs[&m.name];
                let distort = m.name == INPUT_MODALITY && cond_amp != 0.0;
                let mut v = vec![0.0; bands * plane];
                for (b, c) in cf.iter().enumerate() {
                    for p in 0..plane {
                        let eps: f64 = rng.sample(StandardNormal);
                        let mut x = c.gain * driver_of(p) + c.offset + c.noise * eps;
                        if distort {
                            x += cond_amp * cond_gains[b] * cond[p];
                        }
                        v[b * plane + p] = x;
                    }
                }
                inject_nodata(rng, &mut v, m, cfg.nodata_rate);
                v
            }
            (Scale::Pixel, Kind::Categorical { classes }) => {
                let mut v = vec![0.0; plane];
                for p in 0..plane {
                    let eps: f64 = rng.sample(StandardNormal);
                    v[p] = bin_latent(driver_of(p) + 0.3 * eps, *classes);
                }
                inject_nodata(rng, &mut v, m, cfg.nodata_rate);
                v
            }
            (Scale::Tile, Kind::Continuous { bands }) => match m.name.as_str() {
                "geolocation" => geolocation_encoding(lon, lat)?.to_vec(),
                "month" => month_encoding(month)?.to_vec(),
                _ => {
                    let cf = &coefs[&m.name];
                    let mut v = vec![0.0; *bands];
                    for (b, c) in cf.iter().enumerate() {
                        let eps: f64 = rng.sample(StandardNormal);
                        v[b] = c.gain * center_driver + c.offset + c.noise * eps;
                    }
                    inject_nodata(rng, &mut v, m, cfg.nodata_rate);
                    v
                }
            },
            (Scale::Tile, Kind::Categorical { classes }) => match m.name.as_str() {
                "ecoregion" => {
                    let biome = bin_latent(sig_center, 13);
                    vec![ecoregion_code(lon, lat, biome, *classes)]
                }
                _ => {
                    let eps: f64 = rng.sample(StandardNormal);
                    let mut v = vec![bin_latent(center_driver + 0.25 * eps, *classes)];
                    inject_nodata(rng, &mut v, m, cfg.nodata_rate);
                    v
                }
            },
        };
        values.insert(m.name.clone(), v);
    }

    let label = match cfg.task {
        TaskKind::TileRegression => {
            let eps: f64 = rng.sample(StandardNormal);
            Label::Scalar(sig_center + cfg.label_noise * eps)
        }
        TaskKind::PixelRegression => {
            let mut grid = vec![PIXEL_LABEL_NO_DATA; plane];
            let mut any = false;
            for p in 0..plane {
                let labeled = rng.random_bool(cfg.pixel_label_density);
                let eps: f64 = rng.sample(StandardNormal);
                if labeled {
                    grid[p] = sig[p] + cfg.label_noise * eps;
                    any = true;
                }
            }
            if !any {
                let center = (ts / 2) * ts + ts / 2;
                let eps: f64 = rng.sample(StandardNormal);
                grid[center] = sig[center] + cfg.label_noise * eps;
            }
            Label::Grid(grid)
        }
        TaskKind::MultiLabel { .. } => {
            let bits = tag_params
                .iter()
                .map(|&(dx, dy, thr)| {
                    let mut v = latents.label.eval(lon + dx, lat + dy);
                    if in_region {
                        v += shift * latents.shift.eval(lon + dx, lat + dy);
                    }
                    let eps: f64 = rng.sample(StandardNormal);
                    v + cfg.label_noise * eps > thr
                })
                .collect();
            Label::MultiLabel(bits)
        }
    };

    Ok(Tile {
        id,
        lon,
        lat,
        missing,
        values,
        label,
    })
}

/// Overwrite random elements with the modality's no-data marker. The
/// encoder input stream is left untouched so inputs stay fully observed.
fn inject_nodata(rng: &mut ChaCha8Rng, v: &mut [f64], m: &ModalitySchema, rate: f64) {
    if m.name == INPUT_MODALITY || rate == 0.0 {
        return;
    }
    let sentinel = match (m.no_data, &m.kind) {
        (_, Kind::Categorical { classes }) => *classes as f64,
        (Some(nd), _) => nd,
        (None, _) => return,
    };
    for x in v {
        if rng.random_bool(rate) {
            *x = sentinel;
        }
    }
}

/// Spatially blocky ecological code correlated with biome: a deterministic
/// function of a coarse grid cell and the biome index.
fn ecoregion_code(lon: f64, lat: f64, biome: f64, classes: usize) -> f64 {
    let lon_cell = ((lon + 180.0) / 12.0).floor() as i64;
    let lat_cell = ((lat + 90.0) / 12.0).floor() as i64;
    let code = (lon_cell * 31 + lat_cell) * 13 + biome as i64;
    (code.rem_euclid(classes as i64)) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stats::compute_norm_stats;

    fn small_cfg() -> WorldConfig {
        WorldConfig {
            tiles: 60,
            tile_size: 4,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&small_cfg(), 11).unwrap();
        let b = generate_world(&small_cfg(), 11).unwrap();
        assert_eq!(a.tiles, b.tiles);
        let c = generate_world(&small_cfg(), 12).unwrap();
        assert_ne!(a.tiles, c.tiles);
    }

    #[test]
    fn always_present_modalities_are_never_missing() {
        let cfg = WorldConfig {
            missing_rate: 0.9,
            ..small_cfg()
        };
        let ds = generate_world(&cfg, 5).unwrap();
        for t in &ds.tiles {
            for name in ALWAYS_PRESENT {
                assert!(t.values.contains_key(name), "tile {} lost {}", t.id, name);
            }
        }
        // With rate 0.9 and 9 eligible modalities, absences must occur.
        assert!(ds.tiles.iter().any(|t| !t.missing.is_empty()));
    }

    #[test]
    fn geolocation_band_matches_encoding() {
        let ds = generate_world(&small_cfg(), 3).unwrap();
        for t in ds.tiles.iter().take(5) {
            let enc = geolocation_encoding(t.lon, t.lat).unwrap();
            assert_eq!(t.values["geolocation"], enc.to_vec());
        }
    }

    #[test]
    fn label_correlates_with_optical_input() {
        // The label latent drives the optical bands, so a simple band mean
        // must correlate strongly with the scalar label.
        let cfg = WorldConfig {
            tiles: 300,
            tile_size: 4,
            missing_rate: 0.0,
            nodata_rate: 0.0,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 21).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in &ds.tiles {
            let s2 = &t.values["s2"];
            let cf = 0; // first band is a fixed linear response
            let plane = 16;
            let mean: f64 =
                s2[cf * plane..(cf + 1) * plane].iter().sum::<f64>() / plane as f64;
            xs.push(mean);
            let Label::Scalar(y) = t.label else { panic!() };
            ys.push(y);
        }
        let corr = correlation(&xs, &ys);
        assert!(corr.abs() > 0.5, "corr {}", corr);
    }

    fn correlation(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn nodata_appears_at_roughly_the_requested_rate() {
        let cfg = WorldConfig {
            tiles: 100,
            tile_size: 4,
            missing_rate: 0.0,
            nodata_rate: 0.1,
            ..WorldConfig::default()
        };
        let ds = generate_world(&cfg, 9).unwrap();
        let mut total = 0usize;
        let mut nodata = 0usize;
        for t in &ds.tiles {
            let s1 = &t.values["s1"];
            total += s1.len();
            nodata += s1.iter().filter(|&&v| v == -9999.0).count();
        }
        let rate = nodata as f64 / total as f64;
        assert!((0.05..0.2).contains(&rate), "rate {}", rate);
        // s2 stays clean.
        assert!(ds
            .tiles
            .iter()
            .all(|t| t.values["s2"].iter().all(|&v| v != 65535.0)));
    }

    #[test]
    fn generated_world_supports_normalization() {
        let ds = generate_world(&small_cfg(), 2).unwrap();
        let ids: Vec<u64> = ds.tiles.iter().map(|t| t.id).collect();
        let stats = compute_norm_stats(&ds, &ids).unwrap();
        assert!(stats.per_modality.contains_key("s2"));
        assert!(stats.per_modality.contains_key("month"));
    }

    #[test]
    fn fixed_locations_are_respected() {
        let cfg = WorldConfig {
            locations: Some(vec![(7, (10.0, 10.0)), (3, (-20.0, 5.0))]),
            ..small_cfg()
        };
        let ds = generate_world(&cfg, 1).unwrap();
        assert_eq!(ds.tiles.len(), 2);
        assert_eq!(ds.tiles[0].id, 3);
        assert_eq!(ds.tiles[1].id, 7);
        assert_eq!(ds.tiles[1].lon, 10.0);
    }

    #[test]
    fn condition_field_touches_only_input_bands() {
        let clean = WorldConfig {
            tiles: 120,
            tile_size: 4,
            ..WorldConfig::default()
        };
        let drifted = WorldConfig {
            condition_strength: 0.6,
            region_condition: 1.2,
            ..clean.clone()
        };
        let a = generate_world(&clean, 19).unwrap();
        let b = generate_world(&drifted, 19).unwrap();
        let region = clean.region_polygon().unwrap();
        let mut moved = 0usize;
        for (ta, tb) in a.tiles.iter().zip(&b.tiles) {
            assert_eq!(ta.label, tb.label, "tile {} label moved", ta.id);
            assert_eq!(ta.missing, tb.missing);
            for (name, va) in &ta.values {
                if name == INPUT_MODALITY {
                    if va != &tb.values[name] {
                        moved += 1;
                    }
                } else {
                    assert_eq!(va, &tb.values[name], "tile {} modality {} moved", ta.id, name);
                }
            }
        }
        // The field can sit near zero in isolated pockets, but most tiles
        // must see a real distortion.
        assert!(moved * 10 >= a.tiles.len() * 9, "only {} tiles drifted", moved);

        // Region-only amplitude leaves out-of-region tiles untouched.
        let region_only = WorldConfig {
            condition_strength: 0.0,
            region_condition: 1.2,
            ..clean.clone()
        };
        let c = generate_world(&region_only, 19).unwrap();
        let mut region_moved = 0usize;
        for (ta, tc) in a.tiles.iter().zip(&c.tiles) {
            let inside = point_in_polygon((ta.lon, ta.lat), &region);
            let drifted_tile = ta.values[INPUT_MODALITY] != tc.values[INPUT_MODALITY];
            if !inside {
                assert!(!drifted_tile, "tile {} outside the region drifted", ta.id);
            } else if drifted_tile {
                region_moved += 1;
            }
        }
        assert!(region_moved > 0, "no region tile drifted");
    }

    #[test]
    fn region_shift_moves_region_labels() {
        let base = WorldConfig {
            tiles: 400,
            tile_size: 4,
            label_shift: 0.0,
            ..WorldConfig::default()
        };
        let shifted = WorldConfig {
            label_shift: 2.0,
            ..base.clone()
        };
        let a = generate_world(&base, 33).unwrap();
        let b = generate_world(&shifted, 33).unwrap();
        let region = base.region_polygon().unwrap();
        let mean_region = |ds: &Dataset| {
            let mut s = 0.0;
            let mut n = 0.0;
            for t in &ds.tiles {
                if point_in_polygon((t.lon, t.lat), &region) {
                    let Label::Scalar(y) = t.label else { panic!() };
                    s += y;
                    n += 1.0;
                }
            }
            assert!(n > 10.0);
            s / n
        };
        let delta = (mean_region(&b) - mean_region(&a)).abs();
        assert!(delta > 0.05, "shift had no effect: {}", delta);
    }
}
