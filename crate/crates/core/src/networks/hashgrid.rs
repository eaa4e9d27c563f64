//! Multi-resolution hash-grid encoding.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::coords::CoordGrid;
use crate::autodiff::{eval_op, GatherPlan, Op, ParamStore, RealTensor, Value};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const HASH_PRIME_Y: u32 = 2_654_435_761;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features_per_entry: usize,
    pub table_size_log2: u32,
    pub base_resolution: usize,
    pub growth_factor: f64,
    pub mlp_hidden_layers: usize,
    pub mlp_hidden_width: usize,
    /// Tables start as `U(-init_scale, init_scale)`.
    pub init_scale: f64,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            features_per_entry: 2,
            table_size_log2: 15,
            base_resolution: 16,
            growth_factor: 1.5,
            mlp_hidden_layers: 2,
            mlp_hidden_width: 64,
            init_scale: 1e-4,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::InvalidConfig("hash grid needs at least one level".into()));
        }
        if !(self.growth_factor > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "hash grid growth factor must exceed 1, got {}",
                self.growth_factor
            )));
        }
        if self.table_size_log2 > 24 {
            return Err(Error::InvalidConfig(format!(
                "table_size_log2 {} exceeds 24",
                self.table_size_log2
            )));
        }
        if self.features_per_entry == 0 || self.base_resolution == 0 {
            return Err(Error::InvalidConfig("hash grid sizes must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::InvalidConfig("hash grid init_scale must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    pub fn encoding_dim(&self) -> usize {
        self.levels * self.features_per_entry
    }

    pub fn table_len(&self) -> usize {
        self.levels * self.table_size() * self.features_per_entry
    }

    /// `floor(base * growth^l)`, forced nondecreasing.
    pub fn level_resolutions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.levels);
        let mut prev = 0usize;
        for l in 0..self.levels {
            let r = (self.base_resolution as f64 * self.growth_factor.powi(l as i32)).floor() as usize;
            let r = r.max(prev).max(1);
            out.push(r);
            prev = r;
        }
        out
    }
}

fn slot(ix: usize, iy: usize, res: usize, table: usize) -> u32 {
    let side = res + 1;
    if side * side <= table {
        (iy * side + ix) as u32
    } else {
        let h = (ix as u32).wrapping_mul(1) ^ (iy as u32).wrapping_mul(HASH_PRIME_Y);
        h % table as u32
    }
}

/// Corner indices and bilinear weights for every (point, level).
pub fn hashgrid_plan(cfg: &HashGridConfig, coords: &CoordGrid) -> Result<GatherPlan> {
    cfg.validate()?;
    let res = cfg.level_resolutions();
    let table = cfg.table_size();
    let mut corners = Vec::with_capacity(coords.len() * cfg.levels * 4);
    for &[y, x] in &coords.coords {
        if !(0.0..=1.0).contains(&y) || !(0.0..=1.0).contains(&x) {
            return Err(Error::CoordinateOutOfRange(y, x));
        }
        for &r in &res {
            let sy = y * r as f64;
            let sx = x * r as f64;
            let iy = (sy.floor() as usize).min(r - 1);
            let ix = (sx.floor() as usize).min(r - 1);
            let fy = sy - iy as f64;
            let fx = sx - ix as f64;
            corners.push((slot(ix, iy, r, table), (1.0 - fy) * (1.0 - fx)));
            corners.push((slot(ix + 1, iy, r, table), (1.0 - fy) * fx));
            corners.push((slot(ix, iy + 1, r, table), fy * (1.0 - fx)));
            corners.push((slot(ix + 1, iy + 1, r, table), fy * fx));
        }
    }
    Ok(GatherPlan {
        points: coords.len(),
        levels: cfg.levels,
        features: cfg.features_per_entry,
        entries_per_level: table,
        corners,
    })
}

pub fn hashgrid_init(cfg: &HashGridConfig, prefix: &str, rng: &mut Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let s = cfg.init_scale;
    let data: Vec<f64> = (0..cfg.table_len())
        .map(|_| if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 })
        .collect();
    let mut store = ParamStore::new();
    store.push(
        format!("{prefix}.table"),
        vec![cfg.levels, cfg.table_size(), cfg.features_per_entry],
        data,
    )?;
    Ok(store)
}

/// `tables` laid out `[level][entry][feature]`; returns `[n, levels * features]`.
pub fn hashgrid_encode(tables: &[f64], cfg: &HashGridConfig, coords: &CoordGrid) -> Result<RealTensor> {
    if tables.len() != cfg.table_len() {
        return Err(Error::shape(format!(
            "hash tables hold {} values, expected {}",
            tables.len(),
            cfg.table_len()
        )));
    }
    let plan = hashgrid_plan(cfg, coords)?;
    let t = Value::real(vec![cfg.levels, cfg.table_size(), cfg.features_per_entry], tables.to_vec())?;
    match eval_op(&Op::Gather(plan.into()), &[&t])? {
        Value::Real(r) => Ok(r),
        Value::Complex(_) => unreachable!("gather yields real features"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(levels: usize, log2: u32) -> HashGridConfig {
        HashGridConfig {
            levels,
            features_per_entry: 2,
            table_size_log2: log2,
            base_resolution: 2,
            growth_factor: 2.0,
            ..HashGridConfig::default()
        }
    }

    fn random_tables(cfg: &HashGridConfig, seed: u64) -> Vec<f64> {
        let mut rng = Rng::stream(seed, "tables");
        (0..cfg.table_len()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn default_level_resolutions() {
        let r = HashGridConfig::default().level_resolutions();
        assert_eq!(&r[..5], &[16, 24, 36, 54, 81]);
        assert!(r.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(r.len(), 16);
    }

    #[test]
    fn vertex_returns_table_entry() {
        let cfg = tiny(1, 4); // res 2, 9 vertices, direct
        let t = random_tables(&cfg, 1);
        let f = hashgrid_encode(&t, &cfg, &CoordGrid::from_points(vec![[0.5, 1.0]])).unwrap();
        // vertex (iy=1, ix=2) -> slot 1*3 + 2
        assert_eq!(&f.data, &t[5 * 2..5 * 2 + 2]);
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let cfg = tiny(1, 4);
        let t = random_tables(&cfg, 2);
        let f = hashgrid_encode(&t, &cfg, &CoordGrid::from_points(vec![[0.25, 0.75]])).unwrap();
        // cell iy=0, ix=1: slots 1, 2, 4, 5
        for k in 0..2 {
            let mean = [1, 2, 4, 5].iter().map(|s| t[s * 2 + k]).sum::<f64>() / 4.0;
            assert!((f.data[k] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_dense_grid_oracle() {
        let cfg = HashGridConfig {
            base_resolution: 5,
            ..tiny(1, 6)
        };
        let t = random_tables(&cfg, 3);
        // dense (res+1)^2 grid of feature vectors, row-major over (y, x)
        let side = 6;
        let dense = |iy: usize, ix: usize, k: usize| t[(iy * side + ix) * 2 + k];
        let mut rng = Rng::stream(9, "pts");
        for _ in 0..50 {
            let (y, x): (f64, f64) = (rng.random(), rng.random());
            let f = hashgrid_encode(&t, &cfg, &CoordGrid::from_points(vec![[y, x]])).unwrap();
            let (gy, gx) = (y * 5.0, x * 5.0);
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (ty, tx) = (gy - y0 as f64, gx - x0 as f64);
            for k in 0..2 {
                let top = dense(y0, x0, k) * (1.0 - tx) + dense(y0, x0 + 1, k) * tx;
                let bot = dense(y0 + 1, x0, k) * (1.0 - tx) + dense(y0 + 1, x0 + 1, k) * tx;
                let want = top * (1.0 - ty) + bot * ty;
                assert!((f.data[k] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn hashed_levels_stay_in_table() {
        let cfg = tiny(6, 5); // res up to 64, table 32
        let plan = hashgrid_plan(&cfg, &CoordGrid::new(7, 9)).unwrap();
        assert!(plan.corners.iter().all(|&(e, _)| (e as usize) < 32));
    }

    #[test]
    fn out_of_range_coordinate() {
        let cfg = tiny(1, 4);
        let t = random_tables(&cfg, 1);
        assert!(matches!(
            hashgrid_encode(&t, &cfg, &CoordGrid::from_points(vec![[1.0 + 1e-12, 0.2]])),
            Err(Error::CoordinateOutOfRange(..))
        ));
    }

    #[test]
    fn invalid_configs() {
        let bad = |c: HashGridConfig| assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        bad(HashGridConfig { levels: 0, ..HashGridConfig::default() });
        bad(HashGridConfig { growth_factor: 1.0, ..HashGridConfig::default() });
        bad(HashGridConfig { table_size_log2: 25, ..HashGridConfig::default() });
    }
}
