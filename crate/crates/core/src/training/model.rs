//! Trainable model bundles and their checkpoint wiring.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::tape::{BlockId, Tape};
use crate::fields::checkpoint::{self, CheckpointError};
use crate::fields::radiance::{Grid2D, MlpRadiance, MlpRadianceSpec, RadianceBlocks};
use crate::fields::warp::{MlpWarp2, MlpWarp3, MlpWarpSpec, WarpBlocks};

fn named(prefix: &str, n: usize) -> Vec<String> {
    // w/b per layer: "<prefix>.0.w", "<prefix>.0.b", ...
    (0..n)
        .flat_map(|l| [format!("{prefix}.{l}.w"), format!("{prefix}.{l}.b")])
        .collect()
}

/// Deformable-image model: SE(2) warp network plus a learnable canonical
/// image.
#[derive(Clone)]
pub struct ToyModel {
    pub warp: MlpWarp2,
    pub grid: Grid2D,
}

impl ToyModel {
    pub fn new(spec: MlpWarpSpec, width: usize, height: usize, seed: u64) -> ToyModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ToyModel {
            warp: MlpWarp2::new(spec, &mut rng),
            grid: Grid2D::new(width, height, [0.5; 3]),
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut s = self.warp.block_sizes();
        s.push(self.grid.block_size());
        s
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut n = named("warp.trunk", self.warp.trunk.layers.len());
        n.extend(named("warp.code", self.warp.code.layers.len()));
        n.push("grid".to_string());
        n
    }

    /// Register every block on a tape, in the fixed order that makes block
    /// ids match across per-chunk tapes and the optimizer.
    pub fn register(&self, tape: &Tape) -> (WarpBlocks, BlockId) {
        for s in self.block_sizes() {
            tape.register_block(s);
        }
        let wb = WarpBlocks::assign(0, self.warp.trunk.layers.len(), self.warp.code.layers.len());
        let grid_block = (self.warp.block_sizes().len()) as BlockId;
        (wb, grid_block)
    }

    pub fn for_each_block_mut(&mut self, mut f: impl FnMut(usize, &mut Vec<f64>)) {
        let mut i = 0;
        for layer in &mut self.warp.trunk.layers {
            f(i, Arc::make_mut(&mut layer.w));
            i += 1;
            f(i, Arc::make_mut(&mut layer.b));
            i += 1;
        }
        for layer in &mut self.warp.code.layers {
            f(i, Arc::make_mut(&mut layer.w));
            i += 1;
            f(i, Arc::make_mut(&mut layer.b));
            i += 1;
        }
        f(i, Arc::make_mut(&mut self.grid.data));
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let names = self.block_names();
        let mut params = self.warp.flat_params();
        params.push(self.grid.data.as_ref().clone());
        let blocks: Vec<(String, &[f64])> = names
            .into_iter()
            .zip(params.iter().map(|p| p.as_slice()))
            .collect();
        let meta = serde_json::json!({
            "warp_spec": self.warp.spec,
            "grid": {"width": self.grid.width, "height": self.grid.height},
        });
        checkpoint::save(path, "toy2d", meta, &blocks)
    }

    pub fn load(path: &Path) -> Result<ToyModel, CheckpointError> {
        let (header, mut blocks) = checkpoint::load(path)?;
        let spec: MlpWarpSpec = serde_json::from_value(header.meta["warp_spec"].clone())?;
        let gw = header.meta["grid"]["width"].as_u64().unwrap() as usize;
        let gh = header.meta["grid"]["height"].as_u64().unwrap() as usize;
        let grid_data = blocks.pop().expect("grid block");
        let mut model = ToyModel::new(spec, gw, gh, 0);
        model.warp.load_flat_params(&blocks);
        model.grid = Grid2D::from_data(gw, gh, grid_data);
        Ok(model)
    }
}

/// Volumetric model: SE(3) warp network plus a canonical radiance network.
#[derive(Clone)]
pub struct VolModel {
    pub warp: MlpWarp3,
    pub radiance: MlpRadiance,
}

impl VolModel {
    pub fn new(warp_spec: MlpWarpSpec, rad_spec: MlpRadianceSpec, seed: u64) -> VolModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VolModel {
            warp: MlpWarp3::new(warp_spec, &mut rng),
            radiance: MlpRadiance::new(rad_spec, &mut rng),
        }
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut s = self.warp.block_sizes();
        s.extend(self.radiance.block_sizes());
        s
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut n = named("warp.trunk", self.warp.trunk.layers.len());
        n.extend(named("warp.code", self.warp.code.layers.len()));
        n.extend(named("radiance.net", self.radiance.net.layers.len()));
        n.extend(named("radiance.code", self.radiance.code.layers.len()));
        n
    }

    pub fn register(&self, tape: &Tape) -> (WarpBlocks, RadianceBlocks) {
        for s in self.block_sizes() {
            tape.register_block(s);
        }
        let wb = WarpBlocks::assign(0, self.warp.trunk.layers.len(), self.warp.code.layers.len());
        let first = self.warp.block_sizes().len() as BlockId;
        let rb = RadianceBlocks::assign(
            first,
            self.radiance.net.layers.len(),
            self.radiance.code.layers.len(),
        );
        (wb, rb)
    }

    pub fn for_each_block_mut(&mut self, mut f: impl FnMut(usize, &mut Vec<f64>)) {
        let mut i = 0;
        for mlp in [&mut self.warp.trunk, &mut self.warp.code, &mut self.radiance.net, &mut self.radiance.code]
        {
            for layer in &mut mlp.layers {
                f(i, Arc::make_mut(&mut layer.w));
                i += 1;
                f(i, Arc::make_mut(&mut layer.b));
                i += 1;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let names = self.block_names();
        let mut params = self.warp.flat_params();
        params.extend(self.radiance.flat_params());
        let blocks: Vec<(String, &[f64])> = names
            .into_iter()
            .zip(params.iter().map(|p| p.as_slice()))
            .collect();
        let meta = serde_json::json!({
            "warp_spec": self.warp.spec,
            "radiance_spec": self.radiance.spec,
        });
        checkpoint::save(path, "volumetric3d", meta, &blocks)
    }

    pub fn load(path: &Path) -> Result<VolModel, CheckpointError> {
        let (header, blocks) = checkpoint::load(path)?;
        let warp_spec: MlpWarpSpec = serde_json::from_value(header.meta["warp_spec"].clone())?;
        let rad_spec: MlpRadianceSpec =
            serde_json::from_value(header.meta["radiance_spec"].clone())?;
        let mut model = VolModel::new(warp_spec, rad_spec, 0);
        let nw = model.warp.block_sizes().len();
        model.warp.load_flat_params(&blocks[..nw]);
        model.radiance.load_flat_params(&blocks[nw..]);
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::map::PointMap3;

    #[test]
    fn toy_checkpoint_reload_is_bit_exact() {
        let dir = std::env::temp_dir().join("warpflow_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("toy.ckpt");
        let model = ToyModel::new(MlpWarpSpec { width: 16, depth: 3, ..MlpWarpSpec::desk(2) }, 8, 8, 42);
        model.save(&path).unwrap();
        let back = ToyModel::load(&path).unwrap();
        for (a, b) in model.warp.flat_params().iter().zip(back.warp.flat_params().iter()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (x, y) in model.grid.data.iter().zip(back.grid.data.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn vol_checkpoint_reload_reproduces_evaluations() {
        let dir = std::env::temp_dir().join("warpflow_model_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("vol.ckpt");
        let mut model = VolModel::new(
            MlpWarpSpec { width: 16, depth: 3, ..MlpWarpSpec::desk(3) },
            MlpRadianceSpec { width: 16, depth: 3, ..MlpRadianceSpec::desk() },
            7,
        );
        // Non-identity warp so the check is nontrivial.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        model.warp.trunk = crate::fields::mlp::Mlp::new(
            &[crate::fields::posenc_dim(3, model.warp.spec.pe_point) + model.warp.spec.code_dim,
              16, 16, 6],
            &mut rng,
        );
        model.save(&path).unwrap();
        let back = VolModel::load(&path).unwrap();
        let p = [0.2, -0.3, 0.6];
        let a = model.warp.eval(p, 0.4);
        let b = back.warp.eval(p, 0.4);
        for k in 0..3 {
            assert_eq!(a[k].to_bits(), b[k].to_bits());
        }
    }

    #[test]
    fn block_registration_matches_sizes() {
        let model = ToyModel::new(MlpWarpSpec { width: 8, depth: 3, ..MlpWarpSpec::desk(2) }, 4, 4, 0);
        let tape = Tape::new();
        let (wb, grid_block) = model.register(&tape);
        assert_eq!(tape.block_count(), model.block_sizes().len());
        assert_eq!(wb.trunk.len(), model.warp.trunk.layers.len());
        assert_eq!(grid_block as usize, model.block_sizes().len() - 1);
        let names = model.block_names();
        assert_eq!(names.len(), model.block_sizes().len());
        assert_eq!(names.last().unwrap(), "grid");
    }
}
