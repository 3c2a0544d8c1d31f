//! In-memory training data: frames, cameras, input flow maps and the
//! ground-truth extras synthetic generators provide for evaluation.

use crate::renderer::flo::FlowMap;
use crate::training::loss::{consistency_mask, ConsistencyMask};
use crate::transforms::camera::NdcCamera;

/// Flow supervision for one ordered frame pair.
#[derive(Clone, Debug)]
pub struct FlowPair {
    pub from: usize,
    pub to: usize,
    /// Pixel displacements from frame `from` to frame `to`.
    pub flow: FlowMap,
}

/// Metrics rolled up per frame or per run.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricsRow {
    pub psnr: f64,
    pub flow_epe: f64,
    pub gauge: f64,
}

#[derive(Clone)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    /// One `h x w x 3` buffer per frame, values in [0, 1].
    pub frames: Vec<Vec<f64>>,
    /// Normalized times in [0, 1], one per frame.
    pub times: Vec<f64>,
    /// Per-frame cameras (empty for the 2D toy).
    pub cameras: Vec<NdcCamera>,
    pub flows: Vec<FlowPair>,
    pub near: f64,
    pub far: f64,
    /// Bounding diagonal of the scene content; gauge metrics are reported
    /// relative to it.
    pub scene_diameter: f64,
    /// Per-frame ground-truth depth (distance along ray), if the generator
    /// provides it.
    pub gt_depth: Option<Vec<Vec<f32>>>,
    /// Per-frame ground-truth dynamic-region masks (true = moving content).
    pub dynamic_masks: Option<Vec<Vec<bool>>>,
}

impl Dataset {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn pixel(&self, frame: usize, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        let f = &self.frames[frame];
        [f[i], f[i + 1], f[i + 2]]
    }

    /// Index of the flow pair `from -> to`, if supervised.
    pub fn flow_pair(&self, from: usize, to: usize) -> Option<usize> {
        self.flows.iter().position(|p| p.from == from && p.to == to)
    }

    /// Middle frame, the default canonical choice.
    pub fn middle_frame(&self) -> usize {
        (self.frame_count() - 1) / 2
    }

    /// Forward-backward consistency masks for every supervised pair that has
    /// a reverse counterpart; pairs without one get an all-true mask.
    pub fn consistency_masks(&self, tau_fb: f64) -> Vec<ConsistencyMask> {
        self.flows
            .iter()
            .map(|pair| match self.flow_pair(pair.to, pair.from) {
                Some(rev) => consistency_mask(&pair.flow, &self.flows[rev].flow, tau_fb),
                None => ConsistencyMask {
                    width: self.width,
                    height: self.height,
                    mask: vec![true; self.width * self.height],
                    tau_fb,
                },
            })
            .collect()
    }
}
