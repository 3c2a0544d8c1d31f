//! Fitting loop for the volumetric problem.

use std::path::Path;

use crate::training::model::VolModel;
use crate::training::{Dataset, FitError, TrainConfig, TrainReport};

pub struct VolFit {
    pub report: TrainReport,
    pub model: VolModel,
}

pub fn fit_vol3d(_ds: &Dataset, _cfg: &TrainConfig, _out: Option<&Path>) -> Result<VolFit, FitError> {
    unimplemented!()
}
