//! Surrogate model container: JSON header (config, normalization, grid,
//! format version) followed by the raw little-endian parameter vector.
//! A byte of damage anywhere fails the checksum before anything loads.

use super::model::{FnoConfig, Layout, OutputNorm, SurrogateModel};
use crate::container::{self, MODEL_FORMAT_VERSION, MODEL_MAGIC};
use crate::error::{Error, Result};
use crate::params::ParamBounds;
use crate::plane::PlaneGrid;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelHeader {
    pub config: FnoConfig,
    pub grid: PlaneGrid,
    pub bounds: ParamBounds,
    pub out_norm: OutputNorm,
    pub n_params: usize,
}

impl SurrogateModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = ModelHeader {
            config: self.config,
            grid: self.grid,
            bounds: self.bounds,
            out_norm: self.out_norm,
            n_params: self.params_flat.len(),
        };
        container::write_file(path, MODEL_MAGIC, MODEL_FORMAT_VERSION, &header, &[&self.params_flat])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, mut arrays): (ModelHeader, _) =
            container::read_file(path, MODEL_MAGIC, MODEL_FORMAT_VERSION)?;
        let layout = Layout::new(&header.config);
        if arrays.len() != 1 || arrays[0].len() != header.n_params || layout.total != header.n_params
        {
            return Err(Error::Format(
                "parameter array does not match the declared architecture".into(),
            ));
        }
        header.config.validate_for_grid(&header.grid)?;
        Ok(Self {
            config: header.config,
            grid: header.grid,
            bounds: header.bounds,
            out_norm: header.out_norm,
            layout,
            params_flat: arrays.pop().unwrap(),
        })
    }

    /// Read configuration and metadata without touching the parameter arrays.
    pub fn inspect(path: &Path) -> Result<ModelHeader> {
        let (_, header) = container::read_header_only::<ModelHeader>(path, MODEL_MAGIC)?;
        Ok(header)
    }
}
