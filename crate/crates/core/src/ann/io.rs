use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{Network, NetworkConfig};
use crate::pooling::NormalizationMode;
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"AMGNNMDL";
pub const MODEL_VERSION: u8 = 1;

/// A trained network together with the input conventions it was trained on.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    net: Network,
    seed: u64,
    mode: NormalizationMode,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    m: usize,
    seed: u64,
    mode: NormalizationMode,
}

impl SurrogateModel {
    pub fn from_parts(
        config: NetworkConfig,
        m: usize,
        seed: u64,
        mode: NormalizationMode,
        params: Vec<f64>,
    ) -> Result<Self> {
        let net = Network::new(&config, m)?;
        if params.len() != net.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a network with {}",
                params.len(),
                net.n_params()
            )));
        }
        Ok(Self {
            net,
            seed,
            mode,
            params,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn config(&self) -> &NetworkConfig {
        self.net.config()
    }

    pub fn m(&self) -> usize {
        self.net.m()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn predict(&self, input: &[f64], neg_log2_h: f64, theta: f64) -> Result<f64> {
        self.net.forward(&self.params, input, neg_log2_h, theta)
    }

    /// Predictions for one view at several thresholds; the conv features are
    /// computed once.
    pub fn predict_thetas(&self, input: &[f64], neg_log2_h: f64, thetas: &[f64]) -> Result<Vec<f64>> {
        let f = self.net.features(&self.params, input)?;
        Ok(thetas
            .iter()
            .map(|&t| self.net.head(&self.params, &f, neg_log2_h, t))
            .collect())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&Header {
            config: self.config().clone(),
            m: self.m(),
            seed: self.seed,
            mode: self.mode,
        })?;
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&[MODEL_VERSION])?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a model file".into()));
        }
        let mut version = [0u8; 1];
        r.read_exact(&mut version)?;
        if version[0] != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {}",
                version[0]
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut buf = vec![0u8; 8 * count];
        r.read_exact(&mut buf)?;
        let params = buf
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        Self::from_parts(header.config, header.m, header.seed, header.mode, params)
    }
}

pub fn save_model(model: &SurrogateModel, path: &Path) -> Result<()> {
    model.write_to(BufWriter::new(File::create(path)?))
}

pub fn load_model(path: &Path) -> Result<SurrogateModel> {
    SurrogateModel::read_from(BufReader::new(File::open(path)?))
}
