//! Small transformer building blocks on top of candle.
//!
//! Parameters live in a [`ParamStore`] so that initialization is seeded and
//! reproducible (candle's CPU RNG cannot be seeded), snapshots can be taken
//! for best-checkpoint selection, and optimizer groups can be formed by
//! parameter-name prefix.

mod transformer;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub use transformer::{Decoder, Encoder, TransformerConfig};

#[derive(Debug, Clone)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
}

/// Deep copy of every parameter value.
#[derive(Debug, Clone)]
pub struct Snapshot(BTreeMap<String, Tensor>);

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        ParamStore {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: &str, values: Vec<f64>, dims: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        let t = Tensor::from_vec(values, dims, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(tensor)
    }

    pub fn normal(
        &mut self,
        name: &str,
        dims: &[usize],
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let values = (0..n).map(|_| dist.sample(rng)).collect();
        self.insert(name, values, dims)
    }

    pub fn constant(&mut self, name: &str, dims: &[usize], value: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        self.insert(name, vec![value; n], dims)
    }

    pub fn from_values(&mut self, name: &str, dims: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if values.len() != n {
            return Err(Error::Config(format!(
                "parameter `{name}`: {} values for shape {dims:?}",
                values.len()
            )));
        }
        self.insert(name, values, dims)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn vars_where(&self, pred: impl Fn(&str) -> bool) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(n, _)| pred(n))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn all_vars(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        let map = self
            .vars
            .iter()
            .map(|(n, v)| Ok((n.clone(), v.as_tensor().copy()?)))
            .collect::<Result<_>>()?;
        Ok(Snapshot(map))
    }

    pub fn restore(&self, snapshot: &Snapshot) -> Result<()> {
        for (name, var) in &self.vars {
            let value = snapshot
                .0
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("snapshot lacks `{name}`")))?;
            var.set(value)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let map: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&map, path)?;
        Ok(())
    }

    /// Overwrites every parameter with the weights stored at `path`. The file
    /// must contain exactly this store's parameter names and shapes.
    pub fn load_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let loaded = candle_core::safetensors::load(path, &self.device)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if loaded.len() != self.vars.len() {
            return Err(Error::Checkpoint(format!(
                "weights hold {} tensors, model expects {}",
                loaded.len(),
                self.vars.len()
            )));
        }
        for (name, var) in &self.vars {
            let t = loaded
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("weights lack `{name}`")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "`{name}`: stored shape {:?} != model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

/// Affine map `x W + b` with `W` stored as `(in, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (1.0 / in_dim as f64).sqrt();
        let weight = store.normal(&format!("{name}.weight"), &[in_dim, out_dim], std, rng)?;
        let bias = store.constant(&format!("{name}.bias"), &[out_dim], 0.0)?;
        Ok(Linear {
            weight,
            bias: Some(bias),
        })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Layer normalization over the last dimension, built from differentiable
/// primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.constant(&format!("{name}.gamma"), &[dim], 1.0)?,
            beta: store.constant(&format!("{name}.beta"), &[dim], 0.0)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Inverted dropout with a mask drawn from the caller's RNG.
pub fn dropout(x: &Tensor, p: f64, rng: &mut impl Rng) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let n = x.elem_count();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_init_is_reproducible() {
        let build = || {
            let mut store = ParamStore::new(DType::F32);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let lin = Linear::new(&mut store, "l", 3, 2, &mut rng).unwrap();
            lin.weight().to_vec2::<f32>().unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let lin = Linear::new(&mut store, "l", 2, 2, &mut rng).unwrap();
        let before = lin.weight().to_vec2::<f32>().unwrap();
        let snap = store.snapshot().unwrap();
        store
            .get("l.weight")
            .unwrap()
            .set(&Tensor::zeros((2, 2), DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        assert_eq!(lin.weight().to_vec2::<f32>().unwrap(), vec![vec![0.0; 2]; 2]);
        store.restore(&snap).unwrap();
        assert_eq!(lin.weight().to_vec2::<f32>().unwrap(), before);
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut store = ParamStore::new(DType::F64);
        let ln = LayerNorm::new(&mut store, "ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 4.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0]), 0);
    }

    #[test]
    fn save_load_rejects_shape_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("w.safetensors");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = ParamStore::new(DType::F32);
        Linear::new(&mut a, "l", 2, 3, &mut rng).unwrap();
        a.save(&path).unwrap();
        let mut b = ParamStore::new(DType::F32);
        Linear::new(&mut b, "l", 3, 3, &mut rng).unwrap();
        assert!(matches!(b.load_weights(&path), Err(Error::Checkpoint(_))));
    }
}
