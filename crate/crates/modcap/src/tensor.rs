//! Dense tensors, the named parameter store, and the binary checkpoint format.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Dense real array. Parameters set `requires_grad`; `grad` is filled in by
/// the trainer after gradients have been reduced.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(values: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Contract(format!(
                "tensor shape {:?} holds {} elements but {} values were given",
                shape,
                n,
                values.len()
            )));
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn with_grad(values: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let mut t = Tensor::new(values, shape)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            values: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// Uniform init in `[lo, hi]`.
    pub fn uniform(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut ChaCha12Rng) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(lo..=hi)).collect();
        Tensor {
            shape,
            values,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Install a gradient; its shape must match the tensor's.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.values.len() {
            return Err(Error::dimension(
                "gradient shape",
                &self.shape,
                &[grad.len()],
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// All learnable tensors of a model, keyed by name. Iteration order is the
/// sorted name order, which the checkpoint format also uses.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Mark parameters as frozen: the optimizer skips them.
    pub fn freeze_matching(&mut self, prefix: &str) {
        let names: Vec<String> = self
            .entries
            .keys()
            .filter(|n| n.starts_with(prefix))
            .cloned()
            .collect();
        self.frozen.extend(names);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }
}

// ── Checkpoint format ───────────────────────────────────────────────────
//
// Layout: 8-byte magic "MODCAP01", then per parameter in sorted name order:
//   u32 name length, name bytes (UTF-8), u32 rank, u32 per dimension,
//   f64 little-endian values (product of dims of them).

const CHECKPOINT_MAGIC: &[u8; 8] = b"MODCAP01";

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    for (name, tensor) in store.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC)
        )));
    }
    let mut store = ParamStore::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)
            .map_err(|_| Error::Checkpoint("truncated parameter name".into()))?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;

        let mut rank_buf = [0u8; 4];
        r.read_exact(&mut rank_buf)
            .map_err(|_| Error::Checkpoint(format!("truncated rank for `{name}`")))?;
        let rank = u32::from_le_bytes(rank_buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut dim_buf = [0u8; 4];
            r.read_exact(&mut dim_buf)
                .map_err(|_| Error::Checkpoint(format!("truncated shape for `{name}`")))?;
            shape.push(u32::from_le_bytes(dim_buf) as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut v_buf = [0u8; 8];
            r.read_exact(&mut v_buf)
                .map_err(|_| Error::Checkpoint(format!("truncated values for `{name}`")))?;
            values.push(f64::from_le_bytes(v_buf));
        }
        store.insert(name, Tensor::with_grad(values, shape)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn tensor_shape_must_match_values() {
        assert!(Tensor::new(vec![1.0, 2.0], vec![3]).is_err());
        assert!(Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).is_ok());
    }

    #[test]
    fn grad_shape_checked() {
        let mut t = Tensor::zeros(vec![2, 2]);
        assert!(t.set_grad(vec![0.0; 3]).is_err());
        assert!(t.set_grad(vec![0.0; 4]).is_ok());
        assert_eq!(t.grad().unwrap().len(), 4);
    }

    #[test]
    fn uniform_init_within_bounds() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let t = Tensor::uniform(vec![64], -0.08, 0.08, &mut rng);
        assert!(t.values().iter().all(|&v| (-0.08..=0.08).contains(&v)));
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        store.insert("z.last", Tensor::uniform(vec![3, 2], -1.0, 1.0, &mut rng));
        store.insert("a.first", Tensor::uniform(vec![5], -1.0, 1.0, &mut rng));
        store.insert("m.mid", Tensor::uniform(vec![2, 2, 2], -1.0, 1.0, &mut rng));
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), store.len());
        for (name, tensor) in store.iter() {
            let got = loaded.get(name).unwrap();
            assert_eq!(got.shape(), tensor.shape());
            // bit-exact comparison
            for (a, b) in got.values().iter().zip(tensor.values()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTMAGIC extra").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn checkpoint_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let mut store = ParamStore::new();
        store.insert(
            "w",
            Tensor::with_grad(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]).unwrap(),
        );
        save_checkpoint(&store, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_))
        ));
    }

    proptest! {
        #[test]
        fn checkpoint_round_trip_arbitrary_values(values in proptest::collection::vec(-1e12f64..1e12, 1..40)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.bin");
            let mut store = ParamStore::new();
            let n = values.len();
            store.insert("p", Tensor::with_grad(values.clone(), vec![n]).unwrap());
            save_checkpoint(&store, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            let got = loaded.get("p").unwrap();
            for (a, b) in got.values().iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
