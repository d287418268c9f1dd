//! Named flat collections of real-valued parameter tensors: the unit of all
//! weight-space algebra. Two sets are combinable iff their schemas (names and
//! shapes) match; the flattened view orders tensors name-lexicographically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A dense real tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "tensor".into(),
                expected: format!("{n} values for shape {shape:?}"),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// The (name, shape) signature of a weight set, in name-lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl Schema {
    /// Stable hex digest over names and shapes.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, shape) in &self.entries {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((shape.len() as u64).to_le_bytes());
            for d in shape {
                hasher.update((*d as u64).to_le_bytes());
            }
        }
        hex_digest(hasher)
    }

    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    let bytes = hasher.finalize();
    let mut s = String::with_capacity(64);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Ordered map name -> tensor. The map order (BTreeMap) is the canonical
/// flattening order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WeightSet {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            entries: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn schema_hash(&self) -> String {
        self.schema().hash()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn zeros_like(&self) -> WeightSet {
        let mut out = WeightSet::new();
        for (name, t) in &self.tensors {
            out.insert(name.clone(), Tensor::zeros(&t.shape));
        }
        out
    }

    /// Canonical linear view: values concatenated in name-lexicographic order.
    pub fn flatten(&self) -> (Vec<f64>, Schema) {
        let mut v = Vec::with_capacity(self.param_count());
        for t in self.tensors.values() {
            v.extend_from_slice(&t.data);
        }
        (v, self.schema())
    }

    pub fn unflatten(vector: &[f64], schema: &Schema) -> Result<WeightSet> {
        if vector.len() != schema.param_count() {
            return Err(Error::ShapeMismatch {
                context: "unflatten".into(),
                expected: format!("{} values", schema.param_count()),
                got: format!("{}", vector.len()),
            });
        }
        let mut out = WeightSet::new();
        let mut offset = 0;
        for (name, shape) in &schema.entries {
            let n: usize = shape.iter().product();
            out.insert(
                name.clone(),
                Tensor::from_vec(shape, vector[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(out)
    }

    pub fn assert_same_schema(&self, other: &WeightSet) -> Result<()> {
        if self.schema() != other.schema() {
            return Err(Error::SchemaMismatch(format!(
                "{} vs {}",
                self.schema_hash(),
                other.schema_hash()
            )));
        }
        Ok(())
    }

    /// Elementwise a*self + b*other into a new set.
    pub fn lin_comb(&self, a: f64, other: &WeightSet, b: f64) -> Result<WeightSet> {
        self.assert_same_schema(other)?;
        let mut out = self.clone();
        for (name, t) in out.tensors.iter_mut() {
            let o = &other.tensors[name];
            for (x, y) in t.data.iter_mut().zip(o.data.iter()) {
                *x = a * *x + b * y;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &WeightSet) -> Result<WeightSet> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &WeightSet) -> Result<WeightSet> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn scaled(&self, a: f64) -> WeightSet {
        let mut out = self.clone();
        for t in out.tensors.values_mut() {
            for x in t.data.iter_mut() {
                *x *= a;
            }
        }
        out
    }

    /// In-place self += a*other.
    pub fn axpy(&mut self, a: f64, other: &WeightSet) -> Result<()> {
        self.assert_same_schema(other)?;
        for (name, t) in self.tensors.iter_mut() {
            let o = &other.tensors[name];
            for (x, y) in t.data.iter_mut().zip(o.data.iter()) {
                *x += a * y;
            }
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest relative elementwise deviation from `other`, scaled by the
    /// larger max-abs of the two sets.
    pub fn max_rel_diff(&self, other: &WeightSet) -> Result<f64> {
        self.assert_same_schema(other)?;
        let scale = self.max_abs().max(other.max_abs()).max(1e-300);
        let mut m: f64 = 0.0;
        for (name, t) in &self.tensors {
            let o = &other.tensors[name];
            for (x, y) in t.data.iter().zip(o.data.iter()) {
                m = m.max((x - y).abs());
            }
        }
        Ok(m / scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_weights(seed: u64) -> WeightSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ws = WeightSet::new();
        for (name, shape) in [
            ("a.weight", vec![3usize, 4]),
            ("a.bias", vec![4]),
            ("b.kernel", vec![2, 2, 3]),
        ] {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ws.insert(name, Tensor::from_vec(&shape, data).unwrap());
        }
        ws
    }

    #[test]
    fn flatten_round_trips_bitwise() {
        let ws = random_weights(1);
        let (v, schema) = ws.flatten();
        let back = WeightSet::unflatten(&v, &schema).unwrap();
        assert_eq!(ws, back);
    }

    #[test]
    fn flatten_is_linear() {
        let a = random_weights(2);
        let b = random_weights(3);
        let (va, _) = a.flatten();
        let (vb, _) = b.flatten();
        let (vsum, _) = a.add(&b).unwrap().flatten();
        for ((x, y), s) in va.iter().zip(vb.iter()).zip(vsum.iter()) {
            assert_eq!(x + y, *s);
        }
    }

    #[test]
    fn mismatched_schema_rejected() {
        let a = random_weights(4);
        let mut b = random_weights(5);
        b.insert("extra", Tensor::zeros(&[2]));
        assert!(a.add(&b).is_err());
        let (v, _) = a.flatten();
        assert!(WeightSet::unflatten(&v, &b.schema()).is_err());
    }

    #[test]
    fn schema_hash_is_stable_and_shape_sensitive() {
        let a = random_weights(6);
        let b = random_weights(7);
        assert_eq!(a.schema_hash(), b.schema_hash());
        let mut c = WeightSet::new();
        c.insert("a.weight", Tensor::zeros(&[4, 3]));
        c.insert("a.bias", Tensor::zeros(&[4]));
        c.insert("b.kernel", Tensor::zeros(&[2, 2, 3]));
        assert_ne!(a.schema_hash(), c.schema_hash());
    }
}
