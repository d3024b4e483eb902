//! ε-neighborhood graph over stored embeddings.

use std::io::Write;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{StoreError, StoreSnapshot};
use crate::inference::LatentVector;

pub const DEFAULT_DEGREE_CAP: usize = 32;

const GRAPH_MAGIC: [u8; 8] = *b"SQGRAPH\0";
const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphOptions {
    /// Keep an edge only when each endpoint is among the other's `cap`
    /// nearest neighbors within ε. `None` keeps every edge within ε.
    pub degree_cap: Option<usize>,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            degree_cap: Some(DEFAULT_DEGREE_CAP),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGraph {
    epsilon: f64,
    degree_cap: Option<usize>,
    store_version: u64,
    adjacency: Vec<Vec<u64>>,
}

/// Euclidean distance accumulated in f64.
pub fn distance(a: &LatentVector, b: &LatentVector) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn build_graph(snapshot: &StoreSnapshot, epsilon: f64) -> Result<EpsilonGraph, StoreError> {
    build_graph_with(snapshot, epsilon, GraphOptions::default())
}

pub fn build_graph_with(
    snapshot: &StoreSnapshot,
    epsilon: f64,
    options: GraphOptions,
) -> Result<EpsilonGraph, StoreError> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(StoreError::InvalidParameter(format!(
            "epsilon must be finite and non-negative, got {epsilon}"
        )));
    }
    if options.degree_cap == Some(0) {
        return Err(StoreError::InvalidParameter("degree cap must be positive".into()));
    }
    let records = snapshot.records();
    let near = |i: usize| -> Vec<u64> {
        let vi = &records[i].vector;
        let mut within: Vec<(f64, u64)> = records
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .filter_map(|(j, r)| {
                let d = distance(vi, &r.vector);
                (d <= epsilon).then_some((d, j as u64))
            })
            .collect();
        if let Some(cap) = options.degree_cap {
            if within.len() > cap {
                let by_distance = |a: &(f64, u64), b: &(f64, u64)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                within.select_nth_unstable_by(cap - 1, by_distance);
                within.truncate(cap);
            }
        }
        let mut ids: Vec<u64> = within.into_iter().map(|(_, j)| j).collect();
        ids.sort_unstable();
        ids
    };
    #[cfg(feature = "parallel")]
    let candidates: Vec<Vec<u64>> = (0..records.len()).into_par_iter().map(near).collect();
    #[cfg(not(feature = "parallel"))]
    let candidates: Vec<Vec<u64>> = (0..records.len()).map(near).collect();

    let adjacency = match options.degree_cap {
        None => candidates,
        Some(_) => candidates
            .iter()
            .enumerate()
            .map(|(i, list)| {
                list.iter()
                    .copied()
                    .filter(|&j| candidates[j as usize].binary_search(&(i as u64)).is_ok())
                    .collect()
            })
            .collect(),
    };
    Ok(EpsilonGraph {
        epsilon,
        degree_cap: options.degree_cap,
        store_version: snapshot.version(),
        adjacency,
    })
}

impl EpsilonGraph {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn degree_cap(&self) -> Option<usize> {
        self.degree_cap
    }

    /// Version of the snapshot this graph was built from.
    pub fn store_version(&self) -> u64 {
        self.store_version
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    /// Sorted neighbor ids.
    pub fn neighbors(&self, id: u64) -> Result<&[u64], StoreError> {
        usize::try_from(id)
            .ok()
            .and_then(|i| self.adjacency.get(i))
            .map(Vec::as_slice)
            .ok_or(StoreError::UnknownId(id))
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.adjacency.len() + 16 * self.edge_count());
        out.extend_from_slice(&GRAPH_MAGIC);
        out.extend_from_slice(&GRAPH_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.degree_cap.unwrap_or(0) as u32).to_le_bytes());
        out.extend_from_slice(&self.store_version.to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.extend_from_slice(&(self.adjacency.len() as u64).to_le_bytes());
        for list in &self.adjacency {
            out.extend_from_slice(&(list.len() as u32).to_le_bytes());
            for &j in list {
                out.extend_from_slice(&j.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let corrupt = |m: &str| StoreError::Corrupt(format!("graph file: {m}"));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], StoreError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| corrupt("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != GRAPH_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = super::le_u32(take(4)?);
        if version != GRAPH_FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let cap = super::le_u32(take(4)?) as usize;
        let store_version = super::le_u64(take(8)?);
        let epsilon = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        let n = super::le_u64(take(8)?) as usize;
        let mut adjacency = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            let deg = super::le_u32(take(4)?) as usize;
            let list: Vec<u64> = take(deg.checked_mul(8).ok_or_else(|| corrupt("degree overflow"))?)?
                .chunks_exact(8)
                .map(super::le_u64)
                .collect();
            if list.iter().any(|&j| j as usize >= n) || list.windows(2).any(|w| w[0] >= w[1]) {
                return Err(corrupt("neighbor list out of range or unsorted"));
            }
            adjacency.push(list);
        }
        if pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            epsilon,
            degree_cap: (cap > 0).then_some(cap),
            store_version,
            adjacency,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        // write then rename so readers never observe a half-written graph
        let path = path.as_ref();
        let tmp = path.with_extension("bin.tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize, x: f32) -> LatentVector {
        let mut v = [0f32; 32];
        v[i] = x;
        v
    }

    #[test]
    fn identical_vectors_are_adjacent_at_zero() {
        let s = StoreSnapshot::from_vectors([[1.0; 32], [1.0; 32], [2.0; 32]]);
        let g = build_graph(&s, 0.0).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[1]);
        assert_eq!(g.neighbors(1).unwrap(), &[0]);
        assert!(g.neighbors(2).unwrap().is_empty());
        assert!(g.neighbors(3).is_err());
    }

    #[test]
    fn boundary_distance_is_included() {
        let mut b = [0f32; 32];
        b[0] = 3.0;
        b[1] = 4.0;
        let s = StoreSnapshot::from_vectors([[0.0; 32], b]);
        assert_eq!(build_graph(&s, 5.0).unwrap().edge_count(), 1);
        assert_eq!(build_graph(&s, 4.999_999).unwrap().edge_count(), 0);
    }

    #[test]
    fn cap_keeps_mutual_nearest() {
        // a hub at the origin with five spokes; cap 2 leaves the two nearest
        let mut vs = vec![[0f32; 32]];
        vs.extend((1..=5).map(|i| unit(i, i as f32)));
        let s = StoreSnapshot::from_vectors(vs);
        let g = build_graph_with(&s, 100.0, GraphOptions { degree_cap: Some(2) }).unwrap();
        assert_eq!(g.neighbors(0).unwrap(), &[1, 2]);
        assert!(g.max_degree() <= 2);
        for i in 0..6 {
            for &j in g.neighbors(i).unwrap() {
                assert!(g.neighbors(j).unwrap().contains(&i));
            }
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let s = StoreSnapshot::from_vectors((0..20).map(|i| unit(i % 32, i as f32 * 0.1)));
        let g = build_graph(&s, 0.35).unwrap();
        let back = EpsilonGraph::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
        let mut bad = g.to_bytes();
        bad.push(1);
        assert!(EpsilonGraph::from_bytes(&bad).is_err());
        assert!(build_graph(&s, -1.0).is_err());
        assert!(build_graph(&s, f64::NAN).is_err());
    }
}
