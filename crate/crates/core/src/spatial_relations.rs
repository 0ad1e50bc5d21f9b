//! Context-aware spatial relation modeling (CSR).
//!
//! Pixels are nodes of a fixed 8-connected grid graph. Each pixel first
//! receives the average of its neighbours, then a one-layer graph convolution
//! and a final 1×1 projection refine the aggregated context.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use mrsnet_autograd::{CsrMatrix, Var};

use crate::error::{Error, Result};
use crate::layers::ChannelLinear;
use crate::params::{Ctx, Init};

/// Neighbourhood definition of the pixel graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// 3×3 window minus the centre.
    Eight,
}

/// Row-normalized pixel adjacency over an `H×W` grid, `N = H·W` nodes in
/// row-major order.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    pub height: usize,
    pub width: usize,
    pub connectivity: Connectivity,
    pub matrix: Arc<CsrMatrix>,
}

impl AdjacencyMatrix {
    pub fn nodes(&self) -> usize {
        self.height * self.width
    }
}

/// Builds the 8-connected, row-normalized adjacency. A lone pixel has no
/// neighbours, so its row stays zero.
pub fn build_adjacency(height: usize, width: usize) -> Result<AdjacencyMatrix> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidInput(format!(
            "adjacency needs a non-empty grid, got {height}x{width}"
        )));
    }
    let n = height * width;
    let mut triplets = Vec::with_capacity(n * 8);
    let mut neighbours = Vec::with_capacity(8);
    for r in 0..height {
        for c in 0..width {
            neighbours.clear();
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr >= 0 && nc >= 0 && (nr as usize) < height && (nc as usize) < width {
                        neighbours.push(nr as usize * width + nc as usize);
                    }
                }
            }
            let weight = 1.0 / neighbours.len().max(1) as f64;
            let i = r * width + c;
            triplets.extend(neighbours.iter().map(|&j| (i, j, weight)));
        }
    }
    Ok(AdjacencyMatrix {
        height,
        width,
        connectivity: Connectivity::Eight,
        matrix: Arc::new(CsrMatrix::from_triplets(n, n, triplets)?),
    })
}

type Cache = RwLock<HashMap<(usize, usize), AdjacencyMatrix>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Shared adjacency for `(H, W)`, built on first use.
pub fn cached_adjacency(height: usize, width: usize) -> Result<AdjacencyMatrix> {
    if let Some(adj) = cache()
        .read()
        .unwrap_or_else(|e| e.into_inner())
        .get(&(height, width))
    {
        return Ok(adj.clone());
    }
    let built = build_adjacency(height, width)?;
    let mut guard = cache().write().unwrap_or_else(|e| e.into_inner());
    Ok(guard.entry((height, width)).or_insert(built).clone())
}

/// `C = X_flat · Aᵀ` on (B, dim, N): every pixel becomes the mean of its
/// neighbours.
pub fn aggregate_context<'t>(x_flat: Var<'t>, adjacency: &AdjacencyMatrix) -> Result<Var<'t>> {
    if x_flat.rank() != 3 || x_flat.dim(2) != adjacency.nodes() {
        return Err(Error::Shape(format!(
            "context aggregation over a {}x{} grid needs (B, dim, {}), got {:?}",
            adjacency.height,
            adjacency.width,
            adjacency.nodes(),
            x_flat.shape()
        )));
    }
    Ok(x_flat.sparse_apply(&adjacency.matrix)?)
}

/// One graph-convolution layer followed by the output projection.
#[derive(Debug, Clone)]
pub struct GraphRefine {
    pub gcn: ChannelLinear,
    pub project: ChannelLinear,
}

pub struct GraphRefineOutput<'t> {
    pub gcn: Var<'t>,
    pub relationship: Var<'t>,
}

impl GraphRefine {
    pub fn new(init: &mut Init<'_>, dim: usize) -> Self {
        Self {
            gcn: ChannelLinear::new(init, "gcn", dim, dim),
            project: ChannelLinear::new(init, "project", dim, dim),
        }
    }

    pub fn forward_detailed<'t>(&self, ctx: &Ctx<'t>, context: Var<'t>) -> Result<GraphRefineOutput<'t>> {
        let gcn = self.gcn.forward(ctx, context)?.relu()?;
        let relationship = self.project.forward(ctx, gcn)?;
        Ok(GraphRefineOutput { gcn, relationship })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, context: Var<'t>) -> Result<Var<'t>> {
        Ok(self.forward_detailed(ctx, context)?.relationship)
    }
}

/// Full CSR block: (B, dim, H, W) → F_relationship (B, dim, H, W).
#[derive(Debug, Clone)]
pub struct SpatialRelations {
    pub refine: GraphRefine,
    dim: usize,
}

impl SpatialRelations {
    pub fn new(init: &mut Init<'_>, dim: usize) -> Self {
        Self {
            refine: GraphRefine::new(init, dim),
            dim,
        }
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.dim {
            return Err(Error::Config(format!(
                "CSR configured for {} channels, input is {shape:?}",
                self.dim
            )));
        }
        let _scope = ctx.tape().enter("csr");
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let adjacency = cached_adjacency(h, w)?;
        let context = aggregate_context(x.reshape([b, c, h * w])?, &adjacency)?;
        Ok(self.refine.forward(ctx, context)?.reshape([b, c, h, w])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mrsnet_autograd::{Tape, Tensor};

    #[test]
    fn two_by_two_grid_weights_are_one_third() {
        let adj = build_adjacency(2, 2).unwrap();
        let dense = adj.matrix.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert_eq!(dense.get(&[i, j]), expected);
            }
        }
    }

    #[test]
    fn three_by_three_neighbour_counts() {
        let adj = build_adjacency(3, 3).unwrap();
        let count = |i: usize| adj.matrix.row(i).count();
        assert_eq!(count(4), 8);
        assert!(adj.matrix.row(4).all(|(_, v)| v == 1.0 / 8.0));
        for corner in [0, 2, 6, 8] {
            assert_eq!(count(corner), 3);
        }
        for edge in [1, 3, 5, 7] {
            assert_eq!(count(edge), 5);
            assert!(adj.matrix.row(edge).all(|(_, v)| v == 1.0 / 5.0));
        }
    }

    #[test]
    fn single_pixel_has_zero_row() {
        let adj = build_adjacency(1, 1).unwrap();
        assert_eq!(adj.matrix.nnz(), 0);
        assert_eq!(adj.matrix.to_dense().data(), &[0.0]);
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(build_adjacency(0, 3).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let tape = Tape::no_grad();
        let adj = build_adjacency(2, 2).unwrap();
        let x = tape.constant(Tensor::new([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = aggregate_context(x, &adj).unwrap().value();
        assert!((c.data()[0] - 3.0).abs() < 1e-12);

        let adj3 = build_adjacency(3, 3).unwrap();
        let five = tape.constant(Tensor::full([2, 3, 9], 5.0));
        let c = aggregate_context(five, &adj3).unwrap().value();
        assert!(c.data().iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let tape = Tape::no_grad();
        let adj = build_adjacency(2, 2).unwrap();
        let x = tape.constant(Tensor::zeros([1, 1, 5]));
        assert!(aggregate_context(x, &adj).is_err());
    }

    #[test]
    fn cache_returns_shared_matrix() {
        let a = cached_adjacency(5, 7).unwrap();
        let b = cached_adjacency(5, 7).unwrap();
        assert!(Arc::ptr_eq(&a.matrix, &b.matrix));
    }
}
