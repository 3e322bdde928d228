use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::Serialize;

use super::{GridRef, GridSpec};
use crate::error::{Error, Result};

/// A real scalar sampled at every grid node.
#[derive(Clone)]
pub struct ScalarField {
    grid: GridRef,
    values: Vec<f64>,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("grid", self.grid.spec())
            .field("min", &self.min())
            .field("max", &self.max())
            .finish()
    }
}

impl ScalarField {
    pub fn new(grid: &GridRef, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some((node, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { node, value });
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Wraps values produced by grid operations; finiteness is not rechecked.
    pub(crate) fn from_raw(grid: &GridRef, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn constant(grid: &GridRef, value: f64) -> Self {
        Self::from_raw(grid, vec![value; grid.node_count()])
    }

    pub fn zeros(grid: &GridRef) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at the node coordinates.
    pub fn from_fn(grid: &GridRef, f: impl Fn(&[f64]) -> f64) -> Self {
        let spec = grid.spec();
        let values = (0..spec.node_count())
            .map(|node| f(&spec.coordinates(node)))
            .collect();
        Self::from_raw(grid, values)
    }

    pub fn grid(&self) -> &GridRef {
        &self.grid
    }

    pub fn spec(&self) -> &GridSpec {
        self.grid.spec()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec() == other.grid.spec()
    }

    pub fn ensure_same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_grid(other));
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_raw(&self.grid, values)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn shift(&self, s: f64) -> Self {
        self.map(|v| v + s)
    }

    /// `u^p`; for non-integer `p` this goes through `exp(p ln u)` and needs `u > 0`.
    pub fn powf(&self, p: f64) -> Self {
        if p == p.trunc() && p.abs() <= 64.0 {
            let k = p as i32;
            self.map(|v| v.powi(k))
        } else {
            self.map(|v| (p * v.ln()).exp())
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec().cell_volume()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.spec().cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.spec().cell_volume()).sqrt()
    }

    /// `∫ u v` with the uniform (spectrally exact) quadrature.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        let s: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        s * self.spec().cell_volume()
    }

    /// Node of the minimum value and that value.
    pub fn argmin(&self) -> (usize, f64) {
        self.values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
    }

    /// Fails with `NonPositiveField` at the first node where `u <= 0`.
    pub fn ensure_positive(&self) -> Result<()> {
        match self.values.iter().position(|&v| v <= 0.0 || !v.is_finite()) {
            Some(node) => Err(Error::NonPositiveField {
                node,
                value: self.values[node],
            }),
            None => Ok(()),
        }
    }

    pub fn is_identically(&self, value: f64) -> bool {
        self.values.iter().all(|&v| v == value)
    }
}

impl Add for &ScalarField {
    type Output = ScalarField;
    fn add(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &ScalarField {
    type Output = ScalarField;
    fn sub(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &ScalarField {
    type Output = ScalarField;
    fn mul(self, rhs: &ScalarField) -> ScalarField {
        self.zip_map(rhs, |a, b| a * b)
    }
}

impl Neg for &ScalarField {
    type Output = ScalarField;
    fn neg(self) -> ScalarField {
        self.map(|v| -v)
    }
}

/// Discrete surrogates for the norms used in hypothesis checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub sup: f64,
    pub grad_sup: f64,
    pub l1: f64,
    pub l2: f64,
    pub mean: f64,
    pub min: f64,
}

/// A vector field: `n` scalar components on one grid.
#[derive(Clone, Debug)]
pub struct VectorField {
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("vector field needs components".into()))?;
        if components.len() != first.spec().dim {
            return Err(Error::InvalidInput(format!(
                "expected {} components, got {}",
                first.spec().dim,
                components.len()
            )));
        }
        for c in &components[1..] {
            first.ensure_same_grid(c)?;
        }
        Ok(Self { components })
    }

    pub(crate) fn from_components(components: Vec<ScalarField>) -> Self {
        Self { components }
    }

    pub fn zeros(grid: &GridRef) -> Self {
        Self::from_components((0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect())
    }

    pub fn constant(grid: &GridRef, value: &[f64]) -> Self {
        assert_eq!(value.len(), grid.dim());
        Self::from_components(value.iter().map(|&v| ScalarField::constant(grid, v)).collect())
    }

    /// Field whose only nonzero component is `axis`.
    pub fn axis_field(component: ScalarField, axis: usize) -> Self {
        let grid = component.grid().clone();
        let mut comps: Vec<ScalarField> =
            (0..grid.dim()).map(|_| ScalarField::zeros(&grid)).collect();
        comps[axis] = component;
        Self::from_components(comps)
    }

    pub fn grid(&self) -> &GridRef {
        self.components[0].grid()
    }

    pub fn spec(&self) -> &GridSpec {
        self.components[0].spec()
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, axis: usize) -> &ScalarField {
        &self.components[axis]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.components
    }

    pub fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self::from_components(self.components.iter().map(f).collect())
    }

    pub fn zip_components(
        &self,
        other: &VectorField,
        f: impl Fn(&ScalarField, &ScalarField) -> ScalarField,
    ) -> Self {
        Self::from_components(
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_components(|c| c.scale(s))
    }

    /// Multiplies every component by a scalar field.
    pub fn scale_by(&self, s: &ScalarField) -> Self {
        self.map_components(|c| c * s)
    }

    /// Pointwise Euclidean inner product.
    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut acc = &self.components[0] * &other.components[0];
        for (a, b) in self.components.iter().zip(&other.components).skip(1) {
            acc = acc.zip_map(&(a * b), |x, y| x + y);
        }
        acc
    }

    pub fn norm_squared(&self) -> ScalarField {
        self.dot(self)
    }

    /// Largest pointwise Euclidean length.
    pub fn sup_norm(&self) -> f64 {
        self.norm_squared().max().max(0.0).sqrt()
    }

    /// Largest absolute component value.
    pub fn max_abs_component(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.sup_norm()))
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(ScalarField::mean).collect()
    }

    /// Removes the mean of every component.
    pub fn remove_mean(&self) -> Self {
        self.map_components(|c| c.shift(-c.mean()))
    }

    /// `∫ ⟨V, P⟩`.
    pub fn inner(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.inner(b))
            .sum()
    }
}

impl Add for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        self.zip_components(rhs, |a, b| a + b)
    }
}

impl Sub for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        self.zip_components(rhs, |a, b| a - b)
    }
}

/// Symmetric 2-tensor stored as its upper triangle, row by row:
/// `(0,0), (0,1), …, (0,n-1), (1,1), …, (n-1,n-1)`.
#[derive(Clone, Debug)]
pub struct SymTensorField {
    dim: usize,
    components: Vec<ScalarField>,
}

impl SymTensorField {
    pub fn new(components: Vec<ScalarField>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::InvalidInput("tensor field needs components".into()))?;
        let dim = first.spec().dim;
        if components.len() != dim * (dim + 1) / 2 {
            return Err(Error::InvalidInput(format!(
                "expected {} tensor components, got {}",
                dim * (dim + 1) / 2,
                components.len()
            )));
        }
        for c in &components[1..] {
            first.ensure_same_grid(c)?;
        }
        Ok(Self { dim, components })
    }

    pub(crate) fn from_components(dim: usize, components: Vec<ScalarField>) -> Self {
        debug_assert_eq!(components.len(), dim * (dim + 1) / 2);
        Self { dim, components }
    }

    pub fn zeros(grid: &GridRef) -> Self {
        let dim = grid.dim();
        Self::from_components(
            dim,
            (0..dim * (dim + 1) / 2).map(|_| ScalarField::zeros(grid)).collect(),
        )
    }

    /// Builds a tensor from a function of the (row, column) pair; only the
    /// upper triangle is queried.
    pub fn from_entries(dim: usize, mut entry: impl FnMut(usize, usize) -> ScalarField) -> Self {
        let mut comps = Vec::with_capacity(dim * (dim + 1) / 2);
        for i in 0..dim {
            for j in i..dim {
                comps.push(entry(i, j));
            }
        }
        Self::from_components(dim, comps)
    }

    /// `φ δ_ij`.
    pub fn isotropic(phi: &ScalarField) -> Self {
        let dim = phi.spec().dim;
        let zero = ScalarField::zeros(phi.grid());
        Self::from_entries(dim, |i, j| if i == j { phi.clone() } else { zero.clone() })
    }

    pub fn index(dim: usize, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * dim - i * (i + 1) / 2 + j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &GridRef {
        self.components[0].grid()
    }

    pub fn get(&self, i: usize, j: usize) -> &ScalarField {
        &self.components[Self::index(self.dim, i, j)]
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn map_components(&self, f: impl Fn(&ScalarField) -> ScalarField) -> Self {
        Self::from_components(self.dim, self.components.iter().map(f).collect())
    }

    pub fn zip_components(
        &self,
        other: &SymTensorField,
        f: impl Fn(&ScalarField, &ScalarField) -> ScalarField,
    ) -> Self {
        Self::from_components(
            self.dim,
            self.components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| f(a, b))
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map_components(|c| c.scale(s))
    }

    pub fn scale_by(&self, s: &ScalarField) -> Self {
        self.map_components(|c| c * s)
    }

    /// Flat-metric trace.
    pub fn trace(&self) -> ScalarField {
        let mut acc = self.get(0, 0).clone();
        for i in 1..self.dim {
            acc = &acc + self.get(i, i);
        }
        acc
    }

    /// `Σ_ij T_ij²` pointwise (flat metric).
    pub fn norm_squared(&self) -> ScalarField {
        let grid = self.grid().clone();
        let mut acc = vec![0.0; grid.node_count()];
        for i in 0..self.dim {
            for j in i..self.dim {
                let w = if i == j { 1.0 } else { 2.0 };
                for (a, v) in acc.iter_mut().zip(self.get(i, j).values()) {
                    *a += w * v * v;
                }
            }
        }
        ScalarField::from_raw(&grid, acc)
    }

    /// Largest absolute entry over all nodes.
    pub fn sup_norm(&self) -> f64 {
        self.components.iter().fold(0.0, |m, c| m.max(c.sup_norm()))
    }

    /// Checks the trace-free flag: `|tr T| <= 1e-10 · sup|T|` at every node.
    pub fn check_trace_free(&self, rel_tol: f64) -> Result<()> {
        let bound = rel_tol * self.sup_norm();
        let tr = self.trace();
        match tr.values().iter().position(|t| t.abs() > bound) {
            Some(node) => Err(Error::InvalidInput(format!(
                "tensor is not trace-free: trace {:e} at node {node}",
                tr.values()[node]
            ))),
            None => Ok(()),
        }
    }

    /// `T_ij V_j`.
    pub fn contract(&self, v: &VectorField) -> VectorField {
        let grid = self.grid().clone();
        VectorField::from_components(
            (0..self.dim)
                .map(|i| {
                    let mut acc = vec![0.0; grid.node_count()];
                    for j in 0..self.dim {
                        for ((a, t), x) in acc
                            .iter_mut()
                            .zip(self.get(i, j).values())
                            .zip(v.component(j).values())
                        {
                            *a += t * x;
                        }
                    }
                    ScalarField::from_raw(&grid, acc)
                })
                .collect(),
        )
    }
}

impl Add for &SymTensorField {
    type Output = SymTensorField;
    fn add(self, rhs: &SymTensorField) -> SymTensorField {
        self.zip_components(rhs, |a, b| a + b)
    }
}

impl Sub for &SymTensorField {
    type Output = SymTensorField;
    fn sub(self, rhs: &SymTensorField) -> SymTensorField {
        self.zip_components(rhs, |a, b| a - b)
    }
}
