//! Dense 3D volumes, label masks and view-oriented slicing.
//!
//! Voxels are stored row-major with `x` fastest: the linear index of
//! `(x, y, z)` is `x + nx * (y + ny * z)`. Physical positions are voxel
//! centres at `index * spacing`; origin and orientation are not modelled.

mod components;
pub mod nrrd;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use components::{
    connected_components, fill_holes, longest_diameter, mask_outside, remove_small_objects,
    Component, ComponentSet, Connectivity,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("dimensions must be positive, got {0:?}")]
    BadDims([usize; 3]),
    #[error("spacing must be positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("data length {got} does not match dims product {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),
    #[error("slice index {index} out of range for {view:?} (extent {extent})")]
    SliceOutOfRange { view: View, index: usize, extent: usize },
    #[error("grid shape {got:?} does not match {view:?} slice shape {expected:?}")]
    SliceShape { view: View, expected: (usize, usize), got: (usize, usize) },
    #[error("geometry mismatch: {0:?}/{1:?} vs {2:?}/{3:?}")]
    GeometryMismatch([usize; 3], [f64; 3], [usize; 3], [f64; 3]),
    #[error("label {0} is not declared in the label map")]
    UnknownLabel(u8),
    #[error("empty component")]
    EmptyComponent,
    #[error("voxel {0:?} outside volume {1:?}")]
    OutOfBounds([usize; 3], [usize; 3]),
}

/// Dims and spacing shared by volumes and masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::BadDims(dims));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(VolumeError::BadSpacing(spacing));
        }
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        p.iter().zip(self.dims).all(|(&c, d)| c < d)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    fn check_len(&self, got: usize) -> Result<(), VolumeError> {
        if got != self.len() {
            return Err(VolumeError::LengthMismatch { expected: self.len(), got });
        }
        Ok(())
    }

    fn ensure_same(&self, other: &Geometry) -> Result<(), VolumeError> {
        if self.dims != other.dims || self.spacing != other.spacing {
            return Err(VolumeError::GeometryMismatch(
                self.dims,
                self.spacing,
                other.dims,
                other.spacing,
            ));
        }
        Ok(())
    }
}

/// Anatomical viewing direction. Each view fixes one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Axial,
    Sagittal,
    Coronal,
}

impl View {
    pub const ALL: [View; 3] = [View::Axial, View::Sagittal, View::Coronal];

    /// Axis held constant by the view (0 = x, 1 = y, 2 = z).
    pub fn fixed_axis(self) -> usize {
        match self {
            View::Axial => 2,
            View::Sagittal => 0,
            View::Coronal => 1,
        }
    }

    /// In-plane axes `(u, v)`, `u` fastest in the 2D grid.
    pub fn plane_axes(self) -> (usize, usize) {
        match self {
            View::Axial => (0, 1),
            View::Sagittal => (1, 2),
            View::Coronal => (0, 2),
        }
    }

    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.fixed_axis()]
    }

    pub fn plane_shape(self, dims: [usize; 3]) -> (usize, usize) {
        let (u, v) = self.plane_axes();
        (dims[u], dims[v])
    }

    /// Map an in-slice pixel back to voxel coordinates.
    #[inline]
    pub fn to_voxel(self, slice: usize, u: usize, v: usize) -> [usize; 3] {
        let mut p = [0; 3];
        let (au, av) = self.plane_axes();
        p[self.fixed_axis()] = slice;
        p[au] = u;
        p[av] = v;
        p
    }

    /// Split voxel coordinates into `(slice, u, v)`.
    #[inline]
    pub fn from_voxel(self, p: [usize; 3]) -> (usize, usize, usize) {
        let (au, av) = self.plane_axes();
        (p[self.fixed_axis()], p[au], p[av])
    }

    /// The two views other than `self`, in declaration order.
    pub fn others(self) -> [View; 2] {
        let mut out = [View::Axial; 2];
        let mut k = 0;
        for v in View::ALL {
            if v != self {
                out[k] = v;
                k += 1;
            }
        }
        out
    }
}

impl std::str::FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(View::Axial),
            "sagittal" => Ok(View::Sagittal),
            "coronal" => Ok(View::Coronal),
            other => Err(format!("unknown view `{other}`")),
        }
    }
}

/// A 2D row-major grid (`u` fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Grid2<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> T {
        self.data[u + self.width * v]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: T) {
        self.data[u + self.width * v] = value;
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize) -> usize {
        u + self.width * v
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        u < self.width && v < self.height
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

fn extract_slice<T: Copy>(geom: &Geometry, data: &[T], view: View, index: usize) -> Result<Grid2<T>, VolumeError> {
    let extent = view.extent(geom.dims);
    if index >= extent {
        return Err(VolumeError::SliceOutOfRange { view, index, extent });
    }
    let (w, h) = view.plane_shape(geom.dims);
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            out.push(data[geom.index(view.to_voxel(index, u, v))]);
        }
    }
    Ok(Grid2 { width: w, height: h, data: out })
}

fn write_slice<T: Copy>(
    geom: &Geometry,
    data: &mut [T],
    view: View,
    index: usize,
    grid: &Grid2<T>,
) -> Result<(), VolumeError> {
    let extent = view.extent(geom.dims);
    if index >= extent {
        return Err(VolumeError::SliceOutOfRange { view, index, extent });
    }
    let expected = view.plane_shape(geom.dims);
    if grid.shape() != expected {
        return Err(VolumeError::SliceShape { view, expected, got: grid.shape() });
    }
    for v in 0..grid.height {
        for u in 0..grid.width {
            data[geom.index(view.to_voxel(index, u, v))] = grid.get(u, v);
        }
    }
    Ok(())
}

/// Dense scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    geom: Geometry,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>) -> Result<Self, VolumeError> {
        let geom = Geometry::new(dims, spacing)?;
        geom.check_len(data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        Ok(Self { geom, data })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64) -> Result<Self, VolumeError> {
        let geom = Geometry::new(dims, spacing)?;
        Self::new(dims, spacing, vec![value; geom.len()])
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, p: [usize; 3]) -> f64 {
        self.data[self.geom.index(p)]
    }

    /// Setter for building phantoms. Non-finite values are rejected.
    pub fn set(&mut self, p: [usize; 3], value: f64) -> Result<(), VolumeError> {
        if !value.is_finite() {
            return Err(VolumeError::NonFinite(self.geom.index(p)));
        }
        let i = self.geom.index(p);
        self.data[i] = value;
        Ok(())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn slice(&self, view: View, index: usize) -> Result<Grid2<f64>, VolumeError> {
        extract_slice(&self.geom, &self.data, view, index)
    }

    pub fn write_slice(&mut self, view: View, index: usize, grid: &Grid2<f64>) -> Result<(), VolumeError> {
        if let Some(i) = grid.data.iter().position(|v| !v.is_finite()) {
            return Err(VolumeError::NonFinite(i));
        }
        write_slice(&self.geom, &mut self.data, view, index, grid)
    }

    pub fn slices(&self, view: View) -> Vec<Grid2<f64>> {
        (0..view.extent(self.geom.dims))
            .map(|i| self.slice(view, i).expect("index within extent"))
            .collect()
    }

    /// Rebuild a volume from a full stack of slices along `view`.
    pub fn from_slices(
        dims: [usize; 3],
        spacing: [f64; 3],
        view: View,
        slices: &[Grid2<f64>],
    ) -> Result<Self, VolumeError> {
        let mut vol = Self::filled(dims, spacing, 0.0)?;
        let extent = view.extent(dims);
        if slices.len() != extent {
            return Err(VolumeError::LengthMismatch { expected: extent, got: slices.len() });
        }
        for (i, s) in slices.iter().enumerate() {
            vol.write_slice(view, i, s)?;
        }
        Ok(vol)
    }
}

/// Free-function form of [`Volume3D::slice`].
pub fn slice(vol: &Volume3D, view: View, index: usize) -> Result<Grid2<f64>, VolumeError> {
    vol.slice(view, index)
}

/// Mapping from label value to structure name. Label 0 is always background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelMap(pub BTreeMap<u8, String>);

impl LabelMap {
    pub fn new(entries: impl IntoIterator<Item = (u8, String)>) -> Self {
        Self(entries.into_iter().filter(|(k, _)| *k != 0).collect())
    }

    /// `1 = liver, 2 = tumor, 3 = spleen`.
    pub fn liver_tumor_spleen() -> Self {
        Self::new([(1, "liver".into()), (2, "tumor".into()), (3, "spleen".into())])
    }

    pub fn binary(name: &str) -> Self {
        Self::new([(1, name.to_string())])
    }

    /// Declare every nonzero value present in `data` under a generic name.
    pub fn from_present(data: &[u8]) -> Self {
        let mut seen = [false; 256];
        for &v in data {
            seen[v as usize] = true;
        }
        Self::new((1..=255u8).filter(|&v| seen[v as usize]).map(|v| (v, format!("label{v}"))))
    }

    pub fn contains(&self, label: u8) -> bool {
        label != 0 && self.0.contains_key(&label)
    }

    pub fn labels(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }

    pub fn find(&self, name: &str) -> Option<u8> {
        self.0.iter().find(|(_, n)| n.as_str() == name).map(|(k, _)| *k)
    }
}

/// Label volume (0 = background).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask3D {
    geom: Geometry,
    data: Vec<u8>,
    labels: LabelMap,
}

impl Mask3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<u8>, labels: LabelMap) -> Result<Self, VolumeError> {
        let geom = Geometry::new(dims, spacing)?;
        geom.check_len(data.len())?;
        if let Some(&bad) = data.iter().find(|&&v| v != 0 && !labels.contains(v)) {
            return Err(VolumeError::UnknownLabel(bad));
        }
        Ok(Self { geom, data, labels })
    }

    pub fn empty(geom: Geometry, labels: LabelMap) -> Self {
        Self { data: vec![0; geom.len()], geom, labels }
    }

    pub fn geometry(&self) -> Geometry {
        self.geom
    }

    pub fn dims(&self) -> [usize; 3] {
        self.geom.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geom.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    pub fn get(&self, p: [usize; 3]) -> u8 {
        self.data[self.geom.index(p)]
    }

    pub fn set(&mut self, p: [usize; 3], label: u8) -> Result<(), VolumeError> {
        if label != 0 && !self.labels.contains(label) {
            return Err(VolumeError::UnknownLabel(label));
        }
        let i = self.geom.index(p);
        self.data[i] = label;
        Ok(())
    }

    pub(crate) fn set_index(&mut self, idx: usize, label: u8) {
        self.data[idx] = label;
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    /// Binary mask of one label, relabelled to 1 under `name`.
    pub fn select(&self, label: u8) -> Mask3D {
        let name = self.labels.0.get(&label).cloned().unwrap_or_else(|| format!("label{label}"));
        Mask3D {
            geom: self.geom,
            data: self.data.iter().map(|&v| u8::from(v == label)).collect(),
            labels: LabelMap::binary(&name),
        }
    }

    pub fn slice(&self, view: View, index: usize) -> Result<Grid2<u8>, VolumeError> {
        extract_slice(&self.geom, &self.data, view, index)
    }

    pub fn ensure_same_geometry(&self, other: &Mask3D) -> Result<(), VolumeError> {
        self.geom.ensure_same(&other.geom)
    }

    pub fn ensure_matches(&self, vol: &Volume3D) -> Result<(), VolumeError> {
        self.geom.ensure_same(&vol.geom)
    }
}
