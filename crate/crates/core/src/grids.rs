//! Core field-grid types shared by every other module.
//!
//! All grids are row-major with origin at the top-left corner, `u` the
//! column index and `v` the row index. PFM files store rows bottom-up;
//! that conversion happens at the I/O boundary only (see [`crate::pfm`]).

use crate::error::{FusionError, Result};

/// Tolerance on `‖n‖ = 1` used when detecting object pixels in a normal map.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// A width×height grid of 64-bit reals. Units are caller-declared
/// (mm for depth, radians for angles, dimensionless otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(FusionError::DimensionMismatch(format!(
                "scalar field: {} values for {}x{} grid",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn idx(&self, u: usize, v: usize) -> usize {
        v * self.width + u
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: f64) {
        self.values[v * self.width + u] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn same_shape(&self, other: &ScalarField) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel 2-vectors (gradient fields).
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2 {
    width: usize,
    height: usize,
    values: Vec<[f64; 2]>,
}

impl VectorField2 {
    pub fn new(width: usize, height: usize, values: Vec<[f64; 2]>) -> Result<Self> {
        if values.len() != width * height {
            return Err(FusionError::DimensionMismatch(format!(
                "vector2 field: {} values for {}x{} grid",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![[0.0; 2]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> [f64; 2] {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: [f64; 2]) {
        self.values[v * self.width + u] = value;
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.values
    }
}

/// Per-pixel 3-vectors (normal maps). Object pixels hold unit vectors
/// oriented with `n_z > 0`; background pixels are encoded all-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField3 {
    width: usize,
    height: usize,
    values: Vec<[f64; 3]>,
}

impl VectorField3 {
    pub fn new(width: usize, height: usize, values: Vec<[f64; 3]>) -> Result<Self> {
        if values.len() != width * height {
            return Err(FusionError::DimensionMismatch(format!(
                "vector3 field: {} values for {}x{} grid",
                values.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![[0.0; 3]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> [f64; 3] {
        self.values[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: [f64; 3]) {
        self.values[v * self.width + u] = value;
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.values
    }

    /// Flip all vectors so the majority of unit-norm pixels has `n_z > 0`.
    /// Returns `true` when a global flip was applied.
    pub fn orient_nz_positive(&mut self) -> bool {
        let mut neg = 0usize;
        let mut pos = 0usize;
        for n in &self.values {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() <= UNIT_NORM_TOL {
                if n[2] < 0.0 {
                    neg += 1;
                } else {
                    pos += 1;
                }
            }
        }
        if neg > pos {
            for n in &mut self.values {
                n[0] = -n[0];
                n[1] = -n[1];
                n[2] = -n[2];
            }
            true
        } else {
            false
        }
    }
}

/// Boolean grid Ω of pixels participating in optimization (the object region).
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl DomainMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(FusionError::DimensionMismatch(format!(
                "mask: {} bits for {}x{} grid",
                bits.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> bool {
        self.bits[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, value: bool) {
        self.bits[v * self.width + u] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Intersection of two masks of the same shape.
    pub fn and(&self, other: &DomainMask) -> DomainMask {
        assert_eq!(self.width, other.width);
        assert_eq!(self.height, other.height);
        DomainMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    /// Pixels of `self` that are *not* in `other`.
    pub fn minus(&self, other: &DomainMask) -> DomainMask {
        assert_eq!(self.width, other.width);
        DomainMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && !b)
                .collect(),
        }
    }

    /// Mask from an indicator field: true where value > 0.5.
    pub fn from_indicator(field: &ScalarField) -> DomainMask {
        DomainMask {
            width: field.width(),
            height: field.height(),
            bits: field.values().iter().map(|&x| x > 0.5).collect(),
        }
    }

    /// Indicator field of {0.0, 1.0}, the on-disk representation of a mask.
    pub fn to_indicator(&self) -> ScalarField {
        ScalarField {
            width: self.width,
            height: self.height,
            values: self
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }
}

/// Per-pixel reliability of observed depth; κ = 0 marks missing depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceField(ScalarField);

impl ConfidenceField {
    pub fn new(field: ScalarField) -> Result<Self> {
        for (i, &k) in field.values().iter().enumerate() {
            if !(0.0..=1.0).contains(&k) {
                let (u, v) = (i % field.width(), i / field.width());
                return Err(FusionError::Domain {
                    u,
                    v,
                    msg: format!("confidence {} outside [0, 1]", k),
                });
            }
        }
        Ok(Self(field))
    }

    pub fn uniform(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(ScalarField::constant(width, height, value))
    }

    pub fn field(&self) -> &ScalarField {
        &self.0
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.0.get(u, v)
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }
}

/// Mask of pixels whose normal is unit length; background (all-zero) is false.
pub fn mask_from_normals(normals: &VectorField3) -> DomainMask {
    let mut mask = DomainMask::empty(normals.width(), normals.height());
    for v in 0..normals.height() {
        for u in 0..normals.width() {
            let n = normals.get(u, v);
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if (norm - 1.0).abs() <= UNIT_NORM_TOL {
                mask.set(u, v, true);
            }
        }
    }
    mask
}
