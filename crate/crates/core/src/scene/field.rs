use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Degree-3 spherical harmonics: 16 coefficients for each of 3 channels.
pub const SH_COEFFS: usize = 48;

pub const DEFAULT_FEATURE_DIM: usize = 256;

/// A color-free Gaussian: geometry, opacity and a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: [f32; 3],
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f32; 4],
    /// Per-axis standard deviations.
    pub scale: [f32; 3],
    pub opacity: f32,
    pub feature: Vec<f32>,
}

impl GaussianPrimitive {
    pub fn position_f64(&self) -> Vector3<f64> {
        Vector3::new(self.position[0] as f64, self.position[1] as f64, self.position[2] as f64)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation.map(f64::from);
        UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z))
            .to_rotation_matrix()
            .into_inner()
    }

    /// World-frame covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = Matrix3::from_diagonal(&Vector3::new(
            (self.scale[0] as f64).powi(2),
            (self.scale[1] as f64).powi(2),
            (self.scale[2] as f64).powi(2),
        ));
        r * s * r.transpose()
    }

    /// Checks the quaternion, scale and opacity invariants.
    pub fn is_valid(&self) -> bool {
        let qn = self.rotation.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        (qn - 1.0).abs() <= 1e-6
            && self.scale.iter().all(|s| *s > 0.0 && s.is_finite())
            && self.opacity > 0.0
            && self.opacity <= 1.0
            && self.position.iter().all(|p| p.is_finite())
            && self.feature.iter().all(|f| f.is_finite())
    }
}

/// View-dependent color coefficients carried only by the coupled layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledExtras {
    pub sh_coefficients: [f32; SH_COEFFS],
}

impl Default for CoupledExtras {
    fn default() -> Self {
        Self {
            sh_coefficients: [0.0; SH_COEFFS],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Decoupled,
    Coupled,
}

impl Layout {
    pub fn code(self) -> u32 {
        match self {
            Layout::Decoupled => 0,
            Layout::Coupled => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Layout::Decoupled),
            1 => Some(Layout::Coupled),
            _ => None,
        }
    }

    /// 32-bit scalars stored per primitive besides the feature vector.
    pub fn scalars_without_feature(self) -> usize {
        match self {
            Layout::Decoupled => 3 + 4 + 3 + 1,
            Layout::Coupled => 3 + 4 + 3 + 1 + SH_COEFFS,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Decoupled => "decoupled",
            Layout::Coupled => "coupled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    feature_dim: usize,
    layout: Layout,
    primitives: Vec<GaussianPrimitive>,
    extras: Vec<CoupledExtras>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FieldError {
    #[error("primitive {index} has feature length {got}, field dimension is {expected}")]
    FeatureDim { index: usize, got: usize, expected: usize },
    #[error("coupled extras count {got} does not match primitive count {expected}")]
    ExtrasCount { got: usize, expected: usize },
    #[error("decoupled field cannot carry coupled extras")]
    UnexpectedExtras,
}

impl GaussianField {
    pub fn new(feature_dim: usize, primitives: Vec<GaussianPrimitive>) -> Result<Self, FieldError> {
        Self::with_layout(feature_dim, Layout::Decoupled, primitives, Vec::new())
    }

    pub fn with_layout(
        feature_dim: usize,
        layout: Layout,
        primitives: Vec<GaussianPrimitive>,
        extras: Vec<CoupledExtras>,
    ) -> Result<Self, FieldError> {
        if let Some((index, p)) = primitives.iter().enumerate().find(|(_, p)| p.feature.len() != feature_dim) {
            return Err(FieldError::FeatureDim {
                index,
                got: p.feature.len(),
                expected: feature_dim,
            });
        }
        match layout {
            Layout::Decoupled if !extras.is_empty() => return Err(FieldError::UnexpectedExtras),
            Layout::Coupled if extras.len() != primitives.len() => {
                return Err(FieldError::ExtrasCount {
                    got: extras.len(),
                    expected: primitives.len(),
                })
            }
            _ => {}
        }
        Ok(Self {
            feature_dim,
            layout,
            primitives,
            extras,
        })
    }

    pub fn empty(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            layout: Layout::Decoupled,
            primitives: Vec::new(),
            extras: Vec::new(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    pub fn extras(&self) -> &[CoupledExtras] {
        &self.extras
    }

    pub fn primitive(&self, index: usize) -> &GaussianPrimitive {
        &self.primitives[index]
    }

    /// Features flattened row-major (`len × feature_dim`) and promoted to f64.
    pub fn features_f64(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.feature_dim);
        for p in &self.primitives {
            out.extend(p.feature.iter().map(|&v| v as f64));
        }
        out
    }

    /// Overwrites all features from a flat `len × feature_dim` buffer.
    pub fn set_features_f64(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len() * self.feature_dim, "feature buffer size");
        for (p, chunk) in self.primitives.iter_mut().zip(flat.chunks_exact(self.feature_dim)) {
            for (dst, src) in p.feature.iter_mut().zip(chunk) {
                *dst = *src as f32;
            }
        }
    }

    /// Same primitives with zeroed color coefficients attached, for storage
    /// comparisons against the coupled representation.
    pub fn to_coupled(&self) -> Self {
        Self {
            feature_dim: self.feature_dim,
            layout: Layout::Coupled,
            primitives: self.primitives.clone(),
            extras: match self.layout {
                Layout::Coupled => self.extras.clone(),
                Layout::Decoupled => vec![CoupledExtras::default(); self.len()],
            },
        }
    }

    /// Axis-aligned bounds of the primitive centers.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.primitives.first()?.position_f64();
        Some(self.primitives.iter().fold((first, first), |(lo, hi), p| {
            let x = p.position_f64();
            (lo.inf(&x), hi.sup(&x))
        }))
    }
}
