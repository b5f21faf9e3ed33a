//! Workload description: convolution layers, model chains and their GEMM
//! lowering.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// The seven loop-nest dimensions of a convolution.
///
/// `X` and `Y` index the *iteration space*, i.e. output positions; a layer
/// with ifmap `X×Y` and filter `R×S` iterates over `X'×Y'` output positions
/// (see [`LayerSpec::output_dims`]).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Dim {
    K,
    C,
    R,
    S,
    N,
    X,
    Y,
}

impl Dim {
    pub const ALL: [Dim; 7] = [Dim::K, Dim::C, Dim::R, Dim::S, Dim::N, Dim::X, Dim::Y];

    /// Stable index into 7-element per-dimension arrays.
    pub fn index(self) -> usize {
        match self {
            Dim::K => 0,
            Dim::C => 1,
            Dim::R => 2,
            Dim::S => 3,
            Dim::N => 4,
            Dim::X => 5,
            Dim::Y => 6,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Dim::K => "K",
            Dim::C => "C",
            Dim::R => "R",
            Dim::S => "S",
            Dim::N => "N",
            Dim::X => "X",
            Dim::Y => "Y",
        };
        f.write_str(s)
    }
}

/// Which tensor (and scratchpad) an address or slot belongs to.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Ifmap,
    Weight,
    Ofmap,
}

impl TensorRole {
    pub const ALL: [TensorRole; 3] = [TensorRole::Ifmap, TensorRole::Weight, TensorRole::Ofmap];
}

impl fmt::Display for TensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TensorRole::Ifmap => "ifmap",
            TensorRole::Weight => "weight",
            TensorRole::Ofmap => "ofmap",
        };
        f.write_str(s)
    }
}

/// A value per tensor role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PerRole<T> {
    pub ifmap: T,
    pub weight: T,
    pub ofmap: T,
}

impl<T> PerRole<T> {
    pub fn new(ifmap: T, weight: T, ofmap: T) -> Self {
        Self {
            ifmap,
            weight,
            ofmap,
        }
    }

    pub fn get(&self, role: TensorRole) -> &T {
        match role {
            TensorRole::Ifmap => &self.ifmap,
            TensorRole::Weight => &self.weight,
            TensorRole::Ofmap => &self.ofmap,
        }
    }

    pub fn get_mut(&mut self, role: TensorRole) -> &mut T {
        match role {
            TensorRole::Ifmap => &mut self.ifmap,
            TensorRole::Weight => &mut self.weight,
            TensorRole::Ofmap => &mut self.ofmap,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerRole<U> {
        PerRole {
            ifmap: f(&self.ifmap),
            weight: f(&self.weight),
            ofmap: f(&self.ofmap),
        }
    }
}

/// One convolution layer of the seven-dimension loop nest.
///
/// Fully-connected layers are encoded as `R = S = X = Y = 1`. There is no
/// padding support; pre-pad the spatial dimensions when encoding a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    /// Filter count (output channels).
    #[serde(rename = "K")]
    pub k: u64,
    /// Input channels.
    #[serde(rename = "C")]
    pub c: u64,
    /// Filter height.
    #[serde(rename = "R")]
    pub r: u64,
    /// Filter width.
    #[serde(rename = "S")]
    pub s: u64,
    /// Ifmap height.
    #[serde(rename = "X")]
    pub x: u64,
    /// Ifmap width.
    #[serde(rename = "Y")]
    pub y: u64,
    /// Batch size.
    #[serde(rename = "N")]
    pub n: u64,
    #[serde(default = "default_stride")]
    pub stride: u64,
    /// Bytes per element.
    #[serde(default = "default_element_size")]
    pub element_size: u64,
    /// Index of the layer whose ofmap is this layer's ifmap. `None` means
    /// "previous layer" for every layer but the first, which reads the
    /// external input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depends_on: Option<usize>,
}

fn default_stride() -> u64 {
    1
}

fn default_element_size() -> u64 {
    4
}

/// GEMM shape a convolution lowers to via im2col.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    /// Output rows: `X' * Y' * N`.
    pub m: u64,
    /// Reduction length: `C * R * S`.
    pub kdim: u64,
    /// Output columns: `K`.
    pub ncols: u64,
}

impl GemmShape {
    /// Multiply-accumulate count of the full GEMM.
    pub fn macs(&self) -> u64 {
        self.m * self.kdim * self.ncols
    }
}

impl LayerSpec {
    /// Output spatial dimensions `(X', Y')`: `floor((X-R)/stride)+1` and
    /// `floor((Y-S)/stride)+1` (no padding).
    pub fn output_dims(&self) -> (u64, u64) {
        (
            (self.x - self.r) / self.stride + 1,
            (self.y - self.s) / self.stride + 1,
        )
    }

    /// im2col GEMM shape of this layer.
    pub fn derive_gemm(&self) -> GemmShape {
        let (xo, yo) = self.output_dims();
        GemmShape {
            m: xo * yo * self.n,
            kdim: self.c * self.r * self.s,
            ncols: self.k,
        }
    }

    /// Bounds of the tiled iteration space in [`Dim`] order:
    /// `[K, C, R, S, N, X', Y']`.
    pub fn loop_bounds(&self) -> [u64; 7] {
        let (xo, yo) = self.output_dims();
        [self.k, self.c, self.r, self.s, self.n, xo, yo]
    }

    /// Ifmap tensor size in bytes.
    pub fn ifmap_bytes(&self) -> u64 {
        self.n * self.c * self.x * self.y * self.element_size
    }

    /// Weight tensor size in bytes.
    pub fn weight_bytes(&self) -> u64 {
        self.k * self.c * self.r * self.s * self.element_size
    }

    /// Ofmap tensor size in bytes. Single source of truth for every module:
    /// equals `derive_gemm().m * ncols * element_size`.
    pub fn ofmap_bytes(&self) -> u64 {
        let g = self.derive_gemm();
        g.m * g.ncols * self.element_size
    }

    /// Check the per-layer invariants.
    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("K", self.k),
            ("C", self.c),
            ("R", self.r),
            ("S", self.s),
            ("X", self.x),
            ("Y", self.y),
            ("N", self.n),
            ("stride", self.stride),
            ("element_size", self.element_size),
        ];
        for (field, value) in dims {
            if value == 0 {
                return Err(ModelError::InvalidDimension {
                    layer: self.name.clone(),
                    field,
                });
            }
        }
        if self.r > self.x || self.s > self.y {
            return Err(ModelError::FilterExceedsInput {
                layer: self.name.clone(),
            });
        }
        Ok(())
    }
}

/// An ordered chain of layers. Layer `i`'s ifmap is the ofmap of
/// `producer(i)`; the first layer reads the external input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self, ModelError> {
        let model = Self { layers };
        model.validate()?;
        Ok(model)
    }

    /// The layer feeding layer `index`, or `None` for the external input.
    pub fn producer(&self, index: usize) -> Option<usize> {
        match self.layers[index].depends_on {
            Some(p) => Some(p),
            None if index == 0 => None,
            None => Some(index - 1),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers.is_empty() {
            return Err(ModelError::EmptyModel);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if let Some(dep) = layer.depends_on {
                if i == 0 || dep >= i {
                    return Err(ModelError::BadDependency {
                        layer: layer.name.clone(),
                        depends_on: dep,
                    });
                }
            }
        }
        Ok(())
    }

    /// Check that every dependency chains shapes: the consumer's
    /// `(C, X, Y, N)` must equal the producer's `(K, X', Y', N)`.
    ///
    /// Required by address-map construction and the golden reference, which
    /// alias the consumer's ifmap region to the producer's ofmap region.
    pub fn validate_chaining(&self) -> Result<(), ModelError> {
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(p) = self.producer(i) {
                let prod = &self.layers[p];
                let (xo, yo) = prod.output_dims();
                if layer.c != prod.k || layer.x != xo || layer.y != yo || layer.n != prod.n {
                    return Err(ModelError::ShapeMismatch {
                        consumer: layer.name.clone(),
                        producer: prod.name.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Validation failures for model descriptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelError {
    EmptyModel,
    InvalidDimension { layer: String, field: &'static str },
    FilterExceedsInput { layer: String },
    BadDependency { layer: String, depends_on: usize },
    ShapeMismatch { consumer: String, producer: String },
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::EmptyModel => write!(f, "model has no layers"),
            ModelError::InvalidDimension { layer, field } => {
                write!(f, "layer '{layer}': field {field} must be >= 1")
            }
            ModelError::FilterExceedsInput { layer } => {
                write!(f, "layer '{layer}': filter exceeds ifmap (R <= X and S <= Y required)")
            }
            ModelError::BadDependency { layer, depends_on } => {
                write!(
                    f,
                    "layer '{layer}': depends_on {depends_on} does not precede the layer"
                )
            }
            ModelError::ShapeMismatch { consumer, producer } => {
                write!(
                    f,
                    "layer '{consumer}': ifmap shape does not match ofmap of producer '{producer}'"
                )
            }
        }
    }
}
