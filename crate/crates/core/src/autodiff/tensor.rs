//! Dense row-major float tensor, rank 1 to 3.

use std::fmt;

/// Identifies a node on a specific tape. The tape id guards against
/// mixing handles from two tapes that happen to share indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

/// Dense n-dimensional array of `f32` in row-major order.
///
/// `grad` is filled for parameter tensors after a backward pass has been
/// collected into them; `node` is set while the tensor lives on a tape.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    pub(crate) grad: Option<Vec<f32>>,
    pub(crate) node: Option<NodeRef>,
}

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shape extents do not multiply out to the data length.
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    /// A shape extent is zero or the rank is unsupported.
    BadShape { shape: Vec<usize> },
    /// Two operands of an elementwise or matrix op disagree.
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An operation received a tensor of the wrong rank or extent.
    BadOperand {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    /// log() saw a value outside its domain.
    LogDomain { index: usize, value: f32 },
    /// Softmax axis out of range for the operand rank.
    AxisOutOfRange { axis: usize, rank: usize },
    /// Convolution kernels must have odd width.
    EvenKernelWidth { width: usize },
    /// Embedding lookup index beyond the table.
    IndexOutOfRange {
        index: u32,
        vocab_size: usize,
        row: usize,
        step: usize,
    },
    /// The tensor is not attached to the tape servicing the call.
    NotOnTape { op: &'static str },
    /// backward() requires a scalar loss.
    NotAScalar { shape: Vec<usize> },
    /// Padding mask has a 1 after a 0 in some row.
    NonSuffixMask { row: usize },
    /// Every step of some row is masked out and the op cannot proceed.
    AllStepsMasked { row: usize },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeDataMismatch { shape, len } => {
                write!(f, "shape {:?} does not match data length {}", shape, len)
            }
            Self::BadShape { shape } => write!(f, "invalid shape {:?}", shape),
            Self::ShapeMismatch { op, left, right } => {
                write!(f, "{}: shape mismatch {:?} vs {:?}", op, left, right)
            }
            Self::BadOperand { op, expected, got } => {
                write!(f, "{}: expected {}, got shape {:?}", op, expected, got)
            }
            Self::LogDomain { index, value } => {
                write!(f, "log: nonpositive value {} at flat index {}", value, index)
            }
            Self::AxisOutOfRange { axis, rank } => {
                write!(f, "softmax: axis {} out of range for rank {}", axis, rank)
            }
            Self::EvenKernelWidth { width } => {
                write!(f, "conv1d: kernel width {} must be odd", width)
            }
            Self::IndexOutOfRange {
                index,
                vocab_size,
                row,
                step,
            } => write!(
                f,
                "embedding index {} out of range (vocab size {}) at row {}, step {}",
                index, vocab_size, row, step
            ),
            Self::NotOnTape { op } => write!(f, "{}: operand is not on this tape", op),
            Self::NotAScalar { shape } => {
                write!(f, "backward: loss must be scalar, got shape {:?}", shape)
            }
            Self::NonSuffixMask { row } => {
                write!(f, "mask row {} has padding before a real step", row)
            }
            Self::AllStepsMasked { row } => {
                write!(f, "row {} has every step masked", row)
            }
        }
    }
}

impl std::error::Error for TensorError {}

impl Tensor {
    /// Build a tensor from a shape and row-major data.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() || shape.len() > 3 || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::BadShape { shape });
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            node: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
            node: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            grad: None,
            node: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
            node: None,
        }
    }

    /// Rank-1 tensor from a slice.
    pub fn from_slice(data: &[f32]) -> Self {
        Tensor {
            shape: vec![data.len()],
            data: data.to_vec(),
            grad: None,
            node: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Gradient buffer, present on parameters after a collected backward pass.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar");
        self.data[0]
    }

    /// Element at (row, col) of a rank-2 tensor.
    pub fn at2(&self, r: usize, c: usize) -> f32 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Element at (i, j, k) of a rank-3 tensor.
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f32 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    /// Detached copy: same shape and data, no grad, no tape attachment.
    pub fn detached(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.clone(),
            grad: None,
            node: None,
        }
    }

}

impl PartialEq for Tensor {
    /// Bitwise equality of shape and data; grad and tape state are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
