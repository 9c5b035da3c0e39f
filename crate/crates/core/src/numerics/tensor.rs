//! Dense row-major `f64` tensors and the shape helpers shared by the tape.

use crate::error::{Result, SeedError};

/// N-dimensional array of `f64` in row-major order.
///
/// Every extent is at least 1; a scalar is shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(SeedError::InvalidTensor(format!(
                "shape {shape:?} must be non-empty with extents >= 1"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SeedError::InvalidTensor(format!(
                "shape {shape:?} holds {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n]).expect("full: invalid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(&[1], vec![value]).expect("scalar")
    }

    /// Builds a 2-D tensor from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(SeedError::InvalidTensor("ragged rows".into()));
        }
        Tensor::new(&[rows.len(), cols], rows.concat())
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element at a full multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of range on axis {i}");
            flat = flat * ext + ix;
        }
        self.data[flat]
    }

    /// Row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let width = self.numel() / self.shape[0];
        &self.data[i * width..(i + 1) * width]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let t = Tensor::new(shape, self.data.clone())?;
        Ok(t)
    }

    /// Reorders axes; `axes[k]` names the source axis placed at position `k`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        check_permutation(axes, self.rank())?;
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides = strides(&self.shape);
        let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut out = Vec::with_capacity(self.numel());
        for_each_offset(&out_shape, &perm_strides, |src| out.push(self.data[src]));
        Tensor::new(&out_shape, out)
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(SeedError::shape("transpose", &self.shape, &[2]));
        }
        self.permute(&[1, 0])
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Row-major strides of a shape.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

pub(crate) fn check_permutation(axes: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(SeedError::shape("permute", axes, &[rank]));
    }
    for &a in axes {
        if a >= rank || seen[a] {
            return Err(SeedError::shape("permute", axes, &[rank]));
        }
        seen[a] = true;
    }
    Ok(())
}

/// Numpy-style broadcast of two shapes, aligned from the right.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() {
            1
        } else {
            a[i - (rank - a.len())]
        };
        let db = if i < rank - b.len() {
            1
        } else {
            b[i - (rank - b.len())]
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides that read `src` as if broadcast to `out` (zero on broadcast axes).
pub fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - src.len();
    let s = strides(src);
    (0..out.len())
        .map(|i| {
            if i < offset || src[i - offset] == 1 {
                0
            } else {
                s[i - offset]
            }
        })
        .collect()
}

/// Visits every multi-index of `shape` in row-major order, passing the offset
/// computed with `strides`.
pub fn for_each_offset(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        f(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            off -= strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) for slice iteration.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
