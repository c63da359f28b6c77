//! Network-level operations composed from the primitive set.
//!
//! Building these as compositions (instead of dedicated kernels with
//! hand-derived backward rules) means their first and higher-order
//! derivatives come entirely from the primitives' adjoints portion — one
//! fewer place for calculus mistakes, at desk scale a negligible cost.

use super::{Graph, GraphError, NodeId};

/// Batch-statistics epsilon inside the normalization square root.
pub const NORM_EPS: f64 = 1e-5;

type Build = Result<NodeId, GraphError>;

impl Graph {
    /// `x + bias` broadcast over rows; `x` is `[r, c]`, `bias` is `[c]`.
    pub fn bias_add_rows(&mut self, x: NodeId, bias: NodeId) -> Build {
        let rows = self.shape_of(x)[0];
        let cols = self.shape_of(x)[1];
        let b_row = self.reshape(bias, &[1, cols])?;
        let b_full = self.broadcast_rows(b_row, rows)?;
        self.add(x, b_full)
    }

    /// Fully-connected layer: `x @ w + bias`, with `w` of shape `[in, out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> Build {
        let y = self.matmul(x, w)?;
        self.bias_add_rows(y, bias)
    }

    /// Same-padded, unit-stride 2-D convolution over `[b,h,w,cin]` with a
    /// kernel `[kh,kw,cin,cout]` and bias `[cout]`, via patch extraction and
    /// one matrix multiply.
    pub fn conv2d(&mut self, x: NodeId, kernel: NodeId, bias: NodeId) -> Build {
        let xs = self.shape_of(x).to_vec();
        let ks = self.shape_of(kernel).to_vec();
        if ks.len() != 4 || xs.len() != 4 || ks[2] != xs[3] {
            return Err(GraphError::Shape {
                op: "conv2d",
                node: self.len(),
                detail: format!("input {xs:?} incompatible with kernel {ks:?}"),
            });
        }
        let (b, h, w) = (xs[0], xs[1], xs[2]);
        let (kh, kw, cin, cout) = (ks[0], ks[1], ks[2], ks[3]);
        let cols = self.im2col(x, kh, kw)?;
        let kmat = self.reshape(kernel, &[kh * kw * cin, cout])?;
        let prod = self.matmul(cols, kmat)?;
        let biased = self.bias_add_rows(prod, bias)?;
        self.reshape(biased, &[b, h, w, cout])
    }

    /// 2x2 max pooling with stride 2 over `[b,h,w,c]`; odd trailing
    /// rows/columns are dropped (floor semantics).
    ///
    /// The maximum is expressed as `sum(onehot(argmax) * patches)`, which
    /// reproduces the exact max forward and routes the gradient to the
    /// first-winning entry.
    pub fn max_pool2(&mut self, x: NodeId) -> Build {
        let xs = self.shape_of(x).to_vec();
        let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let patches = self.pool_patches(x)?;
        let onehot = self.argmax_onehot_rows(patches)?;
        let winners = self.mul(onehot, patches)?;
        let maxima = self.row_sum(winners)?;
        self.reshape(maxima, &[b, h / 2, w / 2, c])
    }

    /// Batch normalization using current-batch statistics (no running
    /// averages): per-channel mean and biased variance over every other
    /// axis, then scale and offset (`[c]` each).
    pub fn batch_norm(&mut self, x: NodeId, scale: NodeId, offset: NodeId) -> Build {
        let xs = self.shape_of(x).to_vec();
        let c = *xs.last().ok_or_else(|| GraphError::Shape {
            op: "batch_norm",
            node: self.len(),
            detail: "input must have at least one axis".to_string(),
        })?;
        let n: usize = xs[..xs.len() - 1].iter().product();
        let flat = self.reshape(x, &[n, c])?;

        let sums = self.col_sum(flat)?;
        let mean = self.scale(sums, 1.0 / n as f64);
        let mean_full = self.broadcast_rows(mean, n)?;
        let centered = self.sub(flat, mean_full)?;

        let squared = self.mul(centered, centered)?;
        let var_sums = self.col_sum(squared)?;
        let var = self.scale(var_sums, 1.0 / n as f64);
        let shifted = self.add_scalar(var, NORM_EPS);
        let std = self.sqrt(shifted);
        let inv_std = self.recip(std);
        let inv_full = self.broadcast_rows(inv_std, n)?;
        let normed = self.mul(centered, inv_full)?;

        let scale_row = self.reshape(scale, &[1, c])?;
        let scale_full = self.broadcast_rows(scale_row, n)?;
        let scaled = self.mul(normed, scale_full)?;
        let offset_row = self.reshape(offset, &[1, c])?;
        let offset_full = self.broadcast_rows(offset_row, n)?;
        let out = self.add(scaled, offset_full)?;
        self.reshape(out, &xs)
    }

    /// Mean softmax cross-entropy of `[r, c]` logits against `[r]` integer
    /// targets. Numerically stabilized with a constant per-row shift, which
    /// the shift invariance of log-sum-exp makes exact.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: NodeId) -> Build {
        let (r, c) = {
            let s = self.shape_of(logits);
            (s[0], s[1])
        };
        let shift = self.row_max_stop(logits)?;
        let shift_full = self.broadcast_cols(shift, c)?;
        let centered = self.sub(logits, shift_full)?;
        let exps = self.exp(centered);
        let sums = self.row_sum(exps)?;
        let log_sums = self.log(sums);
        let lse = self.add(log_sums, shift)?;
        let picked = self.gather_target(logits, targets)?;
        let per_row = self.sub(lse, picked)?;
        let total = self.sum_all(per_row);
        Ok(self.scale(total, 1.0 / r as f64))
    }

    /// Sum of absolute values, for L1 regularization. `|x| = sign(x) * x`
    /// keeps the forward exact and the subgradient at the usual a.e. value.
    pub fn abs_sum(&mut self, x: NodeId) -> Build {
        let s = self.sign(x);
        let absolute = self.mul(s, x)?;
        Ok(self.sum_all(absolute))
    }

    /// Mean over every element.
    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = crate::tensor::shape_len(self.shape_of(x)).max(1);
        let total = self.sum_all(x);
        self.scale(total, 1.0 / n as f64)
    }
}
