//! Operation catalog: forward kernels and their backward closures.
//!
//! The surface is deliberately bounded to what the model layers, losses, and
//! decoders need. Broadcasting is limited to adding a vector along the last
//! axis (`add_bias`).

use super::{Element, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

// Raw matmul kernels. a is m-by-k, b is k-by-n unless noted.
fn mm<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

// g (m-by-n) times b-transpose (b is k-by-n) -> m-by-k.
fn mm_bt<E: Element>(g: &[E], b: &[E], m: usize, n: usize, k: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * k];
    for i in 0..m {
        for p in 0..k {
            let mut s = E::zero();
            for j in 0..n {
                s = s + g[i * n + j] * b[p * n + j];
            }
            out[i * k + p] = s;
        }
    }
    out
}

// a-transpose (a is m-by-k) times g (m-by-n) -> k-by-n.
fn mm_at<E: Element>(a: &[E], g: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == E::zero() {
                continue;
            }
            let grow = &g[i * n..(i + 1) * n];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o = *o + av * gv;
            }
        }
    }
    out
}

fn axis_dims(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::Invalid {
            op,
            msg: format!("axis {axis} out of range for shape {shape:?}"),
        });
    }
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, n, inner))
}

impl<E: Element> Tensor<E> {
    /// Matrix product of `self` (m-by-k) with `rhs` (k-by-n).
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let (ls, rs) = (self.shape(), rhs.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let out = mm(self.data(), rhs.data(), m, k, n);
        let (a, b) = (self.data_arc(), rhs.data_arc());
        let (na, nb) = (self.tracks(), rhs.tracks());
        Ok(Tensor::with_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| mm_bt(g, &b, m, n, k)),
                    nb.then(|| mm_at(&a, g, m, k, n)),
                ]
            }),
        ))
    }

    fn zip_same_shape(
        &self,
        rhs: &Tensor<E>,
        op: &'static str,
        f: impl Fn(E, E) -> E,
    ) -> Result<Vec<E>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        Ok(self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    /// Elementwise sum (identical shapes).
    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let out = self.zip_same_shape(rhs, "add", |x, y| x + y)?;
        let (na, nb) = (self.tracks(), rhs.tracks());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![na.then(|| g.to_vec()), nb.then(|| g.to_vec())]),
        ))
    }

    /// Elementwise difference (identical shapes).
    pub fn sub(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let out = self.zip_same_shape(rhs, "sub", |x, y| x - y)?;
        let (na, nb) = (self.tracks(), rhs.tracks());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.to_vec()),
                    nb.then(|| g.iter().map(|&gi| -gi).collect()),
                ]
            }),
        ))
    }

    /// Elementwise product (identical shapes).
    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let out = self.zip_same_shape(rhs, "mul", |x, y| x * y)?;
        let (a, b) = (self.data_arc(), rhs.data_arc());
        let (na, nb) = (self.tracks(), rhs.tracks());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.iter().zip(b.iter()).map(|(&gi, &bi)| gi * bi).collect()),
                    nb.then(|| g.iter().zip(a.iter()).map(|(&gi, &ai)| gi * ai).collect()),
                ]
            }),
        ))
    }

    /// Adds `bias` (length d) to every position along the last axis.
    pub fn add_bias(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let d = *self.shape().last().unwrap_or(&0);
        if bias.shape() != [d] || d == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let bd = bias.data();
        let out: Vec<E> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bd[i % d])
            .collect();
        let (na, nb) = (self.tracks(), bias.tracks());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                let db = nb.then(|| {
                    let mut acc = vec![E::zero(); d];
                    for (i, &gi) in g.iter().enumerate() {
                        acc[i % d] = acc[i % d] + gi;
                    }
                    acc
                });
                vec![na.then(|| g.to_vec()), db]
            }),
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, s: f64) -> Tensor<E> {
        let c = E::from_f64(s);
        let out: Vec<E> = self.data().iter().map(|&x| x * c).collect();
        Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&gi| gi * c).collect())]),
        )
    }

    /// Adds a constant to every element.
    pub fn add_scalar(&self, s: f64) -> Tensor<E> {
        let c = E::from_f64(s);
        let out: Vec<E> = self.data().iter().map(|&x| x + c).collect();
        Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.to_vec())]),
        )
    }

    pub fn relu(&self) -> Tensor<E> {
        let out: Vec<E> = self
            .data()
            .iter()
            .map(|&x| if x > E::zero() { x } else { E::zero() })
            .collect();
        let xin = self.data_arc();
        Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                vec![Some(
                    g.iter()
                        .zip(xin.iter())
                        .map(|(&gi, &x)| if x > E::zero() { gi } else { E::zero() })
                        .collect(),
                )]
            }),
        )
    }

    /// Numerically stable softmax along `axis`: max-subtraction before
    /// exponentiation, each slice sums to one.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let (outer, n, inner) = axis_dims(self.shape(), axis, "softmax")?;
        let x = self.data();
        let mut out = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mut m = E::neg_infinity();
                for j in 0..n {
                    m = m.max(x[idx(j)]);
                }
                let mut sum = E::zero();
                for j in 0..n {
                    let e = (x[idx(j)] - m).exp();
                    out[idx(j)] = e;
                    sum = sum + e;
                }
                for j in 0..n {
                    out[idx(j)] = out[idx(j)] / sum;
                }
            }
        }
        let y = std::sync::Arc::new(out.clone());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let mut dot = E::zero();
                        for j in 0..n {
                            dot = dot + g[idx(j)] * y[idx(j)];
                        }
                        for j in 0..n {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Log-softmax along `axis` (stable; used for decoder outputs and CTC
    /// emissions).
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<E>> {
        let (outer, n, inner) = axis_dims(self.shape(), axis, "log_softmax")?;
        let x = self.data();
        let mut out = vec![E::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mut m = E::neg_infinity();
                for j in 0..n {
                    m = m.max(x[idx(j)]);
                }
                let mut sum = E::zero();
                for j in 0..n {
                    sum = sum + (x[idx(j)] - m).exp();
                }
                let lse = m + sum.ln();
                for j in 0..n {
                    out[idx(j)] = x[idx(j)] - lse;
                }
            }
        }
        let y = std::sync::Arc::new(out.clone());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * n + j) * inner + i;
                        let mut gsum = E::zero();
                        for j in 0..n {
                            gsum = gsum + g[idx(j)];
                        }
                        for j in 0..n {
                            dx[idx(j)] = g[idx(j)] - y[idx(j)].exp() * gsum;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Per-position layer normalization over the last axis, then affine
    /// transform by `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<E>, bias: &Tensor<E>, eps: f64) -> Result<Tensor<E>> {
        let d = *self.shape().last().unwrap_or(&0);
        if d == 0 || gain.shape() != [d] || bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape().to_vec(),
                rhs: gain.shape().to_vec(),
            });
        }
        let rows = self.numel() / d;
        let eps = E::from_f64(eps);
        let dn = E::from_f64(d as f64);
        let x = self.data();
        let (gd, bd) = (gain.data(), bias.data());
        let mut out = vec![E::zero(); x.len()];
        let mut xhat = vec![E::zero(); x.len()];
        let mut inv_std = vec![E::zero(); rows];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<E>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<E>() / dn;
            let istd = (var + eps).sqrt().recip();
            inv_std[r] = istd;
            for i in 0..d {
                let xh = (row[i] - mean) * istd;
                xhat[r * d + i] = xh;
                out[r * d + i] = gd[i] * xh + bd[i];
            }
        }
        let xhat = std::sync::Arc::new(xhat);
        let inv_std = std::sync::Arc::new(inv_std);
        let gain_data = gain.data_arc();
        let (nx, ng, nb) = (self.tracks(), gain.tracks(), bias.tracks());
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                let dx = nx.then(|| {
                    let mut dx = vec![E::zero(); g.len()];
                    for r in 0..rows {
                        let mut mean_dxhat = E::zero();
                        let mut mean_dxhat_xhat = E::zero();
                        for i in 0..d {
                            let dxh = g[r * d + i] * gain_data[i];
                            mean_dxhat = mean_dxhat + dxh;
                            mean_dxhat_xhat = mean_dxhat_xhat + dxh * xhat[r * d + i];
                        }
                        mean_dxhat = mean_dxhat / dn;
                        mean_dxhat_xhat = mean_dxhat_xhat / dn;
                        for i in 0..d {
                            let dxh = g[r * d + i] * gain_data[i];
                            dx[r * d + i] = (dxh
                                - mean_dxhat
                                - xhat[r * d + i] * mean_dxhat_xhat)
                                * inv_std[r];
                        }
                    }
                    dx
                });
                let dgain = ng.then(|| {
                    let mut acc = vec![E::zero(); d];
                    for r in 0..rows {
                        for i in 0..d {
                            acc[i] = acc[i] + g[r * d + i] * xhat[r * d + i];
                        }
                    }
                    acc
                });
                let dbias = nb.then(|| {
                    let mut acc = vec![E::zero(); d];
                    for r in 0..rows {
                        for i in 0..d {
                            acc[i] = acc[i] + g[r * d + i];
                        }
                    }
                    acc
                });
                vec![dx, dgain, dbias]
            }),
        ))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::Invalid {
                op: "transpose",
                msg: format!("expected rank 2, got shape {s:?}"),
            });
        }
        let (m, n) = (s[0], s[1]);
        let x = self.data();
        let mut out = vec![E::zero(); x.len()];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        Ok(Tensor::with_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); g.len()];
                for j in 0..n {
                    for i in 0..m {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Same elements, new shape (element count must match).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::Invalid {
                op: "reshape",
                msg: format!("cannot view shape {:?} as {shape:?}", self.shape()),
            });
        }
        Ok(Tensor::with_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.to_vec())]),
        ))
    }

    /// Contiguous rows `start..start+len` of the leading axis.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.is_empty() || start + len > s[0] {
            return Err(TensorError::Invalid {
                op: "slice_rows",
                msg: format!("rows {start}..{} out of range for shape {s:?}", start + len),
            });
        }
        let row = self.numel() / s[0];
        let total = self.numel();
        let data = self.data()[start * row..(start + len) * row].to_vec();
        let mut shape = s.to_vec();
        shape[0] = len;
        Ok(Tensor::with_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); total];
                dx[start * row..(start + len) * row].copy_from_slice(g);
                vec![Some(dx)]
            }),
        ))
    }

    /// Rows of the leading axis in the requested order; repeated indices
    /// accumulate gradient additively.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.is_empty() {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: "rank-0 input".into(),
            });
        }
        let n = s[0];
        let row = self.numel() / n;
        for &id in ids {
            if id >= n {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    extent: n,
                });
            }
        }
        let x = self.data();
        let mut data = Vec::with_capacity(ids.len() * row);
        for &id in ids {
            data.extend_from_slice(&x[id * row..(id + 1) * row]);
        }
        let mut shape = s.to_vec();
        shape[0] = ids.len();
        let ids = ids.to_vec();
        let total = self.numel();
        Ok(Tensor::with_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); total];
                for (pos, &id) in ids.iter().enumerate() {
                    for c in 0..row {
                        dx[id * row + c] = dx[id * row + c] + g[pos * row + c];
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// One element per row: `out[i] = self[i][ids[i]]`.
    pub fn take_per_row(&self, ids: &[usize]) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 2 || ids.len() != s[0] {
            return Err(TensorError::Invalid {
                op: "take_per_row",
                msg: format!("shape {s:?} with {} indices", ids.len()),
            });
        }
        let (r, c) = (s[0], s[1]);
        for &id in ids {
            if id >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "take_per_row",
                    index: id,
                    extent: c,
                });
            }
        }
        let x = self.data();
        let data: Vec<E> = ids.iter().enumerate().map(|(i, &j)| x[i * c + j]).collect();
        let ids = ids.to_vec();
        Ok(Tensor::with_op(
            vec![r],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); r * c];
                for (i, &j) in ids.iter().enumerate() {
                    dx[i * c + j] = dx[i * c + j] + g[i];
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Columns `start..start+len` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor<E>> {
        let s = self.shape();
        if s.len() != 2 || start + len > s[1] {
            return Err(TensorError::Invalid {
                op: "slice_cols",
                msg: format!("cols {start}..{} out of range for shape {s:?}", start + len),
            });
        }
        let (r, c) = (s[0], s[1]);
        let x = self.data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        Ok(Tensor::with_op(
            vec![r, len],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![E::zero(); r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len]
                        .copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Concatenation along the leading axis (trailing shapes must match).
    pub fn concat_rows(parts: &[Tensor<E>]) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat_rows",
                msg: "no inputs".into(),
            });
        }
        let trailing = &parts[0].shape()[1.min(parts[0].shape().len())..];
        let mut lead = 0;
        for p in parts {
            if p.shape().is_empty() || &p.shape()[1..] != trailing {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            lead += p.shape()[0];
        }
        let row: usize = trailing.iter().product();
        let mut data = Vec::with_capacity(lead * row);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(trailing);
        let sizes: Vec<usize> = parts.iter().map(Tensor::numel).collect();
        let needs: Vec<bool> = parts.iter().map(Tensor::tracks).collect();
        Ok(Tensor::with_op(
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g| {
                let mut offset = 0;
                sizes
                    .iter()
                    .zip(&needs)
                    .map(|(&sz, &need)| {
                        let piece = need.then(|| g[offset..offset + sz].to_vec());
                        offset += sz;
                        piece
                    })
                    .collect()
            }),
        ))
    }

    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat_cols(parts: &[Tensor<E>]) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat_cols",
                msg: "no inputs".into(),
            });
        }
        let r = parts[0].shape().first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape().len() != 2 || p.shape()[0] != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            widths.push(p.shape()[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![E::zero(); r * total];
        let mut col = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let x = p.data();
            for i in 0..r {
                data[i * total + col..i * total + col + w]
                    .copy_from_slice(&x[i * w..(i + 1) * w]);
            }
            col += w;
        }
        let needs: Vec<bool> = parts.iter().map(Tensor::tracks).collect();
        Ok(Tensor::with_op(
            vec![r, total],
            data,
            parts.to_vec(),
            Box::new(move |g| {
                let mut col = 0;
                widths
                    .iter()
                    .zip(&needs)
                    .map(|(&w, &need)| {
                        let piece = need.then(|| {
                            let mut dx = vec![E::zero(); r * w];
                            for i in 0..r {
                                dx[i * w..(i + 1) * w]
                                    .copy_from_slice(&g[i * total + col..i * total + col + w]);
                            }
                            dx
                        });
                        col += w;
                        piece
                    })
                    .collect()
            }),
        ))
    }

    /// Elementwise `log(exp(a) + exp(b))`, safe at negative infinity.
    pub fn logaddexp(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let out = self.zip_same_shape(rhs, "logaddexp", |a, b| {
            if a == E::neg_infinity() && b == E::neg_infinity() {
                E::neg_infinity()
            } else {
                let m = a.max(b);
                m + (a.min(b) - m).exp().ln_1p()
            }
        })?;
        let (a, b) = (self.data_arc(), rhs.data_arc());
        let (na, nb) = (self.tracks(), rhs.tracks());
        let y = std::sync::Arc::new(out.clone());
        let weight = move |x: E, o: E| {
            if o == E::neg_infinity() {
                E::zero()
            } else {
                (x - o).exp()
            }
        };
        let (ya, yb) = (std::sync::Arc::clone(&y), y);
        Ok(Tensor::with_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| {
                        g.iter()
                            .zip(a.iter().zip(ya.iter()))
                            .map(|(&gi, (&x, &o))| gi * weight(x, o))
                            .collect()
                    }),
                    nb.then(|| {
                        g.iter()
                            .zip(b.iter().zip(yb.iter()))
                            .map(|(&gi, (&x, &o))| gi * weight(x, o))
                            .collect()
                    }),
                ]
            }),
        ))
    }

    /// Depth-wise 1-D convolution over time with same padding: each channel
    /// is filtered independently by its own length-k kernel.
    pub fn depthwise_conv1d(&self, kernel: &Tensor<E>, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let (xs, ks) = (self.shape(), kernel.shape());
        if xs.len() != 2 || ks.len() != 2 || xs[1] != ks[1] || ks[0] % 2 == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv1d",
                lhs: xs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let (t_len, d) = (xs[0], xs[1]);
        let k = ks[0];
        if bias.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv1d",
                lhs: vec![d],
                rhs: bias.shape().to_vec(),
            });
        }
        let half = k / 2;
        let x = self.data();
        let ker = kernel.data();
        let bd = bias.data();
        let mut out = vec![E::zero(); t_len * d];
        for t in 0..t_len {
            for c in 0..d {
                let mut s = bd[c];
                for j in 0..k {
                    let src = t as isize + j as isize - half as isize;
                    if src >= 0 && (src as usize) < t_len {
                        s = s + x[src as usize * d + c] * ker[j * d + c];
                    }
                }
                out[t * d + c] = s;
            }
        }
        let (xa, ka) = (self.data_arc(), kernel.data_arc());
        let (nx, nk, nb) = (self.tracks(), kernel.tracks(), bias.tracks());
        Ok(Tensor::with_op(
            vec![t_len, d],
            out,
            vec![self.clone(), kernel.clone(), bias.clone()],
            Box::new(move |g| {
                let dx = nx.then(|| {
                    let mut dx = vec![E::zero(); t_len * d];
                    for s in 0..t_len {
                        for c in 0..d {
                            let mut acc = E::zero();
                            for j in 0..k {
                                let t = s as isize - j as isize + half as isize;
                                if t >= 0 && (t as usize) < t_len {
                                    acc = acc + g[t as usize * d + c] * ka[j * d + c];
                                }
                            }
                            dx[s * d + c] = acc;
                        }
                    }
                    dx
                });
                let dk = nk.then(|| {
                    let mut dk = vec![E::zero(); k * d];
                    for t in 0..t_len {
                        for j in 0..k {
                            let src = t as isize + j as isize - half as isize;
                            if src >= 0 && (src as usize) < t_len {
                                for c in 0..d {
                                    dk[j * d + c] =
                                        dk[j * d + c] + g[t * d + c] * xa[src as usize * d + c];
                                }
                            }
                        }
                    }
                    dk
                });
                let db = nb.then(|| {
                    let mut db = vec![E::zero(); d];
                    for t in 0..t_len {
                        for c in 0..d {
                            db[c] = db[c] + g[t * d + c];
                        }
                    }
                    db
                });
                vec![dx, dk, db]
            }),
        ))
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum_all(&self) -> Tensor<E> {
        let s: E = self.data().iter().copied().sum();
        let numel = self.numel();
        Tensor::with_op(
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; numel])]),
        )
    }

    /// Mean of all elements as a rank-0 scalar.
    pub fn mean_all(&self) -> Tensor<E> {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }
}
