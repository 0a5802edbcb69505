use super::{gemm, Real, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape<T: Real>(op: &'static str, a: &Var<T>, b: &Var<T>) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(op, a.shape(), b.shape()))
    }
}

fn unary<T: Real>(
    x: &Var<T>,
    op: &'static str,
    f: impl Fn(T) -> T,
    // derivative from (input, output)
    df: impl Fn(T, T) -> T + 'static,
) -> Var<T> {
    let value = x.value().map(f);
    Var::from_op(
        op,
        value,
        vec![x.clone()],
        Box::new(move |g, out, parents| {
            let x = parents[0].value();
            let data = g
                .data()
                .iter()
                .zip(x.data())
                .zip(out.data())
                .map(|((&g, &xi), &yi)| g * df(xi, yi))
                .collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), data))]
        }),
    )
}

impl<T: Real> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("add", self, other)?;
        Ok(Var::from_op(
            "add",
            self.value().zip_map(other.value(), |a, b| a + b),
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("sub", self, other)?;
        Ok(Var::from_op(
            "sub",
            self.value().zip_map(other.value(), |a, b| a - b),
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        ))
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        same_shape("mul", self, other)?;
        Ok(Var::from_op(
            "mul",
            self.value().zip_map(other.value(), |a, b| a * b),
            vec![self.clone(), other.clone()],
            Box::new(|g, _, p| {
                let (a, b) = (p[0].value(), p[1].value());
                vec![
                    p[0].requires_grad().then(|| g.zip_map(b, |g, b| g * b)),
                    p[1].requires_grad().then(|| g.zip_map(a, |g, a| g * a)),
                ]
            }),
        ))
    }

    pub fn neg(&self) -> Var<T> {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        let s = T::lit(s);
        unary(self, "add_scalar", move |v| v + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, s: f64) -> Var<T> {
        let s = T::lit(s);
        unary(self, "mul_scalar", move |v| v * s, move |_, _| s)
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, "exp", T::exp, |_, y| y)
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, "tanh", T::tanh, |_, y| T::one() - y * y)
    }

    pub fn relu(&self) -> Var<T> {
        unary(
            self,
            "relu",
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// Clamps to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<T> {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        unary(
            self,
            "clamp",
            move |v| v.max(lo).min(hi),
            move |x, _| if x >= lo && x <= hi { T::one() } else { T::zero() },
        )
    }

    /// `[N, H, W, C] → [N, H/k, W/k, k²C]`; channel `(dy·k + dx)·C + c` holds
    /// pixel `(k·i + dy, k·j + dx)` of channel `c`.
    pub fn space_to_depth(&self, k: usize) -> Result<Var<T>> {
        let (n, h, w, c) = self.value().nhwc()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::invalid("space_to_depth", format!("{h}x{w} is not divisible by factor {k}")));
        }
        let (oh, ow, oc) = (h / k, w / k, k * k * c);
        // out index → in index, shared by forward gather and backward scatter
        let mut map = Vec::with_capacity(n * h * w * c);
        for b in 0..n {
            for i in 0..oh {
                for j in 0..ow {
                    for dy in 0..k {
                        for dx in 0..k {
                            let src = ((b * h + k * i + dy) * w + k * j + dx) * c;
                            map.extend(src..src + c);
                        }
                    }
                }
            }
        }
        let x = self.value().data();
        let out = map.iter().map(|&s| x[s]).collect();
        let in_shape = vec![n, h, w, c];
        Ok(Var::from_op(
            "space_to_depth",
            Tensor::from_parts(vec![n, oh, ow, oc], out),
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut d = vec![T::zero(); map.len()];
                for (&s, &v) in map.iter().zip(g.data()) {
                    d[s] = v;
                }
                vec![Some(Tensor::from_parts(in_shape.clone(), d))]
            }),
        ))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<T>> {
        let value = self.value().clone().reshape(shape)?;
        Ok(Var::from_op(
            "reshape",
            value,
            vec![self.clone()],
            Box::new(|g, _, p| vec![Some(Tensor::from_parts(p[0].shape().to_vec(), g.data().to_vec()))]),
        ))
    }

    pub fn sum(&self) -> Var<T> {
        let total: T = self.value().data().iter().copied().sum();
        Var::from_op(
            "sum",
            Tensor::scalar(total),
            vec![self.clone()],
            Box::new(|g, _, p| vec![Some(Tensor::full(p[0].shape().to_vec(), g.data()[0]))]),
        )
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().len();
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&self, target: &Var<T>) -> Result<Var<T>> {
        same_shape("mse", self, target)?;
        let n = T::lit(self.value().len() as f64);
        let diff = self.value().zip_map(target.value(), |a, b| a - b);
        let loss = diff.data().iter().map(|&d| d * d).sum::<T>() / n;
        Ok(Var::from_op(
            "mse",
            Tensor::scalar(loss),
            vec![self.clone(), target.clone()],
            Box::new(move |g, _, p| {
                let scale = T::lit(2.0) * g.data()[0] / n;
                let da = p[0].value().zip_map(p[1].value(), |a, b| (a - b) * scale);
                let db = p[1].requires_grad().then(|| da.map(|v| -v));
                vec![Some(da), db]
            }),
        ))
    }

    /// `[m, k] × [k, n]`.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k1], &[k2, n]) if k1 == k2 => (m, k1, n),
            _ => return Err(Error::shape("matmul", self.shape(), other.shape())),
        };
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value().data(), false, other.value().data(), false, &mut out, false);
        Ok(Var::from_op(
            "matmul",
            Tensor::from_parts(vec![m, n], out),
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, p| matmul_backward(g, &p[0], &p[1], m, k, n)),
        ))
    }

    /// Fully connected layer: `x [m, k] · w [k, n] + b [n]`.
    pub fn linear(&self, weight: &Var<T>, bias: &Var<T>) -> Result<Var<T>> {
        let (m, k, n) = match (self.shape(), weight.shape()) {
            (&[m, k1], &[k2, n]) if k1 == k2 => (m, k1, n),
            _ => return Err(Error::shape("linear", self.shape(), weight.shape())),
        };
        if bias.shape() != [n] {
            return Err(Error::shape("linear bias", bias.shape(), &[n]));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, self.value().data(), false, weight.value().data(), false, &mut out, false);
        let bd = bias.value().data();
        for row in out.chunks_exact_mut(n) {
            for (o, &b) in row.iter_mut().zip(bd) {
                *o += b;
            }
        }
        Ok(Var::from_op(
            "linear",
            Tensor::from_parts(vec![m, n], out),
            vec![self.clone(), weight.clone(), bias.clone()],
            Box::new(move |g, _, p| {
                let mut grads = matmul_backward(g, &p[0], &p[1], m, k, n);
                let db = p[2].requires_grad().then(|| {
                    let mut db = vec![T::zero(); n];
                    for row in g.data().chunks_exact(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    Tensor::from_parts(vec![n], db)
                });
                grads.push(db);
                grads
            }),
        ))
    }

    /// Concatenates along the last axis; all leading dims must agree.
    pub fn concat_last(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat", "nothing to concatenate"))?;
        let lead = &first.shape()[..first.shape().len() - 1];
        for p in &parts[1..] {
            let s = p.shape();
            if s.len() != first.shape().len() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat", first.shape(), s));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.value().data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Var::from_op(
            "concat",
            Tensor::from_parts(shape, out),
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, _, p| {
                let mut offset = 0;
                widths
                    .iter()
                    .zip(p)
                    .map(|(&w, parent)| {
                        let start = offset;
                        offset += w;
                        parent.requires_grad().then(|| {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.data()[r * total + start..r * total + start + w]);
                            }
                            Tensor::from_parts(parent.shape().to_vec(), d)
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Channels `[start, start + len)` of the last axis.
    pub fn slice_last(&self, start: usize, len: usize) -> Result<Var<T>> {
        let shape = self.shape();
        let width = *shape.last().unwrap();
        if len == 0 || start + len > width {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} out of bounds for last dim {width}", start + len),
            ));
        }
        let rows = self.value().len() / width;
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&self.value().data()[r * width + start..r * width + start + len]);
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = len;
        Ok(Var::from_op(
            "slice",
            Tensor::from_parts(out_shape, out),
            vec![self.clone()],
            Box::new(move |g, _, p| {
                let mut d = vec![T::zero(); rows * width];
                for r in 0..rows {
                    d[r * width + start..r * width + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                vec![Some(Tensor::from_parts(p[0].shape().to_vec(), d))]
            }),
        ))
    }

    /// Multiplies every element by the entry of `scale` for its last-axis channel.
    pub fn mul_channel(&self, scale: &Var<T>) -> Result<Var<T>> {
        let c = *self.shape().last().unwrap();
        if scale.shape() != [c] {
            return Err(Error::shape("mul_channel", self.shape(), scale.shape()));
        }
        let s = scale.value().data();
        let mut out = self.value().data().to_vec();
        for row in out.chunks_exact_mut(c) {
            for (o, &sv) in row.iter_mut().zip(s) {
                *o *= sv;
            }
        }
        Ok(Var::from_op(
            "mul_channel",
            Tensor::from_parts(self.shape().to_vec(), out),
            vec![self.clone(), scale.clone()],
            Box::new(move |g, _, p| {
                let x = p[0].value();
                let s = p[1].value();
                let dx = p[0].requires_grad().then(|| {
                    let mut d = g.data().to_vec();
                    for row in d.chunks_exact_mut(c) {
                        for (o, &sv) in row.iter_mut().zip(s.data()) {
                            *o *= sv;
                        }
                    }
                    Tensor::from_parts(x.shape().to_vec(), d)
                });
                let ds = p[1].requires_grad().then(|| {
                    let mut d = vec![T::zero(); c];
                    for (grow, xrow) in g.data().chunks_exact(c).zip(x.data().chunks_exact(c)) {
                        for ((acc, &gv), &xv) in d.iter_mut().zip(grow).zip(xrow) {
                            *acc += gv * xv;
                        }
                    }
                    Tensor::from_parts(vec![c], d)
                });
                vec![dx, ds]
            }),
        ))
    }

    /// Selects rows of a 2D tensor; indices may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<T>> {
        let (rows, cols) = match self.shape() {
            &[r, c] => (r, c),
            s => return Err(Error::invalid("gather_rows", format!("expected 2D input, got {s:?}"))),
        };
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::invalid("gather_rows", format!("row {bad} out of range for {rows} rows")));
        }
        let x = self.value().data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
        }
        let indices = indices.to_vec();
        Ok(Var::from_op(
            "gather_rows",
            Tensor::from_parts(vec![indices.len(), cols], out),
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut d = vec![T::zero(); rows * cols];
                for (r, &i) in indices.iter().enumerate() {
                    for (o, &v) in d[i * cols..(i + 1) * cols].iter_mut().zip(&g.data()[r * cols..(r + 1) * cols]) {
                        *o += v;
                    }
                }
                vec![Some(Tensor::from_parts(vec![rows, cols], d))]
            }),
        ))
    }

    /// Scales each row of a 2D tensor by a constant weight.
    pub fn scale_rows(&self, weights: &[T]) -> Result<Var<T>> {
        let (rows, cols) = match self.shape() {
            &[r, c] if r == weights.len() => (r, c),
            s => return Err(Error::shape("scale_rows", s, &[weights.len()])),
        };
        let weights = weights.to_vec();
        let scale = move |src: &[T]| {
            let mut d = src.to_vec();
            for (row, &w) in d.chunks_exact_mut(cols).zip(&weights) {
                row.iter_mut().for_each(|v| *v *= w);
            }
            d
        };
        let out = scale(self.value().data());
        Ok(Var::from_op(
            "scale_rows",
            Tensor::from_parts(vec![rows, cols], out),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(Tensor::from_parts(vec![rows, cols], scale(g.data())))]),
        ))
    }

    /// Sums `groups` consecutive row blocks: `[groups·q, c] → [q, c]`.
    pub fn sum_blocks(&self, groups: usize) -> Result<Var<T>> {
        let (rows, cols) = match self.shape() {
            &[r, c] if groups > 0 && r % groups == 0 => (r, c),
            s => {
                return Err(Error::invalid(
                    "sum_blocks",
                    format!("cannot split shape {s:?} into {groups} row blocks"),
                ))
            }
        };
        let q = rows / groups;
        let block = q * cols;
        let x = self.value().data();
        let mut out = x[..block].to_vec();
        for gi in 1..groups {
            for (o, &v) in out.iter_mut().zip(&x[gi * block..(gi + 1) * block]) {
                *o += v;
            }
        }
        Ok(Var::from_op(
            "sum_blocks",
            Tensor::from_parts(vec![q, cols], out),
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let d = g.data().repeat(groups);
                vec![Some(Tensor::from_parts(vec![rows, cols], d))]
            }),
        ))
    }
}

fn matmul_backward<T: Real>(
    g: &Tensor<T>,
    a: &Var<T>,
    b: &Var<T>,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<Option<Tensor<T>>> {
    let da = a.requires_grad().then(|| {
        let mut d = vec![T::zero(); m * k];
        gemm(m, n, k, g.data(), false, b.value().data(), true, &mut d, false);
        Tensor::from_parts(vec![m, k], d)
    });
    let db = b.requires_grad().then(|| {
        let mut d = vec![T::zero(); k * n];
        gemm(k, m, n, a.value().data(), true, g.data(), false, &mut d, false);
        Tensor::from_parts(vec![k, n], d)
    });
    vec![da, db]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(shape: &[usize], data: &[f64]) -> Var<f64> {
        Var::constant(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn relu_definition() {
        let y = c(&[3], &[-1.0, 0.0, 2.0]).relu();
        assert_eq!(y.value().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn mse_of_identical_inputs_is_zero() {
        let a = c(&[2], &[1.0, 2.0]);
        assert_eq!(a.mse(&a).unwrap().value().data(), &[0.0]);
    }

    #[test]
    fn mse_weight_gradient() {
        // mse(w·1, 0) with w = 2 has d/dw = 2w = 4
        let w = Var::leaf(Tensor::scalar(2.0), true);
        let ones = c(&[1], &[1.0]);
        let zero = c(&[1], &[0.0]);
        w.mul(&ones).unwrap().mse(&zero).unwrap().backward().unwrap();
        assert_eq!(w.grad().unwrap().data(), &[4.0]);
    }

    #[test]
    fn shape_errors_name_op_and_shapes() {
        let a = c(&[2], &[1.0, 2.0]);
        let b = c(&[3], &[1.0, 2.0, 3.0]);
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
        let m = c(&[2, 3], &[0.0; 6]);
        assert!(m.matmul(&m).is_err());
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let a = c(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let b = c(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let cat = Var::concat_last(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[2, 2, 3]);
        assert_eq!(&cat.value().data()[..6], &[1.0, 5.0, 6.0, 2.0, 7.0, 8.0]);
        assert_eq!(cat.slice_last(0, 1).unwrap().value(), a.value());
        assert_eq!(cat.slice_last(1, 2).unwrap().value(), b.value());
        assert!(cat.slice_last(2, 2).is_err());
        let bad = c(&[3, 1], &[0.0; 3]);
        assert!(Var::concat_last(&[&a, &bad]).is_err());
    }

    #[test]
    fn clamp_values() {
        let y = c(&[4], &[-2.0, -0.5, 0.5, 2.0]).clamp(-1.0, 1.0);
        assert_eq!(y.value().data(), &[-1.0, -0.5, 0.5, 1.0]);
    }

    #[test]
    fn space_to_depth_layout() {
        // 2x2 single-channel block folds into one pixel with 4 channels
        let x = c(&[1, 2, 4, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let y = x.space_to_depth(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        assert_eq!(y.value().data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert!(x.space_to_depth(3).is_err());
        assert_eq!(x.space_to_depth(1).unwrap().value(), x.value());
    }

    #[test]
    fn gather_scale_and_block_sum() {
        let x = c(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = x.gather_rows(&[2, 0, 2, 1]).unwrap();
        assert_eq!(g.value().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0, 3.0, 4.0]);
        let s = g.scale_rows(&[1.0, 0.5, 0.0, 2.0]).unwrap();
        let b = s.sum_blocks(2).unwrap();
        assert_eq!(b.value().data(), &[5.0, 6.0, 6.5, 9.0]);
        assert!(x.gather_rows(&[3]).is_err());
        assert!(x.sum_blocks(2).is_err());
    }
}
