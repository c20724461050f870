//! Reverse-mode differentiation over the [`Tensor4`] operation set.
//!
//! A [`Tape`] records every operation applied to its variables. Calling
//! [`Tape::backward`] on a scalar `(1, 1, 1, 1)` node walks the record in
//! reverse and returns the gradient of that scalar with respect to every
//! variable that requires one.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, ConvKernel, Shape4, Tensor4};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv { x: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleChannels { x: Var, scale: Var },
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of a differentiable computation.
#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor4<T>>>,
    shapes: Vec<Shape4>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor4<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor4<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor4::zeros(self.shapes[v.0]))
    }

    pub fn take(&mut self, v: Var) -> Tensor4<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor4::zeros(self.shapes[v.0]))
    }
}

/// Weight and bias variables of a convolution bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub weight: Var,
    pub bias: Var,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor4<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn bind_conv(&mut self, kernel: &ConvKernel<T>) -> ConvVars {
        ConvVars {
            weight: self.param(kernel.weight.clone()),
            bias: self.param(kernel.bias_tensor()),
        }
    }

    pub fn value(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    pub fn into_value(mut self, v: Var) -> Tensor4<T> {
        self.nodes.swap_remove(v.0).value
    }

    pub fn conv2d(&mut self, x: Var, kernel: ConvVars) -> Result<Var> {
        let value = tensor::conv2d_raw(
            self.value(x),
            self.value(kernel.weight),
            self.value(kernel.bias).data(),
        )?;
        let rg = self.needs(&[x, kernel.weight, kernel.bias]);
        Ok(self.push(
            value,
            Op::Conv {
                x,
                weight: kernel.weight,
                bias: kernel.bias,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = tensor::relu(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = tensor::sigmoid(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let value = tensor::global_avg_pool(self.value(x));
        let rg = self.needs(&[x]);
        self.push(value, Op::GlobalAvgPool(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.needs(&[x]);
        self.push(value, Op::Scale(x, factor), rg)
    }

    /// Multiply every plane of `x` by the matching entry of an `(N, C, 1, 1)`
    /// tensor.
    pub fn scale_channels(&mut self, x: Var, scale: Var) -> Result<Var> {
        let xs = self.shape(x);
        self.value(scale)
            .expect_shape(Shape4::new(xs.n, xs.c, 1, 1))?;
        let mut value = self.value(x).clone();
        let s = self.value(scale).data();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let f = s[n * xs.c + c];
                value.plane_mut(n, c).iter_mut().for_each(|v| *v *= f);
            }
        }
        let rg = self.needs(&[x, scale]);
        Ok(self.push(value, Op::ScaleChannels { x, scale }, rg))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor4<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor4::concat_channels(&tensors)?;
        let rg = self.needs(parts);
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor4::scalar(self.value(x).sum());
        let rg = self.needs(&[x]);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor4::scalar(self.value(x).mean());
        let rg = self.needs(&[x]);
        self.push(value, Op::Mean(x), rg)
    }

    /// Gradient of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor4::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Conv { x, weight, bias } => {
                    let xv = self.value(*x);
                    let wv = self.value(*weight);
                    let mut dw = self.nodes[weight.0]
                        .requires_grad
                        .then(|| Tensor4::zeros(wv.shape()));
                    let mut db = self.nodes[bias.0]
                        .requires_grad
                        .then(|| Tensor4::zeros(self.shape(*bias)));
                    let dx = tensor::conv2d_backward(
                        xv,
                        wv,
                        &g,
                        dw.as_mut(),
                        db.as_mut().map(|t| t.data_mut()),
                        self.nodes[x.0].requires_grad,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if let Some(dw) = dw {
                        accumulate(&mut grads, *weight, dw)?;
                    }
                    if let Some(db) = db {
                        accumulate(&mut grads, *bias, db)?;
                    }
                }
                Op::Relu(x) => {
                    let d = g.zip_map(self.value(*x), |g, x| if x > T::zero() { g } else { T::zero() })?;
                    accumulate(&mut grads, *x, d)?;
                }
                Op::Sigmoid(x) => {
                    let d = g.zip_map(&node.value, |g, s| g * s * (T::one() - s))?;
                    accumulate(&mut grads, *x, d)?;
                }
                Op::GlobalAvgPool(x) => {
                    let s = self.shape(*x);
                    let inv = T::one() / T::of(s.plane() as f64);
                    let mut d = Tensor4::zeros(s);
                    for n in 0..s.n {
                        for c in 0..s.c {
                            let v = g.data()[n * s.c + c] * inv;
                            d.plane_mut(n, c).fill(v);
                        }
                    }
                    accumulate(&mut grads, *x, d)?;
                }
                Op::Add(a, b) => {
                    self.send(&mut grads, *a, || g.clone())?;
                    self.send(&mut grads, *b, || g.clone())?;
                }
                Op::Sub(a, b) => {
                    self.send(&mut grads, *a, || g.clone())?;
                    self.send(&mut grads, *b, || g.map(|v| -v))?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, g.zip_map(bv, |g, b| g * b)?)?;
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, g.zip_map(av, |g, a| g * a)?)?;
                    }
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    accumulate(&mut grads, *x, g.map(|v| v * f))?;
                }
                Op::ScaleChannels { x, scale } => {
                    let xv = self.value(*x);
                    let sv = self.value(*scale);
                    let s = xv.shape();
                    if self.nodes[x.0].requires_grad {
                        let mut dx = g.clone();
                        for n in 0..s.n {
                            for c in 0..s.c {
                                let f = sv.data()[n * s.c + c];
                                dx.plane_mut(n, c).iter_mut().for_each(|v| *v *= f);
                            }
                        }
                        accumulate(&mut grads, *x, dx)?;
                    }
                    if self.nodes[scale.0].requires_grad {
                        let mut ds = Tensor4::zeros(sv.shape());
                        for n in 0..s.n {
                            for c in 0..s.c {
                                ds.data_mut()[n * s.c + c] = g
                                    .plane(n, c)
                                    .iter()
                                    .zip(xv.plane(n, c))
                                    .map(|(&g, &x)| g * x)
                                    .sum();
                            }
                        }
                        accumulate(&mut grads, *scale, ds)?;
                    }
                }
                Op::Concat(parts) => {
                    let s = g.shape();
                    let mut c0 = 0;
                    for p in parts {
                        let ps = self.shape(*p);
                        if self.nodes[p.0].requires_grad {
                            let mut d = Tensor4::zeros(ps);
                            for n in 0..s.n {
                                for c in 0..ps.c {
                                    d.plane_mut(n, c).copy_from_slice(g.plane(n, c0 + c));
                                }
                            }
                            accumulate(&mut grads, *p, d)?;
                        }
                        c0 += ps.c;
                    }
                }
                Op::Sum(x) => {
                    let v = g.data()[0];
                    accumulate(&mut grads, *x, Tensor4::full(self.shape(*x), v))?;
                }
                Op::Mean(x) => {
                    let s = self.shape(*x);
                    let v = g.data()[0] / T::of(s.len() as f64);
                    accumulate(&mut grads, *x, Tensor4::full(s, v))?;
                }
            }
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn send(
        &self,
        grads: &mut [Option<Tensor4<T>>],
        target: Var,
        grad: impl FnOnce() -> Tensor4<T>,
    ) -> Result<()> {
        if self.nodes[target.0].requires_grad {
            accumulate(grads, target, grad())?;
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(
    grads: &mut [Option<Tensor4<T>>],
    target: Var,
    grad: Tensor4<T>,
) -> Result<()> {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => {
            *slot = Some(grad);
            Ok(())
        }
    }
}

/// Gradient of a scalar loss built on a tape with respect to `params`.
///
/// `loss_fn` receives the tape and one variable per parameter, and must
/// return a `(1, 1, 1, 1)` variable.
pub fn grad<T, F>(params: &[Tensor4<T>], loss_fn: F) -> Result<Vec<Tensor4<T>>>
where
    T: Scalar,
    F: FnOnce(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    if tape.value(loss).len() != 1 {
        return Err(shape_err!(
            "loss must be scalar, got shape {}",
            tape.shape(loss)
        ));
    }
    let mut g = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| g.take(v)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(values: &[f64]) -> Tensor4<f64> {
        Tensor4::from_vec(Shape4::new(1, 1, 1, values.len()), values.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor4::from_fn(Shape4::new(2, 3, 2, 2), |n, c, h, w| (n + c + h * w) as f64);
        let g = grad(&[x], |t, v| Ok(t.sum(v[0]))).unwrap();
        assert!(g[0].data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn relu_subgradient() {
        let g = grad(&[row(&[-1.0, 2.0, 0.0])], |t, v| {
            let r = t.relu(v[0]);
            Ok(t.sum(r))
        })
        .unwrap();
        assert_eq!(g[0].data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let r = grad(&[row(&[1.0, 2.0])], |t, v| Ok(t.relu(v[0])));
        assert!(r.is_err());
        let mut tape = Tape::new();
        let x = tape.param(row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_variable_accumulates() {
        // d/dx sum(x * x) = 2x
        let g = grad(&[row(&[1.5, -2.0])], |t, v| {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.sum(sq))
        })
        .unwrap();
        assert_eq!(g[0].data(), &[3.0, -4.0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(row(&[1.0, 2.0]));
        let p = tape.param(row(&[3.0, 4.0]));
        let m = tape.mul(c, p).unwrap();
        let s = tape.sum(m);
        let g = tape.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(p).data(), &[1.0, 2.0]);
    }

    fn central_difference(
        params: &[Tensor4<f64>],
        f: &dyn Fn(&[Tensor4<f64>]) -> f64,
        step: f64,
    ) -> Vec<Tensor4<f64>> {
        let mut out = Vec::new();
        for (i, p) in params.iter().enumerate() {
            let mut g = Tensor4::zeros(p.shape());
            for j in 0..p.len() {
                let mut plus = params.to_vec();
                plus[i].data_mut()[j] += step;
                let mut minus = params.to_vec();
                minus[i].data_mut()[j] -= step;
                g.data_mut()[j] = (f(&plus) - f(&minus)) / (2.0 * step);
            }
            out.push(g);
        }
        out
    }

    fn random(shape: Shape4, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Two convolutions with a ReLU between them, plus attention-style
    /// channel scaling, reduced to a scalar.
    fn two_layer(t: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        let h = t.conv2d(v[0], ConvVars { weight: v[1], bias: v[2] })?;
        let h = t.relu(h);
        let y = t.conv2d(h, ConvVars { weight: v[3], bias: v[4] })?;
        let pooled = t.global_avg_pool(y);
        let gate = t.sigmoid(pooled);
        let z = t.scale_channels(y, gate)?;
        let sq = t.mul(z, z)?;
        let m = t.mean(sq);
        Ok(t.scale(m, 3.0))
    }

    #[test]
    fn two_layer_conv_net_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = vec![
            random(Shape4::new(2, 2, 4, 4), &mut rng),
            random(Shape4::new(3, 2, 3, 3), &mut rng),
            random(Shape4::new(1, 3, 1, 1), &mut rng),
            random(Shape4::new(2, 3, 5, 5), &mut rng),
            random(Shape4::new(1, 2, 1, 1), &mut rng),
        ];
        let analytic = grad(&params, two_layer).unwrap();
        let eval = |p: &[Tensor4<f64>]| {
            let mut t = Tape::new();
            let v: Vec<Var> = p.iter().map(|x| t.param(x.clone())).collect();
            let l = two_layer(&mut t, &v).unwrap();
            t.value(l).data()[0]
        };
        let numeric = central_difference(&params, &eval, 1e-3);
        for (a, n) in analytic.iter().zip(&numeric) {
            for (&a, &n) in a.data().iter().zip(n.data()) {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
                assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
            }
        }
    }

    #[test]
    fn concat_routes_gradients_to_parts() {
        let a = row(&[1.0, 2.0]);
        let b = Tensor4::from_vec(Shape4::new(1, 2, 1, 2), vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = grad(&[a, b], |t, v| {
            let c = t.concat_channels(&[v[0], v[1]])?;
            let w = t.constant(Tensor4::from_fn(Shape4::new(1, 3, 1, 2), |_, c, _, w| {
                (c * 2 + w) as f64
            }));
            let m = t.mul(c, w)?;
            Ok(t.sum(m))
        })
        .unwrap();
        assert_eq!(g[0].data(), &[0.0, 1.0]);
        assert_eq!(g[1].data(), &[2.0, 3.0, 4.0, 5.0]);
    }
}
