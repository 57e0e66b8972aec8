use serde::{Deserialize, Serialize};

use super::init::InitScheme;
use super::layer::{Activation, DenseLayer};
use super::tensor::{gemm, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shared trunk followed by one output head per task.
///
/// Parameters are addressed by *slot*: trunk layers first (weight, then
/// bias), then every head in order. Appending heads therefore never moves
/// existing slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Serialize + for<'a> Deserialize<'a>")]
pub struct MultiHeadMlp<F> {
    trunk: Vec<DenseLayer<F>>,
    heads: Vec<DenseLayer<F>>,
    active_head: usize,
    #[serde(skip)]
    version: u64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    head: usize,
    version: u64,
    /// Input of each layer on the path (trunk..., head).
    inputs: Vec<Tensor<F>>,
    /// Pre-activation of each layer on the path.
    pre: Vec<Tensor<F>>,
}

impl<F> ForwardCache<F> {
    pub fn head(&self) -> usize {
        self.head
    }

    pub fn layer_count(&self) -> usize {
        self.pre.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> LayerGrad<F> {
    fn zeros_like(layer: &DenseLayer<F>) -> Self {
        Self {
            weight: vec![F::zero(); layer.weight.len()],
            bias: vec![F::zero(); layer.bias.len()],
        }
    }

    fn add_scaled(&mut self, other: &LayerGrad<F>, scale: F) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += scale * *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * *b;
        }
    }
}

/// Parameter gradients; heads that were not on any differentiated path are
/// `None` and receive no update.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    pub trunk: Vec<LayerGrad<F>>,
    pub heads: Vec<Option<LayerGrad<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros(model: &MultiHeadMlp<F>) -> Self {
        Self {
            trunk: model.trunk.iter().map(LayerGrad::zeros_like).collect(),
            heads: vec![None; model.heads.len()],
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients<F>, scale: F) {
        for (a, b) in self.trunk.iter_mut().zip(&other.trunk) {
            a.add_scaled(b, scale);
        }
        for (slot, theirs) in self.heads.iter_mut().zip(&other.heads) {
            if let Some(b) = theirs {
                match slot {
                    Some(a) => a.add_scaled(b, scale),
                    None => {
                        let mut a = LayerGrad {
                            weight: vec![F::zero(); b.weight.len()],
                            bias: vec![F::zero(); b.bias.len()],
                        };
                        a.add_scaled(b, scale);
                        *slot = Some(a);
                    }
                }
            }
        }
    }

    pub fn add(&mut self, other: &Gradients<F>) {
        self.add_scaled(other, F::one());
    }

    pub fn scale(&mut self, s: F) {
        let all = self
            .trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flatten());
        for g in all {
            g.weight.iter_mut().for_each(|v| *v *= s);
            g.bias.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Gradient for a parameter slot, `None` for untouched heads.
    pub fn slot(&self, slot: usize) -> Option<&[F]> {
        let layer = slot / 2;
        let g = if layer < self.trunk.len() {
            Some(&self.trunk[layer])
        } else {
            self.heads.get(layer - self.trunk.len())?.as_ref()
        }?;
        Some(if slot % 2 == 0 { &g.weight } else { &g.bias })
    }

    /// Adds a flat vector laid out like [`MultiHeadMlp::params_flat`].
    /// Heads receiving a contribution become active in the gradient.
    pub fn add_flat(&mut self, model: &MultiHeadMlp<F>, flat: &[F]) -> Result<()> {
        if flat.len() != model.parameter_count() {
            return Err(Error::shape(
                "flat gradient",
                model.parameter_count(),
                flat.len(),
            ));
        }
        let mut offset = 0;
        for (g, layer) in self.trunk.iter_mut().zip(&model.trunk) {
            add_into(&mut g.weight, &flat[offset..offset + layer.weight.len()]);
            offset += layer.weight.len();
            add_into(&mut g.bias, &flat[offset..offset + layer.bias.len()]);
            offset += layer.bias.len();
        }
        for (slot, layer) in self.heads.iter_mut().zip(&model.heads) {
            let (wl, bl) = (layer.weight.len(), layer.bias.len());
            let part = &flat[offset..offset + wl + bl];
            offset += wl + bl;
            if part.iter().all(|v| *v == F::zero()) && slot.is_none() {
                continue;
            }
            let g = slot.get_or_insert_with(|| LayerGrad::zeros_like(layer));
            add_into(&mut g.weight, &part[..wl]);
            add_into(&mut g.bias, &part[wl..]);
        }
        Ok(())
    }

    /// Flattened in slot order with zeros for untouched heads.
    pub fn to_flat(&self, model: &MultiHeadMlp<F>) -> Vec<F> {
        let mut out = Vec::with_capacity(model.parameter_count());
        for g in &self.trunk {
            out.extend_from_slice(&g.weight);
            out.extend_from_slice(&g.bias);
        }
        for (g, layer) in self.heads.iter().zip(&model.heads) {
            match g {
                Some(g) => {
                    out.extend_from_slice(&g.weight);
                    out.extend_from_slice(&g.bias);
                }
                None => out.extend(std::iter::repeat(F::zero()).take(layer.parameter_count())),
            }
        }
        out
    }

    pub fn squared_norm(&self) -> F {
        self.trunk
            .iter()
            .chain(self.heads.iter().flatten())
            .map(|g| {
                g.weight.iter().chain(&g.bias).fold(F::zero(), |acc, &v| acc + v * v)
            })
            .fold(F::zero(), |a, b| a + b)
    }
}

fn add_into<F: Scalar>(dst: &mut [F], src: &[F]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += *b;
    }
}

/// Architecture description used to build models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    /// Output width of each head.
    pub heads: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub init: InitScheme,
}

impl MlpSpec {
    pub fn single_head(input: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self {
            input,
            hidden,
            heads: vec![classes],
            activation: Activation::Relu,
            init: InitScheme::KaimingUniform,
        }
    }
}

impl<F: Scalar> MultiHeadMlp<F> {
    pub fn new(trunk: Vec<DenseLayer<F>>, heads: Vec<DenseLayer<F>>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::invalid("model needs at least one head"));
        }
        for (i, pair) in trunk.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape(
                    format!("trunk layer {}", i + 1),
                    pair[0].outputs(),
                    pair[1].inputs(),
                ));
            }
        }
        for (h, head) in heads.iter().enumerate() {
            if head.activation != Activation::Identity {
                return Err(Error::invalid(format!("head {h} must be linear")));
            }
            if let Some(last) = trunk.last() {
                if last.outputs() != head.inputs() {
                    return Err(Error::shape(format!("head {h} input"), last.outputs(), head.inputs()));
                }
            } else if head.inputs() != heads[0].inputs() {
                return Err(Error::shape(format!("head {h} input"), heads[0].inputs(), head.inputs()));
            }
        }
        Ok(Self {
            trunk,
            heads,
            active_head: 0,
            version: 0,
        })
    }

    pub fn from_spec(spec: &MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.activation.validate()?;
        if spec.input == 0 || spec.hidden.contains(&0) || spec.heads.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut trunk = Vec::with_capacity(spec.hidden.len());
        let mut width = spec.input;
        for &h in &spec.hidden {
            let w = spec.init.weight(h, width, rng);
            trunk.push(DenseLayer::new(w, Tensor::zeros(vec![h]), spec.activation)?);
            width = h;
        }
        let heads = spec
            .heads
            .iter()
            .map(|&k| {
                let w = spec.init.weight(k, width, rng);
                DenseLayer::new(w, Tensor::zeros(vec![k]), Activation::Identity)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(trunk, heads)
    }

    pub fn trunk(&self) -> &[DenseLayer<F>] {
        &self.trunk
    }

    pub fn heads(&self) -> &[DenseLayer<F>] {
        &self.heads
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_width(&self, head: usize) -> usize {
        self.heads[head].outputs()
    }

    pub fn input_width(&self) -> usize {
        self.trunk
            .first()
            .map_or_else(|| self.heads[0].inputs(), |l| l.inputs())
    }

    pub fn active_head(&self) -> usize {
        self.active_head
    }

    pub fn set_active_head(&mut self, head: usize) -> Result<()> {
        self.check_head(head)?;
        self.active_head = head;
        Ok(())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mutable access to a layer; bumps the parameter version.
    pub fn trunk_layer_mut(&mut self, i: usize) -> &mut DenseLayer<F> {
        self.version += 1;
        &mut self.trunk[i]
    }

    pub fn head_mut(&mut self, h: usize) -> &mut DenseLayer<F> {
        self.version += 1;
        &mut self.heads[h]
    }

    fn check_head(&self, head: usize) -> Result<()> {
        if head >= self.heads.len() {
            return Err(Error::invalid(format!(
                "head {head} out of range ({} heads)",
                self.heads.len()
            )));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.heads)
            .map(DenseLayer::parameter_count)
            .sum()
    }

    pub fn slot_count(&self) -> usize {
        2 * (self.trunk.len() + self.heads.len())
    }

    fn layer(&self, i: usize) -> &DenseLayer<F> {
        if i < self.trunk.len() {
            &self.trunk[i]
        } else {
            &self.heads[i - self.trunk.len()]
        }
    }

    pub fn slot(&self, slot: usize) -> &[F] {
        let l = self.layer(slot / 2);
        if slot % 2 == 0 {
            l.weight.data()
        } else {
            l.bias.data()
        }
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut [F] {
        self.version += 1;
        let nt = self.trunk.len();
        let l = if slot / 2 < nt {
            &mut self.trunk[slot / 2]
        } else {
            &mut self.heads[slot / 2 - nt]
        };
        if slot % 2 == 0 {
            l.weight.data_mut()
        } else {
            l.bias.data_mut()
        }
    }

    pub fn params_flat(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for s in 0..self.slot_count() {
            out.extend_from_slice(self.slot(s));
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[F]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::shape("flat parameters", self.parameter_count(), flat.len()));
        }
        let mut offset = 0;
        for s in 0..self.slot_count() {
            let dst = self.slot_mut(s);
            let n = dst.len();
            dst.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Forward pass through the trunk and the given head.
    pub fn forward(&self, batch: &Tensor<F>, head: usize) -> Result<(Tensor<F>, ForwardCache<F>)> {
        self.check_head(head)?;
        if batch.shape().len() != 2 {
            return Err(Error::shape("forward input rank", 2, batch.shape().len()));
        }
        let path: Vec<&DenseLayer<F>> = self.trunk.iter().chain(std::iter::once(&self.heads[head])).collect();
        let mut inputs = Vec::with_capacity(path.len());
        let mut pre = Vec::with_capacity(path.len());
        let mut x = batch.clone();
        for (i, layer) in path.iter().enumerate() {
            if x.cols() != layer.inputs() {
                let name = if i < self.trunk.len() {
                    format!("trunk layer {i}")
                } else {
                    format!("head {head}")
                };
                return Err(Error::shape(name, layer.inputs(), x.cols()));
            }
            let (z, a) = layer.forward(&x);
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("logits"));
        }
        Ok((
            x,
            ForwardCache {
                head,
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Logits only.
    pub fn predict(&self, batch: &Tensor<F>, head: usize) -> Result<Tensor<F>> {
        self.forward(batch, head).map(|(z, _)| z)
    }

    /// Back-propagates `grad_logits` through the cached path.
    pub fn backward(&self, cache: &ForwardCache<F>, grad_logits: &Tensor<F>) -> Result<Gradients<F>> {
        self.backward_impl(cache, grad_logits, false).map(|(g, _)| g)
    }

    /// Like [`backward`](Self::backward), additionally returning for each
    /// batch row the L2 norm of that row's own parameter gradient, i.e. the
    /// gradient of the loss whose row-gradient is `grad_logits[i] * row_scale`.
    pub fn backward_with_example_norms(
        &self,
        cache: &ForwardCache<F>,
        grad_logits: &Tensor<F>,
        row_scale: F,
    ) -> Result<(Gradients<F>, Vec<F>)> {
        let (g, sq) = self.backward_impl(cache, grad_logits, true)?;
        let norms = sq
            .expect("requested")
            .into_iter()
            .map(|s| (s * row_scale * row_scale).sqrt())
            .collect();
        Ok((g, norms))
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<F>,
        grad_logits: &Tensor<F>,
        want_norms: bool,
    ) -> Result<(Gradients<F>, Option<Vec<F>>)> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        self.check_head(cache.head)?;
        if cache.pre.len() != self.trunk.len() + 1 {
            return Err(Error::shape("forward cache layers", self.trunk.len() + 1, cache.pre.len()));
        }
        let out = cache.pre.last().expect("non-empty");
        if grad_logits.shape() != out.shape() {
            return Err(Error::shape(
                "grad_logits",
                format!("{:?}", out.shape()),
                format!("{:?}", grad_logits.shape()),
            ));
        }
        let batch = grad_logits.rows();
        let mut sq_norms = want_norms.then(|| vec![F::zero(); batch]);
        let mut grads = Gradients::zeros(self);
        let n_layers = cache.pre.len();
        // delta holds dL/d(pre-activation) of the current layer.
        let mut delta = grad_logits.data().to_vec();
        for li in (0..n_layers).rev() {
            let layer = if li < self.trunk.len() {
                &self.trunk[li]
            } else {
                &self.heads[cache.head]
            };
            let (din, dout) = (layer.inputs(), layer.outputs());
            if li < n_layers - 1 && layer.activation != Activation::Identity {
                for (d, &z) in delta.iter_mut().zip(cache.pre[li].data()) {
                    *d *= layer.activation.derivative(z);
                }
            }
            let x = &cache.inputs[li];
            if let Some(sq) = sq_norms.as_mut() {
                for (i, s) in sq.iter_mut().enumerate() {
                    let d2 = delta[i * dout..(i + 1) * dout].iter().fold(F::zero(), |a, &v| a + v * v);
                    let x2 = x.row(i).iter().fold(F::zero(), |a, &v| a + v * v);
                    *s += d2 * (x2 + F::one());
                }
            }
            let mut gw = vec![F::zero(); dout * din];
            gemm(dout, batch, din, F::one(), &delta, true, x.data(), false, F::zero(), &mut gw);
            let mut gb = vec![F::zero(); dout];
            for row in delta.chunks(dout) {
                for (b, &d) in gb.iter_mut().zip(row) {
                    *b += d;
                }
            }
            let lg = LayerGrad { weight: gw, bias: gb };
            if li < self.trunk.len() {
                grads.trunk[li] = lg;
            } else {
                grads.heads[cache.head] = Some(lg);
            }
            if li > 0 {
                let mut dx = vec![F::zero(); batch * din];
                gemm(batch, dout, din, F::one(), &delta, false, layer.weight.data(), false, F::zero(), &mut dx);
                delta = dx;
            }
        }
        Ok((grads, sq_norms))
    }

    pub fn cast<G: Scalar>(&self) -> MultiHeadMlp<G> {
        MultiHeadMlp {
            trunk: self.trunk.iter().map(DenseLayer::cast).collect(),
            heads: self.heads.iter().map(DenseLayer::cast).collect(),
            active_head: self.active_head,
            version: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn identity(n: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let model = MultiHeadMlp::<f32>::new(
            vec![DenseLayer::zeros(4, 3, Activation::Relu)],
            vec![DenseLayer::zeros(3, 2, Activation::Identity)],
        )
        .unwrap();
        let x = Tensor::matrix(2, 4, vec![1.0, -2.0, 3.0, 0.5, 9.0, 9.0, 9.0, 9.0]).unwrap();
        let (z, _) = model.forward(&x, 0).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_model_passes_input_through() {
        let l = DenseLayer::new(identity(3), Tensor::zeros(vec![3]), Activation::Identity).unwrap();
        let model = MultiHeadMlp::new(vec![l.clone()], vec![l]).unwrap();
        let x = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, -7.0]).unwrap();
        assert_eq!(model.predict(&x, 0).unwrap(), x);
    }

    #[test]
    fn width_mismatch_names_layer() {
        let mut rng = Rng::seed_from_u64(0);
        let model = MultiHeadMlp::<f32>::from_spec(&MlpSpec::single_head(5, vec![4], 3), &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 6]);
        let err = model.forward(&x, 0).unwrap_err().to_string();
        assert!(err.contains("trunk layer 0"), "{err}");
        assert!(err.contains("expected 5"), "{err}");
        assert!(model.forward(&Tensor::zeros(vec![1, 5]), 1).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut rng = Rng::seed_from_u64(0);
        let mut model = MultiHeadMlp::<f32>::from_spec(&MlpSpec::single_head(3, vec![4], 2), &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 3]);
        let (z, cache) = model.forward(&x, 0).unwrap();
        model.slot_mut(0)[0] += 1.0;
        let g = Tensor::zeros(z.shape().to_vec());
        assert!(matches!(model.backward(&cache, &g), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = Rng::seed_from_u64(9);
        let model = MultiHeadMlp::<f64>::from_spec(&MlpSpec::single_head(3, vec![4, 4], 2), &mut rng).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]).unwrap();
        let (z, cache) = model.forward(&x, 0).unwrap();
        let g = model.backward(&cache, &Tensor::zeros(z.shape().to_vec())).unwrap();
        assert!(g.to_flat(&model).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_regression_gradient_closed_form() {
        // One linear layer, squared loss 1/(2B) sum ||XW^T - Y||^2:
        // dW = (XW^T - Y)^T X / B.
        let w = Tensor::matrix(2, 3, vec![0.5, -0.25, 1.0, 0.0, 2.0, -1.0]).unwrap();
        let head = DenseLayer::new(w.clone(), Tensor::zeros(vec![2]), Activation::Identity).unwrap();
        let model = MultiHeadMlp::new(vec![], vec![head]).unwrap();
        let x = Tensor::matrix(4, 3, vec![1., 2., 3., 0., 1., 0., -1., 0.5, 2., 3., -2., 1.]).unwrap();
        let y = Tensor::matrix(4, 2, vec![1., 0., 0., 1., 2., 2., -1., 0.]).unwrap();
        let (z, cache) = model.forward(&x, 0).unwrap();
        let b = 4.0;
        let resid: Vec<f64> = z.data().iter().zip(y.data()).map(|(a, t)| (a - t) / b).collect();
        let g = model
            .backward(&cache, &Tensor::matrix(4, 2, resid.clone()).unwrap())
            .unwrap();
        let gw = &g.heads[0].as_ref().unwrap().weight;
        for o in 0..2 {
            for i in 0..3 {
                let expect: f64 = (0..4).map(|r| resid[r * 2 + o] * x.row(r)[i]).sum();
                assert!((gw[o * 3 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inactive_heads_receive_no_gradient() {
        let mut rng = Rng::seed_from_u64(2);
        let spec = MlpSpec {
            heads: vec![2, 3],
            ..MlpSpec::single_head(3, vec![4], 2)
        };
        let model = MultiHeadMlp::<f32>::from_spec(&spec, &mut rng).unwrap();
        let x = Tensor::filled(vec![2, 3], 0.5);
        let (z, cache) = model.forward(&x, 1).unwrap();
        assert_eq!(z.shape(), &[2, 3]);
        let g = model.backward(&cache, &Tensor::filled(vec![2, 3], 1.0)).unwrap();
        assert!(g.heads[0].is_none());
        assert!(g.heads[1].is_some());
    }

    #[test]
    fn flat_parameters_round_trip() {
        let mut rng = Rng::seed_from_u64(4);
        let mut model = MultiHeadMlp::<f32>::from_spec(&MlpSpec::single_head(3, vec![5], 2), &mut rng).unwrap();
        let mut p = model.params_flat();
        assert_eq!(p.len(), 3 * 5 + 5 + 5 * 2 + 2);
        p[0] = 42.0;
        model.set_params_flat(&p).unwrap();
        assert_eq!(model.params_flat(), p);
    }
}
