//! Layers over a shared [`ParamStore`]. A forward pass records what its
//! backward pass needs on a [`Tape`]; backward passes pop in reverse order
//! and accumulate parameter gradients.

use serde::{Deserialize, Serialize};

use super::ops::{self, Padding};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::{Error, Result};

#[derive(Debug)]
enum Saved<T> {
    Tensor(Tensor<T>),
    Indices(Vec<usize>),
}

/// LIFO record of a forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    stack: Vec<Saved<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { stack: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.stack.is_empty()
    }

    pub fn push_tensor(&mut self, t: Tensor<T>) {
        self.stack.push(Saved::Tensor(t));
    }

    pub fn push_indices(&mut self, i: Vec<usize>) {
        self.stack.push(Saved::Indices(i));
    }

    pub fn pop_tensor(&mut self, layer: &str) -> Result<Tensor<T>> {
        match self.stack.pop() {
            Some(Saved::Tensor(t)) => Ok(t),
            Some(Saved::Indices(_)) => Err(Error::Usage(format!(
                "{layer}: backward order does not match the recorded forward pass"
            ))),
            None => Err(Error::Usage(format!(
                "{layer}: backward called without a recorded forward pass"
            ))),
        }
    }

    pub fn pop_indices(&mut self, layer: &str) -> Result<Vec<usize>> {
        match self.stack.pop() {
            Some(Saved::Indices(i)) => Ok(i),
            Some(Saved::Tensor(_)) => Err(Error::Usage(format!(
                "{layer}: backward order does not match the recorded forward pass"
            ))),
            None => Err(Error::Usage(format!(
                "{layer}: backward called without a recorded forward pass"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    MaxPool,
    FullyConnected,
    Relu,
    Residual,
    Softmax,
    Flatten,
    Concat,
}

/// Serializable description of a layer; architecture fingerprints hash a
/// model's list of these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// (count, h, w) for kernels.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kernel: Option<(usize, usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub padding: Option<Padding>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nodes: Option<usize>,
}

impl LayerSpec {
    pub fn simple(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            kernel: None,
            stride: None,
            padding: None,
            nodes: None,
        }
    }

    /// Checks that the fields this kind needs are present and positive.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(format!("{}: {what}", self.name)));
        let kernel_ok = |k: Option<(usize, usize, usize)>| matches!(k, Some((c, h, w)) if c > 0 && h > 0 && w > 0);
        match self.kind {
            LayerKind::Conv | LayerKind::Residual => {
                if !kernel_ok(self.kernel) {
                    return bad("needs a positive kernel");
                }
                if !matches!(self.stride, Some(s) if s > 0) || self.padding.is_none() {
                    return bad("needs stride and padding");
                }
            }
            LayerKind::MaxPool => {
                if !matches!(self.kernel, Some((_, h, w)) if h > 0 && w > 0) {
                    return bad("needs a positive window");
                }
                if !matches!(self.stride, Some(s) if s > 0) || self.padding.is_none() {
                    return bad("needs stride and padding");
                }
            }
            LayerKind::FullyConnected => {
                if !matches!(self.nodes, Some(n) if n > 0) {
                    return bad("needs a positive node count");
                }
            }
            LayerKind::Relu | LayerKind::Softmax | LayerKind::Flatten | LayerKind::Concat => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
}

impl Conv2d {
    /// Registers He-initialised weights and zero bias named `<name>.weight`
    /// and `<name>.bias`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: rand::Rng>(
        params: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Self {
        let weight = params.add_he_uniform(
            format!("{name}.weight"),
            &[out_channels, in_channels, kernel.0, kernel.1],
            in_channels * kernel.0 * kernel.1,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), &[out_channels]);
        Conv2d {
            name: name.to_string(),
            weight,
            bias,
            out_channels,
            in_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: Tensor<T>,
        tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor<T>> {
        let y = ops::conv2d_forward(
            &self.name,
            &x,
            params.value(self.weight),
            params.value(self.bias),
            self.stride,
            self.padding,
        )?;
        if let Some(t) = tape {
            t.push_tensor(x);
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        dy: Tensor<T>,
        tape: &mut Tape<T>,
    ) -> Result<Tensor<T>> {
        let x = tape.pop_tensor(&self.name)?;
        let (w, dw, db) = params.weight_and_grads(self.weight, self.bias);
        ops::conv2d_backward(&self.name, &x, w, &dy, self.stride, self.padding, dw, db)
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            kernel: Some((self.out_channels, self.kernel.0, self.kernel.1)),
            stride: Some(self.stride),
            padding: Some(self.padding),
            ..LayerSpec::simple(&self.name, LayerKind::Conv)
        }
    }
}

#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub name: String,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: rand::Rng>(
        params: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Self {
        let weight = params.add_he_uniform(
            format!("{name}.weight"),
            &[out_features, in_features],
            in_features,
            rng,
        );
        let bias = params.add_zeros(format!("{name}.bias"), &[out_features]);
        Linear {
            name: name.to_string(),
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: Tensor<T>,
        tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor<T>> {
        let y = ops::linear_forward(
            &self.name,
            &x,
            params.value(self.weight),
            params.value(self.bias),
        )?;
        if let Some(t) = tape {
            t.push_tensor(x);
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        dy: Tensor<T>,
        tape: &mut Tape<T>,
    ) -> Result<Tensor<T>> {
        let x = tape.pop_tensor(&self.name)?;
        let (w, dw, db) = params.weight_and_grads(self.weight, self.bias);
        Ok(ops::linear_backward(&x, w, &dy, dw, db))
    }

    pub fn spec(&self) -> LayerSpec {
        LayerSpec {
            nodes: Some(self.out_features),
            ..LayerSpec::simple(&self.name, LayerKind::FullyConnected)
        }
    }
}

/// `relu(x + conv2(relu(conv1(x))))` with 3×3 SAME convolutions.
#[derive(Clone, Debug)]
pub struct Residual {
    pub name: String,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl Residual {
    pub fn new<T: Scalar, R: rand::Rng>(
        params: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Self {
        let conv = |params: &mut ParamStore<T>, rng: &mut R, suffix: &str| {
            Conv2d::new(
                params,
                rng,
                &format!("{name}.{suffix}"),
                channels,
                channels,
                (3, 3),
                1,
                Padding::Same,
            )
        };
        let conv1 = conv(params, rng, "conv1");
        let conv2 = conv(params, rng, "conv2");
        Residual {
            name: name.to_string(),
            conv1,
            conv2,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: Tensor<T>,
        mut tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor<T>> {
        let c = x.dims4(&self.name)?.1;
        if c != self.conv1.in_channels || c != self.conv2.out_channels {
            return Err(Error::dim(
                &self.name,
                format!(
                    "block maps {} channels, input has {c}",
                    self.conv1.in_channels
                ),
            ));
        }
        let h = self.conv1.forward(params, x.clone(), tape.as_deref_mut())?;
        let h = ops::relu_forward(&h);
        if let Some(t) = tape.as_deref_mut() {
            t.push_tensor(h.clone());
        }
        let mut y = self.conv2.forward(params, h, tape.as_deref_mut())?;
        y.add_assign(&x);
        let y = ops::relu_forward(&y);
        if let Some(t) = tape {
            t.push_tensor(y.clone());
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        dy: Tensor<T>,
        tape: &mut Tape<T>,
    ) -> Result<Tensor<T>> {
        let y = tape.pop_tensor(&self.name)?;
        let dsum = ops::relu_backward(&y, &dy);
        let dh = self.conv2.backward(params, dsum.clone(), tape)?;
        let h = tape.pop_tensor(&self.name)?;
        let dh = ops::relu_backward(&h, &dh);
        let mut dx = self.conv1.backward(params, dh, tape)?;
        dx.add_assign(&dsum);
        Ok(dx)
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Conv(Conv2d),
    MaxPool(MaxPool2d),
    Linear(Linear),
    Relu(String),
    Residual(Residual),
    /// NCHW → N×(CHW)
    Flatten(String),
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv(l) => &l.name,
            Layer::MaxPool(l) => &l.name,
            Layer::Linear(l) => &l.name,
            Layer::Residual(l) => &l.name,
            Layer::Relu(n) | Layer::Flatten(n) => n,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x: Tensor<T>,
        tape: Option<&mut Tape<T>>,
    ) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.forward(params, x, tape),
            Layer::Linear(l) => l.forward(params, x, tape),
            Layer::Residual(l) => l.forward(params, x, tape),
            Layer::MaxPool(l) => {
                let (y, arg) = ops::maxpool2d_forward(&l.name, &x, l.kernel, l.stride, l.padding)?;
                if let Some(t) = tape {
                    t.push_indices(x.shape().to_vec());
                    t.push_indices(arg);
                }
                Ok(y)
            }
            Layer::Relu(_) => {
                let y = ops::relu_forward(&x);
                if let Some(t) = tape {
                    t.push_tensor(y.clone());
                }
                Ok(y)
            }
            Layer::Flatten(name) => {
                let shape = x.shape().to_vec();
                let n = *shape
                    .first()
                    .ok_or_else(|| Error::dim(name, "scalar input"))?;
                let rest = x.len() / n.max(1);
                if let Some(t) = tape {
                    t.push_indices(shape);
                }
                x.reshape(&[n, rest])
            }
        }
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        dy: Tensor<T>,
        tape: &mut Tape<T>,
    ) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(l) => l.backward(params, dy, tape),
            Layer::Linear(l) => l.backward(params, dy, tape),
            Layer::Residual(l) => l.backward(params, dy, tape),
            Layer::MaxPool(l) => {
                let arg = tape.pop_indices(&l.name)?;
                let shape = tape.pop_indices(&l.name)?;
                Ok(ops::maxpool2d_backward(&shape, &arg, &dy))
            }
            Layer::Relu(name) => {
                let y = tape.pop_tensor(name)?;
                Ok(ops::relu_backward(&y, &dy))
            }
            Layer::Flatten(name) => {
                let shape = tape.pop_indices(name)?;
                dy.reshape(&shape)
            }
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv(l) => l.spec(),
            Layer::Linear(l) => l.spec(),
            Layer::MaxPool(l) => LayerSpec {
                kernel: Some((1, l.kernel.0, l.kernel.1)),
                stride: Some(l.stride),
                padding: Some(l.padding),
                ..LayerSpec::simple(&l.name, LayerKind::MaxPool)
            },
            Layer::Residual(l) => LayerSpec {
                kernel: Some((l.conv1.out_channels, 3, 3)),
                stride: Some(1),
                padding: Some(Padding::Same),
                ..LayerSpec::simple(&l.name, LayerKind::Residual)
            },
            Layer::Relu(n) => LayerSpec::simple(n, LayerKind::Relu),
            Layer::Flatten(n) => LayerSpec::simple(n, LayerKind::Flatten),
        }
    }
}

/// Runs layers in order.
pub fn forward_all<T: Scalar>(
    layers: &[Layer],
    params: &ParamStore<T>,
    mut x: Tensor<T>,
    mut tape: Option<&mut Tape<T>>,
) -> Result<Tensor<T>> {
    for l in layers {
        x = l.forward(params, x, tape.as_deref_mut())?;
    }
    Ok(x)
}

/// Backward through layers in reverse order.
pub fn backward_all<T: Scalar>(
    layers: &[Layer],
    params: &mut ParamStore<T>,
    mut dy: Tensor<T>,
    tape: &mut Tape<T>,
) -> Result<Tensor<T>> {
    for l in layers.iter().rev() {
        dy = l.backward(params, dy, tape)?;
    }
    Ok(dy)
}
