//! Value iteration network: a reward map from the input, then K rounds of
//! `Q = conv(concat(R, V))`, `V = max_channels(Q)`, and an action head on
//! the final Q at the rover's cell. Runs at full input resolution.

use rand::Rng;

use super::head::{self, HeadLayout, Query};
use super::{ModelSpec, Recording};
use crate::netcore::ops::{channel_max, channel_max_backward, concat_channels, split_channels};
use crate::netcore::{
    backward_all, forward_all, Conv2d, Layer, LayerKind, LayerSpec, Linear, Padding, ParamStore,
    Scalar, Tape, Tensor,
};
use crate::Result;

const REWARD_HIDDEN: usize = 20;
const Q_CHANNELS: usize = 10;
/// Shrinks the He-initialised recurrent kernel. At full scale the V -> Q
/// gain exceeds one and K iterations blow the logits up.
const Q_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct VinNet {
    pub reward: Vec<Layer>,
    pub q_conv: Conv2d,
    pub head: Linear,
    pub iterations: usize,
    layout: HeadLayout,
}

impl VinNet {
    pub(crate) fn build<T: Scalar, R: Rng>(
        spec: &ModelSpec,
        params: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let reward = vec![
            Layer::Conv(Conv2d::new(
                params,
                rng,
                "R-hidden",
                spec.channels,
                REWARD_HIDDEN,
                (3, 3),
                1,
                Padding::Same,
            )),
            Layer::Relu("R-hidden.relu".into()),
            Layer::Conv(Conv2d::new(
                params,
                rng,
                "R-out",
                REWARD_HIDDEN,
                1,
                (1, 1),
                1,
                Padding::Same,
            )),
        ];
        let q_conv = Conv2d::new(
            params,
            rng,
            "Q-conv",
            2,
            Q_CHANNELS,
            (3, 3),
            1,
            Padding::Same,
        );
        let w = &mut params.get_mut(q_conv.weight).value;
        *w = w.map(|x| x * T::lit(Q_INIT_SCALE));
        let layout = HeadLayout {
            height: spec.height,
            width: spec.width,
            scale: (1, 1),
            coord_augment: spec.coord_augment,
        };
        let head = Linear::new(params, rng, "Fc-out", layout.width(0, Q_CHANNELS), 8);
        VinNet {
            reward,
            q_conv,
            head,
            iterations: spec.vin_iterations,
            layout,
        }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        input: Tensor<T>,
        queries: &[Query],
        record: bool,
    ) -> Result<(Tensor<T>, Option<Recording<T>>)> {
        let (n_maps, _, h, w) = input.dims4("R-hidden")?;
        let mut tape = record.then(Tape::new);
        let r = forward_all(&self.reward, params, input, tape.as_mut())?;
        let mut v = Tensor::zeros(&[n_maps, 1, h, w]);
        let mut q = None;
        for k in 1..=self.iterations {
            let x = concat_channels(&[&r, &v])?;
            let qk = self.q_conv.forward(params, x, tape.as_mut())?;
            if k < self.iterations {
                let (vk, arg) = channel_max(&qk)?;
                if let Some(t) = tape.as_mut() {
                    t.push_indices(arg);
                }
                v = vk;
            }
            q = Some(qk);
        }
        let q = q.expect("at least one iteration");
        let z = head::gather(&self.layout, None, &q, queries)?;
        let logits = self.head.forward(params, z, tape.as_mut())?;
        let rec = tape.map(|tape| Recording {
            tape,
            queries: queries.to_vec(),
            feature_shapes: vec![q.shape().to_vec()],
        });
        Ok((logits, rec))
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        params: &mut ParamStore<T>,
        mut rec: Recording<T>,
        grad_logits: Tensor<T>,
    ) -> Result<Tensor<T>> {
        let tape = &mut rec.tape;
        let dz = self.head.backward(params, grad_logits, tape)?;
        let q_shape = rec.feature_shapes[0].clone();
        let (_, mut dq) = head::scatter(&self.layout, &dz, None, &q_shape, &rec.queries);
        let (n, h, w) = (q_shape[0], q_shape[2], q_shape[3]);
        let mut dr = Tensor::zeros(&[n, 1, h, w]);
        let mut k = self.iterations;
        loop {
            let dx = self.q_conv.backward(params, dq, tape)?;
            let mut parts = split_channels(&dx, &[1, 1]);
            dr.add_assign(&parts[0]);
            // V_0 is a constant, so the first iteration ends the chain.
            if k == 1 {
                break;
            }
            let arg = tape.pop_indices("Q-max")?;
            dq = channel_max_backward(&q_shape, &arg, &parts.pop().unwrap());
            k -= 1;
        }
        backward_all(&self.reward, params, dr, tape)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self.reward.iter().map(Layer::spec).collect();
        specs.push(LayerSpec {
            name: format!("Q-conv x{}", self.iterations),
            ..self.q_conv.spec()
        });
        specs.push(LayerSpec {
            kernel: Some((Q_CHANNELS, 1, 1)),
            stride: Some(1),
            padding: Some(Padding::Valid),
            ..LayerSpec::simple("Q-max", LayerKind::MaxPool)
        });
        specs.push(self.head.spec());
        specs.push(LayerSpec::simple("S-1", LayerKind::Softmax));
        specs
    }
}
