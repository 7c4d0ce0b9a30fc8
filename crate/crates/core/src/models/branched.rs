//! Reprocessing layers + optional global branch + local branch + action
//! head. With both branches and residual blocks this is the double-branch
//! CNN; the ablations drop branch one and optionally the skip connections.

use rand::Rng;

use super::head::{self, HeadLayout, Query};
use super::{ModelSpec, Recording};
use crate::netcore::{
    backward_all, forward_all, Conv2d, Layer, LayerKind, LayerSpec, Linear, MaxPool2d, Padding,
    ParamStore, Residual, Scalar, Tape, Tensor,
};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchTwoKind {
    Residual,
    /// Each residual block replaced by conv 3×3 + relu.
    Plain,
}

const BRANCH_CHANNELS: usize = 20;
const REPROCESS_CHANNELS: usize = 12;
const FC1_NODES: usize = 192;

#[derive(Clone, Debug)]
pub struct BranchedNet {
    pub reprocess: Vec<Layer>,
    pub branch_one: Option<Vec<Layer>>,
    pub branch_two: Vec<Layer>,
    pub head: Linear,
    layout: HeadLayout,
}

struct Builder<'a, T: Scalar, R: Rng> {
    params: &'a mut ParamStore<T>,
    rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: (usize, usize)) -> Layer {
        Layer::Conv(Conv2d::new(
            self.params,
            self.rng,
            name,
            cin,
            cout,
            k,
            1,
            Padding::Same,
        ))
    }

    fn relu(name: &str) -> Layer {
        Layer::Relu(format!("{name}.relu"))
    }

    fn pool(name: &str, stride: usize) -> Layer {
        Layer::MaxPool(MaxPool2d {
            name: name.into(),
            kernel: (3, 3),
            stride,
            padding: Padding::Same,
        })
    }

    fn res(&mut self, name: &str) -> Layer {
        Layer::Residual(Residual::new(self.params, self.rng, name, BRANCH_CHANNELS))
    }

    fn linear(&mut self, name: &str, fin: usize, fout: usize) -> Linear {
        Linear::new(self.params, self.rng, name, fin, fout)
    }
}

impl BranchedNet {
    pub(crate) fn build<T: Scalar, R: Rng>(
        spec: &ModelSpec,
        params: &mut ParamStore<T>,
        rng: &mut R,
        with_branch_one: bool,
        kind: BranchTwoKind,
    ) -> Self {
        let mut b = Builder { params, rng };
        let d = spec.feature_width;
        let reprocess = vec![
            b.conv("Conv-00", spec.channels, 6, (5, 5)),
            Builder::<T, R>::relu("Conv-00"),
            Builder::<T, R>::pool("Pool-00", 2),
            b.conv("Conv-01", 6, REPROCESS_CHANNELS, (4, 4)),
            Builder::<T, R>::relu("Conv-01"),
            Builder::<T, R>::pool("Pool-01", 2),
        ];
        let (h1, w1) = (spec.height.div_ceil(4), spec.width.div_ceil(4));

        let branch_one = with_branch_one.then(|| {
            // Pool-10 and Pool-11 halve; Pool-12 and Pool-13 keep the size.
            let flat = BRANCH_CHANNELS * h1.div_ceil(2).div_ceil(2) * w1.div_ceil(2).div_ceil(2);
            let fc1 = b.linear("Fc-1", flat, FC1_NODES);
            let fc2 = b.linear("Fc-2", FC1_NODES, d);
            let mut layers = vec![
                b.conv("Conv-10", REPROCESS_CHANNELS, BRANCH_CHANNELS, (5, 5)),
                Builder::<T, R>::relu("Conv-10"),
                Builder::<T, R>::pool("Pool-10", 2),
            ];
            for (res, pool, stride) in [
                ("Res-11", "Pool-11", 2),
                ("Res-12", "Pool-12", 1),
                ("Res-13", "Pool-13", 1),
            ] {
                layers.push(b.res(res));
                layers.push(Builder::<T, R>::pool(pool, stride));
            }
            layers.push(Layer::Flatten("Flatten-1".into()));
            layers.push(Layer::Linear(fc1));
            layers.push(Builder::<T, R>::relu("Fc-1"));
            layers.push(Layer::Linear(fc2));
            layers
        });

        let mut branch_two = vec![
            b.conv("Conv-20", REPROCESS_CHANNELS, BRANCH_CHANNELS, (5, 5)),
            Builder::<T, R>::relu("Conv-20"),
        ];
        for i in 21..=24 {
            match kind {
                BranchTwoKind::Residual => branch_two.push(b.res(&format!("Res-{i}"))),
                BranchTwoKind::Plain => {
                    let name = format!("Plain-{i}");
                    branch_two.push(b.conv(&name, BRANCH_CHANNELS, BRANCH_CHANNELS, (3, 3)));
                    branch_two.push(Builder::<T, R>::relu(&name));
                }
            }
        }
        branch_two.push(b.conv("Conv-21", BRANCH_CHANNELS, d, (3, 3)));

        let layout = HeadLayout {
            height: spec.height,
            width: spec.width,
            scale: spec.downsample,
            coord_augment: spec.coord_augment,
        };
        let global = if with_branch_one { d } else { 0 };
        let head = b.linear("Fc-3", layout.width(global, d), 8);
        BranchedNet {
            reprocess,
            branch_one,
            branch_two,
            head,
            layout,
        }
    }

    /// Intermediate maps of one pass: the reprocessed input I', the branch
    /// one summary (if any) and the branch two local map.
    pub fn features<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        input: Tensor<T>,
    ) -> Result<(Tensor<T>, Option<Tensor<T>>, Tensor<T>)> {
        let features = forward_all(&self.reprocess, params, input, None)?;
        let global = match &self.branch_one {
            Some(b1) => Some(forward_all(b1, params, features.clone(), None)?),
            None => None,
        };
        let local = forward_all(&self.branch_two, params, features.clone(), None)?;
        Ok((features, global, local))
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        input: Tensor<T>,
        queries: &[Query],
        record: bool,
    ) -> Result<(Tensor<T>, Option<Recording<T>>)> {
        let mut tape = record.then(Tape::new);
        let features = forward_all(&self.reprocess, params, input, tape.as_mut())?;
        let global = match &self.branch_one {
            Some(b1) => Some(forward_all(b1, params, features.clone(), tape.as_mut())?),
            None => None,
        };
        let local = forward_all(&self.branch_two, params, features, tape.as_mut())?;
        let z = head::gather(&self.layout, global.as_ref(), &local, queries)?;
        let logits = self.head.forward(params, z, tape.as_mut())?;
        let rec = tape.map(|tape| {
            let mut feature_shapes = vec![local.shape().to_vec()];
            if let Some(g) = &global {
                feature_shapes.push(g.shape().to_vec());
            }
            Recording {
                tape,
                queries: queries.to_vec(),
                feature_shapes,
            }
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
        let local_shape = &rec.feature_shapes[0];
        let global_shape = rec.feature_shapes.get(1).map(Vec::as_slice);
        let (dglobal, dlocal) =
            head::scatter(&self.layout, &dz, global_shape, local_shape, &rec.queries);
        let mut dfeat = backward_all(&self.branch_two, params, dlocal, tape)?;
        if let (Some(b1), Some(dg)) = (&self.branch_one, dglobal) {
            let d1 = backward_all(b1, params, dg, tape)?;
            dfeat.add_assign(&d1);
        }
        backward_all(&self.reprocess, params, dfeat, tape)
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs: Vec<LayerSpec> = self.reprocess.iter().map(Layer::spec).collect();
        if let Some(b1) = &self.branch_one {
            specs.extend(b1.iter().map(Layer::spec));
        }
        specs.extend(self.branch_two.iter().map(Layer::spec));
        if self.branch_one.is_some() {
            specs.push(LayerSpec::simple("Concat-3", LayerKind::Concat));
        }
        specs.push(self.head.spec());
        specs.push(LayerSpec::simple("S-1", LayerKind::Softmax));
        specs
    }
}
