//! Shared oracles for the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roverplan::netcore::ops;
use roverplan::netcore::{
    softmax_xent_logit_grad, xent_l2_loss, Conv2d, L2Mode, Layer, Linear, MaxPool2d, Padding,
    ParamStore, Residual, Tape, Tensor,
};

pub const EPS: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

/// Worst relative error seen for one layer over several random shapes.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub layer: &'static str,
    pub shapes: usize,
    pub checks: usize,
    pub max_rel: f64,
}

impl GradReport {
    fn new(layer: &'static str) -> Self {
        GradReport {
            layer,
            shapes: 0,
            checks: 0,
            max_rel: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        self.max_rel = self.max_rel.max((analytic - numeric).abs() / denom);
        self.checks += 1;
    }

    pub fn passed(&self) -> bool {
        self.shapes >= 5 && self.max_rel < TOLERANCE
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values with magnitude in [0.1, 1] so relu kinks stay out of reach of the
/// finite-difference step.
fn off_kink_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks d(⟨w, f(x)⟩)/dx and /dparams of a layer by central differences.
fn check_layer(
    report: &mut GradReport,
    layer: &Layer,
    params: &mut ParamStore<f64>,
    x: Tensor<f64>,
    rng: &mut impl Rng,
) {
    let objective = |params: &ParamStore<f64>, x: Tensor<f64>, w: &Tensor<f64>| {
        dot(&layer.forward(params, x, None).unwrap(), w)
    };
    let mut tape = Tape::new();
    let y = layer.forward(params, x.clone(), Some(&mut tape)).unwrap();
    let w = random_tensor(rng, y.shape());
    params.zero_grad();
    let dx = layer.backward(params, w.clone(), &mut tape).unwrap();
    assert!(tape.is_empty(), "{} left entries on the tape", layer.name());

    for i in 0..x.len() {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data_mut()[i] += EPS;
        minus.data_mut()[i] -= EPS;
        let numeric = (objective(params, plus, &w) - objective(params, minus, &w)) / (2.0 * EPS);
        report.record(dx.data()[i], numeric);
    }
    let ids: Vec<_> = params
        .iter()
        .map(|p| params.find(&p.name).unwrap())
        .collect();
    for id in ids {
        for i in 0..params.value(id).len() {
            let analytic = params.get(id).grad.data()[i];
            let mut plus = params.clone();
            plus.get_mut(id).value.data_mut()[i] += EPS;
            let mut minus = params.clone();
            minus.get_mut(id).value.data_mut()[i] -= EPS;
            let numeric =
                (objective(&plus, x.clone(), &w) - objective(&minus, x.clone(), &w)) / (2.0 * EPS);
            report.record(analytic, numeric);
        }
    }
    report.shapes += 1;
}

/// Checks a tensor function with a hand-written backward.
fn check_function(
    report: &mut GradReport,
    x: &Tensor<f64>,
    rng: &mut impl Rng,
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    df: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
) {
    let y = f(x);
    let w = random_tensor(rng, y.shape());
    let dx = df(x, &w);
    for i in 0..x.len() {
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus.data_mut()[i] += EPS;
        minus.data_mut()[i] -= EPS;
        let numeric = (dot(&f(&plus), &w) - dot(&f(&minus), &w)) / (2.0 * EPS);
        report.record(dx.data()[i], numeric);
    }
    report.shapes += 1;
}

const TRIALS: usize = 6;

fn padding(rng: &mut impl Rng) -> Padding {
    if rng.gen_bool(0.5) {
        Padding::Same
    } else {
        Padding::Valid
    }
}

pub fn check_all_layers(seed: u64) -> Vec<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let mut r = GradReport::new("conv");
    for _ in 0..TRIALS {
        let (cin, cout) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let k = (rng.gen_range(1..6), rng.gen_range(1..6));
        let (h, w) = (rng.gen_range(k.0.max(3)..9), rng.gen_range(k.1.max(3)..9));
        let mut params = ParamStore::new();
        let pad = padding(&mut rng);
        let stride = rng.gen_range(1..4);
        let conv = Conv2d::new(&mut params, &mut rng, "conv", cin, cout, k, stride, pad);
        // Nonzero bias so its gradient is exercised away from the origin.
        params.get_mut(conv.bias).value = random_tensor(&mut rng, &[cout]);
        let x = {
            let shape = [rng.gen_range(1..3), cin, h, w];
            random_tensor(&mut rng, &shape)
        };
        check_layer(&mut r, &Layer::Conv(conv), &mut params, x, &mut rng);
    }
    reports.push(r);

    let mut r = GradReport::new("maxpool");
    for _ in 0..TRIALS {
        let k = rng.gen_range(2..4);
        let pool = MaxPool2d {
            name: "pool".into(),
            kernel: (k, k),
            stride: rng.gen_range(1..3),
            padding: padding(&mut rng),
        };
        let x = {
            let shape = [
                rng.gen_range(1..3),
                rng.gen_range(1..4),
                rng.gen_range(3..8),
                rng.gen_range(3..8),
            ];
            random_tensor(&mut rng, &shape)
        };
        check_layer(
            &mut r,
            &Layer::MaxPool(pool),
            &mut ParamStore::new(),
            x,
            &mut rng,
        );
    }
    reports.push(r);

    let mut r = GradReport::new("fullyconnected");
    for _ in 0..TRIALS {
        let (fin, fout) = (rng.gen_range(1..12), rng.gen_range(1..10));
        let mut params = ParamStore::new();
        let fc = Linear::new(&mut params, &mut rng, "fc", fin, fout);
        let x = {
            let shape = [rng.gen_range(1..5), fin];
            random_tensor(&mut rng, &shape)
        };
        check_layer(&mut r, &Layer::Linear(fc), &mut params, x, &mut rng);
    }
    reports.push(r);

    let mut r = GradReport::new("relu");
    for _ in 0..TRIALS {
        let x = {
            let shape = [
                rng.gen_range(1..3),
                rng.gen_range(1..4),
                rng.gen_range(1..6),
                rng.gen_range(1..6),
            ];
            off_kink_tensor(&mut rng, &shape)
        };
        check_layer(
            &mut r,
            &Layer::Relu("relu".into()),
            &mut ParamStore::new(),
            x,
            &mut rng,
        );
    }
    reports.push(r);

    let mut r = GradReport::new("residual");
    for _ in 0..TRIALS {
        let ch = rng.gen_range(1..4);
        let mut params = ParamStore::new();
        let res = Residual::new(&mut params, &mut rng, "res", ch);
        let x = {
            let shape = [
                rng.gen_range(1..3),
                ch,
                rng.gen_range(2..6),
                rng.gen_range(2..6),
            ];
            random_tensor(&mut rng, &shape)
        };
        check_layer(&mut r, &Layer::Residual(res), &mut params, x, &mut rng);
    }
    reports.push(r);

    let mut r = GradReport::new("flatten");
    for _ in 0..TRIALS {
        let x = {
            let shape = [
                rng.gen_range(1..3),
                rng.gen_range(1..4),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
            ];
            random_tensor(&mut rng, &shape)
        };
        check_layer(
            &mut r,
            &Layer::Flatten("flat".into()),
            &mut ParamStore::new(),
            x,
            &mut rng,
        );
    }
    reports.push(r);

    let mut r = GradReport::new("softmax");
    for _ in 0..TRIALS {
        let x = {
            let shape = [rng.gen_range(1..5), rng.gen_range(2..10)];
            random_tensor(&mut rng, &shape)
        };
        check_function(
            &mut r,
            &x,
            &mut rng,
            |x| ops::softmax(x).unwrap(),
            |x, w| ops::softmax_backward(&ops::softmax(x).unwrap(), w),
        );
    }
    reports.push(r);

    let mut r = GradReport::new("channel_max");
    for _ in 0..TRIALS {
        let x = {
            let shape = [
                rng.gen_range(1..3),
                rng.gen_range(1..6),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
            ];
            random_tensor(&mut rng, &shape)
        };
        check_function(
            &mut r,
            &x,
            &mut rng,
            |x| ops::channel_max(x).unwrap().0,
            |x, w| ops::channel_max_backward(x.shape(), &ops::channel_max(x).unwrap().1, w),
        );
    }
    reports.push(r);

    let mut r = GradReport::new("concat");
    for _ in 0..TRIALS {
        let (n, h, w) = (
            rng.gen_range(1..3),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
        );
        let (ca, cb) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let x = random_tensor(&mut rng, &[n, ca + cb, h, w]);
        // f(x) = concat(split(x)) exercises both directions against each other.
        check_function(
            &mut r,
            &x,
            &mut rng,
            |x| {
                let parts = ops::split_channels(x, &[ca, cb]);
                ops::concat_channels(&[&parts[1], &parts[0]]).unwrap()
            },
            |_, w| {
                let parts = ops::split_channels(w, &[cb, ca]);
                ops::concat_channels(&[&parts[1], &parts[0]]).unwrap()
            },
        );
    }
    reports.push(r);

    let mut r = GradReport::new("xent_l2_loss");
    for t in 0..TRIALS {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..9));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let lambda = rng.gen_range(0.0..0.5);
        let mode = if t % 2 == 0 {
            L2Mode::Squared
        } else {
            L2Mode::Norm
        };
        let mut params = ParamStore::new();
        let id = params.add("w", {
            let shape = [rng.gen_range(1..4), 3];
            random_tensor(&mut rng, &shape)
        });
        let logits = random_tensor(&mut rng, &[n, k]);
        let loss_of = |params: &mut ParamStore<f64>, logits: &Tensor<f64>| {
            let probs = ops::softmax(logits).unwrap();
            xent_l2_loss(&probs, &labels, params, lambda, mode)
                .unwrap()
                .loss
        };
        params.zero_grad();
        let probs = ops::softmax(&logits).unwrap();
        let out = xent_l2_loss(&probs, &labels, &mut params, lambda, mode).unwrap();
        let via_probs = ops::softmax_backward(&probs, &out.grad_probs);
        let direct = softmax_xent_logit_grad(&probs, &labels);
        for i in 0..logits.len() {
            let (mut plus, mut minus) = (logits.clone(), logits.clone());
            plus.data_mut()[i] += EPS;
            minus.data_mut()[i] -= EPS;
            let numeric = (loss_of(&mut params.clone(), &plus)
                - loss_of(&mut params.clone(), &minus))
                / (2.0 * EPS);
            r.record(via_probs.data()[i], numeric);
            r.record(direct.data()[i], numeric);
        }
        for i in 0..params.value(id).len() {
            let analytic = params.get(id).grad.data()[i];
            let mut plus = params.clone();
            plus.get_mut(id).value.data_mut()[i] += EPS;
            let mut minus = params.clone();
            minus.get_mut(id).value.data_mut()[i] -= EPS;
            let numeric =
                (loss_of(&mut plus, &logits) - loss_of(&mut minus, &logits)) / (2.0 * EPS);
            r.record(analytic, numeric);
        }
        r.shapes += 1;
    }
    reports.push(r);

    reports
}

use roverplan::gridworld::{Action, GridMap, Pos};

/// Shortest step counts to the goal by exhaustive depth-first enumeration of
/// simple paths, pruned only when a path is no shorter than one already seen
/// through the same cell. With `corner_cut` off, a diagonal move also needs
/// both orthogonal neighbours free.
pub fn enumerate_distances(map: &GridMap, corner_cut: bool) -> Vec<Option<usize>> {
    let (h, w) = (map.height(), map.width());
    let free = |r: isize, c: isize| {
        r >= 0
            && c >= 0
            && (r as usize) < h
            && (c as usize) < w
            && map.is_free(Pos::new(r as usize, c as usize))
    };
    let moves = |p: Pos| -> Vec<Pos> {
        let (r, c) = (p.row as isize, p.col as isize);
        let mut out = Vec::new();
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                    continue;
                }
                if !corner_cut && dr != 0 && dc != 0 && !(free(r + dr, c) && free(r, c + dc)) {
                    continue;
                }
                out.push(Pos::new((r + dr) as usize, (c + dc) as usize));
            }
        }
        out
    };
    // Paths are enumerated outward from the goal; moves are symmetric.
    let mut best = vec![usize::MAX; h * w];
    let mut on_path = vec![false; h * w];
    fn dfs(
        p: Pos,
        depth: usize,
        w: usize,
        best: &mut [usize],
        on_path: &mut [bool],
        moves: &dyn Fn(Pos) -> Vec<Pos>,
    ) {
        let i = p.row * w + p.col;
        if depth >= best[i] || on_path[i] {
            return;
        }
        best[i] = depth;
        on_path[i] = true;
        for n in moves(p) {
            dfs(n, depth + 1, w, best, on_path, moves);
        }
        on_path[i] = false;
    }
    dfs(map.goal(), 0, w, &mut best, &mut on_path, &moves);
    best.into_iter()
        .enumerate()
        .map(|(i, d)| (d != usize::MAX && map.is_free(Pos::new(i / w, i % w))).then_some(d))
        .collect()
}

/// Actions that step onto a cell exactly one move closer to the goal.
pub fn oracle_optimal_set(map: &GridMap, dist: &[Option<usize>], p: Pos) -> Vec<Action> {
    let here = match dist[map.index(p)] {
        Some(d) if d > 0 => d,
        _ => return Vec::new(),
    };
    Action::ALL
        .iter()
        .copied()
        .filter(|&a| {
            let (dr, dc) = a.displacement();
            let (r, c) = (p.row as isize + dr, p.col as isize + dc);
            if r < 0 || c < 0 || r as usize >= map.height() || c as usize >= map.width() {
                return false;
            }
            let n = Pos::new(r as usize, c as usize);
            map.is_free(n) && dist[map.index(n)] == Some(here - 1)
        })
        .collect()
}
