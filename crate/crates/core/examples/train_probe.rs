//! Trains one architecture on 2000 maps of 16x16 and evaluates every 5 epochs.
//!
//!     cargo run --release --example train_probe -- [arch] [on|off] [epochs] [lr] [clip]

use roverplan::eval::{evaluate, DEFAULT_STARTS_PER_MAP};
use roverplan::gridworld::{build_dataset, generate_map, GridMap};
use roverplan::models::{Arch, Model, ModelSpec};
use roverplan::training::{train_epoch, Hyperparams};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arch: Arch = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(Arch::Dbcnn);
    let coord = args.get(2).map(|s| s == "on").unwrap_or(false);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(10);
    let maps: Vec<GridMap> = (0..2000)
        .map(|i| generate_map(10_000 + i, 16, 16, 0.2).unwrap())
        .collect();
    let ds = build_dataset(maps, 0, 1.0 / 7.0).unwrap();
    let spec = ModelSpec::new(arch, 16, 16, 2)
        .with_coord_augment(coord)
        .with_vin_iterations(20);
    let mut m = Model::build(spec, 0).unwrap();
    let lr: f32 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(0.01);
    let clip_norm: f32 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.0);
    let hyper = Hyperparams {
        epochs,
        learning_rate: lr,
        clip_norm,
        ..Default::default()
    };
    let t = Instant::now();
    for e in 1..=epochs {
        let r = train_epoch(&mut m, &ds, &hyper, e).unwrap();
        println!("{}", r.log_line());
        if e % 5 == 0 || e == epochs {
            let rep = evaluate(&m, &ds, arch.as_str(), 0, DEFAULT_STARTS_PER_MAP, vec![]).unwrap();
            println!(
                "  eval acc_test {:.3} strict {:.3} sr_test {:.3} acc_train {:.3}",
                rep.acc_test, rep.strict_acc_test, rep.sr_test, rep.acc_train
            );
        }
    }
    println!("total {:.1}s", t.elapsed().as_secs_f64());
}
