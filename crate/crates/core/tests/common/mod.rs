//! Shared helpers: central-difference gradient checks and the desk-scale
//! configuration used by the long-running tests.
#![allow(dead_code)]

use handpose::autodiff::{NormGrad, ParamStore, Session, Tape, Tensor, Var};
use handpose::discriminator::{CriticDims, CriticSources, MultiSourceCritic};
use handpose::graphnet::{build_hand_graph, GraphResBlock, SkeletonGraph};
use handpose::handmodel::render::GRID_CELLS;
use handpose::handmodel::{hand_model_op, SkeletonTemplate, NUM_JOINTS, NUM_PARAMS};
use handpose::losses::batched;
use handpose::losses::LossWeights;
use handpose::pipeline::{Model, TrainConfig};
use handpose::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PRIMITIVE_TOL: f64 = 1e-5;
pub const COMPOSITION_TOL: f64 = 1e-4;
pub const INSTANCES: usize = 10;

/// Value and analytic gradient at a point.
pub type Eval<'a> = dyn Fn(&Tensor) -> (f64, Tensor) + 'a;

/// Norm-wise relative error `‖g − ĝ‖ / max(‖g‖, ‖ĝ‖)` between the analytic
/// gradient and a central difference with step `h`.
pub fn rel_error(eval: &Eval, x: &Tensor, h: f64) -> f64 {
    let (_, g) = eval(x);
    let mut num = vec![0.0; x.len()];
    for (i, n) in num.iter_mut().enumerate() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        *n = (eval(&xp).0 - eval(&xm).0) / (2.0 * h);
    }
    let diff: f64 = g.data().iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = g.data().iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = num.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-300)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Like [`random`] but every entry is at least `gap` away from zero.
pub fn random_off_zero(shape: &[usize], rng: &mut ChaCha8Rng, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(gap..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Fixed projection weights so that a tensor-valued op reduces to a scalar
/// with a nontrivial gradient.
fn probe(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i as f64 + 1.0) * 0.618_033_988_75).fract() - 0.4).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Evaluates `sum(op(x) ⊙ probe)` and its gradient w.r.t. `x`.
pub fn tape_eval(op: impl Fn(&mut Tape, Var) -> Result<Var>) -> impl Fn(&Tensor) -> (f64, Tensor) {
    move |x: &Tensor| {
        let mut t = Tape::new();
        let xv = t.param(x).unwrap();
        let y = op(&mut t, xv).unwrap();
        let shape = t.value(y).shape().to_vec();
        let p = t.constant(probe(&shape)).unwrap();
        let m = t.mul(y, p).unwrap();
        let s = t.sum(m).unwrap();
        let value = t.value(s).item();
        t.backward(s).unwrap();
        let g = t.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));
        (value, g)
    }
}

/// One gradient-check group: worst error over its instances.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub instances: usize,
    pub worst: f64,
    pub tol: f64,
    pub seconds: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn group(name: &str, tol: f64, h: f64, mut inst: impl FnMut(&mut ChaCha8Rng) -> (Box<Eval<'static>>, Tensor)) -> Check {
    let start = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let mut r = rng(1000 + i as u64);
        let (eval, x) = inst(&mut r);
        worst = worst.max(rel_error(&*eval, &x, h));
    }
    Check {
        name: name.into(),
        instances: INSTANCES,
        worst,
        tol,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn boxed(f: impl Fn(&Tensor) -> (f64, Tensor) + 'static) -> Box<Eval<'static>> {
    Box::new(f)
}

/// Every tape primitive, each input checked separately.
pub fn primitive_checks() -> Vec<Check> {
    let tol = PRIMITIVE_TOL;
    let h = 1e-6;
    let graph = build_hand_graph();
    let prop = graph.propagation_map().clone();
    let inc = graph.incidence_map().clone();
    let mut out = Vec::new();

    out.push(group("matmul/lhs", tol, h, |r| {
        let b = random(&[4, 3], r, -1.0, 1.0);
        (boxed(tape_eval(move |t, x| {
            let bv = t.constant(b.clone())?;
            t.matmul(x, bv)
        })), random(&[5, 4], r, -1.0, 1.0))
    }));
    out.push(group("matmul/rhs", tol, h, |r| {
        let a = random(&[5, 4], r, -1.0, 1.0);
        (boxed(tape_eval(move |t, x| {
            let av = t.constant(a.clone())?;
            t.matmul(av, x)
        })), random(&[4, 3], r, -1.0, 1.0))
    }));
    out.push(group("add_bias/input", tol, h, |r| {
        let b = random(&[3], r, -1.0, 1.0);
        (boxed(tape_eval(move |t, x| {
            let bv = t.constant(b.clone())?;
            t.add_bias(x, bv)
        })), random(&[4, 3], r, -1.0, 1.0))
    }));
    out.push(group("add_bias/bias", tol, h, |r| {
        let a = random(&[4, 3], r, -1.0, 1.0);
        (boxed(tape_eval(move |t, x| {
            let av = t.constant(a.clone())?;
            t.add_bias(av, x)
        })), random(&[3], r, -1.0, 1.0))
    }));
    for (name, which) in [("add", 0), ("sub/lhs", 1), ("sub/rhs", 2), ("mul/lhs", 3), ("mul/rhs", 4)] {
        out.push(group(name, tol, h, move |r| {
            let o = random(&[3, 4], r, -1.0, 1.0);
            (boxed(tape_eval(move |t, x| {
                let ov = t.constant(o.clone())?;
                match which {
                    0 => t.add(x, ov),
                    1 => t.sub(x, ov),
                    2 => t.sub(ov, x),
                    3 => t.mul(x, ov),
                    _ => t.mul(ov, x),
                }
            })), random(&[3, 4], r, -1.0, 1.0))
        }));
    }
    out.push(group("scale", tol, h, |r| {
        let c: f64 = r.gen_range(-3.0..3.0);
        (boxed(tape_eval(move |t, x| t.scale(x, c))), random(&[3, 4], r, -1.0, 1.0))
    }));
    out.push(group("relu", tol, h, |r| {
        (boxed(tape_eval(|t, x| t.relu(x))), random_off_zero(&[3, 4], r, 1e-3))
    }));
    out.push(group("abs", tol, h, |r| {
        (boxed(tape_eval(|t, x| t.abs(x))), random_off_zero(&[3, 4], r, 1e-3))
    }));
    out.push(group("concat_cols/lhs", tol, h, |r| {
        let o = random(&[3, 2], r, -1.0, 1.0);
        (boxed(tape_eval(move |t, x| {
            let ov = t.constant(o.clone())?;
            t.concat_cols(x, ov)
        })), random(&[3, 4], r, -1.0, 1.0))
    }));
    out.push(group("concat_cols/rhs", tol, h, |r| {
        let o = random(&[3, 4], r, -1.0, 1.0);
        (boxed(tape_eval(move |t, x| {
            let ov = t.constant(o.clone())?;
            t.concat_cols(ov, x)
        })), random(&[3, 2], r, -1.0, 1.0))
    }));
    out.push(group("sum", tol, h, |r| (boxed(tape_eval(|t, x| t.sum(x))), random(&[3, 4], r, -1.0, 1.0))));
    out.push(group("mean", tol, h, |r| (boxed(tape_eval(|t, x| t.mean(x))), random(&[3, 4], r, -1.0, 1.0))));
    out.push(group("l2norm_rows", tol, h, |r| {
        (boxed(tape_eval(|t, x| t.l2norm_rows(x, NormGrad::Strict))), random(&[5, 3], r, -1.0, 1.0))
    }));
    out.push(group("normalize_rows", tol, h, |r| {
        (boxed(tape_eval(|t, x| t.normalize_rows(x, 1e-9))), random(&[5, 3], r, -1.0, 1.0))
    }));
    out.push(group("layer_norm/input", tol, h, |r| {
        let g = random(&[6], r, 0.5, 1.5);
        let b = random(&[6], r, -0.5, 0.5);
        (boxed(tape_eval(move |t, x| {
            let gv = t.constant(g.clone())?;
            let bv = t.constant(b.clone())?;
            t.layer_norm(x, gv, bv)
        })), random(&[4, 6], r, -2.0, 2.0))
    }));
    out.push(group("layer_norm/gain", tol, h, |r| {
        let a = random(&[4, 6], r, -2.0, 2.0);
        let b = random(&[6], r, -0.5, 0.5);
        (boxed(tape_eval(move |t, x| {
            let av = t.constant(a.clone())?;
            let bv = t.constant(b.clone())?;
            t.layer_norm(av, x, bv)
        })), random(&[6], r, 0.5, 1.5))
    }));
    out.push(group("layer_norm/bias", tol, h, |r| {
        let a = random(&[4, 6], r, -2.0, 2.0);
        let g = random(&[6], r, 0.5, 1.5);
        (boxed(tape_eval(move |t, x| {
            let av = t.constant(a.clone())?;
            let gv = t.constant(g.clone())?;
            t.layer_norm(av, gv, x)
        })), random(&[6], r, -0.5, 0.5))
    }));
    let p2 = prop.clone();
    out.push(group("block_map/propagation", tol, h, move |r| {
        let m = p2.clone();
        (boxed(tape_eval(move |t, x| t.block_map(x, &m))), random(&[2 * NUM_JOINTS, 3], r, -1.0, 1.0))
    }));
    out.push(group("block_map/incidence", tol, h, move |r| {
        let m = inc.clone();
        (boxed(tape_eval(move |t, x| t.block_map(x, &m))), random(&[2 * NUM_JOINTS, 3], r, -1.0, 1.0))
    }));
    out.push(group("reshape", tol, h, |r| {
        (boxed(tape_eval(|t, x| t.reshape(x, &[2, 6]))), random(&[3, 4], r, -1.0, 1.0))
    }));
    out.push(group("select_cols", tol, h, |r| {
        (boxed(tape_eval(|t, x| t.select_cols(x, &[2, 0, 2]))), random(&[3, 4], r, -1.0, 1.0))
    }));
    out.push(group("row_jacobian/hand_model", tol, 1e-6, |r| {
        let template = SkeletonTemplate::default();
        (boxed(tape_eval(move |t, x| hand_model_op(t, x, &template))), random(&[2, NUM_PARAMS], r, -0.5, 0.5))
    }));
    out
}

fn random_pose(rng: &mut ChaCha8Rng, batch: usize, jitter: f64) -> Tensor {
    let rest = SkeletonTemplate::default().rest_pose();
    let mut data = Vec::with_capacity(batch * 3 * NUM_JOINTS);
    for _ in 0..batch {
        for j in rest.iter() {
            for &v in j {
                data.push(v + rng.gen_range(-jitter..jitter));
            }
        }
    }
    Tensor::new(vec![batch, 3 * NUM_JOINTS], data).unwrap()
}

fn targets_for(gt: &Tensor, graph: &SkeletonGraph) -> batched::Targets {
    let poses: Vec<_> = (0..gt.rows())
        .map(|r| handpose::handmodel::Pose3D::from_flat(gt.row(r)).unwrap())
        .collect();
    let refs: Vec<_> = poses.iter().collect();
    batched::Targets::new(&refs, graph).unwrap()
}

/// Losses, the residual block, the critic and the full generator.
pub fn composition_checks() -> Vec<Check> {
    let tol = COMPOSITION_TOL;
    let mut out = Vec::new();

    type LossFn = fn(&mut Tape, Var, &batched::Targets, &SkeletonGraph) -> Result<Var>;
    let losses: [(&str, LossFn); 4] = [
        ("loss/pose", |t, p, g, _| {
            let gt = t.constant(g.pose.clone())?;
            batched::pose(t, p, gt)
        }),
        ("loss/proj", |t, p, g, _| {
            let gt = t.constant(g.pose2d.clone())?;
            batched::proj(t, p, gt)
        }),
        ("loss/len", |t, p, g, graph| {
            let gt = t.constant(g.bone_lengths.clone())?;
            batched::len(t, p, gt, graph)
        }),
        ("loss/dir", |t, p, g, graph| {
            let gt = t.constant(g.bone_units.clone())?;
            batched::dir(t, p, gt, graph)
        }),
    ];
    for (name, f) in losses {
        out.push(group(name, tol, 1e-5, move |r| {
            let graph = build_hand_graph();
            let gt = random_pose(r, 3, 15.0);
            // Resample predictions until no bone sits at the |·| kink of
            // the length loss.
            let x = loop {
                let x = random_pose(r, 3, 15.0);
                let lengths = |p: &Tensor| -> Vec<f64> {
                    (0..p.rows())
                        .flat_map(|b| {
                            let pose = handpose::handmodel::Pose3D::from_flat(p.row(b)).unwrap();
                            handpose::losses::bone_vectors(&pose, &graph)
                                .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
                        })
                        .collect()
                };
                if lengths(&x).iter().zip(lengths(&gt)).all(|(a, b)| (a - b).abs() > 1e-6) {
                    break x;
                }
            };
            let targets = targets_for(&gt, &graph);
            let eval = move |p: &Tensor| {
                let mut t = Tape::new();
                let pv = t.param(p).unwrap();
                let l = f(&mut t, pv, &targets, &graph).unwrap();
                let v = t.value(l).item();
                t.backward(l).unwrap();
                (v, t.grad(pv).unwrap().clone())
            };
            (boxed(eval), x)
        }));
    }
    out.push(group("loss/total", tol, 1e-5, |r| {
        let graph = build_hand_graph();
        let gt = random_pose(r, 2, 15.0);
        let x = random_pose(r, 2, 15.0);
        let targets = targets_for(&gt, &graph);
        let eval = move |p: &Tensor| {
            let mut t = Tape::new();
            let pv = t.param(p).unwrap();
            let l = batched::supervised(&mut t, pv, &targets, &LossWeights::default(), &graph).unwrap();
            let v = t.value(l).item();
            t.backward(l).unwrap();
            (v, t.grad(pv).unwrap().clone())
        };
        (boxed(eval), x)
    }));

    out.push(group("graph_res_block/input", tol, 1e-6, |r| {
        let graph = build_hand_graph();
        let mut store = ParamStore::new();
        let block = GraphResBlock::new(&mut store, "b", 5, r);
        let x = random(&[2 * NUM_JOINTS, 5], r, -1.0, 1.0);
        let eval = move |xin: &Tensor| {
            let mut s = Session::new(&store);
            let xv = s.tape.param(xin).unwrap();
            let y = block.forward(&mut s, xv, &graph).unwrap();
            let shape = s.tape.value(y).shape().to_vec();
            let p = s.tape.constant(probe(&shape)).unwrap();
            let m = s.tape.mul(y, p).unwrap();
            let l = s.tape.sum(m).unwrap();
            let v = s.tape.value(l).item();
            s.backward(l).unwrap();
            (v, s.tape.grad(xv).unwrap().clone())
        };
        (boxed(eval), x)
    }));
    out.push(group("graph_res_block/weights", tol, 1e-6, |r| {
        let graph = build_hand_graph();
        let mut store = ParamStore::new();
        let block = GraphResBlock::new(&mut store, "b", 5, r);
        let x = random(&[2 * NUM_JOINTS, 5], r, -1.0, 1.0);
        let id = block.g1.weight;
        let w0 = store.get(id).clone();
        let store = std::cell::RefCell::new(store);
        let eval = move |w: &Tensor| {
            *store.borrow_mut().get_mut(id) = w.clone();
            let st = store.borrow();
            let mut s = Session::new(&st);
            let xv = s.tape.constant(x.clone()).unwrap();
            let y = block.forward(&mut s, xv, &graph).unwrap();
            let shape = s.tape.value(y).shape().to_vec();
            let p = s.tape.constant(probe(&shape)).unwrap();
            let m = s.tape.mul(y, p).unwrap();
            let l = s.tape.sum(m).unwrap();
            let v = s.tape.value(l).item();
            s.backward(l).unwrap();
            let g = s.grads().into_iter().find(|(i, _)| *i == id).unwrap().1;
            (v, g)
        };
        (boxed(eval), w0)
    }));

    for gram in [false, true] {
        let name = if gram { "critic/pose (gram)" } else { "critic/pose" };
        out.push(group(name, tol, 1e-5, move |r| {
            let graph = build_hand_graph();
            let mut store = ParamStore::new();
            let dims = CriticDims {
                image_hidden: 16,
                image_out: 8,
                head_hidden: 16,
                gram,
                ..CriticDims::default()
            };
            let mut critic = MultiSourceCritic::new(&mut store, CriticSources::Multi, dims, r);
            critic.warm_up_spectral(&store, 5);
            let images = random(&[2, GRID_CELLS], r, 0.0, 1.0);
            let x = random_pose(r, 2, 20.0);
            let eval = move |p: &Tensor| {
                let mut s = Session::new(&store);
                s.freeze(|_| true);
                let iv = s.tape.constant(images.clone()).unwrap();
                let pv = s.tape.param(p).unwrap();
                let score = critic.criticize(&mut s, iv, pv, &graph).unwrap();
                let l = s.tape.sum(score).unwrap();
                let v = s.tape.value(l).item();
                s.backward(l).unwrap();
                (v, s.tape.grad(pv).unwrap().clone())
            };
            (boxed(eval), x)
        }));
    }

    // Bias vectors keep the coordinate count small; each still sits
    // upstream of the whole chain it names.
    for param in [
        "hand.encoder.fc2.bias",
        "hand.decoder.bias",
        "refine.feature.fc2.bias",
        "refine.gcn.block0.g1.weight",
        "refine.gcn.input.bias",
    ] {
        out.push(group(&format!("generator/{param}"), tol, 1e-6, move |r| {
            let mut cfg = TrainConfig::default();
            cfg.seed = r.gen();
            cfg.network.hidden = 8;
            cfg.network.blocks = 2;
            cfg.network.feature_dim = 4;
            let mut model = Model::new(&cfg, false);
            // The zero output layer would hide every upstream gradient.
            let out_id = model.store.id("refine.gcn.output.weight").unwrap();
            let shape = model.store.get(out_id).shape().to_vec();
            *model.store.get_mut(out_id) = random(&shape, r, -0.5, 0.5);
            let data = handpose::handmodel::sample_synthetic(r.gen(), 2).unwrap();
            let images = {
                let refs: Vec<_> = data.iter().collect();
                handpose::pipeline::model::images_tensor(&refs).unwrap()
            };
            let targets = {
                let poses: Vec<_> = data.iter().map(|s| &s.gt_pose3d).collect();
                batched::Targets::new(&poses, &model.graph).unwrap()
            };
            let id = model.store.id(param).unwrap();
            let w0 = model.store.get(id).clone();
            let model = std::cell::RefCell::new(model);
            let eval = move |w: &Tensor| {
                *model.borrow_mut().store.get_mut(id) = w.clone();
                let m = model.borrow();
                let mut s = Session::new(&m.store);
                s.freeze(|n| n != param);
                let iv = s.tape.constant(images.clone()).unwrap();
                let (_, pred) = m.generate(&mut s, iv, true).unwrap();
                let l = batched::supervised(&mut s.tape, pred, &targets, &LossWeights::default(), &m.graph).unwrap();
                let v = s.tape.value(l).item();
                s.backward(l).unwrap();
                let g = s.grads().into_iter().find(|(i, _)| *i == id).unwrap().1;
                (v, g)
            };
            (boxed(eval), w0)
        }));
    }

    out
}

/// Desk-scale configuration for the acceptance runs.
pub fn desk_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.seed = 0;
    c.train_size = 2000;
    c.test_size = 500;
    c.stage1_epochs = 30;
    c.stage2_epochs = 30;
    c.stage3_epochs = 30;
    c.network.hidden = 64;
    c.network.blocks = 2;
    c
}

/// Tiny configuration for smoke tests.
pub fn smoke_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.train_size = 8;
    c.test_size = 4;
    c.batch_size = 4;
    c.stage1_epochs = 1;
    c.stage2_epochs = 1;
    c.stage3_epochs = 1;
    c.network.hidden = 8;
    c.network.blocks = 1;
    c.network.feature_dim = 4;
    c.critic.image_hidden = 8;
    c.critic.image_out = 4;
    c.critic.head_hidden = 8;
    c
}
