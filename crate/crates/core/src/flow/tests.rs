use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::oracle;

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor {
    let data = (0..c * h * w)
        .map(|_| rng.gen_range(0..=255) as f32)
        .collect();
    Tensor::new(vec![c, h, w], data).unwrap()
}

fn small(scheme: Scheme, c: usize) -> FlowConfig {
    FlowConfig {
        hidden: 8,
        n_hidden: 1,
        ..FlowConfig::new(scheme, c)
    }
}

const SCHEMES: [Scheme; 3] = [Scheme::Lifting1d, Scheme::Separable, Scheme::Quadrant];

fn shape_for(scheme: Scheme, n: usize) -> (usize, usize) {
    match scheme {
        Scheme::Lifting1d => (1, n),
        _ => (n, n),
    }
}

#[test]
fn round_nearest_examples() {
    assert_eq!(round_nearest(0.5), 1);
    assert_eq!(round_nearest(-0.5), 0);
    assert_eq!(round_nearest(2.0), 2);
    assert_eq!(round_nearest(-2.5), -2);
}

#[test]
fn iteration_counts() {
    let f = WaveletFlow::new(small(Scheme::Quadrant, 1), Init::Zero).unwrap();
    assert_eq!(f.iterations(4, 4).unwrap(), 1);
    assert_eq!(f.iterations(64, 64).unwrap(), 5);
    assert_eq!(f.iterations(2, 2).unwrap(), 0);
    assert_eq!(f.iterations(8, 32).unwrap(), 2);
    assert!(matches!(f.iterations(12, 16), Err(Error::Geometry(_))));
    assert!(matches!(f.iterations(1, 16), Err(Error::Geometry(_))));
}

#[test]
fn four_by_four_has_one_level() {
    let f = WaveletFlow::new(
        small(Scheme::Quadrant, 1),
        Init::Random {
            seed: 1,
            scale: 0.1,
        },
    )
    .unwrap();
    let x = random_image(&mut ChaCha8Rng::seed_from_u64(0), 1, 4, 4);
    let p = f.forward(&x).unwrap();
    assert_eq!(p.levels(), 1);
    assert_eq!(p.highpass[0].len(), 3);
    assert!(p.highpass[0].iter().all(|t| t.shape() == [1, 2, 2]));
    assert_eq!(p.final_block.shape(), &[1, 2, 2]);
    assert_eq!(p.element_count(), 16);
}

#[test]
fn zero_networks_reshuffle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_image(&mut rng, 2, 8, 8);
    let f = WaveletFlow::new(small(Scheme::Quadrant, 2), Init::Zero).unwrap();
    let p = f.forward(&x).unwrap();
    let mut ours: Vec<f32> = p
        .highpass
        .iter()
        .flatten()
        .flat_map(|t| t.data().to_vec())
        .collect();
    ours.extend_from_slice(p.final_block.data());
    let mut orig = x.data().to_vec();
    ours.sort_by(f32::total_cmp);
    orig.sort_by(f32::total_cmp);
    assert_eq!(ours, orig);
    // The B plane of level 0 is exactly the odd columns of even rows.
    assert_eq!(p.highpass[0][0].data()[0], x.data()[1]);
}

#[test]
fn integer_round_trip_all_schemes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for scheme in SCHEMES {
        for c in [1, 3] {
            let f = WaveletFlow::new(
                small(scheme, c),
                Init::Random {
                    seed: 5,
                    scale: 0.3,
                },
            )
            .unwrap();
            for n in [2, 4, 8, 16] {
                let (h, w) = shape_for(scheme, n);
                let x = random_image(&mut rng, c, h, w);
                let p = f.forward(&x).unwrap();
                assert_eq!(p.element_count(), x.len());
                assert!(p
                    .highpass
                    .iter()
                    .flatten()
                    .all(|t| t.data().iter().all(|v| v.fract() == 0.0)));
                assert_eq!(f.inverse(&p).unwrap(), x, "{scheme:?} c={c} n={n}");
            }
        }
    }
}

#[test]
fn continuous_round_trip_is_close() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for scheme in SCHEMES {
        let mut cfg = small(scheme, 3);
        cfg.mode = Mode::Continuous;
        let f = WaveletFlow::new(
            cfg,
            Init::Random {
                seed: 2,
                scale: 0.05,
            },
        )
        .unwrap();
        let (h, w) = shape_for(scheme, 16);
        let x = random_image(&mut rng, 3, h, w);
        let back = f.inverse(&f.forward(&x).unwrap()).unwrap();
        assert!(
            back.max_abs_diff(&x) < 1e-4,
            "{scheme:?}: {}",
            back.max_abs_diff(&x)
        );
    }
}

#[test]
fn rectangular_quadrant_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let f = WaveletFlow::new(
        small(Scheme::Quadrant, 1),
        Init::Random {
            seed: 9,
            scale: 0.3,
        },
    )
    .unwrap();
    let x = random_image(&mut rng, 1, 4, 16);
    let p = f.forward(&x).unwrap();
    assert_eq!(p.levels(), 1);
    assert_eq!(p.final_block.shape(), &[1, 2, 8]);
    assert_eq!(f.inverse(&p).unwrap(), x);
}

#[test]
fn coupling_planes_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let f = WaveletFlow::new(
        small(Scheme::Quadrant, 2),
        Init::Random {
            seed: 4,
            scale: 0.5,
        },
    )
    .unwrap();
    let planes: Vec<Tensor> = (0..4).map(|_| random_image(&mut rng, 2, 4, 4)).collect();
    let fwd = f
        .coupling_forward_2d([&planes[0], &planes[1], &planes[2], &planes[3]])
        .unwrap();
    assert_ne!(fwd[0], planes[0]);
    let back = f
        .coupling_inverse_2d([&fwd[0], &fwd[1], &fwd[2], &fwd[3]])
        .unwrap();
    assert_eq!(back.to_vec(), planes);
}

#[test]
fn zero_coupling_leaves_planes() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let f = WaveletFlow::new(small(Scheme::Quadrant, 1), Init::Zero).unwrap();
    let p: Vec<Tensor> = (0..4).map(|_| random_image(&mut rng, 1, 2, 2)).collect();
    let out = f.coupling_forward_2d([&p[0], &p[1], &p[2], &p[3]]).unwrap();
    assert_eq!(out.to_vec(), p);
}

fn signal(values: &[i64], c: usize) -> Tensor {
    let n = values.len() / c;
    Tensor::new(vec![c, 1, n], values.iter().map(|&v| v as f32).collect()).unwrap()
}

fn as_i64(t: &Tensor) -> Vec<i64> {
    t.data().iter().map(|&v| v as i64).collect()
}

#[test]
fn appendix_haar_pair() {
    let f = WaveletFlow::new(FlowConfig::appendix_a(1), Init::Haar { seed: 0 }).unwrap();
    let (s, d) = f.forward_level(&signal(&[2, 4], 1)).unwrap();
    assert_eq!(as_i64(&d[0]), vec![2]);
    assert_eq!(as_i64(&s), vec![3]);
}

#[test]
fn appendix_flows_match_lifting_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for (init, oracle_fn) in [
        (Init::Haar { seed: 0 }, oracle::haar_1d as oracle::LevelFn),
        (Init::LeGall { seed: 0 }, oracle::legall_1d),
    ] {
        let f = WaveletFlow::new(FlowConfig::appendix_a(3), init).unwrap();
        for _ in 0..50 {
            let n = 2usize << rng.gen_range(0..6);
            let vals: Vec<i64> = (0..3 * n).map(|_| rng.gen_range(0..=255)).collect();
            let (s, d) = f.forward_level(&signal(&vals, 3)).unwrap();
            for ch in 0..3 {
                let (os, od) = oracle_fn(&vals[ch * n..(ch + 1) * n]);
                assert_eq!(as_i64(&s)[ch * n / 2..(ch + 1) * n / 2], os[..]);
                assert_eq!(as_i64(&d[0])[ch * n / 2..(ch + 1) * n / 2], od[..]);
            }
        }
    }
}

#[test]
fn legall_constant_signal() {
    let f = WaveletFlow::new(FlowConfig::appendix_a(1), Init::LeGall { seed: 0 }).unwrap();
    let (s, d) = f.forward_level(&signal(&[77; 16], 1)).unwrap();
    assert!(d[0].data().iter().all(|&v| v == 0.0));
    assert!(s.data().iter().all(|&v| v == 77.0));
}

#[test]
fn separable_haar_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = FlowConfig {
        repeat: 1,
        hidden: 10,
        n_hidden: 1,
        ..FlowConfig::new(Scheme::Separable, 1)
    };
    for init in [Init::Haar { seed: 0 }, Init::LeGall { seed: 0 }] {
        let level = match init {
            Init::Haar { .. } => oracle::haar_1d as oracle::LevelFn,
            _ => oracle::legall_1d,
        };
        let f = WaveletFlow::new(cfg, init).unwrap();
        for n in [4, 8] {
            let x = random_image(&mut rng, 1, n, n);
            let (a, hp) = f.forward_level(&x).unwrap();
            let want = oracle::separable_2d(&as_i64(&x), n, n, level);
            assert_eq!(as_i64(&a), want[0]);
            for k in 0..3 {
                assert_eq!(as_i64(&hp[k]), want[k + 1]);
            }
        }
    }
}

#[test]
fn quadrant_wavelets_equal_separable_in_continuous_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for init in [Init::Haar { seed: 1 }, Init::LeGall { seed: 1 }] {
        let mut q = FlowConfig {
            hidden: 12,
            ..FlowConfig::new(Scheme::Quadrant, 2)
        };
        q.mode = Mode::Continuous;
        let mut s = FlowConfig {
            repeat: 1,
            hidden: 10,
            n_hidden: 1,
            ..FlowConfig::new(Scheme::Separable, 2)
        };
        s.mode = Mode::Continuous;
        let fq = WaveletFlow::new(q, init).unwrap();
        let fs = WaveletFlow::new(s, init).unwrap();
        let x = random_image(&mut rng, 2, 8, 8);
        let (aq, hq) = fq.forward_level(&x).unwrap();
        let (as_, hs) = fs.forward_level(&x).unwrap();
        assert!(aq.max_abs_diff(&as_) < 1e-3);
        for k in 0..3 {
            assert!(hq[k].max_abs_diff(&hs[k]) < 1e-3, "{init:?} plane {k}");
        }
    }
}

#[test]
fn quadrant_legall_constant_image_has_zero_detail() {
    let f = WaveletFlow::new(
        FlowConfig::new(Scheme::Quadrant, 3),
        Init::LeGall { seed: 7 },
    )
    .unwrap();
    let x = Tensor::full(&[3, 16, 16], 200.0);
    let p = f.forward(&x).unwrap();
    assert!(p
        .highpass
        .iter()
        .flatten()
        .all(|t| t.data().iter().all(|&v| v == 0.0)));
    assert!(p.final_block.data().iter().all(|&v| v == 200.0));
}

#[test]
fn overflow_is_reported() {
    let mut cfg = small(Scheme::Quadrant, 1);
    cfg.repeat = 1;
    let mut f = WaveletFlow::new(cfg, Init::Zero).unwrap();
    // A bias of 200 on the last layer adds 200·255 per update.
    f.block.nets[0].layers.last_mut().unwrap().bias.data_mut()[0] = 200.0;
    let x = Tensor::full(&[1, 4, 4], 100.0);
    assert!(matches!(f.forward(&x), Err(Error::Overflow { .. })));
}

#[test]
fn integer_mode_rejects_fractional_input() {
    let f = WaveletFlow::new(small(Scheme::Quadrant, 1), Init::Zero).unwrap();
    let x = Tensor::full(&[1, 4, 4], 0.5);
    assert!(matches!(f.forward(&x), Err(Error::Contract(_))));
}

#[test]
fn same_block_serves_all_sizes() {
    let f = WaveletFlow::new(
        small(Scheme::Quadrant, 1),
        Init::Random {
            seed: 3,
            scale: 0.2,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for n in [32, 64] {
        let x = random_image(&mut rng, 1, n, n);
        assert_eq!(f.inverse(&f.forward(&x).unwrap()).unwrap(), x);
    }
}

/// Determinant of a dense `n × n` row-major matrix by partial pivoting.
fn determinant(mut m: Vec<f64>, n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().total_cmp(&m[b * n + col].abs()))
            .unwrap();
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            det = -det;
        }
        det *= m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / m[col * n + col];
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

#[test]
fn coupling_sweep_preserves_volume() {
    let mut cfg = small(Scheme::Quadrant, 1);
    cfg.mode = Mode::Continuous;
    let f = WaveletFlow::new(
        cfg,
        Init::Random {
            seed: 21,
            scale: 0.5,
        },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = random_image(&mut rng, 1, 4, 4);
    // Jacobian of the level map (gather + sweeps) by autodiff, one output at a time.
    let mut g = Graph::new();
    let xv = g.variable(x.clone());
    let (a, hp) = f.level_forward_graph(&mut g, xv).unwrap();
    let y = g.concat(&[a, hp[0], hp[1], hp[2]]).unwrap();
    let n = 16;
    let mut jac = vec![0.0f64; n * n];
    for i in 0..n {
        let mut onehot = Tensor::zeros(&[4, 2, 2]);
        onehot.data_mut()[i] = 1.0;
        let m = g.constant(onehot);
        let prod = g.mul(y, m).unwrap();
        let l = g.sum(prod);
        g.reset_backward();
        let grads = g.backward(l).unwrap();
        for (j, v) in grads.wrt(xv).unwrap().data().iter().enumerate() {
            jac[i * n + j] = *v as f64;
        }
    }
    // The gather is a permutation, so |det| is that of the coupling.
    let det = determinant(jac, n);
    assert!(det.abs().ln().abs() < 1e-3, "det = {det}");
}
