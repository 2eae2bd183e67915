//! Central-difference gradient checks for every differentiable piece.

use super::{check_inputs, check_inputs_with, check_params, project, random};
use linker_core::affinity::{AffinityConfig, AffinityHead};
use linker_core::fgparser::FgParser;
use linker_core::finger_id::{feature_matrix, gcn_forward, normalized_adjacency, FingerId, FingerIdConfig};
use linker_core::losses::{self, FocalConfig, LatentConfig};
use linker_core::model::{InteractionModel, ModelConfig, ProteinInput};
use linker_core::molgraph::parse_smiles;
use linker_core::pairwise_unet::{PairwiseUnet, UnetConfig, N_TYPES};
use linker_core::protein::{FallbackEmbedder, ProteinSequence};
use linker_core::scat::{AttentionBlock, Scat, ScatConfig};
use linker_core::tensor::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probabilities(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.gen_range(0.05..0.95)).collect()).unwrap()
}

pub fn elementwise_and_reductions() {
    let a = random(&[3, 4], 1);
    let b = random(&[3, 4], 2);
    let pos = probabilities(&[3, 4], 3);
    check_inputs(&[a.clone(), b.clone(), pos], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let m = t.mul(s, v[1]).unwrap();
        let d = t.div(m, v[2]).unwrap();
        let e = t.exp(d).unwrap();
        let l = t.log(v[2]).unwrap();
        let sq = t.sqrt(v[2]).unwrap();
        let pw = t.powf(v[2], 1.7).unwrap();
        let sg = t.sigmoid(v[0]).unwrap();
        let mut total = project(t, e, 10);
        for (k, x) in [l, sq, pw, sg].into_iter().enumerate() {
            let p = project(t, x, 11 + k as u64);
            total = t.add(total, p).unwrap();
        }
        total
    });
    check_inputs(std::slice::from_ref(&a), |t, v| {
        let mx = t.max(v[0], 1).unwrap();
        let mn = t.mean(v[0], 0).unwrap();
        let p = project(t, mx, 20);
        let q = project(t, mn, 21);
        t.add(p, q).unwrap()
    });
    check_inputs(&[random(&[4], 5), random(&[3, 4], 6)], |t, v| {
        let s = t.sub(v[1], v[0]).unwrap();
        let c = t.clamp(s, -0.7, 0.7).unwrap();
        project(t, c, 22)
    });
}

pub fn tiny_network_mean_sigmoid() {
    let mut store = ParamStore::default();
    store.insert("w", random(&[3, 5], 1).with_grad());
    let x = random(&[5, 2], 2);
    let n = check_params(&store, &[], |t| {
        let w = t.param("w").unwrap();
        let xv = t.constant(x.clone());
        let y = t.matmul(w, xv).unwrap();
        let s = t.sigmoid(y).unwrap();
        t.mean_all(s).unwrap()
    });
    assert_eq!(n, 15);
}

pub fn shape_ops() {
    let a = random(&[2, 3, 4], 1);
    let b = random(&[2, 3, 2], 2);
    check_inputs(&[a, b], |t, v| {
        let c = t.concat(&[v[0], v[1]], 2).unwrap();
        let p = t.permute(c, &[2, 0, 1]).unwrap();
        let n = t.narrow(p, 0, 1, 4).unwrap();
        let r = t.reshape(n, &[8, 3]).unwrap();
        let g = t.gather_rows(r, &[0, 3, 3, 7]).unwrap();
        let tr = t.transpose(g).unwrap();
        let row = t.narrow(tr, 0, 0, 1).unwrap();
        let bc = t.broadcast_to(row, &[5, 4]).unwrap();
        let x = project(t, bc, 3);
        let y = project(t, tr, 4);
        t.add(x, y).unwrap()
    });
}

pub fn normalizations() {
    let x = random(&[4, 6], 1);
    check_inputs(std::slice::from_ref(&x), |t, v| {
        let s = t.softmax(v[0], 1).unwrap();
        let ls = t.log_softmax(v[0], 0).unwrap();
        let ln = t.layer_norm(v[0], 1e-5).unwrap();
        let l2 = t.l2_normalize(v[0], 1, 1e-12).unwrap();
        let mut total = project(t, s, 2);
        for (k, y) in [ls, ln, l2].into_iter().enumerate() {
            let p = project(t, y, 3 + k as u64);
            total = t.add(total, p).unwrap();
        }
        total
    });
}

pub fn convolution_pooling_upsampling() {
    let x = random(&[2, 6, 6], 1);
    let w = random(&[3, 2, 3, 3], 2);
    let b = random(&[3], 3);
    for (stride, pad) in [(1, (1, 1)), (2, (1, 0)), (1, (0, 0))] {
        check_inputs(&[x.clone(), w.clone(), b.clone()], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap();
            project(t, y, 4)
        });
    }
    check_inputs(std::slice::from_ref(&x), |t, v| {
        let p = t.max_pool2d(v[0], 2).unwrap();
        let u = t.up_sample2d(p, 2).unwrap();
        let pd = t.pad2d(u, [1, 0, 2, 1]).unwrap();
        project(t, pd, 5)
    });
}

pub fn gcn_layers() {
    let g = parse_smiles("CC(O)c1ccccc1").unwrap();
    let a_hat = normalized_adjacency(&g);
    let x = feature_matrix(&g);
    let inputs = [random(&[5, 6], 1), random(&[6], 2), random(&[6, 4], 3), random(&[4], 4)];
    check_inputs(&inputs, |t, v| {
        let a = t.constant(a_hat.clone());
        let xv = t.constant(x.clone());
        let z = gcn_forward(t, a, xv, &[(v[0], v[1]), (v[2], v[3])]).unwrap();
        project(t, z, 5)
    });
}

pub fn finger_id_assembly() {
    let parser = FgParser::default();
    let lig = parser.parse("OCC(=O)Nc1ccc(O)cc1").unwrap();
    let f = FingerId {
        cfg: FingerIdConfig {
            gcn_layers: 2,
            d_graph: 4,
            d_fg: 3,
            d_pos: 2,
        },
        d_model: 5,
        n_patterns: parser.n_patterns(),
    };
    let mut store = ParamStore::default();
    f.init_params(&mut store, &mut rng(1));
    // Non-zero biases keep the relus away from their kinks.
    for i in 0..2 {
        *store.get_mut(&format!("finger.gcn.{i}.b")).unwrap() = random(&[4], 10 + i).with_grad();
    }
    let n = check_params(&store, &[], |t| {
        let out = f.forward(t, &lig).unwrap();
        project(t, out.h_l, 2)
    });
    assert!(n > 50);
}

pub fn attention_self_and_cross() {
    let cfg = ScatConfig { heads: 2, ffn_mult: 2 };
    let block = AttentionBlock::new("blk", 4, cfg).unwrap();
    let mut store = ParamStore::default();
    block.init_params(&mut store, &mut rng(2));
    let q = random(&[5, 4], 3);
    let kv = random(&[3, 4], 4);
    check_params(&store, &[], |t| {
        let x = t.constant(q.clone());
        let out = block.forward(t, x, None, None).unwrap();
        project(t, out.out, 5)
    });
    check_params(&store, &[], |t| {
        let x = t.constant(q.clone());
        let y = t.constant(kv.clone());
        let out = block.forward(t, x, Some(y), None).unwrap();
        project(t, out.out, 6)
    });
    check_inputs_with(&store, &[q, kv], |t, v| {
        let out = block.forward(t, v[0], Some(v[1]), None).unwrap();
        project(t, out.out, 7)
    });
}

pub fn scat_stack() {
    let scat = Scat::new(4, ScatConfig { heads: 2, ffn_mult: 2 }).unwrap();
    let mut store = ParamStore::default();
    scat.init_params(&mut store, &mut rng(3));
    let hp = random(&[5, 4], 1);
    let hl = random(&[3, 4], 2);
    let n = check_params(&store, &[], |t| {
        let p = t.constant(hp.clone());
        let l = t.constant(hl.clone());
        let out = scat.forward(t, p, l, None, None).unwrap();
        let a = project(t, out.hp, 4);
        let b = project(t, out.hl, 5);
        t.add(a, b).unwrap()
    });
    assert!(n > 100);
}

pub fn pairwise_unet_6x6() {
    let unet = PairwiseUnet {
        cfg: UnetConfig {
            depth: 1,
            base_channels: 2,
            d_unet: 2,
        },
        in_channels: 4,
    };
    let mut store = ParamStore::default();
    unet.init_params(&mut store, &mut rng(4));
    for (name, t) in store.iter_mut() {
        if name.ends_with(".b") {
            let shape = t.shape().to_vec();
            *t = random(&shape, 40 + shape[0] as u64).with_grad();
        }
    }
    let z = random(&[6, 6, 4], 5);
    check_params(&store, &[], |t| {
        let zv = t.constant(z.clone());
        let p = unet.forward(t, zv).unwrap();
        project(t, p, 6)
    });
}

pub fn affinity_head_blocks() {
    let head = AffinityHead {
        d: 3,
        cfg: AffinityConfig { hidden: vec![5, 4] },
    };
    let mut store = ParamStore::default();
    head.init_params(&mut store, &mut rng(5));
    for (name, t) in store.iter_mut() {
        if name.ends_with(".b") {
            let shape = t.shape().to_vec();
            *t = random(&shape, 50 + shape[0] as u64).with_grad();
        }
    }
    let p = probabilities(&[3, 2, N_TYPES], 1);
    let hp = random(&[3, 3], 2);
    let hl = random(&[2, 3], 3);
    // Ratio pooling (all strengths positive).
    check_params(&store, &[], |t| {
        let (pv, a, b) = (t.constant(p.clone()), t.constant(hp.clone()), t.constant(hl.clone()));
        let out = head.forward(t, pv, a, b).unwrap();
        let h = project(t, out.h, 7);
        t.add(out.y_hat, h).unwrap()
    });
    // Softmax pooling once a type weight is negative.
    let mut neg = store.clone();
    neg.get_mut("affinity.w")
        .unwrap()
        .data_mut()
        .copy_from_slice(&[1.0, -3.0, 0.5, 0.2, -1.0, 0.3, 0.1]);
    check_params(&neg, &[], |t| {
        let (pv, a, b) = (t.constant(p.clone()), t.constant(hp.clone()), t.constant(hl.clone()));
        let out = head.forward(t, pv, a, b).unwrap();
        t.sum_all(out.y_hat).unwrap()
    });
    // Inputs: probabilities and both embedding matrices.
    check_inputs_with(&store, &[p, hp, hl], |t, v| {
        let out = head.forward(t, v[0], v[1], v[2]).unwrap();
        let h = project(t, out.h, 9);
        t.add(out.y_hat, h).unwrap()
    });
}

pub fn losses_all() {
    let p = probabilities(&[4, 3], 1);
    let y: Vec<u8> = (0..12).map(|i| (i % 3 == 0) as u8).collect();
    for gamma in [0.0, 1.0, 2.0] {
        let cfg = FocalConfig { alpha: 0.85, gamma };
        check_inputs(std::slice::from_ref(&p), |t, v| {
            losses::focal_loss(t, v[0], &y, cfg).unwrap()
        });
    }
    let truth = [0.5, -1.0, 2.0, 0.1];
    check_inputs(&[random(&[4], 2)], |t, v| losses::mse(t, v[0], &truth).unwrap());
    let aff = [5.0, 6.5, 5.2, 7.9, 6.4];
    check_inputs(&[random(&[5, 6], 3)], |t, v| {
        losses::info_nce(t, v[0], &aff, 0.1).unwrap()
    });
    check_inputs(&[random(&[5, 6], 4)], |t, v| {
        let z = t.l2_normalize(v[0], 1, 1e-12).unwrap();
        losses::uniformity(t, z).unwrap()
    });
    check_inputs(&[random(&[5], 5), random(&[5, 6], 6)], |t, v| {
        let mse = losses::mse(t, v[0], &aff).unwrap();
        let nce = losses::info_nce(t, v[1], &aff, 0.1).unwrap();
        let z = t.l2_normalize(v[1], 1, 1e-12).unwrap();
        let unif = losses::uniformity(t, z).unwrap();
        losses::total_affinity_loss(t, mse, nce, unif, LatentConfig::default()).unwrap()
    });
}

pub fn fallback_embedder() {
    let emb = FallbackEmbedder { dim: 4 };
    let mut store = ParamStore::default();
    emb.init_params(&mut store, &mut rng(6));
    *store.get_mut(FallbackEmbedder::MIX_B).unwrap() = random(&[4], 7).with_grad();
    let seq = ProteinSequence::new("p", "MKLVAW").unwrap();
    check_params(&store, &[], |t| {
        let h = emb.forward(t, &seq).unwrap();
        project(t, h, 8)
    });
}

pub fn full_model_tiny() {
    let cfg = ModelConfig {
        d_model: 4,
        finger: FingerIdConfig {
            gcn_layers: 1,
            d_graph: 4,
            d_fg: 2,
            d_pos: 2,
        },
        scat: ScatConfig { heads: 2, ffn_mult: 1 },
        unet: UnetConfig {
            depth: 1,
            base_channels: 2,
            d_unet: 2,
        },
        affinity: AffinityConfig { hidden: vec![3] },
        ..ModelConfig::default()
    };
    let model = InteractionModel::with_default_catalogue(cfg).unwrap();
    let mut store = model.init_params(7);
    for (name, t) in store.iter_mut() {
        if name.ends_with(".b") {
            let shape = t.shape().to_vec();
            let small: Vec<f64> = random(&shape, 70 + shape[0] as u64)
                .data()
                .iter()
                .map(|v| 0.1 * v)
                .collect();
            *t = Tensor::new(&shape, small).unwrap().with_grad();
        }
    }
    let seq = ProteinSequence::new("p", "MKLVA").unwrap();
    let lig = FgParser::default().parse("OCc1ccccc1").unwrap();
    let y: Vec<u8> = (0..5 * lig.groups.len() * N_TYPES)
        .map(|i| (i % 5 == 0) as u8)
        .collect();
    check_params(&store, &["protein.", "finger.", "scat.", "unet."], |t| {
        let out = model.forward(t, ProteinInput::Sequence(&seq), &lig, None).unwrap();
        losses::focal_loss(t, out.p, &y, FocalConfig::default()).unwrap()
    });
}

pub const CASES: &[(&str, fn())] = &[
    ("elementwise_and_reductions", elementwise_and_reductions),
    ("tiny_network_mean_sigmoid", tiny_network_mean_sigmoid),
    ("shape_ops", shape_ops),
    ("normalizations", normalizations),
    ("convolution_pooling_upsampling", convolution_pooling_upsampling),
    ("gcn_layers", gcn_layers),
    ("finger_id_assembly", finger_id_assembly),
    ("attention_self_and_cross", attention_self_and_cross),
    ("scat_stack", scat_stack),
    ("pairwise_unet_6x6", pairwise_unet_6x6),
    ("affinity_head_blocks", affinity_head_blocks),
    ("losses_all", losses_all),
    ("fallback_embedder", fallback_embedder),
    ("full_model_tiny", full_model_tiny),
];
