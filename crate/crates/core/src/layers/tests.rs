use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::so3::{octahedral_rotations, FieldType, Rotation};
use crate::tensor::{ParamStore, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ft(m: [usize; 3]) -> FieldType {
    FieldType::from_multiplicities(m).unwrap()
}

fn random_field(t: &FieldType, n: usize, seed: u64) -> FeatureField {
    FeatureField::new(Tensor::randn(&[1, t.total_channels(), n, n, n], 1.0, &mut rng(seed)), t.clone()).unwrap()
}

fn run_conv(layer: &SteerableConv, store: &ParamStore, f: &FeatureField) -> FeatureField {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let x = tape.constant(f.tensor.clone());
    let x = FieldVar::new(&tape, x, f.ftype.clone()).unwrap();
    let y = layer.forward(&mut tape, &p, &x).unwrap();
    FeatureField::new(tape.value(y.var).clone(), y.ftype).unwrap()
}

fn run_block(block: &GatedBlock, store: &ParamStore, f: &FeatureField) -> FeatureField {
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let x = tape.constant(f.tensor.clone());
    let x = FieldVar::new(&tape, x, f.ftype.clone()).unwrap();
    let y = block.forward(&mut tape, &p, &x).unwrap();
    FeatureField::new(tape.value(y.var).clone(), y.ftype).unwrap()
}

fn two_path<F: Fn(&FeatureField) -> FeatureField>(f: &FeatureField, op: F) -> f64 {
    let base = op(f);
    let mut worst = 0.0f64;
    for r in octahedral_rotations() {
        let a = op(&rotate_field(f, &r).unwrap());
        let b = rotate_field(&base, &r).unwrap();
        worst = worst.max(a.tensor.rel_diff(&b.tensor));
    }
    worst
}

#[test]
fn rotate_field_identity_and_inverse() {
    let t = ft([2, 1, 1]);
    let f = random_field(&t, 5, 1);
    assert_eq!(rotate_field(&f, &Rotation::identity()).unwrap(), f);
    let vec_field = random_field(&ft([1, 2, 0]), 5, 2);
    for r in octahedral_rotations() {
        let back = rotate_field(&rotate_field(&f, &r).unwrap(), &r.inverse()).unwrap();
        assert!(back.tensor.max_abs_diff(&f.tensor) < 1e-14);
        // l ≤ 1 fields round-trip bit-exactly
        let back = rotate_field(&rotate_field(&vec_field, &r).unwrap(), &r.inverse()).unwrap();
        assert_eq!(back, vec_field);
    }
}

#[test]
fn rotate_field_scalar_is_pure_permutation() {
    let f = random_field(&ft([3, 0, 0]), 3, 2);
    let r = Rotation::from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2).unwrap();
    let g = rotate_field(&f, &r).unwrap();
    let mut a = f.tensor.data().to_vec();
    let mut b = g.tensor.data().to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);
    // 90° about z sends +x to +y: voxel (x=2, y=1, z=1) lands at (x=1, y=2, z=1)
    let at = |t: &Tensor, z: usize, y: usize, x: usize| t.data()[(z * 3 + y) * 3 + x];
    assert_eq!(at(&g.tensor, 1, 2, 1), at(&f.tensor, 1, 1, 2));
}

#[test]
fn rotate_field_rejects_generic_rotation() {
    let f = random_field(&ft([1, 0, 0]), 3, 3);
    let r = Rotation::from_axis_angle([0.0, 0.0, 1.0], 0.3).unwrap();
    assert!(matches!(rotate_field(&f, &r), Err(crate::Error::NonOctahedral)));
}

#[test]
fn steerable_conv_is_equivariant() {
    for (tin, tout) in [([1, 1, 0], [1, 1, 1]), ([0, 1, 1], [2, 1, 0]), ([1, 0, 1], [0, 1, 1])] {
        let (tin, tout) = (ft(tin), ft(tout));
        let layer = SteerableConv::new("c", tin.clone(), tout, 1, 1).unwrap();
        let mut store = ParamStore::new();
        layer.register(&mut store, &mut rng(4)).unwrap();
        let f = random_field(&tin, 7, 5);
        let res = two_path(&f, |g| run_conv(&layer, &store, g));
        assert!(res <= 1e-6, "residual {res}");
    }
}

#[test]
fn scalar_conv_is_isotropic_standard_conv() {
    let t = ft([1, 0, 0]);
    let layer = SteerableConv::new("c", t.clone(), t.clone(), 1, 1).unwrap();
    assert_eq!(layer.param_count(), 2);
    let mut store = ParamStore::new();
    layer.register(&mut store, &mut rng(6)).unwrap();
    let f = random_field(&t, 5, 7);
    let out = run_conv(&layer, &store, &f);
    // same kernel through the free-form path
    let kernel = layer.plan().expand(store.get("c.w").unwrap().data());
    let mut tape = Tape::new();
    let x = tape.constant(f.tensor.clone());
    let k = tape.constant(Tensor::new(vec![1, 1, 3, 3, 3], kernel.clone()).unwrap());
    let y = tape.conv3d(x, k, 1, 1).unwrap();
    assert_eq!(tape.value(y), &out.tensor);
    // isotropic: constant on the three non-central shells
    let shell = |v: usize| [v / 9, (v / 3) % 3, v % 3].iter().filter(|&&i| i != 1).count();
    for a in 0..27 {
        for b in 0..27 {
            if shell(a) == shell(b) {
                assert!((kernel[a] - kernel[b]).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn zero_weights_give_zero_output() {
    let (tin, tout) = (ft([1, 1, 0]), ft([1, 1, 1]));
    let layer = SteerableConv::new("c", tin.clone(), tout, 1, 1).unwrap();
    let mut store = ParamStore::new();
    store.insert("c.w", Tensor::zeros(&[layer.param_count()])).unwrap();
    let out = run_conv(&layer, &store, &random_field(&tin, 3, 8));
    assert!(out.tensor.data().iter().all(|v| *v == 0.0));
}

#[test]
fn type_mismatch_lists_both_types() {
    let layer = SteerableConv::new("c", ft([1, 1, 0]), ft([1, 0, 0]), 1, 1).unwrap();
    let mut store = ParamStore::new();
    layer.register(&mut store, &mut rng(1)).unwrap();
    let mut tape = Tape::new();
    let p = store.bind_frozen(&mut tape);
    let x = tape.constant(Tensor::zeros(&[1, 4, 3, 3, 3]));
    let x = FieldVar::new(&tape, x, ft([4, 0, 0])).unwrap();
    let err = layer.forward(&mut tape, &p, &x).unwrap_err().to_string();
    assert!(err.contains("[1x0, 1x1]") && err.contains("[4x0]"), "{err}");
}

#[test]
fn gate_values() {
    let t = ft([1, 1, 1]);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 9, 1, 1, 1], 2.0));
    let x = FieldVar::new(&tape, x, t.clone()).unwrap();
    let zero = tape.constant(Tensor::zeros(&[1, 2, 1, 1, 1]));
    let y = gated_activation(&mut tape, &x, Some(zero)).unwrap();
    assert_eq!(tape.value(y.var).data(), &[2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
    let neg = tape.constant(Tensor::full(&[1, 2, 1, 1, 1], -60.0));
    let y = gated_activation(&mut tape, &x, Some(neg)).unwrap();
    assert!(tape.value(y.var).data()[1..].iter().all(|v| v.abs() < 1e-25));
    let x2 = tape.constant(Tensor::full(&[1, 9, 1, 1, 1], -1.0));
    let x2 = FieldVar::new(&tape, x2, t).unwrap();
    let y = gated_activation(&mut tape, &x2, Some(zero)).unwrap();
    assert!((tape.value(y.var).data()[0] + 0.1).abs() < 1e-15);
    assert!(gated_activation(&mut tape, &x2, None).is_err());
}

#[test]
fn gating_commutes_with_rotation() {
    let t = ft([2, 2, 1]);
    let f = random_field(&t, 5, 9);
    let gates = Tensor::randn(&[1, 3, 5, 5, 5], 1.0, &mut rng(10));
    let gate_field = FeatureField::new(gates, ft([3, 0, 0])).unwrap();
    let apply = |f: &FeatureField, g: &FeatureField| {
        let mut tape = Tape::new();
        let x = tape.constant(f.tensor.clone());
        let x = FieldVar::new(&tape, x, f.ftype.clone()).unwrap();
        let gv = tape.constant(g.tensor.clone());
        let y = gated_activation(&mut tape, &x, Some(gv)).unwrap();
        FeatureField::new(tape.value(y.var).clone(), y.ftype).unwrap()
    };
    let base = apply(&f, &gate_field);
    for r in octahedral_rotations() {
        let a = apply(&rotate_field(&f, &r).unwrap(), &rotate_field(&gate_field, &r).unwrap());
        let b = rotate_field(&base, &r).unwrap();
        assert!(a.tensor.rel_diff(&b.tensor) <= 1e-6);
    }
}

#[test]
fn gated_block_types_and_equivariance() {
    let block = GatedBlock::new("g", ft([1, 1, 0]), ft([5, 2, 1]), 1, 1).unwrap();
    assert_eq!(block.n_gates(), 3);
    assert!(block.gate_type().unwrap().is_scalar());
    assert_eq!(block.param_count(), block.main_weight_count() + block.gate_weight_count() + 8);
    let mut store = ParamStore::new();
    block.register(&mut store, &mut rng(11)).unwrap();
    // nonzero biases so the scalar path is exercised
    let b = Tensor::randn(&[8], 0.5, &mut rng(12));
    let mut s2 = ParamStore::new();
    s2.insert("g.w", store.get("g.w").unwrap().clone()).unwrap();
    s2.insert("g.b", b).unwrap();
    let f = random_field(&ft([1, 1, 0]), 7, 13);
    let res = two_path(&f, |g| run_block(&block, &s2, g));
    assert!(res <= 1e-6, "residual {res}");
}

#[test]
fn stack_with_strides_is_equivariant() {
    let spec = EncoderSpec::from_budget(&[4, 9, 9], &[1, 2, 2], [1, 1, 0], [1, 1, 1], BudgetRule::Fit).unwrap();
    let enc = Encoder::Equivariant(EquivariantEncoder::new(ft([2, 0, 0]), &spec).unwrap());
    let mut store = ParamStore::new();
    enc.register(&mut store, &mut rng(14)).unwrap();
    let out_t = enc.out_types().last().unwrap().clone();
    let f = random_field(&ft([2, 0, 0]), 9, 15);
    let res = two_path(&f, |g| {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let x = tape.constant(g.tensor.clone());
        let feats = enc.forward(&mut tape, &p, x).unwrap();
        FeatureField::new(tape.value(*feats.last().unwrap()).clone(), out_t.clone()).unwrap()
    });
    assert!(res <= 1e-5, "residual {res}");
}

#[test]
fn vm_encoder_shapes_and_counts() {
    let spec = EncoderSpec::vm_default();
    spec.validate(&VM_CHANNELS).unwrap();
    assert_eq!(spec.levels[0].ftype.multiplicities(), [2, 2, 0]);
    assert_eq!(spec.channels(), VM_CHANNELS);
    let eq = Encoder::Equivariant(EquivariantEncoder::new(ft([2, 0, 0]), &spec).unwrap());
    let st = Encoder::Standard(StandardEncoder::new(2, &VM_CHANNELS, &VM_STRIDES).unwrap());
    assert_eq!(st.param_count(), 2 * 8 * 27 + 8 + 8 * 16 * 27 + 16 + 2 * (16 * 16 * 27 + 16));
    assert!(eq.param_count() < st.param_count());
    let mut store = ParamStore::new();
    eq.register(&mut store, &mut rng(1)).unwrap();
    assert_eq!(parameter_count(&store), eq.param_count());
    assert_eq!(parameter_count(&ParamStore::new()), 0);
}

#[test]
fn validate_rejects_bad_first_level() {
    let spec = EncoderSpec::from_budget(&[8, 16], &[1, 2], [0, 1, 0], [5, 2, 1], BudgetRule::Fit).unwrap();
    assert!(spec.validate(&[8, 16]).is_err());
}

#[test]
fn single_scalar_level_matches_standard_isotropic() {
    let spec = EncoderSpec { levels: vec![EncoderLevel { ftype: ft([3, 0, 0]), stride: 1 }] };
    let enc = EquivariantEncoder::new(ft([2, 0, 0]), &spec).unwrap();
    assert_eq!(enc.blocks[0].n_gates(), 0);
    assert_eq!(enc.blocks[0].param_count(), 2 * 3 * 2 + 3);
}
