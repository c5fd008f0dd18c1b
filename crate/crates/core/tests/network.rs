//! Whole-network gradient checks and checkpoint storage.

use mricnn::gradcheck::{check_network, GradCheckConfig};
use mricnn::network::{
    build_arch, load_checkpoint, save_checkpoint, Arch, FcVariant, LayerSpec, Network, NetworkSpec,
    Scale,
};
use mricnn::tensor::Exec;
use mricnn::{Error, Tensor};

fn desk(arch: Arch) -> NetworkSpec {
    build_arch(arch, (1, 64, 64), Scale::Desk, None, FcVariant::Primary).unwrap()
}

fn assert_gradcheck(spec: &NetworkSpec) {
    let report = check_network(spec, &GradCheckConfig::default()).unwrap();
    let learnable = spec.layers.iter().filter(|l| l.is_learnable()).count();
    assert_eq!(report.tensors.len(), 2 * learnable);
    for t in &report.tensors {
        assert!(t.checked > 0, "{} was never probed", t.name);
        assert!(t.max_rel_err < 1e-3, "{}: {:.3e}", t.name, t.max_rel_err);
    }
    assert!(report.passed());
}

#[test]
fn deep_convnet_gradients() {
    assert_gradcheck(&desk(Arch::DeepConvNet));
}

#[test]
fn alexnet_layout_and_gradients() {
    let spec = desk(Arch::AlexNet);
    assert_eq!(spec.conv_count(), 5);
    assert_gradcheck(&spec);
}

#[test]
fn vgg16_layout_and_gradients() {
    let spec = desk(Arch::Vgg16);
    assert_eq!((spec.conv_count(), spec.dense_count()), (13, 3));
    assert_gradcheck(&spec);
}

#[test]
fn paper_scale_baselines_keep_their_depth() {
    for fc in [FcVariant::Primary, FcVariant::Alternate] {
        let spec = build_arch(Arch::DeepConvNet, (1, 300, 300), Scale::Paper, None, fc).unwrap();
        assert_eq!(spec.conv_count(), 6);
        assert_eq!(spec.dense_count(), 7);
    }
    let alex = build_arch(
        Arch::AlexNet,
        (1, 227, 227),
        Scale::Paper,
        None,
        FcVariant::Primary,
    )
    .unwrap();
    assert_eq!(alex.conv_count(), 5);
    let vgg = build_arch(
        Arch::Vgg16,
        (1, 224, 224),
        Scale::Paper,
        None,
        FcVariant::Primary,
    )
    .unwrap();
    assert_eq!((vgg.conv_count(), vgg.dense_count()), (13, 3));
}

#[test]
fn spec_text_round_trips() {
    for arch in [Arch::DeepConvNet, Arch::AlexNet, Arch::Vgg16] {
        let spec = desk(arch);
        assert_eq!(spec.to_string().parse::<NetworkSpec>().unwrap(), spec);
    }
    assert!("input=1x8x8;classes=3;layers=conv(4,3,1,1),flatten"
        .parse::<NetworkSpec>()
        .is_err());
    assert!("bogus(1)".parse::<LayerSpec>().is_err());
}

#[test]
fn initial_softmax_is_near_uniform() {
    let net = Network::new(desk(Arch::DeepConvNet), 5).unwrap();
    let x = Tensor::from_fn(&[4, 1, 64, 64], |i| ((i[2] * 3 + i[3]) % 11) as f64 / 10.0);
    let p = mricnn::network::softmax(&net.forward(&x, Exec::Sequential).unwrap()).unwrap();
    assert!(p.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 0.1));
}

#[test]
fn checkpoint_restores_outputs_exactly() {
    let spec = desk(Arch::AlexNet);
    let net = Network::new(spec.clone(), 21).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = save_checkpoint(&net, dir.path(), 12, 21).unwrap();
    assert_eq!(manifest.step, 12);
    let (back, _) = load_checkpoint(dir.path(), Some(&spec)).unwrap();
    let x = Tensor::from_fn(&[2, 1, 64, 64], |i| (i[0] + i[2] * i[3]) as f64 * 1e-3);
    assert_eq!(
        net.forward(&x, Exec::Sequential).unwrap(),
        back.forward(&x, Exec::Parallel).unwrap()
    );

    let other = desk(Arch::DeepConvNet);
    assert!(matches!(
        load_checkpoint(dir.path(), Some(&other)),
        Err(Error::CheckpointMismatch(_))
    ));
}
