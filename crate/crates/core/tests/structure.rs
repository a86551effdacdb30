mod common;

use common::structural::{self, Check};

fn for_depths(check: fn(usize) -> Check) {
    for levels in [3, 4, 5] {
        if let Err(e) = check(levels) {
            panic!("{e}");
        }
    }
}

#[test]
fn fusion_boundary_law() {
    for_depths(structural::fusion_boundaries);
}

#[test]
fn coordconv_channel_values() {
    for_depths(structural::coordconv_values);
}

#[test]
fn refinement_channel_trace() {
    for_depths(structural::refinement_trace);
}

#[test]
fn four_scale_output_shapes() {
    for_depths(structural::output_shapes);
}

#[test]
fn zeroed_residual_leaves_coarse_path() {
    for_depths(structural::residual_zeroing);
}

#[test]
fn coordconv_ablation_only_narrows_consumers() {
    for_depths(structural::coordconv_ablation);
}

#[test]
fn fusion_ablation_keeps_one_conv_per_level() {
    for_depths(structural::fusion_ablation);
}

#[test]
fn refinement_ablation_uses_heads_everywhere() {
    use fusiondepth::arch::{infer, ArchConfig, Network};
    let net = Network::new(ArchConfig { refinement: false, ..structural::config(4) }, 0).unwrap();
    let names = net.params().names();
    assert!(names.iter().all(|n| !n.starts_with("refine.")));
    for s in 0..4 {
        assert!(names.contains(&format!("head.{s}.weight").as_str()));
    }
    assert!(names.contains(&"dec.0.merge.weight"));
    let maps = infer(&net, &structural::image(4)).unwrap();
    assert_eq!(maps[0].shape(), structural::image(4).shape().with_channels(1));
}
