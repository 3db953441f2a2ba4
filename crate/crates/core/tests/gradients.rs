//! Finite-difference checks in f64 for every differentiable primitive and a
//! full small network.

mod common;

use common::*;
use dbnet::loss::LossKind;

#[test]
fn conv2d_gradients() {
    let err = conv2d_error();
    assert!(err < TOL, "conv2d rel err {err}");
}

#[test]
fn gated_conv_gradients() {
    let err = gated_conv_error();
    assert!(err < TOL, "gated conv rel err {err}");
}

#[test]
fn gated_deconv_gradients() {
    let err = gated_deconv_error();
    assert!(err < TOL, "gated deconv rel err {err}");
}

#[test]
fn batch_norm_gradients() {
    let err = batch_norm_error();
    assert!(err < TOL, "batch norm rel err {err}");
}

#[test]
fn lstm_gradients() {
    let err = lstm_error();
    assert!(err < TOL, "lstm rel err {err}");
}

#[test]
fn bridge_gradients() {
    let err = bridge_error();
    assert!(err < TOL, "bridge rel err {err}");
}

#[test]
fn magnitude_loss_gradients() {
    let err = magnitude_loss_error();
    assert!(err < TOL, "magnitude loss rel err {err}");
}

#[test]
fn phase_constrained_loss_gradients() {
    let err = phase_constrained_loss_error();
    assert!(err < TOL, "phase constrained loss rel err {err}");
}

#[test]
fn full_network_gradients_magnitude_loss() {
    let err = full_network_error(LossKind::Mag);
    assert!(err < TOL, "network rel err {err}");
}

#[test]
fn full_network_gradients_pcm_loss() {
    let err = full_network_error(LossKind::Pcm);
    assert!(err < TOL, "network rel err {err}");
}
