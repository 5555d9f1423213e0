mod common;

use common::grad;

#[test]
fn conv2d() {
    grad::conv2d();
}

#[test]
fn dense() {
    grad::dense();
}

#[test]
fn batchnorm_train_mode() {
    grad::batchnorm_train_mode();
}

#[test]
fn pooling() {
    grad::pooling();
}

#[test]
fn relu_away_from_kink() {
    grad::relu_away_from_kink();
}

#[test]
fn weighted_cross_entropy() {
    grad::weighted_cross_entropy();
}

#[test]
fn whole_network() {
    grad::whole_network();
}
