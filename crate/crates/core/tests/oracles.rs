mod support;

use mtfer_core::layers::{Conv2d, Padding};
use mtfer_core::Tensor;
use support::{naive_conv, oracle_suite};

#[test]
fn kernels_match_nested_loops_on_random_instances() {
    for (kind, worst) in oracle_suite(99, 60) {
        assert!(worst <= 1e-12, "{kind} deviates by {worst:e}");
    }
}

#[test]
fn same_padding_splits_odd_totals_bottom_heavy() {
    // 1×4 input, k=2, stride 1: one padding row and column, each placed
    // after the input, so the kernel's bottom row only ever sees zeros
    let x = Tensor::new(vec![1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let w = Tensor::new(vec![2, 2, 1, 1], vec![1.0, 10.0, 100.0, 1000.0]).unwrap();
    let conv = Conv2d::new(w, Tensor::zeros(&[1]), 1, Padding::Same).unwrap();
    let y = conv.forward(&x).unwrap().0;
    assert_eq!(y.data(), [21.0, 32.0, 43.0, 4.0]);
    assert_eq!(naive_conv(&conv, &x), y);
}
