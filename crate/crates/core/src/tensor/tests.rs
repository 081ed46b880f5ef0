use super::*;
use crate::error::CoreError;

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

fn param(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::param(shape.to_vec(), data.to_vec()).unwrap()
}

/// Central finite difference of `f` w.r.t. every element of `x`.
fn finite_diff(x: &Tensor<f64>, f: impl Fn() -> Tensor<f64>, eps: f64) -> Vec<f64> {
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let up = f().item().unwrap();
        x.data_mut()[i] = orig - eps;
        let down = f().item().unwrap();
        x.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    out
}

fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[test]
fn add_is_elementwise() {
    let a = tensor(&[2], &[1.0, 2.0]);
    let b = tensor(&[2], &[3.0, 4.0]);
    assert_eq!(a.add(&b).unwrap().to_vec(), vec![4.0, 6.0]);
}

#[test]
fn mul_by_zero_annihilates() {
    let x = tensor(&[2, 2], &[1.0, -2.0, 3.0, 4.0]);
    let z = Tensor::zeros(vec![2, 2]);
    assert_eq!(x.mul(&z).unwrap().to_vec(), vec![0.0; 4]);
}

#[test]
fn incompatible_shapes_error_names_both() {
    let a = Tensor::<f64>::zeros(vec![2, 3]);
    let b = Tensor::<f64>::zeros(vec![4]);
    match a.add(&b) {
        Err(CoreError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn trailing_broadcast_bias_add() {
    // [2,3] + [3] broadcasts along rows
    let a = tensor(&[2, 3], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let b = tensor(&[3], &[10.0, 20.0, 30.0]);
    assert_eq!(
        a.add(&b).unwrap().to_vec(),
        vec![10.0, 20.0, 30.0, 11.0, 21.0, 31.0]
    );
}

#[test]
fn broadcast_backward_reduces_to_operand_shape() {
    let a = param(&[2, 3], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.5]);
    let b = param(&[3], &[1.0, 2.0, 3.0]);
    let loss = a.mul(&b).unwrap().sum();
    loss.backward().unwrap();
    // d/db_j = sum_i a_ij
    assert_eq!(b.grad().unwrap(), vec![0.5, 0.5, 1.5]);
    assert_eq!(a.grad().unwrap(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
}

#[test]
fn identity_matmul_preserves() {
    let eye = tensor(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let x = tensor(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(eye.matmul(&x).unwrap().to_vec(), x.to_vec());
}

#[test]
fn row_times_column_is_dot_product() {
    let a = tensor(&[1, 3], &[1.0, 2.0, 3.0]);
    let b = tensor(&[3, 1], &[4.0, 5.0, 6.0]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[1, 1]);
    assert_eq!(c.to_vec(), vec![32.0]);
}

#[test]
fn matmul_inner_dim_mismatch_rejected() {
    let a = Tensor::<f64>::zeros(vec![2, 3]);
    let b = Tensor::<f64>::zeros(vec![4, 2]);
    assert!(matches!(
        a.matmul(&b),
        Err(CoreError::InnerDimMismatch { .. })
    ));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let a = Tensor::rand_uniform(vec![3, 4], -1.0, 1.0, &mut rng);
    let a = Tensor::param(vec![3, 4], a.to_vec()).unwrap();
    let b = Tensor::rand_uniform(vec![4, 2], -1.0, 1.0, &mut rng);
    let b = Tensor::param(vec![4, 2], b.to_vec()).unwrap();

    let loss = a.matmul(&b).unwrap().sum();
    loss.backward().unwrap();

    let fd_a = finite_diff(&a, || a.matmul(&b).unwrap().sum(), 1e-5);
    let fd_b = finite_diff(&b, || a.matmul(&b).unwrap().sum(), 1e-5);
    assert!(max_rel_err(&a.grad().unwrap(), &fd_a) <= 1e-4);
    assert!(max_rel_err(&b.grad().unwrap(), &fd_b) <= 1e-4);
}

#[test]
fn sum_backward_is_ones() {
    let x = param(&[4], &[1.0, 2.0, 3.0, 4.0]);
    x.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
}

#[test]
fn elementwise_square_backward_is_two_x() {
    let x = param(&[3], &[1.0, -2.0, 3.0]);
    x.mul(&x).unwrap().sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 6.0]);
}

#[test]
fn non_scalar_loss_rejected() {
    let x = param(&[2], &[1.0, 2.0]);
    assert!(matches!(
        x.backward(),
        Err(CoreError::NonScalarLoss { .. })
    ));
}

#[test]
fn grads_accumulate_until_zeroed() {
    let x = param(&[3], &[1.0, -2.0, 3.0]);
    let run = || x.mul(&x).unwrap().sum();
    run().backward().unwrap();
    let single = x.grad().unwrap();
    run().backward().unwrap();
    let doubled = x.grad().unwrap();
    for (s, d) in single.iter().zip(&doubled) {
        assert_eq!(*d, 2.0 * s); // exactly 2x, bit-for-bit
    }
    x.zero_grad();
    assert!(x.grad().is_none());
}

#[test]
fn backward_twice_on_same_graph_doubles() {
    let x = param(&[2], &[0.5, -1.5]);
    let loss = x.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    let once = x.grad().unwrap();
    loss.backward().unwrap();
    let twice = x.grad().unwrap();
    assert_eq!(twice, once.iter().map(|v| 2.0 * v).collect::<Vec<_>>());
}

#[test]
fn shared_input_gradients_sum_over_consumers() {
    // loss = x*y + x  =>  dx = y + 1, dy = x
    let x = param(&[1], &[3.0]);
    let y = param(&[1], &[5.0]);
    let loss = x.mul(&y).unwrap().add(&x).unwrap().sum();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![6.0]);
    assert_eq!(y.grad().unwrap(), vec![3.0]);
}

#[test]
fn untracked_forward_is_bit_identical() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::<f64>::rand_uniform(vec![4, 4], -1.0, 1.0, &mut rng);
    let w = Tensor::param(vec![4, 4], x.to_vec()).unwrap();
    let run = |input: &Tensor<f64>| {
        input
            .matmul(&w)
            .unwrap()
            .exp()
            .mul_scalar(0.5)
            .sum()
            .item()
            .unwrap()
    };
    let tracked = run(&x);
    let untracked = no_grad(|| run(&x));
    assert_eq!(tracked.to_bits(), untracked.to_bits());
}

#[test]
fn concat_shapes_and_backward_split() {
    let a = param(&[2, 3], &[1.0; 6]);
    let b = param(&[2, 5], &[2.0; 10]);
    let c = Tensor::concat(&[&a, &b], 1).unwrap();
    assert_eq!(c.shape(), &[2, 8]);

    // weight the sum so each position has a distinct gradient
    let w = tensor(
        &[2, 8],
        &(0..16).map(|i| i as f64).collect::<Vec<_>>(),
    );
    c.mul(&w).unwrap().sum().backward().unwrap();
    // grad of a = columns 0..3 of w rows, grad of b = columns 3..8
    assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 2.0, 8.0, 9.0, 10.0]);
    assert_eq!(
        b.grad().unwrap(),
        vec![3.0, 4.0, 5.0, 6.0, 7.0, 11.0, 12.0, 13.0, 14.0, 15.0]
    );
}

#[test]
fn concat_axis_extent_mismatch_rejected() {
    let a = Tensor::<f64>::zeros(vec![2, 3]);
    let b = Tensor::<f64>::zeros(vec![3, 3]);
    assert!(a.concat_with(&b, 1).is_err());
}

#[test]
fn reshape_preserves_row_major_order() {
    let x = tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let y = x.reshape(vec![6]).unwrap();
    assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(x.reshape(vec![4]).is_err());
}

#[test]
fn transpose_round_trip() {
    let x = tensor(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let y = x.transpose(0, 1).unwrap();
    assert_eq!(y.shape(), &[3, 2]);
    assert_eq!(y.to_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    let z = y.transpose(0, 1).unwrap();
    assert_eq!(z.to_vec(), x.to_vec());
}

#[test]
fn slice_extracts_and_scatters_gradient() {
    let x = param(&[2, 4], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    let s = x.slice(1, 1, 3).unwrap();
    assert_eq!(s.shape(), &[2, 2]);
    assert_eq!(s.to_vec(), vec![1.0, 2.0, 5.0, 6.0]);
    s.sum().backward().unwrap();
    assert_eq!(
        x.grad().unwrap(),
        vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]
    );
}

#[test]
fn gather_op_pads_and_scatters() {
    let x = param(&[3], &[10.0, 20.0, 30.0]);
    let map = std::rc::Rc::new(vec![2usize, GATHER_PAD, 0, 2]);
    let g = gather_op("test_gather", &x, vec![4], map);
    assert_eq!(g.to_vec(), vec![30.0, 0.0, 10.0, 30.0]);
    g.sum().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 2.0]);
}

#[test]
fn composite_chain_matches_finite_differences() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::param(
        vec![2, 3],
        Tensor::<f64>::rand_uniform(vec![2, 3], -1.0, 1.0, &mut rng).to_vec(),
    )
    .unwrap();
    let w = Tensor::param(
        vec![3, 3],
        Tensor::<f64>::rand_uniform(vec![3, 3], -1.0, 1.0, &mut rng).to_vec(),
    )
    .unwrap();
    let f = || {
        x.matmul(&w)
            .unwrap()
            .exp()
            .clamp(0.2, 5.0)
            .ln()
            .mul_scalar(0.7)
            .sum()
    };
    f().backward().unwrap();
    let fd_x = finite_diff(&x, f, 1e-5);
    let fd_w = finite_diff(&w, f, 1e-5);
    assert!(max_rel_err(&x.grad().unwrap(), &fd_x) <= 1e-4);
    assert!(max_rel_err(&w.grad().unwrap(), &fd_w) <= 1e-4);
}

#[test]
fn bmm_matches_per_batch_matmul() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let a = Tensor::<f64>::rand_uniform(vec![2, 3, 4], -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::rand_uniform(vec![2, 4, 2], -1.0, 1.0, &mut rng);
    let c = a.bmm(&b).unwrap();
    for i in 0..2 {
        let ai = a.slice(0, i, i + 1).unwrap().reshape(vec![3, 4]).unwrap();
        let bi = b.slice(0, i, i + 1).unwrap().reshape(vec![4, 2]).unwrap();
        let ci = ai.matmul(&bi).unwrap();
        let expect = ci.to_vec();
        let got = c.slice(0, i, i + 1).unwrap().to_vec();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}

#[test]
fn broadcast_to_expands_and_reduces() {
    let t = param(&[1, 1, 3], &[1.0, 2.0, 3.0]);
    let b = t.broadcast_to(vec![2, 1, 3]).unwrap();
    assert_eq!(b.to_vec(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    b.sum().backward().unwrap();
    assert_eq!(t.grad().unwrap(), vec![2.0, 2.0, 2.0]);
}

#[test]
fn argmax_breaks_ties_by_first_occurrence() {
    let x = tensor(&[2, 3], &[1.0, 3.0, 3.0, 2.0, 2.0, 2.0]);
    assert_eq!(x.argmax_last_axis(), vec![1, 0]);
}

#[test]
fn detach_cuts_the_graph() {
    let x = param(&[2], &[1.0, 2.0]);
    let y = x.mul(&x).unwrap().detach();
    assert!(!y.tracks_grad());
    let loss = y.mul(&x).unwrap().sum();
    loss.backward().unwrap();
    // only the live path contributes: d/dx (x^2_detached * x) = x^2
    assert_eq!(x.grad().unwrap(), vec![1.0, 4.0]);
}
