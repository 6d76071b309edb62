use cifm_autograd::check::{numeric_gradient, relative_error};
use cifm_autograd::{Graph, Matrix};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c).prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

/// A smooth composite touching most ops: `sum(tanh(x·xᵀ) ⊙ log_softmax(x·xᵀ)) + lme(x)`.
fn composite(g: &mut Graph<'_>, x: cifm_autograd::Var) -> cifm_autograd::Var {
    let xt = g.transpose(x);
    let s = g.matmul(x, xt);
    let a = g.tanh(s);
    let b = g.log_softmax(s);
    let p = g.mul(a, b);
    let total = g.sum(p);
    let l = g.log_mean_exp(x, None);
    g.add(total, l)
}

proptest! {
    #[test]
    fn composite_gradient(x in matrix()) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let out = composite(&mut g, xv);
        let analytic = g.backward(out).get(xv).cloned().unwrap();
        let numeric = numeric_gradient(&x, 1e-6, |p| {
            let mut g = Graph::new();
            let xv = g.input(p.clone());
            let out = composite(&mut g, xv);
            g.scalar_value(out)
        });
        let scale = analytic.mapv(f64::abs).sum();
        prop_assert!(scale < 1e-6 || relative_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn log_softmax_rows_normalize(x in matrix()) {
        let mut g = Graph::new();
        let xv = g.input(x * 50.0);
        let y = g.log_softmax(xv);
        for row in g.value(y).rows() {
            prop_assert!((row.mapv(f64::exp).sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v <= 0.0));
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm(x in matrix()) {
        prop_assume!(x.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let mut g = Graph::new();
        let xv = g.input(x);
        let y = g.normalize_rows(xv);
        for row in g.value(y).rows() {
            prop_assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn log_mean_exp_bounds(x in matrix()) {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let l = g.log_mean_exp(xv, None);
        let v = g.scalar_value(l);
        let max = x.fold(f64::NEG_INFINITY, |m, &a| m.max(a));
        let mean = x.mean().unwrap();
        prop_assert!(v <= max + 1e-12 && v >= mean - 1e-12);
    }
}
