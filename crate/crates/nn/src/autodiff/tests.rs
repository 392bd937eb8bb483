use std::rc::Rc;

use super::*;
use crate::NnError;

fn store_with(values: &[(&str, usize, usize, Vec<f64>)]) -> (ParameterStore<f64>, Vec<ParamId>) {
    let mut s = ParameterStore::new(0);
    let ids = values
        .iter()
        .map(|(n, r, c, v)| s.insert(n, Tensor::from_vec(*r, *c, v.clone()), Init::Given).unwrap())
        .collect();
    (s, ids)
}

fn random_store(seed: u64, shapes: &[(&str, usize, usize)]) -> (ParameterStore<f64>, Vec<ParamId>) {
    let mut s = ParameterStore::new(seed);
    let ids = shapes
        .iter()
        .map(|(n, r, c)| s.add(n, *r, *c, Init::Normal { std: 0.5 }).unwrap())
        .collect();
    (s, ids)
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let s = ParameterStore::<f64>::new(0);
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::zeros(1, 2));
    let y = g.row_softmax(x).unwrap();
    assert_eq!(g.value(y).data, vec![0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let (s, ids) = random_store(3, &[("x", 5, 9)]);
    let mut g = Graph::new(&s);
    let x = g.param(ids[0]);
    let y = g.row_softmax(x).unwrap();
    for r in 0..5 {
        let total: f64 = g.value(y).row(r).iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn identity_matmul() {
    let (s, ids) = random_store(1, &[("m", 2, 3)]);
    let mut g = Graph::new(&s);
    let i = g.constant(Tensor::identity(2));
    let m = g.param(ids[0]);
    let p = g.matmul(i, m).unwrap();
    assert_eq!(g.value(p), s.value(ids[0]));
}

#[test]
fn cross_entropy_of_confident_logits() {
    let s = ParameterStore::<f64>::new(0);
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::from_vec(1, 2, vec![10.0, -10.0]));
    let l = g.cross_entropy(x, &[0]).unwrap();
    // independent scalar evaluation: -ln(e^10 / (e^10 + e^-10)) = ln(1 + e^-20)
    let expected = (-20.0f64).exp().ln_1p();
    assert!((g.value(l).item() - expected).abs() < 1e-20);
    assert!((expected - 2.0611536e-9).abs() < 1e-15);
}

#[test]
fn shape_errors_name_the_op() {
    let s = ParameterStore::<f64>::new(0);
    let mut g = Graph::new(&s);
    let a = g.constant(Tensor::zeros(2, 3));
    let b = g.constant(Tensor::zeros(2, 3));
    match g.matmul(a, b) {
        Err(NnError::Shape { op, left, right }) => {
            assert_eq!(op, "matmul");
            assert_eq!((left, right), ([2, 3], [2, 3]));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(g.add_row(a, b), Err(NnError::Shape { op: "add_row", .. })));
}

#[test]
fn grad_of_sum_is_ones() {
    let (s, ids) = random_store(2, &[("w", 3, 4)]);
    let mut g = Graph::new(&s);
    let w = g.param(ids[0]);
    let l = g.sum(w).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(ids[0]).unwrap().data.iter().all(|&v| v == 1.0));
}

#[test]
fn grad_of_sum_of_squares_is_twice() {
    let (s, ids) = random_store(2, &[("w", 3, 4)]);
    let mut g = Graph::new(&s);
    let w = g.param(ids[0]);
    let sq = g.mul(w, w).unwrap();
    let l = g.sum(sq).unwrap();
    let grads = g.backward(l).unwrap();
    let expected: Vec<f64> = s.value(ids[0]).data.iter().map(|v| 2.0 * v).collect();
    assert_eq!(grads.get(ids[0]).unwrap().data, expected);
}

#[test]
fn backward_errors() {
    let (s, ids) = random_store(2, &[("w", 2, 2)]);
    let mut g = Graph::new(&s);
    let w = g.param(ids[0]);
    assert!(matches!(g.backward(w), Err(NnError::NonScalarLoss([2, 2]))));
    let l = g.sum(w).unwrap();
    g.backward(l).unwrap();
    assert!(matches!(g.backward(l), Err(NnError::BackwardTwice)));

    let mut other = Graph::new(&s);
    assert!(matches!(other.backward(l), Err(NnError::DetachedGraph)));
}

#[test]
fn backward_is_linear() {
    let (s, ids) = random_store(5, &[("w", 3, 3), ("v", 3, 3)]);
    let build = |g: &mut Graph<'_, f64>, which: u8| -> Var {
        let w = g.param(ids[0]);
        let v = g.param(ids[1]);
        let p = g.matmul(w, v).unwrap();
        let t = g.tanh(p).unwrap();
        let l1 = g.sum(t).unwrap();
        let sq = g.mul(w, v).unwrap();
        let l2 = g.sum(sq).unwrap();
        match which {
            1 => l1,
            2 => l2,
            _ => g.add(l1, l2).unwrap(),
        }
    };
    let grad_of = |which| {
        let mut g = Graph::new(&s);
        let l = build(&mut g, which);
        g.backward(l).unwrap()
    };
    let (g1, g2, g12) = (grad_of(1), grad_of(2), grad_of(3));
    for id in &ids {
        for k in 0..9 {
            let sum = g1.get(*id).unwrap().data[k] + g2.get(*id).unwrap().data[k];
            assert!((sum - g12.get(*id).unwrap().data[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn dropout_off_is_identity_and_on_rescales() {
    let (s, ids) = random_store(9, &[("x", 20, 50)]);
    let mut g = Graph::new(&s);
    let x = g.param(ids[0]);
    let y = g.dropout(x, 0.5).unwrap();
    assert_eq!(g.value(y), s.value(ids[0]));

    let mut g = Graph::training(&s, 1);
    let x = g.param(ids[0]);
    let y = g.dropout(x, 0.8).unwrap();
    let (xv, yv) = (s.value(ids[0]), g.value(y));
    let mut dropped = 0;
    for (a, b) in xv.data.iter().zip(&yv.data) {
        if *b == 0.0 {
            dropped += 1;
        } else {
            assert!((b - a / 0.8).abs() < 1e-12);
        }
    }
    assert!(dropped > 100 && dropped < 300, "dropped {dropped} of 1000");
}

#[test]
fn quadratic_grad_check() {
    let (mut s, ids) = random_store(11, &[("w", 3, 2)]);
    let report = grad_check(&mut s, 1e-5, |g| {
        let w = g.param(ids[0]);
        let sq = g.mul(w, w)?;
        let l = g.sum(sq)?;
        g.scale(l, 0.5)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
    assert_eq!(report.entries_checked, 6);
}

#[test]
fn single_precision_grad_check_is_refused() {
    let mut s = ParameterStore::<f32>::new(0);
    let id = s.bias("b", 2).unwrap();
    let r = grad_check(&mut s, 1e-6, |g| {
        let b = g.param(id);
        g.sum(b)
    });
    assert!(matches!(r, Err(NnError::SinglePrecisionGradCheck)));
}

#[test]
fn three_layer_tanh_mlp_grad_check() {
    let (mut s, ids) = random_store(
        21,
        &[("w1", 4, 6), ("b1", 1, 6), ("w2", 6, 5), ("b2", 1, 5), ("w3", 5, 3), ("b3", 1, 3), ("x", 7, 4)],
    );
    let report = grad_check(&mut s, 1e-6, |g| {
        let x = g.param(ids[6]);
        let mut h = x;
        for layer in 0..3 {
            let w = g.param(ids[2 * layer]);
            let b = g.param(ids[2 * layer + 1]);
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = g.tanh(z)?;
        }
        g.cross_entropy(h, &[0, 1, 2, 0, 1, 2, 0])
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

/// Exercises every recorded operation in one loss.
#[test]
fn every_op_grad_check() {
    let (mut s, ids) = random_store(
        33,
        &[
            ("a", 4, 6),
            ("b", 6, 4),
            ("row", 1, 6),
            ("col", 4, 1),
            ("c", 4, 6),
            ("table", 5, 3),
            ("u", 3, 9),
        ],
    );
    let gather_idx: Rc<[usize]> = vec![0, 1, 2, 3, 4, 0, 1, 1, 2, 2, 5, 5, 4, 3, 2, 1].into();
    let report = grad_check(&mut s, 1e-6, move |g| {
        let a = g.param(ids[0]);
        let b = g.param(ids[1]);
        let row = g.param(ids[2]);
        let col = g.param(ids[3]);
        let c = g.param(ids[4]);
        let table = g.param(ids[5]);
        let u = g.param(ids[6]);

        let ab = g.matmul(a, b)?; // 4x4
        let abt = g.matmul_nt(a, c)?; // 4x4
        let x = g.add(ab, abt)?;
        let x = g.add_col(x, col)?;
        let t = g.transpose(x)?;
        let sm = g.row_softmax(t)?;
        let ls = g.log_softmax(x)?;
        let prod = g.mul(sm, ls)?;

        let r = g.add_row(a, row)?;
        let r = g.mul_row(r, row)?;
        let r = g.sigmoid(r)?;
        let r = g.layer_norm(r)?;
        let r = g.scale(r, 0.7)?;
        let parts = g.split_cols(r, &[2, 4])?;
        let cat = g.concat_cols(&[parts[1], parts[0]])?;
        let top = g.slice_rows(cat, 0, 2)?;
        let bottom = g.slice_rows(cat, 2, 2)?;
        let stacked = g.concat_rows(&[bottom, top])?;
        let gathered = g.gather_cols(stacked, gather_idx.clone(), 4)?;
        let scattered = g.scatter_cols(gathered, gather_idx.clone(), 6)?;

        let emb = g.embedding(table, &[4, 0, 4, 2])?; // 4x3
        let eu = g.matmul(emb, u)?; // 4x9
        let cd = g.chunk_dot(eu, emb)?; // 4x3

        let l1 = g.sum(prod)?;
        let l2 = g.sum(scattered)?;
        let tanh = g.tanh(cd)?;
        let l3 = g.cross_entropy(tanh, &[0, 2, 1, 1])?;
        let l = g.add(l1, l2)?;
        g.add(l, l3)
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn unused_parameters_have_no_gradient() {
    let (s, ids) = random_store(1, &[("used", 2, 2), ("unused", 2, 2)]);
    let mut g = Graph::new(&s);
    let u = g.param(ids[0]);
    let l = g.sum(u).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.get(ids[0]).is_some());
    assert!(grads.get(ids[1]).is_none());
}

#[test]
fn layer_norm_rows_are_standardized() {
    let (s, ids) = store_with(&[("x", 2, 4, vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.0, 0.0, 1.0])]);
    let mut g = Graph::new(&s);
    let x = g.param(ids[0]);
    let y = g.layer_norm(x).unwrap();
    for r in 0..2 {
        let row = g.value(y).row(r);
        let mean: f64 = row.iter().sum::<f64>() / 4.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}
