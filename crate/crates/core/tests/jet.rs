use jetstorm_core::graph::nets::{mlp, MlpSpec};
use jetstorm_core::graph::{reverse_grad, Evaluator, Graph, GraphBuilder};
use jetstorm_core::jet::{embed_jets, jet_pushforward, Jet, JetExpansion, JetNodes};
use jetstorm_core::operator::MultiIndex;
use jetstorm_core::oracle::functions::{random_mlp, random_smooth};
use jetstorm_core::oracle::{fd_derivative, graph_fn, FdScheme};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `t -> F(a + sum_i v_i t^i / i!)` differentiated `j` times at 0.
fn fd_along_curve(f: &dyn Fn(&[f64]) -> f64, jet: &Jet, j: usize) -> f64 {
    let curve = |t: &[f64]| {
        let x: Vec<f64> = (0..jet.dim())
            .map(|n| {
                jet.primal()[n]
                    + (1..=jet.order())
                        .map(|i| jet.tangent(i)[n] * t[0].powi(i as i32) / factorial(i))
                        .sum::<f64>()
            })
            .collect();
        f(&x)
    };
    let target = MultiIndex::diagonal(0, j as u32).unwrap();
    let step = match j {
        1 | 2 => 1e-3,
        3 | 4 => 5e-2,
        _ => 1e-1,
    };
    let scheme = FdScheme {
        step,
        richardson: 2,
    };
    fd_derivative(&curve, &[0.0], Some(&target), scheme)
        .unwrap()
        .value
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn small_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.6f64..0.6, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pushforward_matches_finite_differences(
        d in 1usize..=4,
        seed in 0u64..1000,
        smooth in any::<bool>(),
        raw in prop::collection::vec(small_vec(4), 6),
    ) {
        let (g, theta) = if smooth { random_smooth(d, seed).unwrap() } else { random_mlp(d, 6, 2, seed).unwrap() };
        let cut = |v: &Vec<f64>| v[..d].to_vec();
        let jet = Jet::new(cut(&raw[0]), raw[1..].iter().map(cut).collect()).unwrap();
        let out = jet_pushforward(&g, &jet, &theta).unwrap();
        let f = graph_fn(&g, &theta);
        for j in 1..=5 {
            let fd = fd_along_curve(&f, &jet, j);
            prop_assert!(rel_err(out.tangent(j)[0], fd) <= 1e-4,
                "order {j}: jet {} vs fd {fd}", out.tangent(j)[0]);
        }
    }

    #[test]
    fn homogeneous_scaling(seed in 0u64..1000, c in -2.0f64..2.0, v in small_vec(3)) {
        let (g, theta) = random_mlp(3, 5, 2, seed).unwrap();
        let a = vec![0.1, -0.2, 0.3];
        let base = jet_pushforward(&g, &Jet::line(a.clone(), v.clone(), 4).unwrap(), &theta).unwrap();
        let scaled_v: Vec<f64> = v.iter().map(|x| c * x).collect();
        let scaled = jet_pushforward(&g, &Jet::line(a, scaled_v, 4).unwrap(), &theta).unwrap();
        for j in 1..=4 {
            let expected = c.powi(j as i32) * base.tangent(j)[0];
            prop_assert!((scaled.tangent(j)[0] - expected).abs() <= 1e-12 * (1.0 + expected.abs()) * 10.0);
        }
    }
}

/// `F1`: input -> first hidden layer; `F2`: hidden -> scalar. Both graphs
/// and the composition share one flat parameter vector.
fn split_network(
    d: usize,
    h: usize,
    seed: u64,
) -> (Graph, Graph, Graph, Vec<f64>, Vec<f64>, Vec<f64>) {
    let spec1 = MlpSpec {
        hidden: vec![],
        output: h,
        ..MlpSpec::tanh(d, h, 0)
    };
    let spec2 = MlpSpec::tanh(h, h, 1);
    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let n1 = mlp(&mut b, x, &spec1).unwrap();
    let hid = b.tanh(n1.output);
    let n2 = mlp(&mut b, hid, &spec2).unwrap();
    let full = b.finish(&[n2.output]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = {
        let mut t = n1.init(&full, &mut rng, 0.3);
        let t2 = n2.init(&full, &mut rng, 0.3);
        let split = full.param_offset(2);
        t[split..].copy_from_slice(&t2[split..]);
        t
    };
    let split = full.param_offset(2);

    let mut b = GraphBuilder::new();
    let x = b.input(d);
    let n1 = mlp(&mut b, x, &spec1).unwrap();
    let hid = b.tanh(n1.output);
    let first = b.finish(&[hid]).unwrap();

    let mut b = GraphBuilder::new();
    let x = b.input(h);
    let n2 = mlp(&mut b, x, &spec2).unwrap();
    let second = b.finish(&[n2.output]).unwrap();

    let (t1, t2) = (theta[..split].to_vec(), theta[split..].to_vec());
    (full, first, second, theta, t1, t2)
}

#[test]
fn composition_is_a_homomorphism() {
    let (full, first, second, theta, t1, t2) = split_network(3, 4, 7);
    let jet = Jet::new(
        vec![0.2, -0.4, 0.1],
        vec![
            vec![1.0, 0.5, -0.3],
            vec![0.2, 0.0, 0.7],
            vec![-0.1, 0.3, 0.2],
            vec![0.0, 0.4, 0.0],
        ],
    )
    .unwrap();
    let direct = jet_pushforward(&full, &jet, &theta).unwrap();
    let mid = jet_pushforward(&first, &jet, &t1).unwrap();
    let staged = jet_pushforward(&second, &mid, &t2).unwrap();
    assert!((direct.primal()[0] - staged.primal()[0]).abs() <= 1e-12);
    for j in 1..=4 {
        let (a, b) = (direct.tangent(j)[0], staged.tangent(j)[0]);
        assert!(
            (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
            "order {j}: {a} vs {b}"
        );
    }
}

#[test]
fn first_tangent_is_the_jvp() {
    // the same network with x held as a parameter: reverse mode gives the
    // input gradient independently of the jet machinery
    let d = 4;
    let (g, theta) = random_mlp(d, 6, 2, 3).unwrap();
    let x = vec![0.3, -0.1, 0.5, 0.2];
    let v = vec![1.0, -2.0, 0.5, 0.25];

    let mut b = GraphBuilder::new();
    let xp = b.param(d);
    let params: Vec<_> = g.params().iter().map(|&p| b.param(g.node(p).len)).collect();
    let out = embed_jets(&mut b, &g, &params, &[JetNodes::primal_only(xp)], 0).unwrap();
    let gx = b.finish(&[out[0].primal]).unwrap();
    let mut all = x.clone();
    all.extend_from_slice(&theta);
    let grad = reverse_grad(&gx, &[], &all).unwrap();
    let jvp: f64 = grad[..d].iter().zip(&v).map(|(a, b)| a * b).sum();

    let out = jet_pushforward(&g, &Jet::line(x, v, 1).unwrap(), &theta).unwrap();
    assert!((out.tangent(1)[0] - jvp).abs() <= 1e-12 * (1.0 + jvp.abs()));
}

/// Loss `(t_2)^2` of a second-order jet along `e_1`.
fn second_order_loss(g: &Graph) -> JetExpansion {
    JetExpansion::with_head(g, 2, vec![vec![1]], &[], |b, out, _| {
        let t2 = out.tangent_or_zero(b, 0, 2);
        Ok(vec![b.hadamard(t2, t2)])
    })
    .unwrap()
}

#[test]
fn jet_loss_gradient_matches_finite_differences() {
    let (g, theta) = random_mlp(3, 5, 2, 11).unwrap();
    let exp = second_order_loss(&g);
    let x = [0.2, 0.1, -0.3];
    let e1 = [1.0, 0.0, 0.0];
    let loss = |th: &[f64]| {
        let mut ev = Evaluator::new(exp.graph());
        exp.forward(&mut ev, &x, &[&e1], &[], th).unwrap();
        ev.output(exp.graph(), th, 0)[0]
    };
    let mut ev = Evaluator::new(exp.graph());
    exp.forward(&mut ev, &x, &[&e1], &[], &theta).unwrap();
    let mut grad = vec![0.0; theta.len()];
    ev.backward(exp.graph(), &theta, &[(0, &[1.0])], &mut grad)
        .unwrap();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[i] += h;
        tm[i] -= h;
        let fd = (loss(&tp) - loss(&tm)) / (2.0 * h);
        worst =
            worst.max((grad[i] - fd).abs() / (grad.iter().map(|g| g.abs()).fold(0.0, f64::max)));
    }
    assert!(worst <= 1e-6, "worst relative error {worst}");
}

#[test]
fn zero_tangents_reduce_to_plain_gradient() {
    let (g, theta) = random_mlp(3, 5, 2, 5).unwrap();
    let x = [0.1, 0.2, 0.3];
    let exp = JetExpansion::with_head(&g, 2, vec![vec![]], &[], |_, out, _| Ok(vec![out.primal]))
        .unwrap();
    let mut ev = Evaluator::new(exp.graph());
    exp.forward(&mut ev, &x, &[], &[], &theta).unwrap();
    let mut grad = vec![0.0; theta.len()];
    ev.backward(exp.graph(), &theta, &[(0, &[1.0])], &mut grad)
        .unwrap();
    assert_eq!(grad, reverse_grad(&g, &[&x], &theta).unwrap());
}
