use ctagd::smallnet::{softmax, Activation, Dataset, Mlp, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn net(hidden: Activation) -> Mlp {
    Mlp::new(MlpSpec { widths: vec![2, 16, 3], activations: vec![hidden, Activation::Identity] }).unwrap()
}

fn perturbed(net: &Mlp, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = net.init_params(1);
    p.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    p
}

fn dataset(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    Dataset {
        inputs: (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect(),
        labels: (0..n).map(|i| i % 3).collect(),
    }
}

/// Dense layers written out separately: `W` is stored row-major as `[out][in]`.
fn reference_logits(widths: &[usize], acts: &[fn(f64) -> f64], params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut offset = 0;
    for (l, pair) in widths.windows(2).enumerate() {
        let (n_in, n_out) = (pair[0], pair[1]);
        let w = &params[offset..offset + n_in * n_out];
        let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let mut next = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let mut h = b[o];
            for i in 0..n_in {
                h += w[o * n_in + i] * a[i];
            }
            next.push(acts[l](h));
        }
        a = next;
    }
    a
}

#[test]
fn backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for hidden in [Activation::Tanh, Activation::Relu] {
        let net = net(hidden);
        let params = perturbed(&net, &mut rng);
        let data = dataset(&mut rng, 12);
        let idx: Vec<usize> = (0..data.len()).collect();
        let (loss, grad) = net.loss_and_grad(&params, &data, &idx).unwrap();
        assert!((loss - net.mean_loss(&params, &data).unwrap()).abs() < 1e-12);
        let h = 1e-5;
        for i in 0..params.len() {
            let (mut up, mut down) = (params.clone(), params.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (net.mean_loss(&up, &data).unwrap() - net.mean_loss(&down, &data).unwrap()) / (2.0 * h);
            let scale = grad[i].abs().max(fd.abs()).max(1e-7);
            assert!((grad[i] - fd).abs() / scale <= 1e-4, "{hidden:?} param {i}: {} vs {fd}", grad[i]);
        }
    }
}

#[test]
fn forward_matches_reference_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = MlpSpec { widths: vec![2, 5, 4, 3], activations: vec![Activation::Tanh, Activation::Relu, Activation::Identity] };
    let net = Mlp::new(spec.clone()).unwrap();
    let params: Vec<f64> = (0..net.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let acts: [fn(f64) -> f64; 3] = [f64::tanh, |v| v.max(0.0), |v| v];
    for _ in 0..50 {
        let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let got = net.forward(&params, &x).unwrap();
        let want = reference_logits(&spec.widths, &acts, &params, &x);
        for (a, b) in got.logits().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn shape_mismatch_is_a_usage_error() {
    let net = net(Activation::Relu);
    let params = net.init_params(0);
    assert!(net.forward(&params, &[1.0, 2.0, 3.0]).is_err());
    assert!(net.forward(&params[1..], &[1.0, 2.0]).is_err());
}

#[test]
fn loss_is_nonnegative_and_softmax_sums_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = net(Activation::Relu);
    let params = perturbed(&net, &mut rng);
    let data = dataset(&mut rng, 30);
    assert!(net.mean_loss(&params, &data).unwrap() >= 0.0);
    for x in &data.inputs {
        let p = softmax(net.forward(&params, x).unwrap().logits());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
