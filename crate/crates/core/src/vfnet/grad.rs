use super::{check_dim, cosine_similarity, pair_loss, pair_probability, Branch, BranchTrace, VfNetParams};
use crate::error::{Error, Result};
use crate::scalar::{axpy, norm, Scalar};
use crate::store::Label;

/// Loss of one labeled pair and its exact gradient with respect to every parameter.
pub fn pair_grad<T: Scalar>(
    params: &VfNetParams<T>,
    e_v: &[T],
    e_f: &[T],
    label: Label,
) -> Result<(T, VfNetParams<T>)> {
    let mut grad = params.zeros_like();
    let loss = pair_grad_accumulate(params, e_v, e_f, label, &mut grad)?;
    Ok((loss, grad))
}

/// As [`pair_grad`], adding the gradient into `grad` and returning the loss.
pub fn pair_grad_accumulate<T: Scalar>(
    params: &VfNetParams<T>,
    e_v: &[T],
    e_f: &[T],
    label: Label,
    grad: &mut VfNetParams<T>,
) -> Result<T> {
    check_dim("voice embedding", params.voice.input_dim(), e_v.len())?;
    check_dim("face embedding", params.face.input_dim(), e_f.len())?;
    let tv = params.voice.trace(e_v);
    let tf = params.face.trace(e_f);

    let nv = norm(&tv.out);
    let nf = norm(&tf.out);
    if nv == T::zero() {
        return Err(Error::ZeroNorm("transformed voice embedding"));
    }
    if nf == T::zero() {
        return Err(Error::ZeroNorm("transformed face embedding"));
    }
    let s = cosine_similarity(&tv.out, &tf.out)?;
    let p = pair_probability(s);
    let loss = pair_loss(&p, label);

    let two = T::lit(2.0);
    let dl_ds = match label {
        Label::Target => -two * p.p_diff,
        Label::Nontarget => two * p.p_same,
    };

    // dS/du = w/(|u||w|) - S u/|u|^2
    let inv = T::one() / (nv * nf);
    let mut gv: Vec<T> = tf.out.iter().map(|&w| dl_ds * w * inv).collect();
    axpy(-dl_ds * s / (nv * nv), &tv.out, &mut gv);
    let mut gf: Vec<T> = tv.out.iter().map(|&u| dl_ds * u * inv).collect();
    axpy(-dl_ds * s / (nf * nf), &tf.out, &mut gf);

    backprop(&params.voice, &tv, e_v, &gv, &mut grad.voice);
    backprop(&params.face, &tf, e_f, &gf, &mut grad.face);
    Ok(loss)
}

fn backprop<T: Scalar>(
    branch: &Branch<T>,
    trace: &BranchTrace<T>,
    input: &[T],
    g_out: &[T],
    grad: &mut Branch<T>,
) {
    let hidden_dim = branch.fc2.inputs;
    for (o, &g) in g_out.iter().enumerate() {
        grad.fc2.bias[o] += g;
        axpy(g, &trace.hidden, &mut grad.fc2.weight[o * hidden_dim..(o + 1) * hidden_dim]);
    }
    let mut g_hidden = branch.fc2.backward_input(g_out);
    for (g, &pre) in g_hidden.iter_mut().zip(&trace.pre) {
        if pre <= T::zero() {
            *g = T::zero();
        }
    }
    let in_dim = branch.fc1.inputs;
    for (o, &g) in g_hidden.iter().enumerate() {
        if g != T::zero() {
            grad.fc1.bias[o] += g;
            axpy(g, input, &mut grad.fc1.weight[o * in_dim..(o + 1) * in_dim]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfnet::Architecture;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss_at(p: &VfNetParams<f64>, v: &[f64], f: &[f64], label: Label) -> f64 {
        pair_loss(&p.score(v, f).unwrap(), label)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let arch = Architecture { voice_dim: 6, face_dim: 5, hidden_dim: 8, output_dim: 4 };
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..10u64 {
            let mut p = VfNetParams::<f64>::init(arch, trial);
            for s in p.slices_mut() {
                for x in s.iter_mut() {
                    *x += rng.random_range(-0.1..0.1);
                }
            }
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = if trial % 2 == 0 { Label::Target } else { Label::Nontarget };
            let (loss, g) = pair_grad(&p, &v, &f, label).unwrap();
            assert!((loss - loss_at(&p, &v, &f, label)).abs() < 1e-14);
            let h = 1e-5;
            for i in 0..p.num_params() {
                let x0 = p.get_flat(i);
                p.set_flat(i, x0 + h);
                let up = loss_at(&p, &v, &f, label);
                p.set_flat(i, x0 - h);
                let down = loss_at(&p, &v, &f, label);
                p.set_flat(i, x0);
                let fd = (up - down) / (2.0 * h);
                let an = g.get_flat(i);
                if an.abs() < 1e-8 {
                    assert!((fd - an).abs() < 1e-8, "coord {i}: fd {fd} analytic {an}");
                } else {
                    assert!(((fd - an) / an).abs() < 1e-4, "coord {i}: fd {fd} analytic {an}");
                }
            }
        }
    }

    #[test]
    fn loss_slope_in_similarity() {
        // d/dS of -ln logistic(2S - 1) is -2 (1 - p_same)
        for s in [-0.8, 0.0, 0.5, 0.99] {
            let h = 1e-6;
            let l = |s: f64| pair_loss(&pair_probability(s), Label::Target);
            let fd = (l(s + h) - l(s - h)) / (2.0 * h);
            let p = pair_probability(s).p_same;
            assert!((fd + 2.0 * (1.0 - p)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_norm_output_is_an_error() {
        let p = VfNetParams::<f64>::zeros(Architecture::with_inputs(3, 3));
        assert!(matches!(
            pair_grad(&p, &[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0], Label::Target),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn accumulate_adds_onto_existing_gradient() {
        let p = VfNetParams::<f64>::init(Architecture { voice_dim: 3, face_dim: 3, hidden_dim: 5, output_dim: 2 }, 2);
        let v = [0.2, -0.4, 0.9];
        let f = [0.5, 0.1, -0.3];
        let (_, g) = pair_grad(&p, &v, &f, Label::Nontarget).unwrap();
        let mut acc = g.clone();
        pair_grad_accumulate(&p, &v, &f, Label::Nontarget, &mut acc).unwrap();
        let mut doubled = g.clone();
        doubled.scale(2.0);
        for i in 0..p.num_params() {
            assert!((acc.get_flat(i) - doubled.get_flat(i)).abs() < 1e-15);
        }
    }
}
