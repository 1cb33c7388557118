use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu_value(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `σ(x) + x σ(x) (1 - σ(x))`.
#[inline]
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

pub fn silu(tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
    let xd = x.shared_data();
    let out = xd.iter().map(|&v| silu_value(v)).collect();
    tape.custom(
        "silu",
        &[x],
        x.shape(),
        out,
        Box::new(move |g, _| {
            vec![Some(
                g.iter().zip(xd.iter()).map(|(gi, &v)| gi * silu_deriv(v)).collect(),
            )]
        }),
    )
}

/// Sine features `sin(f_j x_i + φ_ij)` for `x: batch × in`, `freqs: 1 × g`
/// and `phases: in × g`. Output is `batch × (in·g)` with column `i·g + j`.
pub fn sine_basis(tape: &mut Tape, x: &Tensor, freqs: &Tensor, phases: &Tensor) -> Result<Tensor> {
    let (batch, inp) = x.shape();
    let g = freqs.len();
    if freqs.rows() != 1 || phases.shape() != (inp, g) {
        return Err(Error::Shape {
            op: "sine_basis",
            lhs: freqs.shape(),
            rhs: phases.shape(),
        });
    }
    let (xd, fd, pd) = (x.shared_data(), freqs.shared_data(), phases.shared_data());
    let width = inp * g;
    let mut out = vec![0.0; batch * width];
    for b in 0..batch {
        for i in 0..inp {
            let xv = xd[b * inp + i];
            for j in 0..g {
                out[b * width + i * g + j] = (fd[j] * xv + pd[i * g + j]).sin();
            }
        }
    }
    tape.custom(
        "sine_basis",
        &[x, freqs, phases],
        (batch, width),
        out,
        Box::new(move |gr, needs| {
            let mut gx = needs[0].then(|| vec![0.0; batch * inp]);
            let mut gf = needs[1].then(|| vec![0.0; g]);
            let mut gp = needs[2].then(|| vec![0.0; inp * g]);
            for b in 0..batch {
                for i in 0..inp {
                    let xv = xd[b * inp + i];
                    let mut acc_x = 0.0;
                    for j in 0..g {
                        let c = gr[b * width + i * g + j] * (fd[j] * xv + pd[i * g + j]).cos();
                        acc_x += c * fd[j];
                        if let Some(gf) = gf.as_mut() {
                            gf[j] += c * xv;
                        }
                        if let Some(gp) = gp.as_mut() {
                            gp[i * g + j] += c;
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        gx[b * inp + i] = acc_x;
                    }
                }
            }
            vec![gx, gf, gp]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{check_gradients, GradCheckOptions};

    #[test]
    fn silu_values() {
        assert_eq!(silu_value(0.0), 0.0);
        assert_eq!(silu_deriv(0.0), 0.5);
        assert!((silu_value(20.0) - 20.0).abs() < 1e-7);
        assert!(silu_value(-800.0).is_finite());
    }

    #[test]
    fn silu_deriv_matches_finite_difference() {
        let h = 1e-6;
        for i in 0..100 {
            let x = -6.0 + 0.12 * i as f64;
            let fd = (silu_value(x + h) - silu_value(x - h)) / (2.0 * h);
            assert!((fd - silu_deriv(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn sine_constant_and_peak() {
        let mut tape = Tape::no_grad();
        let y = sine_basis(
            &mut tape,
            &Tensor::column(&[0.3, -0.8]),
            &Tensor::row(&[0.0]),
            &Tensor::scalar(0.7),
        )
        .unwrap();
        assert_eq!(y.data(), &[0.7f64.sin(), 0.7f64.sin()]);
        let y = sine_basis(
            &mut tape,
            &Tensor::scalar(0.5),
            &Tensor::row(&[std::f64::consts::PI]),
            &Tensor::scalar(0.0),
        )
        .unwrap();
        assert!((y.item().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sine_shape_mismatch() {
        let mut tape = Tape::no_grad();
        let r = sine_basis(&mut tape, &Tensor::zeros(2, 3), &Tensor::zeros(1, 4), &Tensor::zeros(2, 4));
        assert!(r.is_err());
    }

    #[test]
    fn sine_gradcheck() {
        let x = Tensor::from_rows(&[&[0.2, -0.5], &[0.9, 0.1], &[-0.3, -0.7]]).unwrap();
        let f = Tensor::row(&[1.0, 2.0, 3.0]);
        let p = Tensor::from_rows(&[&[0.1, 0.2, -0.3], &[0.5, -0.4, 0.0]]).unwrap();
        let r = check_gradients(
            &[x, f, p],
            |t, xs| {
                let s = sine_basis(t, &xs[0], &xs[1], &xs[2])?;
                let s2 = t.pow_int(&s, 2)?;
                let z = t.add(&s2, &s)?;
                t.sum(&z)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn silu_gradcheck() {
        let x = Tensor::row(&[-3.0, -0.5, 0.0, 0.4, 2.5]);
        let r = check_gradients(
            &[x],
            |t, xs| {
                let y = silu(t, &xs[0])?;
                let y = t.pow_int(&y, 2)?;
                t.sum(&y)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }
}
