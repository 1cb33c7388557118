use super::linalg::gemm;
use super::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if a.shape() == (1, 1) {
        Ok(Bcast::LhsScalar)
    } else if b.shape() == (1, 1) {
        Ok(Bcast::RhsScalar)
    } else {
        Err(Error::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        })
    }
}

/// Reduces a cotangent to the shape of an operand that may have been broadcast.
fn reduce_to(g: Vec<f64>, scalar: bool) -> Vec<f64> {
    if scalar {
        vec![g.iter().sum()]
    } else {
        g
    }
}

impl Tape {
    /// `a (m x k) · b (k x n)`.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.shape();
        let (k2, n) = b.shape();
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(false, false, m, n, k, 1.0, a.data(), b.data(), 0.0, &mut out);
        let (ad, bd) = (a.shared_data(), b.shared_data());
        self.custom(
            "matmul",
            &[a, b],
            (m, n),
            out,
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(false, true, m, k, n, 1.0, g, &bd, 0.0, &mut ga);
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(true, false, k, n, m, 1.0, &ad, g, 0.0, &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// `a (m x k) · bᵀ` for `b: n x k`; the layout every layer stores its
    /// weights in.
    pub fn matmul_nt(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (m, k) = a.shape();
        let (n, k2) = b.shape();
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_nt",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(false, true, m, n, k, 1.0, a.data(), b.data(), 0.0, &mut out);
        let (ad, bd) = (a.shared_data(), b.shared_data());
        self.custom(
            "matmul_nt",
            &[a, b],
            (m, n),
            out,
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(false, false, m, k, n, 1.0, g, &bd, 0.0, &mut ga);
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; n * k];
                    gemm(true, false, n, k, m, 1.0, g, &ad, 0.0, &mut gb);
                    gb
                });
                vec![ga, gb]
            }),
        )
    }

    /// Adds the `1 x n` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = a.shape();
        if bias.shape() != (1, n) {
            return Err(Error::Shape {
                op: "add_row",
                lhs: a.shape(),
                rhs: bias.shape(),
            });
        }
        let bd = bias.data();
        let mut out = a.data().to_vec();
        for row in out.chunks_mut(n.max(1)) {
            row.iter_mut().zip(bd).for_each(|(v, b)| *v += b);
        }
        self.custom(
            "add_row",
            &[a, bias],
            (m, n),
            out,
            Box::new(move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                    }
                    gb
                });
                vec![needs[0].then(|| g.to_vec()), gb]
            }),
        )
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("add", a, b, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, |x, y| x * y, |x, y| (y, x))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: &Tensor,
        b: &Tensor,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64) -> (f64, f64),
    ) -> Result<Tensor> {
        let mode = broadcast(op, a, b)?;
        let shape = match mode {
            Bcast::LhsScalar => b.shape(),
            _ => a.shape(),
        };
        let n = shape.0 * shape.1;
        let (ad, bd) = (a.shared_data(), b.shared_data());
        let at = move |i: usize| if mode == Bcast::LhsScalar { ad[0] } else { ad[i] };
        let bt = move |i: usize| if mode == Bcast::RhsScalar { bd[0] } else { bd[i] };
        let out = (0..n).map(|i| f(at(i), bt(i))).collect();
        self.custom(
            op,
            &[a, b],
            shape,
            out,
            Box::new(move |g, needs| {
                let mut ga = needs[0].then(|| vec![0.0; n]);
                let mut gb = needs[1].then(|| vec![0.0; n]);
                for (i, gi) in g.iter().enumerate() {
                    let (da, db) = df(at(i), bt(i));
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = gi * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = gi * db;
                    }
                }
                vec![
                    ga.map(|v| reduce_to(v, mode == Bcast::LhsScalar)),
                    gb.map(|v| reduce_to(v, mode == Bcast::RhsScalar)),
                ]
            }),
        )
    }

    pub fn add_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        let out = a.data().iter().map(|v| v + s).collect();
        self.custom(
            "add_scalar",
            &[a],
            a.shape(),
            out,
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn mul_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        let out = a.data().iter().map(|v| v * s).collect();
        self.custom(
            "mul_scalar",
            &[a],
            a.shape(),
            out,
            Box::new(move |g, _| vec![Some(g.iter().map(|v| v * s).collect())]),
        )
    }

    /// Elementwise `a^k` for integer `k >= 0`.
    pub fn pow_int(&mut self, a: &Tensor, k: i64) -> Result<Tensor> {
        if k < 0 {
            return Err(Error::NegativeExponent(k));
        }
        let e = k as i32;
        let out = a.data().iter().map(|v| v.powi(e)).collect();
        let ad = a.shared_data();
        self.custom(
            "pow_int",
            &[a],
            a.shape(),
            out,
            Box::new(move |g, _| {
                let gi = if e == 0 {
                    vec![0.0; g.len()]
                } else {
                    g.iter()
                        .zip(ad.iter())
                        .map(|(gi, x)| gi * e as f64 * x.powi(e - 1))
                        .collect()
                };
                vec![Some(gi)]
            }),
        )
    }

    /// `max(a, 0)` with subgradient 0 at the kink.
    pub fn clamp_min_zero(&mut self, a: &Tensor) -> Result<Tensor> {
        let out = a.data().iter().map(|v| v.max(0.0)).collect();
        let ad = a.shared_data();
        self.custom(
            "clamp_min_zero",
            &[a],
            a.shape(),
            out,
            Box::new(move |g, _| {
                let gi = g
                    .iter()
                    .zip(ad.iter())
                    .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                    .collect();
                vec![Some(gi)]
            }),
        )
    }

    pub fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        let n = a.len();
        self.custom(
            "sum",
            &[a],
            (1, 1),
            vec![a.data().iter().sum()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        if a.is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let n = a.len();
        let inv = 1.0 / n as f64;
        self.custom(
            "mean",
            &[a],
            (1, 1),
            vec![a.data().iter().sum::<f64>() * inv],
            Box::new(move |g, _| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Elementwise `max(a, 0)` with subgradient 0 at the kink; alias used by layers.
    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        self.clamp_min_zero(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::no_grad();
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let y = tape.matmul(&Tensor::identity(2), &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_matmul() {
        let mut tape = Tape::no_grad();
        let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = Tensor::column(&[1.0, 1.0]);
        let y = tape.matmul(&a, &b).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_mentions_both_shapes() {
        let mut tape = Tape::no_grad();
        let err = tape
            .matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn add_zero_is_identity() {
        let mut tape = Tape::no_grad();
        let x = Tensor::row(&[1.5, -2.0]);
        let y = tape.add(&x, &Tensor::scalar(0.0)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let mut tape = Tape::no_grad();
        assert!(tape.add(&Tensor::zeros(2, 2), &Tensor::zeros(2, 3)).is_err());
    }

    #[test]
    fn clamp_min_zero_value_and_subgradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::row(&[-2.5, 0.0, 1.0]));
        let y = tape.clamp_min_zero(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0]);
        let s = tape.sum(&y).unwrap();
        tape.backward(&s).unwrap();
        assert_eq!(tape.grad(&x).unwrap().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn pow_int_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(1.5));
        let y = tape.pow_int(&x, 3).unwrap();
        tape.backward(&y).unwrap();
        assert_eq!(tape.grad(&x).unwrap().item().unwrap(), 6.75);
    }

    #[test]
    fn pow_int_negative_rejected() {
        let mut tape = Tape::no_grad();
        assert!(matches!(
            tape.pow_int(&Tensor::scalar(2.0), -1),
            Err(Error::NegativeExponent(-1))
        ));
    }

    #[test]
    fn matmul_nt_and_add_row_gradcheck() {
        use crate::tensor::{check_gradients, GradCheckOptions};
        let a = Tensor::from_rows(&[&[0.1, -0.4, 0.7], &[1.2, 0.3, -0.8]]).unwrap();
        let b = Tensor::from_rows(&[&[0.5, 0.2, -0.1], &[-0.3, 0.9, 0.4], &[0.6, -0.7, 0.2], &[0.0, 0.1, 0.3]]).unwrap();
        let bias = Tensor::row(&[0.1, 0.2, -0.3, 0.4]);
        let r = check_gradients(
            &[a, b, bias],
            |t, xs| {
                let y = t.matmul_nt(&xs[0], &xs[1])?;
                let y = t.add_row(&y, &xs[2])?;
                let y = t.pow_int(&y, 2)?;
                t.sum(&y)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-6, "{r:?}");
    }

    #[test]
    fn scalar_broadcast_gradient_is_summed() {
        let mut tape = Tape::new();
        let s = tape.leaf(&Tensor::scalar(2.0));
        let x = tape.leaf(&Tensor::row(&[1.0, 2.0, 3.0]));
        let y = tape.mul(&s, &x).unwrap();
        let z = tape.sum(&y).unwrap();
        tape.backward(&z).unwrap();
        assert_eq!(tape.grad(&s).unwrap().item().unwrap(), 6.0);
        assert_eq!(tape.grad(&x).unwrap().data(), &[2.0, 2.0, 2.0]);
    }
}
