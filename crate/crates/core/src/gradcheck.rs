//! Central finite-difference gradient checker.

use crate::autodiff::{DiffResult, Tape, Var};
use crate::params::ParamStore;
use crate::tensor::Mat;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares backward gradients of a scalar function against
/// `(f(x+h) − f(x−h)) / 2h`, coordinate by coordinate.
///
/// The relative error of one coordinate is `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<Fun>(f: Fun, inputs: &[Mat<f64>], h: f64) -> DiffResult<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, &[Var]) -> DiffResult<Var>,
{
    let eval = |values: &[Mat<f64>]| -> DiffResult<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(scalar(&tape, out))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out);

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, coordinates: 0 };
    let mut probe: Vec<Mat<f64>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).cloned().unwrap_or_else(|| Mat::zeros(inputs[i].rows(), inputs[i].cols()));
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            probe[i].data_mut()[j] = x + h;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = x - h;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = x;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic.data()[j];
            let err = rel_error(a, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.coordinates == 1 {
                report = GradCheckReport { max_rel_error: err, worst: (i, j), analytic: a, numeric, coordinates: report.coordinates };
            }
        }
    }
    Ok(report)
}

/// One coordinate of a parameter gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Coordinate {
    pub fn rel_error(&self) -> f64 {
        rel_error(self.analytic, self.numeric)
    }
}

/// Every coordinate of a parameter check, plus `f` at the unperturbed point.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub value: f64,
    pub coordinates: Vec<Coordinate>,
}

impl ParamCheck {
    pub fn report(&self) -> GradCheckReport {
        let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), analytic: 0.0, numeric: 0.0, coordinates: 0 };
        for (k, c) in self.coordinates.iter().enumerate() {
            let err = c.rel_error();
            if k == 0 || err > report.max_rel_error {
                report = GradCheckReport { max_rel_error: err, worst: (c.param, c.index), analytic: c.analytic, numeric: c.numeric, coordinates: 0 };
            }
        }
        report.coordinates = self.coordinates.len();
        report
    }

    /// Size of the difference quotient's rounding noise: one unit of
    /// relative precision of `f`, divided by the step width `2h`.
    pub fn roundoff(&self, h: f64) -> f64 {
        self.value.abs().max(f64::MIN_POSITIVE) * f64::EPSILON / (2.0 * h)
    }
}

/// [`grad_check`] over every scalar of a parameter store. `f` binds the
/// parameters it uses onto the tape (via [`Tape::param`]) and returns a
/// scalar; `worst` reports `(parameter index, flat index)`.
pub fn grad_check_params<Fun, E>(f: Fun, params: &ParamStore<f64>, h: f64) -> Result<GradCheckReport, E>
where
    Fun: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
{
    Ok(check_params(f, params, h)?.report())
}

/// Per-coordinate form of [`grad_check_params`].
pub fn check_params<Fun, E>(f: Fun, params: &ParamStore<f64>, h: f64) -> Result<ParamCheck, E>
where
    Fun: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    let value = scalar(&tape, out);
    tape.backward(out);
    let mut grads: Vec<Option<Mat<f64>>> = vec![None; params.len()];
    for (id, g) in tape.param_grads() {
        grads[id.index()] = Some(g);
    }

    let mut coordinates = Vec::new();
    let mut probe = params.clone();
    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let original = params.get(id).clone();
        for j in 0..original.len() {
            let x = original.data()[j];
            probe.get_mut(id).data_mut()[j] = x + h;
            let mut t = Tape::new();
            let o = f(&mut t, &probe)?;
            let up = scalar(&t, o);
            probe.get_mut(id).data_mut()[j] = x - h;
            let mut t = Tape::new();
            let o = f(&mut t, &probe)?;
            let down = scalar(&t, o);
            probe.get_mut(id).data_mut()[j] = x;

            let analytic = grads[id.index()].as_ref().map_or(0.0, |g| g.data()[j]);
            coordinates.push(Coordinate { param: id.index(), index: j, analytic, numeric: (up - down) / (2.0 * h) });
        }
    }
    Ok(ParamCheck { value, coordinates })
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn scalar(tape: &Tape<f64>, v: Var) -> f64 {
    let m = tape.value(v);
    assert_eq!(m.shape(), (1, 1), "grad_check needs a scalar output");
    m.data()[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let x = Mat::from_rows(&[[0.3, -1.2, 2.0]]);
        let w = Mat::from_rows(&[[1.5], [-0.5], [0.25]]);
        let r = grad_check(|t, v| t.matmul(v[0], v[1]), &[x, w], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Mat::from_rows(&[[0.3, -1.2]]);
        let r = grad_check(
            |t, v| {
                let c = t.constant(Mat::from_rows(&[[4.0]]));
                let z = t.scale(v[0], 0.0);
                let ones = t_ones(t, 2);
                let s = t.matmul(z, ones)?;
                t.add(s, c)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert_eq!(r.analytic, 0.0);
        assert_eq!(r.max_rel_error, 0.0);
    }

    fn t_ones(t: &mut Tape<f64>, n: usize) -> Var {
        t.constant(Mat::filled(n, 1, 1.0))
    }
}
