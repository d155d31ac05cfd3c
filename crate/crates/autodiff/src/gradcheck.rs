//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Array, Result, Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Upper bound on perturbed coordinates across all parameters.
    pub max_coords: usize,
    pub seed: u64,
    /// A parameter whose analytic and numeric gradients both stay below this
    /// in ∞-norm has a zero gradient; its relative error is pure rounding
    /// noise and it passes.
    pub zero_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, tolerance: 1e-4, max_coords: 1000, seed: 0, zero_floor: 1e-8 }
    }
}

/// Agreement for one parameter array over its checked coordinates.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub param: usize,
    pub checked: usize,
    pub max_abs_diff: f64,
    /// `max|g_ad − g_fd| / (max|g_ad| + max|g_fd| + 1e-12)`.
    pub rel_error: f64,
    /// `max|g_ad| + max|g_fd|`.
    pub scale: f64,
}

impl ParamCheck {
    pub fn passed(&self, opts: &GradCheckOptions) -> bool {
        self.rel_error <= opts.tolerance || self.scale <= opts.zero_floor
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub options: GradCheckOptions,
}

impl GradCheckReport {
    /// Largest relative error over parameters with a non-zero gradient.
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().filter(|p| p.scale > self.options.zero_floor).fold(0.0, |m, p| m.max(p.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed(&self.options))
    }
}

/// Compares the tape gradient of scalar `f` against central differences.
///
/// `f` must be deterministic. When the parameters hold more than
/// `max_coords` values, a seeded random subset of coordinates is checked.
pub fn grad_check<F>(f: F, params: &[Array], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Array> = vars.iter().map(|v| grads.wrt(v)).collect();

    let total: usize = params.iter().map(Array::len).sum();
    let mut coords: Vec<usize> = if total <= opts.max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        sample(&mut rng, total, opts.max_coords).into_vec()
    };
    coords.sort_unstable();

    let eval = |perturbed: &[Array]| -> Result<f64> {
        let t = Tape::no_grad();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|p| t.constant(p.clone())).collect();
        f(&t, &vs)?.item()
    };

    let mut work: Vec<Array> = params.to_vec();
    let mut stats: Vec<(usize, f64, f64, f64)> = vec![(0, 0.0, 0.0, 0.0); params.len()];
    let mut offsets = Vec::with_capacity(params.len());
    let mut acc = 0;
    for p in params {
        offsets.push(acc);
        acc += p.len();
    }
    for flat in coords {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let j = flat - offsets[pi];
        let orig = work[pi].data()[j];
        work[pi].data_mut()[j] = orig + opts.step;
        let plus = eval(&work)?;
        work[pi].data_mut()[j] = orig - opts.step;
        let minus = eval(&work)?;
        work[pi].data_mut()[j] = orig;
        let fd = (plus - minus) / (2.0 * opts.step);
        let ad = analytic[pi].data()[j];
        let s = &mut stats[pi];
        s.0 += 1;
        s.1 = s.1.max((ad - fd).abs());
        s.2 = s.2.max(ad.abs());
        s.3 = s.3.max(fd.abs());
    }
    let params = stats
        .into_iter()
        .enumerate()
        .filter(|(_, s)| s.0 > 0)
        .map(|(param, (checked, diff, ad, fd))| ParamCheck {
            param,
            checked,
            max_abs_diff: diff,
            rel_error: diff / (ad + fd + 1e-12),
            scale: ad + fd,
        })
        .collect();
    Ok(GradCheckReport { params, options: opts })
}

type CaseFn = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

/// One differentiable operation applied to fixed inputs, reduced to a scalar
/// by a weighted sum so every output element contributes a distinct weight.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Array>,
    pub f: CaseFn,
}

impl OpCase {
    pub fn check(&self, opts: GradCheckOptions) -> Result<GradCheckReport> {
        grad_check(|t, v| (self.f)(t, v), &self.inputs, opts)
    }
}

/// Deterministic, non-constant probe weights for a given shape.
fn probe<'t>(tape: &'t Tape, shape: &[usize]) -> Var<'t> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| (1.3 * i as f64 + 0.4).sin() + 0.1).collect();
    tape.constant(Array::new(shape.to_vec(), data).expect("probe shape"))
}

fn weighted<'t>(y: Result<Var<'t>>) -> Result<Var<'t>> {
    let y = y?;
    y.mul(&probe(y.tape(), y.shape()))?.sum()
}

/// Every differentiable operation at three distinct input shapes.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    use crate::nn;
    use crate::tape::{PadMode, PatchSpec};
    use rand::Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand = |shape: &[usize], lo: f64, hi: f64| {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        Array::new(shape.to_vec(), data).expect("positive shape")
    };
    let mut cases = Vec::new();
    let mut push = |name, inputs: Vec<Array>, f: CaseFn| cases.push(OpCase { name, inputs, f });

    let binary_shapes: [(&[usize], &[usize]); 3] = [(&[5], &[5]), (&[3, 4], &[4]), (&[2, 1, 3], &[4, 1])];
    for (a, b) in binary_shapes {
        push("add", vec![rand(a, -1.0, 1.0), rand(b, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].add(&v[1]))));
        push("sub", vec![rand(a, -1.0, 1.0), rand(b, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].sub(&v[1]))));
        push("mul", vec![rand(a, -1.0, 1.0), rand(b, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].mul(&v[1]))));
        push("div", vec![rand(a, -1.0, 1.0), rand(b, 0.5, 2.0)], Box::new(|_, v| weighted(v[0].div(&v[1]))));
    }
    let unary_shapes: [&[usize]; 3] = [&[7], &[3, 5], &[2, 3, 4]];
    for s in unary_shapes {
        push("neg", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].neg())));
        push("scale", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].scale(-2.5))));
        push("add_scalar", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].add_scalar(0.3))));
        push("exp", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].exp())));
        push("log", vec![rand(s, 0.5, 2.0)], Box::new(|_, v| weighted(v[0].log())));
        push("sqrt", vec![rand(s, 0.5, 2.0)], Box::new(|_, v| weighted(v[0].sqrt())));
        push("powf", vec![rand(s, 0.5, 2.0)], Box::new(|_, v| weighted(v[0].powf(1.7))));
        push("square", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].square())));
        push("sin", vec![rand(s, -2.0, 2.0)], Box::new(|_, v| weighted(v[0].sin())));
        push("cos", vec![rand(s, -2.0, 2.0)], Box::new(|_, v| weighted(v[0].cos())));
        push("gelu", vec![rand(s, -2.0, 2.0)], Box::new(|_, v| weighted(v[0].gelu())));
        push("softmax", vec![rand(s, -2.0, 2.0)], Box::new(|_, v| weighted(v[0].softmax())));
        push("layer_norm", vec![rand(s, -2.0, 2.0)], Box::new(|_, v| weighted(v[0].layer_norm())));
        push("sum", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| v[0].square()?.sum()));
        push("mean", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| v[0].square()?.mean()));
        push(
            "reshape",
            vec![rand(s, -1.0, 1.0)],
            Box::new(|_, v| {
                let n = v[0].value().len();
                weighted(v[0].reshape([n]))
            }),
        );
        let last = s.len() - 1;
        push("sum_axis", vec![rand(s, -1.0, 1.0)], Box::new(move |_, v| weighted(v[0].sum_axis(last))));
        push("mean_axis", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].mean_axis(0))));
        push(
            "concat",
            vec![rand(s, -1.0, 1.0), rand(s, -1.0, 1.0)],
            Box::new(move |_, v| weighted(Var::concat(&[&v[0], &v[1]], last))),
        );
        push(
            "gather",
            vec![rand(s, -1.0, 1.0)],
            Box::new(|_, v| {
                let rows = v[0].shape()[0];
                weighted(v[0].gather(&[rows - 1, 0, rows - 1]))
            }),
        );
    }
    let perm_cases: [(&[usize], &[usize]); 3] =
        [(&[3, 4], &[1, 0]), (&[2, 3, 4], &[2, 0, 1]), (&[2, 3, 2, 2], &[0, 2, 1, 3])];
    for (s, p) in perm_cases {
        push("permute", vec![rand(s, -1.0, 1.0)], Box::new(move |_, v| weighted(v[0].permute(p))));
        push("transpose", vec![rand(s, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].transpose())));
    }
    let mm_shapes: [(&[usize], &[usize]); 3] = [(&[1, 4], &[4, 1]), (&[5, 3], &[3, 6]), (&[2, 3, 4], &[2, 4, 5])];
    for (a, b) in mm_shapes {
        push("matmul", vec![rand(a, -1.0, 1.0), rand(b, -1.0, 1.0)], Box::new(|_, v| weighted(v[0].matmul(&v[1]))));
    }
    let linear_shapes = [(1, 3, 2), (4, 5, 3), (6, 2, 7)];
    for (n, i, o) in linear_shapes {
        push(
            "linear",
            vec![rand(&[n, i], -1.0, 1.0), rand(&[i, o], -1.0, 1.0), rand(&[o], -1.0, 1.0)],
            Box::new(|_, v| weighted(nn::linear(&v[0], &v[1], Some(&v[2])))),
        );
    }
    let conv_cases = [
        ([4, 5, 2], PatchSpec::same(3, PadMode::Reflect), 3),
        ([6, 6, 1], PatchSpec { kernel: 3, stride: 2, pad: 1, mode: PadMode::Zero }, 2),
        ([5, 7, 3], PatchSpec::same(5, PadMode::Reflect), 2),
    ];
    for (s, spec, c_out) in conv_cases {
        let k = spec.kernel * spec.kernel * s[2];
        push(
            "conv2d",
            vec![rand(&s, -1.0, 1.0), rand(&[k, c_out], -1.0, 1.0), rand(&[c_out], -1.0, 1.0)],
            Box::new(move |_, v| weighted(nn::conv2d(&v[0], &v[1], Some(&v[2]), spec))),
        );
        push(
            "im2col_at",
            vec![rand(&s, -1.0, 1.0)],
            Box::new(move |_, v| weighted(v[0].im2col_at(spec, &[(1, 1), (0, 0), (1, 1)]))),
        );
    }
    let up_cases: [(&[usize], usize); 3] = [(&[1, 1, 2], 3), (&[2, 3, 1], 2), (&[3, 2, 4], 4)];
    for (s, f) in up_cases {
        push("upsample_nearest", vec![rand(s, -1.0, 1.0)], Box::new(move |_, v| weighted(v[0].upsample_nearest(f))));
    }
    cases
}
