//! Finite-difference verification of the loss gradients.
//!
//! Each trial draws random features and embeddings and compares the tape's
//! analytic gradients against central differences for the contrastive,
//! decorrelation and neighbor-preservation losses, and for the combined
//! objective pushed through a small model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::losses::{
    combined_loss_with, loss_mde, loss_mim, loss_msp_with, FrozenNeighbors, LossWeights,
};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::{finite_diff_grad, relative_error, OpKind, Tape, Tensor, Unary, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub batch: usize,
    /// Width of the features and embeddings being differentiated.
    pub dims: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            trials: 20,
            batch: 4,
            dims: 8,
            seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Location of the largest disagreement for one loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Coordinate {
    pub trial: usize,
    pub input: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossCheck {
    pub loss: &'static str,
    pub max_relative_error: f64,
    pub worst: Option<Coordinate>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: usize,
    pub tolerance: f64,
    pub checks: Vec<LossCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<10} {:>14}  {}\n", "loss", "max rel err", "status");
        for c in &self.checks {
            let status = if c.passed { "ok" } else { "FAIL" };
            out.push_str(&format!(
                "{:<10} {:>14.3e}  {status}",
                c.loss, c.max_relative_error
            ));
            if let (false, Some(w)) = (c.passed, &c.worst) {
                out.push_str(&format!(
                    " at trial {} {}[{}]: analytic {:e} vs numeric {:e}",
                    w.trial, w.input, w.index, w.analytic, w.numeric
                ));
            }
            out.push('\n');
        }
        out
    }
}

/// Parses an op name such as `row-cosine` or `softplus` for the
/// corrupted-rule self test.
pub fn parse_op_kind(name: &str) -> Result<OpKind> {
    Ok(match name {
        "matmul" => OpKind::MatMul,
        "add" => OpKind::Add,
        "sub" => OpKind::Sub,
        "mul" => OpKind::Mul,
        "scale" => OpKind::Scale,
        "div-scalar" => OpKind::DivScalar,
        "add-bias" => OpKind::AddBias,
        "tanh" => OpKind::Unary(Unary::Tanh),
        "relu" => OpKind::Unary(Unary::Relu),
        "softplus" => OpKind::Unary(Unary::Softplus),
        "exp" => OpKind::Unary(Unary::Exp),
        "log" => OpKind::Unary(Unary::Log),
        "transpose" => OpKind::Transpose,
        "normalize-rows" => OpKind::NormalizeRows,
        "row-sum" => OpKind::RowSum,
        "sum" => OpKind::Sum,
        "mean" => OpKind::Mean,
        "diag" => OpKind::Diag,
        "row-logsumexp" => OpKind::RowLogSumExp,
        "gather-rows" => OpKind::GatherRows,
        "row-cosine" => OpKind::RowCosine,
        other => {
            return Err(Error::config(
                "corrupt-rule",
                format!("unknown op `{other}`"),
            ))
        }
    })
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Tensor::matrix(rows, cols, data).expect("positive shape")
}

struct Tracker {
    loss: &'static str,
    tolerance: f64,
    max: f64,
    worst: Option<Coordinate>,
}

impl Tracker {
    fn new(loss: &'static str, tolerance: f64) -> Self {
        Self {
            loss,
            tolerance,
            max: 0.0,
            worst: None,
        }
    }

    fn compare(&mut self, trial: usize, input: &str, analytic: &Tensor, numeric: &Tensor) {
        for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            let e = relative_error(a, n);
            if e > self.max || e.is_nan() {
                self.max = if e.is_nan() { f64::INFINITY } else { e };
                self.worst = Some(Coordinate {
                    trial,
                    input: input.to_owned(),
                    index: i,
                    analytic: a,
                    numeric: n,
                });
            }
        }
    }

    fn finish(self) -> LossCheck {
        LossCheck {
            loss: self.loss,
            max_relative_error: self.max,
            passed: self.max < self.tolerance,
            worst: self.worst,
        }
    }
}

/// Checks `f` on every input: analytic gradients come from a tape built by
/// `make_tape`, numeric ones from central differences of the same graph.
fn check_inputs<F>(
    tracker: &mut Tracker,
    trial: usize,
    names: &[&str],
    inputs: &[Tensor],
    step: f64,
    make_tape: &dyn Fn() -> Tape,
    f: F,
) -> Result<()>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = make_tape();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    for (slot, name) in names.iter().enumerate() {
        let numeric = finite_diff_grad(
            |x| {
                let mut t = Tape::new();
                let vs: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(i, orig)| t.constant(if i == slot { x.clone() } else { orig.clone() }))
                    .collect();
                let l = f(&mut t, &vs).expect("perturbed point stays valid");
                t.scalar(l).expect("scalar loss")
            },
            &inputs[slot],
            step,
        );
        tracker.compare(trial, name, grads.wrt(vars[slot]), &numeric);
    }
    Ok(())
}

/// Runs the checks; `corrupt` scales one op's backward rule to prove the
/// harness catches a wrong gradient.
pub fn run_gradcheck(cfg: &GradcheckConfig, corrupt: Option<OpKind>) -> Result<GradcheckReport> {
    if cfg.trials == 0 {
        return Err(Error::config("trials", "at least one trial is required"));
    }
    if cfg.batch < 2 {
        return Err(Error::config("batch", "must be at least 2"));
    }
    if cfg.dims == 0 {
        return Err(Error::config("dims", "must be positive"));
    }
    if cfg.step.is_nan() || cfg.step <= 0.0 {
        return Err(Error::config("step", "must be positive"));
    }
    let make_tape = move || match corrupt {
        Some(kind) => Tape::with_corrupted_rule(kind),
        None => Tape::new(),
    };
    let (t, d) = (cfg.batch, cfg.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mim = Tracker::new("mim", cfg.tolerance);
    let mut mde = Tracker::new("mde", cfg.tolerance);
    let mut msp = Tracker::new("msp", cfg.tolerance);
    let mut combined = Tracker::new("combined", cfg.tolerance);

    for trial in 0..cfg.trials {
        let z = [gaussian(&mut rng, t, d), gaussian(&mut rng, t, d)];
        let y = [gaussian(&mut rng, t, d), gaussian(&mut rng, t, d)];
        let weights = LossWeights {
            alpha: rng.random_range(0.1..1.0),
            beta: rng.random_range(0.1..1.0),
            tau: rng.random_range(0.1..1.0),
            include_positive_in_denominator: trial % 2 == 1,
        };

        check_inputs(
            &mut mim,
            trial,
            &["z_j", "z_k"],
            &z,
            cfg.step,
            &make_tape,
            |tp, v| loss_mim(tp, v[0], v[1], &weights),
        )?;
        check_inputs(
            &mut mde,
            trial,
            &["y_j", "y_k"],
            &y,
            cfg.step,
            &make_tape,
            |tp, v| loss_mde(tp, v[0], v[1]),
        )?;
        let nn = FrozenNeighbors::select(&y[0], &y[1])?;
        check_inputs(
            &mut msp,
            trial,
            &["y_j", "y_k"],
            &y,
            cfg.step,
            &make_tape,
            |tp, v| loss_msp_with(tp, v[0], v[1], &nn.j, &nn.k),
        )?;

        let model_cfg = ModelConfig {
            input_dims: vec![6, 5],
            hidden_dims: vec![5],
            feature_dim: d,
            embedding_dim: d,
            seed: rng.random(),
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&model_cfg)?;
        let x = [gaussian(&mut rng, t, 6), gaussian(&mut rng, t, 5)];
        let feats = [
            params.forward_backbone(0, &x[0])?,
            params.forward_backbone(1, &x[1])?,
        ];
        let nn = FrozenNeighbors::select(&feats[0], &feats[1])?;
        let named: Vec<(String, Tensor)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        let tensors: Vec<Tensor> = named.iter().map(|(_, t)| t.clone()).collect();
        let layout = params.clone();
        check_inputs(
            &mut combined,
            trial,
            &names,
            &tensors,
            cfg.step,
            &make_tape,
            |tp, v| {
                let bound = layout.bind_vars(v)?;
                let x0 = tp.constant(x[0].clone());
                let x1 = tp.constant(x[1].clone());
                let y0 = bound.backbone(tp, 0, x0)?;
                let y1 = bound.backbone(tp, 1, x1)?;
                let z0 = bound.encoder(tp, y0)?;
                let z1 = bound.encoder(tp, y1)?;
                let (vars, _) = combined_loss_with(tp, z0, z1, y0, y1, &weights, Some(&nn))?;
                Ok(vars.total)
            },
        )?;
    }

    Ok(GradcheckReport {
        trials: cfg.trials,
        tolerance: cfg.tolerance,
        checks: vec![mim.finish(), mde.finish(), msp.finish(), combined.finish()],
    })
}
