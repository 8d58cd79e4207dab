use super::curve::Curve;
use super::general::GeneralSpec;
use super::law::ControlLaw;
use super::lq_spec::LQSpec;
use crate::randkit::MarkSpace;

/// Reference instance of the general LQ system: every coefficient family active,
/// one time-varying curve, mean-field terms in the state, and impulse loading on `y`.
pub fn example1_spec() -> LQSpec {
    LQSpec {
        horizon: 1.0,
        x0: 1.0,
        a1: Curve::table(vec![(0.0, -0.5), (1.0, -0.2)]),
        a2: 0.3.into(),
        a3: 0.1.into(),
        a4: 0.2.into(),
        a5: 0.4.into(),
        a6: 0.2.into(),
        a7: 0.1.into(),
        b1: 0.2.into(),
        b2: 0.1.into(),
        b3: 0.05.into(),
        b4: 0.0.into(),
        b5: 0.1.into(),
        b6: 0.1.into(),
        b7: 0.05.into(),
        c1: 1.0.into(),
        c2: 0.2.into(),
        c3: 0.5.into(),
        c4: 0.3.into(),
        c5: 0.5.into(),
        f1: (-0.3).into(),
        f2: 0.1.into(),
        f3: 0.1.into(),
        f1_bar: 0.1.into(),
        f2_bar: 0.05.into(),
        f3_bar: 0.0.into(),
        k: 0.2.into(),
        terminal_slope: 0.5,
        mean_weight: 1.0,
        initial_weight: 1.0,
        state_loading: Curve::zero(),
        backward_loading: 1.0.into(),
    }
}

/// Impulse epochs used with [`example1_spec`].
pub fn example1_impulse_times() -> Vec<f64> {
    vec![0.3, 0.7]
}

/// Closed-loop value weight of the progressive optimum, `2/(2at − 2a + 1)` with `a = −3λ/4`.
pub fn example2_progressive_value(lambda: f64, t: f64) -> f64 {
    let a = -0.75 * lambda;
    2.0 / (2.0 * a * t - 2.0 * a + 1.0)
}

/// Closed-loop value weight of the predictable optimum, `6/(4(1 − t)λ + 3)`.
pub fn example2_predictable_value(lambda: f64, t: f64) -> f64 {
    6.0 / (4.0 * (1.0 - t) * lambda + 3.0)
}

/// The scalar jump system with `b = u`, `γ = u`, `c = −u`, `σ = 0`, driver `u²`,
/// `y_1 = x_1²`, and cost `E[½∫∫u²λdt + 2∫∫u²N + ½x_1²] + ½y_0`, together with its
/// progressive and predictable optimal laws.
pub struct Example2 {
    pub spec: GeneralSpec,
    pub progressive: ControlLaw,
    pub predictable: ControlLaw,
    pub lambda: f64,
}

pub fn example2_spec(ms: &MarkSpace) -> Example2 {
    let lambda = ms.total_mass();
    let spec = GeneralSpec::new(1.0, 1.0)
        .with_drift(|p, _| p.u)
        .with_jump(|p, _| p.u)
        .with_compensated(|p, _| -p.u)
        .with_driver(|p, _| p.u * p.u)
        .with_terminal(|x, _| x * x)
        .with_running_cost(|p, _| 0.5 * p.u * p.u)
        .with_jump_cost(|p, _| 2.0 * p.u * p.u)
        .with_terminal_cost(|x, _| 0.5 * x * x)
        .with_initial_cost(|y| 0.5 * y)
        .with_mean_field(false);
    let progressive = ControlLaw::new(
        move |t, x, _, _| -example2_progressive_value(lambda, t) * x / 2.0,
        move |t, x, _, _| -example2_progressive_value(lambda, t) * x / 4.0,
    )
    .ignoring_mean();
    let predictable = ControlLaw::predictable(move |t, x, _, _| -example2_predictable_value(lambda, t) * x / 3.0).ignoring_mean();
    Example2 { spec, progressive, predictable, lambda }
}

/// Smooth nonlinear mean-field system used to exercise first-variation remainders.
pub fn nonlinear_demo_spec() -> GeneralSpec {
    GeneralSpec::new(1.0, 0.5)
        .with_drift(|p, _| -p.x.sin() + p.u * (1.0 + 0.5 * p.x.cos()) + 0.3 * p.m.sin())
        .with_diffusion(|p, _| 0.2 + 0.1 * p.x.sin() + 0.1 * p.u)
        .with_jump(|p, e| 0.3 * p.x.sin() + 0.2 * e.value * p.u)
        .with_compensated(|p, _| 0.1 * p.x.cos() * p.u)
        .with_terminal(|x, _| x)
        .with_running_cost(|p, _| 0.5 * p.u * p.u + 0.5 * p.x * p.x)
        .with_jump_cost(|p, _| 0.5 * p.u * p.u)
        .with_terminal_cost(|x, _| 0.5 * x * x)
}
