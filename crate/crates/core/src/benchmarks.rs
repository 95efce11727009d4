//! The benchmark models and synthetic data generators for them.
//!
//! - `tcl`: thermostatically controlled room, 21 temperature latents plus 20
//!   mode-choice latents, 80 branches, 21 noisy measurements.
//! - `sns`: message counts over 37 days with a continuous switchpoint,
//!   3 latents, 37 branches.
//! - `infl`: monthly mortality whose dynamics depend on a relaxed virus-type
//!   indicator, 37 latents, 24 branches.
//!
//! All three work in standardized units so that Adam at stepsize 0.001 can
//! reach the posterior mode within 10000 iterations from μ = 0, s = 0.

use rand_distr::{Distribution, Normal, Poisson};

use crate::density::{CompileError, CompiledModel, DataTable};
use crate::frontend::{SourceProgram, SyntaxError, ValidationError};
use crate::rng::seeded;
use crate::scalar::Real;

pub const TCL_SOURCE: &str = include_str!("../benchmarks/tcl.ppl");
pub const SNS_SOURCE: &str = include_str!("../benchmarks/sns.ppl");
pub const INFL_SOURCE: &str = include_str!("../benchmarks/infl.ppl");
/// One latent, one branch: `z ~ N(0, 1)` with a likelihood that jumps at 0.
pub const PROP1_SOURCE: &str = include_str!("../benchmarks/prop1.ppl");

/// Data seed used when none is given.
pub const DEFAULT_DATA_SEED: u64 = 2018;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    Tcl,
    Sns,
    Infl,
}

/// A program that failed to parse, validate or compile. Displays as
/// `file:line:col: error: message`.
#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("{origin}:{source}")]
    Validation { origin: String, source: ValidationError },
    #[error("{origin}:{source}")]
    Compile { origin: String, source: CompileError },
}

impl BuildError {
    pub fn stage(&self) -> &'static str {
        match self {
            BuildError::Syntax(_) => "syntax",
            BuildError::Validation { .. } => "validation",
            BuildError::Compile { .. } => "compile",
        }
    }

    pub fn origin(&self) -> &str {
        match self {
            BuildError::Syntax(e) => &e.origin,
            BuildError::Validation { origin, .. } | BuildError::Compile { origin, .. } => origin,
        }
    }

    /// 1-based line and column.
    pub fn position(&self) -> (u32, u32) {
        let span = match self {
            BuildError::Syntax(e) => return (e.line, e.col),
            BuildError::Validation { source, .. } => source.span(),
            BuildError::Compile { source, .. } => source.span(),
        };
        (span.line, span.col)
    }
}

impl Benchmark {
    pub const ALL: [Benchmark; 3] = [Benchmark::Tcl, Benchmark::Sns, Benchmark::Infl];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Tcl => "tcl",
            Benchmark::Sns => "sns",
            Benchmark::Infl => "infl",
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Benchmark::Tcl => TCL_SOURCE,
            Benchmark::Sns => SNS_SOURCE,
            Benchmark::Infl => INFL_SOURCE,
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.ppl", self.name())
    }

    /// Latent dimension and branch count the compiled model must have.
    pub fn expected_dims(self) -> (usize, usize) {
        match self {
            Benchmark::Tcl => (41, 80),
            Benchmark::Sns => (3, 37),
            Benchmark::Infl => (37, 24),
        }
    }

    pub fn generate_data(self, seed: u64) -> DataTable {
        match self {
            Benchmark::Tcl => generate_tcl_data(seed),
            Benchmark::Sns => generate_sns_data(seed),
            Benchmark::Infl => generate_infl_data(seed),
        }
    }

    pub fn program(self) -> SourceProgram {
        SourceProgram::new(self.source(), self.file_name())
    }

    /// Parses, validates and compiles the model against `data`.
    pub fn compile<T: Real>(self, data: &DataTable) -> Result<CompiledModel<T>, BuildError> {
        compile_program(&self.program(), data)
    }
}

impl std::fmt::Display for Benchmark {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Benchmark {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| format!("unknown benchmark `{s}` (expected tcl, sns or infl)"))
    }
}

/// Parse, validate and compile in one go.
pub fn compile_program<T: Real>(program: &SourceProgram, data: &DataTable) -> Result<CompiledModel<T>, BuildError> {
    let ast = crate::frontend::parse(program)?;
    let validated = crate::frontend::validate(&ast).map_err(|source| BuildError::Validation {
        origin: program.origin.clone(),
        source,
    })?;
    crate::density::compile(&validated, data).map_err(|source| BuildError::Compile {
        origin: program.origin.clone(),
        source,
    })
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("positive standard deviation")
}

/// Temperature sensor readings for 21 steps of the hysteresis controller:
/// cooling moves the state by −0.5, heating by +0.3, with noise 0.1; inside
/// [−1, 1] the mode is a fair coin. Readings above 1.2 saturate.
pub fn generate_tcl_data(seed: u64) -> DataTable {
    let mut rng = seeded(seed);
    let step = normal(0.0, 0.1);
    let sensor = |x: f64, rng: &mut _| x.min(1.2) + step.sample(rng);
    let mut x = normal(0.0, 0.5).sample(&mut rng);
    let mut ys = vec![x + step.sample(&mut rng)];
    for _ in 1..21 {
        let u = normal(0.0, 1.0).sample(&mut rng);
        let cool = x > 1.0 || (x > -1.0 && u > 0.0);
        x += if cool { -0.5 } else { 0.3 } + step.sample(&mut rng);
        ys.push(sensor(x, &mut rng));
    }
    DataTable::new().with_series("y", &ys)
}

/// Counts for 37 observation days (every other day of 74) with rates 18
/// before day 44 and 23 from then on. Days are mapped to [−1, 1].
pub fn generate_sns_data(seed: u64) -> DataTable {
    let mut rng = seeded(seed);
    let early = Poisson::new(18.0).expect("positive rate");
    let late = Poisson::new(23.0).expect("positive rate");
    let mut days = Vec::with_capacity(37);
    let mut counts = Vec::with_capacity(37);
    for i in 0..37 {
        let day = 2 * i;
        days.push((day as f64 - 36.0) / 36.0);
        let dist = if day < 44 { &early } else { &late };
        counts.push(dist.sample(&mut rng));
    }
    DataTable::new().with_series("day", &days).with_series("count", &counts)
}

/// Twelve monthly mortality levels: type-1 months follow `0.9x + 0.2`,
/// type-2 months `0.6x − 0.2`, with observation noise 0.1 on rises and 0.2
/// otherwise.
pub fn generate_infl_data(seed: u64) -> DataTable {
    let mut rng = seeded(seed);
    let unit = normal(0.0, 1.0);
    let mut x = unit.sample(&mut rng) * 0.5;
    let mut rates = Vec::with_capacity(12);
    for month in 0..12 {
        // the winter months favor type 1
        let type1 = if !(3..=9).contains(&month) { true } else { unit.sample(&mut rng) > 0.5 };
        let v = unit.sample(&mut rng);
        let prev = x;
        x = if type1 { 0.9 * x + 0.2 } else { 0.6 * x - 0.2 } + 0.3 * v + 0.2 * unit.sample(&mut rng);
        let noise = if x > prev { 0.1 } else { 0.2 };
        rates.push(x + noise * unit.sample(&mut rng));
    }
    DataTable::new().with_series("rate", &rates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmarks_have_expected_dimensions() {
        for b in Benchmark::ALL {
            let m = b.compile::<f64>(&b.generate_data(DEFAULT_DATA_SEED)).unwrap();
            assert_eq!((m.dim(), m.branch_count()), b.expected_dims(), "{b}");
        }
    }

    #[test]
    fn generators_are_deterministic() {
        for b in Benchmark::ALL {
            assert_eq!(b.generate_data(5), b.generate_data(5));
            assert_ne!(b.generate_data(5), b.generate_data(6));
        }
    }

    #[test]
    fn tcl_data_is_plausible() {
        let y = generate_tcl_data(1).series("y");
        assert_eq!(y.len(), 21);
        // the controller keeps the state within a band around [−1, 1]
        assert!(y.iter().all(|v| (-2.5..=2.0).contains(v)), "{y:?}");
    }

    #[test]
    fn sns_data_is_plausible() {
        let d = generate_sns_data(1);
        assert_eq!(d.series_len("count"), 37);
        let days = d.series("day");
        assert_eq!((days[0], days[36]), (-1.0, 1.0));
        assert!(d.series("count").iter().all(|c| c.fract() == 0.0 && (3.0..60.0).contains(c)));
    }

    #[test]
    fn log_density_is_finite_at_the_origin() {
        for b in Benchmark::ALL {
            let m = b.compile::<f64>(&b.generate_data(DEFAULT_DATA_SEED)).unwrap();
            assert!(m.log_density(&vec![0.0; m.dim()]).unwrap().is_finite());
        }
    }

    #[test]
    fn prop1_source_compiles() {
        let m: CompiledModel<f64> =
            compile_program(&SourceProgram::inline(PROP1_SOURCE), &DataTable::new()).unwrap();
        assert_eq!((m.dim(), m.branch_count()), (1, 1));
    }

    #[test]
    fn build_errors_carry_file_positions() {
        let err = compile_program::<f64>(
            &SourceProgram::new("z ~ sample normal(0, 1);\nobserve normal(w, 1) = 0;", "m.ppl"),
            &DataTable::new(),
        )
        .unwrap_err();
        assert_eq!(err.stage(), "validation");
        assert_eq!(err.position().0, 2);
        assert!(err.to_string().starts_with("m.ppl:2:"), "{err}");
        let err = compile_program::<f64>(&Benchmark::Sns.program(), &DataTable::new()).unwrap_err();
        assert_eq!(err.stage(), "compile");
        assert!(err.to_string().starts_with("sns.ppl:"), "{err}");
    }

    #[test]
    fn names_round_trip() {
        for b in Benchmark::ALL {
            assert_eq!(b.name().parse::<Benchmark>().unwrap(), b);
        }
    }
}
