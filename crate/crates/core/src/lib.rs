//! Sequential quadratic programming driven by Gaussian-process surrogates.
//!
//! Every objective and constraint is modelled by a squared-exponential GP
//! whose posterior is differentiated analytically, giving a value, gradient
//! and Hessian estimate from zeroth-order observations only. At each
//! iteration the local models are turned into a second-order cone program
//! whose solution is a search direction that improves the objective with high
//! probability while keeping the linearised constraints satisfied with high
//! probability. A constrained Thompson-sampling line search along that
//! direction picks the next iterate.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`]: squared-exponential kernel and its derivative blocks,
//! * [`surrogate`]: GP fitting and the joint value/gradient/Hessian posterior,
//! * [`conesolver`]: a dense primal-dual interior-point solver for quadratic
//!   programs with second-order cone constraints,
//! * [`subproblem`]: assembly of the uncertainty-aware local subproblem,
//! * [`quasirandom`]: Sobol streams and ball sub-sampling,
//! * [`linesearch`]: Thompson-sampling line search and incumbent selection,
//! * [`driver`]: the outer optimisation loop and a random-search baseline,
//! * [`problems`]: benchmark problems,
//! * [`trace`], [`report`] and [`oracle`]: result files, quantile tables and
//!   brute-force optimum estimates used by the command line tool.
//!
//! ```no_run
//! use bayesqp::driver::{run, RunConfig};
//! use bayesqp::problems;
//!
//! let problem = problems::gramacy();
//! let config = RunConfig::new(60).with_seed(3);
//! let trace = run(&problem, &config).unwrap();
//! let best = trace.final_incumbent().unwrap();
//! println!("f = {} at {:?}", best.f, best.x);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conesolver;
pub mod driver;
mod error;
pub mod kernel;
mod linalg;
pub mod linesearch;
pub mod oracle;
pub mod problems;
pub mod quasirandom;
pub mod report;
pub mod subproblem;
pub mod surrogate;
pub mod trace;

pub use error::{Error, Result};
pub use linalg::{jittered_cholesky, JITTER_LADDER};
