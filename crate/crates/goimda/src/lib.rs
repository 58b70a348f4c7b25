//! Goal-oriented influence-maximizing data acquisition.
//!
//! This crate implements an acquisition loop that scores candidate inputs by
//! the first-order effect that labeling them would have on a user-chosen goal
//! functional of the fitted model parameters. The score couples three pieces:
//! the goal gradient, an inverse-curvature preconditioner (inverse Hessian of
//! the training loss, applied via CG or LiSSA), and each candidate's
//! sensitivity to the parameters. Unknown labels are handled by a jackknife
//! ensemble surrogate.
//!
//! Module map:
//! - [`diffcore`]: flat parameter vectors, dense matrices, gradient and
//!   Hessian-vector-product kernels for the shipped losses.
//! - [`expfam`]: exponential-family machinery (log-partition derivatives,
//!   NLL losses, expected-loss gradients) and the natural-parameter model
//!   abstraction.
//! - [`mlp`]: a small tanh multilayer perceptron with exact forward-over-reverse
//!   Hessian-vector products.
//! - [`glm`]: canonical-link GLM fitting (Newton), Hessians, and the
//!   closed-form acquisition scores for GLMs.
//! - [`ihvp`]: inverse Hessian-vector-product solvers (CG, LiSSA, dense oracle).
//! - [`surrogate`]: jackknife ensembles standing in for the unknown
//!   data-generating distribution.
//! - [`goals`]: goal functionals (optimizer-recommended design value, NLL,
//!   focal, entropy) and their parameter gradients.
//! - [`acquisition`]: the scoring rule and the outer acquisition loop.
//! - [`benchfuncs`]: noisy benchmark objectives and synthetic data generators.
//! - [`gp`]: Gaussian-process Bayesian-optimization baselines (EI/PI/UCB).
//! - [`harness`]: config-driven experiment runner, metrics, CSV emission.

pub mod acquisition;
pub mod benchfuncs;
pub mod diffcore;
pub mod expfam;
pub mod glm;
pub mod goals;
pub mod gp;
pub mod halton;
pub mod harness;
pub mod ihvp;
pub mod mlp;
pub mod model;
pub mod surrogate;
pub mod train;

pub use diffcore::{DenseMatrix, Example, LossFunction, ParamLayout, ParameterVector};
pub use expfam::Family;
