use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is singular")]
    Singular,
    #[error("logarithm branch failure: {0}")]
    BranchFailure(String),
    #[error("composition mismatch: {0}")]
    CompositionMismatch(String),
    #[error("frame is rank deficient (condition {0:.3e})")]
    RankDeficient(f64),
    #[error("projector is outside chart {0:?}")]
    OutOfChart(Vec<usize>),
    #[error("projectors are not linkable (distance {0:.6})")]
    NotLinkable(f64),
    #[error("almost-adiabatic condition fails at t = {t} (distance {distance:.6})")]
    NotLinkableAt { t: f64, distance: f64 },
    #[error("subspace inverse is ill conditioned (condition {0:.3e})")]
    IllConditioned(f64),
    #[error("morphism is not elementary")]
    NotElementary,
    #[error("value is not in the image of t: {0}")]
    NotInImage(String),
    #[error("crossed module is not abelian")]
    NotAbelian,
    #[error("linkability hypothesis failed: {0}")]
    LinkabilityHypothesisFailed(String),
    #[error("no chart covers sample {0}")]
    NoChartCover(usize),
    #[error("band gap closed at t = {t} (gap {gap:.3e})")]
    GapClosure { t: f64, gap: f64 },
    #[error("effective eigenvalues collide at t = {t} (gap {gap:.3e})")]
    EffectiveDegeneracy { t: f64, gap: f64 },
    #[error("no spectral subspace is linkable to the reference")]
    NoCompatibleSubspace,
    #[error("determinant collapsed during integration at u = {0}")]
    DeterminantCollapse(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;
