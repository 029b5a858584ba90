//! Concrete models.

pub mod coin;
pub mod lgss;
pub mod power;
pub mod quadratic;
pub mod sv;
pub mod weibull;

pub use coin::{coin_expected_fim, coin_fim, coin_heads_prob, coin_score_factors, CoinFimMode, CoinModel};
pub use lgss::LgssOracleModel;
pub use power::PowerFim;
pub use quadratic::QuadraticPotential;
pub use sv::{sv_simulate, SvModel};
pub use weibull::{weibull_exact_fim, weibull_inverse_transform, weibull_logdensity_and_score, WeibullModel};
